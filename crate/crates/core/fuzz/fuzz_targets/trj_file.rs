#![no_main]
use libfuzzer_sys::fuzz_target;
use markov_fht::sde::{read_trajectories, write_trajectories};

fuzz_target!(|data: &[u8]| {
    if let Ok(batch) = read_trajectories(data) {
        assert_eq!(write_trajectories(&batch), data);
    }
});
