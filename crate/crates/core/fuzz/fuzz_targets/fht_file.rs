#![no_main]
use libfuzzer_sys::fuzz_target;
use markov_fht::fht::{deserialize, serialize};

fuzz_target!(|data: &[u8]| {
    // Accepted files are canonical: re-encoding reproduces the input.
    if let Ok(f) = deserialize(data) {
        assert_eq!(serialize(&f), data);
    }
});
