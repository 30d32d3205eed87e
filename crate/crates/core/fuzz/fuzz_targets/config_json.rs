#![no_main]
use libfuzzer_sys::fuzz_target;
use markov_fht::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // A validated config serializes back to a valid config.
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        ExperimentConfig::from_json(&cfg.to_json()).expect("re-serialized config is valid");
    }
});
