#![no_main]

use dpselft::pipeline::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|s: &str| {
    // Accepted configs are valid, so they must round-trip through JSON.
    if let Ok(cfg) = ExperimentConfig::from_json(s) {
        let text = cfg.to_json().expect("config serializes");
        assert_eq!(
            ExperimentConfig::from_json(&text).expect("serialized config parses"),
            cfg
        );
    }
});
