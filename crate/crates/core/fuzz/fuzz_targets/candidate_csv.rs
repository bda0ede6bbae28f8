#![no_main]

use dpselft::data::parse_features;
use dpselft::synth::{CandidatePool, Provenance};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_features(data) {
        let _ = CandidatePool::new(rows, Provenance::Imported);
    }
});
