#![no_main]

use dpselft::nn::checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must survive a re-encode unchanged.
    if let Ok(model) = checkpoint::decode(data) {
        let again =
            checkpoint::decode(&checkpoint::encode(&model)).expect("re-encoded checkpoint decodes");
        assert_eq!(again, model);
    }
});
