#![no_main]

use dpselft::theory::{verify_selection_transfer, TransferInstance};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|s: &str| {
    if let Ok(instance) = serde_json::from_str::<TransferInstance>(s) {
        // Validation admits rounding slack in the probabilities and tau, so
        // the bound is only checked up to a matching relative tolerance.
        if let Ok(report) = verify_selection_transfer(&instance) {
            let slack = 1e-6 * (1.0 + report.bound.abs());
            assert!(
                report.measured <= report.bound + slack,
                "bound violated: {s}"
            );
        }
    }
});
