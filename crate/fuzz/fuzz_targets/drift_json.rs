#![no_main]

use libfuzzer_sys::fuzz_target;
use stochwave::{Discretization, PolynomialDrift};

fuzz_target!(|data: &[u8]| {
    let Ok(drift) = serde_json::from_slice::<PolynomialDrift>(data) else { return };
    if drift.coeffs.len() > 64 {
        return;
    }
    for scheme in [Discretization::FullyImplicit, Discretization::ModifiedCn] {
        if drift.validate(1, scheme).is_ok() {
            for (a, b) in [(0.5, -0.25), (1.0, 1.0), (-2.0, 3.0)] {
                assert!(drift.eval_fhat(a, b).is_finite());
            }
        }
    }
});
