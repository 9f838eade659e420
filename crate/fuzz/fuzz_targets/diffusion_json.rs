#![no_main]

use libfuzzer_sys::fuzz_target;
use stochwave::DiffusionSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(g) = serde_json::from_slice::<DiffusionSpec>(data) else { return };
    if g.validate().is_ok() {
        for u in [-10.0, -1.0, 0.0, 0.5, 7.0] {
            assert!(g.eval_g(u).is_finite() && g.eval_g_prime(u).is_finite());
        }
    }
});
