//! Noise coefficient `g(u)` in front of the scalar Wiener increment.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionSpec {
    /// `g ≡ 0`: the deterministic equation.
    Zero,
    /// `g(u) = c u`.
    Linear { c: f64 },
    /// `g(u) = √(u² + ε)`.
    SmoothedAbs { epsilon: f64 },
}

impl DiffusionSpec {
    pub fn eval_g(&self, u: f64) -> f64 {
        match *self {
            DiffusionSpec::Zero => 0.0,
            DiffusionSpec::Linear { c } => c * u,
            DiffusionSpec::SmoothedAbs { epsilon } => (u * u + epsilon).sqrt(),
        }
    }

    pub fn eval_g_prime(&self, u: f64) -> f64 {
        match *self {
            DiffusionSpec::Zero => 0.0,
            DiffusionSpec::Linear { c } => c,
            DiffusionSpec::SmoothedAbs { epsilon } => u / (u * u + epsilon).sqrt(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, DiffusionSpec::Zero) || matches!(self, DiffusionSpec::Linear { c } if *c == 0.0)
    }

    /// Global Lipschitz constant of `g`.
    pub fn lipschitz_constant(&self) -> f64 {
        match *self {
            DiffusionSpec::Zero => 0.0,
            DiffusionSpec::Linear { c } => c.abs(),
            DiffusionSpec::SmoothedAbs { .. } => 1.0,
        }
    }

    /// `C` in the growth bound `g(u)² ≤ C (1 + u²)`.
    pub fn growth_constant(&self) -> f64 {
        match *self {
            DiffusionSpec::Zero => 0.0,
            DiffusionSpec::Linear { c } => c * c,
            DiffusionSpec::SmoothedAbs { epsilon } => epsilon.max(1.0),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            DiffusionSpec::Zero => Ok(()),
            DiffusionSpec::Linear { c } if c.is_finite() => Ok(()),
            DiffusionSpec::Linear { c } => Err(format!("diffusion slope c={c} must be finite")),
            DiffusionSpec::SmoothedAbs { epsilon } if epsilon > 0.0 && epsilon.is_finite() => Ok(()),
            DiffusionSpec::SmoothedAbs { epsilon } => Err(format!("diffusion epsilon={epsilon} must be positive and finite")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn family_values() {
        assert_eq!(DiffusionSpec::Linear { c: 1.0 }.eval_g(3.0), 3.0);
        assert!((DiffusionSpec::SmoothedAbs { epsilon: 0.01 }.eval_g(0.0) - 0.1).abs() < 1e-15);
        assert_eq!(DiffusionSpec::Zero.eval_g(42.0), 0.0);
        assert!(DiffusionSpec::SmoothedAbs { epsilon: 0.0 }.validate().is_err());
        assert!(DiffusionSpec::Linear { c: f64::NAN }.validate().is_err());
    }

    #[test]
    fn config_shape() {
        let g: DiffusionSpec = serde_json::from_str(r#"{"kind":"smoothed_abs","epsilon":0.01}"#).unwrap();
        assert_eq!(g, DiffusionSpec::SmoothedAbs { epsilon: 0.01 });
        let z: DiffusionSpec = serde_json::from_str(r#"{"kind":"zero"}"#).unwrap();
        assert_eq!(z, DiffusionSpec::Zero);
        assert!(serde_json::from_str::<DiffusionSpec>(r#"{"kind":"linear"}"#).is_err());
    }

    proptest! {
        #[test]
        fn lipschitz_and_growth_bounds(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -3.0f64..3.0, eps in 1e-4f64..4.0) {
            for g in [DiffusionSpec::Zero, DiffusionSpec::Linear { c }, DiffusionSpec::SmoothedAbs { epsilon: eps }] {
                let l = g.lipschitz_constant();
                prop_assert!((g.eval_g(a) - g.eval_g(b)).abs() <= l * (a - b).abs() * (1.0 + 1e-12) + 1e-15);
                prop_assert!(g.eval_g(a).powi(2) <= g.growth_constant() * (1.0 + a * a) * (1.0 + 1e-12));
                prop_assert!(g.eval_g_prime(a).abs() <= l.max(1.0));
            }
        }
    }
}
