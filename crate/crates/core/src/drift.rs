//! Polynomial drift `f(u) = Σ_{j=1}^{q} a_j u^j`, its potential
//! `F(u) = −∫₀ᵘ f`, and the divided-difference quotient used by the
//! energy-preserving discretization.

use serde::{Deserialize, Serialize};

use crate::stepper::Discretization;

/// Half-width of the sampling interval for the admissibility checks.
pub const CHECK_RADIUS: f64 = 1.0e3;
/// Number of sample points for the admissibility checks.
pub const CHECK_POINTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialDrift {
    /// `a_1, …, a_q`.
    pub coeffs: Vec<f64>,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_lambda() -> f64 {
    1.0
}

/// A failed admissibility condition, with a witness where one exists.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoCoefficients,
    NonFinite,
    EvenDegree { q: usize },
    DegreeTooHighFor3d { q: usize },
    UnsupportedDimension { dimension: usize },
    BadConstants { alpha: f64, lambda: f64 },
    Coercivity { u: f64, potential: f64, bound: f64 },
    NotConvex { u: f64, second_derivative: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NoCoefficients => write!(f, "drift needs at least one coefficient a_1"),
            Violation::NonFinite => write!(f, "drift coefficients and constants must be finite"),
            Violation::EvenDegree { q } => {
                write!(f, "drift degree q={q} is even; the polynomial drift must have odd degree q")
            }
            Violation::DegreeTooHighFor3d { q } => write!(f, "drift degree q={q} exceeds 3, the limit in three dimensions"),
            Violation::UnsupportedDimension { dimension } => write!(f, "dimension {dimension} is not supported"),
            Violation::BadConstants { alpha, lambda } => {
                write!(f, "structure constants need alpha >= 0 and lambda > 0 (got alpha={alpha}, lambda={lambda})")
            }
            Violation::Coercivity { u, potential, bound } => {
                write!(f, "potential not coercive: F({u}) = {potential} < (alpha/2 + lambda/2 u^(q-1)) u^2 = {bound}")
            }
            Violation::NotConvex { u, second_derivative } => {
                write!(f, "potential not convex as the fully implicit drift requires: F''({u}) = {second_derivative} < 0")
            }
        }
    }
}

impl PolynomialDrift {
    pub fn new(coeffs: Vec<f64>, alpha: f64, lambda: f64) -> Self {
        PolynomialDrift { coeffs, alpha, lambda }
    }

    /// `f ≡ 0`, the linear wave equation.
    pub fn zero() -> Self {
        PolynomialDrift { coeffs: vec![0.0], alpha: 0.0, lambda: 1.0 }
    }

    /// `f(u) = −u − u^p` (odd `p ≥ 3`), with `α = 1`, `λ = 2/(p+1)`, for
    /// which the coercivity bound holds with equality.
    pub fn damped_power(p: usize) -> Self {
        let mut coeffs = vec![0.0; p];
        coeffs[0] = -1.0;
        coeffs[p - 1] = -1.0;
        PolynomialDrift { coeffs, alpha: 1.0, lambda: 2.0 / (p as f64 + 1.0) }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&a| a == 0.0)
    }

    /// `f(u)` by Horner's rule.
    pub fn eval_f(&self, u: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * u + a) * u
    }

    /// `F(u) = −Σ a_j/(j+1) u^{j+1}`.
    pub fn eval_potential(&self, u: f64) -> f64 {
        let s = self.coeffs.iter().enumerate().rev().fold(0.0, |acc, (k, &a)| acc * u + a / (k as f64 + 2.0));
        -s * u * u
    }

    /// `f'(u)`.
    pub fn eval_f_prime(&self, u: f64) -> f64 {
        self.coeffs.iter().enumerate().rev().fold(0.0, |acc, (k, &a)| acc * u + (k as f64 + 1.0) * a)
    }

    /// `f̂(a, b) = Σ_j a_j/(j+1) Σ_{k=0}^{j} a^k b^{j−k}`, which equals
    /// `−(F(a) − F(b))/(a − b)` off the diagonal and `f(a)` on it.
    pub fn eval_fhat(&self, a: f64, b: f64) -> f64 {
        self.fhat_with_partial(a, b).0
    }

    /// `∂f̂/∂a(a, b)`.
    pub fn eval_fhat_da(&self, a: f64, b: f64) -> f64 {
        self.fhat_with_partial(a, b).1
    }

    /// `(f̂(a, b), ∂f̂/∂a(a, b))` in one pass.
    pub fn fhat_with_partial(&self, a: f64, b: f64) -> (f64, f64) {
        // S_j = Σ_{k=0}^{j} a^k b^{j−k}, D_j = ∂S_j/∂a. For odd j,
        // S_j = (a+b) T_j with T_j = Σ_m a^{2m} b^{j−1−2m} = b² T_{j−2} + a^{j−1},
        // a sum of nonnegative terms; this keeps f̂ accurate when a ≈ −b.
        // For even j, S_j = a^j + b S_{j−1}.
        let (sum, b2) = (a + b, b * b);
        let (mut t, mut dt) = (0.0, 0.0);
        let (mut s, mut d) = (0.0, 0.0);
        let (mut a_prev, mut a_pow) = (0.0, 1.0);
        let (mut odd_value, mut even_value, mut partial) = (0.0, 0.0, 0.0);
        for (k, &c) in self.coeffs.iter().enumerate() {
            let j = k + 1;
            let w = c / (j as f64 + 1.0);
            if j % 2 == 1 {
                dt = b2 * dt + (j - 1) as f64 * a_prev;
                t = b2 * t + a_pow;
                s = sum * t;
                d = t + sum * dt;
                odd_value += w * t;
            } else {
                d = j as f64 * a_pow + b * d;
                s = a_pow * a + b * s;
                even_value += w * s;
            }
            partial += w * d;
            a_prev = a_pow;
            a_pow *= a;
        }
        (sum * odd_value + even_value, partial)
    }

    /// Admissibility checks for the given dimension and discretization.
    /// The all-zero drift (linear wave equation) is exempt from the
    /// coercivity bound.
    pub fn validate(&self, dimension: usize, scheme: Discretization) -> Result<(), Vec<Violation>> {
        let q = self.degree();
        if q == 0 {
            return Err(vec![Violation::NoCoefficients]);
        }
        if !(1..=3).contains(&dimension) {
            return Err(vec![Violation::UnsupportedDimension { dimension }]);
        }
        if self.coeffs.iter().chain([&self.alpha, &self.lambda]).any(|v| !v.is_finite()) {
            return Err(vec![Violation::NonFinite]);
        }
        let mut out = Vec::new();
        if q % 2 == 0 {
            out.push(Violation::EvenDegree { q });
        }
        if dimension == 3 && q > 3 {
            out.push(Violation::DegreeTooHighFor3d { q });
        }
        if !(self.alpha >= 0.0 && self.lambda > 0.0) {
            out.push(Violation::BadConstants { alpha: self.alpha, lambda: self.lambda });
        }
        if !out.is_empty() {
            return Err(out);
        }
        if self.is_zero() {
            return Ok(());
        }
        let step = 2.0 * CHECK_RADIUS / (CHECK_POINTS - 1) as f64;
        let check_convexity = scheme == Discretization::FullyImplicit;
        let mut coercivity = None;
        let mut convexity = None;
        for i in 0..CHECK_POINTS {
            let u = -CHECK_RADIUS + step * i as f64;
            if coercivity.is_none() {
                let potential = self.eval_potential(u);
                let bound = (0.5 * self.alpha + 0.5 * self.lambda * u.powi(q as i32 - 1)) * u * u;
                // Exact comparison up to the rounding of the two evaluations.
                let slack = 8.0 * f64::EPSILON * (potential.abs() + bound.abs());
                if potential < bound - slack {
                    coercivity = Some(Violation::Coercivity { u, potential, bound });
                }
            }
            if check_convexity && convexity.is_none() {
                let second = -self.eval_f_prime(u);
                let scale: f64 = self.coeffs.iter().enumerate().map(|(k, a)| ((k + 1) as f64 * a * u.powi(k as i32)).abs()).sum();
                if second < -8.0 * f64::EPSILON * scale {
                    convexity = Some(Violation::NotConvex { u, second_derivative: second });
                }
            }
            if coercivity.is_some() && (!check_convexity || convexity.is_some()) {
                break;
            }
        }
        out.extend(coercivity);
        out.extend(convexity);
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cubic() -> PolynomialDrift {
        PolynomialDrift::damped_power(3)
    }

    #[test]
    fn fhat_keeps_relative_accuracy_near_antidiagonal() {
        let d = cubic();
        for (a, b) in [(1.0, -1.0 + 1e-9), (-1.7, 1.7 - 3e-12), (0.3, -0.3)] {
            // f̂ = −(a+b)(1/2 + (a² + b²)/4) for f = −u − u³.
            let exact = -(a + b) * (0.5 + (a * a + b * b) / 4.0);
            let got = d.eval_fhat(a, b);
            assert!((got - exact).abs() <= 1e-15 * exact.abs(), "{a} {b}: {got} vs {exact}");
        }
    }

    #[test]
    fn evaluations() {
        assert_eq!(cubic().eval_f(2.0), -10.0);
        assert_eq!(cubic().eval_f(0.0), 0.0);
        assert_eq!(PolynomialDrift::damped_power(11).eval_f(1.0), -2.0);
        assert!((cubic().eval_potential(1.0) - 0.75).abs() < 1e-15);
        assert_eq!(cubic().eval_potential(0.0), 0.0);
        assert_eq!(cubic().eval_potential(-1.3), cubic().eval_potential(1.3));
        assert_eq!(cubic().eval_f_prime(1.0), -4.0);
    }

    #[test]
    fn fhat_linear_drift() {
        let lin = PolynomialDrift::new(vec![-1.0], 1.0, 1.0);
        assert_eq!(lin.eval_fhat(3.0, 1.0), -2.0);
    }

    #[test]
    fn fhat_matches_difference_quotient() {
        let d = cubic();
        let (a, b) = (1.7, 0.3);
        let oracle = -(d.eval_potential(a) - d.eval_potential(b)) / (a - b);
        assert!((d.eval_fhat(a, b) - oracle).abs() <= 1e-12 * oracle.abs());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let d = PolynomialDrift::new(vec![-1.0, 0.5, -2.0, 0.0, -0.25], 0.0, 1.0);
        let h = 1e-6;
        for i in 0..20 {
            let u = -2.0 + 0.21 * i as f64;
            let fd = (d.eval_f(u + h) - d.eval_f(u - h)) / (2.0 * h);
            assert!((d.eval_f_prime(u) - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
            let fd_pot = (d.eval_potential(u + h) - d.eval_potential(u - h)) / (2.0 * h);
            assert!((fd_pot + d.eval_f(u)).abs() <= 1e-6 * (1.0 + fd_pot.abs()));
            let b = 0.7 - 0.1 * i as f64;
            let fd_hat = (d.eval_fhat(u + h, b) - d.eval_fhat(u - h, b)) / (2.0 * h);
            assert!((d.eval_fhat_da(u, b) - fd_hat).abs() <= 1e-6 * (1.0 + fd_hat.abs()));
            // On the diagonal the a-partial is f'(a)/2.
            assert!((d.eval_fhat_da(u, u) - 0.5 * d.eval_f_prime(u)).abs() <= 1e-12 * (1.0 + d.eval_f_prime(u).abs()));
        }
    }

    #[test]
    fn validation_outcomes() {
        let d = PolynomialDrift::new(vec![-1.0, 0.0, -1.0], 1.0, 0.5);
        assert_eq!(d.validate(1, Discretization::ModifiedCn), Ok(()));
        assert_eq!(d.validate(2, Discretization::FullyImplicit), Ok(()));
        let bad = PolynomialDrift::new(vec![0.0, 0.0, 1.0], 0.0, 1.0);
        let v = bad.validate(1, Discretization::ModifiedCn).unwrap_err();
        assert!(matches!(v[0], Violation::Coercivity { .. }));
        assert!(bad.eval_potential(1.0) < 0.0);
        let even = PolynomialDrift::new(vec![-1.0, -1.0], 1.0, 1.0);
        assert_eq!(even.validate(1, Discretization::ModifiedCn), Err(vec![Violation::EvenDegree { q: 2 }]));
        assert!(PolynomialDrift::damped_power(5).validate(3, Discretization::ModifiedCn).is_err());
        assert_eq!(PolynomialDrift::zero().validate(1, Discretization::FullyImplicit), Ok(()));
        for p in [3, 7, 11] {
            assert_eq!(PolynomialDrift::damped_power(p).validate(2, Discretization::FullyImplicit), Ok(()));
        }
    }

    #[test]
    fn nonconvex_potential_rejected_only_for_implicit() {
        // F = u²/2 − u⁴/2 + u⁶/6 is positive but F'' = 1 − 6u² + 5u⁴ dips below zero.
        let d = PolynomialDrift::new(vec![-1.0, 0.0, 2.0, 0.0, -1.0], 0.0, 1e-3);
        assert!(d.validate(1, Discretization::ModifiedCn).is_ok());
        let v = d.validate(1, Discretization::FullyImplicit).unwrap_err();
        assert!(v.iter().any(|x| matches!(x, Violation::NotConvex { .. })));
    }

    proptest! {
        #[test]
        fn fhat_is_symmetric_and_exact(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let d = PolynomialDrift::damped_power(7);
            let sym_gap = (d.eval_fhat(a, b) - d.eval_fhat(b, a)).abs();
            prop_assert!(sym_gap <= 1e-12 * (1.0 + d.eval_fhat(a, b).abs()));
            let lhs = (a - b) * d.eval_fhat(a, b);
            let rhs = -(d.eval_potential(a) - d.eval_potential(b));
            let scale = 1.0 + d.eval_potential(a).abs() + d.eval_potential(b).abs();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
            let diag = d.eval_fhat(a, a);
            prop_assert!((diag - d.eval_f(a)).abs() <= 1e-12 * (1.0 + d.eval_f(a).abs()));
        }
    }
}
