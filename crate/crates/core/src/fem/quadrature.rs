//! Quadrature on the reference interval [0,1] and the reference triangle
//! {ξ ≥ 0, η ≥ 0, ξ + η ≤ 1}.

/// Points in reference coordinates (second coordinate unused in 1D) and
/// weights summing to the reference measure (1 or 1/2).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Highest total polynomial degree integrated exactly.
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Smallest available rule exact for polynomials of total degree `degree`.
    pub fn for_degree(dimension: usize, degree: usize) -> Self {
        match dimension {
            1 => {
                let n = degree / 2 + 1;
                let (x, w) = gauss_legendre(n);
                QuadratureRule { points: x.iter().map(|&x| [x, 0.0]).collect(), weights: w, degree: 2 * n - 1 }
            }
            _ => triangle_rule(degree),
        }
    }
}

/// `n`-point Gauss–Legendre nodes and weights on [0,1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map from [-1,1] to [0,1].
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Symmetric rules up to degree 5; beyond that a collapsed (Duffy)
/// tensor Gauss rule, which is exact to any requested degree.
fn triangle_rule(degree: usize) -> QuadratureRule {
    match degree {
        0 | 1 => QuadratureRule { points: vec![[1.0 / 3.0, 1.0 / 3.0]], weights: vec![0.5], degree: 1 },
        2 => {
            let (a, b) = (1.0 / 6.0, 2.0 / 3.0);
            QuadratureRule { points: vec![[a, a], [b, a], [a, b]], weights: vec![1.0 / 6.0; 3], degree: 2 }
        }
        3..=5 => {
            let s15 = 15f64.sqrt();
            let a1 = (6.0 - s15) / 21.0;
            let a2 = (6.0 + s15) / 21.0;
            let w1 = (155.0 - s15) / 2400.0;
            let w2 = (155.0 + s15) / 2400.0;
            let third = 1.0 / 3.0;
            let b1 = 1.0 - 2.0 * a1;
            let b2 = 1.0 - 2.0 * a2;
            QuadratureRule {
                points: vec![[third, third], [a1, a1], [b1, a1], [a1, b1], [a2, a2], [b2, a2], [a2, b2]],
                weights: vec![9.0 / 80.0, w1, w1, w1, w2, w2, w2],
                degree: 5,
            }
        }
        _ => {
            // x = s, y = t(1 - s); the Jacobian (1 - s) raises the degree in s by one.
            let ns = (degree + 1) / 2 + 1;
            let nt = degree / 2 + 1;
            let (xs, ws) = gauss_legendre(ns);
            let (xt, wt) = gauss_legendre(nt);
            let mut points = Vec::with_capacity(ns * nt);
            let mut weights = Vec::with_capacity(ns * nt);
            for (s, w_s) in xs.iter().zip(&ws) {
                for (t, w_t) in xt.iter().zip(&wt) {
                    points.push([*s, t * (1.0 - s)]);
                    weights.push(w_s * w_t * (1.0 - s));
                }
            }
            QuadratureRule { points, weights, degree: (2 * ns - 2).min(2 * nt - 1) }
        }
    }
}
