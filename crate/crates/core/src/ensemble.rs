//! Monte Carlo driver.
//!
//! Samples are independent work items run on a local thread pool. Results
//! are collected in sample order and reduced by a fixed binary tree over
//! the sample index, so every statistic is bit-identical for any number of
//! threads.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::noise::BrownianPath;
use crate::stepper::{Retention, State, Stepper, Trajectory};

/// Largest tolerated fraction of failed samples.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

/// Outcome of mapping a closure over sample indices.
#[derive(Debug)]
pub struct SampleResults<T> {
    /// Successful results in increasing sample order.
    pub values: Vec<(u64, T)>,
    pub failures: Vec<(u64, Error)>,
}

impl<T> SampleResults<T> {
    pub fn n_failed(&self) -> usize {
        self.failures.len()
    }
}

/// Whether a per-sample error counts as a sample failure rather than a fault.
fn is_sample_failure(e: &Error) -> bool {
    matches!(e, Error::NewtonDiverged { .. } | Error::LinearSolveFailed(_))
}

/// Run `work(sample_index)` for every sample on `threads` workers (all
/// cores when `None`). Newton and linear-solver failures are collected;
/// any other error aborts. More than [`MAX_FAILURE_FRACTION`] failures is
/// reported as [`Error::TooManyFailures`].
pub fn map_samples<T, F>(n_samples: usize, threads: Option<usize>, work: F) -> Result<SampleResults<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    if n_samples == 0 {
        return Err(invalid("at least one sample is required"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(invalid("thread count must be positive"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| invalid(format!("cannot build thread pool: {e}")))?;
    let raw: Vec<Result<T>> = pool.install(|| (0..n_samples as u64).into_par_iter().map(&work).collect());
    let mut out = SampleResults { values: Vec::with_capacity(n_samples), failures: Vec::new() };
    for (i, r) in raw.into_iter().enumerate() {
        match r {
            Ok(v) => out.values.push((i as u64, v)),
            Err(e) if is_sample_failure(&e) => out.failures.push((i as u64, e)),
            Err(e) => return Err(e),
        }
    }
    if out.n_failed() as f64 > MAX_FAILURE_FRACTION * n_samples as f64 || out.values.is_empty() {
        return Err(Error::TooManyFailures { failed: out.n_failed(), total: n_samples });
    }
    Ok(out)
}

/// Elementwise sum of equal-length rows, reduced as a balanced binary tree
/// over the row index.
pub fn tree_sum(rows: &[&[f64]]) -> Vec<f64> {
    match rows.len() {
        0 => Vec::new(),
        1 => rows[0].to_vec(),
        n => {
            let mut left = tree_sum(&rows[..n / 2]);
            let right = tree_sum(&rows[n / 2..]);
            for (a, b) in left.iter_mut().zip(&right) {
                *a += b;
            }
            left
        }
    }
}

/// Elementwise mean of equal-length rows via [`tree_sum`].
pub fn tree_mean(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len() as f64;
    tree_sum(rows).into_iter().map(|s| s / n).collect()
}

/// Per-node mean with min/max envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Envelope {
    fn from_rows(rows: &[&[f64]]) -> Self {
        let mean = tree_mean(rows);
        let mut min = rows[0].to_vec();
        let mut max = rows[0].to_vec();
        for r in &rows[1..] {
            for (k, &x) in r.iter().enumerate() {
                min[k] = min[k].min(x);
                max[k] = max[k].max(x);
            }
        }
        Envelope { mean, min, max }
    }
}

/// Per-node ensemble statistics over the successful samples.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub tau: f64,
    /// `‖u^n‖²`.
    pub l2_sq: Envelope,
    /// `‖∇u^n‖²`.
    pub grad_sq: Envelope,
    /// `‖d_t u^n‖²`.
    pub dt_sq: Envelope,
    /// `H̃`, with mean and envelope.
    pub hamiltonian: Envelope,
    /// Sample means of `H̃²` and `H̃⁴`.
    pub mean_h2: Vec<f64>,
    pub mean_h4: Vec<f64>,
    pub n_samples: usize,
    pub n_failed: usize,
    pub master_seed: u64,
    /// Largest energy residual ratio over all samples and steps.
    pub max_energy_ratio: f64,
    pub total_newton_iterations: u64,
}

impl EnsembleStats {
    pub fn n_nodes(&self) -> usize {
        self.hamiltonian.mean.len()
    }

    /// Sample mean of `H̃^p` at every node, from the retained moments.
    pub fn mean_h_pow(&self, p: u32) -> Option<&[f64]> {
        match p {
            1 => Some(&self.hamiltonian.mean),
            2 => Some(&self.mean_h2),
            4 => Some(&self.mean_h4),
            _ => None,
        }
    }
}

/// Statistics plus the per-sample data needed downstream.
#[derive(Debug)]
pub struct EnsembleRun {
    pub stats: EnsembleStats,
    /// `‖u^n‖²_{H¹}` per successful sample and node, in sample order.
    pub h1_sq_samples: Vec<Vec<f64>>,
    /// Full trajectories when requested, in sample order.
    pub trajectories: Option<Vec<(u64, Trajectory)>>,
    pub failures: Vec<(u64, Error)>,
}

/// Run `n_samples` trajectories from `initial` along independent paths.
pub fn run_ensemble(
    stepper: &Stepper,
    initial: &State,
    n_samples: usize,
    master_seed: u64,
    threads: Option<usize>,
    keep_trajectories: bool,
) -> Result<EnsembleRun> {
    let cfg = *stepper.config();
    let retention = if keep_trajectories { Retention::Every(1) } else { Retention::None };
    let results = map_samples(n_samples, threads, |i| {
        let path = BrownianPath::sample(master_seed, i, cfg.n_steps, cfg.tau)?;
        stepper.run(initial, &path, retention)
    })?;
    let trajs: Vec<&Trajectory> = results.values.iter().map(|(_, t)| t).collect();
    let rows = |f: fn(&Trajectory) -> &[f64]| -> Vec<&[f64]> { trajs.iter().map(|t| f(t)).collect() };
    let h2: Vec<Vec<f64>> = trajs.iter().map(|t| t.hamiltonian.iter().map(|h| h * h).collect()).collect();
    let h4: Vec<Vec<f64>> = h2.iter().map(|r| r.iter().map(|h| h * h).collect()).collect();
    let stats = EnsembleStats {
        tau: cfg.tau,
        l2_sq: Envelope::from_rows(&rows(|t| &t.l2_sq)),
        grad_sq: Envelope::from_rows(&rows(|t| &t.grad_sq)),
        dt_sq: Envelope::from_rows(&rows(|t| &t.dt_sq)),
        hamiltonian: Envelope::from_rows(&rows(|t| &t.hamiltonian)),
        mean_h2: tree_mean(&h2.iter().map(Vec::as_slice).collect::<Vec<_>>()),
        mean_h4: tree_mean(&h4.iter().map(Vec::as_slice).collect::<Vec<_>>()),
        n_samples: trajs.len(),
        n_failed: results.n_failed(),
        master_seed,
        max_energy_ratio: trajs.iter().map(|t| t.max_energy_ratio).fold(f64::NEG_INFINITY, f64::max),
        total_newton_iterations: trajs.iter().flat_map(|t| &t.newton_iterations).map(|&k| k as u64).sum(),
    };
    let h1_sq_samples = trajs.iter().map(|t| t.h1_sq()).collect();
    let trajectories = keep_trajectories.then_some(results.values);
    Ok(EnsembleRun { stats, h1_sq_samples, trajectories, failures: results.failures })
}

/// Fraction of samples, at every node, whose running maximum of
/// `discrete[n]` plus `proxy[n]` has stayed `≤ kappa`.
///
/// `discrete` and the optional `proxy` hold one row of squared H¹ norms per
/// sample. With a fine reference solution as proxy this is the empirical
/// size of the set on which the strong error estimate applies.
pub fn subset_fraction(discrete: &[Vec<f64>], proxy: Option<&[Vec<f64>]>, kappa: f64) -> Result<Vec<f64>> {
    if kappa.is_nan() || kappa < 0.0 {
        return Err(invalid(format!("kappa {kappa} must be nonnegative")));
    }
    let Some(first) = discrete.first() else {
        return Err(invalid("subset fraction needs at least one sample"));
    };
    if let Some(p) = proxy {
        if p.len() != discrete.len() {
            return Err(invalid("proxy and discrete norms cover different samples"));
        }
    }
    let n_nodes = first.len();
    let mut inside = vec![0usize; n_nodes];
    for (s, row) in discrete.iter().enumerate() {
        if row.len() != n_nodes || proxy.is_some_and(|p| p[s].len() != n_nodes) {
            return Err(invalid("samples have different node counts"));
        }
        let (mut max_d, mut max_p) = (f64::NEG_INFINITY, 0.0f64);
        for n in 0..n_nodes {
            max_d = max_d.max(row[n]);
            if let Some(p) = proxy {
                max_p = max_p.max(p[s][n]);
            }
            if max_d + max_p <= kappa {
                inside[n] += 1;
            } else {
                break;
            }
        }
    }
    let total = discrete.len() as f64;
    Ok(inside.into_iter().map(|k| k as f64 / total).collect())
}

/// Final-node subset fraction at each of `kappas`.
pub fn subset_fraction_curve(discrete: &[Vec<f64>], proxy: Option<&[Vec<f64>]>, kappas: &[f64]) -> Result<Vec<(f64, f64)>> {
    kappas.iter().map(|&k| Ok((k, *subset_fraction(discrete, proxy, k)?.last().unwrap_or(&0.0)))).collect()
}

/// `κ` values at the given quantiles of the per-sample maxima of `discrete`.
pub fn kappa_quantiles(discrete: &[Vec<f64>], quantiles: &[f64]) -> Vec<f64> {
    let mut maxima: Vec<f64> = discrete.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    maxima.sort_by(f64::total_cmp);
    if maxima.is_empty() {
        return Vec::new();
    }
    quantiles
        .iter()
        .map(|q| {
            let idx = ((q.clamp(0.0, 1.0) * maxima.len() as f64).ceil() as usize).clamp(1, maxima.len()) - 1;
            maxima[idx]
        })
        .collect()
}
