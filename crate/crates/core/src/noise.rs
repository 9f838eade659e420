//! Seeded scalar Brownian increments.
//!
//! Every sample owns its own ChaCha8 stream, selected by the sample index,
//! so paths do not depend on the order in which samples are generated.
//! Refinement studies draw at the finest step and coarsen by summation so
//! all levels see the same Wiener path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    tau: f64,
    increments: Vec<f64>,
    master_seed: u64,
    sample_index: u64,
}

impl BrownianPath {
    /// `n_steps` independent `N(0, τ)` increments for sample `sample_index`.
    pub fn sample(master_seed: u64, sample_index: u64, n_steps: usize, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid(format!("time step {tau} must be positive")));
        }
        if n_steps == 0 {
            return Err(invalid("a path needs at least one step"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(sample_index);
        let scale = tau.sqrt();
        let increments = (0..n_steps)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        Ok(BrownianPath { tau, increments, master_seed, sample_index })
    }

    /// Path with explicitly given increments.
    pub fn from_increments(tau: f64, increments: Vec<f64>) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) || increments.is_empty() {
            return Err(invalid("a path needs a positive step and at least one increment"));
        }
        Ok(BrownianPath { tau, increments, master_seed: 0, sample_index: 0 })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn seed_info(&self) -> (u64, u64) {
        (self.master_seed, self.sample_index)
    }

    /// `W(t_N) − W(0)`.
    pub fn endpoint(&self) -> f64 {
        self.increments.iter().sum()
    }

    /// Sum consecutive blocks of `factor` increments. Blocks are summed
    /// pairwise, so coarsening by 2 then 2 is bit-identical to coarsening
    /// by 4 (and likewise for any power-of-two composition).
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps() % factor != 0 {
            return Err(invalid(format!("factor {factor} does not divide {} steps", self.n_steps())));
        }
        let increments = self.increments.chunks_exact(factor).map(pairwise_sum).collect();
        Ok(BrownianPath {
            tau: self.tau * factor as f64,
            increments,
            master_seed: self.master_seed,
            sample_index: self.sample_index,
        })
    }

    /// Whether `coarse` is this path summed in blocks, bit for bit.
    pub fn coarsens_to(&self, coarse: &BrownianPath) -> bool {
        if coarse.n_steps() == 0 || self.n_steps() % coarse.n_steps() != 0 {
            return false;
        }
        let factor = self.n_steps() / coarse.n_steps();
        self.increments
            .chunks_exact(factor)
            .zip(&coarse.increments)
            .all(|(block, &c)| pairwise_sum(block).to_bits() == c.to_bits())
    }
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Free-function form of [`BrownianPath::sample`].
pub fn sample_path(master_seed: u64, sample_index: u64, n_steps: usize, tau: f64) -> Result<BrownianPath> {
    BrownianPath::sample(master_seed, sample_index, n_steps, tau)
}
