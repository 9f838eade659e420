//! Strong error norms against a same-path fine reference, and convergence
//! tables over halving ladders in `h` or `τ`.
//!
//! For every sample the reference and all ladder levels are driven by one
//! Brownian path drawn at the reference step. Coarse solutions are lifted
//! to the reference space, where `e^n = P u_c^n − u_ref(t_n)` is measured
//! with the reference mass and stiffness matrices, and
//! `d_t e^n = (e^n − e^{n−1})/τ` for `n ≥ 1`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::diffusion::DiffusionSpec;
use crate::drift::PolynomialDrift;
use crate::ensemble::{map_samples, tree_mean};
use crate::error::{invalid, Error, Result};
use crate::fem::{h1_seminorm_distance, l2_distance, FeSpace, Field, Prolongation};
use crate::mesh::uniform_hierarchy;
use crate::noise::BrownianPath;
use crate::stepper::{initial_state, Discretization, Retention, SchemeConfig, State, Stepper, Trajectory};

/// Squared error norms at every coarse node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeErrors {
    pub l2_sq: Vec<f64>,
    pub h1_sq: Vec<f64>,
    /// `‖d_t e^n‖²`; entry 0 is undefined and stored as 0.
    pub dt_sq: Vec<f64>,
}

/// Lifts one coarse level onto a reference space.
#[derive(Debug)]
pub struct ErrorEvaluator {
    prolongation: Prolongation,
    reference: Arc<FeSpace>,
}

impl ErrorEvaluator {
    pub fn new(coarse: &FeSpace, reference: &Arc<FeSpace>) -> Result<Self> {
        Ok(ErrorEvaluator { prolongation: Prolongation::new(coarse, reference)?, reference: Arc::clone(reference) })
    }

    /// Errors of `coarse` against `reference` at every coarse node. The
    /// coarse trajectory must retain every state and the reference must
    /// retain every state at a coarse node.
    pub fn evaluate(&self, coarse: &Trajectory, reference: &Trajectory) -> Result<NodeErrors> {
        let ratio = coarse.tau / reference.tau;
        let factor = ratio.round() as usize;
        if factor == 0 || (ratio - factor as f64).abs() > 1e-9 * ratio {
            return Err(invalid(format!("reference step {} does not divide {}", reference.tau, coarse.tau)));
        }
        let n_coarse = coarse.n_steps();
        if coarse.stride != 1 || reference.n_steps() != n_coarse * factor || factor % reference.stride != 0 {
            return Err(invalid("trajectories do not cover the same nodes"));
        }
        let mass = self.reference.mass();
        let stiff = self.reference.stiffness();
        let tau = coarse.tau;
        let mut out = NodeErrors {
            l2_sq: Vec::with_capacity(n_coarse + 1),
            h1_sq: Vec::with_capacity(n_coarse + 1),
            dt_sq: Vec::with_capacity(n_coarse + 1),
        };
        let mut prev: Option<Vec<f64>> = None;
        for n in 0..=n_coarse {
            let (c, r) = match (coarse.state_at(n), reference.state_at(n * factor)) {
                (Some(c), Some(r)) => (c, r),
                _ => return Err(invalid(format!("missing state at coarse node {n}"))),
            };
            let mut e = self.prolongation.apply(c.u.coeffs());
            for (a, b) in e.iter_mut().zip(r.u.coeffs()) {
                *a -= b;
            }
            out.l2_sq.push(mass.quadratic_form(&e));
            out.h1_sq.push(stiff.quadratic_form(&e));
            out.dt_sq.push(match &prev {
                Some(p) => {
                    let d: Vec<f64> = e.iter().zip(p).map(|(a, b)| (a - b) / tau).collect();
                    mass.quadratic_form(&d)
                }
                None => 0.0,
            });
            prev = Some(e);
        }
        Ok(out)
    }
}

/// One-off form of [`ErrorEvaluator::evaluate`].
pub fn error_norms(
    coarse: &Trajectory,
    coarse_space: &FeSpace,
    reference: &Trajectory,
    reference_space: &Arc<FeSpace>,
) -> Result<NodeErrors> {
    ErrorEvaluator::new(coarse_space, reference_space)?.evaluate(coarse, reference)
}

/// `sup_n E[‖·‖²]^{1/2}` of the three error norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupRms {
    pub l2: f64,
    pub h1: f64,
    /// Taken over `n ≥ 1`; NaN with a single node.
    pub dtl2: f64,
}

/// Sup over nodes of the root sample mean of each squared norm.
pub fn sup_rms_errors(samples: &[&NodeErrors]) -> Result<SupRms> {
    if samples.is_empty() {
        return Err(invalid("at least one sample is required"));
    }
    let n = samples[0].l2_sq.len();
    if samples.iter().any(|s| s.l2_sq.len() != n || s.h1_sq.len() != n || s.dt_sq.len() != n) {
        return Err(invalid("samples have different node counts"));
    }
    let sup = |rows: Vec<&[f64]>, from: usize| -> f64 {
        let mean = tree_mean(&rows);
        mean.get(from..).filter(|m| !m.is_empty()).map_or(f64::NAN, |m| m.iter().copied().fold(0.0, f64::max).sqrt())
    };
    Ok(SupRms {
        l2: sup(samples.iter().map(|s| s.l2_sq.as_slice()).collect(), 0),
        h1: sup(samples.iter().map(|s| s.h1_sq.as_slice()).collect(), 0),
        dtl2: sup(samples.iter().map(|s| s.dt_sq.as_slice()).collect(), 1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderKind {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    /// `h` for spatial ladders, `τ` for temporal ones.
    pub param: f64,
    pub l2: f64,
    pub h1: f64,
    pub dtl2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub kind: LadderKind,
    pub rows: Vec<ErrorRow>,
    /// Ordered `key=value` lines written above the CSV header.
    pub metadata: Vec<(String, String)>,
}

fn order(prev: f64, curr: f64) -> f64 {
    (prev / curr).log2()
}

impl ErrorTable {
    /// Observed orders `log2(err_prev / err_curr)` of row `i ≥ 1`.
    pub fn orders(&self, i: usize) -> Option<[f64; 3]> {
        let (p, c) = (self.rows.get(i.checked_sub(1)?)?, self.rows.get(i)?);
        Some([order(p.l2, c.l2), order(p.h1, c.h1), order(p.dtl2, c.dtl2)])
    }

    /// Orders at the finest pair of rows.
    pub fn finest_orders(&self) -> Option<[f64; 3]> {
        self.orders(self.rows.len().checked_sub(1)?)
    }

    pub fn push_metadata(&mut self, key: &str, value: impl ToString) {
        self.metadata.push((key.to_string(), value.to_string()));
    }

    /// `# key=value` lines, then
    /// `param,l2,l2_order,h1,h1_order,dtl2,dtl2_order` rows. The first row
    /// has empty order cells.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str("param,l2,l2_order,h1,h1_order,dtl2,dtl2_order\n");
        for (i, r) in self.rows.iter().enumerate() {
            let o = self.orders(i).map(|o| o.map(|x| format!("{x:.4}")));
            let cell = |k: usize| o.as_ref().map_or(String::new(), |o| o[k].clone());
            let _ = writeln!(s, "{:.9e},{:.9e},{},{:.9e},{},{:.9e},{}", r.param, r.l2, cell(0), r.h1, cell(1), r.dtl2, cell(2));
        }
        s
    }
}

/// Problem data shared by every level of a study.
#[derive(Clone)]
pub struct Model {
    pub dimension: usize,
    pub degree: usize,
    pub drift: PolynomialDrift,
    pub diffusion: DiffusionSpec,
    pub discretization: Discretization,
    pub h1: Arc<Field>,
    pub h2: Arc<Field>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("dimension", &self.dimension)
            .field("degree", &self.degree)
            .field("drift", &self.drift)
            .field("diffusion", &self.diffusion)
            .field("discretization", &self.discretization)
            .finish_non_exhaustive()
    }
}

impl Model {
    fn space(&self, mesh: Arc<crate::mesh::Mesh>) -> Result<Arc<FeSpace>> {
        FeSpace::for_drift_degree(mesh, self.degree, self.drift.degree())
    }

    fn stepper(&self, space: &Arc<FeSpace>, tau: f64, final_time: f64) -> Result<(Stepper, State)> {
        let cfg = SchemeConfig::for_final_time(self.discretization, tau, final_time)?;
        let st = Stepper::new(Arc::clone(space), cfg, self.drift.clone(), self.diffusion)?;
        let init = initial_state(space, &*self.h1, &*self.h2)?;
        Ok((st, init))
    }
}

/// Mesh levels have `2^level` cells per side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ladder {
    /// Levels `coarsest_level ..` at fixed `tau`.
    Spatial { coarsest_level: u32, n_levels: usize, tau: f64, final_time: f64 },
    /// Steps `tau0 / 2^k` on a fixed mesh.
    Temporal { mesh_level: u32, tau0: f64, n_levels: usize, final_time: f64 },
}

impl Ladder {
    pub fn kind(&self) -> LadderKind {
        match self {
            Ladder::Spatial { .. } => LadderKind::Spatial,
            Ladder::Temporal { .. } => LadderKind::Temporal,
        }
    }

    fn n_levels(&self) -> usize {
        match *self {
            Ladder::Spatial { n_levels, .. } | Ladder::Temporal { n_levels, .. } => n_levels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSettings {
    pub n_samples: usize,
    pub master_seed: u64,
    pub threads: Option<usize>,
}

/// A finished convergence study.
#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub table: ErrorTable,
    /// Largest energy residual ratio over every run, reference included.
    pub max_energy_ratio: f64,
    pub n_samples: usize,
    pub n_failed: usize,
    pub max_newton_iterations: usize,
}

struct SampleOutcome {
    errors: Vec<NodeErrors>,
    max_energy_ratio: f64,
    max_newton: usize,
}

/// Run a coupled ensemble over `ladder` against a reference
/// `reference_extra_levels` refinements beyond its finest level.
pub fn convergence_table(
    model: &Model,
    ladder: Ladder,
    reference_extra_levels: usize,
    samples: SampleSettings,
) -> Result<ConvergenceStudy> {
    let n_levels = ladder.n_levels();
    if n_levels < 2 {
        return Err(invalid("a ladder needs at least two levels"));
    }
    if reference_extra_levels == 0 {
        return Err(invalid("the reference must be strictly finer than every level"));
    }
    // (space, tau) per level, then the reference.
    let (levels, reference, final_time): (Vec<(Arc<FeSpace>, f64)>, (Arc<FeSpace>, f64), f64) = match ladder {
        Ladder::Spatial { coarsest_level, tau, final_time, .. } => {
            let meshes = uniform_hierarchy(model.dimension, 1 << coarsest_level, n_levels + reference_extra_levels)?;
            let spaces = meshes.into_iter().map(|m| model.space(m)).collect::<Result<Vec<_>>>()?;
            let levels = spaces[..n_levels].iter().map(|s| (Arc::clone(s), tau)).collect();
            (levels, (Arc::clone(spaces.last().unwrap()), tau), final_time)
        }
        Ladder::Temporal { mesh_level, tau0, final_time, .. } => {
            let mesh = uniform_hierarchy(model.dimension, 1 << mesh_level, 1)?.remove(0);
            let space = model.space(mesh)?;
            let levels = (0..n_levels).map(|k| (Arc::clone(&space), tau0 / (1u64 << k) as f64)).collect();
            let ref_tau = tau0 / (1u64 << (n_levels - 1 + reference_extra_levels)) as f64;
            (levels, (space, ref_tau), final_time)
        }
    };
    let (ref_stepper, ref_init) = model.stepper(&reference.0, reference.1, final_time)?;
    let mut level_runs = Vec::with_capacity(n_levels);
    for (space, tau) in &levels {
        let (st, init) = model.stepper(space, *tau, final_time)?;
        let factor = (tau / reference.1).round() as usize;
        level_runs.push((st, init, ErrorEvaluator::new(space, &reference.0)?, factor));
    }
    let stride = level_runs.iter().map(|l| l.3).min().unwrap_or(1);
    let ref_cfg = *ref_stepper.config();

    let results = map_samples(samples.n_samples, samples.threads, |i| {
        let path = BrownianPath::sample(samples.master_seed, i, ref_cfg.n_steps, ref_cfg.tau)?;
        let reference_traj = ref_stepper.run(&ref_init, &path, Retention::Every(stride))?;
        let mut outcome = SampleOutcome {
            errors: Vec::with_capacity(n_levels),
            max_energy_ratio: reference_traj.max_energy_ratio,
            max_newton: reference_traj.newton_iterations.iter().copied().max().unwrap_or(0),
        };
        for (k, (st, init, evaluator, factor)) in level_runs.iter().enumerate() {
            let coarse_path = path.coarsen(*factor)?;
            if !path.coarsens_to(&coarse_path) {
                return Err(Error::Consistency { step: 0, detail: format!("level {k} is not driven by the reference path") });
            }
            let traj = st.run(init, &coarse_path, Retention::Every(1))?;
            outcome.max_energy_ratio = outcome.max_energy_ratio.max(traj.max_energy_ratio);
            outcome.max_newton = outcome.max_newton.max(traj.newton_iterations.iter().copied().max().unwrap_or(0));
            outcome.errors.push(evaluator.evaluate(&traj, &reference_traj)?);
        }
        Ok(outcome)
    })?;

    let mut rows = Vec::with_capacity(n_levels);
    for (k, (space, tau)) in levels.iter().enumerate() {
        let per_sample: Vec<&NodeErrors> = results.values.iter().map(|(_, o)| &o.errors[k]).collect();
        let e = sup_rms_errors(&per_sample)?;
        let param = match ladder.kind() {
            LadderKind::Spatial => space.mesh().h(),
            LadderKind::Temporal => *tau,
        };
        rows.push(ErrorRow { param, l2: e.l2, h1: e.h1, dtl2: e.dtl2 });
    }
    let mut table = ErrorTable { kind: ladder.kind(), rows, metadata: Vec::new() };
    table.push_metadata("seed", samples.master_seed);
    table.push_metadata("n_samples", results.values.len());
    table.push_metadata("n_failed", results.n_failed());
    table.push_metadata(
        "reference",
        match ladder.kind() {
            LadderKind::Spatial => format!("h={:e} (+{reference_extra_levels} levels)", reference.0.mesh().h()),
            LadderKind::Temporal => format!("tau={:e} (+{reference_extra_levels} levels)", reference.1),
        },
    );
    let outcomes = results.values.iter().map(|(_, o)| o);
    Ok(ConvergenceStudy {
        table,
        max_energy_ratio: outcomes.clone().map(|o| o.max_energy_ratio).fold(f64::NEG_INFINITY, f64::max),
        n_samples: results.values.len(),
        n_failed: results.n_failed(),
        max_newton_iterations: outcomes.map(|o| o.max_newton).max().unwrap_or(0),
    })
}

/// Where analytic errors are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticMeasure {
    /// Sup over all nodes, as in the stochastic tables (`d_t` from `n = 1`).
    SupOverNodes,
    /// At the final node only.
    FinalTime,
}

/// Spatial study of the deterministic linear equation against
/// `u = cos(πx) cos(πt)` in 1D. The `d_t` error compares against the exact
/// backward difference quotient.
pub fn analytic_linear_table(
    degree: usize,
    coarsest_level: u32,
    n_levels: usize,
    tau: f64,
    final_time: f64,
    discretization: Discretization,
    measure: AnalyticMeasure,
) -> Result<ErrorTable> {
    let meshes = uniform_hierarchy(1, 1 << coarsest_level, n_levels)?;
    let mut rows = Vec::with_capacity(n_levels);
    for mesh in meshes {
        let space = FeSpace::new(mesh, degree)?;
        let cfg = SchemeConfig::for_final_time(discretization, tau, final_time)?;
        let st = Stepper::new(Arc::clone(&space), cfg, PolynomialDrift::zero(), DiffusionSpec::Zero)?;
        let init = initial_state(&space, &|x| (PI * x[0]).cos(), &|_| 0.0)?;
        let path = BrownianPath::from_increments(tau, vec![0.0; cfg.n_steps])?;
        let stride = match measure {
            AnalyticMeasure::SupOverNodes => 1,
            AnalyticMeasure::FinalTime => cfg.n_steps,
        };
        let traj = st.run(&init, &path, Retention::Every(stride))?;
        let mut row = ErrorRow { param: space.mesh().h(), l2: 0.0, h1: 0.0, dtl2: 0.0 };
        for s in &traj.states {
            if measure == AnalyticMeasure::FinalTime && s.n != cfg.n_steps {
                continue;
            }
            let t = s.n as f64 * tau;
            let (ct, ct_prev) = ((PI * t).cos(), (PI * (t - tau)).cos());
            row.l2 = row.l2.max(l2_distance(&space, &s.u, &move |x| (PI * x[0]).cos() * ct));
            row.h1 = row.h1.max(h1_seminorm_distance(&space, &s.u, &move |x| [-PI * (PI * x[0]).sin() * ct, 0.0]));
            if s.n > 0 {
                let dq = (ct - ct_prev) / tau;
                row.dtl2 = row.dtl2.max(l2_distance(&space, &s.v, &move |x| (PI * x[0]).cos() * dq));
            }
        }
        rows.push(row);
    }
    let mut table = ErrorTable { kind: LadderKind::Spatial, rows, metadata: Vec::new() };
    table.push_metadata("reference", "analytic cos(pi x) cos(pi t)");
    table.push_metadata(
        "measured",
        match measure {
            AnalyticMeasure::SupOverNodes => "sup over nodes".to_string(),
            AnalyticMeasure::FinalTime => format!("at t={final_time}"),
        },
    );
    Ok(table)
}
