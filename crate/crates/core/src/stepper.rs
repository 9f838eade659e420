//! Two-step implicit time integration in mixed `(u, v = u_t)` form.
//!
//! One step solves, for `c = u^{n+1}`,
//!
//! ```text
//! R(c) = (M + τ²K) c − τ² (f_h(c; u^n), φ) − M (u^n + τ v^n) − τ ΔW (g(u^n), φ) = 0
//! ```
//!
//! then sets `v^{n+1} = (c − u^n)/τ`. Eliminating `v` gives back the
//! second-difference form with `u^{n−1} = u^n − τ v^n`, which each step
//! re-checks. The drift term is either `f(u^{n+1})` (fully implicit) or the
//! divided difference `f̂(u^{n+1}, u^n)` (modified Crank–Nicolson), both
//! evaluated at quadrature points.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::diffusion::DiffusionSpec;
use crate::drift::PolynomialDrift;
use crate::error::{invalid, Error, Result};
use crate::fem::sparse::{dot, norm_inf, pcg, CholeskyFactor};
use crate::fem::{l2_project, FeFunction, FeSpace, Field, SolverKind, SymSparseMatrix};
use crate::noise::BrownianPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Discretization {
    /// `f_h^{n+1} = f(u^{n+1})`.
    #[serde(rename = "implicit", alias = "fully_implicit")]
    FullyImplicit,
    /// `f_h^{n+1} = −(F(u^{n+1}) − F(u^n)) / (u^{n+1} − u^n)`.
    #[serde(rename = "mcn", alias = "modified_cn")]
    ModifiedCn,
}

impl std::fmt::Display for Discretization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Discretization::FullyImplicit => "implicit",
            Discretization::ModifiedCn => "mcn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonConfig {
    /// Absolute tolerance on the max-norm of the residual divided by `τ`.
    pub abs_tol: f64,
    /// Tolerance relative to the first residual.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { abs_tol: 1e-11, rel_tol: 1e-10, max_iter: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub discretization: Discretization,
    pub tau: f64,
    pub n_steps: usize,
    pub newton: NewtonConfig,
    pub linear_tol: f64,
}

impl SchemeConfig {
    pub fn new(discretization: Discretization, tau: f64, n_steps: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid(format!("time step {tau} must be positive")));
        }
        Ok(SchemeConfig { discretization, tau, n_steps, newton: NewtonConfig::default(), linear_tol: crate::fem::LINEAR_TOL })
    }

    /// Step count for `final_time`, requiring `N τ = T` to 1e-12.
    pub fn for_final_time(discretization: Discretization, tau: f64, final_time: f64) -> Result<Self> {
        let n = (final_time / tau).round();
        if n < 1.0 || (n * tau - final_time).abs() > 1e-12 * final_time.max(1.0) {
            return Err(invalid(format!("final time {final_time} is not a whole number of steps of {tau}")));
        }
        Self::new(discretization, tau, n as usize)
    }

    pub fn final_time(&self) -> f64 {
        self.tau * self.n_steps as f64
    }

    fn validate(&self) -> Result<()> {
        let n = &self.newton;
        if !(n.abs_tol > 0.0 && n.rel_tol > 0.0 && self.linear_tol > 0.0 && n.max_iter > 0) {
            return Err(invalid("solver tolerances must be positive"));
        }
        Ok(())
    }
}

/// `u^n` and `v^n = d_t u^n` at step `n`.
#[derive(Debug, Clone)]
pub struct State {
    pub n: usize,
    pub u: FeFunction,
    pub v: FeFunction,
}

/// `u^0 = P_h h1`, `v^0 = P_h h2`; equivalently `u^{−1} = u^0 − τ P_h h2`.
pub fn initial_state(space: &Arc<FeSpace>, h1: &Field, h2: &Field) -> Result<State> {
    Ok(State { n: 0, u: l2_project(space, h1)?, v: l2_project(space, h2)? })
}

/// Diagnostics of one time step.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub newton_iterations: usize,
    pub residual_history: Vec<f64>,
    /// `(g(u^n), v^{n+1}) ΔW`, the noise contribution to the energy balance.
    pub noise_work: f64,
}

/// Which states a trajectory keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    None,
    /// Every `k`-th state, starting with `n = 0`.
    Every(usize),
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub tau: f64,
    pub stride: usize,
    /// Retained states at `n = 0, stride, 2·stride, …`.
    pub states: Vec<State>,
    /// `H̃` at every node `0..=N`.
    pub hamiltonian: Vec<f64>,
    /// `‖u^n‖²`, `‖∇u^n‖²`, `‖v^n‖²` at every node.
    pub l2_sq: Vec<f64>,
    pub grad_sq: Vec<f64>,
    pub dt_sq: Vec<f64>,
    pub newton_iterations: Vec<usize>,
    /// Per-step energy balance residual `r_n`, see [`Stepper::run`].
    pub energy_residuals: Vec<f64>,
    /// `max_n r_n / (1 + |H̃(u^n)|)`.
    pub max_energy_ratio: f64,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.energy_residuals.len()
    }

    /// State at step `n`, if retained.
    pub fn state_at(&self, n: usize) -> Option<&State> {
        (n % self.stride == 0).then(|| self.states.get(n / self.stride)).flatten()
    }

    /// `‖u^n‖²_{H¹} = ‖u^n‖² + ‖∇u^n‖²` at every node.
    pub fn h1_sq(&self) -> Vec<f64> {
        self.l2_sq.iter().zip(&self.grad_sq).map(|(a, b)| a + b).collect()
    }
}

/// Reusable per-space integrator for one scheme, drift and noise.
#[derive(Debug)]
pub struct Stepper {
    space: Arc<FeSpace>,
    config: SchemeConfig,
    drift: PolynomialDrift,
    diffusion: DiffusionSpec,
    /// `M + τ² K`.
    system: SymSparseMatrix,
    linear_factor: OnceLock<Option<CholeskyFactor>>,
}

impl Stepper {
    pub fn new(space: Arc<FeSpace>, config: SchemeConfig, drift: PolynomialDrift, diffusion: DiffusionSpec) -> Result<Self> {
        config.validate()?;
        if drift.degree() == 0 {
            return Err(invalid("drift needs at least one coefficient"));
        }
        let system = space.mass().add_scaled(config.tau * config.tau, space.stiffness());
        Ok(Stepper { space, config, drift, diffusion, system, linear_factor: OnceLock::new() })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn drift(&self) -> &PolynomialDrift {
        &self.drift
    }

    pub fn diffusion(&self) -> &DiffusionSpec {
        &self.diffusion
    }

    fn solve(&self, a: &SymSparseMatrix, b: &[f64], constant: bool) -> Result<Vec<f64>> {
        match self.space.solver_kind() {
            SolverKind::Cholesky if constant => {
                let f = self.linear_factor.get_or_init(|| CholeskyFactor::new(&self.system).ok());
                f.as_ref()
                    .map(|f| f.solve(b))
                    .ok_or_else(|| Error::LinearSolveFailed("system matrix factorization failed".into()))
            }
            SolverKind::Cholesky => Ok(CholeskyFactor::new(a)?.solve(b)),
            SolverKind::Pcg => pcg(a, b, None, self.config.linear_tol, 10 * a.dim().max(1)).map(|(x, _)| x),
        }
    }

    /// Drift values and their derivative in `u^{n+1}` at the quadrature points.
    fn drift_at(&self, new_qp: &[f64], old_qp: &[f64], values: &mut [f64], derivs: &mut [f64]) {
        match self.config.discretization {
            Discretization::FullyImplicit => {
                for ((a, v), d) in new_qp.iter().zip(values.iter_mut()).zip(derivs.iter_mut()) {
                    *v = self.drift.eval_f(*a);
                    *d = self.drift.eval_f_prime(*a);
                }
            }
            Discretization::ModifiedCn => {
                for (((a, b), v), d) in new_qp.iter().zip(old_qp).zip(values.iter_mut()).zip(derivs.iter_mut()) {
                    (*v, *d) = self.drift.fhat_with_partial(*a, *b);
                }
            }
        }
    }

    /// Advance `state` by one step with Wiener increment `dw`.
    pub fn step(&self, state: &State, dw: f64) -> Result<(State, StepInfo)> {
        if !dw.is_finite() {
            return Err(invalid("Wiener increment must be finite"));
        }
        let sp = &self.space;
        let n = sp.n_dofs();
        let tau = self.config.tau;
        let tau2 = tau * tau;
        let uo = state.u.coeffs();
        let vo = state.v.coeffs();
        let mass = sp.mass();

        let predictor: Vec<f64> = uo.iter().zip(vo).map(|(u, v)| u + tau * v).collect();
        let mut rhs = mass.mul_vec(&predictor);
        let noise_load = if self.diffusion.is_zero() || dw == 0.0 {
            None
        } else {
            let g: Vec<f64> = sp.values_at_quadrature(uo).iter().map(|&u| self.diffusion.eval_g(u)).collect();
            let b = sp.load_from_quadrature_values(&g);
            for (r, bi) in rhs.iter_mut().zip(&b) {
                *r += tau * dw * bi;
            }
            Some(b)
        };

        let nonlinear = !self.drift.is_zero();
        let old_qp = if nonlinear { sp.values_at_quadrature(uo) } else { Vec::new() };
        let nqp = old_qp.len();
        let (mut f_vals, mut f_derivs) = (vec![0.0; nqp], vec![0.0; nqp]);
        let mut new_qp = Vec::with_capacity(nqp);
        let mut drift_load = vec![0.0; if nonlinear { n } else { 0 }];
        let mut jacobian = SymSparseMatrix::zeros(Arc::clone(sp.pattern()));

        let mut c = predictor;
        let mut residual = vec![0.0; n];
        let mut history = Vec::new();
        let mut iterations = 0;
        loop {
            self.system.mul_vec_into(&c, &mut residual);
            for (r, b) in residual.iter_mut().zip(&rhs) {
                *r -= b;
            }
            if nonlinear {
                sp.values_at_quadrature_into(&c, &mut new_qp);
                self.drift_at(&new_qp, &old_qp, &mut f_vals, &mut f_derivs);
                sp.load_from_quadrature_values_into(&f_vals, &mut drift_load);
                for (r, b) in residual.iter_mut().zip(&drift_load) {
                    *r -= tau2 * b;
                }
            }
            // R/τ is the residual of the second-difference form; R itself
            // scales like τ² and would pass the tolerance spuriously.
            let rn = norm_inf(&residual) / tau;
            history.push(rn);
            if !rn.is_finite() {
                return Err(Error::NewtonDiverged { step: state.n, residuals: history });
            }
            let newton = &self.config.newton;
            if rn == 0.0 || (iterations > 0 && (rn <= newton.abs_tol || rn <= newton.rel_tol * history[0])) {
                break;
            }
            if iterations == newton.max_iter {
                return Err(Error::NewtonDiverged { step: state.n, residuals: history });
            }
            let neg: Vec<f64> = residual.iter().map(|r| -r).collect();
            let delta = if nonlinear {
                sp.weighted_mass_into(&f_derivs, &mut jacobian);
                let j = self.system.add_scaled(-tau2, &jacobian);
                self.solve(&j, &neg, false)?
            } else {
                self.solve(&self.system, &neg, true)?
            };
            for (ci, d) in c.iter_mut().zip(&delta) {
                *ci += d;
            }
            iterations += 1;
        }

        let v_new: Vec<f64> = c.iter().zip(uo).map(|(a, b)| (a - b) / tau).collect();
        self.check_consistency(state, &c, &v_new, &residual, noise_load.as_deref(), &drift_load, dw)?;
        let noise_work = noise_load.as_ref().map_or(0.0, |b| dot(b, &v_new) * dw);

        let next = State { n: state.n + 1, u: FeFunction::from_coeffs(sp, c)?, v: FeFunction::from_coeffs(sp, v_new)? };
        Ok((next, StepInfo { newton_iterations: iterations, residual_history: history, noise_work }))
    }

    /// Mixed-form update and second-difference form agree with the Newton
    /// residual up to rounding.
    #[allow(clippy::too_many_arguments)]
    fn check_consistency(
        &self,
        state: &State,
        u_new: &[f64],
        v_new: &[f64],
        residual: &[f64],
        noise_load: Option<&[f64]>,
        drift_load: &[f64],
        dw: f64,
    ) -> Result<()> {
        let sp = &self.space;
        let tau = self.config.tau;
        let uo = state.u.coeffs();
        let vo = state.v.coeffs();
        let mass = sp.mass();
        let du: Vec<f64> = u_new.iter().zip(uo).map(|(a, b)| a - b).collect();
        let m_du = mass.mul_vec(&du);
        let m_v = mass.mul_vec(v_new);
        let scale = norm_inf(&m_du).max(1.0);
        let mixed = m_du.iter().zip(&m_v).map(|(a, b)| (a - tau * b).abs()).fold(0.0, f64::max);
        if mixed > 1e-10 * scale {
            return Err(Error::Consistency { step: state.n, detail: format!("mixed-form mismatch {mixed:e}") });
        }
        // (u^{n+1} − 2u^n + u^{n−1}, φ) + τ²(∇u^{n+1}, ∇φ) − τ²(f_h, φ) − τ ΔW (g(u^n), φ)
        let second: Vec<f64> = u_new.iter().zip(uo).zip(vo).map(|((a, b), v)| a - 2.0 * b + (b - tau * v)).collect();
        let mut primal = mass.mul_vec(&second);
        let k_u = sp.stiffness().mul_vec(u_new);
        let tau2 = tau * tau;
        for i in 0..primal.len() {
            primal[i] += tau2 * k_u[i];
            if !drift_load.is_empty() {
                primal[i] -= tau2 * drift_load[i];
            }
            if let Some(b) = noise_load {
                primal[i] -= tau * dw * b[i];
            }
        }
        let gap = primal.iter().zip(residual).map(|(p, r)| (p - r).abs()).fold(0.0, f64::max) / tau;
        let magnitude = norm_inf(&mass.mul_vec(u_new)).max(1.0);
        if gap > 1e-9 * magnitude {
            return Err(Error::Consistency { step: state.n, detail: format!("primal/mixed residual gap {gap:e}") });
        }
        Ok(())
    }

    /// `H̃ = ½‖v‖² + ½‖∇u‖² + (F(u), 1)` for the state.
    pub fn hamiltonian(&self, state: &State) -> f64 {
        hamiltonian_from_velocity(&self.space, &self.drift, state.u.coeffs(), state.v.coeffs())
    }

    /// Run all steps along `path` from `initial`.
    ///
    /// Each step records the energy balance residual
    ///
    /// ```text
    /// r_n = H̃(u^{n+1}) − H̃(u^n) + ½‖v^{n+1} − v^n‖² + ½‖∇(u^{n+1} − u^n)‖² − (g(u^n), v^{n+1}) ΔW
    /// ```
    ///
    /// which is `≤ 0` for a convex potential with the implicit drift and
    /// `= 0` up to solver tolerance with the modified Crank–Nicolson drift.
    pub fn run(&self, initial: &State, path: &BrownianPath, retention: Retention) -> Result<Trajectory> {
        let cfg = &self.config;
        if path.n_steps() != cfg.n_steps || (path.tau() - cfg.tau).abs() > 1e-14 * cfg.tau {
            return Err(invalid(format!(
                "path has {} steps of {} but the scheme expects {} steps of {}",
                path.n_steps(),
                path.tau(),
                cfg.n_steps,
                cfg.tau
            )));
        }
        let stride = match retention {
            Retention::None => usize::MAX,
            Retention::Every(k) if k > 0 => k,
            Retention::Every(_) => return Err(invalid("retention stride must be positive")),
        };
        let mass = self.space.mass();
        let stiff = self.space.stiffness();
        let n = cfg.n_steps;
        let mut traj = Trajectory {
            tau: cfg.tau,
            stride: if stride == usize::MAX { n + 1 } else { stride },
            states: Vec::new(),
            hamiltonian: Vec::with_capacity(n + 1),
            l2_sq: Vec::with_capacity(n + 1),
            grad_sq: Vec::with_capacity(n + 1),
            dt_sq: Vec::with_capacity(n + 1),
            newton_iterations: Vec::with_capacity(n),
            energy_residuals: Vec::with_capacity(n),
            max_energy_ratio: f64::NEG_INFINITY,
        };
        let record = |traj: &mut Trajectory, s: &State| {
            let l2 = mass.quadratic_form(s.u.coeffs());
            let grad = stiff.quadratic_form(s.u.coeffs());
            let dt = mass.quadratic_form(s.v.coeffs());
            traj.l2_sq.push(l2);
            traj.grad_sq.push(grad);
            traj.dt_sq.push(dt);
            traj.hamiltonian.push(0.5 * dt + 0.5 * grad + self.potential_energy(s.u.coeffs()));
            if retention != Retention::None && s.n % stride == 0 {
                traj.states.push(s.clone());
            }
        };
        record(&mut traj, initial);
        let mut state = initial.clone();
        for (k, &dw) in path.increments().iter().enumerate() {
            let (next, info) = self.step(&state, dw)?;
            record(&mut traj, &next);
            let du: Vec<f64> = next.u.coeffs().iter().zip(state.u.coeffs()).map(|(a, b)| a - b).collect();
            let dv: Vec<f64> = next.v.coeffs().iter().zip(state.v.coeffs()).map(|(a, b)| a - b).collect();
            let r =
                traj.hamiltonian[k + 1] - traj.hamiltonian[k] + 0.5 * mass.quadratic_form(&dv) + 0.5 * stiff.quadratic_form(&du)
                    - info.noise_work;
            if !r.is_finite() {
                return Err(Error::NewtonDiverged { step: k, residuals: info.residual_history });
            }
            traj.max_energy_ratio = traj.max_energy_ratio.max(r / (1.0 + traj.hamiltonian[k].abs()));
            traj.energy_residuals.push(r);
            traj.newton_iterations.push(info.newton_iterations);
            state = next;
        }
        Ok(traj)
    }

    fn potential_energy(&self, u: &[f64]) -> f64 {
        potential_energy(&self.space, &self.drift, u)
    }
}

fn potential_energy(space: &FeSpace, drift: &PolynomialDrift, u: &[f64]) -> f64 {
    if drift.is_zero() {
        return 0.0;
    }
    let vals: Vec<f64> = space.values_at_quadrature(u).iter().map(|&x| drift.eval_potential(x)).collect();
    space.integrate_quadrature_values(&vals)
}

fn hamiltonian_from_velocity(space: &FeSpace, drift: &PolynomialDrift, u: &[f64], v: &[f64]) -> f64 {
    0.5 * space.mass().quadratic_form(v) + 0.5 * space.stiffness().quadratic_form(u) + potential_energy(space, drift, u)
}

/// `H̃(u^n) = ½‖(u^n − u^{n−1})/τ‖² + ½‖∇u^n‖² + (F(u^n), 1)`.
pub fn hamiltonian(space: &FeSpace, drift: &PolynomialDrift, u_n: &FeFunction, u_prev: &FeFunction, tau: f64) -> f64 {
    let v: Vec<f64> = u_n.coeffs().iter().zip(u_prev.coeffs()).map(|(a, b)| (a - b) / tau).collect();
    hamiltonian_from_velocity(space, drift, u_n.coeffs(), &v)
}

/// Project the initial data and run one trajectory, retaining every state.
#[allow(clippy::too_many_arguments)]
pub fn run_trajectory(
    space: &Arc<FeSpace>,
    config: SchemeConfig,
    path: &BrownianPath,
    drift: &PolynomialDrift,
    diffusion: &DiffusionSpec,
    h1: &Field,
    h2: &Field,
) -> Result<Trajectory> {
    let stepper = Stepper::new(Arc::clone(space), config, drift.clone(), *diffusion)?;
    let init = initial_state(space, h1, h2)?;
    stepper.run(&init, path, Retention::Every(1))
}
