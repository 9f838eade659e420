//! Experiment configuration, presets and the batch runner behind the CLI.
//!
//! A configuration is resolved in three layers: a named preset, then a TOML
//! file merged over it, then individual overrides. Every output file starts
//! with the SHA-256 of the resolved configuration, which is also recorded
//! in `manifest.json`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::DiffusionSpec;
use crate::drift::PolynomialDrift;
use crate::ensemble::{kappa_quantiles, run_ensemble, subset_fraction, subset_fraction_curve, EnsembleStats};
use crate::error::{Error, Result};
use crate::fem::{FeSpace, Field};
use crate::mesh::uniform_hierarchy;
use crate::metrics::{
    analytic_linear_table, convergence_table, AnalyticMeasure, ConvergenceStudy, ErrorTable, Ladder, Model, SampleSettings,
};
use crate::noise::BrownianPath;
use crate::stepper::{initial_state, Discretization, Retention, SchemeConfig, Stepper, Trajectory};

pub const PRESETS: [&str; 8] = ["test1a", "test1b", "test1c", "test2", "test3a", "test3b", "test3c", "lin-det-check"];

const DEFAULT_SEED: u64 = 20_240_501;
const DESK_SAMPLES: usize = 200;
const PAPER_SAMPLES: usize = 5000;

/// Pointwise initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialField {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude · cos(kx π x) cos(ky π y)`.
    Cosine {
        #[serde(default = "one")]
        amplitude: f64,
        kx: f64,
        #[serde(default)]
        ky: f64,
    },
    /// `max(0, 1 − slope |x − center|)`.
    Tent {
        center: f64,
        slope: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl InitialField {
    pub fn to_field(&self) -> Arc<Field> {
        match *self {
            InitialField::Zero => Arc::new(|_: &[f64; 2]| 0.0),
            InitialField::Constant { value } => Arc::new(move |_: &[f64; 2]| value),
            InitialField::Cosine { amplitude, kx, ky } => {
                Arc::new(move |x: &[f64; 2]| amplitude * (kx * PI * x[0]).cos() * (ky * PI * x[1]).cos())
            }
            InitialField::Tent { center, slope } => Arc::new(move |x: &[f64; 2]| (1.0 - slope * (x[0] - center).abs()).max(0.0)),
        }
    }

    fn check(&self, path: &str, errors: &mut Vec<String>) {
        let finite = match *self {
            InitialField::Zero => true,
            InitialField::Constant { value } => value.is_finite(),
            InitialField::Cosine { amplitude, kx, ky } => amplitude.is_finite() && kx.is_finite() && ky.is_finite(),
            InitialField::Tent { center, slope } => {
                if slope.is_finite() && slope <= 0.0 {
                    errors.push(format!("{path}.slope: must be positive"));
                }
                center.is_finite() && slope.is_finite()
            }
        };
        if !finite {
            errors.push(format!("{path}: parameters must be finite"));
        }
    }
}

/// Spatial ladder at fixed `tau`; level `L` has `2^L` cells per side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialStudy {
    pub tau: f64,
    pub final_time: f64,
    pub coarsest_level: u32,
    pub levels: usize,
    #[serde(default = "one_level")]
    pub reference_extra_levels: usize,
}

/// Temporal ladder `tau0 / 2^k` on a fixed mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalStudy {
    pub mesh_level: u32,
    pub tau0: f64,
    pub levels: usize,
    pub final_time: f64,
    #[serde(default = "two_levels")]
    pub reference_extra_levels: usize,
}

fn one_level() -> usize {
    1
}

fn two_levels() -> usize {
    2
}

/// Ensemble time series on a fixed mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityStudy {
    pub mesh_level: u32,
    pub tau: f64,
    pub final_time: f64,
    /// Also run the equation without noise.
    #[serde(default = "yes")]
    pub deterministic_companion: bool,
    /// Threshold for the subset fraction column; defaults to four times the
    /// initial squared H¹ norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

fn yes() -> bool {
    true
}

/// Spatial ladder of the linear deterministic problem against its exact
/// solution `cos(πx) cos(πt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticStudy {
    pub tau: f64,
    pub final_time: f64,
    pub coarsest_level: u32,
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dimension: usize,
    #[serde(default = "one_level")]
    pub degree: usize,
    pub drift: PolynomialDrift,
    pub diffusion: DiffusionSpec,
    pub scheme: Discretization,
    pub initial_displacement: InitialField,
    pub initial_velocity: InitialField,
    pub samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<SpatialStudy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal: Option<TemporalStudy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityStudy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<AnalyticStudy>,
}

/// Command-line level overrides, applied last.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    /// Fixed step of spatial, stability and analytic studies, and the
    /// coarsest step of a temporal ladder.
    pub tau: Option<f64>,
    /// Mesh level of the fixed-mesh studies.
    pub h_level: Option<u32>,
    pub scheme: Option<Discretization>,
}

/// Built-in configuration `name`. `paper_scale` selects 5000 samples and
/// the full ladders instead of the desk-scale defaults.
pub fn preset(name: &str, paper_scale: bool) -> Result<ExperimentConfig> {
    let samples = if paper_scale { PAPER_SAMPLES } else { DESK_SAMPLES };
    let test1 = |drift: PolynomialDrift, diffusion: DiffusionSpec| ExperimentConfig {
        name: name.to_string(),
        dimension: 1,
        degree: 1,
        drift,
        diffusion,
        scheme: Discretization::ModifiedCn,
        initial_displacement: InitialField::Cosine { amplitude: 1.0, kx: 1.0, ky: 0.0 },
        initial_velocity: InitialField::Zero,
        samples,
        seed: DEFAULT_SEED,
        spatial: Some(SpatialStudy { tau: 1e-3, final_time: 0.01, coarsest_level: 2, levels: 5, reference_extra_levels: 1 }),
        temporal: Some(TemporalStudy { mesh_level: 7, tau0: 0.1, levels: 6, final_time: 0.4, reference_extra_levels: 2 }),
        stability: None,
        analytic: None,
    };
    let test3 = |drift: PolynomialDrift, diffusion: DiffusionSpec| ExperimentConfig {
        dimension: 2,
        initial_displacement: InitialField::Cosine { amplitude: 1.0, kx: 1.0, ky: 2.0 },
        spatial: None,
        temporal: None,
        stability: Some(StabilityStudy {
            mesh_level: if paper_scale { 5 } else { 4 },
            tau: if paper_scale { 0.005 } else { 0.01 },
            final_time: 1.0,
            deterministic_companion: true,
            kappa: None,
        }),
        ..test1(drift, diffusion)
    };
    let linear_noise = DiffusionSpec::Linear { c: 1.0 };
    Ok(match name {
        "test1a" => test1(PolynomialDrift::damped_power(3), linear_noise),
        "test1b" => test1(PolynomialDrift::damped_power(11), linear_noise),
        "test1c" => test1(PolynomialDrift::damped_power(3), DiffusionSpec::SmoothedAbs { epsilon: 0.01 }),
        "test2" => ExperimentConfig {
            initial_displacement: InitialField::Zero,
            initial_velocity: InitialField::Tent { center: 0.5, slope: 4.0 },
            spatial: Some(SpatialStudy {
                tau: 5e-3,
                final_time: 0.05,
                coarsest_level: 4,
                levels: if paper_scale { 5 } else { 4 },
                reference_extra_levels: 1,
            }),
            temporal: Some(TemporalStudy {
                mesh_level: if paper_scale { 9 } else { 7 },
                tau0: 0.1 / 8.0,
                levels: if paper_scale { 5 } else { 4 },
                final_time: 1.0,
                reference_extra_levels: 2,
            }),
            ..test1(PolynomialDrift::damped_power(3), linear_noise)
        },
        "test3a" => test3(PolynomialDrift::damped_power(3), linear_noise),
        "test3b" => test3(PolynomialDrift::damped_power(7), linear_noise),
        "test3c" => test3(PolynomialDrift::damped_power(3), DiffusionSpec::SmoothedAbs { epsilon: 1.0 }),
        "lin-det-check" => ExperimentConfig {
            samples: 1,
            spatial: None,
            temporal: None,
            analytic: Some(AnalyticStudy { tau: 1e-4, final_time: 0.5, coarsest_level: 3, levels: 4 }),
            ..test1(PolynomialDrift::zero(), DiffusionSpec::Zero)
        },
        other => return Err(Error::Config(vec![format!("preset: unknown preset `{other}` (known: {})", PRESETS.join(", "))])),
    })
}

/// Sections merged key by key when a file is layered over a preset; any
/// other key is replaced whole.
const MERGED_SECTIONS: [&str; 4] = ["spatial", "temporal", "stability", "analytic"];

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if MERGED_SECTIONS.contains(&k.as_str()) => {
                for (kk, vv) in o {
                    b.insert(kk, vv);
                }
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Resolve a configuration: `preset`, then the TOML `file_text` over it,
/// then `overrides`. Returns the validated configuration.
pub fn resolve(
    preset_name: Option<&str>,
    paper_scale: bool,
    file_text: Option<&str>,
    overrides: &Overrides,
) -> Result<ExperimentConfig> {
    let mut table = match preset_name {
        Some(p) => toml::Table::try_from(preset(p, paper_scale)?)
            .map_err(|e| Error::Config(vec![format!("preset: cannot serialize: {e}")]))?,
        None => toml::Table::new(),
    };
    if let Some(text) = file_text {
        let file: toml::Table = toml::from_str(text).map_err(|e| Error::Config(vec![format!("config: {e}")]))?;
        merge_tables(&mut table, file);
    }
    if preset_name.is_none() && file_text.is_none() {
        return Err(Error::Config(vec!["either a preset or a config file is required".into()]));
    }
    let mut config: ExperimentConfig =
        table.try_into().map_err(|e: toml::de::Error| Error::Config(vec![format!("config: {e}")]))?;
    config.apply(overrides);
    config.validate()?;
    Ok(config)
}

/// Parse a complete configuration from TOML and validate it.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    resolve(None, false, Some(text), &Overrides::default())
}

fn check_steps(path: &str, tau: f64, final_time: f64, errors: &mut Vec<String>) {
    if !(tau > 0.0 && tau.is_finite()) {
        errors.push(format!("{path}: time step {tau} must be positive"));
    } else if !(final_time > 0.0 && final_time.is_finite()) {
        errors.push(format!("{path}.final_time: {final_time} must be positive"));
    } else {
        let n = (final_time / tau).round();
        if n < 1.0 || (n * tau - final_time).abs() > 1e-12 * final_time.max(1.0) {
            errors.push(format!("{path}: final time {final_time} is not a whole number of steps of {tau}"));
        }
    }
}

fn check_level(path: &str, level: u32, extra: usize, errors: &mut Vec<String>) {
    if level as usize + extra > 14 {
        errors.push(format!("{path}: mesh level {} exceeds the supported maximum of 14", level as usize + extra));
    }
}

impl ExperimentConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.samples {
            self.samples = s;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(s) = o.scheme {
            self.scheme = s;
        }
        if let Some(t) = o.tau {
            if let Some(s) = &mut self.spatial {
                s.tau = t;
            }
            if let Some(s) = &mut self.temporal {
                s.tau0 = t;
            }
            if let Some(s) = &mut self.stability {
                s.tau = t;
            }
            if let Some(s) = &mut self.analytic {
                s.tau = t;
            }
        }
        if let Some(l) = o.h_level {
            if let Some(s) = &mut self.temporal {
                s.mesh_level = l;
            }
            if let Some(s) = &mut self.stability {
                s.mesh_level = l;
            }
        }
    }

    /// All violations, each prefixed with its field path.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            errors.push("name: must be nonempty and use only letters, digits, '-' and '_'".to_string());
        }
        if !(1..=2).contains(&self.dimension) {
            errors.push(format!("dimension: {} is not supported (use 1 or 2)", self.dimension));
        }
        if !(1..=2).contains(&self.degree) {
            errors.push(format!("degree: {} is not supported (use 1 or 2)", self.degree));
        }
        if let Err(vs) = self.drift.validate(self.dimension, self.scheme) {
            errors.extend(vs.iter().map(|v| format!("drift: {v}")));
        }
        if let Err(e) = self.diffusion.validate() {
            errors.push(format!("diffusion: {e}"));
        }
        self.initial_displacement.check("initial_displacement", &mut errors);
        self.initial_velocity.check("initial_velocity", &mut errors);
        if self.samples == 0 {
            errors.push("samples: at least one sample is required".into());
        }
        if self.spatial.is_none() && self.temporal.is_none() && self.stability.is_none() && self.analytic.is_none() {
            errors.push("config: no study selected (spatial, temporal, stability or analytic)".into());
        }
        if let Some(s) = &self.spatial {
            check_steps("spatial.tau", s.tau, s.final_time, &mut errors);
            if s.levels < 2 {
                errors.push("spatial.levels: a ladder needs at least two levels".into());
            }
            if s.reference_extra_levels == 0 {
                errors.push("spatial.reference_extra_levels: must be at least 1".into());
            }
            check_level("spatial", s.coarsest_level + s.levels.saturating_sub(1) as u32, s.reference_extra_levels, &mut errors);
        }
        if let Some(s) = &self.temporal {
            if s.levels < 2 {
                errors.push("temporal.levels: a ladder needs at least two levels".into());
            }
            if s.reference_extra_levels == 0 {
                errors.push("temporal.reference_extra_levels: must be at least 1".into());
            }
            if s.levels + s.reference_extra_levels > 20 {
                errors.push("temporal: ladder plus reference deeper than 20 halvings".into());
            } else {
                let finest = s.tau0 / (1u64 << (s.levels.saturating_sub(1) + s.reference_extra_levels)) as f64;
                check_steps("temporal.tau0", s.tau0, s.final_time, &mut errors);
                check_steps("temporal.reference", finest, s.final_time, &mut errors);
            }
            check_level("temporal.mesh_level", s.mesh_level, 0, &mut errors);
        }
        if let Some(s) = &self.stability {
            check_steps("stability.tau", s.tau, s.final_time, &mut errors);
            check_level("stability.mesh_level", s.mesh_level, 0, &mut errors);
            if s.kappa.is_some_and(|k| !(k >= 0.0)) {
                errors.push("stability.kappa: must be nonnegative".into());
            }
        }
        if let Some(a) = &self.analytic {
            check_steps("analytic.tau", a.tau, a.final_time, &mut errors);
            if a.levels < 2 {
                errors.push("analytic.levels: a ladder needs at least two levels".into());
            }
            check_level("analytic", a.coarsest_level + a.levels.saturating_sub(1) as u32, 0, &mut errors);
            let exact_setup = self.dimension == 1
                && self.drift.is_zero()
                && self.diffusion.is_zero()
                && self.initial_displacement == (InitialField::Cosine { amplitude: 1.0, kx: 1.0, ky: 0.0 })
                && self.initial_velocity == InitialField::Zero;
            if !exact_setup {
                errors.push(
                    "analytic: needs dimension 1, zero drift and diffusion, displacement cos(pi x) and zero velocity".into(),
                );
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// SHA-256 (hex) of the resolved configuration and crate version.
    pub fn manifest_hash(&self) -> String {
        let payload = serde_json::json!({ "version": env!("CARGO_PKG_VERSION"), "config": self });
        hex::encode(Sha256::digest(payload.to_string().as_bytes()))
    }

    fn model(&self) -> Model {
        Model {
            dimension: self.dimension,
            degree: self.degree,
            drift: self.drift.clone(),
            diffusion: self.diffusion,
            discretization: self.scheme,
            h1: self.initial_displacement.to_field(),
            h2: self.initial_velocity.to_field(),
        }
    }
}

/// Where and how to run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Worker threads; all cores when `None`. Results do not depend on it.
    pub threads: Option<usize>,
    /// Output directory; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
}

/// Stability series of one ensemble.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub stats: EnsembleStats,
    pub deterministic: Option<Trajectory>,
    pub kappa: f64,
    pub subset_fraction: Vec<f64>,
    pub kappa_curve: Vec<(f64, f64)>,
}

impl StabilityReport {
    /// `t, mean/min/max of ‖u‖², ‖∇u‖², ‖d_t u‖², mean H̃, H̃², H̃⁴,
    /// subset_fraction`, plus the noise-free companion when present.
    pub fn to_csv(&self, header: &[(String, String)]) -> String {
        let mut s = String::new();
        for (k, v) in header {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str(
            "t,mean_l2sq,min_l2sq,max_l2sq,mean_h1sq,min_h1sq,max_h1sq,mean_dtsq,min_dtsq,max_dtsq,mean_H,mean_H2,mean_H4,subset_fraction",
        );
        if self.deterministic.is_some() {
            s.push_str(",det_l2sq,det_h1sq,det_dtsq,det_H");
        }
        s.push('\n');
        let st = &self.stats;
        for n in 0..st.n_nodes() {
            let _ = write!(s, "{:.9e}", n as f64 * st.tau);
            for e in [&st.l2_sq, &st.grad_sq, &st.dt_sq] {
                let _ = write!(s, ",{:.9e},{:.9e},{:.9e}", e.mean[n], e.min[n], e.max[n]);
            }
            let _ = write!(
                s,
                ",{:.9e},{:.9e},{:.9e},{:.6}",
                st.hamiltonian.mean[n], st.mean_h2[n], st.mean_h4[n], self.subset_fraction[n]
            );
            if let Some(d) = &self.deterministic {
                let _ = write!(s, ",{:.9e},{:.9e},{:.9e},{:.9e}", d.l2_sq[n], d.grad_sq[n], d.dt_sq[n], d.hamiltonian[n]);
            }
            s.push('\n');
        }
        s
    }
}

/// Everything one run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub manifest_hash: String,
    pub spatial: Option<ConvergenceStudy>,
    pub temporal: Option<ConvergenceStudy>,
    /// Sup-over-nodes table and the final-time table.
    pub analytic: Option<(ErrorTable, ErrorTable)>,
    pub stability: Option<StabilityReport>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn n_failed(&self) -> usize {
        self.spatial.iter().chain(&self.temporal).map(|s| s.n_failed).sum::<usize>()
            + self.stability.as_ref().map_or(0, |s| s.stats.n_failed)
    }

    /// Largest energy residual ratio over every stochastic run.
    pub fn max_energy_ratio(&self) -> f64 {
        self.spatial
            .iter()
            .chain(&self.temporal)
            .map(|s| s.max_energy_ratio)
            .chain(self.stability.iter().map(|s| s.stats.max_energy_ratio))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn run_stability(config: &ExperimentConfig, study: &StabilityStudy, threads: Option<usize>) -> Result<StabilityReport> {
    let mesh = uniform_hierarchy(config.dimension, 1 << study.mesh_level, 1)?.remove(0);
    let space = FeSpace::for_drift_degree(mesh, config.degree, config.drift.degree())?;
    let scheme = SchemeConfig::for_final_time(config.scheme, study.tau, study.final_time)?;
    let init = initial_state(&space, &*config.initial_displacement.to_field(), &*config.initial_velocity.to_field())?;
    let stepper = Stepper::new(Arc::clone(&space), scheme, config.drift.clone(), config.diffusion)?;
    let run = run_ensemble(&stepper, &init, config.samples, config.seed, threads, false)?;
    let deterministic = if study.deterministic_companion {
        let st = Stepper::new(Arc::clone(&space), scheme, config.drift.clone(), DiffusionSpec::Zero)?;
        let path = BrownianPath::from_increments(scheme.tau, vec![0.0; scheme.n_steps])?;
        Some(st.run(&init, &path, Retention::None)?)
    } else {
        None
    };
    let kappa = study.kappa.unwrap_or_else(|| 4.0 * run.h1_sq_samples[0][0]);
    let subset = subset_fraction(&run.h1_sq_samples, None, kappa)?;
    let quantiles: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    let kappas = kappa_quantiles(&run.h1_sq_samples, &quantiles);
    let kappa_curve = subset_fraction_curve(&run.h1_sq_samples, None, &kappas)?;
    Ok(StabilityReport { stats: run.stats, deterministic, kappa, subset_fraction: subset, kappa_curve })
}

fn write_file(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    files.push(path);
    Ok(())
}

fn with_hash(table: &ErrorTable, hash: &str, study: &str) -> ErrorTable {
    let mut t = table.clone();
    t.metadata.insert(0, ("manifest_sha256".into(), hash.to_string()));
    t.metadata.insert(1, ("study".into(), study.to_string()));
    t
}

fn orders_json(table: &ErrorTable) -> serde_json::Value {
    table.finest_orders().map_or(serde_json::Value::Null, |o| serde_json::json!({ "l2": o[0], "h1": o[1], "dtl2": o[2] }))
}

/// Run every study of a validated configuration and write the outputs.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunReport> {
    config.validate()?;
    let hash = config.manifest_hash();
    let model = config.model();
    let samples = SampleSettings { n_samples: config.samples, master_seed: config.seed, threads: options.threads };
    let spatial = config
        .spatial
        .as_ref()
        .map(|s| {
            let ladder =
                Ladder::Spatial { coarsest_level: s.coarsest_level, n_levels: s.levels, tau: s.tau, final_time: s.final_time };
            convergence_table(&model, ladder, s.reference_extra_levels, samples)
        })
        .transpose()?;
    let temporal = config
        .temporal
        .as_ref()
        .map(|s| {
            let ladder =
                Ladder::Temporal { mesh_level: s.mesh_level, tau0: s.tau0, n_levels: s.levels, final_time: s.final_time };
            convergence_table(&model, ladder, s.reference_extra_levels, samples)
        })
        .transpose()?;
    let analytic = config
        .analytic
        .as_ref()
        .map(|a| -> Result<_> {
            let run = |m| analytic_linear_table(config.degree, a.coarsest_level, a.levels, a.tau, a.final_time, config.scheme, m);
            Ok((run(AnalyticMeasure::SupOverNodes)?, run(AnalyticMeasure::FinalTime)?))
        })
        .transpose()?;
    let stability = config.stability.as_ref().map(|s| run_stability(config, s, options.threads)).transpose()?;

    let mut report = RunReport {
        config: config.clone(),
        manifest_hash: hash.clone(),
        spatial,
        temporal,
        analytic,
        stability,
        files: Vec::new(),
    };
    if let Some(dir) = &options.out_dir {
        write_outputs(&mut report, dir)?;
    }
    Ok(report)
}

fn write_outputs(report: &mut RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let name = report.config.name.clone();
    let hash = report.manifest_hash.clone();
    let mut files = Vec::new();
    let mut results = serde_json::Map::new();
    for (label, study) in [("spatial", &report.spatial), ("temporal", &report.temporal)] {
        if let Some(s) = study {
            write_file(dir, &format!("{name}_{label}.csv"), &with_hash(&s.table, &hash, label).to_csv(), &mut files)?;
            results.insert(
                label.into(),
                serde_json::json!({
                    "finest_orders": orders_json(&s.table),
                    "n_samples": s.n_samples,
                    "n_failed": s.n_failed,
                    "max_energy_ratio": s.max_energy_ratio,
                    "max_newton_iterations": s.max_newton_iterations,
                }),
            );
        }
    }
    if let Some((sup, last)) = &report.analytic {
        write_file(dir, &format!("{name}_analytic.csv"), &with_hash(sup, &hash, "analytic").to_csv(), &mut files)?;
        write_file(dir, &format!("{name}_analytic_final.csv"), &with_hash(last, &hash, "analytic_final").to_csv(), &mut files)?;
        results.insert(
            "analytic".into(),
            serde_json::json!({ "finest_orders": orders_json(sup), "finest_orders_final_time": orders_json(last) }),
        );
    }
    if let Some(st) = &report.stability {
        let header = vec![
            ("manifest_sha256".to_string(), hash.clone()),
            ("study".to_string(), "stability".to_string()),
            ("seed".to_string(), st.stats.master_seed.to_string()),
            ("n_samples".to_string(), st.stats.n_samples.to_string()),
            ("n_failed".to_string(), st.stats.n_failed.to_string()),
            ("kappa".to_string(), format!("{:.9e}", st.kappa)),
        ];
        write_file(dir, &format!("{name}_stability.csv"), &st.to_csv(&header), &mut files)?;
        let mut curve = format!("# manifest_sha256={hash}\n# study=kappa_curve\nkappa,subset_fraction\n");
        for (k, f) in &st.kappa_curve {
            let _ = writeln!(curve, "{k:.9e},{f:.6}");
        }
        write_file(dir, &format!("{name}_kappa.csv"), &curve, &mut files)?;
        results.insert(
            "stability".into(),
            serde_json::json!({
                "n_samples": st.stats.n_samples,
                "n_failed": st.stats.n_failed,
                "max_energy_ratio": st.stats.max_energy_ratio,
                "kappa": st.kappa,
            }),
        );
    }
    let manifest = serde_json::json!({
        "manifest_sha256": hash,
        "crate": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": report.config,
        "outputs": files.iter().filter_map(|p| p.file_name()).map(|f| f.to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "results": results,
    });
    write_file(dir, "manifest.json", &serde_json::to_string_pretty(&manifest)?, &mut files)?;
    report.files = files;
    Ok(())
}
