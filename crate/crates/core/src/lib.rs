//! Finite element solver and Monte Carlo harness for the nonlinear wave
//! equation driven by scalar multiplicative noise,
//!
//! ```text
//! u_tt − Δu = f(u) + g(u) dW/dt   in (0,1)^d,   ∂u/∂n = 0 on the boundary,
//! ```
//!
//! discretized by continuous Lagrange elements in space and a two-step
//! implicit scheme in time, with either a fully implicit or an
//! energy-preserving (modified Crank–Nicolson) treatment of the drift.

pub mod diffusion;
pub mod drift;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod mesh;
pub mod metrics;
pub mod noise;
pub mod stepper;

pub use diffusion::DiffusionSpec;
pub use drift::PolynomialDrift;
pub use error::{Error, Result};
pub use fem::{FeFunction, FeSpace};
pub use mesh::Mesh;
pub use noise::BrownianPath;
pub use stepper::{Discretization, SchemeConfig, State, Stepper, Trajectory};
