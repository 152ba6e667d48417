//! Sampling Gibbs-tilted path measures of diffusions by optimal control.
//!
//! A reference diffusion `dX = b dt + σ dW` and a path-space energy
//! `H(X) = ∫ f(X_t, t) dt + g(X_T)` define the tilted law
//! `dP* ∝ exp(-H) dP`. Adding the drift `a u*` with `u* = -∇v`,
//! `v = -log E exp(-H)`, turns reference samples into exact samples of `P*`.
//! The same mechanism drives Feynman–Kac averaging ([`fk`]), Schrödinger
//! bridges ([`bridge`]) and time reversal ([`reversal`]).

pub mod bridge;
pub mod container;
pub mod control;
pub mod error;
pub mod field;
pub mod fk;
pub mod gibbs;
pub mod grid;
pub mod linalg;
pub mod measure;
pub mod model;
pub mod oracle;
pub mod path;
pub mod reversal;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod value;

pub use bridge::{BridgeSolution, KernelMethod, TransitionKernel};
pub use control::ControlField;
pub use error::{Error, Result};
pub use field::ScalarField;
pub use fk::{EstimatorReport, PathFunctional};
pub use grid::{Axis, FieldGrid, TimeGrid};
pub use measure::GridMeasure;
pub use model::{DiffusionModel, InitialLaw};
pub use path::{Path, PathEnsemble};
pub use reversal::{DensityEvolution, ReversedModel};
pub use value::{Hamiltonian, ValueEstimate};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
