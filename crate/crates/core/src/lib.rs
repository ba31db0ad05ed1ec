//! Smoothed BitNet-like quantized networks and their particle dynamics.
//!
//! The crate is organised bottom-up:
//!
//! * [`quant`] holds the smooth quantizer primitives (`sgn_ε`, `|·|_ε`,
//!   `clip_ε`, `γ_ε`, `Quant_ε`) together with an adaptive Gauss–Kronrod
//!   integrator used to check their integral identities.
//! * [`constraint`] implements the layer-mean functional, the zero-mean
//!   projection and the shift isometry.
//! * [`forward`] and [`backprop`] evaluate the smoothed network, its
//!   population risk over a finite dataset, and exact reverse-mode gradients.
//! * [`dynamics`] runs clamped full-batch gradient descent and records
//!   trajectories.
//! * [`meanfield`] turns trajectories into empirical measures and measures
//!   them: exact Wasserstein distances, weak-form continuity residuals,
//!   singular-integral bounds and ε / width sweeps.
//! * [`experiment`] is the configuration, orchestration and CSV layer used by
//!   the `bitnet-mf` command-line tool.

pub mod backprop;
pub mod constraint;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod gradcheck;
pub mod meanfield;
pub mod numeric;
pub mod quant;

pub use error::{Error, Result};
