//! Empirical measures of weight rows and what we measure about them.

pub mod measure;
pub mod residual;
pub mod singular;
pub mod sweep;
pub mod wasserstein;

pub use measure::{empirical_measure, EmpiricalMeasure, TestFunction};
pub use residual::{continuity_residual, ResidualReport, Stencil};
pub use singular::{singular_integral_check, SingularIntegralReport};
pub use sweep::{eps_sweep, width_sweep, SweepBase, SweepRow, SweepTable};
pub use wasserstein::{wasserstein1, wasserstein2};
