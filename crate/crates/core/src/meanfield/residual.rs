//! Weak-form continuity-equation residual along a recorded trajectory.
//!
//! For a test function φ and `Φ(t) = ∫ φ dμ_t = (1/n) Σ φ(w_i(t))`, the
//! residual at a snapshot is
//! `| dΦ/dt (finite difference) − (1/n) Σ ∇φ(w_i(t)) · v(w_i(t)) |`
//! with `v = −∇_{w_i} R_ε` evaluated at the snapshot state.

use super::measure::TestFunction;
use crate::backprop::{risk_gradient, LossSpec};
use crate::dataset::Dataset;
use crate::dynamics::ParticleTrajectory;
use crate::error::{Error, Result};

/// Finite-difference stencil used for `dΦ/dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    Central,
    /// First snapshot: `(Φ(t₁) − Φ(t₀)) / (t₁ − t₀)`.
    Forward,
    /// Last snapshot: `(Φ(t_K) − Φ(t_{K−1})) / (t_K − t_{K−1})`.
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// Snapshot time actually used (the latest recorded time ≤ requested).
    pub time: f64,
    pub stencil: Stencil,
    /// Finite-difference estimate of `dΦ/dt`.
    pub derivative: f64,
    /// `(1/n) Σ ∇φ(w_i) · v(w_i)`.
    pub transport: f64,
    /// `|derivative − transport|`
    pub residual: f64,
    /// True when the stencil is one-sided.
    pub boundary: bool,
    /// True when a clamp event happened between the stencil snapshots.
    pub clipped: bool,
}

fn phi_mean(traj: &ParticleTrajectory, idx: usize, layer: usize, phi: &TestFunction) -> f64 {
    let w = &traj.snapshots[idx][layer];
    let vals: Vec<f64> = (0..w.rows()).map(|i| phi.value(w.row(i))).collect();
    crate::numeric::pairwise_mean(&vals)
}

/// Residual of the weak continuity equation for one layer at time `t`.
pub fn continuity_residual(
    traj: &ParticleTrajectory,
    layer: usize,
    phi: &TestFunction,
    t: f64,
    data: &Dataset,
    loss: &LossSpec,
) -> Result<ResidualReport> {
    if layer >= traj.architecture.depth() {
        return Err(Error::domain(format!(
            "layer index {layer} out of range (depth {})",
            traj.architecture.depth()
        )));
    }
    let (_, m) = traj.architecture.layer_shape(layer);
    if phi.dim() != m {
        return Err(Error::Shape {
            what: "test function dimension",
            expected: m,
            got: phi.dim(),
        });
    }
    if traj.len() < 2 {
        return Err(Error::Precondition(
            "continuity residual needs at least two snapshots".into(),
        ));
    }
    let last = traj.len() - 1;
    let idx = traj.index_at(t);
    let (lo, hi, stencil) = if idx == 0 {
        (0, 1, Stencil::Forward)
    } else if idx == last {
        (last - 1, last, Stencil::Backward)
    } else {
        (idx - 1, idx + 1, Stencil::Central)
    };
    let derivative =
        (phi_mean(traj, hi, layer, phi) - phi_mean(traj, lo, layer, phi)) / (traj.times[hi] - traj.times[lo]);

    let state = traj.state(idx);
    let g = risk_gradient(&state, data, loss)?;
    let w = &traj.snapshots[idx][layer];
    let terms: Vec<f64> = (0..w.rows())
        .map(|i| {
            let grad_phi = phi.grad(w.row(i));
            -grad_phi
                .iter()
                .zip(g.layers[layer].row(i))
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .collect();
    let transport = crate::numeric::pairwise_mean(&terms);

    let clipped = traj.reports[traj.steps[lo]..traj.steps[hi]]
        .iter()
        .any(|r| r.clipped[layer]);
    Ok(ResidualReport {
        time: traj.times[idx],
        stencil,
        derivative,
        transport,
        residual: (derivative - transport).abs(),
        boundary: stencil != Stencil::Central,
        clipped,
    })
}
