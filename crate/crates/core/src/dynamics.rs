//! Clamped full-batch gradient descent on the latent weights.
//!
//! `W(k+1) = Π_{B_{M⋆}}(W(k) − η·∇R_ε(W(k)))` where the projection clips
//! each entry to `[−M⋆, M⋆]`. Rows of each `W^(ℓ)` are the particles whose
//! empirical measures the mean-field analysis tracks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backprop::{risk_gradient, LossSpec, RiskGradient};
use crate::constraint::{layer_mean, mean_of, WeightMatrix};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forward::{Architecture, NetworkState};
use crate::quant::SmoothingParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    /// Step size η.
    pub eta: f64,
    /// Horizon T; the run takes `⌊T/η⌋` steps.
    pub horizon: f64,
    /// Clamp radius M⋆.
    pub clamp: f64,
    /// Initialisation scale M ≤ M⋆.
    pub init_scale: f64,
    pub seed: u64,
    /// Record a snapshot every `stride` steps (the last step is always kept).
    pub stride: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::domain(format!("step size must be positive, got {}", self.eta)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::domain(format!(
                "horizon must be finite and non-negative, got {}",
                self.horizon
            )));
        }
        if !(self.clamp > 0.0 && self.clamp.is_finite()) {
            return Err(Error::domain(format!("clamp M* must be positive, got {}", self.clamp)));
        }
        if !(self.init_scale >= 0.0 && self.init_scale <= self.clamp) {
            return Err(Error::domain(format!(
                "init scale M must lie in [0, M*], got M = {} with M* = {}",
                self.init_scale, self.clamp
            )));
        }
        if self.stride == 0 {
            return Err(Error::domain("record stride must be positive"));
        }
        Ok(())
    }

    /// Number of gradient steps, `⌊T/η⌋` (with a relative guard against
    /// `T/η` landing just below an integer).
    pub fn num_steps(&self) -> usize {
        (self.horizon / self.eta * (1.0 + 1e-12)).floor() as usize
    }
}

/// I.i.d. uniform entries on `[−M, M]`.
///
/// Row `i` of layer `ℓ` is drawn from its own ChaCha stream, column by
/// column, so a narrower network is an exact prefix (rows and columns) of a
/// wider one with the same seed.
pub fn init_weights(arch: &Architecture, smoothing: &SmoothingParams, cfg: &RunConfig) -> Result<NetworkState> {
    cfg.validate()?;
    let m_scale = cfg.init_scale;
    let weights = (0..arch.depth())
        .map(|l| {
            let (n, m) = arch.layer_shape(l);
            let mut data = Vec::with_capacity(n * m);
            for i in 0..n {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(((l as u64) << 32) | i as u64);
                for _ in 0..m {
                    let u: f64 = rng.gen();
                    data.push(m_scale * (2.0 * u - 1.0));
                }
            }
            WeightMatrix::from_rows(n, m, data)
        })
        .collect::<Result<Vec<_>>>()?;
    NetworkState::new(arch.clone(), weights, *smoothing)
}

/// What happened during one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub risk: f64,
    /// Whether the clamp changed any entry, per layer.
    pub clipped: Vec<bool>,
    /// `Ψ(W(k))`
    pub mean_before: Vec<f64>,
    /// `Ψ(W(k+1))` after the clamp.
    pub mean_after: Vec<f64>,
    /// `Ψ(∇R_ε(W(k)))`
    pub gradient_mean: Vec<f64>,
    /// `Ψ(W(k) − η∇R) − Ψ(W(k))`, before the clamp.
    pub pre_clamp_drift: Vec<f64>,
    /// `Ψ(W(k+1)) − (Ψ(W(k)) − η·Ψ(∇R))`; zero up to rounding on unclipped layers.
    pub identity_residual: Vec<f64>,
    /// `max_i ‖∇_{w_i} R‖₂` per layer.
    pub velocity_max_row: Vec<f64>,
    /// `(mean_i ‖∇_{w_i} R‖₂²)^{1/2}` per layer.
    pub velocity_rms: Vec<f64>,
}

impl StepReport {
    pub fn any_clipped(&self) -> bool {
        self.clipped.iter().any(|&c| c)
    }
}

fn state_dump(s: &NetworkState) -> String {
    let mut out = String::new();
    for (l, w) in s.weights().iter().enumerate() {
        out.push_str(&format!(
            "layer {}: {}x{} max|W| = {:e} mean = {:e}; ",
            l + 1,
            w.rows(),
            w.cols(),
            w.max_abs(),
            layer_mean(w)
        ));
    }
    out
}

fn row_norms(g: &Array2<f64>) -> Vec<f64> {
    g.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// Applies one clamped step given a precomputed gradient.
pub fn apply_step(s: &NetworkState, g: &RiskGradient, cfg: &RunConfig) -> Result<(NetworkState, StepReport)> {
    if !g.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite gradient; state: {}",
            state_dump(s)
        )));
    }
    let depth = s.depth();
    let mut next = s.clone();
    let mut rep = StepReport {
        risk: g.risk,
        clipped: Vec::with_capacity(depth),
        mean_before: Vec::with_capacity(depth),
        mean_after: Vec::with_capacity(depth),
        gradient_mean: Vec::with_capacity(depth),
        pre_clamp_drift: Vec::with_capacity(depth),
        identity_residual: Vec::with_capacity(depth),
        velocity_max_row: Vec::with_capacity(depth),
        velocity_rms: Vec::with_capacity(depth),
    };
    for (l, w) in next.weights_mut().iter_mut().enumerate() {
        let grad = &g.layers[l];
        let before = layer_mean(w);
        let psi_g = mean_of(grad);
        let arr = w.as_array_mut();
        arr.scaled_add(-cfg.eta, grad);
        let drift = mean_of(arr) - before;
        let mut clipped = false;
        arr.mapv_inplace(|v| {
            if v > cfg.clamp {
                clipped = true;
                cfg.clamp
            } else if v < -cfg.clamp {
                clipped = true;
                -cfg.clamp
            } else {
                v
            }
        });
        let after = mean_of(arr);
        let norms = row_norms(grad);
        let max_row = norms.iter().fold(0.0f64, |m, &v| m.max(v));
        let rms = (norms.iter().map(|v| v * v).sum::<f64>() / norms.len() as f64).sqrt();
        rep.clipped.push(clipped);
        rep.mean_before.push(before);
        rep.mean_after.push(after);
        rep.gradient_mean.push(psi_g);
        rep.pre_clamp_drift.push(drift);
        rep.identity_residual.push(after - (before - cfg.eta * psi_g));
        rep.velocity_max_row.push(max_row);
        rep.velocity_rms.push(rms);
    }
    Ok((next, rep))
}

/// `W ← Π_{B_{M⋆}}(W − η∇R_ε(W))`.
pub fn gd_step(
    s: &NetworkState,
    data: &Dataset,
    loss: &LossSpec,
    cfg: &RunConfig,
) -> Result<(NetworkState, StepReport)> {
    let g = risk_gradient(s, data, loss)?;
    apply_step(s, &g, cfg)
}

/// Recorded trajectory of all layers' latent weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTrajectory {
    pub architecture: Architecture,
    pub smoothing: SmoothingParams,
    pub config: RunConfig,
    /// Step indices `k` of the snapshots.
    pub steps: Vec<usize>,
    /// `t = k·η` of the snapshots.
    pub times: Vec<f64>,
    /// Weights of every layer at each snapshot.
    pub snapshots: Vec<Vec<WeightMatrix>>,
    /// `α^(ℓ)` at each snapshot.
    pub layer_means: Vec<Vec<f64>>,
    /// One report per step taken (not only recorded ones).
    pub reports: Vec<StepReport>,
}

impl ParticleTrajectory {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn state(&self, idx: usize) -> NetworkState {
        NetworkState::new(self.architecture.clone(), self.snapshots[idx].clone(), self.smoothing)
            .expect("snapshots keep the architecture")
    }

    /// Latest snapshot with time ≤ `t` (the piecewise-constant interpolant).
    pub fn index_at(&self, t: f64) -> usize {
        let tol = 1e-9 * self.config.eta;
        self.times.iter().rposition(|&s| s <= t + tol).unwrap_or(0)
    }

    /// Snapshot index of step `k`, if recorded.
    pub fn index_of_step(&self, k: usize) -> Option<usize> {
        self.steps.binary_search(&k).ok()
    }

    /// `sup_k max_i ‖∇_{w_i} R‖` for a layer over all steps taken.
    pub fn velocity_sup(&self, layer: usize) -> f64 {
        self.reports
            .iter()
            .fold(0.0f64, |m, r| m.max(r.velocity_max_row[layer]))
    }

    /// `sup_k` of the root-mean-square row velocity for a layer.
    pub fn velocity_rms_sup(&self, layer: usize) -> f64 {
        self.reports.iter().fold(0.0f64, |m, r| m.max(r.velocity_rms[layer]))
    }

    pub fn clip_events(&self) -> usize {
        self.reports.iter().filter(|r| r.any_clipped()).count()
    }
}

/// Runs the dynamics from `initial` for `⌊T/η⌋` steps.
pub fn run_from(initial: NetworkState, data: &Dataset, loss: &LossSpec, cfg: &RunConfig) -> Result<ParticleTrajectory> {
    cfg.validate()?;
    let k_max = cfg.num_steps();
    let mut traj = ParticleTrajectory {
        architecture: initial.architecture().clone(),
        smoothing: *initial.smoothing(),
        config: *cfg,
        steps: Vec::new(),
        times: Vec::new(),
        snapshots: Vec::new(),
        layer_means: Vec::new(),
        reports: Vec::with_capacity(k_max),
    };
    let record = |traj: &mut ParticleTrajectory, k: usize, s: &NetworkState| {
        traj.steps.push(k);
        traj.times.push(k as f64 * cfg.eta);
        traj.layer_means.push(s.weights().iter().map(layer_mean).collect());
        traj.snapshots.push(s.weights().to_vec());
    };
    let mut state = initial;
    record(&mut traj, 0, &state);
    for k in 1..=k_max {
        let (next, rep) = gd_step(&state, data, loss, cfg)?;
        traj.reports.push(rep);
        state = next;
        if k % cfg.stride == 0 || k == k_max {
            record(&mut traj, k, &state);
        }
    }
    Ok(traj)
}

/// Initialises with [`init_weights`] and runs the dynamics.
pub fn run_trajectory(
    arch: &Architecture,
    smoothing: &SmoothingParams,
    data: &Dataset,
    loss: &LossSpec,
    cfg: &RunConfig,
) -> Result<ParticleTrajectory> {
    let s = init_weights(arch, smoothing, cfg)?;
    run_from(s, data, loss, cfg)
}

/// Finite-particle velocity proxy `v(w_i) = −∇_{w_i} R_ε` for row `i` of
/// layer `layer` (0-based).
pub fn velocity_field(s: &NetworkState, layer: usize, row: usize, data: &Dataset, loss: &LossSpec) -> Result<Vec<f64>> {
    if layer >= s.depth() {
        return Err(Error::domain(format!(
            "layer index {layer} out of range (depth {})",
            s.depth()
        )));
    }
    if row >= s.weight(layer).rows() {
        return Err(Error::domain(format!(
            "row index {row} out of range (layer has {} rows)",
            s.weight(layer).rows()
        )));
    }
    let g = risk_gradient(s, data, loss)?;
    Ok(g.layers[layer].row(row).iter().map(|v| -v).collect())
}

/// Velocity of every row of one layer from a precomputed gradient.
pub fn layer_velocities(g: &RiskGradient, layer: usize) -> Vec<Vec<f64>> {
    g.layers[layer]
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| -v).collect())
        .collect()
}
