//! Smoothed BitLinear layers and the L-layer forward recursion.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraint::{project_array, WeightMatrix};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::quant::{quant_raw, sabs, sgn, SmoothingParams};

/// Componentwise activation σ^(ℓ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

/// Constants `(A, C, D)` with `|σ(z)| ≤ A(1+|z|)`, `‖σ'‖_∞ ≤ C`, `‖σ''‖_∞ ≤ D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationConstants {
    pub growth: f64,
    pub lipschitz: f64,
    pub curvature: f64,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn constants(self) -> ActivationConstants {
        match self {
            // sup |tanh''| = 4/(3√3), attained at tanh(z) = ±1/√3
            Activation::Tanh => ActivationConstants {
                growth: 1.0,
                lipschitz: 1.0,
                curvature: 4.0 / (3.0 * 3f64.sqrt()),
            },
            Activation::Identity => ActivationConstants {
                growth: 1.0,
                lipschitz: 1.0,
                curvature: 0.0,
            },
        }
    }
}

/// Layer dimensions: layer ℓ maps `ℝ^{m_ℓ} → ℝ^{n_ℓ}` with `m_1 = d` and
/// `m_ℓ = n_{ℓ−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    input_dim: usize,
    widths: Vec<usize>,
    activations: Vec<Activation>,
}

impl Architecture {
    pub fn new(input_dim: usize, widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::domain("input dimension must be positive"));
        }
        if widths.is_empty() {
            return Err(Error::domain("network needs at least one layer"));
        }
        if widths.contains(&0) {
            return Err(Error::domain("layer widths must be positive"));
        }
        if activations.len() != widths.len() {
            return Err(Error::Shape {
                what: "activations per layer",
                expected: widths.len(),
                got: activations.len(),
            });
        }
        Ok(Architecture {
            input_dim,
            widths,
            activations,
        })
    }

    /// Same activation on every layer.
    pub fn uniform(input_dim: usize, widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let acts = vec![activation; widths.len()];
        Architecture::new(input_dim, widths, acts)
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// `(n_ℓ, m_ℓ)` for layer index `l` (0-based).
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        let m = if l == 0 { self.input_dim } else { self.widths[l - 1] };
        (self.widths[l], m)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self, l: usize) -> Activation {
        self.activations[l]
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }
}

/// Latent weights of every layer plus the fixed smoothing parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    arch: Architecture,
    weights: Vec<WeightMatrix>,
    smoothing: SmoothingParams,
}

impl NetworkState {
    pub fn new(arch: Architecture, weights: Vec<WeightMatrix>, smoothing: SmoothingParams) -> Result<Self> {
        if weights.len() != arch.depth() {
            return Err(Error::Shape {
                what: "number of weight matrices",
                expected: arch.depth(),
                got: weights.len(),
            });
        }
        for (l, w) in weights.iter().enumerate() {
            let (n, m) = arch.layer_shape(l);
            if w.rows() != n {
                return Err(Error::Shape {
                    what: "weight rows",
                    expected: n,
                    got: w.rows(),
                });
            }
            if w.cols() != m {
                return Err(Error::Shape {
                    what: "weight cols",
                    expected: m,
                    got: w.cols(),
                });
            }
        }
        Ok(NetworkState {
            arch,
            weights,
            smoothing,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn weights(&self) -> &[WeightMatrix] {
        &self.weights
    }

    pub fn weight(&self, l: usize) -> &WeightMatrix {
        &self.weights[l]
    }

    pub fn smoothing(&self) -> &SmoothingParams {
        &self.smoothing
    }

    pub fn with_smoothing(mut self, smoothing: SmoothingParams) -> Self {
        self.smoothing = smoothing;
        self
    }

    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [WeightMatrix] {
        &mut self.weights
    }

    pub fn max_abs(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, w| m.max(w.max_abs()))
    }
}

/// Per-layer quantities that depend on the weights only: `P(W)`, `W̃_ε`, `β_ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub projected: Array2<f64>,
    pub w_tilde: Array2<f64>,
    pub beta: f64,
}

impl QuantizedLayer {
    pub fn new(w: &WeightMatrix, eps: f64) -> Self {
        let projected = project_array(w.as_array());
        let w_tilde = projected.mapv(|v| sgn(v, eps));
        let beta = beta_from_projected(&projected, eps);
        QuantizedLayer {
            projected,
            w_tilde,
            beta,
        }
    }
}

fn beta_from_projected(projected: &Array2<f64>, eps: f64) -> f64 {
    let vals: Vec<f64> = projected.iter().map(|&v| sabs(v, eps)).collect();
    crate::numeric::pairwise_mean(&vals)
}

/// `β_ε(W) = (1/(n·m))·Σ |P(W)_ij|_ε`.
pub fn beta_scale(w: &WeightMatrix, p: &SmoothingParams) -> f64 {
    beta_from_projected(&project_array(w.as_array()), p.epsilon())
}

/// `W̃_ε = sgn_ε(P(W))`, entrywise in `(−1, 1)`.
pub fn quantize_weights(w: &WeightMatrix, p: &SmoothingParams) -> WeightMatrix {
    let eps = p.epsilon();
    WeightMatrix::from_array_unchecked(project_array(w.as_array()).mapv(|v| sgn(v, eps)))
}

/// Activations of one layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    /// `h^(ℓ−1)`
    pub input: Vec<f64>,
    /// `Quant_ε(h^(ℓ−1))`
    pub quantized: Vec<f64>,
    /// `W̃·Quant_ε(h^(ℓ−1))`, before scaling by β.
    pub mixed: Vec<f64>,
    /// `β·W̃·Quant_ε(h^(ℓ−1))`
    pub pre_activation: Vec<f64>,
    /// `h^(ℓ)`
    pub output: Vec<f64>,
}

/// Everything produced by one forward pass, kept for reverse-mode reuse.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub layers: Vec<QuantizedLayer>,
    pub activations: Vec<LayerActivations>,
}

pub(crate) fn quantize_all(s: &NetworkState) -> Vec<QuantizedLayer> {
    let eps = s.smoothing.epsilon();
    s.weights.iter().map(|w| QuantizedLayer::new(w, eps)).collect()
}

fn layer_apply(x: &[f64], q: &QuantizedLayer, p: &SmoothingParams, act: Activation) -> LayerActivations {
    let quantized = quant_raw(x, p);
    let (n, m) = q.w_tilde.dim();
    let wt = q.w_tilde.as_slice().expect("standard layout");
    let mut mixed = Vec::with_capacity(n);
    for i in 0..n {
        let row = &wt[i * m..(i + 1) * m];
        mixed.push(row.iter().zip(&quantized).map(|(a, b)| a * b).sum::<f64>());
    }
    let pre_activation: Vec<f64> = mixed.iter().map(|v| q.beta * v).collect();
    let output = pre_activation.iter().map(|&z| act.apply(z)).collect();
    LayerActivations {
        input: x.to_vec(),
        quantized,
        mixed,
        pre_activation,
        output,
    }
}

pub(crate) fn forward_with(
    layers: &[QuantizedLayer],
    arch: &Architecture,
    p: &SmoothingParams,
    x: &[f64],
) -> Vec<LayerActivations> {
    let mut acts = Vec::with_capacity(layers.len());
    let mut h = x.to_vec();
    for (l, q) in layers.iter().enumerate() {
        let a = layer_apply(&h, q, p, arch.activation(l));
        h = a.output.clone();
        acts.push(a);
    }
    acts
}

/// `h^(ℓ)(x) = σ(β_ε(W)·W̃_ε·Quant_ε(x))` for a single layer.
pub fn layer_forward(x: &[f64], w: &WeightMatrix, p: &SmoothingParams, act: Activation) -> Result<Vec<f64>> {
    if x.len() != w.cols() {
        return Err(Error::Shape {
            what: "layer input",
            expected: w.cols(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("layer input must be finite"));
    }
    let q = QuantizedLayer::new(w, p.epsilon());
    Ok(layer_apply(x, &q, p, act).output)
}

/// `f_W(x) = h^(L)(x)` and the full trace.
pub fn network_forward(x: &[f64], s: &NetworkState) -> Result<(Vec<f64>, ForwardTrace)> {
    check_input(x, s)?;
    let layers = quantize_all(s);
    let activations = forward_with(&layers, &s.arch, &s.smoothing, x);
    let out = activations.last().unwrap().output.clone();
    Ok((out, ForwardTrace { layers, activations }))
}

/// Output only, without keeping a trace.
pub fn network_output(x: &[f64], s: &NetworkState) -> Result<Vec<f64>> {
    check_input(x, s)?;
    let layers = quantize_all(s);
    Ok(output_with(&layers, s, x))
}

pub(crate) fn output_with(layers: &[QuantizedLayer], s: &NetworkState, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (l, q) in layers.iter().enumerate() {
        h = layer_apply(&h, q, &s.smoothing, s.arch.activation(l)).output;
    }
    h
}

fn check_input(x: &[f64], s: &NetworkState) -> Result<()> {
    if x.len() != s.arch.input_dim() {
        return Err(Error::Shape {
            what: "network input",
            expected: s.arch.input_dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("network input must be finite"));
    }
    Ok(())
}

/// The recursive forward-Lipschitz bound `L^(L)`:
///
/// `L^(ℓ) = C_ℓ·max{Q_b + C_β·Q_b/ε + C_β·√(n_ℓ m_ℓ)·(Q_b/ε)·L^(ℓ−1), C_β·√(n_ℓ m_ℓ)·(Q_b/ε)·L^(ℓ−1)}`
/// with `L^(0) = 0` and `C_β = √((2M⋆)² + ε²)`.
pub fn analytic_forward_lipschitz(arch: &Architecture, p: &SmoothingParams, m_star: f64) -> f64 {
    let eps = p.epsilon();
    let qb = p.q_b();
    let c_beta = ((2.0 * m_star).powi(2) + eps * eps).sqrt();
    let mut prev = 0.0;
    for l in 0..arch.depth() {
        let (n, m) = arch.layer_shape(l);
        let c = arch.activation(l).constants().lipschitz;
        let carry = c_beta * ((n * m) as f64).sqrt() * qb / eps * prev;
        let own = qb + c_beta * qb / eps + carry;
        prev = c * own.max(carry);
    }
    prev
}

/// Settings for [`estimate_forward_lipschitz`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzProbe {
    pub trials: usize,
    /// Frobenius radius of the joint perturbation over all layers.
    pub radius: f64,
    /// When set, perturbed weights are clamped back into `‖·‖_∞ ≤ M⋆`.
    pub clamp: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    pub estimate: f64,
    /// Running maximum after each trial.
    pub running_max: Vec<f64>,
    /// Trials whose perturbation vanished (identical weights).
    pub skipped: usize,
}

/// Empirical `max ‖f_W(x) − f_Ŵ(x)‖₂ / Σ_ℓ ‖W^(ℓ) − Ŵ^(ℓ)‖_F` over random
/// inputs from the dataset and random perturbations on a Frobenius sphere.
pub fn estimate_forward_lipschitz(
    s: &NetworkState,
    data: &Dataset,
    probe: &LipschitzProbe,
) -> Result<LipschitzEstimate> {
    if probe.trials == 0 {
        return Err(Error::domain("lipschitz probe needs at least one trial"));
    }
    if data.is_empty() {
        return Err(Error::domain("lipschitz probe needs a non-empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let base_layers = quantize_all(s);
    let mut best = 0.0f64;
    let mut running_max = Vec::with_capacity(probe.trials);
    let mut skipped = 0;
    for _ in 0..probe.trials {
        let idx = rng.gen_range(0..data.len());
        let x = data.input(idx);
        let mut dirs: Vec<Array2<f64>> = s
            .weights()
            .iter()
            .map(|w| Array2::from_shape_fn((w.rows(), w.cols()), |_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let norm = dirs.iter().flat_map(|d| d.iter()).map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { probe.radius / norm } else { 0.0 };
        let mut perturbed = Vec::with_capacity(dirs.len());
        let mut denom = 0.0;
        for (w, d) in s.weights().iter().zip(dirs.iter_mut()) {
            let mut hat = w.as_array() + &d.mapv(|v| v * scale);
            if let Some(m) = probe.clamp {
                hat.mapv_inplace(|v| v.clamp(-m, m));
            }
            denom += (&hat - w.as_array()).iter().map(|v| v * v).sum::<f64>().sqrt();
            perturbed.push(WeightMatrix::from_array_unchecked(hat));
        }
        if denom == 0.0 {
            skipped += 1;
            running_max.push(best);
            continue;
        }
        let other = NetworkState::new(s.arch.clone(), perturbed, s.smoothing)?;
        let f0 = output_with(&base_layers, s, x);
        let f1 = output_with(&quantize_all(&other), &other, x);
        let diff = f0.iter().zip(&f1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        best = best.max(diff / denom);
        running_max.push(best);
    }
    Ok(LipschitzEstimate {
        estimate: best,
        running_max,
        skipped,
    })
}
