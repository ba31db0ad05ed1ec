//! Population risk over a finite dataset and its exact reverse-mode gradient.
//!
//! The gradient with respect to `W^(ℓ)` goes through three smooth pieces:
//! the sign surrogate (`∂W̃_ij/∂P_ij = sgn'_ε(P_ij)`), the L¹ scale
//! (`∂β/∂P_ij = P_ij / (n m √(P_ij² + ε²))`), and the adjoint of the
//! zero-mean projection, which is the projection itself. Gradients with
//! respect to earlier layers additionally pass through the Jacobian of the
//! activation quantizer (see [`crate::quant::quant_activation_vjp`]).

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraint::{mean_of, project_array};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forward::{forward_with, output_with, quantize_all, LayerActivations, NetworkState, QuantizedLayer};
use crate::numeric::{pairwise_mean, pairwise_reduce};
use crate::quant::{quant_vjp_raw, sabs_deriv, sgn_deriv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `ℓ(u, y) = ‖u − y‖² / 2`
    #[default]
    Squared,
}

/// Loss together with its growth constants, recorded on the compact domain
/// `‖y‖_∞ ≤ R` rather than globally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// `‖∇₁ℓ(u,y)‖₂ ≤ L₁(1 + ‖u‖₂)`
    pub l1: f64,
    /// Hessian bound in the prediction argument.
    pub l2: f64,
}

impl LossSpec {
    /// Squared loss with constants for targets in `[−R, R]^k`.
    pub fn squared(support: f64, out_dim: usize) -> Self {
        LossSpec {
            kind: LossKind::Squared,
            l1: 1f64.max(support * (out_dim as f64).sqrt()),
            l2: 1.0,
        }
    }

    pub fn value(&self, u: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            LossKind::Squared => 0.5 * u.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
        }
    }

    /// `∂₁ℓ(u, y)`
    pub fn grad(&self, u: &[f64], y: &[f64]) -> Vec<f64> {
        match self.kind {
            LossKind::Squared => u.iter().zip(y).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::squared(1.0, 1)
    }
}

/// `∇_{W^(ℓ)} R_ε` for every layer plus the risk value.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskGradient {
    pub layers: Vec<Array2<f64>>,
    pub risk: f64,
}

impl RiskGradient {
    pub fn is_finite(&self) -> bool {
        self.risk.is_finite() && self.layers.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Euclidean norm of row `i` of layer `l`.
    pub fn row_norm(&self, l: usize, i: usize) -> f64 {
        self.layers[l].row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_data(s: &NetworkState, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::domain("risk over an empty dataset"));
    }
    if data.input_dim() != s.architecture().input_dim() {
        return Err(Error::Shape {
            what: "dataset input dim",
            expected: s.architecture().input_dim(),
            got: data.input_dim(),
        });
    }
    if data.target_dim() != s.architecture().output_dim() {
        return Err(Error::Shape {
            what: "dataset target dim",
            expected: s.architecture().output_dim(),
            got: data.target_dim(),
        });
    }
    Ok(())
}

/// `R_ε(W) = mean over samples of ℓ(f_W(x), y)`.
pub fn risk(s: &NetworkState, data: &Dataset, loss: &LossSpec) -> Result<f64> {
    check_data(s, data)?;
    let layers = quantize_all(s);
    let losses: Vec<f64> = (0..data.len())
        .into_par_iter()
        .map(|i| loss.value(&output_with(&layers, s, data.input(i)), data.target(i)))
        .collect();
    Ok(pairwise_mean(&losses))
}

/// Weight-only factors of the per-entry derivative `∂/∂P_ij`.
struct LayerCache {
    /// `sgn'_ε(P_ij)`
    sign_slope: Array2<f64>,
    /// `∂β/∂P_ij = P_ij / (n m √(P_ij² + ε²))`
    beta_slope: Array2<f64>,
}

fn layer_caches(layers: &[QuantizedLayer], eps: f64) -> Vec<LayerCache> {
    layers
        .iter()
        .map(|q| {
            let nm = q.projected.len() as f64;
            LayerCache {
                sign_slope: q.projected.mapv(|v| sgn_deriv(v, eps)),
                beta_slope: q.projected.mapv(|v| sabs_deriv(v, eps) / nm),
            }
        })
        .collect()
}

/// Per-sample sufficient statistics: for each layer, `g_z ⊗ q` and
/// `Σ_i g_z,i · (W̃q)_i`, plus the loss.
struct SampleGrad {
    outer: Vec<Array2<f64>>,
    beta_coeff: Vec<f64>,
    loss: f64,
}

fn sample_grad(
    layers: &[QuantizedLayer],
    acts: &[LayerActivations],
    s: &NetworkState,
    y: &[f64],
    loss: &LossSpec,
) -> SampleGrad {
    let arch = s.architecture();
    let p = s.smoothing();
    let depth = layers.len();
    let out = &acts[depth - 1].output;
    let mut g_h = loss.grad(out, y);
    let mut outer = vec![Array2::zeros((0, 0)); depth];
    let mut beta_coeff = vec![0.0; depth];
    for l in (0..depth).rev() {
        let a = &acts[l];
        let q = &layers[l];
        let act = arch.activation(l);
        let g_z: Vec<f64> = g_h
            .iter()
            .zip(&a.pre_activation)
            .map(|(g, &z)| g * act.deriv(z))
            .collect();
        beta_coeff[l] = g_z.iter().zip(&a.mixed).map(|(g, m)| g * m).sum();
        let (n, m) = q.w_tilde.dim();
        outer[l] = Array2::from_shape_fn((n, m), |(i, j)| g_z[i] * a.quantized[j]);
        if l > 0 {
            let wt = q.w_tilde.as_slice().unwrap();
            let mut g_q = vec![0.0; m];
            for i in 0..n {
                let gi = q.beta * g_z[i];
                for (j, gq) in g_q.iter_mut().enumerate() {
                    *gq += wt[i * m + j] * gi;
                }
            }
            g_h = quant_vjp_raw(&a.input, &g_q, p);
        }
    }
    SampleGrad {
        outer,
        beta_coeff,
        loss: loss.value(out, y),
    }
}

fn add_samples(mut a: SampleGrad, b: SampleGrad) -> SampleGrad {
    for (x, y) in a.outer.iter_mut().zip(&b.outer) {
        *x += y;
    }
    for (x, y) in a.beta_coeff.iter_mut().zip(&b.beta_coeff) {
        *x += y;
    }
    a.loss += b.loss;
    a
}

/// Exact gradient of the empirical risk.
///
/// Samples are mapped in parallel and reduced with a fixed pairwise tree, so
/// the result does not depend on the number of worker threads.
pub fn risk_gradient(s: &NetworkState, data: &Dataset, loss: &LossSpec) -> Result<RiskGradient> {
    check_data(s, data)?;
    let layers = quantize_all(s);
    let caches = layer_caches(&layers, s.smoothing().epsilon());
    let per_sample: Vec<SampleGrad> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let acts = forward_with(&layers, s.architecture(), s.smoothing(), data.input(i));
            sample_grad(&layers, &acts, s, data.target(i), loss)
        })
        .collect();
    let n_samples = data.len() as f64;
    let total = pairwise_reduce(per_sample, &add_samples).expect("non-empty dataset");
    let grads = layers
        .iter()
        .zip(&caches)
        .enumerate()
        .map(|(l, (q, c))| {
            let mut d_p = &total.outer[l] * &c.sign_slope;
            d_p.mapv_inplace(|v| v * q.beta);
            d_p.scaled_add(total.beta_coeff[l], &c.beta_slope);
            d_p.mapv_inplace(|v| v / n_samples);
            // adjoint of P is P
            project_array(&d_p)
        })
        .collect();
    Ok(RiskGradient {
        layers: grads,
        risk: total.loss / n_samples,
    })
}

/// Ratio diagnostic for the bound `|∂R/∂W_ij| ≤ C_ℓ (1 + E|f_W(X)|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoundReport {
    /// `max_ij |g_ij| / (1 + mean ‖f_W(X)‖₂)` per layer.
    pub ratios: Vec<f64>,
    pub mean_output_norm: f64,
    pub finite: bool,
}

pub fn gradient_bound_check(
    g: &RiskGradient,
    s: &NetworkState,
    data: &Dataset,
    _loss: &LossSpec,
) -> Result<GradientBoundReport> {
    check_data(s, data)?;
    let layers = quantize_all(s);
    let norms: Vec<f64> = (0..data.len())
        .into_par_iter()
        .map(|i| crate::numeric::norm2(&output_with(&layers, s, data.input(i))))
        .collect();
    let mean_output_norm = pairwise_mean(&norms);
    let ratios: Vec<f64> = g
        .layers
        .iter()
        .map(|m| m.iter().fold(0.0f64, |a, v| a.max(v.abs())) / (1.0 + mean_output_norm))
        .collect();
    let finite = g.is_finite() && ratios.iter().all(|r| r.is_finite());
    Ok(GradientBoundReport {
        ratios,
        mean_output_norm,
        finite,
    })
}

/// Per-layer constants `C_ℓ` fitted as the largest ratio over many reports.
pub fn fit_gradient_constants(reports: &[GradientBoundReport]) -> Vec<f64> {
    let depth = reports.first().map_or(0, |r| r.ratios.len());
    (0..depth)
        .map(|l| reports.iter().fold(0.0f64, |m, r| m.max(r.ratios[l])))
        .collect()
}

/// `Ψ(∇R)` computed as a pairwise mean of the entries.
pub fn gradient_layer_mean(g: &RiskGradient, l: usize) -> f64 {
    mean_of(&g.layers[l])
}

/// `Ψ(∇R)` computed as a plain sequential sum divided by `n·m`.
pub fn gradient_layer_mean_by_sum(g: &RiskGradient, l: usize) -> f64 {
    let m = &g.layers[l];
    m.iter().sum::<f64>() / m.len() as f64
}
