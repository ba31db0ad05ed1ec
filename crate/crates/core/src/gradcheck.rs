//! Central finite-difference oracle for the risk gradient.
//!
//! Only [`risk`] is used here, never the reverse-mode code, so the two
//! routes stay independent.

use ndarray::Array2;

use crate::backprop::{risk, LossSpec, RiskGradient};
use crate::dataset::Dataset;
use crate::error::Result;
use crate::forward::NetworkState;

/// Relative step: `h = REL_STEP · max(1, |W_ij|)`.
pub const REL_STEP: f64 = 1e-6;

/// Central differences of the risk for every weight entry.
pub fn finite_difference_gradient(s: &NetworkState, data: &Dataset, loss: &LossSpec) -> Result<Vec<Array2<f64>>> {
    let mut out = Vec::with_capacity(s.depth());
    for l in 0..s.depth() {
        let w = s.weight(l);
        let (n, m) = (w.rows(), w.cols());
        let mut g = Array2::zeros((n, m));
        for i in 0..n {
            for j in 0..m {
                let orig = w.as_array()[[i, j]];
                let h = REL_STEP * orig.abs().max(1.0);
                let mut plus = s.clone();
                plus.weights_mut()[l].as_array_mut()[[i, j]] = orig + h;
                let mut minus = s.clone();
                minus.weights_mut()[l].as_array_mut()[[i, j]] = orig - h;
                // use the realised step to cancel representation error in orig ± h
                let step = (orig + h) - (orig - h);
                g[[i, j]] = (risk(&plus, data, loss)? - risk(&minus, data, loss)?) / step;
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Agreement thresholds between analytic and numerical gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckTolerance {
    /// Maximum relative error `|a − n| / |a|`.
    pub rel: f64,
    /// Entries with `|a|` below this are compared absolutely.
    pub small: f64,
    pub abs: f64,
}

impl Default for GradCheckTolerance {
    fn default() -> Self {
        GradCheckTolerance {
            rel: 1e-5,
            small: 1e-10,
            abs: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error_small: f64,
    pub entries: usize,
    /// `(layer, row, col, analytic, numeric)` of every failing entry.
    pub failures: Vec<(usize, usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn compare_gradients(
    analytic: &RiskGradient,
    numeric: &[Array2<f64>],
    tol: &GradCheckTolerance,
) -> GradCheckReport {
    let mut rep = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error_small: 0.0,
        entries: 0,
        failures: Vec::new(),
    };
    for (l, (a, n)) in analytic.layers.iter().zip(numeric).enumerate() {
        for ((i, j), &av) in a.indexed_iter() {
            let nv = n[[i, j]];
            rep.entries += 1;
            let ok = if av.abs() < tol.small {
                let e = (av - nv).abs();
                rep.max_abs_error_small = rep.max_abs_error_small.max(e);
                e <= tol.abs
            } else {
                let e = (av - nv).abs() / av.abs();
                rep.max_rel_error = rep.max_rel_error.max(e);
                e <= tol.rel
            };
            if !ok {
                rep.failures.push((l, i, j, av, nv));
            }
        }
    }
    rep
}
