//! Layer-mean functional `Ψ`, zero-mean projection `P` and shift isometry `T_c`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Dense latent weight matrix `W ∈ ℝ^{n×m}` (rows are particles).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(Array2<f64>);

impl WeightMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (n, m) = entries.dim();
        if n == 0 || m == 0 {
            return Err(Error::domain("weight matrix must be non-empty"));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("weight matrix entries must be finite"));
        }
        Ok(WeightMatrix(entries.as_standard_layout().into_owned()))
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let arr =
            Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::domain(format!("bad weight shape: {e}")))?;
        WeightMatrix::new(arr)
    }

    pub fn constant(rows: usize, cols: usize, c: f64) -> Result<Self> {
        WeightMatrix::new(Array2::from_elem((rows, cols), c))
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        WeightMatrix::constant(rows, cols, 0.0)
    }

    pub(crate) fn from_array_unchecked(entries: Array2<f64>) -> Self {
        WeightMatrix(entries.as_standard_layout().into_owned())
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub(crate) fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("standard layout")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.cols();
        &self.as_slice()[i * m..(i + 1) * m]
    }

    /// `‖W‖_∞ = max |W_ij|`.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &WeightMatrix) -> f64 {
        frobenius_inner(&self.0, &other.0)
    }
}

/// Frobenius inner product `⟨A, B⟩`, summed pairwise.
pub fn frobenius_inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let prods: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
    pairwise_sum(&prods)
}

/// `Ψ(W) = α(W) = (1/(n·m))·Σ W_ij`.
pub fn layer_mean(w: &WeightMatrix) -> f64 {
    mean_of(&w.0)
}

pub(crate) fn mean_of(a: &Array2<f64>) -> f64 {
    match a.as_slice() {
        Some(s) => pairwise_sum(s) / s.len() as f64,
        None => {
            let v: Vec<f64> = a.iter().copied().collect();
            pairwise_sum(&v) / v.len() as f64
        }
    }
}

/// Differences are taken from the first entry before averaging, so a
/// constant matrix projects to exact zeros and an exactly representable
/// shift `W + c·1` projects to the same matrix as `W`.
pub(crate) fn project_array(a: &Array2<f64>) -> Array2<f64> {
    let anchor = match a.iter().next() {
        Some(&v) => v,
        None => return a.clone(),
    };
    let diffs = a.mapv(|v| v - anchor);
    let alpha = mean_of(&diffs);
    diffs.mapv(|v| v - alpha)
}

/// `P(W) = W − α(W)·1`.
pub fn zero_mean_project(w: &WeightMatrix) -> WeightMatrix {
    WeightMatrix(project_array(&w.0))
}

/// Tolerance for "zero mean" used by [`shift_isometry`]: `1e−12·n·m`.
pub fn zero_mean_tolerance(w: &WeightMatrix) -> f64 {
    1e-12 * w.len() as f64
}

/// `T_c(W) = W + c·1`, defined on the zero-mean hyperplane.
pub fn shift_isometry(w: &WeightMatrix, c: f64) -> Result<WeightMatrix> {
    let alpha = layer_mean(w);
    if alpha.abs() > zero_mean_tolerance(w) {
        return Err(Error::Precondition(format!(
            "shift_isometry needs a zero-mean matrix, layer mean is {alpha:e}"
        )));
    }
    if !c.is_finite() {
        return Err(Error::domain("shift must be finite"));
    }
    Ok(WeightMatrix(w.0.mapv(|v| v + c)))
}
