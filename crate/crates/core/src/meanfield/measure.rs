use ndarray::Array2;

use crate::error::{Error, Result};
use crate::forward::NetworkState;

/// Uniform empirical measure `(1/n)·Σ δ_{w_i}` on `ℝ^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Array2<f64>,
}

impl EmpiricalMeasure {
    /// One atom per row of `atoms`.
    pub fn new(atoms: Array2<f64>) -> Result<Self> {
        if atoms.nrows() == 0 || atoms.ncols() == 0 {
            return Err(Error::domain(
                "empirical measure needs at least one atom of positive dimension",
            ));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("empirical measure atoms must be finite"));
        }
        Ok(EmpiricalMeasure {
            atoms: atoms.as_standard_layout().into_owned(),
        })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, |p| p.len());
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::domain("all atoms must share one dimension"));
        }
        let data = points.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((points.len(), dim), data).map_err(|e| Error::domain(e.to_string()))?;
        EmpiricalMeasure::new(arr)
    }

    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        let m = self.dim();
        &self.atoms.as_slice().unwrap()[i * m..(i + 1) * m]
    }

    pub fn atoms(&self) -> &Array2<f64> {
        &self.atoms
    }

    /// Mass of each atom.
    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Distinct support points with their total mass.
    pub fn support(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
        for i in 0..self.len() {
            let a = self.atom(i);
            match out.iter_mut().find(|(p, _)| p.as_slice() == a) {
                Some((_, w)) => *w += self.weight(),
                None => out.push((a.to_vec(), self.weight())),
            }
        }
        out
    }

    /// `∫ φ dμ = (1/n)·Σ φ(w_i)`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let vals: Vec<f64> = (0..self.len()).map(|i| f(self.atom(i))).collect();
        crate::numeric::pairwise_mean(&vals)
    }

    pub fn max_abs(&self) -> f64 {
        self.atoms.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Row-wise empirical measure of layer `layer` (0-based).
pub fn empirical_measure(s: &NetworkState, layer: usize) -> Result<EmpiricalMeasure> {
    if layer >= s.depth() {
        return Err(Error::domain(format!(
            "layer index {layer} out of range (depth {})",
            s.depth()
        )));
    }
    EmpiricalMeasure::new(s.weight(layer).as_array().clone())
}

/// C¹ test functions with closed-form gradients.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `exp(−‖w − c‖² / (2 s²))`
    Gaussian { center: Vec<f64>, width: f64 },
    /// `(1 − r²)²` for `r = ‖w − c‖/ρ < 1`, zero outside.
    Spline { center: Vec<f64>, radius: f64 },
    /// `a₀ + Σ b_j (w_j − c_j) + ½ Σ q_j (w_j − c_j)²`
    Quadratic {
        center: Vec<f64>,
        constant: f64,
        linear: Vec<f64>,
        diagonal: Vec<f64>,
    },
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        match self {
            TestFunction::Gaussian { center, .. }
            | TestFunction::Spline { center, .. }
            | TestFunction::Quadratic { center, .. } => center.len(),
        }
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        match self {
            TestFunction::Gaussian { center, width } => {
                let r2 = dist2(w, center);
                (-r2 / (2.0 * width * width)).exp()
            }
            TestFunction::Spline { center, radius } => {
                let r2 = dist2(w, center) / (radius * radius);
                if r2 < 1.0 {
                    (1.0 - r2) * (1.0 - r2)
                } else {
                    0.0
                }
            }
            TestFunction::Quadratic {
                center,
                constant,
                linear,
                diagonal,
            } => {
                let mut v = *constant;
                for j in 0..center.len() {
                    let d = w[j] - center[j];
                    v += linear[j] * d + 0.5 * diagonal[j] * d * d;
                }
                v
            }
        }
    }

    pub fn grad(&self, w: &[f64]) -> Vec<f64> {
        match self {
            TestFunction::Gaussian { center, width } => {
                let phi = self.value(w);
                let s2 = width * width;
                w.iter().zip(center).map(|(a, c)| -(a - c) / s2 * phi).collect()
            }
            TestFunction::Spline { center, radius } => {
                let rho2 = radius * radius;
                let r2 = dist2(w, center) / rho2;
                if r2 < 1.0 {
                    w.iter()
                        .zip(center)
                        .map(|(a, c)| -4.0 * (1.0 - r2) * (a - c) / rho2)
                        .collect()
                } else {
                    vec![0.0; w.len()]
                }
            }
            TestFunction::Quadratic {
                center,
                linear,
                diagonal,
                ..
            } => (0..center.len())
                .map(|j| linear[j] + diagonal[j] * (w[j] - center[j]))
                .collect(),
        }
    }

    /// `‖φ‖_∞` when finite.
    pub fn sup_norm(&self) -> Option<f64> {
        match self {
            TestFunction::Gaussian { .. } | TestFunction::Spline { .. } => Some(1.0),
            TestFunction::Quadratic {
                linear,
                diagonal,
                constant,
                ..
            } => {
                if linear.iter().chain(diagonal).all(|&v| v == 0.0) {
                    Some(constant.abs())
                } else {
                    None
                }
            }
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::WeightMatrix;
    use crate::forward::{Activation, Architecture};
    use crate::quant::SmoothingParams;

    #[test]
    fn identical_rows_collapse_to_one_support_point() {
        let arch = Architecture::uniform(2, vec![3, 1], Activation::Tanh).unwrap();
        let w1 = WeightMatrix::from_rows(3, 2, vec![0.5, -0.25, 0.5, -0.25, 0.5, -0.25]).unwrap();
        let w2 = WeightMatrix::from_rows(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let s = NetworkState::new(arch, vec![w1, w2], SmoothingParams::new(0.5, 2, 0.5).unwrap()).unwrap();
        let mu = empirical_measure(&s, 0).unwrap();
        assert_eq!(mu.len(), 3);
        let sup = mu.support();
        assert_eq!(sup.len(), 1);
        assert!((sup[0].1 - 1.0).abs() < 1e-15);
        // single row: Dirac at that row
        let nu = empirical_measure(&s, 1).unwrap();
        assert_eq!(nu.len(), 1);
        assert_eq!(nu.atom(0), &[0.1, 0.2, 0.3]);
        assert!(empirical_measure(&s, 2).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fns = [
            TestFunction::Gaussian {
                center: vec![0.1, -0.2],
                width: 0.7,
            },
            TestFunction::Spline {
                center: vec![0.0, 0.3],
                radius: 1.5,
            },
            TestFunction::Quadratic {
                center: vec![0.2, 0.1],
                constant: 0.3,
                linear: vec![1.0, -2.0],
                diagonal: vec![0.5, 3.0],
            },
        ];
        let w = [0.4, -0.1];
        for f in &fns {
            let g = f.grad(&w);
            for j in 0..2 {
                let h = 1e-6;
                let mut a = w;
                let mut b = w;
                a[j] += h;
                b[j] -= h;
                let n = (f.value(&a) - f.value(&b)) / (2.0 * h);
                assert!((g[j] - n).abs() < 1e-8, "{f:?} j={j}");
            }
        }
    }
}
