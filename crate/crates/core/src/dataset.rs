//! Finite, compactly supported datasets standing in for the data law π.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::WeightMatrix;
use crate::error::{Error, Result};
use crate::forward::{network_output, Architecture, NetworkState};
use crate::quant::SmoothingParams;

/// Sample pairs `(X, Y)` with `‖X‖_∞ ≤ R` and `‖Y‖_∞ ≤ R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    targets: Array2<f64>,
    support: f64,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>, support: f64) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::Shape {
                what: "dataset targets",
                expected: inputs.nrows(),
                got: targets.nrows(),
            });
        }
        if !(support.is_finite() && support >= 0.0) {
            return Err(Error::domain("support bound R must be finite and non-negative"));
        }
        for v in inputs.iter().chain(targets.iter()) {
            if v.is_nan() || v.abs() > support {
                return Err(Error::domain(format!(
                    "sample value {v} outside [-R, R] with R = {support}"
                )));
            }
        }
        Ok(Dataset {
            inputs: inputs.as_standard_layout().into_owned(),
            targets: targets.as_standard_layout().into_owned(),
            support,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let d = self.inputs.ncols();
        &self.inputs.as_slice().unwrap()[i * d..(i + 1) * d]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let k = self.targets.ncols();
        &self.targets.as_slice().unwrap()[i * k..(i + 1) * k]
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &Array2<f64> {
        &self.targets
    }

    /// Little-endian bytes of inputs then targets.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.inputs
            .iter()
            .chain(self.targets.iter())
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }
}

/// How targets are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRule {
    /// Output of a fixed random teacher network of the same architecture,
    /// clamped to `[−R, R]`.
    #[default]
    Teacher,
    /// `y_k = R·sin(π·Σ_j x_j / R + k)`; zero when `R = 0`.
    Sine,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataSpec {
    pub samples: usize,
    pub support: f64,
    pub target: TargetRule,
    pub seed: u64,
}

/// Draws `X` uniformly on `[−R, R]^d` and targets by `spec.target`.
pub fn synthesize_dataset(spec: &DataSpec, arch: &Architecture, smoothing: &SmoothingParams) -> Result<Dataset> {
    if spec.samples == 0 {
        return Err(Error::domain("dataset needs at least one sample"));
    }
    let r = spec.support;
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::domain("support bound R must be finite and non-negative"));
    }
    let d = arch.input_dim();
    let k = arch.output_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let inputs = Array2::from_shape_fn(
        (spec.samples, d),
        |_| {
            if r == 0.0 {
                0.0
            } else {
                rng.gen_range(-r..=r)
            }
        },
    );
    let mut targets = Array2::zeros((spec.samples, k));
    match spec.target {
        TargetRule::Zero => {}
        TargetRule::Sine => {
            if r > 0.0 {
                for i in 0..spec.samples {
                    let s: f64 = inputs.row(i).sum();
                    for j in 0..k {
                        targets[[i, j]] = r * (std::f64::consts::PI * s / r + j as f64).sin();
                    }
                }
            }
        }
        TargetRule::Teacher => {
            let weights = (0..arch.depth())
                .map(|l| {
                    let (n, m) = arch.layer_shape(l);
                    let data = (0..n * m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                    WeightMatrix::from_rows(n, m, data)
                })
                .collect::<Result<Vec<_>>>()?;
            let teacher = NetworkState::new(arch.clone(), weights, *smoothing)?;
            for i in 0..spec.samples {
                let y = network_output(inputs.row(i).as_slice().unwrap(), &teacher)?;
                for j in 0..k {
                    targets[[i, j]] = y[j].clamp(-r, r);
                }
            }
        }
    }
    Dataset::new(inputs, targets, r)
}
