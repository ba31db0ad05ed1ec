//! Bounded-ness of `∫ φ(w)·sgn'_ε(P(w)_{ij}) dμ(w)` uniformly in ε.
//!
//! Atoms of μ are read as the rows of a weight matrix, so the probed entry
//! of atom `k` is `z_k = w_{kj} − α` with `α` the mean over all atoms and
//! coordinates. Two quantities are reported per ε:
//!
//! * the pointwise sum `(1/n) Σ_k φ(w_k)·sgn'_ε(z_k)`, which is not bounded
//!   uniformly in ε when an atom sits near `z = 0`;
//! * the integral `∫ Φ_h(z)·sgn'_ε(z) dz`, with `Φ_h` the Gaussian-kernel
//!   regression of `φ(w_k)` on `z_k` (bandwidth `h`). Since `Φ_h` is a
//!   convex combination of the values `φ(w_k)`, `|∫ Φ_h sgn'_ε| ≤ 2‖φ‖_∞`.

use super::measure::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::numeric::pairwise_mean;
use crate::quant::quadrature::{integrate_against_sign_deriv, QuadOptions};
use crate::quant::{sgn_deriv, SmoothingParams};

/// Atoms with `|z_k|` below this are listed as sitting on the singular set.
pub const SINGULAR_ATOM_TOL: f64 = 1e-12;

/// Smallest kernel bandwidth used for `Φ_h`.
pub const MIN_BANDWIDTH: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SingularEntry {
    pub epsilon: f64,
    /// `(1/n) Σ φ(w_k) sgn'_ε(z_k)`; recorded only.
    pub pointwise: f64,
    /// `∫ Φ_h(z) sgn'_ε(z) dz`.
    pub integral: f64,
    pub quad_error: f64,
    pub converged: bool,
    /// `2‖φ‖_∞`
    pub bound: f64,
    /// `|integral| ≤ bound·(1 + 1e−9)`
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularIntegralReport {
    pub column: usize,
    /// Kernel bandwidth `h` of `Φ_h`.
    pub bandwidth: f64,
    /// Indices of atoms with `|z_k| < 1e−12`.
    pub singular_atoms: Vec<usize>,
    /// Smallest `|z_k|`.
    pub min_distance: f64,
    pub entries: Vec<SingularEntry>,
}

impl SingularIntegralReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.within_bound && e.converged)
    }
}

/// Silverman's rule `1.06·σ·n^{−1/5}`, floored at [`MIN_BANDWIDTH`].
fn bandwidth(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    let mean = pairwise_mean(z);
    let dev: Vec<f64> = z.iter().map(|v| (v - mean) * (v - mean)).collect();
    let sd = pairwise_mean(&dev).sqrt();
    (1.06 * sd * n.powf(-0.2)).max(MIN_BANDWIDTH)
}

/// Nadaraya–Watson estimate at `x`, evaluated with a max shift so the
/// denominator is at least one.
fn kernel_regression(x: f64, z: &[f64], vals: &[f64], h: f64) -> f64 {
    let inv = 1.0 / (2.0 * h * h);
    let logs: Vec<f64> = z.iter().map(|zk| -(x - zk) * (x - zk) * inv).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for (l, v) in logs.iter().zip(vals) {
        let w = (l - top).exp();
        num += w * v;
        den += w;
    }
    num / den
}

/// Checks the uniform bound for column `column` across `eps_grid`.
///
/// `phi_sup` is the caller's `‖φ‖_∞`; it must dominate `|φ|` on the atoms.
pub fn singular_integral_check<F: Fn(&[f64]) -> f64>(
    mu: &EmpiricalMeasure,
    phi: F,
    phi_sup: f64,
    column: usize,
    eps_grid: &[f64],
) -> Result<SingularIntegralReport> {
    if column >= mu.dim() {
        return Err(Error::domain(format!(
            "column {column} out of range (atoms have dimension {})",
            mu.dim()
        )));
    }
    for &eps in eps_grid {
        SmoothingParams::new(eps, 2, 0.5)?;
    }
    let vals: Vec<f64> = (0..mu.len()).map(|k| phi(mu.atom(k))).collect();
    if let Some(v) = vals.iter().find(|v| !v.is_finite() || v.abs() > phi_sup) {
        return Err(Error::Precondition(format!(
            "|phi| = {v} on an atom exceeds the stated sup norm {phi_sup}"
        )));
    }
    let alpha = pairwise_mean(mu.atoms().as_slice().expect("standard layout"));
    let z: Vec<f64> = (0..mu.len()).map(|k| mu.atom(k)[column] - alpha).collect();
    let singular_atoms: Vec<usize> = z
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() < SINGULAR_ATOM_TOL)
        .map(|(k, _)| k)
        .collect();
    let min_distance = z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let h = bandwidth(&z);
    let bound = 2.0 * phi_sup;
    let opts = QuadOptions::default();

    let entries = eps_grid
        .iter()
        .map(|&eps| {
            let terms: Vec<f64> = vals.iter().zip(&z).map(|(v, zk)| v * sgn_deriv(*zk, eps)).collect();
            let pointwise = pairwise_mean(&terms);
            let k = integrate_against_sign_deriv(|x| kernel_regression(x, &z, &vals, h), eps, &opts);
            SingularEntry {
                epsilon: eps,
                pointwise,
                integral: k.value,
                quad_error: k.quad_error,
                converged: k.converged,
                bound,
                within_bound: k.value.abs() <= bound * (1.0 + 1e-9),
            }
        })
        .collect();
    Ok(SingularIntegralReport {
        column,
        bandwidth: h,
        singular_atoms,
        min_distance,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure(points: &[&[f64]]) -> EmpiricalMeasure {
        let v: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
        EmpiricalMeasure::from_points(&v).unwrap()
    }

    #[test]
    fn zero_function_gives_zero() {
        let mu = measure(&[&[0.3, -0.1], &[0.5, 0.2]]);
        let r = singular_integral_check(&mu, |_| 0.0, 0.0, 0, &[1.0, 0.1, 0.01]).unwrap();
        for e in &r.entries {
            assert_eq!(e.pointwise, 0.0);
            assert_eq!(e.integral, 0.0);
            assert!(e.within_bound);
        }
    }

    #[test]
    fn atoms_on_the_singular_set_are_flagged() {
        // rows (0, 1) and (0, −1): mean 0, column 0 entries are exactly 0
        let mu = measure(&[&[0.0, 1.0], &[0.0, -1.0]]);
        let r = singular_integral_check(&mu, |_| 1.0, 1.0, 0, &[0.5, 0.01]).unwrap();
        assert_eq!(r.singular_atoms, vec![0, 1]);
        // pointwise value is sech²(0)/ε = 1/ε
        assert!((r.entries[1].pointwise - 100.0).abs() < 1e-10);
        assert!(r.passed());
        // constant φ makes Φ_h ≡ 1, so the integral is ∫ sgn'_ε ≈ 2
        assert!((r.entries[1].integral - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mu = measure(&[&[0.0, 1.0]]);
        assert!(singular_integral_check(&mu, |_| 1.0, 1.0, 2, &[0.5]).is_err());
        assert!(singular_integral_check(&mu, |_| 2.0, 1.0, 0, &[0.5]).is_err());
        assert!(singular_integral_check(&mu, |_| 1.0, 1.0, 0, &[0.0]).is_err());
    }
}
