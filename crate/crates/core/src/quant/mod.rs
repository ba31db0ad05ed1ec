//! Smooth quantizer primitives.
//!
//! Every primitive comes in two flavours: a checked public function that
//! validates its arguments and returns [`Result`], and an unchecked
//! `pub(crate)` kernel used on hot paths where the arguments are already
//! known to be valid (ε taken from a validated [`SmoothingParams`]).

pub mod quadrature;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which smooth clip the activation quantizer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipVariant {
    /// `a + (b−a)·σ((x−a)/ε)`, exactly as defined for the smoothed layer.
    #[default]
    Verbatim,
    /// Softplus smooth-min/smooth-max composition; tends to the hard clip
    /// (identity on the interior of `[a, b]`) as ε → 0.
    Interior,
}

/// Fixed surrogate parameters `(ε, b, Q_b, δ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    epsilon: f64,
    bits: u32,
    q_b: f64,
    delta: f64,
    clip: ClipVariant,
}

impl SmoothingParams {
    pub fn new(epsilon: f64, bits: u32, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::domain(format!("epsilon must lie in (0,1], got {epsilon}")));
        }
        if !(1..=63).contains(&bits) {
            return Err(Error::domain(format!("bits must lie in 1..=63, got {bits}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain(format!("delta must lie in (0,1), got {delta}")));
        }
        // exact power of two
        let q_b = (1u64 << (bits - 1)) as f64;
        Ok(SmoothingParams {
            epsilon,
            bits,
            q_b,
            delta,
            clip: ClipVariant::Verbatim,
        })
    }

    pub fn with_clip(mut self, clip: ClipVariant) -> Self {
        self.clip = clip;
        self
    }

    /// Same `b`, `δ` and clip variant with a different ε.
    pub fn with_epsilon(self, epsilon: f64) -> Result<Self> {
        Ok(SmoothingParams::new(epsilon, self.bits, self.delta)?.with_clip(self.clip))
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn q_b(&self) -> f64 {
        self.q_b
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn clip(&self) -> ClipVariant {
        self.clip
    }

    /// Clip interval `(−Q_b+δ, Q_b−δ)` of the activation quantizer.
    pub fn clip_range(&self) -> (f64, f64) {
        (-self.q_b + self.delta, self.q_b - self.delta)
    }
}

fn check(z: f64, eps: f64) -> Result<()> {
    if !z.is_finite() {
        return Err(Error::domain(format!("argument must be finite, got {z}")));
    }
    if eps.is_nan() || eps <= 0.0 || !eps.is_finite() {
        return Err(Error::domain(format!("epsilon must be positive, got {eps}")));
    }
    Ok(())
}

// ---- unchecked kernels -------------------------------------------------

/// Logistic function, branch-stable for large |u|.
#[inline]
pub(crate) fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `σ(u)·(1−σ(u))`, computed without cancellation.
#[inline]
pub(crate) fn logistic_slope(u: f64) -> f64 {
    let e = (-u.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sgn(z: f64, eps: f64) -> f64 {
    (z / eps).tanh()
}

/// `(1/ε)·sech²(z/ε)`; `sech` is formed from `exp(−|u|)` so nothing overflows.
#[inline]
pub(crate) fn sgn_deriv(z: f64, eps: f64) -> f64 {
    let e = (-(z / eps).abs()).exp();
    let sech = 2.0 * e / (1.0 + e * e);
    sech * sech / eps
}

#[inline]
pub(crate) fn sabs(z: f64, eps: f64) -> f64 {
    z.hypot(eps)
}

#[inline]
pub(crate) fn sabs_deriv(z: f64, eps: f64) -> f64 {
    z / z.hypot(eps)
}

#[inline]
pub(crate) fn clip_verbatim(x: f64, a: f64, b: f64, eps: f64) -> f64 {
    a + (b - a) * logistic((x - a) / eps)
}

#[inline]
pub(crate) fn clip_verbatim_deriv(x: f64, a: f64, b: f64, eps: f64) -> f64 {
    (b - a) * logistic_slope((x - a) / eps) / eps
}

#[inline]
pub(crate) fn clip_interior(x: f64, a: f64, b: f64, eps: f64) -> f64 {
    let lower = a + eps * softplus((x - a) / eps);
    b - eps * softplus((b - lower) / eps)
}

#[inline]
pub(crate) fn clip_interior_deriv(x: f64, a: f64, b: f64, eps: f64) -> f64 {
    let lower = a + eps * softplus((x - a) / eps);
    logistic((b - lower) / eps) * logistic((x - a) / eps)
}

#[inline]
pub(crate) fn clip_with(variant: ClipVariant, x: f64, a: f64, b: f64, eps: f64) -> f64 {
    match variant {
        ClipVariant::Verbatim => clip_verbatim(x, a, b, eps),
        ClipVariant::Interior => clip_interior(x, a, b, eps),
    }
}

#[inline]
pub(crate) fn clip_deriv_with(variant: ClipVariant, x: f64, a: f64, b: f64, eps: f64) -> f64 {
    match variant {
        ClipVariant::Verbatim => clip_verbatim_deriv(x, a, b, eps),
        ClipVariant::Interior => clip_interior_deriv(x, a, b, eps),
    }
}

// ---- checked API --------------------------------------------------------

/// `sgn_ε(z) = tanh(z/ε)`.
pub fn smooth_sign(z: f64, eps: f64) -> Result<f64> {
    check(z, eps)?;
    Ok(sgn(z, eps))
}

/// `sgn'_ε(z) = (1/ε)·sech²(z/ε)`, bounded by `1/ε` and by `(4/ε)·e^{−2|z|/ε}`.
pub fn smooth_sign_deriv(z: f64, eps: f64) -> Result<f64> {
    check(z, eps)?;
    Ok(sgn_deriv(z, eps))
}

/// `|z|_ε = √(z² + ε²)`.
pub fn smooth_abs(z: f64, eps: f64) -> Result<f64> {
    check(z, eps)?;
    Ok(sabs(z, eps))
}

pub fn smooth_abs_deriv(z: f64, eps: f64) -> Result<f64> {
    check(z, eps)?;
    Ok(sabs_deriv(z, eps))
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::domain("clip bounds must be finite"));
    }
    if a >= b {
        return Err(Error::domain(format!("clip requires a < b, got a={a}, b={b}")));
    }
    Ok(())
}

/// `clip_ε(x; a, b) = a + (b−a)·σ((x−a)/ε)`.
///
/// Note the slope at `x = a` is `(b−a)/(4ε)`, so this is not 1-Lipschitz
/// for `ε < (b−a)/4`, and as ε → 0 it tends to a step at `a`.
pub fn smooth_clip(x: f64, a: f64, b: f64, eps: f64) -> Result<f64> {
    check(x, eps)?;
    check_interval(a, b)?;
    Ok(clip_verbatim(x, a, b, eps))
}

pub fn smooth_clip_deriv(x: f64, a: f64, b: f64, eps: f64) -> Result<f64> {
    check(x, eps)?;
    check_interval(a, b)?;
    Ok(clip_verbatim_deriv(x, a, b, eps))
}

/// Softplus-based clip that tends to the hard clip `min(max(x,a),b)`.
pub fn smooth_clip_interior(x: f64, a: f64, b: f64, eps: f64) -> Result<f64> {
    check(x, eps)?;
    check_interval(a, b)?;
    Ok(clip_interior(x, a, b, eps))
}

pub fn smooth_clip_interior_deriv(x: f64, a: f64, b: f64, eps: f64) -> Result<f64> {
    check(x, eps)?;
    check_interval(a, b)?;
    Ok(clip_interior_deriv(x, a, b, eps))
}

/// Which branch of `γ_ε(x) = max{ε, ‖x‖_∞}` is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaBranch {
    /// `‖x‖_∞ < ε`: γ is the constant ε.
    Floor,
    /// `‖x‖_∞ ≥ ε`: γ = |x_k| with `k` the lowest index attaining the max.
    MaxNorm { index: usize, sign: f64 },
}

/// `γ_ε(x)` together with its active branch.
pub fn gamma_eps_branch(x: &[f64], eps: f64) -> Result<(f64, GammaBranch)> {
    if x.is_empty() {
        return Err(Error::domain("gamma_eps of an empty vector"));
    }
    for &v in x {
        check(v, eps)?;
    }
    Ok(gamma_raw(x, eps))
}

pub(crate) fn gamma_raw(x: &[f64], eps: f64) -> (f64, GammaBranch) {
    let mut best = 0usize;
    let mut max = x[0].abs();
    for (i, v) in x.iter().enumerate().skip(1) {
        // strict comparison: ties keep the lowest index
        if v.abs() > max {
            max = v.abs();
            best = i;
        }
    }
    if max >= eps {
        let sign = if x[best] < 0.0 { -1.0 } else { 1.0 };
        (max, GammaBranch::MaxNorm { index: best, sign })
    } else {
        (eps, GammaBranch::Floor)
    }
}

/// `γ_ε(x) = max{ε, ‖x‖_∞}`.
pub fn gamma_eps(x: &[f64], eps: f64) -> Result<f64> {
    gamma_eps_branch(x, eps).map(|(g, _)| g)
}

/// `Quant_ε(x)_i = clip_ε(x_i·Q_b/γ_ε(x); −Q_b+δ, Q_b−δ)`.
pub fn quant_activation(x: &[f64], p: &SmoothingParams) -> Result<Vec<f64>> {
    gamma_eps_branch(x, p.epsilon)?;
    Ok(quant_raw(x, p))
}

pub(crate) fn quant_raw(x: &[f64], p: &SmoothingParams) -> Vec<f64> {
    let (gamma, _) = gamma_raw(x, p.epsilon);
    let (a, b) = p.clip_range();
    let scale = p.q_b / gamma;
    x.iter()
        .map(|&v| clip_with(p.clip, v * scale, a, b, p.epsilon))
        .collect()
}

/// Vector–Jacobian product of [`quant_activation`]: returns `Jᵀ·upstream`.
///
/// At the γ kink (`‖x‖_∞ = ε`) the max-norm branch is used.
pub fn quant_activation_vjp(x: &[f64], upstream: &[f64], p: &SmoothingParams) -> Result<Vec<f64>> {
    gamma_eps_branch(x, p.epsilon)?;
    if upstream.len() != x.len() {
        return Err(Error::Shape {
            what: "quant_activation_vjp upstream",
            expected: x.len(),
            got: upstream.len(),
        });
    }
    Ok(quant_vjp_raw(x, upstream, p))
}

pub(crate) fn quant_vjp_raw(x: &[f64], upstream: &[f64], p: &SmoothingParams) -> Vec<f64> {
    let eps = p.epsilon;
    let (gamma, branch) = gamma_raw(x, eps);
    let (a, b) = p.clip_range();
    let scale = p.q_b / gamma;
    let mut out = Vec::with_capacity(x.len());
    // Σ_i c'_i·g_i·x_i, the coupling through γ
    let mut through_gamma = 0.0;
    for (&v, &g) in x.iter().zip(upstream) {
        let cg = clip_deriv_with(p.clip, v * scale, a, b, eps) * g;
        out.push(cg * scale);
        through_gamma += cg * v;
    }
    if let GammaBranch::MaxNorm { index, sign } = branch {
        // ∂(x_i·Q_b/γ)/∂x_k = −x_i·Q_b/γ²·sign(x_k)
        out[index] -= through_gamma * p.q_b / (gamma * gamma) * sign;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd(f: impl Fn(f64) -> f64, z: f64) -> f64 {
        let h = 1e-6 * z.abs().max(1.0);
        (f(z + h) - f(z - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn smooth_sign_examples() {
        assert_eq!(smooth_sign(0.0, 0.3).unwrap(), 0.0);
        // tanh(1) to 30 digits: 0.761594155955764888119458282605
        assert!((smooth_sign(1.0, 1.0).unwrap() - 0.761_594_155_955_764_9).abs() < 1e-16);
        assert!(smooth_sign(f64::NAN, 1.0).is_err());
        assert!(smooth_sign(1.0, 0.0).is_err());
        assert!(smooth_sign(1.0, -1.0).is_err());
    }

    #[test]
    fn smooth_sign_deriv_examples() {
        assert_eq!(smooth_sign_deriv(0.0, 0.5).unwrap(), 2.0);
        for eps in [1.0, 0.1, 0.01] {
            assert!((smooth_sign_deriv(0.0, eps).unwrap() - 1.0 / eps).abs() < 1e-12 / eps);
        }
        let v = smooth_sign_deriv(3.0, 0.1).unwrap();
        assert!(v <= 40.0 * (-60.0f64).exp());
        assert!(v > 0.0);
        // no overflow far out
        assert_eq!(smooth_sign_deriv(1e6, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn decay_envelope_on_dense_grid() {
        for eps in [1.0, 0.5, 0.1, 0.05, 0.01] {
            for k in 1..=4000 {
                let z = k as f64 * 1e-3 * 40.0 * eps / 4.0;
                for z in [z, -z] {
                    let d = sgn_deriv(z, eps);
                    let env = 4.0 / eps * (-2.0 * z.abs() / eps).exp();
                    assert!(d <= env * (1.0 + 1e-12), "z={z} eps={eps}");
                    assert!(d <= 1.0 / eps);
                }
            }
        }
    }

    #[test]
    fn smooth_abs_examples() {
        assert_eq!(smooth_abs(0.0, 0.25).unwrap(), 0.25);
        assert_eq!(smooth_abs(3.0, 4.0).unwrap(), 5.0);
    }

    #[test]
    fn smooth_clip_examples() {
        assert_eq!(smooth_clip(-2.0, -2.0, 4.0, 0.3).unwrap(), 1.0);
        assert_eq!(smooth_clip(1e6, 0.0, 1.0, 1.0).unwrap(), 1.0);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..200 {
            let v = smooth_clip(k as f64 * 0.5, 0.0, 1.0, 1.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        // 0.999999999999906423770311607011 (high-precision evaluation)
        let v = smooth_clip(0.3, 0.0, 1.0, 0.01).unwrap();
        assert!((v - 0.999_999_999_999_906_4).abs() <= 2.0 * f64::EPSILON);
        assert!(smooth_clip(0.0, 1.0, 1.0, 0.1).is_err());
        assert!(smooth_clip(0.0, 2.0, 1.0, 0.1).is_err());
        // huge negative arguments stay finite
        assert_eq!(smooth_clip(-1e6, 0.0, 1.0, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn clip_lipschitz_constant_is_recorded_not_one() {
        // slope at x = a is (b−a)/(4ε): the verbatim formula is not 1-Lipschitz for small ε
        for eps in [1.0, 0.1, 0.01] {
            let s = smooth_clip_deriv(0.0, 0.0, 1.0, eps).unwrap();
            assert!((s - 0.25 / eps).abs() < 1e-12 / eps);
        }
    }

    #[test]
    fn interior_clip_tends_to_hard_clip() {
        let (a, b) = (-1.5, 1.5);
        for &x in &[-3.0f64, -1.0, 0.0, 0.7, 1.2, 4.0] {
            let hard = x.clamp(a, b);
            let v = smooth_clip_interior(x, a, b, 1e-3).unwrap();
            assert!((v - hard).abs() < 2e-3, "x={x} v={v}");
            let v_verbatim = smooth_clip(x, a, b, 1e-3).unwrap();
            if x > a + 0.1 {
                // verbatim formula saturates at b on the interior
                assert!((v_verbatim - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_eps(&[0.0, 0.0, 0.0], 0.1).unwrap(), 0.1);
        assert_eq!(gamma_eps(&[2.0, -3.0], 0.1).unwrap(), 3.0);
        let e = 0.2;
        let (g, br) = gamma_eps_branch(&[e, -e], e).unwrap();
        assert_eq!(g, e);
        assert_eq!(br, GammaBranch::MaxNorm { index: 0, sign: 1.0 });
        assert!(gamma_eps(&[], 0.1).is_err());
    }

    #[test]
    fn quant_zero_vector() {
        let p = SmoothingParams::new(1.0, 2, 0.5).unwrap();
        let q = quant_activation(&[0.0, 0.0, 0.0], &p).unwrap();
        // −1.5 + 3σ(1.5) = 0.952723428580930978821651535969
        for v in q {
            assert_eq!(v, smooth_clip(0.0, -1.5, 1.5, 1.0).unwrap());
            assert!((v - 0.952_723_428_580_931).abs() < 1e-15);
        }
    }

    #[test]
    fn quant_scale_invariance() {
        let p = SmoothingParams::new(0.1, 3, 0.25).unwrap();
        let x = [0.3, -1.2, 0.8, 0.05];
        for c in [0.5, 2.0, 7.0] {
            let xc: Vec<f64> = x.iter().map(|v| v * c).collect();
            // ‖c·x‖_∞ ≥ ε so both sides use the max-norm branch and x/γ is unchanged
            let lhs = quant_activation(&xc, &p).unwrap();
            let rhs = quant_activation(&x, &p).unwrap();
            for (l, r) in lhs.iter().zip(&rhs) {
                assert!((l - r).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(SmoothingParams::new(0.0, 2, 0.5).is_err());
        assert!(SmoothingParams::new(1.5, 2, 0.5).is_err());
        assert!(SmoothingParams::new(1.0, 0, 0.5).is_err());
        assert!(SmoothingParams::new(1.0, 2, 0.0).is_err());
        assert!(SmoothingParams::new(1.0, 2, 1.0).is_err());
        let p = SmoothingParams::new(1.0, 4, 0.5).unwrap();
        assert_eq!(p.q_b(), 8.0);
        assert!(p.q_b() - p.delta() > 0.0);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let pts = [-2.3, -0.7, -0.05, 0.0, 0.02, 0.4, 1.9];
        for eps in [1.0, 0.3, 0.05] {
            for &z in &pts {
                let a = sgn_deriv(z, eps);
                let n = fd(|t| sgn(t, eps), z);
                assert!(rel_err(a, n) < 1e-6 || (a - n).abs() < 1e-9, "sgn' z={z} eps={eps}");
                let a = sabs_deriv(z, eps);
                let n = fd(|t| sabs(t, eps), z);
                assert!(rel_err(a, n) < 1e-6 || (a - n).abs() < 1e-9, "abs' z={z}");
                let a = clip_verbatim_deriv(z, -0.5, 1.5, eps);
                let n = fd(|t| clip_verbatim(t, -0.5, 1.5, eps), z);
                assert!(rel_err(a, n) < 1e-6 || (a - n).abs() < 1e-9, "clip' z={z}");
                let a = clip_interior_deriv(z, -0.5, 1.5, eps);
                let n = fd(|t| clip_interior(t, -0.5, 1.5, eps), z);
                assert!(rel_err(a, n) < 1e-6 || (a - n).abs() < 1e-9, "iclip' z={z}");
            }
        }
    }

    #[test]
    fn quant_vjp_matches_central_differences() {
        let x = [0.31, -0.92, 0.55, 0.12];
        let up = [0.7, -0.2, 1.1, 0.4];
        for clip in [ClipVariant::Verbatim, ClipVariant::Interior] {
            for eps in [1.0, 0.3, 0.05] {
                let p = SmoothingParams::new(eps, 2, 0.5).unwrap().with_clip(clip);
                let g = quant_activation_vjp(&x, &up, &p).unwrap();
                for k in 0..x.len() {
                    let f = |t: f64| {
                        let mut xx = x;
                        xx[k] = t;
                        quant_raw(&xx, &p).iter().zip(&up).map(|(q, u)| q * u).sum::<f64>()
                    };
                    let n = fd(f, x[k]);
                    assert!(
                        rel_err(g[k], n) < 1e-6 || (g[k] - n).abs() < 1e-9,
                        "k={k} eps={eps} {} {}",
                        g[k],
                        n
                    );
                }
            }
        }
        // floor branch: ‖x‖_∞ < ε
        let p = SmoothingParams::new(1.0, 2, 0.5).unwrap();
        let x = [0.1, -0.3];
        let g = quant_activation_vjp(&x, &[1.0, 1.0], &p).unwrap();
        for k in 0..2 {
            let f = |t: f64| {
                let mut xx = x;
                xx[k] = t;
                quant_raw(&xx, &p).iter().sum::<f64>()
            };
            assert!(rel_err(g[k], fd(f, x[k])) < 1e-6);
        }
    }

    #[test]
    fn sign_is_inverse_eps_lipschitz() {
        for eps in [1.0, 0.1, 0.01] {
            let mut z = -1.0;
            while z < 1.0 {
                let h = 1e-4;
                let slope = (sgn(z + h, eps) - sgn(z, eps)).abs() / h;
                assert!(slope <= (1.0 / eps) * (1.0 + 1e-9));
                z += 0.013;
            }
        }
    }

    proptest! {
        #[test]
        fn sign_is_odd_and_bounded(z in -50.0f64..50.0, eps in 0.001f64..1.0) {
            let s = smooth_sign(z, eps).unwrap();
            prop_assert_eq!(smooth_sign(-z, eps).unwrap(), -s);
            prop_assert!(s.abs() <= 1.0);
        }

        #[test]
        fn smooth_abs_is_even_and_one_lipschitz(z in -10.0f64..10.0, w in -10.0f64..10.0, eps in 0.001f64..1.0) {
            prop_assert_eq!(smooth_abs(z, eps).unwrap(), smooth_abs(-z, eps).unwrap());
            let d = (smooth_abs(z, eps).unwrap() - smooth_abs(w, eps).unwrap()).abs();
            prop_assert!(d <= (z - w).abs() * (1.0 + 1e-12) + 1e-15);
            prop_assert!(smooth_abs(z, eps).unwrap() >= eps);
        }

        #[test]
        fn quant_outputs_stay_inside_clip_range(
            x in proptest::collection::vec(-100.0f64..100.0, 1..16),
            eps in 0.01f64..1.0,
            bits in 1u32..6,
            delta in 0.01f64..0.99,
        ) {
            let p = SmoothingParams::new(eps, bits, delta).unwrap();
            let (a, b) = p.clip_range();
            for v in quant_activation(&x, &p).unwrap() {
                prop_assert!(v >= a && v <= b);
            }
        }

        #[test]
        fn gamma_is_one_lipschitz_in_max_norm(
            x in proptest::collection::vec(-5.0f64..5.0, 3),
            y in proptest::collection::vec(-5.0f64..5.0, 3),
            eps in 0.01f64..1.0,
        ) {
            let d = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let g = (gamma_eps(&x, eps).unwrap() - gamma_eps(&y, eps).unwrap()).abs();
            prop_assert!(g <= d + 1e-15);
        }
    }
}
