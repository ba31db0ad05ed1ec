//! Globally adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Intervals are bisected in order of decreasing error estimate until the
//! summed estimate drops below the requested tolerance.

use super::sgn_deriv;

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
    /// Number of equal pieces the range is split into before refinement.
    pub initial_pieces: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-14,
            rel_tol: 1e-13,
            max_intervals: 4000,
            initial_pieces: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Sum of per-interval |K15 − G7| estimates.
    pub error: f64,
    pub intervals: usize,
    /// False when `max_intervals` was hit before the tolerance was met.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Piece {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let pair = f(c - dx) + f(c + dx);
        k += WGK[i] * pair;
        if i % 2 == 1 {
            g += WG[i / 2] * pair;
        }
    }
    Piece {
        a,
        b,
        value: k * h,
        error: ((k - g) * h).abs(),
    }
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: &QuadOptions) -> QuadResult {
    let n0 = opts.initial_pieces.max(1);
    let step = (b - a) / n0 as f64;
    let mut pieces: Vec<Piece> = (0..n0)
        .map(|i| {
            let lo = a + step * i as f64;
            let hi = if i + 1 == n0 { b } else { a + step * (i + 1) as f64 };
            kronrod15(&f, lo, hi)
        })
        .collect();

    let total = |ps: &[Piece]| -> (f64, f64) { ps.iter().fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error)) };

    loop {
        let (value, error) = total(&pieces);
        let tol = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= tol || pieces.len() >= opts.max_intervals {
            return QuadResult {
                value,
                error,
                intervals: pieces.len(),
                converged: error <= tol,
            };
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, be), (i, p)| {
                if p.error > be {
                    (i, p.error)
                } else {
                    (bi, be)
                }
            });
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if !(mid > p.a && mid < p.b) {
            // interval can no longer be split in floating point
            pieces.push(Piece { error: 0.0, ..p });
            continue;
        }
        pieces.push(kronrod15(&f, p.a, mid));
        pieces.push(kronrod15(&f, mid, p.b));
    }
}

/// Half-width of the integration window for kernels built on `sgn'_ε`,
/// in units of ε.
pub const SIGN_DERIV_WINDOW: f64 = 20.0;

/// Upper bound on `∫_{|z| > c·ε} sgn'_ε(z) dz` from the exponential envelope
/// `sgn'_ε(z) ≤ (4/ε)·exp(−2|z|/ε)`; independent of ε.
pub fn sign_deriv_tail_bound(c: f64) -> f64 {
    4.0 * (-2.0 * c).exp()
}

/// Result of integrating a weight against `sgn'_ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelIntegral {
    /// Quadrature value on the window `[−20ε, 20ε]`.
    pub value: f64,
    pub quad_error: f64,
    /// Analytic bound on the neglected tails, per unit sup-norm of the weight.
    pub tail_bound: f64,
    pub converged: bool,
}

/// `∫ φ(z)·sgn'_ε(z) dz`, computed on `[−20ε, 20ε]` with the remaining mass
/// bounded analytically.
pub fn integrate_against_sign_deriv<F: Fn(f64) -> f64>(phi: F, eps: f64, opts: &QuadOptions) -> KernelIntegral {
    let half = SIGN_DERIV_WINDOW * eps;
    let r = integrate(|z| phi(z) * sgn_deriv(z, eps), -half, half, opts);
    KernelIntegral {
        value: r.value,
        quad_error: r.error,
        tail_bound: sign_deriv_tail_bound(SIGN_DERIV_WINDOW),
        converged: r.converged,
    }
}
