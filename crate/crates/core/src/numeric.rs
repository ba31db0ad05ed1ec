//! Small numerical helpers shared across modules.

/// Below this length `pairwise_sum` falls back to a plain loop.
const PAIRWISE_BLOCK: usize = 8;

/// Pairwise (tree) summation.
///
/// The reduction tree depends only on the slice length, so the result is
/// bit-identical for a given input regardless of who calls it.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise mean; `NaN` for an empty slice.
pub fn pairwise_mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Reduces a list of equally-shaped items with the same fixed tree as
/// [`pairwise_sum`]. `add` must be associative up to rounding.
pub fn pairwise_reduce<T, F>(items: Vec<T>, add: &F) -> Option<T>
where
    F: Fn(T, T) -> T,
{
    fn go<T, F: Fn(T, T) -> T>(mut items: Vec<T>, add: &F) -> T {
        if items.len() == 1 {
            return items.pop().unwrap();
        }
        let right = items.split_off(items.len() / 2);
        let l = go(items, add);
        let r = go(right, add);
        add(l, r)
    }
    if items.is_empty() {
        None
    } else {
        Some(go(items, add))
    }
}

/// Formats a float with 17 significant digits (round-trip exact).
pub fn fmt17(x: f64) -> String {
    if x == 0.0 {
        // keep the sign of negative zero out of the files
        return "0.0000000000000000e0".to_string();
    }
    format!("{:.16e}", x)
}

/// Euclidean norm of a slice.
pub fn norm2(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}
