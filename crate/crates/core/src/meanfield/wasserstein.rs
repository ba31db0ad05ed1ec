//! Exact Wasserstein distances between uniform empirical measures.
//!
//! * one dimension: monotone (quantile) coupling, exact in integer mass units;
//! * equal atom counts: optimal assignment (Hungarian method, O(n³));
//! * unequal atom counts: transportation problem with integer supplies
//!   `m/g` and demands `n/g` (`g = gcd(n, m)`), solved by successive shortest
//!   augmenting paths with Dijkstra on reduced costs.

use super::measure::EmpiricalMeasure;
use crate::error::{Error, Result};

/// Largest `n_μ · n_ν` the exact solvers accept.
pub const MAX_PAIRS: usize = 1_000_000;

/// `W_1(μ, ν)` with Euclidean ground cost.
pub fn wasserstein1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    optimal_cost(mu, nu, 1)
}

/// `W_2(μ, ν)`: square root of the optimal squared-distance cost.
pub fn wasserstein2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    Ok(optimal_cost(mu, nu, 2)?.max(0.0).sqrt())
}

/// Minimal `∫ ‖x − y‖^p dπ` over couplings π of μ and ν, for p ∈ {1, 2}.
pub fn optimal_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: u32) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::Shape {
            what: "measure dimension",
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    let (n, m) = (mu.len(), nu.len());
    if n.saturating_mul(m) > MAX_PAIRS {
        return Err(Error::Capacity(format!(
            "exact transport limited to n*m <= {MAX_PAIRS}, got {n}*{m}"
        )));
    }
    if mu.dim() == 1 {
        let xs: Vec<f64> = (0..n).map(|i| mu.atom(i)[0]).collect();
        let ys: Vec<f64> = (0..m).map(|j| nu.atom(j)[0]).collect();
        return Ok(quantile_cost(xs, ys, p));
    }
    let cost = cost_matrix(mu, nu, p);
    if n == m {
        let (total, _) = assignment(&cost, n);
        Ok(total / n as f64)
    } else {
        Ok(transportation(&cost, n, m))
    }
}

fn ground(a: &[f64], b: &[f64], p: u32) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    if p == 2 {
        d2
    } else {
        d2.sqrt()
    }
}

/// Row-major `n × m` matrix of `‖x_i − y_j‖^p`.
pub fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: u32) -> Vec<f64> {
    let (n, m) = (mu.len(), nu.len());
    let mut c = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            c.push(ground(mu.atom(i), nu.atom(j), p));
        }
    }
    c
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Monotone coupling on the line. Each μ-atom carries `m` units and each
/// ν-atom `n` units so the split masses stay integral.
fn quantile_cost(mut xs: Vec<f64>, mut ys: Vec<f64>, p: u32) -> f64 {
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let (mut left_x, mut left_y) = (m, n);
    let mut total = 0.0;
    while i < n && j < m {
        let units = left_x.min(left_y);
        let d = (xs[i] - ys[j]).abs();
        total += units as f64 * if p == 2 { d * d } else { d };
        left_x -= units;
        left_y -= units;
        if left_x == 0 {
            i += 1;
            left_x = m;
        }
        if left_y == 0 {
            j += 1;
            left_y = n;
        }
    }
    total / (n * m) as f64
}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns the total cost (summed in row order) and `col_of_row`.
pub fn assignment(cost: &[f64], n: usize) -> (f64, Vec<usize>) {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // row_of[j]: row matched to column j (1-based, 0 = free)
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i * n + col_of_row[i]]).sum();
    (total, col_of_row)
}

/// Balanced transportation with uniform marginals, returning the optimal
/// cost per unit mass.
pub fn transportation(cost: &[f64], n: usize, m: usize) -> f64 {
    let g = gcd(n, m);
    let supply_unit = (m / g) as i64;
    let demand_unit = (n / g) as i64;
    let total_units = (n * (m / g)) as f64;
    let mut supply = vec![supply_unit; n];
    let mut demand = vec![demand_unit; m];
    let mut flow = vec![0i64; n * m];
    let nodes = n + m;
    // node v < n is source v; node n + j is sink j
    let mut pot = vec![0.0f64; nodes];
    let mut remaining: i64 = supply.iter().sum();
    let inf = f64::INFINITY;

    while remaining > 0 {
        let mut dist = vec![inf; nodes];
        let mut prev = vec![usize::MAX; nodes];
        let mut done = vec![false; nodes];
        for i in 0..n {
            if supply[i] > 0 {
                dist[i] = 0.0;
            }
        }
        let mut target = usize::MAX;
        loop {
            let mut u = usize::MAX;
            let mut best = inf;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= n && demand[u - n] > 0 {
                target = u;
                break;
            }
            if u < n {
                for j in 0..m {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (cost[u * m + j] + pot[u] - pot[v]).max(0.0);
                    if dist[u] + rc < dist[v] {
                        dist[v] = dist[u] + rc;
                        prev[v] = u;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if done[i] || flow[i * m + j] == 0 {
                        continue;
                    }
                    let rc = (-cost[i * m + j] + pot[u] - pot[i]).max(0.0);
                    if dist[u] + rc < dist[i] {
                        dist[i] = dist[u] + rc;
                        prev[i] = u;
                    }
                }
            }
        }
        debug_assert!(target != usize::MAX, "balanced problem always has a path");
        let reach = dist[target];
        for v in 0..nodes {
            pot[v] += dist[v].min(reach);
        }
        // walk back to find the bottleneck
        let mut bottleneck = demand[target - n];
        let mut v = target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= n {
                // backward edge sink u → source v cancels flow on (v, u−n)
                bottleneck = bottleneck.min(flow[v * m + (u - n)]);
            }
            v = u;
        }
        let source = v;
        bottleneck = bottleneck.min(supply[source]);
        let mut v = target;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < n {
                flow[u * m + (v - n)] += bottleneck;
            } else {
                flow[v * m + (u - n)] -= bottleneck;
            }
            v = u;
        }
        supply[source] -= bottleneck;
        demand[target - n] -= bottleneck;
        remaining -= bottleneck;
    }
    let mut total = 0.0;
    for (f, c) in flow.iter().zip(cost) {
        if *f > 0 {
            total += *f as f64 * c;
        }
    }
    total / total_units
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure(points: &[&[f64]]) -> EmpiricalMeasure {
        let v: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
        EmpiricalMeasure::from_points(&v).unwrap()
    }

    #[test]
    fn dirac_examples() {
        let x = measure(&[&[0.3, -1.0]]);
        assert_eq!(wasserstein1(&x, &x).unwrap(), 0.0);
        let y = measure(&[&[3.3, 3.0]]);
        assert!((wasserstein2(&x, &y).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn one_dimensional_example() {
        let a = measure(&[&[0.0], &[1.0]]);
        let b = measure(&[&[0.0], &[0.0]]);
        assert_eq!(wasserstein1(&a, &b).unwrap(), 0.5);
        // unequal counts: {0, 1} vs {0, 0.5, 1}
        let c = measure(&[&[0.0], &[0.5], &[1.0]]);
        // quantile coupling: mass 1/3 at 0-0, 1/6 at 0-0.5, 1/6 at 1-0.5, 1/3 at 1-1
        assert!((wasserstein1(&a, &c).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn translation_in_w2() {
        let a = measure(&[&[0.0, 0.0], &[1.0, 0.5], &[-0.3, 2.0]]);
        let b = measure(&[&[0.5, -1.0], &[1.5, -0.5], &[0.2, 1.0]]);
        let d = wasserstein2(&a, &b).unwrap();
        assert!((d - (0.25f64 + 1.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = measure(&[&[0.0, 0.0]]);
        let b = measure(&[&[0.0]]);
        assert!(matches!(wasserstein1(&a, &b), Err(Error::Shape { .. })));
        let big = EmpiricalMeasure::new(ndarray::Array2::zeros((1001, 2))).unwrap();
        let big2 = EmpiricalMeasure::new(ndarray::Array2::zeros((1000, 2))).unwrap();
        assert!(matches!(wasserstein1(&big, &big2), Err(Error::Capacity(_))));
    }

    #[test]
    fn assignment_small() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (total, cols) = assignment(&c, 3);
        assert_eq!(total, 5.0);
        assert_eq!(cols, vec![1, 0, 2]);
    }
}
