//! Verification suites. Each suite is deterministic given its seed, returns
//! a pass/fail verdict and emits its measurements as result records.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::records::{ResultRecord, Tag};
use crate::backprop::{risk_gradient, LossSpec};
use crate::constraint::{frobenius_inner, layer_mean, zero_mean_project, WeightMatrix};
use crate::dataset::{synthesize_dataset, DataSpec, Dataset, TargetRule};
use crate::dynamics::{init_weights, run_trajectory, ParticleTrajectory, RunConfig};
use crate::error::Result;
use crate::forward::{Activation, Architecture};
use crate::gradcheck::{compare_gradients, finite_difference_gradient, GradCheckTolerance};
use crate::meanfield::{
    continuity_residual, eps_sweep, singular_integral_check, wasserstein1, wasserstein2, EmpiricalMeasure, SweepBase,
    TestFunction,
};
use crate::numeric::ls_slope;
use crate::quant::quadrature::{integrate_against_sign_deriv, QuadOptions};
use crate::quant::{ClipVariant, SmoothingParams};

/// Verdict and measurements of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// One-line human summary.
    pub detail: String,
    pub records: Vec<ResultRecord>,
}

/// Everything a trajectory needs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub architecture: Architecture,
    pub smoothing: SmoothingParams,
    pub data: Dataset,
    pub loss: LossSpec,
    pub run: RunConfig,
}

impl Problem {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let architecture = cfg.architecture()?;
        let smoothing = cfg.smoothing()?;
        let data = synthesize_dataset(&cfg.data_spec(), &architecture, &smoothing)?;
        Ok(Problem {
            loss: cfg.loss(),
            run: cfg.run_config(),
            architecture,
            smoothing,
            data,
        })
    }

    pub fn trajectory(&self) -> Result<ParticleTrajectory> {
        run_trajectory(&self.architecture, &self.smoothing, &self.data, &self.loss, &self.run)
    }

    fn sweep_base(&self) -> SweepBase {
        SweepBase {
            architecture: self.architecture.clone(),
            smoothing: self.smoothing,
            data: self.data.clone(),
            loss: self.loss,
            run: self.run,
            comparison_times: SweepBase::default_times(self.run.horizon),
        }
    }
}

/// Width-32, depth-2 network on 64 teacher samples used by the ε-sweep
/// suite; trajectories run to `T = 1` with `η = 0.01`.
pub fn eps_sweep_problem() -> Result<Problem> {
    let architecture = Architecture::uniform(4, vec![32, 1], Activation::Tanh)?;
    let smoothing = SmoothingParams::new(0.1, 1, 0.5)?;
    let spec = DataSpec {
        samples: 64,
        support: 1.0,
        target: TargetRule::Teacher,
        seed: 1,
    };
    let data = synthesize_dataset(&spec, &architecture, &smoothing)?;
    Ok(Problem {
        loss: LossSpec::squared(1.0, 1),
        run: RunConfig {
            eta: 0.01,
            horizon: 1.0,
            clamp: 1.0,
            init_scale: 0.5,
            seed: 3,
            stride: 10,
        },
        architecture,
        smoothing,
        data,
    })
}

// ---------------------------------------------------------------------------
// kernel identities

/// `|∫ sgn'_ε − 2| ≤ 1e−8` on the given grid, window tails included.
pub fn quadrature_identity(run_id: &str, eps_list: &[f64]) -> Result<SuiteOutcome> {
    let opts = QuadOptions::default();
    let mut records = Vec::new();
    let mut worst = 0.0f64;
    let mut converged = true;
    for &eps in eps_list {
        SmoothingParams::new(eps, 1, 0.5)?;
        let k = integrate_against_sign_deriv(|_| 1.0, eps, &opts);
        let err = (k.value - 2.0).abs() + k.tail_bound;
        worst = worst.max(err);
        converged &= k.converged;
        records.push(ResultRecord::new(run_id, "sign_deriv_integral", k.value, Tag::Measured).epsilon(eps));
        records.push(ResultRecord::new(run_id, "sign_deriv_integral_error", err, Tag::Measured).epsilon(eps));
    }
    let passed = converged && worst <= 1e-8;
    Ok(SuiteOutcome {
        name: "quadrature-identity",
        passed,
        detail: format!("max |int sgn' - 2| + tail = {worst:.3e} (tol 1e-8)"),
        records,
    })
}

/// The two bumps used by [`dirac_limit`]: a Gaussian of width 2 and the
/// compact `(1 − r²)²` bump of radius 4, both centred at 0 with `φ(0) = 1`.
pub fn dirac_bumps() -> [TestFunction; 2] {
    [
        TestFunction::Gaussian {
            center: vec![0.0],
            width: 2.0,
        },
        TestFunction::Spline {
            center: vec![0.0],
            radius: 4.0,
        },
    ]
}

/// `|∫ φ sgn'_ε − 2φ(0)|` decreases strictly along `ε = 2^{−k}`, `k = 0..6`,
/// and ends below `1e−4`.
pub fn dirac_limit(run_id: &str) -> Result<SuiteOutcome> {
    let opts = QuadOptions::default();
    let grid: Vec<f64> = (0..=6).map(|k| 0.5f64.powi(k)).collect();
    let mut records = Vec::new();
    let mut passed = true;
    let mut finals = Vec::new();
    for (b, phi) in dirac_bumps().iter().enumerate() {
        let target = 2.0 * phi.value(&[0.0]);
        let mut prev = f64::INFINITY;
        for &eps in &grid {
            let k = integrate_against_sign_deriv(|z| phi.value(&[z]), eps, &opts);
            let err = (k.value - target).abs();
            passed &= k.converged && err < prev;
            prev = err;
            records.push(
                ResultRecord::new(run_id, &format!("dirac_error_bump{}", b + 1), err, Tag::Measured).epsilon(eps),
            );
        }
        passed &= prev < 1e-4;
        finals.push(prev);
    }
    Ok(SuiteOutcome {
        name: "dirac-limit",
        passed,
        detail: format!(
            "errors at eps=1/64: {:.3e}, {:.3e} (need strictly decreasing, < 1e-4)",
            finals[0], finals[1]
        ),
        records,
    })
}

// ---------------------------------------------------------------------------
// constraint algebra

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> WeightMatrix {
    let offset: f64 = rng.gen_range(-2.0..2.0);
    let data = (0..n * m).map(|_| offset + rng.gen_range(-1.0..1.0)).collect();
    WeightMatrix::from_rows(n, m, data).expect("valid shape")
}

/// Pythagorean identity, idempotence, self-adjointness and orthogonality of
/// the zero-mean projection on random matrices up to `max_dim × max_dim`.
pub fn constraint_algebra(run_id: &str, count: usize, max_dim: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pyth, mut idem, mut adj, mut orth) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut passed = true;
    for _ in 0..count {
        let n = rng.gen_range(1..=max_dim);
        let m = rng.gen_range(1..=max_dim);
        let nm = (n * m) as f64;
        let w = random_matrix(&mut rng, n, m);
        let b = random_matrix(&mut rng, n, m);
        let pw = zero_mean_project(&w);
        let alpha = layer_mean(&w);

        let lhs = w.inner(&w);
        let rhs = nm * alpha * alpha + pw.inner(&pw);
        let e_pyth = (lhs - rhs).abs() / lhs.max(f64::MIN_POSITIVE);

        let ppw = zero_mean_project(&pw);
        let e_idem = ppw
            .as_slice()
            .iter()
            .zip(pw.as_slice())
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));

        let pb = zero_mean_project(&b);
        // relative to the Cauchy–Schwarz scale of the inner products
        let e_adj = (w.inner(&pb) - pw.inner(&b)).abs() / (w.frobenius() * b.frobenius()).max(f64::MIN_POSITIVE);

        let ones = Array2::from_elem((n, m), 1.0);
        let e_orth = frobenius_inner(&ones, pw.as_array()).abs();

        passed &= e_pyth <= 1e-12 && e_idem <= 1e-14 && e_adj <= 1e-12 && e_orth <= 1e-12 * nm;
        pyth = pyth.max(e_pyth);
        idem = idem.max(e_idem);
        adj = adj.max(e_adj);
        orth = orth.max(e_orth / nm);
    }
    let records = vec![
        ResultRecord::new(run_id, "pythagoras_rel_error_max", pyth, Tag::Measured),
        ResultRecord::new(run_id, "idempotence_error_max", idem, Tag::Measured),
        ResultRecord::new(run_id, "self_adjoint_rel_error_max", adj, Tag::Measured),
        ResultRecord::new(run_id, "orthogonality_error_per_entry_max", orth, Tag::Measured),
    ];
    Ok(SuiteOutcome {
        name: "constraint-algebra",
        passed,
        detail: format!(
            "{count} matrices: pythagoras {pyth:.2e}, idempotence {idem:.2e}, adjoint (relative) {adj:.2e}, orthogonality/nm {orth:.2e}"
        ),
        records,
    })
}

// ---------------------------------------------------------------------------
// gradients

/// Tolerance used for gradient checks: relative `1e−5`, and absolute `1e−8`
/// for entries below `1e−3`, the magnitude where the two coincide.
pub fn gradient_tolerance() -> GradCheckTolerance {
    GradCheckTolerance {
        rel: 1e-5,
        small: 1e-3,
        abs: 1e-8,
    }
}

/// Random small instance number `k` of the gradient suite.
fn gradient_instance(k: usize, rng: &mut ChaCha8Rng) -> Result<(crate::forward::NetworkState, Dataset, LossSpec)> {
    let depth = 1 + k % 3;
    let eps = [1.0, 0.3, 0.05][(k / 3) % 3];
    let input_dim = rng.gen_range(1..=4);
    let mut widths: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=4)).collect();
    widths[depth - 1] = rng.gen_range(1..=2);
    let activation = if rng.gen_bool(0.8) {
        Activation::Tanh
    } else {
        Activation::Identity
    };
    let arch = Architecture::uniform(input_dim, widths, activation)?;
    let clip = if k.is_multiple_of(2) {
        ClipVariant::Verbatim
    } else {
        ClipVariant::Interior
    };
    let p = SmoothingParams::new(eps, rng.gen_range(1..=2), 0.5)?.with_clip(clip);
    let spec = DataSpec {
        samples: rng.gen_range(1..=8),
        support: 1.0,
        target: TargetRule::Sine,
        seed: rng.gen(),
    };
    let data = synthesize_dataset(&spec, &arch, &p)?;
    let run = RunConfig {
        eta: 0.1,
        horizon: 0.0,
        clamp: 1.0,
        init_scale: rng.gen_range(0.2..=1.0),
        seed: rng.gen(),
        stride: 1,
    };
    let s = init_weights(&arch, &p, &run)?;
    let loss = LossSpec::squared(1.0, arch.output_dim());
    Ok((s, data, loss))
}

/// Reverse-mode gradients against central differences of the risk.
pub fn gradient_correctness(run_id: &str, instances: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = gradient_tolerance();
    let mut passed = true;
    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut failures = 0;
    let mut records = Vec::new();
    for k in 0..instances {
        let (s, data, loss) = gradient_instance(k, &mut rng)?;
        let g = risk_gradient(&s, &data, &loss)?;
        let n = finite_difference_gradient(&s, &data, &loss)?;
        let rep = compare_gradients(&g, &n, &tol);
        passed &= rep.passed();
        failures += rep.failures.len();
        worst_rel = worst_rel.max(rep.max_rel_error);
        worst_abs = worst_abs.max(rep.max_abs_error_small);
        let eps = s.smoothing().epsilon();
        records.push(
            ResultRecord::new(
                run_id,
                &format!("gradcheck_rel_error_instance{k}"),
                rep.max_rel_error,
                Tag::Measured,
            )
            .epsilon(eps),
        );
        records.push(
            ResultRecord::new(
                run_id,
                &format!("gradcheck_abs_error_instance{k}"),
                rep.max_abs_error_small,
                Tag::Measured,
            )
            .epsilon(eps),
        );
    }
    Ok(SuiteOutcome {
        name: "gradient-correctness",
        passed,
        detail: format!(
            "{instances} instances: max rel {worst_rel:.2e}, max abs (|g| < 1e-3) {worst_abs:.2e}, {failures} failing entries"
        ),
        records,
    })
}

// ---------------------------------------------------------------------------
// dynamics

/// Mean identity on unclipped steps and the clamp bound on every snapshot,
/// over `trajectories` runs of `steps` steps each.
pub fn constraint_preservation(
    run_id: &str,
    trajectories: usize,
    steps: usize,
    seed: u64,
) -> Result<[SuiteOutcome; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut unclipped = 0usize;
    let mut clip_steps = 0usize;
    let mut clamp_ok = true;
    let mut max_entry = 0.0f64;
    let mut records = Vec::new();
    for k in 0..trajectories {
        let depth = 1 + k % 3;
        let input_dim = rng.gen_range(2..=6);
        let mut widths: Vec<usize> = (0..depth).map(|_| rng.gen_range(4..=16)).collect();
        widths[depth - 1] = 1;
        let arch = Architecture::uniform(input_dim, widths, Activation::Tanh)?;
        let p = SmoothingParams::new([1.0, 0.3, 0.1][k % 3], 1, 0.5)?;
        let spec = DataSpec {
            samples: 32,
            support: 1.0,
            target: TargetRule::Sine,
            seed: rng.gen(),
        };
        let data = synthesize_dataset(&spec, &arch, &p)?;
        let run = RunConfig {
            eta: 1e-3,
            horizon: steps as f64 * 1e-3,
            clamp: 1.0,
            init_scale: 0.5,
            seed: rng.gen(),
            stride: 1,
        };
        let traj = run_trajectory(&arch, &p, &data, &LossSpec::squared(1.0, 1), &run)?;
        for rep in &traj.reports {
            for (l, r) in rep.identity_residual.iter().enumerate() {
                if rep.clipped[l] {
                    clip_steps += 1;
                } else {
                    unclipped += 1;
                    worst = worst.max(r.abs());
                }
            }
        }
        for snap in &traj.snapshots {
            for w in snap {
                let m = w.max_abs();
                max_entry = max_entry.max(m);
                clamp_ok &= m <= run.clamp;
            }
        }
        records.push(
            ResultRecord::new(run_id, &format!("mean_identity_residual_traj{k}"), worst, Tag::Measured)
                .epsilon(p.epsilon()),
        );
    }
    let expected = trajectories * steps;
    let steps_ok = unclipped >= expected && clip_steps == 0;
    records.push(ResultRecord::new(
        run_id,
        "mean_identity_residual_max",
        worst,
        Tag::Measured,
    ));
    records.push(ResultRecord::new(
        run_id,
        "clip_layer_steps",
        clip_steps as f64,
        Tag::Diagnostic,
    ));
    let identity = SuiteOutcome {
        name: "constraint-preservation",
        passed: steps_ok && worst <= 1e-13,
        detail: format!(
            "{unclipped} unclipped layer-steps ({clip_steps} clipped): max |mean identity residual| {worst:.2e} (tol 1e-13)"
        ),
        records,
    };
    let clamp = SuiteOutcome {
        name: "clamp-bound",
        passed: clamp_ok,
        detail: format!("max |W| over all snapshots {max_entry:.6} (clamp 1)"),
        records: vec![ResultRecord::new(run_id, "snapshot_max_abs", max_entry, Tag::Measured)],
    };
    Ok([identity, clamp])
}

// ---------------------------------------------------------------------------
// singular integrals

fn random_atoms(rng: &mut ChaCha8Rng) -> Result<EmpiricalMeasure> {
    loop {
        let n = rng.gen_range(1..=40);
        let dim = rng.gen_range(1..=4);
        let atoms = Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0));
        let mu = EmpiricalMeasure::new(atoms)?;
        let alpha = crate::numeric::pairwise_mean(mu.atoms().as_slice().expect("standard layout"));
        if mu.atoms().iter().all(|v| (v - alpha).abs() >= 1e-6) {
            return Ok(mu);
        }
    }
}

/// Uniform-in-ε bound `|∫ Φ_h sgn'_ε| ≤ 2‖φ‖_∞` on random measures, every
/// column, `ε ∈ {1, 0.1, 0.01}`.
pub fn singular_bound(run_id: &str, measures: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = [1.0, 0.1, 0.01];
    let mut passed = true;
    let mut worst_ratio = 0.0f64;
    let mut worst_pointwise = 0.0f64;
    for k in 0..measures {
        let mu = random_atoms(&mut rng)?;
        let center: Vec<f64> = (0..mu.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi = if k % 2 == 0 {
            TestFunction::Gaussian {
                center,
                width: rng.gen_range(0.3..1.5),
            }
        } else {
            TestFunction::Spline {
                center,
                radius: rng.gen_range(0.5..2.0),
            }
        };
        let sup = phi.sup_norm().expect("bumps are bounded");
        for j in 0..mu.dim() {
            let rep = singular_integral_check(&mu, |w| phi.value(w), sup, j, &grid)?;
            passed &= rep.passed() && rep.singular_atoms.is_empty();
            for e in &rep.entries {
                worst_ratio = worst_ratio.max(e.integral.abs() / e.bound);
                worst_pointwise = worst_pointwise.max(e.pointwise.abs() / e.bound);
            }
        }
    }
    let records = vec![
        ResultRecord::new(run_id, "singular_integral_over_bound_max", worst_ratio, Tag::Measured),
        ResultRecord::new(
            run_id,
            "singular_pointwise_over_bound_max",
            worst_pointwise,
            Tag::Diagnostic,
        ),
    ];
    Ok(SuiteOutcome {
        name: "singular-integral-bound",
        passed,
        detail: format!(
            "{measures} measures: max |integral| / (2 sup phi) = {worst_ratio:.6} (pointwise form reaches {worst_pointwise:.3})"
        ),
        records,
    })
}

// ---------------------------------------------------------------------------
// Wasserstein

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// `min_σ (1/n) Σ ‖x_i − y_σ(i)‖^p` by enumerating every permutation.
pub fn brute_force_cost(xs: &[Vec<f64>], ys: &[Vec<f64>], p: u32) -> f64 {
    let n = xs.len();
    let cost = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        if p == 2 {
            d2
        } else {
            d2.sqrt()
        }
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    loop {
        let c: f64 = (0..n).map(|i| cost(&xs[i], &ys[perm[i]])).sum();
        best = best.min(c);
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best / n as f64
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn replicate(points: &[Vec<f64>], times: usize) -> Vec<Vec<f64>> {
    points
        .iter()
        .flat_map(|p| std::iter::repeat_n(p.clone(), times))
        .collect()
}

/// Solver values against permutation enumeration, then metric axioms.
pub fn wasserstein_exactness(run_id: &str, pairs: usize, triples: usize, seed: u64) -> Result<SuiteOutcome> {
    // atom counts whose common refinement has at most 8 atoms
    const SIZES: [(usize, usize); 8] = [(8, 8), (6, 6), (5, 5), (3, 3), (2, 4), (4, 8), (2, 3), (3, 6)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for k in 0..pairs {
        let (n, m) = SIZES[k % SIZES.len()];
        let dim = 1 + k % 3;
        let xs = random_points(&mut rng, n, dim);
        let ys = random_points(&mut rng, m, dim);
        let lcm = n * m / gcd(n, m);
        let (bx, by) = (replicate(&xs, lcm / n), replicate(&ys, lcm / m));
        let mu = EmpiricalMeasure::from_points(&xs)?;
        let nu = EmpiricalMeasure::from_points(&ys)?;
        let w1 = wasserstein1(&mu, &nu)?;
        let w2 = wasserstein2(&mu, &nu)?;
        worst = worst
            .max((w1 - brute_force_cost(&bx, &by, 1)).abs())
            .max((w2 - brute_force_cost(&bx, &by, 2).sqrt()).abs());
    }

    let (mut sym, mut tri, mut ident, mut jensen) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..triples {
        let dim = rng.gen_range(1..=3);
        let ms: Vec<EmpiricalMeasure> = (0..3)
            .map(|_| {
                let n = rng.gen_range(1..=12);
                EmpiricalMeasure::from_points(&random_points(&mut rng, n, dim))
            })
            .collect::<Result<_>>()?;
        for f in [wasserstein1, wasserstein2] {
            let d = |a: usize, b: usize| f(&ms[a], &ms[b]);
            let (ab, bc, ac) = (d(0, 1)?, d(1, 2)?, d(0, 2)?);
            sym = sym.max((ab - d(1, 0)?).abs());
            tri = tri.max(ac - ab - bc);
            ident = ident.max(d(0, 0)?.abs());
        }
        jensen = jensen.max(wasserstein1(&ms[0], &ms[1])? - wasserstein2(&ms[0], &ms[1])?);
    }
    let passed = worst <= 1e-10 && sym <= 1e-12 && tri <= 1e-10 && ident <= 1e-12 && jensen <= 1e-12;
    let records = vec![
        ResultRecord::new(run_id, "wasserstein_bruteforce_error_max", worst, Tag::Measured),
        ResultRecord::new(run_id, "wasserstein_symmetry_error_max", sym, Tag::Measured),
        ResultRecord::new(run_id, "wasserstein_triangle_excess_max", tri, Tag::Measured),
        ResultRecord::new(run_id, "wasserstein_self_distance_max", ident, Tag::Measured),
        ResultRecord::new(run_id, "w1_minus_w2_max", jensen, Tag::Measured),
    ];
    Ok(SuiteOutcome {
        name: "wasserstein-exactness",
        passed,
        detail: format!(
            "{pairs} pairs: max |solver - enumeration| {worst:.2e}; {triples} triples: symmetry {sym:.1e}, triangle excess {tri:.1e}, self {ident:.1e}, W1-W2 {jensen:.1e}"
        ),
        records,
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

// ---------------------------------------------------------------------------
// mean-field diagnostics

/// Largest `W2(μ(t_a), μ(t_b)) / (V·|t_a − t_b|)` over snapshot pairs and
/// layers, with `V` the trajectory's RMS row-velocity sup for the layer.
pub fn equicontinuity_ratio(traj: &ParticleTrajectory) -> Result<f64> {
    let mut worst = 0.0f64;
    for l in 0..traj.architecture.depth() {
        let v = traj.velocity_rms_sup(l);
        let measures: Vec<EmpiricalMeasure> = traj
            .snapshots
            .iter()
            .map(|s| EmpiricalMeasure::new(s[l].as_array().clone()))
            .collect::<Result<_>>()?;
        for a in 0..measures.len() {
            for b in a + 1..measures.len() {
                let d = wasserstein2(&measures[a], &measures[b])?;
                let allowed = v * (traj.times[b] - traj.times[a]).abs();
                let ratio = if allowed > 0.0 {
                    d / allowed
                } else if d == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(ratio);
            }
        }
    }
    Ok(worst)
}

/// `W2(μ(t), μ(s)) ≤ V·|t − s|·(1 + 1e−6)` along the given trajectories.
pub fn equicontinuity(run_id: &str, trajectories: &[(String, ParticleTrajectory)]) -> Result<SuiteOutcome> {
    let mut worst = 0.0f64;
    let mut records = Vec::new();
    for (label, traj) in trajectories {
        let r = equicontinuity_ratio(traj)?;
        worst = worst.max(r);
        records.push(
            ResultRecord::new(run_id, &format!("equicontinuity_ratio_{label}"), r, Tag::Measured)
                .epsilon(traj.smoothing.epsilon()),
        );
        for l in 0..traj.architecture.depth() {
            records.push(
                ResultRecord::new(
                    run_id,
                    &format!("velocity_rms_sup_{label}"),
                    traj.velocity_rms_sup(l),
                    Tag::Measured,
                )
                .layer(l),
            );
            records.push(
                ResultRecord::new(
                    run_id,
                    &format!("velocity_max_row_sup_{label}"),
                    traj.velocity_sup(l),
                    Tag::Measured,
                )
                .layer(l),
            );
        }
    }
    Ok(SuiteOutcome {
        name: "equicontinuity",
        passed: worst <= 1.0 + 1e-6,
        detail: format!(
            "{} trajectories: max W2 / (velocity sup * dt) = {worst:.6}",
            trajectories.len()
        ),
        records,
    })
}

/// Trajectories checked by the equicontinuity suite: the problem run once at
/// each of the ε values given.
pub fn equicontinuity_trajectories(problem: &Problem, eps: &[f64]) -> Result<Vec<(String, ParticleTrajectory)>> {
    let mut out = Vec::new();
    for (k, &e) in eps.iter().enumerate() {
        let p = problem.smoothing.with_epsilon(e)?;
        let traj = run_trajectory(&problem.architecture, &p, &problem.data, &problem.loss, &problem.run)?;
        out.push((format!("eps{k}"), traj));
    }
    Ok(out)
}

/// Quadratic test functions of dimension `dim` for the residual study.
pub fn residual_test_functions(dim: usize) -> Vec<TestFunction> {
    let ramp = |a: f64, b: f64| {
        (0..dim)
            .map(|j| a + b * j as f64 / dim.max(1) as f64)
            .collect::<Vec<f64>>()
    };
    vec![
        TestFunction::Quadratic {
            center: ramp(0.1, -0.2),
            constant: 0.0,
            linear: ramp(1.0, -1.5),
            diagonal: ramp(1.0, 1.0),
        },
        TestFunction::Quadratic {
            center: vec![0.0; dim],
            constant: 0.5,
            linear: vec![0.0; dim],
            diagonal: vec![2.0; dim],
        },
    ]
}

/// η-refinement of the weak continuity residual at `t`: least-squares slope
/// of `log residual` against `log η` must be at least 0.9 for every layer
/// and quadratic test function.
pub fn continuity_residual_order(run_id: &str, problem: &Problem, t: f64, etas: &[f64]) -> Result<SuiteOutcome> {
    let depth = problem.architecture.depth();
    let mut residuals = vec![vec![Vec::new(); 2]; depth];
    let mut clipped = false;
    let mut boundary = false;
    let mut records = Vec::new();
    for &eta in etas {
        let run = RunConfig {
            eta,
            horizon: (2.0 * t).max(t + 2.0 * eta),
            stride: 1,
            ..problem.run
        };
        let traj = run_trajectory(
            &problem.architecture,
            &problem.smoothing,
            &problem.data,
            &problem.loss,
            &run,
        )?;
        for (l, per_layer) in residuals.iter_mut().enumerate() {
            let m = problem.architecture.layer_shape(l).1;
            for (f, phi) in residual_test_functions(m).iter().enumerate() {
                let r = continuity_residual(&traj, l, phi, t, &problem.data, &problem.loss)?;
                clipped |= r.clipped;
                boundary |= r.boundary;
                per_layer[f].push(r.residual);
                records.push(
                    ResultRecord::new(
                        run_id,
                        &format!("continuity_residual_phi{}", f + 1),
                        r.residual,
                        Tag::Measured,
                    )
                    .layer(l)
                    .time(r.time)
                    .epsilon(problem.smoothing.epsilon()),
                );
            }
        }
    }
    let log_eta: Vec<f64> = etas.iter().map(|e| e.ln()).collect();
    let mut slopes = Vec::new();
    for (l, per_layer) in residuals.iter().enumerate() {
        for (f, r) in per_layer.iter().enumerate() {
            // an exactly zero residual has no order; it counts as a failure
            let slope = if r.iter().all(|v| *v > 0.0) {
                ls_slope(&log_eta, &r.iter().map(|v| v.ln()).collect::<Vec<_>>())
            } else {
                f64::NAN
            };
            if slope.is_finite() {
                records.push(
                    ResultRecord::new(run_id, &format!("continuity_order_phi{}", f + 1), slope, Tag::Measured).layer(l),
                );
            }
            slopes.push(slope);
        }
    }
    let min_slope = slopes.iter().copied().fold(f64::INFINITY, |m, s| {
        if s.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.min(s)
        }
    });
    let passed = !clipped && !boundary && min_slope >= 0.9;
    Ok(SuiteOutcome {
        name: "continuity-residual-order",
        passed,
        detail: format!(
            "min log-log order {min_slope:.4} over {} layers x 2 test functions (need >= 0.9){}{}",
            depth,
            if clipped { "; clamp active" } else { "" },
            if boundary { "; boundary stencil" } else { "" }
        ),
        records,
    })
}

/// Velocity sup per ε (largest RMS row velocity over layers and steps) must
/// vary by less than a factor 4 across the grid; consecutive-ε distances are
/// recorded only.
pub fn eps_sweep_boundedness(run_id: &str, problem: &Problem, eps: &[f64]) -> Result<SuiteOutcome> {
    let table = eps_sweep(&problem.sweep_base(), eps)?;
    let mut records = Vec::new();
    for row in &table.rows {
        records.push(
            ResultRecord::new(run_id, "w1_vs_previous_eps", row.w1, Tag::Diagnostic)
                .layer(row.layer)
                .time(row.time)
                .epsilon(row.to),
        );
        records.push(
            ResultRecord::new(run_id, "w2_vs_previous_eps", row.w2, Tag::Diagnostic)
                .layer(row.layer)
                .time(row.time)
                .epsilon(row.to),
        );
    }
    let mut sups = Vec::new();
    for &e in eps {
        let cell: Vec<_> = table.velocity.iter().filter(|v| v.parameter == e).collect();
        let sup = cell.iter().fold(0.0f64, |m, v| m.max(v.rms));
        sups.push(sup);
        for v in &cell {
            records.push(
                ResultRecord::new(run_id, "velocity_rms_sup", v.rms, Tag::Measured)
                    .layer(v.layer)
                    .epsilon(e),
            );
            records.push(
                ResultRecord::new(run_id, "velocity_max_row_sup", v.max_row, Tag::Measured)
                    .layer(v.layer)
                    .epsilon(e),
            );
        }
    }
    let hi = sups.iter().copied().fold(0.0f64, f64::max);
    let lo = sups.iter().copied().fold(f64::INFINITY, f64::min);
    let factor = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if factor.is_finite() {
        records.push(ResultRecord::new(run_id, "velocity_sup_spread", factor, Tag::Measured));
    }
    Ok(SuiteOutcome {
        name: "eps-sweep-boundedness",
        passed: factor < 4.0,
        detail: format!(
            "velocity sup spans [{lo:.4e}, {hi:.4e}] across {} eps values: factor {factor:.3} (need < 4)",
            eps.len()
        ),
        records,
    })
}

/// Suites run by the `verify` command: the kernel, algebra, gradient,
/// dynamics, singular-integral and transport checks, plus equicontinuity and
/// the continuity residual on the configured problem.
pub fn run_verify_suites(run_id: &str, cfg: &ExperimentConfig) -> Result<Vec<SuiteOutcome>> {
    let problem = Problem::from_config(cfg)?;
    let mut out = vec![
        quadrature_identity(run_id, &[1.0, 0.5, 0.1, 0.05, 0.01])?,
        dirac_limit(run_id)?,
        constraint_algebra(run_id, 1000, 64, cfg.dynamics.seed)?,
        gradient_correctness(run_id, 20, cfg.dynamics.seed)?,
    ];
    out.extend(constraint_preservation(run_id, 10, 200, cfg.dynamics.seed)?);
    out.push(singular_bound(run_id, 100, cfg.dynamics.seed)?);
    out.push(wasserstein_exactness(run_id, 50, 100, cfg.dynamics.seed)?);
    let trajs = equicontinuity_trajectories(&problem, &[cfg.smoothing.epsilon])?;
    out.push(equicontinuity(run_id, &trajs)?);
    out.push(continuity_residual_order(run_id, &problem, 0.1, &[1e-2, 5e-3, 2.5e-3])?);
    Ok(out)
}
