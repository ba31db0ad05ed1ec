//! Property tests with oracles that share no code with the library routes
//! they check.

use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

use bitnet_mf::backprop::{risk_gradient, LossSpec};
use bitnet_mf::constraint::WeightMatrix;
use bitnet_mf::dataset::Dataset;
use bitnet_mf::experiment::records::results_to_string;
use bitnet_mf::experiment::snapshot::snapshot_to_string;
use bitnet_mf::experiment::{parse_config, parse_results, parse_snapshot, ResultRecord, Tag};
use bitnet_mf::forward::{
    analytic_forward_lipschitz, beta_scale, estimate_forward_lipschitz, network_output, quantize_weights, Activation,
    Architecture, LipschitzProbe, NetworkState,
};
use bitnet_mf::gradcheck::{compare_gradients, finite_difference_gradient, GradCheckTolerance};
use bitnet_mf::meanfield::{singular_integral_check, wasserstein1, wasserstein2, EmpiricalMeasure};
use bitnet_mf::quant::SmoothingParams;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Exact min-cost perfect matching by dynamic programming over subsets of
/// the second point set.
fn subset_dp_cost(xs: &[Vec<f64>], ys: &[Vec<f64>], squared: bool) -> f64 {
    let n = xs.len();
    let cost = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
        if squared {
            d2
        } else {
            d2.sqrt()
        }
    };
    let mut best = vec![f64::INFINITY; 1 << n];
    best[0] = 0.0;
    for mask in 0usize..(1 << n) {
        let i = mask.count_ones() as usize;
        if i >= n || !best[mask].is_finite() {
            continue;
        }
        for j in 0..n {
            if mask & (1 << j) == 0 {
                let next = mask | (1 << j);
                best[next] = best[next].min(best[mask] + cost(&xs[i], &ys[j]));
            }
        }
    }
    best[(1 << n) - 1] / n as f64
}

fn repeat_each(points: &[Vec<f64>], times: usize) -> Vec<Vec<f64>> {
    points
        .iter()
        .flat_map(|p| std::iter::repeat_n(p.clone(), times))
        .collect()
}

fn points(n: std::ops::RangeInclusive<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, dim), n)
}

fn measure(p: &[Vec<f64>]) -> EmpiricalMeasure {
    EmpiricalMeasure::from_points(p).unwrap()
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn equal_size_distances_match_subset_dp(
        (xs, ys) in (1usize..=3, 1usize..=8).prop_flat_map(|(d, n)| (points(n..=n, d), points(n..=n, d)))
    ) {
        let (mu, nu) = (measure(&xs), measure(&ys));
        let w1 = wasserstein1(&mu, &nu).unwrap();
        let w2 = wasserstein2(&mu, &nu).unwrap();
        prop_assert!((w1 - subset_dp_cost(&xs, &ys, false)).abs() <= 1e-10);
        prop_assert!((w2 - subset_dp_cost(&xs, &ys, true).sqrt()).abs() <= 1e-10);
    }

    #[test]
    fn unequal_size_distances_match_refined_dp(
        (xs, ys) in (1usize..=2, 1usize..=3, 1usize..=4)
            .prop_filter("refinement of at most 12 atoms", |(_, n, m)| n * m / gcd(*n, *m) <= 12)
            .prop_flat_map(|(d, n, m)| (points(n..=n, d), points(m..=m, d)))
    ) {
        let (n, m) = (xs.len(), ys.len());
        let l = n * m / gcd(n, m);
        let (bx, by) = (repeat_each(&xs, l / n), repeat_each(&ys, l / m));
        let (mu, nu) = (measure(&xs), measure(&ys));
        prop_assert!((wasserstein1(&mu, &nu).unwrap() - subset_dp_cost(&bx, &by, false)).abs() <= 1e-10);
        prop_assert!((wasserstein2(&mu, &nu).unwrap() - subset_dp_cost(&bx, &by, true).sqrt()).abs() <= 1e-10);
    }

    #[test]
    fn distances_are_metrics(
        (a, b, c) in (1usize..=3).prop_flat_map(|d| (points(1..=6, d), points(1..=6, d), points(1..=6, d)))
    ) {
        let (ma, mb, mc) = (measure(&a), measure(&b), measure(&c));
        for dist in [wasserstein1, wasserstein2] {
            let ab = dist(&ma, &mb).unwrap();
            prop_assert!((ab - dist(&mb, &ma).unwrap()).abs() <= 1e-12);
            prop_assert!(ab <= dist(&ma, &mc).unwrap() + dist(&mc, &mb).unwrap() + 1e-10);
            prop_assert_eq!(dist(&ma, &ma).unwrap(), 0.0);
        }
        prop_assert!(wasserstein1(&ma, &mb).unwrap() <= wasserstein2(&ma, &mb).unwrap() + 1e-12);
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Matrices with entries on the grid `k/64`, so shifts by multiples of
/// 1/64 are exact in floating point.
fn dyadic_matrix() -> impl Strategy<Value = WeightMatrix> {
    (1usize..8, 1usize..8).prop_flat_map(|(n, m)| {
        proptest::collection::vec(-64i32..=64, n * m)
            .prop_map(move |k| WeightMatrix::from_rows(n, m, k.iter().map(|&v| v as f64 / 64.0).collect()).unwrap())
    })
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn constant_shift_leaves_quantized_weights_and_scale_unchanged(
        w in dyadic_matrix(),
        shift in -64i32..=64,
        eps in prop::sample::select(vec![1.0, 0.3, 0.05, 1e-3]),
    ) {
        let c = shift as f64 / 64.0;
        let shifted = WeightMatrix::new(w.as_array().mapv(|v| v + c)).unwrap();
        let p = SmoothingParams::new(eps, 1, 0.5).unwrap();
        prop_assert_eq!(quantize_weights(&shifted, &p), quantize_weights(&w, &p));
        prop_assert_eq!(beta_scale(&shifted, &p), beta_scale(&w, &p));
    }
}

#[derive(Debug, Clone)]
struct Instance {
    state: NetworkState,
    data: Dataset,
}

fn instance(max_depth: usize, max_width: usize, eps: Vec<f64>) -> impl Strategy<Value = Instance> {
    (
        1usize..=max_width,
        proptest::collection::vec(1usize..=max_width, 0..max_depth),
        prop::sample::select(eps),
        1u32..=2,
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(input, hidden, eps, bits, identity, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut widths = hidden;
            widths.push(1);
            let act = if identity {
                Activation::Identity
            } else {
                Activation::Tanh
            };
            let arch = Architecture::uniform(input, widths, act).unwrap();
            let weights = (0..arch.depth())
                .map(|l| {
                    let (n, m) = arch.layer_shape(l);
                    WeightMatrix::new(Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..1.0))).unwrap()
                })
                .collect();
            let p = SmoothingParams::new(eps, bits, 0.5).unwrap();
            let state = NetworkState::new(arch, weights, p).unwrap();
            let inputs = Array2::from_shape_fn((6, input), |_| rng.gen_range(-1.0..1.0));
            let targets = Array2::from_shape_fn((6, 1), |_| rng.gen_range(-1.0..1.0));
            Instance {
                state,
                data: Dataset::new(inputs, targets, 1.0).unwrap(),
            }
        })
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn reverse_mode_matches_central_differences(inst in instance(3, 4, vec![1.0, 0.3, 0.05])) {
        let loss = LossSpec::default();
        let g = risk_gradient(&inst.state, &inst.data, &loss).unwrap();
        let fd = finite_difference_gradient(&inst.state, &inst.data, &loss).unwrap();
        let tol = GradCheckTolerance { small: 1e-3, ..GradCheckTolerance::default() };
        let rep = compare_gradients(&g, &fd, &tol);
        prop_assert!(rep.passed(), "{:?}", rep.failures);
    }

    #[test]
    fn outputs_finite_on_support(inst in instance(3, 8, vec![1.0, 0.1, 1e-3, 1e-6])) {
        for i in 0..inst.data.len() {
            prop_assert!(network_output(inst.data.input(i), &inst.state).unwrap()[0].is_finite());
        }
        let corners = vec![1.0; inst.state.architecture().input_dim()];
        prop_assert!(network_output(&corners, &inst.state).unwrap()[0].is_finite());
    }

    #[test]
    fn lipschitz_estimate_below_recursive_bound(inst in instance(3, 4, vec![1.0, 0.3, 0.05])) {
        let probe = LipschitzProbe { trials: 50, radius: 1e-4, clamp: Some(1.0), seed: 3 };
        let est = estimate_forward_lipschitz(&inst.state, &inst.data, &probe).unwrap();
        let bound = analytic_forward_lipschitz(inst.state.architecture(), inst.state.smoothing(), 1.0);
        prop_assert!(est.estimate <= bound, "{} > {}", est.estimate, bound);
    }

    #[test]
    fn singular_integral_within_uniform_bound(
        atoms in (1usize..=3).prop_flat_map(|d| points(1..=12, d)),
        center in -1.0f64..1.0,
    ) {
        let mu = measure(&atoms);
        let phi = |w: &[f64]| (-(w[0] - center).powi(2)).exp() * 0.75;
        let rep = singular_integral_check(&mu, phi, 0.75, 0, &[1.0, 0.1, 0.01]).unwrap();
        for e in &rep.entries {
            prop_assert!(e.integral.abs() <= 1.5 * (1.0 + 1e-9), "{e:?}");
        }
    }
}

fn finite_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        -1.0f64..1.0,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(5e-324),
    ]
}

/// Bit equality, except that files write both zeros as `+0`.
fn same_float(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a == 0.0 && b == 0.0)
}

fn bits(v: f64) -> u64 {
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

fn record() -> impl Strategy<Value = ResultRecord> {
    (
        "[a-z0-9,\" -]{0,12}",
        "[a-z_]{1,16}",
        proptest::option::of(0usize..4),
        proptest::option::of(finite_f64()),
        proptest::option::of(finite_f64()),
        proptest::option::of(1usize..512),
        finite_f64(),
        prop::sample::select(vec![Tag::Measured, Tag::Bound, Tag::Diagnostic]),
    )
        .prop_map(|(run, metric, layer, time, eps, width, value, tag)| {
            let mut r = ResultRecord::new(&run, &metric, value, tag);
            if let Some(l) = layer {
                r = r.layer(l);
            }
            r.time = time;
            r.epsilon = eps;
            r.width = width;
            r
        })
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn results_round_trip_exactly(records in proptest::collection::vec(record(), 0..8)) {
        let text = results_to_string(&records).unwrap();
        let back = parse_results(&text).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            prop_assert_eq!(&a.run_id, &b.run_id);
            prop_assert_eq!(a.layer, b.layer);
            prop_assert!(same_float(a.value, b.value));
            prop_assert_eq!(a.time.map(bits), b.time.map(bits));
            prop_assert_eq!(a.epsilon.map(bits), b.epsilon.map(bits));
            prop_assert_eq!(a, b);
        }
        prop_assert_eq!(results_to_string(&back).unwrap(), text);
    }

    #[test]
    fn snapshots_round_trip_bit_exactly(
        w in (1usize..6, 1usize..6).prop_flat_map(|(n, m)| {
            proptest::collection::vec(finite_f64(), n * m)
                .prop_map(move |d| WeightMatrix::from_rows(n, m, d).unwrap())
        })
    ) {
        let back = parse_snapshot(&snapshot_to_string(&w)).unwrap();
        for (a, b) in back.as_slice().iter().zip(w.as_slice()) {
            prop_assert!(same_float(*a, *b), "{a:e} vs {b:e}");
        }
    }

    #[test]
    fn config_hash_tracks_canonical_text(
        a in (prop::sample::select(vec![0.1, 0.05, 1.0]), 1u32..=2, 0u64..3, prop::sample::select(vec!["run", "alt"])),
        b in (prop::sample::select(vec![0.1, 0.05, 1.0]), 1u32..=2, 0u64..3, prop::sample::select(vec!["run", "alt"])),
        padding in prop::sample::select(vec!["", "\n\n# comment\n"]),
    ) {
        let text = |(eps, bits, seed, name): (f64, u32, u64, &str), pad: &str| {
            format!("[output]\nname = \"{name}\"\n{pad}[smoothing]\nepsilon = {eps:?}\nbits = {bits}\n[dynamics]\nseed = {seed}\n")
        };
        let ca = parse_config(&text(a, "")).unwrap();
        let cb = parse_config(&text(b, padding)).unwrap();
        prop_assert_eq!(ca.canonical_text() == cb.canonical_text(), ca.hash() == cb.hash());
        prop_assert_eq!(a == b, ca.hash() == cb.hash());
    }
}
