use hzwalk_core::exactnum::{ExtendedPoint, Rational};
use hzwalk_core::piecewise::{construct_prechain, PiecewiseProjectiveMap};
use hzwalk_core::schreier::comparison_kernel;
use hzwalk_core::walk::{
    entropy_estimate, estimate_returns, lamplighter_demo, summability_diagnostic, trajectory_rng, Execution, GroupMeasure,
    KernelWalk, PowerLawSampler,
};
use num_bigint::BigInt;

fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

#[test]
fn power_law_frequencies_match_the_mass_function() {
    let p = PowerLawSampler::new(0.8).unwrap();
    let mut rng = trajectory_rng(11, 0);
    let n = 40_000;
    let draws: Vec<BigInt> = (0..n).map(|_| p.sample_abs(&mut rng)).collect();
    for m in 1..=4u64 {
        let freq = draws.iter().filter(|d| **d == BigInt::from(m)).count() as f64 / n as f64;
        let want = p.pmf_abs(m);
        let se = (want * (1.0 - want) / n as f64).sqrt();
        assert!((freq - want).abs() < 5.0 * se, "m = {m}: {freq} vs {want}");
    }
    // P(|n| > M) ~ M^{-α} / (α ζ(1 + α))
    let big = 100_000u64;
    let tail = draws.iter().filter(|d| **d > BigInt::from(big)).count() as f64 / n as f64;
    let want = (big as f64).powf(-0.8) / (0.8 * p.zeta());
    assert!(
        (tail - want).abs() < 5.0 * (want / n as f64).sqrt() + 1e-4,
        "{tail} vs {want}"
    );
}

#[test]
fn entropy_of_simple_measures() {
    let id = GroupMeasure::point_mass(PiecewiseProjectiveMap::identity());
    let r = entropy_estimate(&id, 5, 200, 1, Execution::Sequential).unwrap();
    assert_eq!((r.distinct, r.entropy), (1, 0.0));
    let pm = GroupMeasure::uniform(vec![
        PiecewiseProjectiveMap::translation(1),
        PiecewiseProjectiveMap::translation(-1),
    ])
    .unwrap();
    let r = entropy_estimate(&pm, 1, 4000, 1, Execution::Sequential).unwrap();
    assert!((r.entropy - std::f64::consts::LN_2).abs() < 0.01);
}

#[test]
fn summability_partial_sums_are_monotone() {
    let s: ExtendedPoint = "0+1*sqrt(3)".parse().unwrap();
    let pc = construct_prechain(&s).unwrap();
    let mu = GroupMeasure::witness_measure(&pc.h_s, &pc.h_tilde, ratio(1, 4), ratio(4, 5)).unwrap();
    let r = summability_diagnostic(&mu, &s, &s, 200, 40, 5, Execution::Sequential).unwrap();
    assert_eq!(r.cumulative.len(), 200);
    assert!(r.cumulative.windows(2).all(|w| w[1] >= w[0]));
    // the first step hits s exactly when h_s^{±1} is drawn
    assert!(r.hit_mass[0] > 0.0);
    // h̃_s breaks off the orbit of s, so only h_s^{±1} contribute: 2 · 3/16
    assert_eq!(r.f_mu_atoms_l1, ratio(3, 8));
    assert!(summability_diagnostic(&mu, &s, &"1*sqrt(2)".parse().unwrap(), 10, 2, 5, Execution::Sequential).is_err());
}

#[test]
fn kernel_walk_returns_stay_bounded() {
    let pc = construct_prechain(&"0+1*sqrt(3)".parse().unwrap()).unwrap();
    let kernel = comparison_kernel(&pc.f, &pc.g, &pc.a, &pc.b, &pc.c, &pc.d).unwrap();
    let est = estimate_returns(&KernelWalk { kernel }, &[100, 200], 50, 3, Execution::Sequential);
    assert!(est[0].mean <= est[1].mean);
    assert!(est[1].mean < 10.0);
}

#[test]
fn lamplighter_contrast() {
    let r = lamplighter_demo(0.8, &[2000, 4000], 200, 7, Execution::Sequential).unwrap();
    assert!(r.transient.iter().all(|&f| f > 0.9));
    assert!(r.control.iter().all(|&f| f < 0.75));
    assert!(lamplighter_demo(1.5, &[10], 1, 7, Execution::Sequential).is_err());
}

fn sqrt3() -> ExtendedPoint {
    "0+1*sqrt(3)".parse().unwrap()
}

fn witness_mu() -> (hzwalk_core::piecewise::Prechain, GroupMeasure) {
    let pc = construct_prechain(&sqrt3()).unwrap();
    let mu = GroupMeasure::witness_measure(&pc.h_s, &pc.h_tilde, ratio(1, 4), ratio(4, 5)).unwrap();
    (pc, mu)
}

fn within_sigmas(freq: f64, p: f64, n: usize, k: f64) -> bool {
    (freq - p).abs() <= k * (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn atom_frequencies_match_weights() {
    let (_, mu) = witness_mu();
    let mut rng = trajectory_rng(21, 0);
    let n = 100_000;
    let mut counts = [0usize; 5];
    for _ in 0..n {
        match mu.sample_symbolic(&mut rng) {
            hzwalk_core::walk::Increment::Atom(i) => counts[i] += 1,
            _ => counts[4] += 1,
        }
    }
    for (i, &c) in counts.iter().enumerate() {
        let p = if i < 4 { 0.1875 } else { 0.25 };
        assert!(within_sigmas(c as f64 / n as f64, p, n, 3.0), "slot {i}: {c}");
    }
}

#[test]
fn tail_only_unit_jump_frequency() {
    let tail = hzwalk_core::walk::HeavyTail {
        base: PiecewiseProjectiveMap::translation(1),
        alpha: ratio(4, 5),
        weight: ratio(1, 1),
    };
    let mu = GroupMeasure::new(vec![], Some(tail), false).unwrap();
    let p = mu.sampler().unwrap().pmf_abs(1) / 2.0;
    let mut rng = trajectory_rng(22, 0);
    let n = 100_000;
    let x = ExtendedPoint::Finite(0.into());
    let hits = (0..n)
        .filter(|_| hzwalk_core::walk::sample_increment(&mu, &mut rng).apply(&x) == ExtendedPoint::Finite(1.into()))
        .count();
    assert!(within_sigmas(hits as f64 / n as f64, p, n, 3.0), "{hits}");
}

#[test]
fn smoothing_has_poisson_mean() {
    let mu = GroupMeasure::point_mass(PiecewiseProjectiveMap::translation(1)).with_smoothing(true);
    let mut rng = trajectory_rng(23, 0);
    let n = 20_000;
    let zero = ExtendedPoint::Finite(0.into());
    let total: f64 = (0..n)
        .map(|_| {
            hzwalk_core::walk::sample_increment(&mu, &mut rng)
                .apply(&zero)
                .finite()
                .unwrap()
                .to_f64()
        })
        .sum();
    assert!((total / n as f64 - 1.0).abs() < 3.0 / (n as f64).sqrt());
}

#[test]
fn degenerate_walks() {
    let s = sqrt3();
    let pc = construct_prechain(&s).unwrap();
    let h = GroupMeasure::point_mass(pc.h_s.clone());
    let est = estimate_returns(
        &hzwalk_core::walk::MeasureWalk::new(&h, &s),
        &[50],
        3,
        1,
        Execution::Sequential,
    );
    assert_eq!(est[0].mean, 50.0);

    let r = summability_diagnostic(&h, &s, &s, 30, 2, 1, Execution::Sequential).unwrap();
    assert!(r.cumulative.iter().enumerate().all(|(i, &v)| v == (i + 1) as f64));
    let shift = GroupMeasure::point_mass(PiecewiseProjectiveMap::translation(1));
    let r = summability_diagnostic(&shift, &s, &s, 30, 2, 1, Execution::Sequential).unwrap();
    assert!(r.cumulative.iter().all(|&v| v == 0.0));

    let w = hzwalk_core::walk::nontriviality_witness(&h, &s, 100, 10, 1, Execution::Sequential).unwrap();
    assert_eq!((w.stabilized, w.verdict), (0, hzwalk_core::walk::Verdict::Fail));
    let w = hzwalk_core::walk::nontriviality_witness(&shift, &s, 100, 10, 1, Execution::Sequential).unwrap();
    assert_eq!(w.verdict, hzwalk_core::walk::Verdict::Fail);
    assert!(w.histogram.keys().all(|&v| v == 0));
}

#[test]
fn convex_mix_summability_flattens() {
    let (_, mu) = witness_mu();
    let r = summability_diagnostic(&mu, &sqrt3(), &sqrt3(), 2000, 100, 2026, Execution::Sequential).unwrap();
    let total = *r.cumulative.last().unwrap();
    let last_decile = total - r.cumulative[1799];
    assert!(last_decile < 0.1 * total, "{last_decile} of {total}");
}

#[test]
fn entropy_rate_is_nonincreasing() {
    let (_, mu) = witness_mu();
    let rates: Vec<f64> = [4, 8, 16]
        .iter()
        .map(|&n| {
            entropy_estimate(&mu, n, 200, 2026, Execution::Sequential)
                .unwrap()
                .entropy_per_step
        })
        .collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
}

#[test]
fn symmetric_walk_has_no_drift() {
    let (_, mu) = witness_mu();
    let s = sqrt3();
    let signs = hzwalk_core::walk::run_trajectories(400, 2026, Execution::Sequential, |_, rng| {
        let t = hzwalk_core::walk::simulate_config_walk(&mu, &s, &s, 200, rng).unwrap();
        match t.x.cmp(&s) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Less => -1.0,
            std::cmp::Ordering::Equal => 0.0,
        }
    });
    let n = signs.len() as f64;
    let mean = signs.iter().sum::<f64>() / n;
    assert!(mean.abs() <= 3.0 / n.sqrt(), "{mean}");
}

#[test]
fn runs_are_seed_deterministic() {
    let (_, mu) = witness_mu();
    let run = |seed| {
        let r = hzwalk_core::walk::nontriviality_witness(&mu, &sqrt3(), 300, 20, seed, Execution::Sequential).unwrap();
        (r.histogram, r.stabilized)
    };
    assert_eq!(run(5), run(5));
    let par = hzwalk_core::walk::nontriviality_witness(&mu, &sqrt3(), 300, 20, 5, Execution::Parallel(3)).unwrap();
    assert_eq!((par.histogram, par.stabilized), run(5));
}

#[test]
fn lamplighter_non_stabilized_fraction_does_not_grow() {
    let r = lamplighter_demo(0.8, &[5000, 10_000], 400, 2026, Execution::Sequential).unwrap();
    assert!(r.transient[1] >= r.transient[0], "{:?}", r.transient);
}
