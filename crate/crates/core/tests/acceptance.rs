//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Monte Carlo runs use master seed 2026.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hzwalk_core::exactnum::{is_square_free, ExtendedPoint, QuadraticNumber, Rational};
use hzwalk_core::piecewise::{
    breakpoint_count, config_act, configuration, construct_h_s_detailed, construct_prechain, membership, pm_compose, pm_inverse,
    pm_new, verify_h_s, Configuration, Membership, PiecewiseProjectiveMap, Prechain,
};
use hzwalk_core::psl2::{orbit_equivalent, pell_fundamental, stabilizer_generator, PellRhs, ProjectiveMatrix};
use hzwalk_core::schreier::{
    build_orbit_graph, comparison_kernel, verify_tree_structure, KernelCase, OrbitGraph, Step, TreePosition,
};
use hzwalk_core::walk::{
    estimate_returns, lamplighter_demo, nontriviality_witness, simulate_config_walk_recorded, trajectory_rng, Execution,
    GroupMeasure, LatticeWalk, PointWalker, PrechainTreeWalk, Verdict,
};

const SEED: u64 = 2026;

type Outcome = Result<String, String>;

fn pt(s: &str) -> ExtendedPoint {
    s.parse().expect("valid point")
}

fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

fn exec() -> Execution {
    Execution::from_threads(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn within(start: Instant, limit_secs: u64) -> Result<(), String> {
    let t = start.elapsed();
    if t > Duration::from_secs(limit_secs) {
        Err(format!("took {t:.1?}, limit {limit_secs} s"))
    } else {
        Ok(())
    }
}

fn isqrt_exact(n: u128) -> Option<u128> {
    let mut r = (n as f64).sqrt() as u128;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    (r * r == n).then_some(r)
}

fn pell_oracle(k: u64, rhs: u128) -> (BigInt, BigInt) {
    (1u128..)
        .find_map(|y| isqrt_exact(k as u128 * y * y + rhs).map(|x| (BigInt::from(x), BigInt::from(y))))
        .unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut count = 0;
    for k in 2..=60u64 {
        if !is_square_free(k) || isqrt_exact(k as u128).is_some() {
            continue;
        }
        for (rhs, n) in [(PellRhs::One, 1), (PellRhs::Four, 4)] {
            let got = pell_fundamental(k, rhs).map_err(|e| format!("k = {k}: {e}"))?;
            let want = pell_oracle(k, n);
            if got != want {
                return Err(format!("k = {k}, rhs = {n}: got {got:?}, exhaustive search gives {want:?}"));
            }
            count += 1;
        }
    }
    within(start, 5)?;
    Ok(format!(
        "{count} equations match exhaustive search in {:.2?}",
        start.elapsed()
    ))
}

fn random_word<R: Rng>(rng: &mut R, alphabet: &[PiecewiseProjectiveMap], max_len: usize) -> Vec<PiecewiseProjectiveMap> {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| alphabet[rng.random_range(0..alphabet.len())].clone())
        .collect()
}

fn prechain_alphabet(pc: &Prechain) -> Vec<PiecewiseProjectiveMap> {
    vec![
        pc.h_s.clone(),
        pm_inverse(&pc.h_s),
        pc.h_tilde.clone(),
        pm_inverse(&pc.h_tilde),
    ]
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut nontrivial = 0;
    for s in [pt("0+1*sqrt(3)"), pt("1/2+1*sqrt(2)")] {
        let pc = construct_prechain(&s).map_err(|e| format!("prechain at {s}: {e}"))?;
        let alphabet = prechain_alphabet(&pc);
        for _ in 0..250 {
            // word[0] acts first
            let word = random_word(&mut rng, &alphabet, 6);
            let product = word.iter().fold(PiecewiseProjectiveMap::identity(), |g, h| pm_compose(h, &g));
            let folded = word
                .iter()
                .rev()
                .fold(Configuration::empty(s.clone()), |c, h| config_act(h, &c));
            let direct = configuration(&product, &s);
            if direct != folded {
                return Err(format!("s = {s}: product gives {direct:?}, fold gives {folded:?}"));
            }
            nontrivial += usize::from(!direct.is_empty());
        }
    }
    within(start, 60)?;
    Ok(format!(
        "500 words agree ({nontrivial} with non-empty configuration) in {:.2?}",
        start.elapsed()
    ))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let points = ["0+1*sqrt(2)", "0+1*sqrt(3)", "0+1*sqrt(5)", "1/3+2*sqrt(6)", "-1+1*sqrt(7)"];
    for text in points {
        let s = pt(text);
        let k = s.finite().unwrap().radicand();
        let hc = construct_h_s_detailed(&s).map_err(|e| format!("{s}: {e}"))?;
        let h = &hc.map;
        if configuration(h, &s) != Configuration::delta(s.clone()) {
            return Err(format!("{s}: configuration is {:?}", configuration(h, &s)));
        }
        for b in h.breaks() {
            if *b != *s.finite().unwrap() && (b.is_rational() || b.radicand() == k) {
                return Err(format!("{s}: break {b} lies in the class of k = {k}"));
            }
        }
        if !membership(h, &Membership::HZ) {
            return Err(format!("{s}: h_s is not in H(Z)"));
        }
        verify_h_s(h, &s).map_err(|e| format!("{s}: {e}"))?;
    }
    within(start, 120)?;
    Ok(format!("5 points over k in {{2, 3, 5, 6, 7}} in {:.2?}", start.elapsed()))
}

fn criterion_4() -> Outcome {
    let s = pt("0+1*sqrt(3)");
    let gens = [
        ProjectiveMatrix::translation(1),
        ProjectiveMatrix::translation(-1),
        ProjectiveMatrix::new(0, -1, 1, 0).unwrap(),
    ];
    let expected: QuadraticNumber = "7+4*sqrt(3)".parse().unwrap();
    let reference = stabilizer_generator(&s)
        .map_err(|e| e.to_string())?
        .phi
        .ok_or("no phi at sqrt(3)")?;
    if reference != expected {
        return Err(format!("phi at sqrt(3) is {reference}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..50 {
        let len = rng.random_range(1..=16);
        let x = (0..len).fold(s.clone(), |x, _| gens[rng.random_range(0..3)].apply(&x));
        let phi = stabilizer_generator(&x).map_err(|e| format!("{x}: {e}"))?.phi;
        if phi.as_ref() != Some(&reference) {
            return Err(format!("phi at {x} is {phi:?}"));
        }
    }
    Ok(format!("50 orbit points share phi = {reference}"))
}

fn prechain_graph(pc: &Prechain) -> OrbitGraph {
    build_orbit_graph(&[pc.f.clone(), pc.g.clone()], &pc.b, 2000)
}

fn criterion_5(pc: &Prechain, graph: &mut OrbitGraph) -> Outcome {
    let start = Instant::now();
    let report = verify_tree_structure(graph, &pc.f, &pc.g, &pc.b, &pc.c).map_err(|e| e.to_string())?;
    within(start, 120)?;
    Ok(format!(
        "{} vertices: {} in the tree ({} A, {} B), {} on rays, in {:.2?}",
        report.vertices,
        report.tree_vertices,
        report.region_a,
        report.region_b,
        report.ray_vertices,
        start.elapsed()
    ))
}

/// The symbolic tree-with-rays walk agrees with the exact action.
fn tree_model_matches(pc: &Prechain) -> Result<(), String> {
    let kernel = comparison_kernel(&pc.f, &pc.g, &pc.a, &pc.b, &pc.c, &pc.d).map_err(|e| e.to_string())?;
    for i in 0..20 {
        let mut rng = trajectory_rng(SEED, i);
        let mut pos = TreePosition::root();
        let mut x = pc.b.clone();
        for _ in 0..200 {
            let step = Step::ALL[rng.random_range(0..4)];
            pos.step(step);
            x = kernel.apply(&x, step);
            if pos.decode(kernel.layout()) != x {
                return Err(format!("tree model disagrees with the exact walk at {x}"));
            }
            if pos.is_root() != (x == pc.b) {
                return Err("root detection disagrees".into());
            }
        }
    }
    Ok(())
}

fn criterion_6(pc: &Prechain) -> Outcome {
    tree_model_matches(pc)?;
    let horizons = [10_000, 20_000];
    let tree = estimate_returns(&PrechainTreeWalk, &horizons, 2000, SEED, exec());
    let line = estimate_returns(&LatticeWalk, &horizons, 2000, SEED, exec());
    let tree_growth = tree[1].mean / tree[0].mean - 1.0;
    let line_ratio = line[1].mean / line[0].mean;
    let oracle = (2.0 * 10_000.0 / std::f64::consts::PI).sqrt();
    let summary = format!(
        "prechain returns {:.3} -> {:.3} (growth {:.2}%), Z returns {:.2} -> {:.2} (ratio {:.4}, oracle {oracle:.1})",
        tree[0].mean,
        tree[1].mean,
        100.0 * tree_growth,
        line[0].mean,
        line[1].mean,
        line_ratio
    );
    let sqrt2 = std::f64::consts::SQRT_2;
    if tree_growth < 0.05 && (line_ratio - sqrt2).abs() <= 0.1 * sqrt2 && (line[0].mean / oracle - 1.0).abs() <= 0.1 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

/// `n(x)` by direct iteration of `f`, and the expected kernel weights.
fn expected_weights(pc: &Prechain, x: &ExtendedPoint) -> (KernelCase, [Rational; 4]) {
    let q = |n| ratio(n, 4);
    let z = Rational::zero;
    let in_bc = |y: &ExtendedPoint| pc.b <= *y && *y <= pc.c;
    if in_bc(x) {
        return (KernelCase::Tree, [q(1), q(1), q(1), q(1)]);
    }
    let g_inv = pm_inverse(&pc.g);
    if *x < pc.b {
        let mut y = x.clone();
        let mut n = 0u64;
        while !in_bc(&y) {
            y = pc.f.apply(&y);
            n += 1;
        }
        return if n % 2 == 1 {
            (KernelCase::LeftOdd, [q(1), q(3), z(), z()])
        } else {
            (KernelCase::LeftEven, [q(3), q(1), z(), z()])
        };
    }
    let mut y = x.clone();
    let mut m = 0u64;
    while !in_bc(&y) {
        y = g_inv.apply(&y);
        m += 1;
    }
    if m % 2 == 1 {
        (KernelCase::RightOdd, [z(), z(), q(3), q(1)])
    } else {
        (KernelCase::RightEven, [z(), z(), q(1), q(3)])
    }
}

fn criterion_7(pc: &Prechain, graph: &OrbitGraph) -> Outcome {
    let kernel = comparison_kernel(&pc.f, &pc.g, &pc.a, &pc.b, &pc.c, &pc.d).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut seen = std::collections::BTreeMap::new();
    for _ in 0..200 {
        let x = graph.point(rng.random_range(0..graph.len()));
        kernel.check_vertex(x).map_err(|e| e.to_string())?;
        let (case, weights) = expected_weights(pc, x);
        let got_case = kernel.case(x).map_err(|e| e.to_string())?;
        if got_case != case {
            return Err(format!("{x}: case {got_case:?}, expected {case:?}"));
        }
        for (step, w) in Step::ALL.into_iter().zip(weights) {
            let got = kernel.weight(x, step).map_err(|e| e.to_string())?;
            if got != w {
                return Err(format!("{x}: weight of {step:?} is {got}, expected {w}"));
            }
        }
        *seen.entry(format!("{case:?}")).or_insert(0) += 1;
    }
    Ok(format!("200 vertices, row sums and symmetry exact, cases {seen:?}"))
}

fn criterion_8(pc: &Prechain) -> Outcome {
    let s = pt("0+1*sqrt(3)");
    let mu = GroupMeasure::witness_measure(&pc.h_s, &pc.h_tilde, ratio(1, 4), ratio(4, 5)).map_err(|e| e.to_string())?;
    let report = nontriviality_witness(&mu, &s, 20_000, 500, SEED, exec()).map_err(|e| e.to_string())?;
    let control_mu = GroupMeasure::uniform(vec![
        PiecewiseProjectiveMap::translation(1),
        PiecewiseProjectiveMap::translation(-1),
    ])
    .map_err(|e| e.to_string())?;
    let control = nontriviality_witness(&control_mu, &s, 20_000, 500, SEED, exec()).map_err(|e| e.to_string())?;
    let control_zero = control.histogram.keys().all(|&v| v == 0);
    let summary = format!(
        "witness {:?} (stabilized {:.1}%, histogram {:?}); control {:?} (values {:?})",
        report.verdict,
        100.0 * report.stabilized_fraction,
        report.histogram,
        control.verdict,
        control.histogram
    );
    if report.verdict == Verdict::Succeed && control.verdict == Verdict::Fail && control_zero {
        Ok(summary)
    } else {
        Err(summary)
    }
}

/// An element of G̃ with a rational break and distinct end germs.
fn rational_break_map() -> PiecewiseProjectiveMap {
    pm_new(
        vec![pt("0"), pt("-1/2+1/2*sqrt(5)")],
        vec![
            ProjectiveMatrix::identity(),
            ProjectiveMatrix::new(1, 0, -1, 1).unwrap(),
            ProjectiveMatrix::translation(1),
        ],
    )
    .expect("valid map")
}

fn criterion_9() -> Outcome {
    let pc = construct_prechain(&pt("0+1*sqrt(3)")).map_err(|e| e.to_string())?;
    let r = rational_break_map();
    let mut alphabet = prechain_alphabet(&pc);
    alphabet.extend([
        r.clone(),
        pm_inverse(&r),
        PiecewiseProjectiveMap::translation(1),
        PiecewiseProjectiveMap::translation(-1),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let word_product =
        |w: Vec<PiecewiseProjectiveMap>| w.iter().fold(PiecewiseProjectiveMap::identity(), |g, h| pm_compose(h, &g));
    let mut tight = 0;
    for _ in 0..500 {
        let g = word_product(random_word(&mut rng, &alphabet, 3));
        let h = word_product(random_word(&mut rng, &alphabet, 3));
        let (bg, bh, bgh) = (
            breakpoint_count(&g),
            breakpoint_count(&h),
            breakpoint_count(&pm_compose(&g, &h)),
        );
        if bgh > bg + bh {
            return Err(format!("Br(gh) = {bgh} > {bg} + {bh} for g = {g}, h = {h}"));
        }
        tight += usize::from(bgh == bg + bh);
    }
    Ok(format!("500 pairs satisfy Br(gh) <= Br(g) + Br(h) ({tight} with equality)"))
}

fn criterion_10(graph: &OrbitGraph) -> Outcome {
    let root = graph.root().clone();
    if let Some(v) = graph.points().find(|v| !orbit_equivalent(&root, v)) {
        return Err(format!("BFS vertex {v} judged outside the orbit"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..100 {
        let den = rng.random_range(1..=50i64);
        let mut q = rng.random_range(-40..=40i64);
        if q == 0 {
            q = 1;
        }
        let x = ExtendedPoint::Finite(QuadraticNumber::new(
            ratio(rng.random_range(-200..=200), den),
            ratio(q, den),
            2,
        ));
        if orbit_equivalent(&root, &x) {
            return Err(format!("{x} judged equivalent to {root}"));
        }
    }
    Ok(format!(
        "{} BFS vertices equivalent, 100 points of Q(sqrt 2) rejected",
        graph.len()
    ))
}

fn criterion_11() -> Outcome {
    let report = lamplighter_demo(0.8, &[10_000], 1000, SEED, exec()).map_err(|e| e.to_string())?;
    let (transient, control) = (report.transient[0], report.control[0]);
    let summary = format!(
        "alpha = 0.8 stabilized {:.1}%, SRW control {:.1}%",
        100.0 * transient,
        100.0 * control
    );
    if transient >= 0.95 && control <= 0.5 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn criterion_12(pc: &Prechain) -> Outcome {
    let s = pt("0+1*sqrt(3)");
    let base = GroupMeasure::witness_measure(&pc.h_s, &pc.h_tilde, ratio(1, 4), ratio(4, 5)).map_err(|e| e.to_string())?;
    let smooth = base.clone().with_smoothing(true);
    let gammas = [
        s.clone(),
        pc.h_tilde.apply(&s),
        pm_inverse(&pc.h_s).apply(&pc.h_tilde.apply(&s)),
    ];
    let walkers = [PointWalker::new(&base, &s), PointWalker::new(&smooth, &s)];
    let mut nonzero = 0;
    for seed in 0..100u64 {
        let walker = &walkers[(seed % 2) as usize];
        let gamma = &gammas[(seed % 3) as usize];
        let steps = seed % 20 + 1;
        let mut rng = trajectory_rng(SEED, seed);
        let (tracker, incs) = simulate_config_walk_recorded(walker, gamma, steps, &mut rng, true).map_err(|e| e.to_string())?;
        let product = incs.iter().fold(PiecewiseProjectiveMap::identity(), |g, inc| {
            pm_compose(&walker.measure().materialize(inc), &g)
        });
        let want = configuration(&product, &s).get(gamma);
        if tracker.value != want || tracker.x != product.apply(gamma) {
            return Err(format!(
                "seed {seed}: incremental {} at {}, product {want} at {}",
                tracker.value,
                tracker.x,
                product.apply(gamma)
            ));
        }
        nonzero += usize::from(want != 0);
    }
    Ok(format!("100 seeds agree with the full product ({nonzero} non-zero values)"))
}

fn main() {
    let pc = construct_prechain(&pt("0+1*sqrt(3)")).expect("prechain at sqrt(3)");
    let mut graph = prechain_graph(&pc);
    let mut failures = 0;
    let mut report = |n: u32, title: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {tag}: {title}: {detail}");
    };
    report(1, "Pell oracle equivalence", criterion_1());
    report(2, "cocycle identity", criterion_2());
    report(3, "h_s contract", criterion_3());
    report(4, "phi constant on the orbit", criterion_4());
    report(5, "Schreier tree structure", criterion_5(&pc, &mut graph));
    report(6, "transience against recurrence", criterion_6(&pc));
    report(7, "comparison kernel", criterion_7(&pc, &graph));
    report(8, "boundary witness", criterion_8(&pc));
    report(9, "break count subadditivity", criterion_9());
    report(10, "orbit equivalence cross-check", criterion_10(&graph));
    report(11, "lamplighter", criterion_11());
    report(12, "incremental against full product", criterion_12(&pc));
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
