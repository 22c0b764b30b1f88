use std::sync::OnceLock;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use proptest::prelude::*;

use hzwalk_core::exactnum::{qn_compare, ExtendedPoint, QuadraticNumber, Rational};
use hzwalk_core::piecewise::{
    breakpoint_count, config_act, configuration, construct_prechain, pm_compose, pm_inverse, pm_pow, Configuration,
    PiecewiseProjectiveMap, Prechain,
};
use hzwalk_core::psl2::{germ_exponent, orbit_equivalent, pell_fundamental, stabilizer_generator, PellRhs, ProjectiveMatrix};

fn rational() -> impl Strategy<Value = Rational> {
    (-200i64..200, 1i64..30).prop_map(|(n, d)| Rational::new(BigInt::from(n), BigInt::from(d)))
}

fn in_field(k: u64) -> impl Strategy<Value = QuadraticNumber> {
    (rational(), rational()).prop_map(move |(a, b)| QuadraticNumber::new(a, b, k))
}

fn same_field_triple() -> impl Strategy<Value = (QuadraticNumber, QuadraticNumber, QuadraticNumber)> {
    prop_oneof![Just(2u64), Just(3), Just(5), Just(6), Just(7), Just(11)]
        .prop_flat_map(|k| (in_field(k), in_field(k), in_field(k)))
}

fn any_number() -> impl Strategy<Value = QuadraticNumber> {
    prop_oneof![Just(1u64), Just(2), Just(3), Just(5), Just(6), Just(10)].prop_flat_map(in_field)
}

fn point() -> impl Strategy<Value = ExtendedPoint> {
    prop_oneof![9 => any_number().prop_map(ExtendedPoint::Finite), 1 => Just(ExtendedPoint::Infinity)]
}

/// Words in the generators `x ↦ x + 1` and `x ↦ −1/x` of PSL₂(ℤ).
fn matrix() -> impl Strategy<Value = ProjectiveMatrix> {
    prop::collection::vec(0usize..3, 0..10).prop_map(|w| {
        let gens = [
            ProjectiveMatrix::translation(1),
            ProjectiveMatrix::translation(-1),
            ProjectiveMatrix::new(0, -1, 1, 0).unwrap(),
        ];
        w.into_iter().fold(ProjectiveMatrix::identity(), |m, i| gens[i].compose(&m))
    })
}

fn prechain() -> &'static Prechain {
    static PC: OnceLock<Prechain> = OnceLock::new();
    PC.get_or_init(|| construct_prechain(&"0+1*sqrt(3)".parse().unwrap()).unwrap())
}

fn alphabet() -> Vec<PiecewiseProjectiveMap> {
    let pc = prechain();
    vec![
        pc.h_s.clone(),
        pm_inverse(&pc.h_s),
        pc.h_tilde.clone(),
        pm_inverse(&pc.h_tilde),
        PiecewiseProjectiveMap::translation(1),
        PiecewiseProjectiveMap::translation(-1),
    ]
}

fn word(max: usize) -> impl Strategy<Value = Vec<PiecewiseProjectiveMap>> {
    prop::collection::vec(0usize..6, 0..=max).prop_map(|w| {
        let a = alphabet();
        w.into_iter().map(|i| a[i].clone()).collect()
    })
}

fn product(w: &[PiecewiseProjectiveMap]) -> PiecewiseProjectiveMap {
    w.iter().fold(PiecewiseProjectiveMap::identity(), |g, h| pm_compose(h, &g))
}

/// Numeric value by separate rational and irrational parts.
fn approx(x: &QuadraticNumber) -> f64 {
    x.rational_part().to_f64().unwrap() + x.irrational_coeff().to_f64().unwrap() * (x.radicand() as f64).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn field_laws((x, y, z) in same_field_triple()) {
        prop_assert_eq!(&x + &y, &y + &x);
        prop_assert_eq!(&x * &y, &y * &x);
        prop_assert_eq!(&(&x + &y) + &z, &x + &(&y + &z));
        prop_assert_eq!(&(&x * &y) * &z, &x * &(&y * &z));
        prop_assert_eq!(&x * &(&y + &z), &(&x * &y) + &(&x * &z));
        prop_assert!((&x - &x).is_zero());
        if !x.is_zero() {
            prop_assert_eq!(&x * &x.recip().unwrap(), QuadraticNumber::one());
            prop_assert_eq!(&(&y / &x) * &x, y.clone());
        }
        prop_assert_eq!(x.norm(), (&x * &x.conjugate()).as_rational().unwrap());
    }

    #[test]
    fn comparison_matches_floats(x in any_number(), y in any_number()) {
        let (fx, fy) = (approx(&x), approx(&y));
        let ord = qn_compare(&x, &y);
        if (fx - fy).abs() > 1e-9 * (1.0 + fx.abs() + fy.abs()) {
            prop_assert_eq!(ord, fx.partial_cmp(&fy).unwrap());
        } else if x.radicand() == y.radicand() || x.is_rational() && y.is_rational() {
            prop_assert_eq!(ord == std::cmp::Ordering::Equal, x == y);
        }
        prop_assert_eq!(qn_compare(&y, &x), ord.reverse());
        prop_assert!((x.to_f64() - fx).abs() <= 1e-9 * (1.0 + fx.abs()));
    }

    #[test]
    fn floor_brackets(x in any_number()) {
        let f = QuadraticNumber::from_integer(x.floor());
        prop_assert!(f <= x);
        prop_assert!(x < &f + &QuadraticNumber::one());
    }

    #[test]
    fn text_round_trip(x in point()) {
        prop_assert_eq!(x.to_string().parse::<ExtendedPoint>().unwrap(), x);
    }

    #[test]
    fn action_is_a_homomorphism(m in matrix(), n in matrix(), x in point()) {
        prop_assert_eq!(m.compose(&n).apply(&x), m.apply(&n.apply(&x)));
        prop_assert_eq!(m.inverse().apply(&m.apply(&x)), x.clone());
        prop_assert!(orbit_equivalent(&x, &m.apply(&x)));
    }

    #[test]
    fn stabilizer_powers(m in matrix(), n in -3i64..=3, k in prop_oneof![Just(2u64), Just(3), Just(5), Just(7)]) {
        let x = m.apply(&ExtendedPoint::Finite(QuadraticNumber::sqrt_of(k)));
        let st = stabilizer_generator(&x).unwrap();
        let gen = st.generator.pow(n);
        prop_assert_eq!(gen.apply(&x), x.clone());
        prop_assert_eq!(germ_exponent(&gen, &x).unwrap(), n);
        // φ is a class invariant of the orbit
        let base = stabilizer_generator(&ExtendedPoint::Finite(QuadraticNumber::sqrt_of(k))).unwrap();
        prop_assert_eq!(st.phi, base.phi);
    }

    #[test]
    fn pell_solutions_satisfy_the_equation(k in 2u64..400) {
        prop_assume!(hzwalk_core::exactnum::is_square_free(k));
        for (rhs, n) in [(PellRhs::One, 1), (PellRhs::Four, 4)] {
            let (x, y) = pell_fundamental(k, rhs).unwrap();
            prop_assert_eq!(&x * &x - BigInt::from(k) * &y * &y, BigInt::from(n));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cocycle_identity(w in word(5)) {
        let s: ExtendedPoint = "0+1*sqrt(3)".parse().unwrap();
        let folded = w.iter().rev().fold(Configuration::empty(s.clone()), |c, h| config_act(h, &c));
        prop_assert_eq!(configuration(&product(&w), &s), folded);
    }

    #[test]
    fn break_count_is_subadditive(g in word(3), h in word(3)) {
        let (g, h) = (product(&g), product(&h));
        prop_assert!(breakpoint_count(&pm_compose(&g, &h)) <= breakpoint_count(&g) + breakpoint_count(&h));
        prop_assert_eq!(breakpoint_count(&pm_inverse(&g)), breakpoint_count(&g));
    }

    #[test]
    fn group_laws(a in word(2), b in word(2), c in word(2), x in any_number()) {
        let (a, b, c) = (product(&a), product(&b), product(&c));
        prop_assert_eq!(pm_compose(&pm_compose(&a, &b), &c), pm_compose(&a, &pm_compose(&b, &c)));
        prop_assert!(pm_compose(&a, &pm_inverse(&a)).is_identity());
        let x = ExtendedPoint::Finite(x);
        prop_assert_eq!(pm_compose(&a, &b).apply(&x), a.apply(&b.apply(&x)));
        prop_assert_eq!(pm_pow(&a, 2), pm_compose(&a, &a));
    }
}
