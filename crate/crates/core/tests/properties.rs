mod common;

use std::collections::BTreeMap;

use num_complex::Complex64;
use proptest::prelude::*;
use thick_core::microformal::{compose, poisson_bracket, pullback, ThickMorphism};
use thick_core::{parse, Family, GradedSeries, Grading, Monomial, Polynomial, Rational, Var};

const VARS: [Var; 5] = [Var::x(1), Var::x(2), Var::q(1), Var::q(2), Var::EPS];

fn rational() -> impl Strategy<Value = Rational> {
    (-6i64..=6, 1i64..=4).prop_map(|(n, d)| Rational::new(n.into(), d.into()))
}

fn poly_in(vars: &'static [Var], max_deg: u32, max_terms: usize) -> impl Strategy<Value = Polynomial> {
    let term = (rational(), proptest::collection::vec((0..vars.len(), 1..=max_deg), 0..=2));
    proptest::collection::vec(term, 0..=max_terms).prop_map(move |ts| {
        let mut p = Polynomial::zero();
        for (c, factors) in ts {
            p.add_term(Monomial::from_pairs(factors.into_iter().map(|(i, e)| (vars[i], e))), c);
        }
        p
    })
}

fn poly() -> impl Strategy<Value = Polynomial> {
    poly_in(&VARS, 3, 5)
}

const XQ1: [Var; 2] = [Var::x(1), Var::q(1)];
const XQ2: [Var; 4] = [Var::x(1), Var::x(2), Var::q(1), Var::q(2)];
const X1: [Var; 1] = [Var::x(1)];
const Y1: [Var; 1] = [Var::y(1)];
const EPS_X: [Var; 2] = [Var::EPS, Var::x(1)];

fn eval_at(p: &Polynomial, pt: &[f64; 5]) -> Complex64 {
    let point: BTreeMap<Var, Complex64> = VARS.iter().zip(pt).map(|(v, x)| (*v, Complex64::new(*x, 0.0))).collect();
    p.eval_numeric(&point).unwrap()
}

fn admissible(h: Polynomial) -> ThickMorphism {
    let s = parse("x1*q1").unwrap() + &Polynomial::var(Var::EPS) * &h;
    ThickMorphism::from_polynomial(1, 1, &s, Grading::default(), 4).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ring_axioms(a in poly(), b in poly(), c in poly()) {
        prop_assert_eq!(&a + &b, &b + &a);
        prop_assert_eq!(&a * &b, &b * &a);
        prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
        prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
        prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
        prop_assert!((&a - &a).is_zero());
        prop_assert_eq!(&a * &Polynomial::one(), a.clone());
    }

    #[test]
    fn leibniz_rule(a in poly(), b in poly(), k in 0usize..5) {
        let v = VARS[k];
        prop_assert_eq!((&a * &b).partial(v), &(&a.partial(v) * &b) + &(&a * &b.partial(v)));
    }

    #[test]
    fn print_parse_round_trip(a in poly()) {
        let text = a.to_string();
        prop_assert_eq!(parse(&text).unwrap(), a);
    }

    #[test]
    fn evaluation_is_a_homomorphism(a in poly(), b in poly(), pt in proptest::array::uniform5(-1.5f64..1.5)) {
        let lhs = eval_at(&(&a * &b), &pt);
        let rhs = eval_at(&a, &pt) * eval_at(&b, &pt);
        prop_assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + rhs.norm()));
        let sum = eval_at(&(&a + &b), &pt) - eval_at(&a, &pt) - eval_at(&b, &pt);
        prop_assert!(sum.norm() <= 1e-9 * (1.0 + eval_at(&a, &pt).norm()));
    }

    #[test]
    fn truncation_commutes_with_product(a in poly(), b in poly(), order in 0u32..5) {
        let g = Grading::default();
        let sa = GradedSeries::truncate(&a, g, order);
        let sb = GradedSeries::truncate(&b, g, order);
        prop_assert_eq!(sa.mul(&sb).unwrap(), GradedSeries::truncate(&(&a * &b), g, order));
        prop_assert_eq!(sa.add(&sb).unwrap(), GradedSeries::truncate(&(&a + &b), g, order));
        prop_assert!(sa.body().terms().all(|(m, _)| g.grade(m) <= order as u64));
    }

    #[test]
    fn log_exp_inverse(h in poly_in(&EPS_X, 2, 4), order in 1u32..6) {
        let g = Grading::default();
        let a = &Polynomial::var(Var::EPS) * &h;
        let one_plus = GradedSeries::truncate(&(Polynomial::one() + a.clone()), g, order);
        prop_assert_eq!(one_plus.log_series().unwrap().exp_series().unwrap(), one_plus.clone());
        let sa = GradedSeries::truncate(&a, g, order);
        prop_assert_eq!(sa.exp_series().unwrap().log_series().unwrap(), sa);
    }

    #[test]
    fn poisson_jacobi_identity(
        f in poly_in(&XQ2, 2, 3), g in poly_in(&XQ2, 2, 3), h in poly_in(&XQ2, 2, 3)
    ) {
        let pb = |a: &Polynomial, b: &Polynomial| poisson_bracket(a, b);
        let total = pb(&f, &pb(&g, &h)) + pb(&g, &pb(&h, &f)) + pb(&h, &pb(&f, &g));
        prop_assert!(total.is_zero());
        prop_assert_eq!(pb(&f, &g), -pb(&g, &f));
    }

    #[test]
    fn functoriality_in_one_dimension(
        h1 in poly_in(&XQ1, 2, 3), h2 in poly_in(&XQ1, 2, 3), g in poly_in(&Y1, 3, 3)
    ) {
        let (a, b) = (admissible(h1), admissible(h2));
        let direct = pullback(&compose(&b, &a).unwrap(), &g).unwrap().f;
        let step = pullback(&b, &g).unwrap().f.body().rename_family(Family::X, Family::Y);
        prop_assert_eq!(direct, pullback(&a, &step).unwrap().f);
    }

    #[test]
    fn identity_is_neutral(h in poly_in(&XQ1, 2, 3), f in poly_in(&X1, 3, 3)) {
        let id = ThickMorphism::identity(1, 4).unwrap();
        let a = admissible(h);
        prop_assert_eq!(&compose(&id, &a).unwrap(), &a);
        prop_assert_eq!(&compose(&a, &id).unwrap(), &a);
        let g = f.rename_family(Family::X, Family::Y);
        prop_assert_eq!(pullback(&id, &g).unwrap().f.into_body(), f);
    }
}
