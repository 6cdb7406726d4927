mod common;

use nalgebra::{DMatrix, DVector};
use thick_core::quantum::{
    classical_limit_sweep, numeric_oscillatory_integral, quantum_pullback_formal, HbarOrder, Quadrature,
    QuantumMorphism, SweepConfig,
};
use thick_core::{parse, Grading};

use common::*;

fn morphism(s: &str, n1: u32, n2: u32, order: u32) -> QuantumMorphism {
    QuantumMorphism::from_polynomial(n1, n2, &parse(s).unwrap(), Grading::default(), order).unwrap()
}

#[test]
fn two_dimensional_gaussian() {
    // S = x1 q1 + x2 q2 + x1 q2/2 + eps (q1^2/2 + q1 q2/4 - q2^2/3) + eps x1 x2
    let q = morphism(
        "x1*q1 + x2*q2 + (1/2)*x1*q2 + eps*((1/2)*q1^2 + (1/4)*q1*q2 - (1/3)*q2^2) + eps*x1*x2",
        2,
        2,
        30,
    );
    let g = parse("(1/2)*y1^2 - (1/4)*y1*y2 + (1/3)*y2^2 + (1/5)*y1").unwrap();
    let e = 0.25;
    let oracle = Gaussian {
        c: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
        a: DMatrix::from_row_slice(2, 2, &[e, e / 4.0, e / 4.0, -2.0 * e / 3.0]),
        d: DMatrix::from_row_slice(2, 2, &[0.0, e, e, 0.0]),
        g: DMatrix::from_row_slice(2, 2, &[1.0, -0.25, -0.25, 2.0 / 3.0]),
        b: DVector::from_column_slice(&[0.2, 0.0]),
    };
    let (x, hbar) = ([0.6, -0.4], 0.05);
    let quad = Quadrature { window: 4.0, step: hbar / 4.0 };
    let v = numeric_oscillatory_integral(&q, &g, &rat(1, 4), &x, hbar, quad).unwrap();
    let exact = oracle.value(&x, hbar);
    assert!(rel_err(v, exact) < 1e-6, "{v} vs {exact}");
}

#[test]
fn gaussian_with_hbar_correction() {
    // S1 = x1 shifts the phase by hbar * x1 exactly
    let q = morphism("x1*q1 + (1/2)*eps*q1^2 + hbar*x1", 1, 1, 30);
    let g = parse("(1/2)*y1^2 - y1").unwrap();
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    let oracle = Gaussian { c: m(1.0), a: m(-0.5), d: m(0.0), g: m(1.0), b: DVector::from_element(1, -1.0) };
    let hbar = 0.1;
    let quad = Quadrature { window: 4.0, step: hbar / 8.0 };
    let v = numeric_oscillatory_integral(&q, &g, &rat(-1, 2), &[0.3], hbar, quad).unwrap();
    let exact = oracle.value(&[0.3], hbar) * num_complex::Complex64::from_polar(1.0, 0.3);
    assert!(rel_err(v, exact) < 1e-6, "{v} vs {exact}");
}

#[test]
fn quartic_classical_limit() {
    let q = morphism("x1*q1 + (1/2)*eps*q1^2", 1, 1, 18);
    let g = parse("(1/2)*y1^2 + (1/12)*y1^4").unwrap();
    let hbars: Vec<f64> = (0..3).map(|k| 0.02 * 0.5f64.powi(k)).collect();
    let cfg = SweepConfig { window: 2.5, step_ratio: 0.05 };
    let r = classical_limit_sweep(&q, &g, &rat(1, 5), &[0.7], &hbars, cfg).unwrap();
    assert!(r.records.iter().all(|x| x.branch_ok));
    let s0 = r.slope_err0.unwrap();
    let s1 = r.slope_err1.unwrap();
    assert!(s0 >= 0.8, "err0 slope {s0}");
    assert!(s1 >= 1.8, "err1 slope {s1}");
    let formal = quantum_pullback_formal(&q, &g, HbarOrder::One).unwrap();
    assert!(!formal.f1.im.is_zero());
}
