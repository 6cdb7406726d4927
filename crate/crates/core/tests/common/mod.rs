#![allow(dead_code)]

pub mod golden;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thick_core::{Monomial, Polynomial, Rational, Var};

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(n.into(), d.into())
}

pub fn small_rational(rng: &mut ChaCha8Rng) -> Rational {
    let mut n = rng.gen_range(-5i64..=5);
    if n == 0 {
        n = 1;
    }
    rat(n, rng.gen_range(1i64..=3))
}

/// Random polynomial in `vars` with total degree in `min_deg..=max_deg`.
pub fn random_poly(rng: &mut ChaCha8Rng, vars: &[Var], min_deg: u32, max_deg: u32, terms: usize) -> Polynomial {
    let mut p = Polynomial::zero();
    for _ in 0..terms {
        let deg = rng.gen_range(min_deg..=max_deg);
        let mut pairs = Vec::new();
        for _ in 0..deg {
            pairs.push((vars[rng.gen_range(0..vars.len())], 1));
        }
        p.add_term(Monomial::from_pairs(pairs), small_rational(rng));
    }
    p
}

pub fn xs(n: u32) -> Vec<Var> {
    (1..=n).map(Var::x).collect()
}

pub fn ys(n: u32) -> Vec<Var> {
    (1..=n).map(Var::y).collect()
}

pub fn xq(n1: u32, n2: u32) -> Vec<Var> {
    (1..=n1).map(Var::x).chain((1..=n2).map(Var::q)).collect()
}

/// Random admissible generating function `x.M q + eps H(x, q)`.
pub fn random_admissible(rng: &mut ChaCha8Rng, n1: u32, n2: u32) -> Polynomial {
    let mut s = Polynomial::zero();
    for i in 1..=n1 {
        for a in 1..=n2 {
            if i == a || rng.gen_bool(0.3) {
                let c = if i == a { Rational::from_integer(1.into()) } else { small_rational(rng) };
                s.add_term(Monomial::from_pairs([(Var::x(i), 1), (Var::q(a), 1)]), c);
            }
        }
    }
    let h = random_poly(rng, &xq(n1, n2), 1, 3, 3);
    s + &Polynomial::var(Var::EPS) * &h
}

/// Exact value of
/// `(2 pi hbar)^-n ∫ dy dq exp(i/hbar (x.C q + q.A q/2 + x.D x/2 + y.G y/2 + b.y - y.q))`
/// from the eigenvalues of the quadratic form in `(y, q)`.
pub struct Gaussian {
    pub c: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Gaussian {
    pub fn value(&self, x: &[f64], hbar: f64) -> Complex64 {
        let n = self.a.nrows();
        let x = DVector::from_column_slice(x);
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&self.g);
        h.view_mut((n, n), (n, n)).copy_from(&self.a);
        for i in 0..n {
            h[(i, n + i)] = -1.0;
            h[(n + i, i)] = -1.0;
        }
        let mut j = DVector::zeros(2 * n);
        j.rows_mut(0, n).copy_from(&self.b);
        j.rows_mut(n, n).copy_from(&(self.c.transpose() * &x));
        let c0 = 0.5 * (x.transpose() * &self.d * &x)[(0, 0)];
        let hinv = h.clone().try_inverse().expect("nondegenerate");
        let phase = c0 - 0.5 * (j.transpose() * hinv * &j)[(0, 0)];
        let eig = SymmetricEigen::new(h).eigenvalues;
        let mut amp = Complex64::new(1.0, 0.0);
        for l in eig.iter() {
            // principal (-i l)^(-1/2)
            amp *= Complex64::from_polar(l.abs().powf(-0.5), std::f64::consts::FRAC_PI_4 * l.signum());
        }
        amp * Complex64::from_polar(1.0, phase / hbar)
    }
}

pub fn rel_err(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / b.norm()
}
