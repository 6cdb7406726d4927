//! Quantum thick morphisms.
//!
//! A generating function `S_hbar(x, q) = S0 + hbar S1 + ...` defines the
//! oscillatory integral operator
//!
//! ```text
//! (Q* w)(x) = (2 pi hbar)^(-n2) ∫ dy dq exp(i/hbar (S_hbar(x, q) - y.q)) w(y)
//! ```
//!
//! On `w = exp(i g / hbar)` the result behaves as `exp(i/hbar (f0 + hbar f1))`
//! for small `hbar`, where `f0` is the classical nonlinear pullback of `g` and
//! `f1` collects `S1` at the stationary point and the fluctuation determinant.
//! This module computes `f0, f1` formally, evaluates the integral by windowed
//! trapezoid quadrature, and sweeps `hbar` to measure the classical limit.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};

use num_complex::Complex64;
use num_traits::Zero;
use rayon::prelude::*;
use thiserror::Error;

use crate::graded::{GradedSeries, Grading, SeriesError};
use crate::microformal::{
    check_vars, compose_series, inadmissible_monomial, pullback, MorphismError, ThickMorphism,
};
use crate::poly::{rational_to_f64, Family, Polynomial, Rational, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantumError {
    #[error(transparent)]
    Morphism(#[from] MorphismError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("degenerate leading Hessian: fluctuation determinant has grade-0 part `{0}`")]
    DegenerateHessian(String),
    #[error("step {step} is larger than hbar/4 = {limit}; quadrature under-resolved")]
    UnderResolved { step: f64, limit: f64 },
    #[error("stationary point solve did not converge (last update {residual:e})")]
    NoStationaryPoint { residual: f64 },
    #[error("numeric integration supports target dimension 1 or 2, got {0}")]
    UnsupportedDimension(u32),
    #[error("{0}")]
    Invalid(String),
}

/// Order of the `hbar` expansion kept by formal operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HbarOrder {
    Zero,
    One,
}

/// A series with coefficients in the rationals extended by `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplexSeries {
    pub re: GradedSeries,
    pub im: GradedSeries,
}

impl ComplexSeries {
    pub fn zero(grading: Grading, order: u32) -> Self {
        ComplexSeries { re: GradedSeries::zero(grading, order), im: GradedSeries::zero(grading, order) }
    }

    pub fn real(re: GradedSeries) -> Self {
        let im = GradedSeries::zero(re.grading(), re.order());
        ComplexSeries { re, im }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn add(&self, other: &ComplexSeries) -> Result<ComplexSeries, SeriesError> {
        Ok(ComplexSeries { re: self.re.add(&other.re)?, im: self.im.add(&other.im)? })
    }

    pub fn substitute_series(&self, bindings: &BTreeMap<Var, GradedSeries>) -> ComplexSeries {
        ComplexSeries { re: self.re.substitute_series(bindings), im: self.im.substitute_series(bindings) }
    }

    pub fn eval(&self, point: &BTreeMap<Var, f64>) -> Result<Complex64, QuantumError> {
        let re = self.re.body().eval_real(point).map_err(|e| QuantumError::Invalid(e.to_string()))?;
        let im = self.im.body().eval_real(point).map_err(|e| QuantumError::Invalid(e.to_string()))?;
        Ok(Complex64::new(re, im))
    }
}

impl fmt::Display for ComplexSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.re.is_zero(), self.im.is_zero()) {
            (_, true) => write!(f, "{}", self.re),
            (true, false) => write!(f, "i*({})", self.im),
            (false, false) => write!(f, "{} + i*({})", self.re, self.im),
        }
    }
}

/// A thick morphism whose generating function carries an `hbar` expansion.
///
/// The real part lives in `generating`; `imaginary` holds an optional
/// imaginary part (an amplitude), produced by quantum composition, whose terms
/// all carry `hbar`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantumMorphism {
    source_dim: u32,
    target_dim: u32,
    generating: GradedSeries,
    imaginary: GradedSeries,
}

impl QuantumMorphism {
    pub fn new(source_dim: u32, target_dim: u32, generating: GradedSeries) -> Result<Self, QuantumError> {
        let imaginary = GradedSeries::zero(generating.grading(), generating.order());
        QuantumMorphism::with_imaginary(source_dim, target_dim, generating, imaginary)
    }

    pub fn with_imaginary(
        source_dim: u32,
        target_dim: u32,
        generating: GradedSeries,
        imaginary: GradedSeries,
    ) -> Result<Self, QuantumError> {
        if source_dim == 0 || target_dim == 0 {
            return Err(MorphismError::ZeroDimension.into());
        }
        if generating.grading() != imaginary.grading() || generating.order() != imaginary.order() {
            return Err(MorphismError::ContextMismatch.into());
        }
        if generating.grading().momentum_excess_weight != 0 {
            return Err(MorphismError::MomentumGrading.into());
        }
        for part in [&generating, &imaginary] {
            check_vars(part.body(), "quantum generating function", |v| match v.family {
                Family::X => v.index <= source_dim,
                Family::Q => v.index <= target_dim,
                Family::Eps | Family::Hbar => true,
                _ => false,
            })?;
        }
        if let Some(m) = inadmissible_monomial(generating.body()) {
            return Err(MorphismError::Inadmissible { monomial: m.to_string() }.into());
        }
        let order = generating.order();
        if generating.body().degree_in(Var::HBAR) > order {
            return Err(QuantumError::Invalid(format!("hbar degree exceeds truncation order {order}")));
        }
        if imaginary.body().terms().any(|(m, _)| m.exponent(Var::HBAR) == 0) {
            return Err(QuantumError::Invalid("imaginary part must vanish at hbar = 0".into()));
        }
        Ok(QuantumMorphism { source_dim, target_dim, generating, imaginary })
    }

    pub fn from_polynomial(
        source_dim: u32,
        target_dim: u32,
        s: &Polynomial,
        grading: Grading,
        order: u32,
    ) -> Result<Self, QuantumError> {
        QuantumMorphism::new(source_dim, target_dim, GradedSeries::truncate(s, grading, order))
    }

    /// A classical morphism viewed as an `hbar`-independent quantum one.
    pub fn from_classical(phi: &ThickMorphism) -> Self {
        QuantumMorphism {
            source_dim: phi.source_dim(),
            target_dim: phi.target_dim(),
            generating: phi.generating().clone(),
            imaginary: GradedSeries::zero(phi.grading(), phi.order()),
        }
    }

    pub fn source_dim(&self) -> u32 {
        self.source_dim
    }

    pub fn target_dim(&self) -> u32 {
        self.target_dim
    }

    pub fn generating(&self) -> &GradedSeries {
        &self.generating
    }

    pub fn imaginary(&self) -> &GradedSeries {
        &self.imaginary
    }

    pub fn order(&self) -> u32 {
        self.generating.order()
    }

    /// Coefficient of `hbar^k` (complex in general).
    pub fn hbar_coefficient(&self, k: u32) -> ComplexSeries {
        ComplexSeries {
            re: self.generating.coefficient_of(Var::HBAR, k),
            im: self.imaginary.coefficient_of(Var::HBAR, k),
        }
    }

    /// The classical part `S0` as a thick morphism.
    pub fn classical(&self) -> Result<ThickMorphism, QuantumError> {
        let s0 = self.hbar_coefficient(0).re;
        Ok(ThickMorphism::new(self.source_dim, self.target_dim, s0)?)
    }
}

/// Where a phase came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Formal,
    Numeric,
}

/// Phase `f0 + hbar f1` of the quantum pullback of `exp(i g / hbar)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseResult {
    pub f0: GradedSeries,
    pub f1: ComplexSeries,
    pub provenance: Provenance,
    pub y_star: BTreeMap<Var, GradedSeries>,
    pub q_star: BTreeMap<Var, GradedSeries>,
}

fn hessian(s: &GradedSeries, family: Family, n: u32, at: &BTreeMap<Var, GradedSeries>) -> Vec<Vec<GradedSeries>> {
    (1..=n)
        .map(|i| {
            (1..=n)
                .map(|j| {
                    s.partial(Var::new(family, i))
                        .partial(Var::new(family, j))
                        .substitute_series(at)
                })
                .collect()
        })
        .collect()
}

fn determinant(m: &[Vec<GradedSeries>]) -> Result<GradedSeries, SeriesError> {
    let n = m.len();
    if n == 1 {
        return Ok(m[0][0].clone());
    }
    let mut acc = GradedSeries::zero(m[0][0].grading(), m[0][0].order());
    for col in 0..n {
        let minor: Vec<Vec<GradedSeries>> = m[1..]
            .iter()
            .map(|row| row.iter().enumerate().filter(|&(c, _)| c != col).map(|(_, e)| e.clone()).collect())
            .collect();
        let term = m[0][col].mul(&determinant(&minor)?)?;
        acc = if col % 2 == 0 { acc.add(&term)? } else { acc.sub(&term)? };
    }
    Ok(acc)
}

/// `(1/2) log det(I - left . right)` as a series. The determinant must have
/// grade-0 part exactly 1.
fn half_log_det(left: &[Vec<GradedSeries>], right: &[Vec<GradedSeries>]) -> Result<GradedSeries, QuantumError> {
    let n = left.len();
    let ctx = &left[0][0];
    let mut m = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            let mut e = if i == j { GradedSeries::one(ctx.grading(), ctx.order()) } else { ctx.lift(&Polynomial::zero()) };
            for k in 0..n {
                e = e.sub(&left[i][k].mul(&right[k][j])?)?;
            }
            row.push(e);
        }
        m.push(row);
    }
    let det = determinant(&m)?;
    let log = det.log_series().map_err(|_| QuantumError::DegenerateHessian(det.grade_zero_part().to_string()))?;
    Ok(log.scale(&Rational::new(1.into(), 2.into())))
}

/// Formal stationary-phase expansion of the quantum pullback of
/// `exp(i g / hbar)`: `f0` is the classical pullback along `S0`, and at
/// `HbarOrder::One`
///
/// ```text
/// f1 = S1(x, q*) + (i/2) log det(I - G A),   G = d2g/dy2 (y*),  A = d2S0/dq2 (x, q*)
/// ```
///
/// The constant signature phase of the Hessian is zero for admissible
/// generating functions and is omitted.
pub fn quantum_pullback_formal(
    q: &QuantumMorphism,
    g: &Polynomial,
    hbar_order: HbarOrder,
) -> Result<PhaseResult, QuantumError> {
    let classical = q.classical()?;
    let r = pullback(&classical, g)?;
    let (grading, order) = (r.f.grading(), r.f.order());
    let mut f1 = ComplexSeries::zero(grading, order);
    if hbar_order == HbarOrder::One {
        let n = q.target_dim;
        let s1 = q.hbar_coefficient(1).substitute_series(&r.q_sol);
        let gs = r.f.lift(g);
        let g_hess = hessian(&gs, Family::Y, n, &r.y_sol);
        let a_hess = hessian(classical.generating(), Family::Q, n, &r.q_sol);
        let amp = half_log_det(&g_hess, &a_hess)?;
        f1 = s1.add(&ComplexSeries { re: GradedSeries::zero(grading, order), im: amp })?;
    }
    Ok(PhaseResult { f0: r.f, f1, provenance: Provenance::Formal, y_star: r.y_sol, q_star: r.q_sol })
}

/// Quantum composite with `inner` applied first. The `hbar^0` part is the
/// classical composite; at `HbarOrder::One` the `hbar^1` part is
///
/// ```text
/// S1_inner(x, q*) + S1_outer(y*, r) + (i/2) log det(I - B A)
/// ```
///
/// with `B = d2 S0_outer / dy2` at `y*` and `A = d2 S0_inner / dq2` at `q*`.
pub fn quantum_compose(
    outer: &QuantumMorphism,
    inner: &QuantumMorphism,
    hbar_order: HbarOrder,
) -> Result<QuantumMorphism, QuantumError> {
    if inner.target_dim != outer.source_dim {
        return Err(MorphismError::DimensionMismatch(format!(
            "inner target {} vs outer source {}",
            inner.target_dim, outer.source_dim
        ))
        .into());
    }
    let n = inner.target_dim;
    let inner0 = inner.classical()?;
    let outer0 = outer.classical()?;
    let c = compose_series(inner0.generating(), outer0.generating(), n)?;
    let (grading, order) = (c.generating.grading(), c.generating.order());
    let hbar = Polynomial::var(Var::HBAR);
    let mut re = c.generating.body().clone();
    let mut im = Polynomial::zero();
    if hbar_order == HbarOrder::One {
        let to_outer = |p: &Polynomial| {
            p.map_vars(|v| match v.family {
                Family::X => Var::y(v.index),
                Family::Q => Var::r(v.index),
                _ => v,
            })
        };
        let inner1 = inner.hbar_coefficient(1).substitute_series(&c.q_sol);
        let outer1 = outer.hbar_coefficient(1);
        let outer1 = ComplexSeries {
            re: outer1.re.lift(&to_outer(outer1.re.body())),
            im: outer1.im.lift(&to_outer(outer1.im.body())),
        }
        .substitute_series(&c.y_sol);
        let b = hessian(&c.outer_renamed, Family::Y, n, &c.y_sol);
        let a = hessian(inner0.generating(), Family::Q, n, &c.q_sol);
        let amp = half_log_det(&b, &a)?;
        let first = inner1.add(&outer1)?;
        let rename = |p: &Polynomial| p.rename_family(Family::R, Family::Q);
        re = re + &hbar * &rename(first.re.body());
        im = &hbar * &rename(&(first.im.body() + amp.body()));
    }
    QuantumMorphism::with_imaginary(
        inner.source_dim,
        outer.target_dim,
        GradedSeries::truncate(&re, grading, order),
        GradedSeries::truncate(&im, grading, order),
    )
}

/// Polynomial with `f64` coefficients over a fixed list of variable slots.
#[derive(Clone, Debug)]
struct Compiled {
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl Compiled {
    fn new(p: &Polynomial, slots: &[Var]) -> Result<Self, QuantumError> {
        let mut terms = Vec::with_capacity(p.len());
        for (m, c) in p.terms() {
            let mut powers = Vec::new();
            for &(v, e) in m.factors() {
                let slot = slots.iter().position(|&s| s == v).ok_or_else(|| {
                    QuantumError::Invalid(format!("variable {v} has no numeric value"))
                })?;
                powers.push((slot, e as i32));
            }
            terms.push((rational_to_f64(c), powers));
        }
        Ok(Compiled { terms })
    }

    fn eval(&self, values: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, powers)| powers.iter().fold(*c, |acc, &(s, e)| acc * values[s].powi(e)))
            .sum()
    }
}

/// Quadrature parameters: half-width of the integration box around the
/// stationary point and trapezoid step, both in coordinate units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub window: f64,
    pub step: f64,
}

/// Smooth plateau window on `[-1, 1]`: flat near 0, erfc roll-off centred at
/// 0.7, about 3e-7 at the edge.
fn window_weight(t: f64) -> f64 {
    const CENTER: f64 = 0.7;
    const WIDTH: f64 = 0.06;
    let a = t.abs();
    if a >= 1.0 {
        return 0.0;
    }
    0.5 * libm::erfc((a - CENTER) / (WIDTH * std::f64::consts::SQRT_2))
}

/// `out[j] = sum_k b[k] exp(-i alpha j k)` for `j, k` in `-half..=half`.
/// Powers are advanced by recurrence and re-seeded every 64 steps.
fn chirp_sum(b: &[Complex64], half: i64, alpha: f64) -> Vec<Complex64> {
    const RESEED: usize = 64;
    (-half..=half)
        .into_par_iter()
        .map(|j| {
            let ratio = Complex64::from_polar(1.0, -alpha * j as f64);
            let mut acc = Complex64::zero();
            let mut z = Complex64::zero();
            for (idx, &bk) in b.iter().enumerate() {
                if idx % RESEED == 0 {
                    let k = idx as i64 - half;
                    z = Complex64::from_polar(1.0, -alpha * (j * k) as f64);
                }
                acc += bk * z;
                z *= ratio;
            }
            acc
        })
        .collect()
}

/// Numeric data for the integral operator of `q` acting on
/// `exp(i g / hbar)`, with `eps` fixed to a rational value.
#[derive(Clone, Debug)]
pub struct OscillatoryKernel {
    n1: usize,
    n2: usize,
    s_re: Compiled,
    s_im: Compiled,
    ds0: Vec<Compiled>,
    dds0: Vec<Vec<Compiled>>,
    g: Compiled,
    dg: Vec<Compiled>,
    ddg: Vec<Vec<Compiled>>,
    warm_y: Vec<Compiled>,
    warm_q: Vec<Compiled>,
}

impl OscillatoryKernel {
    pub fn new(q: &QuantumMorphism, g: &Polynomial, eps: &Rational) -> Result<Self, QuantumError> {
        let (n1, n2) = (q.source_dim as usize, q.target_dim as usize);
        if !(1..=2).contains(&n2) {
            return Err(QuantumError::UnsupportedDimension(q.target_dim));
        }
        let fix_eps: BTreeMap<Var, Polynomial> = [(Var::EPS, Polynomial::constant(eps.clone()))].into();
        let numeric = |p: &Polynomial| p.substitute(&fix_eps);
        let xs: Vec<Var> = (1..=n1 as u32).map(Var::x).collect();
        let qs: Vec<Var> = (1..=n2 as u32).map(Var::q).collect();
        let ys: Vec<Var> = (1..=n2 as u32).map(Var::y).collect();
        let mut s_slots = xs.clone();
        s_slots.extend(&qs);
        s_slots.push(Var::HBAR);

        let s_re = numeric(q.generating().body());
        let s0 = s_re.coefficient_of(Var::HBAR, 0);
        let gn = numeric(g);
        let formal = pullback(&q.classical()?, g)?;
        let compile_x = |p: &Polynomial| Compiled::new(&numeric(p), &xs);

        Ok(OscillatoryKernel {
            n1,
            n2,
            s_re: Compiled::new(&s_re, &s_slots)?,
            s_im: Compiled::new(&numeric(q.imaginary().body()), &s_slots)?,
            ds0: qs.iter().map(|&v| Compiled::new(&s0.partial(v), &s_slots)).collect::<Result<_, _>>()?,
            dds0: qs
                .iter()
                .map(|&a| qs.iter().map(|&b| Compiled::new(&s0.partial(a).partial(b), &s_slots)).collect())
                .collect::<Result<_, _>>()?,
            g: Compiled::new(&gn, &ys)?,
            dg: ys.iter().map(|&v| Compiled::new(&gn.partial(v), &ys)).collect::<Result<_, _>>()?,
            ddg: ys
                .iter()
                .map(|&a| ys.iter().map(|&b| Compiled::new(&gn.partial(a).partial(b), &ys)).collect())
                .collect::<Result<_, _>>()?,
            warm_y: formal.y_sol.values().map(|s| compile_x(s.body())).collect::<Result<_, _>>()?,
            warm_q: formal.q_sol.values().map(|s| compile_x(s.body())).collect::<Result<_, _>>()?,
        })
    }

    pub fn source_dim(&self) -> usize {
        self.n1
    }

    fn s_args(&self, x: &[f64], q: &[f64], hbar: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n1 + self.n2 + 1);
        v.extend_from_slice(x);
        v.extend_from_slice(q);
        v.push(hbar);
        v
    }

    fn check_x(&self, x: &[f64]) -> Result<(), QuantumError> {
        if x.len() != self.n1 {
            return Err(QuantumError::Invalid(format!("x point has {} coordinates, expected {}", x.len(), self.n1)));
        }
        Ok(())
    }

    /// Real classical stationary point `(y*, q*)` by Newton iteration from the
    /// formal solution evaluated at `x`.
    pub fn stationary_point(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), QuantumError> {
        self.check_x(x)?;
        let n = self.n2;
        let mut y: Vec<f64> = self.warm_y.iter().map(|c| c.eval(x)).collect();
        let mut q: Vec<f64> = self.warm_q.iter().map(|c| c.eval(x)).collect();
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let sa = self.s_args(x, &q, 0.0);
            // F = (dg/dy - q, dS0/dq - y); J = [[G, -I], [-I, A]].
            let mut rhs = vec![0.0; 2 * n];
            let mut jac = vec![vec![0.0; 2 * n]; 2 * n];
            for i in 0..n {
                rhs[i] = -(self.dg[i].eval(&y) - q[i]);
                rhs[n + i] = -(self.ds0[i].eval(&sa) - y[i]);
                for j in 0..n {
                    jac[i][j] = self.ddg[i][j].eval(&y);
                    jac[n + i][n + j] = self.dds0[i][j].eval(&sa);
                }
                jac[i][n + i] = -1.0;
                jac[n + i][i] = -1.0;
            }
            let delta = solve_linear(jac, rhs).ok_or(QuantumError::NoStationaryPoint { residual: last })?;
            for i in 0..n {
                y[i] += delta[i];
                q[i] += delta[n + i];
            }
            last = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            if !last.is_finite() {
                break;
            }
            let scale = 1.0 + y.iter().chain(&q).fold(0.0f64, |m, v| m.max(v.abs()));
            if last <= 1e-12 * scale {
                return Ok((y, q));
            }
        }
        Err(QuantumError::NoStationaryPoint { residual: last })
    }

    /// The integral applied to `exp(i g / hbar)`.
    pub fn integral(&self, x: &[f64], hbar: f64, quad: Quadrature) -> Result<Complex64, QuantumError> {
        let center = self.stationary_point(x)?;
        self.integral_with(x, &center, hbar, quad, |y| Complex64::from_polar(1.0, self.g.eval(y) / hbar))
    }

    /// The integral applied to an arbitrary input `w(y)`, with the quadrature
    /// box centred at `center = (y*, q*)`.
    pub fn integral_with<W>(
        &self,
        x: &[f64],
        center: &(Vec<f64>, Vec<f64>),
        hbar: f64,
        quad: Quadrature,
        w: W,
    ) -> Result<Complex64, QuantumError>
    where
        W: Fn(&[f64]) -> Complex64 + Sync,
    {
        self.check_x(x)?;
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(QuantumError::Invalid(format!("hbar must be positive, got {hbar}")));
        }
        if !(quad.window > 0.0 && quad.step > 0.0) {
            return Err(QuantumError::Invalid("window and step must be positive".into()));
        }
        if quad.step > hbar / 4.0 {
            return Err(QuantumError::UnderResolved { step: quad.step, limit: hbar / 4.0 });
        }
        let (ys, qs) = center;
        let n = self.n2;
        let h = quad.step;
        let half = (quad.window / h).floor() as i64;
        let side = (2 * half + 1) as usize;
        let offsets: Vec<f64> = (-half..=half).map(|j| j as f64 * h).collect();
        let weights: Vec<f64> = offsets.iter().map(|u| window_weight(u / quad.window)).collect();

        let grid_point = |flat: usize| -> Vec<usize> {
            let mut idx = vec![0; n];
            let mut r = flat;
            for d in (0..n).rev() {
                idx[d] = r % side;
                r /= side;
            }
            idx
        };
        let total = side.pow(n as u32);

        // y-side factor: window * w(y) * exp(-i u.q*/hbar)
        let a: Vec<Complex64> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let idx = grid_point(flat);
                let wt: f64 = idx.iter().map(|&k| weights[k]).product();
                if wt == 0.0 {
                    return Complex64::zero();
                }
                let y: Vec<f64> = idx.iter().zip(ys).map(|(&k, c)| c + offsets[k]).collect();
                let lin: f64 = idx.iter().zip(qs).map(|(&k, c)| offsets[k] * c).sum();
                w(&y) * Complex64::from_polar(wt, -lin / hbar)
            })
            .collect();
        // q-side factor: window * exp(i S(x, q)/hbar) * exp(-i y*.v/hbar)
        let b: Vec<Complex64> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let idx = grid_point(flat);
                let wt: f64 = idx.iter().map(|&k| weights[k]).product();
                if wt == 0.0 {
                    return Complex64::zero();
                }
                let q: Vec<f64> = idx.iter().zip(qs).map(|(&k, c)| c + offsets[k]).collect();
                let args = self.s_args(x, &q, hbar);
                let lin: f64 = idx.iter().zip(ys).map(|(&k, c)| offsets[k] * c).sum();
                let phase = (self.s_re.eval(&args) - lin) / hbar;
                let modulus = wt * (-self.s_im.eval(&args) / hbar).exp();
                Complex64::from_polar(modulus, phase)
            })
            .collect();

        // Cross term exp(-i h^2 j.k / hbar), transformed one axis at a time.
        let alpha = h * h / hbar;
        let e = match n {
            1 => chirp_sum(&b, half, alpha),
            _ => {
                // b[k1][k2] -> d[k1][j2] -> e[j1][j2]
                let mut d = vec![Complex64::zero(); total];
                for k1 in 0..side {
                    let row = chirp_sum(&b[k1 * side..(k1 + 1) * side], half, alpha);
                    d[k1 * side..(k1 + 1) * side].copy_from_slice(&row);
                }
                let mut e = vec![Complex64::zero(); total];
                for j2 in 0..side {
                    let col: Vec<Complex64> = (0..side).map(|k1| d[k1 * side + j2]).collect();
                    let out = chirp_sum(&col, half, alpha);
                    for j1 in 0..side {
                        e[j1 * side + j2] = out[j1];
                    }
                }
                e
            }
        };
        let sum: Complex64 = a.par_iter().zip(e.par_iter()).map(|(x, y)| x * y).sum();
        let cross: f64 = ys.iter().zip(qs).map(|(a, b)| a * b).sum();
        let prefactor = h.powi(2 * n as i32) / (2.0 * PI * hbar).powi(n as i32);
        Ok(sum * Complex64::from_polar(prefactor, -cross / hbar))
    }
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Evaluates the quantum pullback of `exp(i g / hbar)` at `x` by quadrature.
pub fn numeric_oscillatory_integral(
    q: &QuantumMorphism,
    g: &Polynomial,
    eps: &Rational,
    x: &[f64],
    hbar: f64,
    quad: Quadrature,
) -> Result<Complex64, QuantumError> {
    OscillatoryKernel::new(q, g, eps)?.integral(x, hbar, quad)
}

/// Quadrature settings for a sweep: the window is fixed, the step scales
/// with `hbar`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepConfig {
    pub window: f64,
    pub step_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub hbar: f64,
    pub x_point: Vec<f64>,
    pub numeric_value: Complex64,
    /// `-i hbar log(value)` on the tracked branch.
    pub extracted_phase: Complex64,
    pub err0: f64,
    pub err1: f64,
    /// Distance in radians between the chosen branch and the predicted angle.
    pub angle_jump: f64,
    pub branch_ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub records: Vec<SweepRecord>,
    pub f0: f64,
    pub f1: Complex64,
    pub slope_err0: Option<f64>,
    pub slope_err1: Option<f64>,
}

/// Least-squares slope of `ln err` against `ln hbar`, skipping zero errors.
pub fn loglog_slope(hbar: &[f64], err: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = hbar
        .iter()
        .zip(err)
        .filter(|(h, e)| **h > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Evaluates the integral at each `hbar` (descending), extracts the phase on a
/// continuous branch, and compares with the formal `f0` and `f0 + hbar f1`.
///
/// The branch at the largest `hbar` is the one nearest to `f0(x) / hbar`;
/// each later branch is the one nearest to the previous phase.
pub fn classical_limit_sweep(
    q: &QuantumMorphism,
    g: &Polynomial,
    eps: &Rational,
    x: &[f64],
    hbar_list: &[f64],
    cfg: SweepConfig,
) -> Result<SweepReport, QuantumError> {
    if hbar_list.is_empty() || hbar_list.iter().any(|h| !(*h > 0.0)) {
        return Err(QuantumError::Invalid("hbar list must be nonempty and positive".into()));
    }
    if hbar_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(QuantumError::Invalid("hbar list must be strictly descending".into()));
    }
    let kernel = OscillatoryKernel::new(q, g, eps)?;
    let center = kernel.stationary_point(x)?;
    let formal = quantum_pullback_formal(q, g, HbarOrder::One)?;
    let mut point: BTreeMap<Var, f64> = x.iter().enumerate().map(|(i, &v)| (Var::x(i as u32 + 1), v)).collect();
    point.insert(Var::EPS, rational_to_f64(eps));
    let f0 = formal.f0.body().eval_real(&point).map_err(|e| QuantumError::Invalid(e.to_string()))?;
    let f1 = formal.f1.eval(&point)?;

    let values: Vec<Complex64> = hbar_list
        .par_iter()
        .map(|&h| {
            let quad = Quadrature { window: cfg.window, step: cfg.step_ratio * h };
            kernel.integral_with(x, &center, h, quad, |y| Complex64::from_polar(1.0, kernel.g.eval(y) / h))
        })
        .collect::<Result<_, _>>()?;

    let mut records = Vec::with_capacity(values.len());
    let mut previous = f0;
    for (&h, &v) in hbar_list.iter().zip(&values) {
        let target = previous / h;
        let raw = v.arg();
        let turns = ((target - raw) / (2.0 * PI)).round();
        let angle = raw + 2.0 * PI * turns;
        let angle_jump = (angle - target).abs();
        let extracted = Complex64::new(h * angle, -h * v.norm().ln());
        previous = extracted.re;
        records.push(SweepRecord {
            hbar: h,
            x_point: x.to_vec(),
            numeric_value: v,
            extracted_phase: extracted,
            err0: (extracted - f0).norm(),
            err1: (extracted - f0 - f1 * h).norm(),
            angle_jump,
            branch_ok: angle_jump < PI,
        });
    }
    let hs: Vec<f64> = records.iter().map(|r| r.hbar).collect();
    let e0: Vec<f64> = records.iter().map(|r| r.err0).collect();
    let e1: Vec<f64> = records.iter().map(|r| r.err1).collect();
    Ok(SweepReport {
        slope_err0: loglog_slope(&hs, &e0),
        slope_err1: loglog_slope(&hs, &e1),
        records,
        f0,
        f1,
    })
}

pub const SWEEP_CSV_HEADER: &str = "hbar,x,re_value,im_value,re_phase,im_phase,err0,err1";

/// Writes sweep records as CSV, 17 significant digits per float, in the
/// order given (descending `hbar`). Multi-dimensional `x` is joined by `;`.
pub fn write_sweep_csv<W: Write>(records: &[SweepRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    let num = |v: f64| format!("{v:.16e}");
    for r in records {
        let x: Vec<String> = r.x_point.iter().map(|&v| num(v)).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            num(r.hbar),
            x.join(";"),
            num(r.numeric_value.re),
            num(r.numeric_value.im),
            num(r.extracted_phase.re),
            num(r.extracted_phase.im),
            num(r.err0),
            num(r.err1)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse;

    fn p(text: &str) -> Polynomial {
        parse(text).unwrap()
    }

    fn quantum(n1: u32, n2: u32, s: &str, order: u32) -> QuantumMorphism {
        QuantumMorphism::from_polynomial(n1, n2, &p(s), Grading::default(), order).unwrap()
    }

    fn rat(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    #[test]
    fn identity_phase() {
        let q = quantum(1, 1, "x1*q1", 4);
        let r = quantum_pullback_formal(&q, &p("y1^3 + y1"), HbarOrder::One).unwrap();
        assert_eq!(r.f0.body(), &p("x1^3 + x1"));
        assert!(r.f1.is_zero());
        assert_eq!(r.provenance, Provenance::Formal);
    }

    #[test]
    fn constant_hbar_shift() {
        let q = quantum(1, 1, "x1*q1 + 3*hbar", 4);
        let r = quantum_pullback_formal(&q, &p("y1^2"), HbarOrder::One).unwrap();
        assert_eq!(r.f0.body(), &p("x1^2"));
        assert_eq!(r.f1.re.body(), &p("3"));
        assert!(r.f1.im.is_zero());
        let r0 = quantum_pullback_formal(&q, &p("y1^2"), HbarOrder::Zero).unwrap();
        assert!(r0.f1.is_zero());
    }

    #[test]
    fn quadratic_phase_and_amplitude() {
        // Gaussian: amplitude (1 - eps)^(-1/2), so f1 = (i/2) log(1 - eps).
        let q = quantum(1, 1, "x1*q1 + (1/2)*eps*q1^2", 5);
        let r = quantum_pullback_formal(&q, &p("(1/2)*y1^2"), HbarOrder::One).unwrap();
        assert!(r.f1.re.is_zero());
        let log = GradedSeries::truncate(&p("1 - eps"), Grading::default(), 5).log_series().unwrap();
        assert_eq!(r.f1.im, log.scale(&rat(1, 2)));
    }

    #[test]
    fn admissibility_and_variables() {
        assert!(QuantumMorphism::from_polynomial(1, 1, &p("x1*q1 + q1^2"), Grading::default(), 3).is_err());
        assert!(QuantumMorphism::from_polynomial(1, 1, &p("x1*q1 + hbar*q1^2"), Grading::default(), 3).is_ok());
        assert!(QuantumMorphism::from_polynomial(1, 1, &p("x1*q1 + y1"), Grading::default(), 3).is_err());
    }

    #[test]
    fn window_shape() {
        assert!((window_weight(0.0) - 1.0).abs() < 1e-15);
        assert!((window_weight(0.7) - 0.5).abs() < 1e-15);
        assert!(window_weight(0.999) < 3.2e-7);
        assert_eq!(window_weight(1.0), 0.0);
    }

    #[test]
    fn chirp_sum_matches_direct() {
        let b: Vec<Complex64> = (0..301).map(|k| Complex64::new((k as f64).sin(), (k as f64 * 0.3).cos())).collect();
        let alpha = 0.0137;
        let fast = chirp_sum(&b, 150, alpha);
        for (j_idx, got) in fast.iter().enumerate().step_by(37) {
            let j = j_idx as i64 - 150;
            let direct: Complex64 = b
                .iter()
                .enumerate()
                .map(|(k_idx, bk)| bk * Complex64::from_polar(1.0, -alpha * (j * (k_idx as i64 - 150)) as f64))
                .sum();
            assert!((got - direct).norm() < 1e-10, "{got} vs {direct}");
        }
    }

    #[test]
    fn identity_integral_reproduces_input() {
        let q = quantum(1, 1, "x1*q1", 3);
        let hbar = 0.1;
        let v = numeric_oscillatory_integral(&q, &p("(1/2)*y1^2"), &rat(0, 1), &[1.0], hbar, Quadrature { window: 4.0, step: hbar / 10.0 })
            .unwrap();
        let want = Complex64::from_polar(1.0, 0.5 / hbar);
        assert!((v - want).norm() < 1e-6, "{v} vs {want}");
    }

    #[test]
    fn under_resolved_and_tiny_window() {
        let q = quantum(1, 1, "x1*q1", 3);
        let g = p("(1/2)*y1^2");
        let err = numeric_oscillatory_integral(&q, &g, &rat(0, 1), &[1.0], 0.1, Quadrature { window: 4.0, step: 0.05 });
        assert!(matches!(err, Err(QuantumError::UnderResolved { .. })));
        let v = numeric_oscillatory_integral(&q, &g, &rat(0, 1), &[1.0], 0.1, Quadrature { window: 1e-4, step: 0.01 }).unwrap();
        assert!(v.norm() < 1e-3);
    }

    #[test]
    fn newton_refines_warm_start() {
        let q = quantum(1, 1, "x1*q1 + (1/2)*eps*q1^2 + (1/4)*eps*q1^4", 2);
        let kernel = OscillatoryKernel::new(&q, &p("(1/2)*y1^2"), &rat(1, 10)).unwrap();
        let (y, qs) = kernel.stationary_point(&[1.0]).unwrap();
        // q = y, y = x + eps (q + q^3)
        assert!((qs[0] - y[0]).abs() < 1e-12);
        assert!((y[0] - 1.0 - 0.1 * (qs[0] + qs[0].powi(3))).abs() < 1e-12);
    }

    #[test]
    fn slope_fit() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|x| 3.0 * x * x).collect();
        assert!((loglog_slope(&h, &e).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(loglog_slope(&h[..1], &e[..1]), None);
    }

    #[test]
    fn sweep_rejects_bad_lists() {
        let q = quantum(1, 1, "x1*q1", 3);
        let cfg = SweepConfig { window: 2.0, step_ratio: 0.1 };
        assert!(classical_limit_sweep(&q, &p("y1^2"), &rat(0, 1), &[1.0], &[0.05, 0.1], cfg).is_err());
        assert!(classical_limit_sweep(&q, &p("y1^2"), &rat(0, 1), &[1.0], &[], cfg).is_err());
    }

    #[test]
    fn csv_layout() {
        let rec = SweepRecord {
            hbar: 0.1,
            x_point: vec![1.0],
            numeric_value: Complex64::new(1.0, -0.5),
            extracted_phase: Complex64::new(0.25, 0.0),
            err0: 0.0,
            err1: 1e-9,
            angle_jump: 0.0,
            branch_ok: true,
        };
        let mut buf = Vec::new();
        write_sweep_csv(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
        assert_eq!(
            lines.next(),
            Some("1.0000000000000001e-1,1.0000000000000000e0,1.0000000000000000e0,-5.0000000000000000e-1,2.5000000000000000e-1,0.0000000000000000e0,0.0000000000000000e0,1.0000000000000001e-9")
        );
    }
}
