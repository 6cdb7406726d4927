//! Truncated formal power series over [`Polynomial`].
//!
//! A [`Grading`] assigns a weight to each monomial (powers of `eps`, powers of
//! `hbar`, and optionally excess momentum degree). A [`GradedSeries`] keeps only
//! terms of weight at most its order and re-truncates after every operation.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::poly::{Family, Monomial, Polynomial, Rational, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error("grading must give at least one positive weight")]
    DegenerateGrading,
    #[error("grading mismatch between operands")]
    GradingMismatch,
    #[error("truncation order mismatch ({0} vs {1})")]
    OrderMismatch(u32, u32),
    #[error("series is not invertible: grade-0 part `{0}` is not a nonzero constant")]
    NotInvertible(String),
    #[error("log requires grade-0 part equal to 1, found `{0}`")]
    LogDomain(String),
    #[error("exp requires vanishing grade-0 part, found `{0}`")]
    ExpDomain(String),
    #[error("fixed point did not stabilize after {iterations} sweeps (rhs not contracting in the filtration)")]
    NoFixedPoint { iterations: usize },
    #[error("missing {what} for unknown {var}")]
    MissingEquation { what: &'static str, var: Var },
}

/// Weights defining the filtration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grading {
    pub eps_weight: u32,
    pub hbar_weight: u32,
    pub momentum_excess_weight: u32,
}

impl Default for Grading {
    fn default() -> Self {
        Grading { eps_weight: 1, hbar_weight: 1, momentum_excess_weight: 0 }
    }
}

impl Grading {
    pub fn new(eps_weight: u32, hbar_weight: u32, momentum_excess_weight: u32) -> Result<Self, SeriesError> {
        if eps_weight == 0 && hbar_weight == 0 && momentum_excess_weight == 0 {
            return Err(SeriesError::DegenerateGrading);
        }
        Ok(Grading { eps_weight, hbar_weight, momentum_excess_weight })
    }

    pub fn grade(&self, m: &Monomial) -> u64 {
        let eps = m.degree_where(|f| f == Family::Eps) as u64;
        let hbar = m.degree_where(|f| f == Family::Hbar) as u64;
        let mom = m.degree_where(Family::is_momentum) as u64;
        eps * self.eps_weight as u64
            + hbar * self.hbar_weight as u64
            + mom.saturating_sub(1) * self.momentum_excess_weight as u64
    }

    /// Drops every term of grade above `order`.
    pub fn cut(&self, p: &Polynomial, order: u32) -> Polynomial {
        p.filter(|m| self.grade(m) <= order as u64)
    }

    /// Product with over-order terms skipped as they are formed. Grades are
    /// superadditive under multiplication, so this equals `cut(a * b)`.
    pub fn mul_cut(&self, a: &Polynomial, b: &Polynomial, order: u32) -> Polynomial {
        let limit = order as u64;
        let bs: Vec<_> = b.terms().map(|(m, c)| (m, c, self.grade(m))).collect();
        let mut out = Polynomial::zero();
        for (ma, ca) in a.terms() {
            let ga = self.grade(ma);
            if ga > limit {
                continue;
            }
            for &(mb, cb, gb) in &bs {
                if ga + gb > limit {
                    continue;
                }
                let m = ma.mul(mb);
                if self.grade(&m) <= limit {
                    out.add_term(m, ca * cb);
                }
            }
        }
        out
    }
}

/// A polynomial truncated at a fixed grade.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GradedSeries {
    body: Polynomial,
    grading: Grading,
    order: u32,
}

impl GradedSeries {
    /// Truncates `p`, dropping all terms of grade above `order`.
    pub fn truncate(p: &Polynomial, grading: Grading, order: u32) -> Self {
        GradedSeries { body: grading.cut(p, order), grading, order }
    }

    pub fn zero(grading: Grading, order: u32) -> Self {
        GradedSeries { body: Polynomial::zero(), grading, order }
    }

    pub fn one(grading: Grading, order: u32) -> Self {
        GradedSeries::truncate(&Polynomial::one(), grading, order)
    }

    pub fn body(&self) -> &Polynomial {
        &self.body
    }

    pub fn into_body(self) -> Polynomial {
        self.body
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn is_zero(&self) -> bool {
        self.body.is_zero()
    }

    /// Another series in the same truncation context.
    pub fn lift(&self, p: &Polynomial) -> GradedSeries {
        GradedSeries::truncate(p, self.grading, self.order)
    }

    /// Re-truncates at a different order. Raising the order does not recover
    /// dropped terms.
    pub fn with_order(&self, order: u32) -> GradedSeries {
        GradedSeries::truncate(&self.body, self.grading, order)
    }

    fn check(&self, other: &GradedSeries) -> Result<(), SeriesError> {
        if self.grading != other.grading {
            return Err(SeriesError::GradingMismatch);
        }
        if self.order != other.order {
            return Err(SeriesError::OrderMismatch(self.order, other.order));
        }
        Ok(())
    }

    pub fn add(&self, other: &GradedSeries) -> Result<GradedSeries, SeriesError> {
        self.check(other)?;
        Ok(GradedSeries { body: &self.body + &other.body, ..self.clone() })
    }

    pub fn sub(&self, other: &GradedSeries) -> Result<GradedSeries, SeriesError> {
        self.check(other)?;
        Ok(GradedSeries { body: &self.body - &other.body, ..self.clone() })
    }

    pub fn mul(&self, other: &GradedSeries) -> Result<GradedSeries, SeriesError> {
        self.check(other)?;
        Ok(self.mul_poly(&other.body))
    }

    /// Product with a plain polynomial, truncated in this context.
    pub fn mul_poly(&self, p: &Polynomial) -> GradedSeries {
        GradedSeries {
            body: self.grading.mul_cut(&self.body, p, self.order),
            ..self.clone()
        }
    }

    pub fn neg(&self) -> GradedSeries {
        GradedSeries { body: -&self.body, ..self.clone() }
    }

    pub fn scale(&self, c: &Rational) -> GradedSeries {
        GradedSeries { body: self.body.scale(c), ..self.clone() }
    }

    pub fn partial(&self, v: Var) -> GradedSeries {
        self.lift(&self.body.partial(v))
    }

    /// Terms of grade exactly zero.
    pub fn grade_zero_part(&self) -> Polynomial {
        self.body.filter(|m| self.grading.grade(m) == 0)
    }

    /// Coefficient of `v^k` in the same truncation context.
    pub fn coefficient_of(&self, v: Var, k: u32) -> GradedSeries {
        self.lift(&self.body.coefficient_of(v, k))
    }

    /// Simultaneous substitution with intermediate truncation.
    pub fn substitute(&self, bindings: &BTreeMap<Var, Polynomial>) -> GradedSeries {
        let (g, n) = (self.grading, self.order);
        let body = self.body.substitute_with(bindings, &|a, b| g.mul_cut(a, b, n));
        GradedSeries { body, ..self.clone() }
    }

    /// Substitution of series values.
    pub fn substitute_series(&self, bindings: &BTreeMap<Var, GradedSeries>) -> GradedSeries {
        let plain: BTreeMap<Var, Polynomial> =
            bindings.iter().map(|(v, s)| (*v, s.body.clone())).collect();
        self.substitute(&plain)
    }

    /// Sums `coeffs[k] * u^k` for the positive-grade series `u`, stopping once
    /// powers of `u` vanish under truncation.
    fn power_sum(&self, u: &Polynomial, coeff: impl Fn(u32) -> Rational) -> GradedSeries {
        let mut acc = Polynomial::zero();
        let mut power = self.grading.cut(&Polynomial::one(), self.order);
        let mut k = 0u32;
        while !power.is_zero() {
            acc = acc + power.scale(&coeff(k));
            k += 1;
            power = self.grading.mul_cut(&power, u, self.order);
        }
        self.lift(&acc)
    }

    /// Multiplicative inverse via the geometric series. The grade-0 part must
    /// be a nonzero rational constant.
    pub fn geometric_inverse(&self) -> Result<GradedSeries, SeriesError> {
        let c = self.grade_zero_part().as_constant().filter(|c| !c.is_zero());
        let c = c.ok_or_else(|| SeriesError::NotInvertible(self.grade_zero_part().to_string()))?;
        let cinv = c.recip();
        // a = c (1 + u)  =>  1/a = c^{-1} sum (-u)^k
        let u = (&self.body - &Polynomial::constant(c)).scale(&cinv);
        let s = self.power_sum(&u, |k| if k % 2 == 0 { Rational::one() } else { -Rational::one() });
        Ok(s.scale(&cinv))
    }

    /// `log(1 + u) = u - u^2/2 + u^3/3 - ...`; the grade-0 part must be exactly 1.
    pub fn log_series(&self) -> Result<GradedSeries, SeriesError> {
        let g0 = self.grade_zero_part();
        if g0 != Polynomial::one() {
            return Err(SeriesError::LogDomain(g0.to_string()));
        }
        let u = &self.body - &Polynomial::one();
        Ok(self.power_sum(&u, |k| {
            if k == 0 {
                Rational::zero()
            } else {
                let sign = if k % 2 == 1 { 1 } else { -1 };
                Rational::new(BigInt::from(sign), BigInt::from(k))
            }
        }))
    }

    /// `exp(a) = sum a^k / k!`; the grade-0 part must vanish.
    pub fn exp_series(&self) -> Result<GradedSeries, SeriesError> {
        let g0 = self.grade_zero_part();
        if !g0.is_zero() {
            return Err(SeriesError::ExpDomain(g0.to_string()));
        }
        // term_k = term_{k-1} * a / k
        let mut acc = Polynomial::zero();
        let mut term = self.grading.cut(&Polynomial::one(), self.order);
        let mut k = 0u32;
        while !term.is_zero() {
            acc = acc + term.clone();
            k += 1;
            let step = self.body.scale(&Rational::new(BigInt::one(), BigInt::from(k)));
            term = self.grading.mul_cut(&term, &step, self.order);
        }
        Ok(self.lift(&acc))
    }
}

impl fmt::Display for GradedSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.body.fmt(f)
    }
}

/// Update schedule for [`solve_fixed_point_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Sweep {
    /// Gauss-Seidel, unknowns updated in ascending variable order.
    #[default]
    Ascending,
    /// Gauss-Seidel, unknowns updated in descending variable order.
    Descending,
    /// Jacobi: every unknown updated from the previous sweep's values.
    Simultaneous,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedPoint {
    pub solution: BTreeMap<Var, GradedSeries>,
    pub iterations: usize,
}

/// Solves `u = rhs(u)` order by order from a grade-0 seed, using the default
/// ascending Gauss-Seidel sweep.
pub fn solve_fixed_point(
    unknowns: &[Var],
    rhs: &BTreeMap<Var, GradedSeries>,
    seed: &BTreeMap<Var, GradedSeries>,
) -> Result<FixedPoint, SeriesError> {
    solve_fixed_point_with(unknowns, rhs, seed, Sweep::default())
}

/// Iterates until two consecutive iterates agree. Each Gauss-Seidel sweep of
/// a contracting system fixes at least one more grade, so stabilization takes
/// at most `order + 1` sweeps; the cap is `order + 2`. A Jacobi sweep may need
/// one pass per link of a dependency cycle, so its cap is scaled by the number
/// of unknowns.
pub fn solve_fixed_point_with(
    unknowns: &[Var],
    rhs: &BTreeMap<Var, GradedSeries>,
    seed: &BTreeMap<Var, GradedSeries>,
    sweep: Sweep,
) -> Result<FixedPoint, SeriesError> {
    let mut order: Vec<Var> = unknowns.to_vec();
    order.sort();
    order.dedup();
    if sweep == Sweep::Descending {
        order.reverse();
    }
    let mut state: BTreeMap<Var, Polynomial> = BTreeMap::new();
    let mut trunc = 0;
    for &v in &order {
        let r = rhs.get(&v).ok_or(SeriesError::MissingEquation { what: "equation", var: v })?;
        let s = seed.get(&v).ok_or(SeriesError::MissingEquation { what: "seed", var: v })?;
        r.check(s)?;
        trunc = r.order;
        state.insert(v, s.body.clone());
    }
    let first = match order.first() {
        Some(v) => &rhs[v],
        None => return Ok(FixedPoint { solution: BTreeMap::new(), iterations: 0 }),
    };
    for v in &order {
        first.check(&rhs[v])?;
    }
    let cap = match sweep {
        Sweep::Simultaneous => (trunc as usize + 2) * order.len().max(1),
        _ => trunc as usize + 2,
    };
    for iteration in 1..=cap {
        let prev = state.clone();
        for &v in &order {
            let source = if sweep == Sweep::Simultaneous { &prev } else { &state };
            let next = rhs[&v].substitute(source).into_body();
            state.insert(v, next);
        }
        if state == prev {
            let solution = state
                .into_iter()
                .map(|(v, p)| (v, GradedSeries { body: p, ..first.clone() }))
                .collect();
            return Ok(FixedPoint { solution, iterations: iteration });
        }
    }
    Err(SeriesError::NoFixedPoint { iterations: cap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse;

    fn series(text: &str, order: u32) -> GradedSeries {
        GradedSeries::truncate(&parse(text).unwrap(), Grading::default(), order)
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(series("1 + eps + eps^2 + eps^3", 2), series("1 + eps + eps^2", 2));
        assert_eq!(series("x1*q1", 0).body(), &parse("x1*q1").unwrap());
        assert!(series("hbar*eps*x1", 1).is_zero());
    }

    #[test]
    fn degenerate_grading_rejected() {
        assert_eq!(Grading::new(0, 0, 0), Err(SeriesError::DegenerateGrading));
        assert!(Grading::new(0, 0, 1).is_ok());
    }

    #[test]
    fn ring_operations_truncate() {
        let a = series("1 + eps", 1);
        assert_eq!(a.mul(&series("1 - eps", 1)).unwrap(), series("1", 1));
        assert!(a.mul(&series("0", 1)).unwrap().is_zero());
        let b = series("1 + eps", 2);
        assert_eq!(b.mul(&b).unwrap(), series("1 + 2*eps + eps^2", 2));
        assert_eq!(a.mul(&b), Err(SeriesError::OrderMismatch(1, 2)));
        let other = GradedSeries::truncate(&Polynomial::one(), Grading::new(2, 1, 0).unwrap(), 1);
        assert_eq!(a.add(&other), Err(SeriesError::GradingMismatch));
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(
            series("1 - eps", 3).geometric_inverse().unwrap(),
            series("1 + eps + eps^2 + eps^3", 3)
        );
        assert_eq!(series("2", 3).geometric_inverse().unwrap(), series("1/2", 3));
        assert!(matches!(
            series("eps", 3).geometric_inverse(),
            Err(SeriesError::NotInvertible(_))
        ));
        assert!(series("x1 + eps", 3).geometric_inverse().is_err());
        let a = series("3 - eps*x1 + 2*eps^2*q1", 5);
        assert_eq!(a.mul(&a.geometric_inverse().unwrap()).unwrap(), series("1", 5));
    }

    #[test]
    fn log_examples() {
        assert_eq!(
            series("1 - eps", 3).log_series().unwrap(),
            series("-eps - (1/2)*eps^2 - (1/3)*eps^3", 3)
        );
        assert!(series("1", 4).log_series().unwrap().is_zero());
        assert!(matches!(series("2 + eps", 4).log_series(), Err(SeriesError::LogDomain(_))));
    }

    #[test]
    fn exp_examples() {
        assert_eq!(series("0", 3).exp_series().unwrap(), series("1", 3));
        assert_eq!(series("eps", 2).exp_series().unwrap(), series("1 + eps + (1/2)*eps^2", 2));
        assert!(matches!(series("1 + eps", 2).exp_series(), Err(SeriesError::ExpDomain(_))));
        let a = series("1 + eps*x1", 4);
        assert_eq!(a.log_series().unwrap().exp_series().unwrap(), a);
    }

    fn single(v: Var, rhs: &str, seed: &str, order: u32) -> (BTreeMap<Var, GradedSeries>, BTreeMap<Var, GradedSeries>) {
        let mut r = BTreeMap::new();
        let mut s = BTreeMap::new();
        r.insert(v, series(rhs, order));
        s.insert(v, series(seed, order));
        (r, s)
    }

    #[test]
    fn scalar_geometric_fixed_point() {
        let u = Var::y(1);
        let (r, s) = single(u, "x1 + eps*y1", "x1", 3);
        let fp = solve_fixed_point(&[u], &r, &s).unwrap();
        assert_eq!(fp.solution[&u], series("x1*(1 + eps + eps^2 + eps^3)", 3));
        assert!(fp.iterations <= 4);
    }

    #[test]
    fn constant_rhs_stabilizes_in_one_sweep() {
        let u = Var::y(1);
        let (r, s) = single(u, "x1", "x1", 3);
        let fp = solve_fixed_point(&[u], &r, &s).unwrap();
        assert_eq!(fp.iterations, 1);
        assert_eq!(fp.solution[&u], series("x1", 3));
    }

    #[test]
    fn non_contracting_rhs_is_rejected() {
        let u = Var::y(1);
        let (r, s) = single(u, "x1 + y1^2", "x1", 2);
        assert!(matches!(
            solve_fixed_point(&[u], &r, &s),
            Err(SeriesError::NoFixedPoint { iterations: 4 })
        ));
    }

    #[test]
    fn missing_equation_reported() {
        let r = BTreeMap::new();
        let s = BTreeMap::new();
        assert!(matches!(
            solve_fixed_point(&[Var::y(1)], &r, &s),
            Err(SeriesError::MissingEquation { .. })
        ));
    }

    #[test]
    fn linear_two_by_two_system() {
        // q = y, y = x + eps q  =>  q = y = x/(1 - eps); check by back-substitution.
        let order = 4;
        let (y, q) = (Var::y(1), Var::q(1));
        let mut rhs = BTreeMap::new();
        rhs.insert(q, series("y1", order));
        rhs.insert(y, series("x1 + eps*q1", order));
        let mut seed = BTreeMap::new();
        seed.insert(q, series("x1", order));
        seed.insert(y, series("x1", order));
        let expect = series("x1*(1 + eps + eps^2 + eps^3 + eps^4)", order);
        let mut results = Vec::new();
        for sweep in [Sweep::Ascending, Sweep::Descending, Sweep::Simultaneous] {
            let fp = solve_fixed_point_with(&[y, q], &rhs, &seed, sweep).unwrap();
            assert_eq!(fp.solution[&y], expect);
            assert_eq!(fp.solution[&q], expect);
            for v in [y, q] {
                assert_eq!(rhs[&v].substitute_series(&fp.solution), fp.solution[&v]);
            }
            results.push(fp.solution);
        }
        assert!(results.windows(2).all(|w| w[0] == w[1]));
        // Closed form: (1 - eps) * y = x1 up to order.
        let check = series("1 - eps", order).mul(&expect).unwrap();
        assert_eq!(check, series("x1", order));
    }
}
