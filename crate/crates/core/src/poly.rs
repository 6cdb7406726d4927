//! Exact multivariate polynomials over the rationals.
//!
//! Variables come from a fixed set of indexed families (`x1`, `y2`, `q1`, ...)
//! plus the formal parameters `eps` and `hbar`. Polynomials are stored sparsely
//! in canonical form: no zero coefficients, no zero exponents, so structural
//! equality is mathematical equality.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Arbitrary-precision rational coefficient, always kept in lowest terms with a
/// positive denominator.
pub type Rational = BigRational;

/// Variable families in canonical print order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    X,
    Y,
    Q,
    R,
    P,
    Eps,
    Hbar,
}

impl Family {
    pub fn is_position(self) -> bool {
        matches!(self, Family::X | Family::Y)
    }

    pub fn is_momentum(self) -> bool {
        matches!(self, Family::Q | Family::R | Family::P)
    }

    pub fn is_parameter(self) -> bool {
        matches!(self, Family::Eps | Family::Hbar)
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Family::X => "x",
            Family::Y => "y",
            Family::Q => "q",
            Family::R => "r",
            Family::P => "p",
            Family::Eps => "eps",
            Family::Hbar => "hbar",
        }
    }
}

/// A variable name.
///
/// Coordinate families carry a 1-based index. `eps` and `hbar` normally carry
/// index 0; `eps` may also carry a positive index when several independent
/// deformation parameters are needed at once (`eps1`, `eps2`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub family: Family,
    pub index: u32,
}

impl Var {
    pub const EPS: Var = Var { family: Family::Eps, index: 0 };
    pub const HBAR: Var = Var { family: Family::Hbar, index: 0 };

    pub const fn new(family: Family, index: u32) -> Self {
        Var { family, index }
    }

    pub const fn x(i: u32) -> Self {
        Var::new(Family::X, i)
    }

    pub const fn y(i: u32) -> Self {
        Var::new(Family::Y, i)
    }

    pub const fn q(i: u32) -> Self {
        Var::new(Family::Q, i)
    }

    pub const fn r(i: u32) -> Self {
        Var::new(Family::R, i)
    }

    pub const fn p(i: u32) -> Self {
        Var::new(Family::P, i)
    }

    /// Numbered deformation parameter; `eps_k(0)` is plain `eps`.
    pub const fn eps_k(k: u32) -> Self {
        Var::new(Family::Eps, k)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Eps | Family::Hbar if self.index == 0 => f.write_str(self.family.prefix()),
            _ => write!(f, "{}{}", self.family.prefix(), self.index),
        }
    }
}

/// A power product of variables, sorted by variable with strictly positive
/// exponents. The empty product is the constant monomial.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial(Vec<(Var, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(v: Var) -> Self {
        Monomial(vec![(v, 1)])
    }

    /// Builds a monomial from arbitrary `(var, exp)` pairs, merging repeats and
    /// dropping zero exponents.
    pub fn from_pairs<I: IntoIterator<Item = (Var, u32)>>(pairs: I) -> Self {
        let mut map: BTreeMap<Var, u32> = BTreeMap::new();
        for (v, e) in pairs {
            *map.entry(v).or_default() += e;
        }
        Monomial(map.into_iter().filter(|&(_, e)| e > 0).collect())
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn factors(&self) -> &[(Var, u32)] {
        &self.0
    }

    pub fn exponent(&self, v: Var) -> u32 {
        self.0
            .binary_search_by(|(w, _)| w.cmp(&v))
            .map(|i| self.0[i].1)
            .unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e).sum()
    }

    /// Sum of exponents over variables whose family satisfies `pred`.
    pub fn degree_where(&self, pred: impl Fn(Family) -> bool) -> u32 {
        self.0
            .iter()
            .filter(|(v, _)| pred(v.family))
            .map(|&(_, e)| e)
            .sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial(out)
    }

    /// Removes every occurrence of `v`, returning its exponent and the rest.
    pub fn split_off(&self, v: Var) -> (u32, Monomial) {
        let mut rest = Vec::with_capacity(self.0.len());
        let mut exp = 0;
        for &(w, e) in &self.0 {
            if w == v {
                exp = e;
            } else {
                rest.push((w, e));
            }
        }
        (exp, Monomial(rest))
    }

    /// Graded-lex comparison used for printing: lower total degree first, then
    /// larger exponent on the earliest variable first.
    pub fn print_cmp(&self, other: &Monomial) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| {
                let (a, b) = (&self.0, &other.0);
                for k in 0..a.len().min(b.len()) {
                    let ord = a[k].0.cmp(&b[k].0).then_with(|| b[k].1.cmp(&a[k].1));
                    if ord != Ordering::Equal {
                        return ord;
                    }
                }
                b.len().cmp(&a.len())
            })
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        for (k, (v, e)) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("*")?;
            }
            if *e == 1 {
                write!(f, "{v}")?;
            } else {
                write!(f, "{v}^{e}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable {0}")]
    Unbound(Var),
}

/// Sparse polynomial with rational coefficients in canonical form.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, Rational>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial::default()
    }

    pub fn one() -> Self {
        Polynomial::constant(Rational::one())
    }

    pub fn constant(c: Rational) -> Self {
        Polynomial::term(c, Monomial::one())
    }

    pub fn integer(n: i64) -> Self {
        Polynomial::constant(Rational::from_integer(BigInt::from(n)))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Polynomial::constant(Rational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn var(v: Var) -> Self {
        Polynomial::term(Rational::one(), Monomial::var(v))
    }

    pub fn term(c: Rational, m: Monomial) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(m, c);
        }
        Polynomial { terms }
    }

    pub fn from_terms<I: IntoIterator<Item = (Monomial, Rational)>>(terms: I) -> Self {
        let mut p = Polynomial::zero();
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Rational)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, m: &Monomial) -> Rational {
        self.terms.get(m).cloned().unwrap_or_else(Rational::zero)
    }

    /// The constant term.
    pub fn constant_term(&self) -> Rational {
        self.coefficient(&Monomial::one())
    }

    /// Returns the value if the polynomial is a constant.
    pub fn as_constant(&self) -> Option<Rational> {
        match self.terms.len() {
            0 => Some(Rational::zero()),
            1 => self.terms.get(&Monomial::one()).cloned(),
            _ => None,
        }
    }

    pub fn add_term(&mut self, m: Monomial, c: Rational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn variables(&self) -> BTreeSet<Var> {
        self.terms
            .keys()
            .flat_map(|m| m.factors().iter().map(|&(v, _)| v))
            .collect()
    }

    /// Largest index used by family `fam`, or 0 when absent.
    pub fn max_index(&self, fam: Family) -> u32 {
        self.variables()
            .into_iter()
            .filter(|v| v.family == fam)
            .map(|v| v.index)
            .max()
            .unwrap_or(0)
    }

    pub fn degree_in(&self, v: Var) -> u32 {
        self.terms.keys().map(|m| m.exponent(v)).max().unwrap_or(0)
    }

    pub fn scale(&self, c: &Rational) -> Polynomial {
        if c.is_zero() {
            return Polynomial::zero();
        }
        Polynomial {
            terms: self.terms.iter().map(|(m, a)| (m.clone(), a * c)).collect(),
        }
    }

    pub fn pow(&self, n: u32) -> Polynomial {
        let mut result = Polynomial::one();
        let mut base = self.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                result = &result * &base;
            }
            n >>= 1;
            if n > 0 {
                base = &base * &base;
            }
        }
        result
    }

    /// Keeps only the terms for which `keep` returns true.
    pub fn filter(&self, keep: impl Fn(&Monomial) -> bool) -> Polynomial {
        Polynomial {
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| keep(m))
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect(),
        }
    }

    /// Coefficient of `v^k`, as a polynomial in the remaining variables.
    pub fn coefficient_of(&self, v: Var, k: u32) -> Polynomial {
        let mut out = Polynomial::zero();
        for (m, c) in &self.terms {
            let (e, rest) = m.split_off(v);
            if e == k {
                out.add_term(rest, c.clone());
            }
        }
        out
    }

    /// Exact partial derivative with respect to `v`.
    pub fn partial(&self, v: Var) -> Polynomial {
        let mut out = Polynomial::zero();
        for (m, c) in &self.terms {
            let (e, rest) = m.split_off(v);
            if e == 0 {
                continue;
            }
            let m2 = rest.mul(&Monomial::from_pairs([(v, e - 1)]));
            out.add_term(m2, c * Rational::from_integer(BigInt::from(e)));
        }
        out
    }

    /// Simultaneous substitution; unbound variables are left in place.
    pub fn substitute(&self, bindings: &BTreeMap<Var, Polynomial>) -> Polynomial {
        self.substitute_with(bindings, &|a, b| a * b)
    }

    /// Substitution with a caller-supplied product, used by the graded layer
    /// to drop over-order terms as they are formed.
    pub(crate) fn substitute_with(
        &self,
        bindings: &BTreeMap<Var, Polynomial>,
        mul: &dyn Fn(&Polynomial, &Polynomial) -> Polynomial,
    ) -> Polynomial {
        if bindings.is_empty() {
            return mul(self, &Polynomial::one());
        }
        let mut powers: HashMap<(Var, u32), Polynomial> = HashMap::new();
        let mut out = Polynomial::zero();
        for (m, c) in &self.terms {
            let mut kept = Vec::new();
            let mut factor = Polynomial::constant(c.clone());
            for &(v, e) in m.factors() {
                match bindings.get(&v) {
                    None => kept.push((v, e)),
                    Some(b) => {
                        let pw = power_cached(&mut powers, v, e, b, mul);
                        factor = mul(&factor, &pw);
                    }
                }
                if factor.is_zero() {
                    break;
                }
            }
            if factor.is_zero() {
                continue;
            }
            let rest = Monomial::from_pairs(kept);
            let shifted = if rest.is_one() {
                factor
            } else {
                mul(&factor, &Polynomial::term(Rational::one(), rest))
            };
            out = out + shifted;
        }
        out
    }

    /// Renames every variable of family `from` to family `to`, keeping indices.
    pub fn rename_family(&self, from: Family, to: Family) -> Polynomial {
        self.map_vars(|v| if v.family == from { Var::new(to, v.index) } else { v })
    }

    /// Applies an injective variable renaming.
    pub fn map_vars(&self, f: impl Fn(Var) -> Var) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().map(|(m, c)| {
            (
                Monomial::from_pairs(m.factors().iter().map(|&(v, e)| (f(v), e))),
                c.clone(),
            )
        }))
    }

    /// Numeric evaluation. Every variable must be bound.
    pub fn eval_numeric(&self, point: &BTreeMap<Var, Complex64>) -> Result<Complex64, EvalError> {
        // Power tables per variable, filled up to the largest exponent used.
        let mut tables: BTreeMap<Var, Vec<Complex64>> = BTreeMap::new();
        for m in self.terms.keys() {
            for &(v, e) in m.factors() {
                let z = *point.get(&v).ok_or(EvalError::Unbound(v))?;
                let table = tables.entry(v).or_insert_with(|| vec![Complex64::new(1.0, 0.0)]);
                while table.len() <= e as usize {
                    let last = *table.last().unwrap();
                    table.push(last * z);
                }
            }
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, c) in &self.terms {
            let mut t = Complex64::new(rational_to_f64(c), 0.0);
            for &(v, e) in m.factors() {
                t *= tables[&v][e as usize];
            }
            acc += t;
        }
        Ok(acc)
    }

    /// Real-valued evaluation convenience wrapper.
    pub fn eval_real(&self, point: &BTreeMap<Var, f64>) -> Result<f64, EvalError> {
        let pt = point.iter().map(|(&v, &a)| (v, Complex64::new(a, 0.0))).collect();
        Ok(self.eval_numeric(&pt)?.re)
    }
}

fn power_cached(
    cache: &mut HashMap<(Var, u32), Polynomial>,
    v: Var,
    e: u32,
    base: &Polynomial,
    mul: &dyn Fn(&Polynomial, &Polynomial) -> Polynomial,
) -> Polynomial {
    if let Some(p) = cache.get(&(v, e)) {
        return p.clone();
    }
    let p = if e == 1 {
        mul(base, &Polynomial::one())
    } else {
        let prev = power_cached(cache, v, e - 1, base, mul);
        mul(&prev, base)
    };
    cache.insert((v, e), p.clone());
    p
}

pub fn rational_to_f64(c: &Rational) -> f64 {
    match (c.numer().to_f64(), c.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // Huge numerator or denominator: scale both down before dividing.
            let shift = c.numer().bits().max(c.denom().bits()).saturating_sub(1000);
            let n = (c.numer() >> shift).to_f64().unwrap_or(f64::NAN);
            let d = (c.denom() >> shift).to_f64().unwrap_or(f64::NAN);
            n / d
        }
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Add for Polynomial {
    type Output = Polynomial;
    fn add(mut self, rhs: Polynomial) -> Polynomial {
        if self.terms.len() < rhs.terms.len() {
            return rhs + self;
        }
        for (m, c) in rhs.terms {
            self.add_term(m, c);
        }
        self
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        Polynomial {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }
}

impl Neg for Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        -&self
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c);
        }
        out
    }
}

impl Sub for Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: Polynomial) -> Polynomial {
        &self - &rhs
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }
}

impl Mul for Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: Polynomial) -> Polynomial {
        &self * &rhs
    }
}

impl From<Var> for Polynomial {
    fn from(v: Var) -> Self {
        Polynomial::var(v)
    }
}

impl fmt::Display for Polynomial {
    /// Canonical text: graded-lex term order, parseable by [`crate::parse`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let mut ordered: Vec<_> = self.terms.iter().collect();
        ordered.sort_by(|a, b| a.0.print_cmp(b.0));
        for (k, (m, c)) in ordered.into_iter().enumerate() {
            let negative = c.is_negative();
            let mag = c.abs();
            if k == 0 {
                if negative {
                    f.write_str("-")?;
                }
            } else {
                f.write_str(if negative { " - " } else { " + " })?;
            }
            let unit = mag.is_one();
            if m.is_one() {
                write_coefficient(f, &mag)?;
            } else if unit {
                // A leading "-x1^2" would parse as (-x1)^2.
                if k == 0 && negative && m.factors()[0].1 > 1 {
                    f.write_str("1*")?;
                }
                write!(f, "{m}")?;
            } else {
                write_coefficient(f, &mag)?;
                write!(f, "*{m}")?;
            }
        }
        Ok(())
    }
}

fn write_coefficient(f: &mut fmt::Formatter<'_>, c: &Rational) -> fmt::Result {
    if c.is_integer() {
        write!(f, "{}", c.numer())
    } else {
        write!(f, "({}/{})", c.numer(), c.denom())
    }
}
