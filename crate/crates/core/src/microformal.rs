//! Thick morphisms and their nonlinear pullbacks.
//!
//! A thick morphism `M1 => M2` is a generating function `S(x, q)` in source
//! positions `x1..xn1` and target momenta `q1..qn2`. The pullback of a function
//! `g(y)` on `M2` is
//!
//! ```text
//! f(x) = g(y) + S(x, q) - y.q    where   y = dS/dq (x, q),  q = dg/dy (y)
//! ```
//!
//! solved as a formal power series in `eps`. Admissibility requires every
//! monomial of `S` of momentum degree two or more to carry a positive power of
//! `eps`, which makes the stationary system a contraction in the filtration.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graded::{solve_fixed_point, GradedSeries, Grading, SeriesError};
use crate::poly::{Family, Monomial, Polynomial, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MorphismError {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("dimensions must be positive")]
    ZeroDimension,
    #[error("{context}: variable {var} is not allowed here")]
    ForeignVariable { var: Var, context: &'static str },
    #[error("inadmissible generating function: monomial `{monomial}` has momentum degree >= 2 but no eps factor")]
    Inadmissible { monomial: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("morphisms use different gradings or truncation orders")]
    ContextMismatch,
    #[error("generating functions must use a grading without momentum weight")]
    MomentumGrading,
    #[error("{0}")]
    Invalid(String),
}

/// Checks that every variable of `p` is accepted by `allowed`.
pub(crate) fn check_vars(
    p: &Polynomial,
    context: &'static str,
    allowed: impl Fn(Var) -> bool,
) -> Result<(), MorphismError> {
    match p.variables().into_iter().find(|&v| !allowed(v)) {
        Some(var) => Err(MorphismError::ForeignVariable { var, context }),
        None => Ok(()),
    }
}

/// First monomial of momentum degree >= 2 without an `eps` factor, ignoring
/// monomials that contain `hbar`.
pub(crate) fn inadmissible_monomial(s: &Polynomial) -> Option<Monomial> {
    s.terms()
        .map(|(m, _)| m)
        .filter(|m| m.degree_where(|f| f == Family::Hbar) == 0)
        .find(|m| m.degree_where(Family::is_momentum) >= 2 && m.degree_where(|f| f == Family::Eps) == 0)
        .cloned()
}

/// A thick morphism given by its generating function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThickMorphism {
    source_dim: u32,
    target_dim: u32,
    generating: GradedSeries,
}

impl ThickMorphism {
    pub fn new(source_dim: u32, target_dim: u32, generating: GradedSeries) -> Result<Self, MorphismError> {
        if source_dim == 0 || target_dim == 0 {
            return Err(MorphismError::ZeroDimension);
        }
        if generating.grading().momentum_excess_weight != 0 {
            return Err(MorphismError::MomentumGrading);
        }
        check_vars(generating.body(), "generating function", |v| match v.family {
            Family::X => v.index <= source_dim,
            Family::Q => v.index <= target_dim,
            Family::Eps => true,
            _ => false,
        })?;
        if let Some(m) = inadmissible_monomial(generating.body()) {
            return Err(MorphismError::Inadmissible { monomial: m.to_string() });
        }
        Ok(ThickMorphism { source_dim, target_dim, generating })
    }

    /// Truncates `s` under `grading` and validates it.
    pub fn from_polynomial(
        source_dim: u32,
        target_dim: u32,
        s: &Polynomial,
        grading: Grading,
        order: u32,
    ) -> Result<Self, MorphismError> {
        ThickMorphism::new(source_dim, target_dim, GradedSeries::truncate(s, grading, order))
    }

    /// `S = x1*q1 + ... + xn*qn`.
    pub fn identity(n: u32, order: u32) -> Result<Self, MorphismError> {
        let comps: Vec<Polynomial> = (1..=n).map(|i| Polynomial::var(Var::x(i))).collect();
        ThickMorphism::from_map(n, &comps, order)
    }

    /// Embeds an ordinary map `x -> phi(x)` as `S = phi^i(x) q_i`.
    pub fn from_map(source_dim: u32, components: &[Polynomial], order: u32) -> Result<Self, MorphismError> {
        let mut s = Polynomial::zero();
        for (i, phi) in components.iter().enumerate() {
            check_vars(phi, "map component", |v| v.family == Family::X && v.index <= source_dim)?;
            s = s + phi * &Polynomial::var(Var::q(i as u32 + 1));
        }
        ThickMorphism::from_polynomial(source_dim, components.len() as u32, &s, Grading::default(), order)
    }

    /// `S = x.q + eps_param * H(x, q)`, a thick diffeomorphism close to the
    /// identity.
    pub fn near_identity(n: u32, hamiltonian: &Polynomial, eps_param: Var, order: u32) -> Result<Self, MorphismError> {
        check_vars(hamiltonian, "hamiltonian", |v| matches!(v.family, Family::X | Family::Q) && v.index <= n)?;
        let mut s = &Polynomial::var(eps_param) * hamiltonian;
        for i in 1..=n {
            s = s + &Polynomial::var(Var::x(i)) * &Polynomial::var(Var::q(i));
        }
        ThickMorphism::from_polynomial(n, n, &s, Grading::default(), order)
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

    pub fn order(&self) -> u32 {
        self.generating.order()
    }

    pub fn grading(&self) -> Grading {
        self.generating.grading()
    }

    /// The q-linear coefficients `phi^i(x)` (with their `eps` corrections).
    pub fn map_components(&self) -> Vec<Polynomial> {
        let zero_q = zero_bindings(Family::Q, self.target_dim);
        (1..=self.target_dim)
            .map(|i| self.generating.body().partial(Var::q(i)).substitute(&zero_q))
            .collect()
    }

    /// Same generating function truncated at a lower order.
    pub fn with_order(&self, order: u32) -> Result<Self, MorphismError> {
        ThickMorphism::new(self.source_dim, self.target_dim, self.generating.with_order(order))
    }
}

fn zero_bindings(family: Family, n: u32) -> BTreeMap<Var, Polynomial> {
    (1..=n).map(|i| (Var::new(family, i), Polynomial::zero())).collect()
}

/// Result of a nonlinear pullback together with the stationary point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PullbackResult {
    pub f: GradedSeries,
    pub y_sol: BTreeMap<Var, GradedSeries>,
    pub q_sol: BTreeMap<Var, GradedSeries>,
    pub iterations: usize,
}

/// Nonlinear pullback of `g(y)` (which may also contain `eps` parameters).
pub fn pullback(phi: &ThickMorphism, g: &Polynomial) -> Result<PullbackResult, MorphismError> {
    let n2 = phi.target_dim;
    check_vars(g, "pulled-back function", |v| match v.family {
        Family::Y => v.index <= n2,
        Family::Eps => true,
        _ => false,
    })?;
    let s = &phi.generating;
    let g = s.lift(g);

    let mut rhs = BTreeMap::new();
    let mut seed = BTreeMap::new();
    let zero_q = zero_bindings(Family::Q, n2);
    let mut y_seed = BTreeMap::new();
    for i in 1..=n2 {
        let dsdq = s.partial(Var::q(i));
        y_seed.insert(Var::y(i), dsdq.substitute(&zero_q).into_body());
        seed.insert(Var::y(i), dsdq.substitute(&zero_q));
        rhs.insert(Var::y(i), dsdq);
    }
    for i in 1..=n2 {
        let dgdy = g.partial(Var::y(i));
        seed.insert(Var::q(i), dgdy.substitute(&y_seed));
        rhs.insert(Var::q(i), dgdy);
    }
    let unknowns: Vec<Var> = rhs.keys().copied().collect();
    let fp = solve_fixed_point(&unknowns, &rhs, &seed)?;

    let (y_sol, q_sol): (BTreeMap<_, _>, BTreeMap<_, _>) =
        fp.solution.into_iter().partition(|(v, _)| v.family == Family::Y);
    let mut f = g.substitute_series(&y_sol).add(&s.substitute_series(&q_sol))?;
    for i in 1..=n2 {
        let yq = y_sol[&Var::y(i)].mul(&q_sol[&Var::q(i)])?;
        f = f.sub(&yq)?;
    }
    Ok(PullbackResult { f, y_sol, q_sol, iterations: fp.iterations })
}

/// Composite generating function for "apply `inner` first, then `outer`",
/// together with the intermediate stationary point `(y*, q*)`.
pub(crate) struct Composition {
    pub generating: GradedSeries,
    pub y_sol: BTreeMap<Var, GradedSeries>,
    pub q_sol: BTreeMap<Var, GradedSeries>,
    /// Outer generating function renamed to `(y, r)`.
    pub outer_renamed: GradedSeries,
}

/// Stationary elimination shared by the classical and quantum compositions.
/// `inner_s` is in `(x, q)`, `outer_s` in `(x, q)` and is renamed to `(y, r)`.
pub(crate) fn compose_series(
    inner_s: &GradedSeries,
    outer_s: &GradedSeries,
    middle_dim: u32,
) -> Result<Composition, MorphismError> {
    if inner_s.grading() != outer_s.grading() || inner_s.order() != outer_s.order() {
        return Err(MorphismError::ContextMismatch);
    }
    let renamed = outer_s.body().map_vars(|v| match v.family {
        Family::X => Var::y(v.index),
        Family::Q => Var::r(v.index),
        _ => v,
    });
    let s2 = inner_s.lift(&renamed);

    let mut rhs = BTreeMap::new();
    let mut seed = BTreeMap::new();
    let zero_q = zero_bindings(Family::Q, middle_dim);
    let mut y_seed = BTreeMap::new();
    for i in 1..=middle_dim {
        let d = inner_s.partial(Var::q(i));
        y_seed.insert(Var::y(i), d.substitute(&zero_q).into_body());
        seed.insert(Var::y(i), d.substitute(&zero_q));
        rhs.insert(Var::y(i), d);
    }
    for i in 1..=middle_dim {
        let d = s2.partial(Var::y(i));
        seed.insert(Var::q(i), d.substitute(&y_seed));
        rhs.insert(Var::q(i), d);
    }
    let unknowns: Vec<Var> = rhs.keys().copied().collect();
    let fp = solve_fixed_point(&unknowns, &rhs, &seed)?;
    let (y_sol, q_sol): (BTreeMap<_, _>, BTreeMap<_, _>) =
        fp.solution.into_iter().partition(|(v, _)| v.family == Family::Y);

    let mut total = inner_s.substitute_series(&q_sol).add(&s2.substitute_series(&y_sol))?;
    for i in 1..=middle_dim {
        total = total.sub(&y_sol[&Var::y(i)].mul(&q_sol[&Var::q(i)])?)?;
    }
    let generating = total.lift(&total.body().rename_family(Family::R, Family::Q));
    Ok(Composition { generating, y_sol, q_sol, outer_renamed: s2 })
}

/// Composite thick morphism; `inner` is applied first, so that
/// `pullback(compose(outer, inner), g) = pullback(inner, pullback(outer, g))`.
pub fn compose(outer: &ThickMorphism, inner: &ThickMorphism) -> Result<ThickMorphism, MorphismError> {
    if inner.target_dim != outer.source_dim {
        return Err(MorphismError::DimensionMismatch(format!(
            "inner target {} vs outer source {}",
            inner.target_dim, outer.source_dim
        )));
    }
    let c = compose_series(&inner.generating, &outer.generating, inner.target_dim)?;
    ThickMorphism::new(inner.source_dim, outer.target_dim, c.generating)
}

/// Infinitesimal Hamilton-Jacobi action `f + eps * H(x, df/dx)`.
pub fn hj_action(hamiltonian: &Polynomial, f: &Polynomial) -> Result<Polynomial, MorphismError> {
    check_vars(hamiltonian, "hamiltonian", |v| matches!(v.family, Family::X | Family::Q))?;
    check_vars(f, "function", |v| v.family == Family::X)?;
    let n = hamiltonian.max_index(Family::Q);
    let grad: BTreeMap<Var, Polynomial> = (1..=n).map(|a| (Var::q(a), f.partial(Var::x(a)))).collect();
    Ok(f + &(&Polynomial::var(Var::EPS) * &hamiltonian.substitute(&grad)))
}

/// Canonical bracket `{F, G} = sum_a dF/dq_a dG/dx^a - dF/dx^a dG/dq_a`.
pub fn poisson_bracket(f: &Polynomial, g: &Polynomial) -> Polynomial {
    let n = [f, g]
        .iter()
        .flat_map(|p| [p.max_index(Family::X), p.max_index(Family::Q)])
        .max()
        .unwrap_or(0);
    let mut out = Polynomial::zero();
    for a in 1..=n {
        let (x, q) = (Var::x(a), Var::q(a));
        out = out + &f.partial(q) * &g.partial(x) - &f.partial(x) * &g.partial(q);
    }
    out
}

/// Outcome of [`lie_algebra_check`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LieCheck {
    /// `eps1*eps2` coefficient of `(P1* P2* - P2* P1*) f`.
    pub commutator: Polynomial,
    /// `{H1, H2}`.
    pub bracket: Polynomial,
    /// `eps` coefficient of the Hamilton-Jacobi action of the bracket on `f`.
    pub bracket_action: Polynomial,
    /// `+1` or `-1` when the commutator equals `sigma * bracket_action`;
    /// `None` when both vanish.
    pub sigma: Option<i8>,
    pub passed: bool,
}

/// Compares the second-order commutator of the pullbacks along
/// `x.q + eps1 H1` and `x.q + eps2 H2` with the action of `{H1, H2}`.
pub fn lie_algebra_check(
    h1: &Polynomial,
    h2: &Polynomial,
    f: &Polynomial,
    order: u32,
) -> Result<LieCheck, MorphismError> {
    if order < 2 {
        return Err(MorphismError::Invalid("lie check needs truncation order >= 2".into()));
    }
    check_vars(f, "function", |v| v.family == Family::X)?;
    let n = [h1, h2, f]
        .iter()
        .flat_map(|p| [p.max_index(Family::X), p.max_index(Family::Q)])
        .max()
        .unwrap_or(0)
        .max(1);
    let (e1, e2) = (Var::eps_k(1), Var::eps_k(2));
    let phi1 = ThickMorphism::near_identity(n, h1, e1, order)?;
    let phi2 = ThickMorphism::near_identity(n, h2, e2, order)?;
    let as_target = |p: &Polynomial| p.rename_family(Family::X, Family::Y);

    let apply = |first: &ThickMorphism, second: &ThickMorphism| -> Result<Polynomial, MorphismError> {
        let inner = pullback(first, &as_target(f))?.f.into_body();
        Ok(pullback(second, &as_target(&inner))?.f.into_body())
    };
    // P1* P2* f: pull back along P2 first.
    let forward = apply(&phi2, &phi1)?;
    let backward = apply(&phi1, &phi2)?;
    let commutator = (forward - backward).coefficient_of(e1, 1).coefficient_of(e2, 1);

    let bracket = poisson_bracket(h1, h2);
    let bracket_action = hj_action(&bracket, f)?.coefficient_of(Var::EPS, 1);
    let sigma = if commutator.is_zero() && bracket_action.is_zero() {
        None
    } else if commutator == bracket_action {
        Some(1)
    } else if commutator == -&bracket_action {
        Some(-1)
    } else {
        None
    };
    let passed = sigma.is_some() || (commutator.is_zero() && bracket_action.is_zero());
    Ok(LieCheck { commutator, bracket, bracket_action, sigma, passed })
}
