//! Observation-indexed operators on grid functions, in both composition
//! conventions, plus the exact path-sum evaluation of the joint density.
//!
//! The operator family acts on nonnegative functions `h` over the state
//! grid. Two conventions differ in which argument of the transition
//! kernel is integrated:
//!
//! * forward (first argument): `(P(ξ)h)(x) = ∫ p(y, x) f(ξ | y, ξ_prev) h(y) m(dy)`
//! * adjoint (second argument): `(P(ξ)h)(x) = ∫ p(x, y) f(ξ | y, ξ_prev) h(y) m(dy)`
//!
//! Composing the forward operators over `ξ_0, …, ξ_n` starting from the
//! stationary law yields the unnormalized joint density
//! `M_n(x) = p(X_{n+1} = x, ξ_0, …, ξ_n)`, so its total mass is the
//! likelihood. The adjoint composition applied to the stationary law
//! produces a scalar that is *not* the joint density (the stationary
//! factor attaches to the wrong end of the product); `adjoint_scalar_chain`
//! evaluates it exactly so the discrepancy can be measured.
//!
//! For the initial step the forward operator uses the initial emission
//! density `f(ξ_0 | y)` and keeps the transition factor, which is the
//! unique choice under which `∫ M_n dm` equals the path-sum density; the
//! adjoint scalar chain instead pairs `f(ξ_0 | x_0)` with no transition
//! factor, mirroring the composed product it evaluates.

use crate::error::{Error, Result};
use crate::model::{Model, ObservationSequence};

/// How a grid function is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Generic,
    /// Unnormalized joint density `M_n`.
    JointDensity,
    /// Normalized prediction filter (integrates to 1).
    Normalized,
}

/// A function over the state grid, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterFunction {
    pub values: Vec<f64>,
    pub kind: FilterKind,
}

impl FilterFunction {
    pub fn new(values: Vec<f64>, kind: FilterKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "filter function entries must be finite".into(),
            ));
        }
        if kind != FilterKind::Generic && values.iter().any(|v| *v < 0.0) {
            return Err(Error::Config(format!(
                "{kind:?} filter function must be nonnegative"
            )));
        }
        Ok(FilterFunction { values, kind })
    }

    pub fn generic(values: Vec<f64>) -> Result<Self> {
        FilterFunction::new(values, FilterKind::Generic)
    }

    /// The stationary law as a grid function.
    pub fn stationary(model: &Model) -> Self {
        FilterFunction {
            values: model.stationary().values().to_vec(),
            kind: FilterKind::Generic,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_dim(h: &FilterFunction, model: &Model) -> Result<()> {
    if h.len() != model.n_states() {
        return Err(Error::Dimension(format!(
            "filter function has {} entries, grid has {}",
            h.len(),
            model.n_states()
        )));
    }
    Ok(())
}

/// Emission vector `f(ξ | y, ξ_prev)` over grid states.
pub(crate) fn emission_vector(model: &Model, xi: f64, xi_prev: Option<f64>) -> Vec<f64> {
    (0..model.n_states())
        .map(|y| model.density(xi, xi_prev, y))
        .collect()
}

/// Forward operator: integrates the transition kernel in its first
/// argument. Applied to the joint density `M_{n-1}` this produces `M_n`.
pub fn apply_forward_operator(
    h: &FilterFunction,
    xi: f64,
    xi_prev: Option<f64>,
    model: &Model,
) -> Result<FilterFunction> {
    check_dim(h, model)?;
    let n = model.n_states();
    let w = model.grid().weights();
    let e = emission_vector(model, xi, xi_prev);
    let mut out = vec![0.0; n];
    for y in 0..n {
        let mass = e[y] * h.values[y] * w[y];
        if mass == 0.0 {
            continue;
        }
        let row = model.transition().row(y);
        for x in 0..n {
            out[x] += row[x] * mass;
        }
    }
    let kind = match h.kind {
        FilterKind::Generic => FilterKind::Generic,
        _ => FilterKind::JointDensity,
    };
    FilterFunction::new(out, kind)
}

/// Adjoint operator: integrates the transition kernel in its second
/// argument. This is the convention whose composed product does not
/// reproduce the joint density.
pub fn apply_adjoint_operator(
    h: &FilterFunction,
    xi: f64,
    xi_prev: Option<f64>,
    model: &Model,
) -> Result<FilterFunction> {
    check_dim(h, model)?;
    let n = model.n_states();
    let w = model.grid().weights();
    let e = emission_vector(model, xi, xi_prev);
    let mut out = vec![0.0; n];
    for (x, slot) in out.iter_mut().enumerate() {
        let row = model.transition().row(x);
        let mut acc = 0.0;
        for y in 0..n {
            acc += row[y] * e[y] * h.values[y] * w[y];
        }
        *slot = acc;
    }
    FilterFunction::new(out, FilterKind::Generic)
}

/// Composes the forward operators over the whole sequence starting from
/// the stationary law, entirely in linear space. Returns the
/// unnormalized joint density `M_n` over the next state.
///
/// Linear-space evaluation underflows on long sequences; this is meant
/// for short oracle checks, with the filter module covering long chains.
pub fn forward_chain(model: &Model, obs: &ObservationSequence) -> Result<FilterFunction> {
    let mut g = FilterFunction {
        values: model.stationary().values().to_vec(),
        kind: FilterKind::JointDensity,
    };
    for t in 0..obs.len() {
        g = apply_forward_operator(&g, obs.obs[t], obs.prev(t), model)?;
        if g.values.iter().all(|v| *v == 0.0) {
            return Err(Error::LinearUnderflow { step: t });
        }
    }
    Ok(g)
}

/// Joint density of the observations by integrating the forward chain
/// over the final state.
pub fn joint_density_via_composition(model: &Model, obs: &ObservationSequence) -> Result<f64> {
    let g = forward_chain(model, obs)?;
    Ok(model.grid().integrate(&g.values))
}

/// The scalar produced by the adjoint composition applied to the
/// stationary law:
///
/// `∫⋯∫ π(x_n) { Π_{j=n}^{1} p(x_{j-1}, x_j) f(ξ_j | x_j, ξ_{j-1}) } f(ξ_0 | x_0)`
///
/// evaluated exactly by right-to-left accumulation. For `n = 0`, and
/// whenever the stationary law is uniform, this coincides with the true
/// density; generically it does not.
pub fn adjoint_scalar_chain(model: &Model, obs: &ObservationSequence) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::Config(
            "observation sequence must be nonempty".into(),
        ));
    }
    let mut g = FilterFunction {
        values: model.stationary().values().to_vec(),
        kind: FilterKind::Generic,
    };
    for j in (1..obs.len()).rev() {
        g = apply_adjoint_operator(&g, obs.obs[j], Some(obs.obs[j - 1]), model)?;
    }
    let w = model.grid().weights();
    let mut acc = 0.0;
    for (x, (gv, wx)) in g.values.iter().zip(w).enumerate() {
        acc += model.density(obs.obs[0], None, x) * gv * wx;
    }
    Ok(acc)
}

/// Enumeration budget for the exact path sum.
pub const PATH_SUM_BUDGET: f64 = 1e7;

/// Exact joint density by weighted enumeration of every hidden path:
///
/// `Σ_{x_0..x_n} π(x_0) f(ξ_0 | x_0) Π_{j=1}^n p(x_{j-1}, x_j) f(ξ_j | x_j, ξ_{j-1})`
///
/// The defining expression of the likelihood and the oracle against
/// which every other likelihood computation is checked.
pub fn joint_density_path_sum(model: &Model, obs: &ObservationSequence) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::Config(
            "observation sequence must be nonempty".into(),
        ));
    }
    let m = model.n_states();
    let len = obs.len();
    let paths = (m as f64).powi(len as i32);
    if paths > PATH_SUM_BUDGET {
        return Err(Error::BudgetExceeded(format!(
            "{m}^{len} = {paths:.3e} hidden paths exceed the {PATH_SUM_BUDGET:.0e} budget"
        )));
    }
    // Emission values per (step, state), to keep the walk O(1) per node.
    let emit: Vec<Vec<f64>> = (0..len)
        .map(|t| emission_vector(model, obs.obs[t], obs.prev(t)))
        .collect();
    let w = model.grid().weights();
    let pi = model.stationary().values();

    let mut total = 0.0;
    let mut stack: Vec<(usize, usize, f64)> = (0..m)
        .map(|x0| (0usize, x0, pi[x0] * w[x0] * emit[0][x0]))
        .collect();
    while let Some((t, x, acc)) = stack.pop() {
        if t + 1 == len {
            total += acc;
            continue;
        }
        if acc == 0.0 {
            continue;
        }
        let row = model.transition().row(x);
        for x_next in 0..m {
            stack.push((
                t + 1,
                x_next,
                acc * row[x_next] * w[x_next] * emit[t + 1][x_next],
            ));
        }
    }
    Ok(total)
}
