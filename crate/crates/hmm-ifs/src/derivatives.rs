//! Score and observed information via the tangent filter recursion.
//!
//! The parameter enters every step of the filter recursion, so the
//! score is not a running sum of any fixed function of consecutive
//! filters; it needs the joint recursion of the filter together with
//! its θ-derivative. Each step differentiates the forward-operator
//! application through the transition kernel, the emission density and
//! the incoming filter, then pushes the derivative through the
//! renormalization:
//!
//! ```text
//! u      = P(ξ) h            du_k = (∂_k P)(ξ) h + P(ξ) (∂_k h)  (+ emission term)
//! c      = ∫ u dm            dc_k = ∫ du_k dm
//! h'     = u / c             dh'_k = (du_k − (dc_k / c) u) / c
//! ∂_k log-lik += dc_k / c
//! ```
//!
//! Second derivatives are finite differences of the analytic score (the
//! default) or plain second differences of the log-likelihood; the two
//! independent routes cross-check each other.

use crate::error::{Error, Result};
use crate::family::{ModelFamily, ParamRole, ParamVector};
use crate::filter::FilterState;
use crate::linalg;
use crate::model::{Model, ObservationSequence};
use crate::operators::{emission_vector, FilterFunction, FilterKind};

/// Relative step for central differences of the log-likelihood and of
/// the analytic score.
pub const GRAD_FD_STEP: f64 = 1e-5;

/// Relative step for plain second differences of the log-likelihood.
/// Larger than `GRAD_FD_STEP`: the second difference divides rounding
/// noise of the log-likelihood by the squared step.
pub const HESSIAN_FD_STEP: f64 = 3e-3;

/// Filter state extended with its θ-derivative.
#[derive(Debug, Clone)]
pub struct TangentState {
    pub base: FilterState,
    /// `∂_k filter`, one row per free parameter.
    pub dfilter: Vec<Vec<f64>>,
    /// Accumulated score contributions `∂_k Σ log c`.
    pub dlog_lik: Vec<f64>,
    /// Score increment `dc/c` contributed by the most recent step.
    pub last_increment: Vec<f64>,
}

fn emission_d_vector(model: &Model, role: ParamRole, xi: f64, xi_prev: Option<f64>) -> Vec<f64> {
    let pts = model.grid().points();
    (0..model.n_states())
        .map(|y| match role {
            ParamRole::EmissionMu => model.emission().d_density_mu(xi, xi_prev, y, pts[y]),
            ParamRole::EmissionRho => model.emission().d_density_rho(xi, xi_prev, y, pts[y]),
            ParamRole::TransitionLogit { .. } => 0.0,
        })
        .collect()
}

/// One differentiated forward-operator application plus
/// renormalization. `h` must be the current normalized filter and `dh`
/// its derivative rows.
fn tangent_apply(
    model: &Model,
    roles: &[ParamRole],
    h: &[f64],
    dh: &[Vec<f64>],
    xi: f64,
    xi_prev: Option<f64>,
    step: usize,
) -> Result<(FilterState, Vec<Vec<f64>>, Vec<f64>)> {
    let n = model.n_states();
    let d = roles.len();
    let w = model.grid().weights();
    let e = emission_vector(model, xi, xi_prev);

    let mut u = vec![0.0; n];
    for y in 0..n {
        let mass = e[y] * h[y] * w[y];
        if mass == 0.0 {
            continue;
        }
        let row = model.transition().row(y);
        for x in 0..n {
            u[x] += row[x] * mass;
        }
    }
    let c = model.grid().integrate(&u);
    if c <= 0.0 || !c.is_finite() {
        return Err(Error::ImpossibleObservation { step });
    }

    let mut du = vec![vec![0.0; n]; d];
    for (k, role) in roles.iter().enumerate() {
        let de = emission_d_vector(model, *role, xi, xi_prev);
        let dp = &model.dtrans[k];
        let duk = &mut du[k];
        for y in 0..n {
            let base = e[y] * h[y] * w[y];
            let extra = (de[y] * h[y] + e[y] * dh[k][y]) * w[y];
            let row = model.transition().row(y);
            for x in 0..n {
                duk[x] += dp[y * n + x] * base + row[x] * extra;
            }
        }
    }

    let mut increment = vec![0.0; d];
    let mut dfilter = vec![vec![0.0; n]; d];
    let filter: Vec<f64> = u.iter().map(|v| v / c).collect();
    for k in 0..d {
        let dc = model.grid().integrate(&du[k]);
        increment[k] = dc / c;
        for x in 0..n {
            dfilter[k][x] = (du[k][x] - increment[k] * u[x]) / c;
        }
    }
    let state = FilterState {
        filter: FilterFunction::new(filter, FilterKind::Normalized)?,
        log_lik: c.ln(),
        last_log_c: c.ln(),
        step,
    };
    Ok((state, dfilter, increment))
}

/// Absorbs `ξ_0` into the tangent recursion, seeding the derivative with
/// the stationary law's derivative.
pub fn init_tangent(model: &Model, xi0: f64) -> Result<TangentState> {
    let (state, dfilter, increment) = tangent_apply(
        model,
        &model.param_roles,
        model.stationary().values(),
        &model.dpi,
        xi0,
        None,
        0,
    )?;
    Ok(TangentState {
        base: state,
        dfilter,
        dlog_lik: increment.clone(),
        last_increment: increment,
    })
}

/// One tangent step: propagates `(filter, ∂filter, ∂log-lik)` exactly.
pub fn tangent_filter_step(
    tstate: &TangentState,
    xi: f64,
    xi_prev: f64,
    model: &Model,
) -> Result<TangentState> {
    let step = tstate.base.step + 1;
    let (mut state, dfilter, increment) = tangent_apply(
        model,
        &model.param_roles,
        &tstate.base.filter.values,
        &tstate.dfilter,
        xi,
        Some(xi_prev),
        step,
    )?;
    state.log_lik += tstate.base.log_lik;
    let dlog_lik = tstate
        .dlog_lik
        .iter()
        .zip(&increment)
        .map(|(a, b)| a + b)
        .collect();
    Ok(TangentState {
        base: state,
        dfilter,
        dlog_lik,
        last_increment: increment,
    })
}

/// Runs the tangent recursion over the whole sequence.
pub fn run_tangent(model: &Model, obs: &ObservationSequence) -> Result<TangentState> {
    let mut t = init_tangent(model, obs.obs[0])?;
    for j in 1..obs.len() {
        t = tangent_filter_step(&t, obs.obs[j], obs.obs[j - 1], model)?;
    }
    Ok(t)
}

/// Analytic score `∂θ log p(ξ_0, …, ξ_n)` at θ.
pub fn score(
    family: &ModelFamily,
    obs: &ObservationSequence,
    theta: &ParamVector,
) -> Result<Vec<f64>> {
    let model = family.build_at(theta)?;
    Ok(run_tangent(&model, obs)?.dlog_lik)
}

/// Central finite differences of the log-likelihood: the independent
/// oracle for the analytic score.
pub fn fd_loglik_gradient(
    family: &ModelFamily,
    obs: &ObservationSequence,
    theta: &ParamVector,
) -> Result<Vec<f64>> {
    let d = theta.len();
    let mut grad = vec![0.0; d];
    for k in 0..d {
        let h = GRAD_FD_STEP * theta.values()[k].abs().max(1.0);
        let mut up = theta.values().to_vec();
        let mut dn = up.clone();
        up[k] += h;
        dn[k] -= h;
        let lu = crate::filter::loglik(&family.build_at(&theta.with_values(up)?)?, obs)?;
        let ld = crate::filter::loglik(&family.build_at(&theta.with_values(dn)?)?, obs)?;
        grad[k] = (lu - ld) / (2.0 * h);
    }
    Ok(grad)
}

/// Which route computes the observed information.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoMethod {
    /// Central differences of the analytic score (default).
    AnalyticFd,
    /// Plain second differences of the log-likelihood.
    FullFd,
}

/// Observed information `−∂²θ log p_n`, symmetrized.
#[derive(Debug, Clone)]
pub struct InformationMatrix {
    /// Row-major d-by-d matrix, exactly symmetric.
    pub matrix: Vec<f64>,
    pub dim: usize,
    /// Largest relative asymmetry before symmetrization.
    pub asymmetry: f64,
}

impl InformationMatrix {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim + j]
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::symmetric_eigenvalues(&self.matrix, self.dim)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }

    /// Square roots of the diagonal of the inverse: the asymptotic
    /// standard errors at a maximum.
    pub fn std_errors(&self) -> Result<Vec<f64>> {
        let inv = linalg::invert(&self.matrix, self.dim)?;
        (0..self.dim)
            .map(|i| {
                let v = inv[i * self.dim + i];
                if v > 0.0 {
                    Ok(v.sqrt())
                } else {
                    Err(Error::Optimization(format!(
                        "information inverse has nonpositive diagonal entry {v:.3e}"
                    )))
                }
            })
            .collect()
    }
}

/// Observed information at θ by the requested route.
pub fn observed_information(
    family: &ModelFamily,
    obs: &ObservationSequence,
    theta: &ParamVector,
    method: InfoMethod,
) -> Result<InformationMatrix> {
    let d = theta.len();
    let mut h = vec![0.0; d];
    match method {
        InfoMethod::AnalyticFd => {
            for (hk, v) in h.iter_mut().zip(theta.values()) {
                *hk = GRAD_FD_STEP * v.abs().max(1.0);
            }
            // Column j holds the finite difference of the score in the
            // direction of parameter j.
            let mut raw = vec![0.0; d * d];
            for j in 0..d {
                let mut up = theta.values().to_vec();
                let mut dn = up.clone();
                up[j] += h[j];
                dn[j] -= h[j];
                let su = score(family, obs, &theta.with_values(up)?)?;
                let sd = score(family, obs, &theta.with_values(dn)?)?;
                for i in 0..d {
                    raw[i * d + j] = -(su[i] - sd[i]) / (2.0 * h[j]);
                }
            }
            let mut asym = 0.0f64;
            let scale = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            let mut sym = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    asym = asym.max((raw[i * d + j] - raw[j * d + i]).abs() / scale);
                    sym[i * d + j] = 0.5 * (raw[i * d + j] + raw[j * d + i]);
                }
            }
            Ok(InformationMatrix {
                matrix: sym,
                dim: d,
                asymmetry: asym,
            })
        }
        InfoMethod::FullFd => {
            for (hk, v) in h.iter_mut().zip(theta.values()) {
                *hk = HESSIAN_FD_STEP * v.abs().max(1.0);
            }
            let eval = |values: Vec<f64>| -> Result<f64> {
                crate::filter::loglik(&family.build_at(&theta.with_values(values)?)?, obs)
            };
            let base = eval(theta.values().to_vec())?;
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                let mut up = theta.values().to_vec();
                let mut dn = up.clone();
                up[i] += h[i];
                dn[i] -= h[i];
                let lu = eval(up)?;
                let ld = eval(dn)?;
                m[i * d + i] = -(lu - 2.0 * base + ld) / (h[i] * h[i]);
                for j in i + 1..d {
                    let mut pp = theta.values().to_vec();
                    let mut pm = pp.clone();
                    let mut mp = pp.clone();
                    let mut mm = pp.clone();
                    pp[i] += h[i];
                    pp[j] += h[j];
                    pm[i] += h[i];
                    pm[j] -= h[j];
                    mp[i] -= h[i];
                    mp[j] += h[j];
                    mm[i] -= h[i];
                    mm[j] -= h[j];
                    let v = -(eval(pp)? - eval(pm)? - eval(mp)? + eval(mm)?) / (4.0 * h[i] * h[j]);
                    m[i * d + j] = v;
                    m[j * d + i] = v;
                }
            }
            Ok(InformationMatrix {
                matrix: m,
                dim: d,
                asymmetry: 0.0,
            })
        }
    }
}
