//! Numerical reports for the four structural findings about this model
//! class:
//!
//! 1. composing the observation operators in the wrong kernel argument
//!    does not reproduce the joint density (`operator_mismatch_report`);
//! 2. the unnormalized filter mass drifts to zero or infinity on long
//!    sequences (`degeneracy_report`);
//! 3. per-step score increments are not recoverable from consecutive
//!    filter values alone, so differentiating the likelihood needs the
//!    extended tangent recursion (`score_system_check`);
//! 4. the bounded-likelihood-ratio condition C5 fails for unbounded
//!    Gaussian state spaces: the two-step emission ratio
//!    `exp{z² − y² + (ξ_0 + ξ_1)(y − z)}` is unbounded (`c5_ratio`,
//!    `c5_sup_scan`).

use crate::derivatives::{fd_loglik_gradient, init_tangent, score, tangent_filter_step};
use crate::error::{Error, Result};
use crate::family::{ModelFamily, ParamRole, ParamVector};
use crate::filter::{init_filter, predict_update_step, unnormalized_filter_trace};
use crate::linalg::least_squares_line;
use crate::model::{simulate, Model, ObservationSequence};
use crate::operators::{
    adjoint_scalar_chain, joint_density_path_sum, joint_density_via_composition,
};

// ---------------------------------------------------------------------------
// 1. Operator mismatch
// ---------------------------------------------------------------------------

/// One sequence's comparison of the three density routes.
#[derive(Debug, Clone)]
pub struct MismatchRow {
    /// Step index of the last observation (sequence length minus one).
    pub n: usize,
    pub adjoint_scalar: f64,
    pub corrected_density: f64,
    pub bruteforce_density: f64,
    /// |adjoint − bruteforce| / bruteforce.
    pub adjoint_rel_gap: f64,
    /// |corrected − bruteforce| / bruteforce.
    pub corrected_rel_gap: f64,
}

#[derive(Debug, Clone)]
pub struct MismatchReport {
    pub rows: Vec<MismatchRow>,
    pub model_desc: String,
}

/// Tabulates the adjoint scalar chain against the forward composition
/// and the exact path sum for each sequence.
pub fn operator_mismatch_report(
    model: &Model,
    sequences: &[ObservationSequence],
) -> Result<MismatchReport> {
    let mut rows = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let brute = joint_density_path_sum(model, seq)?;
        let corrected = joint_density_via_composition(model, seq)?;
        let adjoint = adjoint_scalar_chain(model, seq)?;
        rows.push(MismatchRow {
            n: seq.len() - 1,
            adjoint_scalar: adjoint,
            corrected_density: corrected,
            bruteforce_density: brute,
            adjoint_rel_gap: (adjoint - brute).abs() / brute,
            corrected_rel_gap: (corrected - brute).abs() / brute,
        });
    }
    Ok(MismatchReport {
        rows,
        model_desc: format!(
            "{}-state grid, {:?} emission",
            model.n_states(),
            kind_tag(model)
        ),
    })
}

fn kind_tag(model: &Model) -> &'static str {
    match model.emission() {
        crate::model::EmissionKernel::GaussianMean { .. } => "gaussian_mean",
        crate::model::EmissionKernel::GaussianAr { .. } => "gaussian_ar",
        crate::model::EmissionKernel::Table { .. } => "table",
    }
}

// ---------------------------------------------------------------------------
// 2. Filter degeneracy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DegeneracyReport {
    pub n: usize,
    pub seed: u64,
    /// `log ∫ M_k dm` per prefix.
    pub log_mass: Vec<f64>,
    /// Least-squares drift of the log mass per step.
    pub slope: f64,
    pub intercept: f64,
    /// Upper bound on the drift: log of the emission density's supremum.
    pub bound: f64,
    pub final_log_mass: f64,
}

impl DegeneracyReport {
    /// The drift bound holds pathwise, so both checks are deterministic.
    pub fn passes(&self) -> bool {
        self.slope <= self.bound + 1e-12
            && self.final_log_mass <= (self.log_mass.len() as f64) * self.bound + 1e-9
    }
}

/// Simulates a sequence, traces the unnormalized mass, and fits a
/// straight line to `log_mass` versus step. Every per-step normalizer is
/// bounded by the emission density's supremum, so the fitted slope can
/// never exceed `log sup f` and the mass drifts to zero at least
/// linearly on the log scale.
pub fn degeneracy_report(model: &Model, n: usize, seed: u64) -> Result<DegeneracyReport> {
    if n < 20 {
        return Err(Error::Config(format!(
            "degeneracy report needs n >= 20, got {n}"
        )));
    }
    let seq = simulate(model, n, seed)?;
    let trace = unnormalized_filter_trace(model, &seq)?;
    let xs: Vec<f64> = (0..trace.log_mass.len()).map(|k| k as f64).collect();
    let (slope, intercept) = least_squares_line(&xs, &trace.log_mass);
    let bound = model.emission().log_sup_density();
    Ok(DegeneracyReport {
        n,
        seed,
        final_log_mass: *trace.log_mass.last().expect("trace is nonempty"),
        log_mass: trace.log_mass,
        slope,
        intercept,
        bound,
    })
}

// ---------------------------------------------------------------------------
// 3. Score-system check
// ---------------------------------------------------------------------------

/// Outcome of the matched-filter-pair construction.
#[derive(Debug, Clone)]
pub enum ScoreSystemStatus {
    /// Two parameter points with matching consecutive filter pairs but
    /// different per-step score increments.
    Witness {
        theta_a: Vec<f64>,
        theta_b: Vec<f64>,
        /// Sup-norm distance between the matched stationary filters.
        filter_gap: f64,
        increment_a: Vec<f64>,
        increment_b: Vec<f64>,
        /// Largest componentwise difference of the increments.
        max_increment_diff: f64,
    },
    /// One-state models have a constant filter; the increments coincide
    /// trivially and the construction does not apply.
    Degenerate,
    /// The construction could not be carried out for this family.
    Inconclusive(String),
}

#[derive(Debug, Clone)]
pub struct ScoreSystemReport {
    pub status: ScoreSystemStatus,
    /// Positive control: sup-norm residual of the analytic score against
    /// central finite differences on the provided sequence.
    pub fd_residual: f64,
    pub param_names: Vec<String>,
}

/// Constant observation value used by the reference construction.
const MATCH_OBS_VALUE: f64 = 0.3;
/// Steps iterated to reach the filter's stationary point.
const MATCH_STEPS: usize = 400;
/// Logit values of the alternative kernel: a wide spread keeps the
/// reachable set of stationary filters large enough to bracket.
const MATCH_ALT_LOGIT: f64 = 2.0;

/// Demonstrates that per-step score increments `dc/c` are not a
/// function of the consecutive filter pair alone.
///
/// Reference construction: feed a constant observation sequence so the
/// filter converges to a stationary point, producing the consecutive
/// pair `(m*, m*)`. Pick a second parameter point with a different
/// transition kernel and tune its free emission mean (one-dimensional
/// bisection) until its stationary filter matches `m*`. The two runs
/// then share the filter pair and the observation context at the final
/// step, yet their score increments differ — so no fixed function of
/// `(M̄_{j-1}, M̄_j)` can reproduce them. The analytic-score-versus-
/// finite-difference residual on the caller's sequence is attached as
/// the positive control.
pub fn score_system_check(
    family: &ModelFamily,
    obs: &ObservationSequence,
) -> Result<ScoreSystemReport> {
    let theta0 = family.theta0();
    let fd_residual = fd_control(family, obs, &theta0)?;
    let names = theta0.names().to_vec();

    if family.grid().len() == 1 {
        return Ok(ScoreSystemReport {
            status: ScoreSystemStatus::Degenerate,
            fd_residual,
            param_names: names,
        });
    }
    let roles = family.layout().roles();
    let has_free_logit = roles
        .iter()
        .any(|r| matches!(r, ParamRole::TransitionLogit { .. }));
    let mu_idx = roles.iter().position(|r| *r == ParamRole::EmissionMu);
    if family.grid().len() != 2 || !has_free_logit || mu_idx.is_none() {
        return Ok(ScoreSystemReport {
            status: ScoreSystemStatus::Inconclusive(
                "construction needs a 2-state family with free transition logits and a free emission mean"
                    .into(),
            ),
            fd_residual,
            param_names: names,
        });
    }
    let mu_idx = mu_idx.expect("checked above");

    let model_a = family.build_at(&theta0)?;
    let target = stationary_filter(&model_a)?;

    // Alternative kernel: spread the free logits so the reachable
    // stationary filters bracket the target.
    let mut theta_b_values = theta0.values().to_vec();
    for (k, role) in roles.iter().enumerate() {
        if let ParamRole::TransitionLogit { row, .. } = role {
            theta_b_values[k] = if *row == 0 {
                MATCH_ALT_LOGIT
            } else {
                -MATCH_ALT_LOGIT
            };
        }
    }

    let eval = |mu: f64| -> Result<f64> {
        let mut v = theta_b_values.clone();
        v[mu_idx] = mu;
        let model = family.build_at(&theta0.with_values(v)?)?;
        Ok(stationary_filter(&model)?.0[0] - target.0[0])
    };
    let (mut lo, mut hi) = (-8.0f64, 8.0f64);
    let (f_lo, f_hi) = (eval(lo)?, eval(hi)?);
    if f_lo.signum() == f_hi.signum() {
        return Ok(ScoreSystemReport {
            status: ScoreSystemStatus::Inconclusive(
                "stationary filters of the alternative kernel do not bracket the target".into(),
            ),
            fd_residual,
            param_names: names,
        });
    }
    let mut f_lo = f_lo;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let f_mid = eval(mid)?;
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let mu_b = 0.5 * (lo + hi);
    let mut v = theta_b_values;
    v[mu_idx] = mu_b;
    let theta_b = theta0.with_values(v)?;
    let model_b = family.build_at(&theta_b)?;
    let matched = stationary_filter(&model_b)?;

    let filter_gap = target
        .0
        .iter()
        .zip(&matched.0)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if filter_gap > 1e-8 || target.1 > 1e-10 || matched.1 > 1e-10 {
        return Ok(ScoreSystemReport {
            status: ScoreSystemStatus::Inconclusive(format!(
                "filter pairs failed to match (gap {filter_gap:.3e})"
            )),
            fd_residual,
            param_names: names,
        });
    }

    let inc_a = stationary_increment(&model_a)?;
    let inc_b = stationary_increment(&model_b)?;
    let max_diff = inc_a
        .iter()
        .zip(&inc_b)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(ScoreSystemReport {
        status: ScoreSystemStatus::Witness {
            theta_a: theta0.values().to_vec(),
            theta_b: theta_b.values().to_vec(),
            filter_gap,
            increment_a: inc_a,
            increment_b: inc_b,
            max_increment_diff: max_diff,
        },
        fd_residual,
        param_names: names,
    })
}

fn fd_control(family: &ModelFamily, obs: &ObservationSequence, theta: &ParamVector) -> Result<f64> {
    let analytic = score(family, obs, theta)?;
    let fd = fd_loglik_gradient(family, obs, theta)?;
    Ok(analytic
        .iter()
        .zip(&fd)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
}

/// Runs the filter on the constant sequence until it settles; returns
/// the stationary filter and the distance between the last two iterates.
fn stationary_filter(model: &Model) -> Result<(Vec<f64>, f64)> {
    let mut state = init_filter(model, MATCH_OBS_VALUE)?;
    let mut last_move = f64::INFINITY;
    for _ in 1..MATCH_STEPS {
        let next = predict_update_step(&state, MATCH_OBS_VALUE, MATCH_OBS_VALUE, model)?;
        last_move = state
            .filter
            .values
            .iter()
            .zip(&next.filter.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        state = next;
    }
    Ok((state.filter.values, last_move))
}

/// Per-step score increment at the filter's stationary point.
fn stationary_increment(model: &Model) -> Result<Vec<f64>> {
    let mut t = init_tangent(model, MATCH_OBS_VALUE)?;
    for _ in 1..MATCH_STEPS {
        t = tangent_filter_step(&t, MATCH_OBS_VALUE, MATCH_OBS_VALUE, model)?;
    }
    Ok(t.last_increment)
}

// ---------------------------------------------------------------------------
// 4. C5 likelihood-ratio scan
// ---------------------------------------------------------------------------

/// Closed-form two-step emission likelihood ratio for the unit-variance
/// Gaussian with state-valued mean:
///
/// `f(ξ_0 | y) f(ξ_1 | y, ξ_0) / (f(ξ_0 | z) f(ξ_1 | z, ξ_0))
///  = exp{z² − y² + (ξ_0 + ξ_1)(y − z)}`
pub fn c5_ratio(xi0: f64, xi1: f64, y: f64, z: f64) -> f64 {
    c5_log_ratio(xi0, xi1, y, z).exp()
}

/// Log of [`c5_ratio`]; exact for arguments where the ratio overflows.
pub fn c5_log_ratio(xi0: f64, xi1: f64, y: f64, z: f64) -> f64 {
    z * z - y * y + (xi0 + xi1) * (y - z)
}

/// Best ratio found inside one bound's box.
#[derive(Debug, Clone)]
pub struct C5Row {
    pub bound: f64,
    pub y: f64,
    pub z: f64,
    pub xi0: f64,
    pub xi1: f64,
    pub ratio: f64,
    pub log_ratio: f64,
    /// Supremum over all boxes scanned so far (they are nested).
    pub running_sup: f64,
}

#[derive(Debug, Clone)]
pub struct C5ScanResult {
    pub rows: Vec<C5Row>,
    pub step: f64,
    /// Largest absolute disagreement between the closed form and the
    /// direct Gaussian density ratio over the scanned grid, on the log
    /// scale.
    pub max_closed_form_gap: f64,
}

impl C5ScanResult {
    pub fn suprema(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.running_sup).collect()
    }

    pub fn strictly_increasing(&self) -> bool {
        self.rows
            .windows(2)
            .all(|p| p[1].running_sup > p[0].running_sup)
    }
}

fn log_normal_unnorm(z: f64) -> f64 {
    -0.5 * z * z
}

/// Maximizes the ratio over `(y, z)` in `[-B, B]²` on a snapped grid for
/// each bound. The grid always contains `0` and `±B` exactly, so for
/// `ξ_0 = ξ_1 = 0` the reported supremum is `exp(B²)` exactly and grows
/// without bound: the divergence that finite scans can exhibit.
pub fn c5_sup_scan(xi0: f64, xi1: f64, bounds: &[f64], step: f64) -> Result<C5ScanResult> {
    if bounds.is_empty() {
        return Err(Error::Config("c5 scan needs at least one bound".into()));
    }
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Config(format!(
            "c5 scan step must be > 0, got {step}"
        )));
    }
    if bounds.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::Config("c5 bounds must be finite and >= 0".into()));
    }
    if bounds.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Config(
            "c5 bounds must be strictly increasing".into(),
        ));
    }

    let mut rows: Vec<C5Row> = Vec::with_capacity(bounds.len());
    let mut running = f64::NEG_INFINITY;
    let mut max_gap = 0.0f64;
    for &b in bounds {
        let half: usize = (b / step).round() as usize;
        let mut axis = Vec::with_capacity(2 * half + 1);
        for k in 0..=half {
            // Snap the end point so ±B sit on the grid exactly.
            let t = if k == half { b } else { k as f64 * step };
            axis.push(-t);
            if t != 0.0 {
                axis.push(t);
            }
        }
        axis.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut best: Option<(f64, f64, f64)> = None; // (log_ratio, y, z)
        for &y in &axis {
            for &z in &axis {
                let lr = c5_log_ratio(xi0, xi1, y, z);
                let direct = log_normal_unnorm(xi0 - y) + log_normal_unnorm(xi1 - y)
                    - log_normal_unnorm(xi0 - z)
                    - log_normal_unnorm(xi1 - z);
                max_gap = max_gap.max((lr - direct).abs());
                let better = match best {
                    None => true,
                    Some((b_lr, _, _)) => lr > b_lr,
                };
                if better {
                    best = Some((lr, y, z));
                }
            }
        }
        let (lr, y, z) = best.expect("axis is nonempty");
        running = running.max(lr.exp());
        rows.push(C5Row {
            bound: b,
            y,
            z,
            xi0,
            xi1,
            ratio: lr.exp(),
            log_ratio: lr,
            running_sup: running,
        });
    }
    Ok(C5ScanResult {
        rows,
        step,
        max_closed_form_gap: max_gap,
    })
}
