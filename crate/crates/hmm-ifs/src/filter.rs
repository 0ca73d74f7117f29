//! Normalized prediction filter with per-step renormalization.
//!
//! One forward-operator application followed by renormalization keeps
//! the filter vector O(1) at every step; the discarded mass `c_t` is
//! accumulated in log space, so `Σ log c_t` is the log-likelihood and no
//! linear-space joint density is ever materialized. The unnormalized
//! mass `∫ M_t dm` — which drifts to zero or infinity on long sequences
//! — is recovered exactly as the prefix sums of the log normalizers.

use crate::error::{Error, Result};
use crate::model::{Model, ObservationSequence};
use crate::operators::{apply_forward_operator, FilterFunction, FilterKind};

/// Prediction filter state after `step + 1` observations: the
/// normalized law of the next hidden state plus the accumulated
/// log-likelihood.
#[derive(Debug, Clone)]
pub struct FilterState {
    /// Normalized filter: `p(X_{n+1} = x | ξ_0, …, ξ_n)`.
    pub filter: FilterFunction,
    /// Accumulated `Σ_{k<=n} log c_k`, the log-likelihood of the prefix.
    pub log_lik: f64,
    /// Log normalizer of the most recent step.
    pub last_log_c: f64,
    /// Index `n` of the last absorbed observation.
    pub step: usize,
}

/// Per-prefix unnormalized mass on the log scale.
#[derive(Debug, Clone)]
pub struct UnnormalizedTrace {
    /// `log ∫ M_k dm = Σ_{j<=k} log c_j` for every prefix `k`.
    pub log_mass: Vec<f64>,
    /// Individual step normalizers `log c_k`.
    pub log_c: Vec<f64>,
}

fn normalize(unnorm: Vec<f64>, model: &Model, step: usize) -> Result<(FilterFunction, f64)> {
    let c = model.grid().integrate(&unnorm);
    if c <= 0.0 || !c.is_finite() {
        return Err(Error::ImpossibleObservation { step });
    }
    let values = unnorm.into_iter().map(|v| v / c).collect();
    Ok((FilterFunction::new(values, FilterKind::Normalized)?, c))
}

/// Absorbs `ξ_0`: one forward-operator application to the stationary
/// law, then renormalization.
pub fn init_filter(model: &Model, xi0: f64) -> Result<FilterState> {
    let pi = FilterFunction::stationary(model);
    let u = apply_forward_operator(&pi, xi0, None, model)?;
    let (filter, c0) = normalize(u.values, model, 0)?;
    Ok(FilterState {
        filter,
        log_lik: c0.ln(),
        last_log_c: c0.ln(),
        step: 0,
    })
}

/// Absorbs one more observation: forward operator on the current
/// filter, renormalize, accumulate `log c`.
pub fn predict_update_step(
    state: &FilterState,
    xi: f64,
    xi_prev: f64,
    model: &Model,
) -> Result<FilterState> {
    let step = state.step + 1;
    let u = apply_forward_operator(&state.filter, xi, Some(xi_prev), model)?;
    let (filter, c) = normalize(u.values, model, step)?;
    Ok(FilterState {
        filter,
        log_lik: state.log_lik + c.ln(),
        last_log_c: c.ln(),
        step,
    })
}

/// Runs the filter over the whole sequence and returns the final state.
pub fn run_filter(model: &Model, obs: &ObservationSequence) -> Result<FilterState> {
    let mut state = init_filter(model, obs.obs[0])?;
    for t in 1..obs.len() {
        state = predict_update_step(&state, obs.obs[t], obs.obs[t - 1], model)?;
    }
    Ok(state)
}

/// Log-likelihood `log p(ξ_0, …, ξ_n)` by stable accumulation.
pub fn loglik(model: &Model, obs: &ObservationSequence) -> Result<f64> {
    Ok(run_filter(model, obs)?.log_lik)
}

/// Per-prefix trace of the unnormalized mass. `log_mass[k]` equals the
/// log joint density of the length-`k+1` prefix by the same
/// accumulation that `loglik` performs.
pub fn unnormalized_filter_trace(
    model: &Model,
    obs: &ObservationSequence,
) -> Result<UnnormalizedTrace> {
    let mut state = init_filter(model, obs.obs[0])?;
    let mut log_c = Vec::with_capacity(obs.len());
    let mut log_mass = Vec::with_capacity(obs.len());
    log_c.push(state.last_log_c);
    log_mass.push(state.log_lik);
    for t in 1..obs.len() {
        state = predict_update_step(&state, obs.obs[t], obs.obs[t - 1], model)?;
        log_c.push(state.last_log_c);
        log_mass.push(state.log_lik);
    }
    Ok(UnnormalizedTrace { log_mass, log_c })
}
