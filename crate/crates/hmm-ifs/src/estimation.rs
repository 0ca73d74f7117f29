//! Maximum-likelihood driver: quasi-Newton ascent of the log-likelihood
//! using the analytic score, with observed information and asymptotic
//! standard errors evaluated once at the optimum.
//!
//! The loop is BFGS on the negative log-likelihood with a backtracking
//! line search under the usual sufficient-increase condition. Parameter
//! points where the likelihood is undefined (an observation of zero
//! density, or a kernel that loses irreducibility) evaluate to −∞ and
//! the line search backtracks past them, so the optimizer stays total
//! on the unconstrained parameter space.

use crate::derivatives::{observed_information, run_tangent, InfoMethod, InformationMatrix};
use crate::error::{Error, Result};
use crate::family::{ModelFamily, ParamVector};
use crate::model::ObservationSequence;

/// Optimizer settings.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Stop when the sup norm of the score falls at or below this.
    pub tol: f64,
    /// Iteration cap.
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-6,
            max_iters: 500,
        }
    }
}

/// One accepted optimizer iterate.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub log_lik: f64,
    pub score_sup: f64,
}

/// Result of a fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: ParamVector,
    pub log_lik_hat: f64,
    /// Observed information at the optimum (analytic-fd route), when it
    /// could be evaluated.
    pub info: Option<InformationMatrix>,
    /// sqrt of the diagonal of the inverse information; present only
    /// when the information is positive definite.
    pub std_errors: Option<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

/// Log-likelihood and score at θ; `None` when the point is infeasible
/// (zero-density observation or a degenerate kernel), which the line
/// search treats as −∞.
fn evaluate(
    family: &ModelFamily,
    obs: &ObservationSequence,
    theta: &ParamVector,
) -> Result<Option<(f64, Vec<f64>)>> {
    let model = match family.build_at(theta) {
        Ok(m) => m,
        Err(Error::ReducibleChain(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    match run_tangent(&model, obs) {
        Ok(t) => {
            if t.base.log_lik.is_finite() {
                Ok(Some((t.base.log_lik, t.dlog_lik)))
            } else {
                Ok(None)
            }
        }
        Err(Error::ImpossibleObservation { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Maximizes the log-likelihood over the family's free parameters.
pub fn mle_fit(
    family: &ModelFamily,
    obs: &ObservationSequence,
    theta0: &ParamVector,
    options: &FitOptions,
) -> Result<FitResult> {
    let d = theta0.len();
    if d == 0 {
        return Err(Error::Config(
            "cannot fit a family with no free parameters".into(),
        ));
    }
    let (mut ll, mut grad) = evaluate(family, obs, theta0)?
        .ok_or_else(|| Error::Optimization("objective is not finite at theta0".into()))?;
    let mut theta = theta0.values().to_vec();

    // Inverse Hessian approximation of the *negative* log-likelihood.
    let mut h_inv = identity(d);
    let mut first_update = true;
    let mut trace = vec![TraceRow {
        iteration: 0,
        theta: theta.clone(),
        log_lik: ll,
        score_sup: sup_norm(&grad),
    }];
    let mut converged = sup_norm(&grad) <= options.tol;
    let mut iterations = 0;
    let mut did_reset = false;

    while !converged && iterations < options.max_iters {
        // Descent direction for -loglik: d = H_inv * grad (ascent for loglik).
        let mut dir = matvec(&h_inv, &grad, d);
        let mut slope: f64 = dot(&grad, &dir);
        if slope <= 0.0 || !slope.is_finite() {
            // Not an ascent direction; fall back to steepest ascent.
            h_inv = identity(d);
            first_update = true;
            dir = grad.clone();
            slope = dot(&grad, &dir);
            if slope <= 0.0 {
                break;
            }
        }

        // Backtracking line search. Far from the optimum the usual
        // sufficient-increase condition applies; once the predicted
        // gain sinks below the rounding noise of the log-likelihood the
        // objective cannot discriminate steps any more, so a step is
        // accepted if it does not lose likelihood and shrinks the score.
        const C1: f64 = 1e-4;
        const SCORE_DROP: f64 = 0.9;
        let noise = 16.0 * f64::EPSILON * (1.0 + ll.abs());
        let g_sup = sup_norm(&grad);
        let mut alpha = 1.0f64;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, s)| t + alpha * s).collect();
            if cand == theta {
                // Step underflowed: no representable progress left.
                break;
            }
            let cand_theta = theta0.with_values(cand.clone())?;
            if let Some((ll_new, grad_new)) = evaluate(family, obs, &cand_theta)? {
                let predicted = C1 * alpha * slope;
                if predicted > noise {
                    if ll_new >= ll + predicted {
                        accepted = Some((cand, ll_new, grad_new));
                        break;
                    }
                } else if ll_new >= ll - noise && sup_norm(&grad_new) <= SCORE_DROP * g_sup {
                    // The objective is constant to rounding here; the
                    // score contraction is what terminates the loop.
                    accepted = Some((cand, ll_new, grad_new));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((theta_new, ll_new, grad_new)) = accepted else {
            if !did_reset {
                // One fresh start from steepest ascent before giving up.
                h_inv = identity(d);
                first_update = true;
                did_reset = true;
                continue;
            }
            break;
        };

        // BFGS update on the negative objective: s = step, y = g_old - g_new
        // (gradients of -loglik are -grad).
        let s: Vec<f64> = theta_new.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad.iter().zip(&grad_new).map(|(g0, g1)| g0 - g1).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) {
            if first_update {
                // Scale the seed matrix to the local curvature before
                // the first update.
                let gamma = sy / dot(&y, &y);
                if gamma.is_finite() && gamma > 0.0 {
                    h_inv = identity(d);
                    for v in h_inv.iter_mut() {
                        *v *= gamma;
                    }
                }
                first_update = false;
            }
            bfgs_update(&mut h_inv, &s, &y, sy, d);
        }

        theta = theta_new;
        ll = ll_new;
        grad = grad_new;
        iterations += 1;
        trace.push(TraceRow {
            iteration: iterations,
            theta: theta.clone(),
            log_lik: ll,
            score_sup: sup_norm(&grad),
        });
        converged = sup_norm(&grad) <= options.tol;
    }

    let theta_hat = theta0.with_values(theta)?;
    let info = observed_information(family, obs, &theta_hat, InfoMethod::AnalyticFd).ok();
    let positive_definite = info.as_ref().is_some_and(|m| m.is_positive_definite());
    let std_errors = if positive_definite {
        info.as_ref().and_then(|m| m.std_errors().ok())
    } else {
        None
    };
    // A converged fit means first-order optimality plus a positive
    // definite information matrix.
    let converged = converged && positive_definite && std_errors.is_some();
    Ok(FitResult {
        theta_hat,
        log_lik_hat: ll,
        info,
        std_errors,
        converged,
        iterations,
        trace,
    })
}

/// Log-likelihood along one named component, the others held at
/// `theta_rest`. Infeasible points are recorded as −∞.
pub fn profile_loglik(
    family: &ModelFamily,
    obs: &ObservationSequence,
    component: &str,
    grid: &[f64],
    theta_rest: &ParamVector,
) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(Error::Config("profile grid must be nonempty".into()));
    }
    let idx = family
        .layout()
        .index_of(component)
        .ok_or_else(|| Error::Config(format!("unknown parameter `{component}`")))?;
    let mut out = Vec::with_capacity(grid.len());
    for &v in grid {
        if !v.is_finite() {
            return Err(Error::Config("profile grid values must be finite".into()));
        }
        let mut values = theta_rest.values().to_vec();
        values[idx] = v;
        let theta = theta_rest.with_values(values)?;
        let ll = match family.build_at(&theta) {
            Ok(model) => match crate::filter::loglik(&model, obs) {
                Ok(l) => l,
                Err(Error::ImpossibleObservation { .. }) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            },
            Err(Error::ReducibleChain(_)) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        out.push((v, ll));
    }
    Ok(out)
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

fn matvec(m: &[f64], v: &[f64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// H <- (I - s y^T / sy) H (I - y s^T / sy) + s s^T / sy
fn bfgs_update(h: &mut Vec<f64>, s: &[f64], y: &[f64], sy: f64, d: usize) {
    let rho = 1.0 / sy;
    let hy = matvec(h, y, d);
    let yhy = dot(y, &hy);
    let mut new = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            new[i * d + j] = h[i * d + j] - rho * (s[i] * hy[j] + hy[i] * s[j])
                + rho * rho * yhy * s[i] * s[j]
                + rho * s[i] * s[j];
        }
    }
    *h = new;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::tests::{one_state_family, two_state_reference_family};
    use crate::family::{ModelConfig, ModelFamily, ParamVector};
    use crate::model::{simulate, ObservationSequence};

    #[test]
    fn fit_started_at_the_exact_optimum_stops_immediately() {
        // For the one-state Gaussian the MLE is the sample mean, so a
        // fit started there converges without moving.
        let family = one_state_family();
        let model = family.build().unwrap();
        let seq = simulate(&model, 50, 3).unwrap();
        let mean = seq.obs.iter().sum::<f64>() / seq.len() as f64;
        let theta_star = family.theta0().with_values(vec![mean]).unwrap();
        let fit = mle_fit(&family, &seq, &theta_star, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations <= 2);
        assert!((fit.theta_hat.values()[0] - mean).abs() < 1e-5);
    }

    #[test]
    fn fit_recovers_one_state_mean_from_a_cold_start() {
        let family = one_state_family();
        let model = family.build().unwrap();
        let seq = simulate(&model, 200, 17).unwrap();
        let mean = seq.obs.iter().sum::<f64>() / seq.len() as f64;
        let theta0 = family.theta0().with_values(vec![3.0]).unwrap();
        let fit = mle_fit(&family, &seq, &theta0, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.theta_hat.values()[0] - mean).abs() < 1e-6);
        // information = number of observations for the unit Gaussian
        let info = fit.info.as_ref().unwrap();
        assert!((info.entry(0, 0) - seq.len() as f64).abs() < 1e-6);
        let se = fit.std_errors.as_ref().unwrap();
        assert!((se[0] - (seq.len() as f64).sqrt().recip()).abs() < 1e-8);
    }

    #[test]
    fn fit_trace_log_likelihood_is_monotone() {
        let family = two_state_reference_family();
        let model = family.build().unwrap();
        let seq = simulate(&model, 300, 11).unwrap();
        let theta0 = family.theta0().with_values(vec![0.3, -0.8, 0.25]).unwrap();
        let fit = mle_fit(&family, &seq, &theta0, &FitOptions::default()).unwrap();
        assert!(
            fit.converged,
            "fit did not converge: {} iterations",
            fit.iterations
        );
        for pair in fit.trace.windows(2) {
            // Non-decreasing up to the rounding noise of the objective,
            // which is where the final polish steps live.
            let noise = 16.0 * f64::EPSILON * (1.0 + pair[0].log_lik.abs());
            assert!(
                pair[1].log_lik >= pair[0].log_lik - noise,
                "log-likelihood decreased from {} to {}",
                pair[0].log_lik,
                pair[1].log_lik
            );
        }
        let score_sup = fit.trace.last().unwrap().score_sup;
        assert!(score_sup <= 1e-6);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let family = one_state_family();
        let model = family.build().unwrap();
        let seq = simulate(&model, 10, 1).unwrap();
        let theta0 = family.theta0().with_values(vec![f64::NAN]);
        assert!(theta0.is_err(), "ParamVector rejects non-finite entries");
        let _ = (family, seq);
    }

    #[test]
    fn fitting_is_invariant_to_component_reordering() {
        let base = r#"{
            "grid": {"points": [0.0, 1.0]},
            "transition": {"matrix": [[0.7, 0.3], [0.4, 0.6]]},
            "emission": {"family": "gaussian_ar", "params": {"mu": 0.0, "rho": 0.3}},
            "theta": {"layout": [LAYOUT]}
        }"#;
        let fam_a = ModelFamily::from_config(
            &ModelConfig::from_json_str(&base.replace("LAYOUT", "\"mu\", \"rho\"")).unwrap(),
        )
        .unwrap();
        let fam_b = ModelFamily::from_config(
            &ModelConfig::from_json_str(&base.replace("LAYOUT", "\"rho\", \"mu\"")).unwrap(),
        )
        .unwrap();
        let seq = simulate(&fam_a.build().unwrap(), 150, 29).unwrap();
        let t_a = ParamVector::new(vec!["mu".into(), "rho".into()], vec![0.2, 0.1]).unwrap();
        let t_b = ParamVector::new(vec!["rho".into(), "mu".into()], vec![0.1, 0.2]).unwrap();
        let fit_a = mle_fit(&fam_a, &seq, &t_a, &FitOptions::default()).unwrap();
        let fit_b = mle_fit(&fam_b, &seq, &t_b, &FitOptions::default()).unwrap();
        assert!(fit_a.converged && fit_b.converged);
        assert!((fit_a.log_lik_hat - fit_b.log_lik_hat).abs() < 1e-8);
        let mu_a = fit_a.theta_hat.values()[0];
        let mu_b = fit_b.theta_hat.values()[1];
        let rho_a = fit_a.theta_hat.values()[1];
        let rho_b = fit_b.theta_hat.values()[0];
        assert!((mu_a - mu_b).abs() < 1e-7);
        assert!((rho_a - rho_b).abs() < 1e-7);
    }

    #[test]
    fn profile_peaks_at_the_sample_mean() {
        let family = one_state_family();
        let model = family.build().unwrap();
        let seq = simulate(&model, 100, 5).unwrap();
        let mean = seq.obs.iter().sum::<f64>() / seq.len() as f64;
        let grid: Vec<f64> = (-10..=10).map(|k| mean + 0.1 * k as f64).collect();
        let rows = profile_loglik(&family, &seq, "mu", &grid, &family.theta0()).unwrap();
        let best = rows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
            .unwrap()
            .0;
        assert_eq!(
            best, 10,
            "maximum should sit at the grid point nearest the mean"
        );
    }

    #[test]
    fn profile_is_unimodal_on_the_reference_run() {
        let family = two_state_reference_family();
        let model = family.build().unwrap();
        let seq = simulate(&model, 200, 7).unwrap();
        let grid: Vec<f64> = (0..21).map(|k| -1.0 + 0.1 * k as f64).collect();
        let rows = profile_loglik(&family, &seq, "mu", &grid, &family.theta0()).unwrap();
        let lls: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let peak = lls
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(lls[..=peak].windows(2).all(|w| w[1] > w[0]));
        assert!(lls[peak..].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn profile_rejects_empty_grid() {
        let family = one_state_family();
        let model = family.build().unwrap();
        let seq = simulate(&model, 10, 1).unwrap();
        assert!(profile_loglik(&family, &seq, "mu", &[], &family.theta0()).is_err());
    }

    #[test]
    fn profile_records_impossible_points_as_neg_infinity() {
        let config = ModelConfig::from_json_str(
            r#"{
                "grid": {"points": [0.0, 1.0]},
                "transition": {"logits": [[0.85, 0.0], [-0.40, 0.0]]},
                "emission": {"family": "gaussian_mean", "params": {"mu": 0.0}},
                "theta": {"layout": ["mu"]}
            }"#,
        )
        .unwrap();
        let family = ModelFamily::from_config(&config).unwrap();
        let seq = ObservationSequence::from_obs(vec![0.0, 0.5]).unwrap();
        // mu = 1e5 pushes both emission means so far away that the
        // density underflows to zero.
        let rows = profile_loglik(&family, &seq, "mu", &[0.0, 1e5], &family.theta0()).unwrap();
        assert!(rows[0].1.is_finite());
        assert_eq!(rows[1].1, f64::NEG_INFINITY);
    }
}
