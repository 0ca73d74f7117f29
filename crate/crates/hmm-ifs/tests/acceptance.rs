//! Acceptance suite: one test per release gate, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them).
//!
//! The gates pin the library's contract: the forward composition equals
//! the exact path sum, the adjoint composition measurably does not, the
//! unnormalized mass degenerates at the proven rate while the filter
//! stays normalized, the analytic score survives a randomized
//! finite-difference sweep, the two information routes agree, the
//! likelihood-ratio scan grows exactly as the closed form says, a
//! full fit recovers its generating parameters, and the CLI is
//! bitwise deterministic.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use hmm_ifs::{
    adjoint_scalar_chain, build_model, c5_ratio, c5_sup_scan, fd_loglik_gradient, init_filter,
    init_tangent, joint_density_path_sum, joint_density_via_composition, loglik, mle_fit,
    observed_information, predict_update_step, score, simulate, tangent_filter_step,
    unnormalized_filter_trace, FitOptions, InfoMethod, Model, ModelConfig, ModelFamily,
    ObservationSequence,
};

const LN_PEAK: f64 = -0.9189385332046727; // log of the unit Gaussian maximum

struct Criterion {
    name: &'static str,
    started: Instant,
}

impl Criterion {
    fn start(name: &'static str) -> Self {
        Criterion {
            name,
            started: Instant::now(),
        }
    }

    fn pass(self, detail: &str) {
        println!(
            "acceptance {}: PASS ({detail}, {:.2}s)",
            self.name,
            self.started.elapsed().as_secs_f64()
        );
    }

    fn check(&self, ok: bool, detail: &str) {
        if !ok {
            println!("acceptance {}: FAIL ({detail})", self.name);
            panic!("acceptance {} failed: {detail}", self.name);
        }
    }

    fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }
}

fn m2_model() -> Model {
    build_model(&ModelConfig::from_json_str(include_str!("../../../configs/m2.json")).unwrap())
        .unwrap()
}

fn m2_family() -> ModelFamily {
    ModelFamily::from_config(
        &ModelConfig::from_json_str(include_str!("../../../configs/m2_family.json")).unwrap(),
    )
    .unwrap()
}

fn one_state_family() -> ModelFamily {
    ModelFamily::from_config(
        &ModelConfig::from_json_str(include_str!("../../../configs/onestate.json")).unwrap(),
    )
    .unwrap()
}

/// Random small family: grid of 1–4 states, softmax transition with one
/// pinned reference column per row, Gaussian or AR emission.
fn random_family(rng: &mut ChaCha12Rng, with_layout: bool) -> ModelFamily {
    let g: usize = rng.gen_range(1..=4);
    let mut points = Vec::with_capacity(g);
    let mut x = rng.gen_range(-1.5..-0.5);
    for _ in 0..g {
        points.push(x);
        x += rng.gen_range(0.4..1.2);
    }
    let weights: Option<Vec<f64>> = if rng.gen_bool(0.2) {
        Some((0..g).map(|_| rng.gen_range(0.5..1.5)).collect())
    } else {
        None
    };
    let logits: Vec<Vec<f64>> = (0..g)
        .map(|_| {
            (0..g)
                .map(|j| {
                    if j == g - 1 {
                        0.0
                    } else {
                        rng.gen_range(-1.5..1.5)
                    }
                })
                .collect()
        })
        .collect();
    let ar = rng.gen_bool(0.5);
    let emission = if ar {
        serde_json::json!({
            "family": "gaussian_ar",
            "params": {"mu": rng.gen_range(-0.5..0.5), "rho": rng.gen_range(-0.6..0.6)}
        })
    } else {
        serde_json::json!({
            "family": "gaussian_mean",
            "params": {"mu": rng.gen_range(-0.5..0.5)}
        })
    };
    let mut layout: Vec<String> = Vec::new();
    if with_layout {
        for i in 0..g {
            for j in 0..g.saturating_sub(1) {
                layout.push(format!("logit_{i}_{j}"));
            }
        }
        layout.push("mu".to_string());
        if ar {
            layout.push("rho".to_string());
        }
    }
    let config = serde_json::json!({
        "grid": {"points": points, "weights": weights},
        "transition": {"logits": logits},
        "emission": emission,
        "theta": {"layout": layout}
    });
    let config: ModelConfig = ModelConfig::from_json_str(&config.to_string()).unwrap();
    ModelFamily::from_config(&config).unwrap()
}

#[test]
fn criterion_1_composition_identity() {
    let c = Criterion::start("1 composition identity");
    let mut rng = ChaCha12Rng::seed_from_u64(1001);
    let mut max_comp_gap = 0.0f64;
    let mut max_ll_gap = 0.0f64;
    for trial in 0..200 {
        let family = random_family(&mut rng, false);
        let model = family.build().unwrap();
        let n = rng.gen_range(0..=8);
        let seq = simulate(&model, n, 5000 + trial).unwrap();
        let brute = joint_density_path_sum(&model, &seq).unwrap();
        let comp = joint_density_via_composition(&model, &seq).unwrap();
        let ll = loglik(&model, &seq).unwrap();
        let comp_gap = (comp - brute).abs() / brute;
        let ll_gap = (ll.exp() - brute).abs() / brute;
        c.check(
            comp_gap <= 1e-10,
            &format!("trial {trial}: composition gap {comp_gap:.3e}"),
        );
        c.check(
            ll_gap <= 1e-9,
            &format!("trial {trial}: filter gap {ll_gap:.3e}"),
        );
        max_comp_gap = max_comp_gap.max(comp_gap);
        max_ll_gap = max_ll_gap.max(ll_gap);
    }
    c.check(c.elapsed() < 10.0, "runtime exceeded 10 s");
    c.pass(&format!(
        "200 trials, max composition gap {max_comp_gap:.2e}, max filter gap {max_ll_gap:.2e}"
    ));
}

#[test]
fn criterion_2_adjoint_composition_refuted() {
    let c = Criterion::start("2 adjoint-composition refutation");
    let model = m2_model();
    let seq = ObservationSequence::from_obs(vec![0.0, 0.0]).unwrap();
    let adjoint = adjoint_scalar_chain(&model, &seq).unwrap();
    let truth = joint_density_path_sum(&model, &seq).unwrap();
    c.check(
        (adjoint - 0.113194).abs() <= 1e-6,
        &format!("adjoint scalar {adjoint} not near 0.113194"),
    );
    c.check(
        (truth - 0.111814).abs() <= 1e-6,
        &format!("true density {truth} not near 0.111814"),
    );
    let gap = (adjoint - truth).abs() / truth;
    c.check(gap >= 1e-3, &format!("relative gap {gap:.3e} below 1e-3"));

    // Agreement regime: symmetric doubly stochastic kernel.
    let sym = build_model(
        &ModelConfig::from_json_str(
            r#"{
                "grid": {"points": [0.0, 1.0]},
                "transition": {"matrix": [[0.8, 0.2], [0.2, 0.8]]},
                "emission": {"family": "gaussian_mean", "params": {"mu": 0.0}}
            }"#,
        )
        .unwrap(),
    )
    .unwrap();
    for obs in [vec![0.0, 0.0], vec![0.5, -0.3, 1.4]] {
        let seq = ObservationSequence::from_obs(obs).unwrap();
        let a = adjoint_scalar_chain(&sym, &seq).unwrap();
        let b = joint_density_path_sum(&sym, &seq).unwrap();
        let sym_gap = (a - b).abs() / b;
        c.check(sym_gap <= 1e-12, &format!("symmetric gap {sym_gap:.3e}"));
    }
    c.check(c.elapsed() < 1.0, "runtime exceeded 1 s");
    c.pass(&format!("asymmetric gap {gap:.3e}, symmetric gap <= 1e-12"));
}

#[test]
fn criterion_3_degeneracy() {
    let c = Criterion::start("3 unnormalized-mass degeneracy");
    let model = m2_model();
    let seq = simulate(&model, 200, 7).unwrap();

    // Filter normalization at every step, alongside the mass trace.
    let mut state = init_filter(&model, seq.obs[0]).unwrap();
    for t in 1..seq.len() {
        state = predict_update_step(&state, seq.obs[t], seq.obs[t - 1], &model).unwrap();
        let mass = model.grid().integrate(&state.filter.values);
        c.check(
            (mass - 1.0).abs() <= 1e-12,
            &format!("filter mass {mass} at step {t}"),
        );
    }

    let trace = unnormalized_filter_trace(&model, &seq).unwrap();
    let final_mass = *trace.log_mass.last().unwrap();
    c.check(
        final_mass < -180.0,
        &format!("log mass after 201 steps is {final_mass}, expected < -180"),
    );
    let xs: Vec<f64> = (0..trace.log_mass.len()).map(|k| k as f64).collect();
    let slope = {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = trace.log_mass.iter().sum::<f64>() / n;
        let sxy: f64 = xs
            .iter()
            .zip(&trace.log_mass)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    };
    c.check(
        slope <= LN_PEAK,
        &format!("drift slope {slope} above the bound {LN_PEAK}"),
    );
    c.check(c.elapsed() < 1.0, "runtime exceeded 1 s");
    c.pass(&format!("final log mass {final_mass:.1}, slope {slope:.4}"));
}

#[test]
fn criterion_4_score_sweep() {
    let c = Criterion::start("4 score correctness");
    let mut rng = ChaCha12Rng::seed_from_u64(4001);
    let mut max_residual = 0.0f64;
    let mut max_row_sum = 0.0f64;
    for trial in 0..50 {
        let family = random_family(&mut rng, true);
        let model = family.build().unwrap();
        let n = rng.gen_range(1..=20);
        let seq = simulate(&model, n, 9000 + trial).unwrap();
        let theta = family.theta0();
        let analytic = score(&family, &seq, &theta).unwrap();
        let fd = fd_loglik_gradient(&family, &seq, &theta).unwrap();
        for k in 0..theta.len() {
            let r = (analytic[k] - fd[k]).abs();
            max_residual = max_residual.max(r);
            c.check(
                r <= 1e-5,
                &format!("trial {trial} component {k}: |score - fd| = {r:.3e}"),
            );
        }
        // Tangent rows integrate to zero after every step.
        let mut t = init_tangent(&model, seq.obs[0]).unwrap();
        for j in 1..seq.len() {
            t = tangent_filter_step(&t, seq.obs[j], seq.obs[j - 1], &model).unwrap();
            for row in &t.dfilter {
                let mass = model.grid().integrate(row).abs();
                max_row_sum = max_row_sum.max(mass);
                c.check(
                    mass <= 1e-10,
                    &format!("trial {trial} step {j}: tangent row mass {mass:.3e}"),
                );
            }
        }
    }
    c.check(c.elapsed() < 30.0, "runtime exceeded 30 s");
    c.pass(&format!(
        "50 trials, max |score - fd| {max_residual:.2e}, max tangent row mass {max_row_sum:.2e}"
    ));
}

#[test]
fn criterion_5_observed_information() {
    let c = Criterion::start("5 observed information");
    let family = m2_family();
    let model = family.build().unwrap();
    let seq = simulate(&model, 49, 7).unwrap();
    assert_eq!(seq.len(), 50);
    let theta = family.theta0();
    let a = observed_information(&family, &seq, &theta, InfoMethod::AnalyticFd).unwrap();
    let b = observed_information(&family, &seq, &theta, InfoMethod::FullFd).unwrap();
    let mut max_gap = 0.0f64;
    for i in 0..theta.len() {
        for j in 0..theta.len() {
            let gap = (a.entry(i, j) - b.entry(i, j)).abs();
            max_gap = max_gap.max(gap);
            c.check(
                gap <= 1e-4,
                &format!("information entry ({i},{j}) differs by {gap:.3e}"),
            );
        }
    }

    let one = one_state_family();
    let one_model = one.build().unwrap();
    let one_seq = simulate(&one_model, 49, 11).unwrap();
    let n = one_seq.len() as f64;
    let theta1 = one.theta0();
    let ia = observed_information(&one, &one_seq, &theta1, InfoMethod::AnalyticFd).unwrap();
    let ib = observed_information(&one, &one_seq, &theta1, InfoMethod::FullFd).unwrap();
    c.check(
        (ia.entry(0, 0) - n).abs() <= 1e-8,
        &format!(
            "analytic-fd one-state information {} != {n}",
            ia.entry(0, 0)
        ),
    );
    c.check(
        (ib.entry(0, 0) - n).abs() <= 1e-8,
        &format!("full-fd one-state information {} != {n}", ib.entry(0, 0)),
    );
    c.pass(&format!(
        "routes agree to {max_gap:.2e}; one-state information = sequence length"
    ));
}

#[test]
fn criterion_6_c5_counterexample() {
    let c = Criterion::start("6 likelihood-ratio divergence");
    let scan = c5_sup_scan(0.0, 0.0, &[1.0, 2.0, 3.0, 4.0], 0.1).unwrap();
    let sup = scan.suprema();
    let expect = [
        (1.0f64).exp(),
        (4.0f64).exp(),
        (9.0f64).exp(),
        (16.0f64).exp(),
    ];
    for (k, (got, want)) in sup.iter().zip(&expect).enumerate() {
        c.check(
            got == want,
            &format!("supremum at bound {}: {got} != {want}", k + 1),
        );
    }
    c.check(
        scan.strictly_increasing(),
        "suprema not strictly increasing",
    );

    // Closed form versus direct Gaussian density ratio.
    let mut rng = ChaCha12Rng::seed_from_u64(6001);
    let pdf = |z: f64| (-0.5 * z * z).exp() * 0.3989422804014327;
    let mut max_rel = 0.0f64;
    for _ in 0..1000 {
        let (xi0, xi1) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let (y, z) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let closed = c5_ratio(xi0, xi1, y, z);
        let direct = pdf(xi0 - y) * pdf(xi1 - y) / (pdf(xi0 - z) * pdf(xi1 - z));
        let rel = (closed - direct).abs() / direct;
        max_rel = max_rel.max(rel);
        c.check(rel <= 1e-12, &format!("closed-form gap {rel:.3e}"));
    }
    c.pass(&format!(
        "suprema exactly exp(B^2) for B in 1..4; closed-form gap {max_rel:.2e}"
    ));
}

#[test]
fn criterion_7_mle_recovery() {
    let c = Criterion::start("7 MLE recovery");
    let family = m2_family();
    let theta_star = family.theta0();
    let model = family.build().unwrap();
    let seq = simulate(&model, 2000, 7).unwrap();
    let theta0 = theta_star
        .with_values(theta_star.values().iter().map(|v| v + 0.3).collect())
        .unwrap();
    let fit = mle_fit(&family, &seq, &theta0, &FitOptions::default()).unwrap();
    c.check(fit.converged, "fit did not converge");
    let score_sup = fit.trace.last().unwrap().score_sup;
    c.check(
        score_sup <= 1e-6,
        &format!("sup score at optimum {score_sup:.3e}"),
    );
    let info = fit.info.as_ref().expect("information available");
    let min_eig = info.min_eigenvalue();
    c.check(
        min_eig > 0.0,
        &format!("information not positive definite (min eig {min_eig:.3e})"),
    );
    let se = fit.std_errors.as_ref().expect("standard errors available");
    for (k, se_k) in se.iter().enumerate() {
        let err = (fit.theta_hat.values()[k] - theta_star.values()[k]).abs();
        c.check(
            err <= 3.0 * se_k,
            &format!(
                "component {k} ({}) off by {err:.4}, 3 sigma = {:.4}",
                theta_star.names()[k],
                3.0 * se_k
            ),
        );
    }
    c.check(c.elapsed() < 60.0, "runtime exceeded 60 s");
    c.pass(&format!(
        "converged in {} iterations, all components within 3 standard errors",
        fit.iterations
    ));
}

#[test]
fn criterion_8_cli_determinism() {
    let c = Criterion::start("8 CLI determinism");
    let bin = env!("CARGO_BIN_EXE_hmm-ifs");
    let root = tempfile::tempdir().unwrap();
    let dir = root.path();

    let m2 = dir.join("m2.json");
    let m2f = dir.join("m2_family.json");
    let one = dir.join("onestate.json");
    std::fs::write(&m2, include_str!("../../../configs/m2.json")).unwrap();
    std::fs::write(&m2f, include_str!("../../../configs/m2_family.json")).unwrap();
    std::fs::write(&one, include_str!("../../../configs/onestate.json")).unwrap();
    let obs = dir.join("obs.csv");

    // Simulate once to produce the shared observation file.
    let status = std::process::Command::new(bin)
        .args(["simulate", "--model"])
        .arg(&m2f)
        .args(["--n", "300", "--seed", "7", "--out"])
        .arg(dir.join("simdata"))
        .status()
        .unwrap();
    assert!(status.success());
    std::fs::copy(dir.join("simdata/observations.csv"), &obs).unwrap();

    let m2s = m2.to_str().unwrap();
    let m2fs = m2f.to_str().unwrap();
    let obss = obs.to_str().unwrap();
    let runs: Vec<(&str, Vec<String>)> = vec![
        (
            "simulate",
            vec![
                "simulate".into(),
                "--model".into(),
                m2fs.into(),
                "--n".into(),
                "60".into(),
                "--seed".into(),
                "3".into(),
            ],
        ),
        (
            "loglik",
            vec![
                "loglik".into(),
                "--model".into(),
                m2s.into(),
                "--obs".into(),
                obss.into(),
            ],
        ),
        (
            "score",
            vec![
                "score".into(),
                "--model".into(),
                m2fs.into(),
                "--obs".into(),
                obss.into(),
                "--fd-check".into(),
            ],
        ),
        (
            "fit",
            vec![
                "fit".into(),
                "--model".into(),
                m2fs.into(),
                "--obs".into(),
                obss.into(),
            ],
        ),
        (
            "profile",
            vec![
                "profile".into(),
                "--model".into(),
                m2fs.into(),
                "--obs".into(),
                obss.into(),
                "--component".into(),
                "mu".into(),
                "--grid".into(),
                "-1:1:21".into(),
            ],
        ),
        (
            "check-operators",
            vec![
                "check-operators".into(),
                "--model".into(),
                m2s.into(),
                "--obs".into(),
                obss.into(),
            ],
        ),
        (
            "check-degeneracy",
            vec![
                "check-degeneracy".into(),
                "--model".into(),
                m2s.into(),
                "--n".into(),
                "200".into(),
                "--seed".into(),
                "7".into(),
            ],
        ),
        (
            "check-score-system",
            vec![
                "check-score-system".into(),
                "--model".into(),
                m2fs.into(),
                "--obs".into(),
                obss.into(),
            ],
        ),
        (
            "check-c5",
            vec![
                "check-c5".into(),
                "--bounds".into(),
                "1,2,3,4".into(),
                "--step".into(),
                "0.1".into(),
            ],
        ),
    ];

    for (name, args) in &runs {
        let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
        for rerun in 0..2 {
            let out_dir = dir.join(format!("{name}-{rerun}"));
            let status = std::process::Command::new(bin)
                .args(args)
                .arg("--out")
                .arg(&out_dir)
                .status()
                .unwrap();
            c.check(
                status.success(),
                &format!("{name} run {rerun} exited with {status}"),
            );
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out_dir)
                .unwrap()
                .map(|e| e.unwrap())
                .filter(|e| e.file_name() != "manifest.json")
                .map(|e| {
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        std::fs::read(e.path()).unwrap(),
                    )
                })
                .collect();
            files.sort();
            c.check(
                !files.is_empty(),
                &format!("{name} produced no output files"),
            );
            // The manifest must exist exactly once.
            c.check(
                out_dir.join("manifest.json").exists(),
                &format!("{name} wrote no manifest"),
            );
            outputs.push(files);
        }
        c.check(
            outputs[0] == outputs[1],
            &format!("{name} reruns differ bitwise"),
        );
    }
    c.pass("all 9 subcommands rerun bitwise-identically");
}
