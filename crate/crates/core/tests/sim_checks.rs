//! Engine-level checks: determinism, DGP consistency, the pipeline oracle,
//! aggregation identities, and table rendering.

mod common;

use crcpanel_core::estimator::{estimate_all, Bandwidth, EstimatorConfig};
use crcpanel_core::inference::{
    confidence_intervals, covariance_and_se, influence_contributions, influence_mover,
};
use crcpanel_core::panel::compute_design_artifacts;
use crcpanel_core::sim::rng::{derive_stream, CounterRng};
use crcpanel_core::sim::{
    draw_epsilon, emit_table, generate_noise_free_panel, generate_panel, run_replication,
    run_study, run_study_with_threads, true_parameters, CoordinateSummary, EstimatorSummary,
    LevelCoverage, SimulationConfig, SimulationSummary, TableFormat, TrueParameters,
};

#[test]
fn summaries_are_identical_across_thread_counts() {
    let config = SimulationConfig {
        n: 300,
        reps: 24,
        seed: 77,
        ..Default::default()
    };
    let s1 = run_study_with_threads(&config, 1).unwrap();
    let s4 = run_study_with_threads(&config, 4).unwrap();
    let s_default = run_study(&config).unwrap();
    let j1 = serde_json::to_string(&s1).unwrap();
    let j4 = serde_json::to_string(&s4).unwrap();
    let jd = serde_json::to_string(&s_default).unwrap();
    assert_eq!(j1, j4);
    assert_eq!(j1, jd);
}

#[test]
fn closed_form_beta_identity() {
    // pi0 + (1 - pi0)(2a + 1)/(a + 1) = 1 + (1 - pi0) a/(a + 1).
    for &(pi0, alpha) in &[(0.0f64, 1.0f64), (0.1, 0.5), (0.2, 0.25), (0.05, 2.0)] {
        let lhs = pi0 + (1.0 - pi0) * (2.0 * alpha + 1.0) / (alpha + 1.0);
        let rhs = 1.0 + (1.0 - pi0) * alpha / (alpha + 1.0);
        assert!((lhs - rhs).abs() < 1e-14);
    }
}

#[test]
fn mean_of_a_matches_closed_form_over_many_draws() {
    let config = SimulationConfig {
        pi0: 0.1,
        alpha: 0.5,
        rho: 1.0,
        ..Default::default()
    };
    let n = 1_000_000usize;
    let mut rng = CounterRng::new(derive_stream(123, 9));
    let mut sum = 0.0;
    for _ in 0..n {
        let eps = draw_epsilon(rng.next_unit(), config.pi0, config.alpha);
        let a = config.rho * config.sigma_a * (1.0 + eps) + config.sigma_a * rng.next_gaussian();
        sum += a;
    }
    let mean = sum / n as f64;
    let e_eps = (1.0 - config.pi0) * config.alpha / (config.alpha + 1.0);
    let expected = config.rho * config.sigma_a * (1.0 + e_eps);
    // Var(A) <= sigma_a^2 (1 + rho^2); four standard errors.
    let se = (config.sigma_a * config.sigma_a * (1.0 + config.rho * config.rho) / n as f64)
        .sqrt();
    assert!(
        (mean - expected).abs() < 4.0 * se,
        "mean {mean} vs {expected} (4se = {})",
        4.0 * se
    );
    // And the closed-form beta equals this mean per coordinate.
    let truth = true_parameters(&config);
    assert!((truth.beta[0] - expected).abs() < 1e-12);
}

#[test]
fn replication_record_matches_independent_pipeline() {
    // Reassemble the per-replication pipeline from the module operations and
    // demand an identical record.
    let config = SimulationConfig {
        rho: 0.5,
        alpha: 1.0,
        pi0: 0.0,
        n: 500,
        seed: 31,
        ..Default::default()
    };
    let record = run_replication(&config, 1);
    assert!(!record.failed());

    let dataset = generate_panel(&config, 1).unwrap();
    let est_config = EstimatorConfig {
        poly_order: config.poly_order,
        bandwidth: Bandwidth::PlugIn,
        target_period: 1,
        ci_levels: config.ci_levels.clone(),
    };
    let fit = estimate_all(&dataset, &est_config).unwrap();
    let truth = true_parameters(&config);

    let unified_inf =
        influence_contributions(&dataset, &fit.artifacts, &fit.stacks, &fit.estimates, 1)
            .unwrap();
    let (_c, unified_se) = covariance_and_se(&unified_inf, dataset.n()).unwrap();
    let mover_inf =
        influence_mover(&dataset, &fit.artifacts, &fit.stacks, &fit.estimates, 1).unwrap();
    let (_c2, mover_se) = covariance_and_se(&mover_inf, dataset.n()).unwrap();

    let unified = record.unified.as_ref().unwrap();
    let mover = record.mover.as_ref().unwrap();
    assert_eq!(unified.estimate, fit.estimates.beta_unified);
    assert_eq!(mover.estimate, fit.estimates.beta_mover.clone().unwrap());
    assert_eq!(unified.std_errors, unified_se);
    assert_eq!(mover.std_errors, mover_se);

    for (li, &level) in config.ci_levels.iter().enumerate() {
        let intervals =
            confidence_intervals(&fit.estimates.beta_unified, &unified_se, level).unwrap();
        for k in 0..2 {
            let hit = intervals[k].0 <= truth.beta[k] && truth.beta[k] <= intervals[k].1;
            assert_eq!(unified.ci_hits[li][k], hit);
        }
    }
}

#[test]
fn single_rep_summary_reduces_to_the_record() {
    let config = SimulationConfig {
        n: 250,
        reps: 1,
        seed: 5,
        ..Default::default()
    };
    let record = run_replication(&config, 0);
    let summary = run_study(&config).unwrap();
    assert_eq!(summary.reps_completed, 1);
    assert_eq!(summary.reps_failed, 0);
    let unified_rec = record.unified.unwrap();
    let unified_sum = &summary.estimators[1];
    assert_eq!(unified_sum.estimator, "unified");
    for k in 0..2 {
        let coord = &unified_sum.coordinates[k];
        assert_eq!(coord.mean, unified_rec.estimate[k]);
        assert_eq!(coord.sd, 0.0);
        assert!((coord.rmse - coord.bias.abs()).abs() < 1e-12);
        for (li, cov) in coord.coverage.iter().enumerate() {
            let expected = if unified_rec.ci_hits[li][k] { 1.0 } else { 0.0 };
            assert_eq!(cov.rate, expected);
        }
    }
}

#[test]
fn noise_free_panel_reproduces_exact_recovery() {
    let config = SimulationConfig {
        n: 60,
        pi0: 0.1,
        sigma_u: 0.0,
        seed: 13,
        ..Default::default()
    };
    // b = 0: pure time effects. The full pipeline recovers theta(t=2) =
    // (time_shift, time_shift) exactly and inference degenerates.
    let panel = generate_noise_free_panel(&config, 2, [0.0, 0.0]).unwrap();
    let est_config = EstimatorConfig {
        poly_order: 2,
        bandwidth: Bandwidth::PlugIn,
        target_period: 2,
        ci_levels: vec![0.95],
    };
    let fit = estimate_all(&panel, &est_config).unwrap();
    assert!((fit.estimates.theta_hat[0] - config.time_shift).abs() < 1e-9);
    assert!((fit.estimates.theta_hat[1] - config.time_shift).abs() < 1e-9);
    let inf = influence_contributions(&panel, &fit.artifacts, &fit.stacks, &fit.estimates, 2)
        .unwrap();
    let (_cov, se) = covariance_and_se(&inf, panel.n()).unwrap();
    assert!(se.iter().all(|s| *s < 1e-9));
    let artifacts = compute_design_artifacts(&panel).unwrap();
    assert!(artifacts.iter().any(|a| a.d == 0.0), "hook keeps stayers");

    // b != 0: with the true delta supplied, the unified estimator returns b
    // exactly for any admissible order.
    let b = [0.7, -0.4];
    let panel_b = generate_noise_free_panel(&config, 2, b).unwrap();
    let artifacts_b = compute_design_artifacts(&panel_b).unwrap();
    let d: Vec<f64> = artifacts_b.iter().map(|a| a.d).collect();
    let delta0 = vec![config.time_shift, config.time_shift];
    let stacks = crcpanel_core::estimator::stack_poly(&d, 0.3, 2).unwrap();
    let gamma =
        crcpanel_core::estimator::estimate_gamma(&panel_b, &artifacts_b, &stacks, &delta0)
            .unwrap();
    let beta = crcpanel_core::estimator::estimate_beta_unified(
        &panel_b,
        &artifacts_b,
        &stacks,
        &delta0,
        &gamma,
    );
    assert!((beta[0] - b[0]).abs() < 1e-9);
    assert!((beta[1] - b[1]).abs() < 1e-9);
}

#[test]
fn failed_replications_are_captured_not_fatal() {
    // Tiny n: the plug-in bandwidth or polynomial design will often be
    // degenerate. Whatever happens must be recorded, never panic.
    let config = SimulationConfig {
        n: 4,
        reps: 8,
        seed: 3,
        ..Default::default()
    };
    for i in 0..config.reps as u64 {
        let record = run_replication(&config, i);
        if record.failed() {
            assert!(record.error.is_some());
            assert!(record.unified.is_none());
        }
    }
    match run_study(&config) {
        Ok(summary) => {
            assert_eq!(
                summary.reps_completed + summary.reps_failed,
                config.reps
            );
        }
        Err(crcpanel_core::Error::StudyFailed { reps, .. }) => assert_eq!(reps, config.reps),
        Err(e) => panic!("unexpected error {e}"),
    }
}

fn zero_summary() -> SimulationSummary {
    let config = SimulationConfig::default();
    let coord = |k: usize| CoordinateSummary {
        coordinate: k,
        true_value: 0.0,
        mean: 0.0,
        bias: 0.0,
        sd: 0.0,
        rmse: 0.0,
        coverage: vec![
            LevelCoverage {
                level: 0.90,
                rate: 0.0,
            },
            LevelCoverage {
                level: 0.95,
                rate: 0.0,
            },
        ],
    };
    SimulationSummary {
        config,
        true_parameters: TrueParameters {
            beta: vec![0.0, 0.0],
            delta_t2: vec![0.0, 0.0],
        },
        estimators: vec![
            EstimatorSummary {
                estimator: "mover".into(),
                coordinates: vec![coord(0), coord(1)],
            },
            EstimatorSummary {
                estimator: "unified".into(),
                coordinates: vec![coord(0), coord(1)],
            },
        ],
        reps_completed: 1,
        reps_failed: 0,
    }
}

#[test]
fn zero_summary_renders_all_zero_rows() {
    let text = emit_table(&zero_summary(), TableFormat::Csv);
    let expected = "\
Estimator,Coordinate,True,Mean,Bias,SD,RMSE,90%,95%
mover,0,0.000,0.000,0.000,0.000,0.000,0.000,0.000
mover,1,0.000,0.000,0.000,0.000,0.000,0.000,0.000
unified,0,0.000,0.000,0.000,0.000,0.000,0.000,0.000
unified,1,0.000,0.000,0.000,0.000,0.000,0.000,0.000
";
    assert_eq!(text, expected);
}

#[test]
fn known_summary_renders_golden_text() {
    let mut summary = zero_summary();
    summary.estimators.truncate(1);
    summary.estimators[0].coordinates.truncate(1);
    let coord = &mut summary.estimators[0].coordinates[0];
    coord.true_value = 0.075;
    coord.mean = 0.0764999;
    coord.bias = -0.0000004; // formats as -0.000, normalized to 0.000
    coord.sd = 0.0061;
    coord.rmse = 0.0064999;
    coord.coverage[0].rate = 0.8615;
    coord.coverage[1].rate = 0.9265;
    let text = emit_table(&summary, TableFormat::Csv);
    let expected = "\
Estimator,Coordinate,True,Mean,Bias,SD,RMSE,90%,95%
mover,0,0.075,0.076,0.000,0.006,0.006,0.862,0.926\u{a}";
    assert_eq!(text, expected);
}

#[test]
fn markdown_table_shape() {
    let text = emit_table(&zero_summary(), TableFormat::Markdown);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "| Estimator | Coordinate | True | Mean | Bias | SD | RMSE | 90% | 95% |"
    );
    assert!(lines[1].starts_with("| ---"));
    assert_eq!(lines.len(), 6);
}

#[test]
fn stayer_fraction_converges_to_pi0() {
    let config = SimulationConfig {
        pi0: 0.2,
        n: 100_000,
        seed: 21,
        ..Default::default()
    };
    let panel = generate_panel(&config, 0).unwrap();
    let stayers = panel
        .observations()
        .iter()
        .filter(|o| o.x.get(1, 1) == o.x.get(0, 1))
        .count();
    let frac = stayers as f64 / config.n as f64;
    let sd = (0.2f64 * 0.8 / config.n as f64).sqrt();
    assert!((frac - 0.2).abs() < 3.0 * sd, "{frac}");
}
