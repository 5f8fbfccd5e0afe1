//! Monte Carlo engine for the two-period random coefficient design.
//!
//! The data generating process draws, per unit,
//!
//! ```text
//! eps  ~  inverse CDF of P(eps <= t) = pi0 + (1 - pi0) t^alpha on [0, 1]
//! lam  ~  Rademacher
//! X1   ~  N(0, 1),     X2 = X1 + lam * eps
//! A | eps ~ N(rho sigma_a (1 + eps), sigma_a^2)
//! U_11, U_12, U_21, U_22 ~ N(0, sigma_u^2)   (one draw per unit)
//! Y_t  =  X_t' b_t,    X_t = (1, X_t)',
//! b_t  =  (A + U_11 + U_21 + s 1{t=2},  A + U_12 + U_22 + s 1{t=2})'
//! ```
//!
//! so the within-variation scalar is `D = X2 - X1 = lam * eps`, with an atom
//! of stayers of mass `pi0` and slow-mover concentration controlled by
//! `alpha`. The idiosyncratic components are drawn once per unit and shared
//! by both periods (they have identical conditional distributions across
//! periods, which is all the model requires); redrawing them per period
//! would blow up the `D^{-1}`-amplified noise by an order of magnitude and
//! does not reproduce the design's documented sampling behavior. The implied
//! population effects are closed-form:
//!
//! ```text
//! beta  = (pi0 + (1 - pi0)(2 alpha + 1)/(alpha + 1)) rho sigma_a (1, 1)'
//! delta(t=2) = (s, s)'
//! ```
//!
//! Each replication runs the full pipeline — plug-in bandwidth, estimation,
//! influence-function standard errors, normal confidence intervals — for both
//! the trimmed-mean and the unified estimator, and the study aggregates mean,
//! bias, SD, RMSE, and coverage per coordinate. Aggregation uses population
//! formulas (divide by the replication count) so `rmse^2 = bias^2 + sd^2`
//! holds exactly. Replications fan out across threads but are reduced in
//! index order, so summaries are byte-identical for any thread count.

pub mod rng;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate_all, Bandwidth, EstimatorConfig, GroupCounts};
use crate::inference::{
    confidence_intervals, covariance_and_se, influence_contributions, influence_mover,
};
use crate::matrix::Mat;
use crate::panel::{PanelDataset, PanelObservation};
use rng::{derive_stream, CounterRng};

/// Parameters of one simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Endogeneity strength.
    pub rho: f64,
    /// Stayer mass `P(D = 0)`.
    pub pi0: f64,
    /// Concentration of slow movers near zero (smaller = more).
    pub alpha: f64,
    pub sigma_a: f64,
    pub sigma_u: f64,
    /// Additive shift in both coefficients at `t = 2`.
    pub time_shift: f64,
    /// Cross-section size per replication.
    pub n: usize,
    /// Local polynomial order `L`.
    pub poly_order: usize,
    pub reps: usize,
    pub seed: u64,
    pub ci_levels: Vec<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            rho: 0.5,
            pi0: 0.0,
            alpha: 1.0,
            sigma_a: 0.1,
            sigma_u: 0.1,
            time_shift: 0.5,
            n: 1000,
            poly_order: 2,
            reps: 500,
            seed: 1,
            ci_levels: vec![0.90, 0.95],
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pi0 >= 0.0 && self.pi0 < 1.0) {
            return Err(Error::Validation(format!(
                "pi0 must lie in [0, 1), got {}",
                self.pi0
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Validation(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.sigma_a > 0.0) {
            return Err(Error::Validation(format!(
                "sigma_a must be positive, got {}",
                self.sigma_a
            )));
        }
        if !(self.sigma_u >= 0.0) {
            return Err(Error::Validation(format!(
                "sigma_u must be non-negative, got {}",
                self.sigma_u
            )));
        }
        if self.n < 4 {
            return Err(Error::Validation(format!(
                "n must be at least 4 for the plug-in bandwidth, got {}",
                self.n
            )));
        }
        if self.poly_order < 1 {
            return Err(Error::Validation("poly_order must be at least 1".into()));
        }
        if self.reps < 1 {
            return Err(Error::Validation("reps must be at least 1".into()));
        }
        for v in [self.rho, self.time_shift] {
            if !v.is_finite() {
                return Err(Error::Validation("non-finite config value".into()));
            }
        }
        for &level in &self.ci_levels {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::Validation(format!(
                    "confidence level must lie in (0, 1), got {level}"
                )));
            }
        }
        if self.ci_levels.is_empty() {
            return Err(Error::Validation(
                "at least one confidence level is required".into(),
            ));
        }
        Ok(())
    }
}

/// Closed-form population parameters implied by a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameters {
    /// `beta` (both coordinates equal by symmetry of the design).
    pub beta: Vec<f64>,
    /// Time effect at `t = 2`.
    pub delta_t2: Vec<f64>,
}

/// Population parameters of the design: `beta` from the closed form and the
/// `t = 2` time shift from the process itself.
pub fn true_parameters(config: &SimulationConfig) -> TrueParameters {
    let a = config.alpha;
    let scale = (config.pi0 + (1.0 - config.pi0) * (2.0 * a + 1.0) / (a + 1.0))
        * config.rho
        * config.sigma_a;
    TrueParameters {
        beta: vec![scale, scale],
        delta_t2: vec![config.time_shift, config.time_shift],
    }
}

/// Inverse-CDF draw of the non-negative mixing variable: an atom of mass
/// `pi0` at zero, then `((u - pi0)/(1 - pi0))^(1/alpha)` on (0, 1].
pub fn draw_epsilon(u: f64, pi0: f64, alpha: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&u));
    if u < pi0 {
        0.0
    } else {
        ((u - pi0) / (1.0 - pi0)).powf(1.0 / alpha)
    }
}

/// Draws for one unit, in a fixed documented order:
/// X1, lambda, epsilon, the A disturbance, then U11, U12, U21, U22.
struct UnitDraws {
    x1: f64,
    lambda: f64,
    epsilon: f64,
    a: f64,
    /// `(u11, u12, u21, u22)`, shared by both periods.
    u: [f64; 4],
}

fn draw_unit(rng: &mut CounterRng, config: &SimulationConfig) -> UnitDraws {
    let x1 = rng.next_gaussian();
    let lambda = rng.next_rademacher();
    let epsilon = draw_epsilon(rng.next_unit(), config.pi0, config.alpha);
    let a = config.rho * config.sigma_a * (1.0 + epsilon) + config.sigma_a * rng.next_gaussian();
    let mut u = [0.0; 4];
    for slot in u.iter_mut() {
        *slot = config.sigma_u * rng.next_gaussian();
    }
    UnitDraws {
        x1,
        lambda,
        epsilon,
        a,
        u,
    }
}

/// Generate the two-period panel for one replication. Deterministic in
/// `(config.seed, replication_index)`: observation `i` uses the counter
/// stream keyed by seed -> replication -> observation.
pub fn generate_panel(config: &SimulationConfig, replication_index: u64) -> Result<PanelDataset> {
    config.validate()?;
    let rep_key = derive_stream(derive_stream(config.seed, 0), replication_index);
    let mut observations = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let mut rng = CounterRng::new(derive_stream(rep_key, i as u64));
        let d = draw_unit(&mut rng, config);
        let x2 = d.x1 + d.lambda * d.epsilon;
        let xs = [d.x1, x2];
        let mut y = Vec::with_capacity(2);
        for t in 0..2 {
            let shift = if t == 1 { config.time_shift } else { 0.0 };
            let b0 = d.a + d.u[0] + d.u[2] + shift;
            let b1 = d.a + d.u[1] + d.u[3] + shift;
            y.push(b0 + xs[t] * b1);
        }
        let x = Mat::from_rows(&[vec![1.0, xs[0]], vec![1.0, xs[1]]])?;
        observations.push(PanelObservation::new(y, x)?);
    }
    PanelDataset::new(observations)
}

/// Noise-free homogeneous panel on the same regressor process: every unit
/// has coefficients `b` plus the `t = 2` shift, with no idiosyncratic terms.
/// Used to exercise exact-recovery paths end to end.
pub fn generate_noise_free_panel(
    config: &SimulationConfig,
    replication_index: u64,
    b: [f64; 2],
) -> Result<PanelDataset> {
    config.validate()?;
    let rep_key = derive_stream(derive_stream(config.seed, 0), replication_index);
    let mut observations = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let mut rng = CounterRng::new(derive_stream(rep_key, i as u64));
        let d = draw_unit(&mut rng, config);
        let x2 = d.x1 + d.lambda * d.epsilon;
        let xs = [d.x1, x2];
        let mut y = Vec::with_capacity(2);
        for t in 0..2 {
            let shift = if t == 1 { config.time_shift } else { 0.0 };
            y.push((b[0] + shift) + xs[t] * (b[1] + shift));
        }
        let x = Mat::from_rows(&[vec![1.0, xs[0]], vec![1.0, xs[1]]])?;
        observations.push(PanelObservation::new(y, x)?);
    }
    PanelDataset::new(observations)
}

/// One estimator's output within a replication record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRep {
    pub estimate: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `hits[level][coordinate]`: did the interval cover the truth?
    pub ci_hits: Vec<Vec<bool>>,
}

/// Full record of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub index: u64,
    pub counts: Option<GroupCounts>,
    pub mover: Option<EstimatorRep>,
    pub unified: Option<EstimatorRep>,
    pub error: Option<String>,
}

impl RepRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

fn estimator_rep(
    estimate: &[f64],
    std_errors: &[f64],
    truth: &[f64],
    ci_levels: &[f64],
) -> Result<EstimatorRep> {
    let mut ci_hits = Vec::with_capacity(ci_levels.len());
    for &level in ci_levels {
        let intervals = confidence_intervals(estimate, std_errors, level)?;
        ci_hits.push(
            intervals
                .iter()
                .zip(truth)
                .map(|(&(lo, hi), &t)| lo <= t && t <= hi)
                .collect(),
        );
    }
    Ok(EstimatorRep {
        estimate: estimate.to_vec(),
        std_errors: std_errors.to_vec(),
        ci_hits,
    })
}

fn run_replication_inner(config: &SimulationConfig, replication_index: u64) -> Result<RepRecord> {
    let dataset = generate_panel(config, replication_index)?;
    let truth = true_parameters(config);
    let est_config = EstimatorConfig {
        poly_order: config.poly_order,
        bandwidth: Bandwidth::PlugIn,
        // Coverage targets beta itself, i.e. the period-1 average effect.
        target_period: 1,
        ci_levels: config.ci_levels.clone(),
    };
    let fit = estimate_all(&dataset, &est_config)?;

    let unified_inf = influence_contributions(
        &dataset,
        &fit.artifacts,
        &fit.stacks,
        &fit.estimates,
        est_config.target_period,
    )?;
    let (_cov, unified_se) = covariance_and_se(&unified_inf, dataset.n())?;
    let unified = estimator_rep(
        &fit.estimates.beta_unified,
        &unified_se,
        &truth.beta,
        &config.ci_levels,
    )?;

    let beta_mover = fit.estimates.beta_mover.clone().ok_or(Error::NoMovers)?;
    let mover_inf = influence_mover(
        &dataset,
        &fit.artifacts,
        &fit.stacks,
        &fit.estimates,
        est_config.target_period,
    )?;
    let (_mcov, mover_se) = covariance_and_se(&mover_inf, dataset.n())?;
    let mover = estimator_rep(&beta_mover, &mover_se, &truth.beta, &config.ci_levels)?;

    Ok(RepRecord {
        index: replication_index,
        counts: Some(fit.stacks.counts),
        mover: Some(mover),
        unified: Some(unified),
        error: None,
    })
}

/// Run one replication: data generation, bandwidth choice, both estimators,
/// standard errors, and interval hits. Numerical failures are captured in
/// the record, not raised.
pub fn run_replication(config: &SimulationConfig, replication_index: u64) -> RepRecord {
    match run_replication_inner(config, replication_index) {
        Ok(record) => record,
        Err(e) => RepRecord {
            index: replication_index,
            counts: None,
            mover: None,
            unified: None,
            error: Some(e.to_string()),
        },
    }
}

/// Coverage at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCoverage {
    pub level: f64,
    pub rate: f64,
}

/// Aggregated statistics for one coordinate of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub coordinate: usize,
    pub true_value: f64,
    pub mean: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub coverage: Vec<LevelCoverage>,
}

/// All coordinates of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    /// `"mover"` or `"unified"`.
    pub estimator: String,
    pub coordinates: Vec<CoordinateSummary>,
}

/// Aggregated study output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub config: SimulationConfig,
    pub true_parameters: TrueParameters,
    pub estimators: Vec<EstimatorSummary>,
    pub reps_completed: usize,
    pub reps_failed: usize,
}

fn summarize_estimator(
    name: &str,
    records: &[&EstimatorRep],
    truth: &[f64],
    ci_levels: &[f64],
) -> EstimatorSummary {
    let reps = records.len() as f64;
    let p = truth.len();
    let mut coordinates = Vec::with_capacity(p);
    for k in 0..p {
        let mean = records.iter().map(|r| r.estimate[k]).sum::<f64>() / reps;
        let sd = (records
            .iter()
            .map(|r| (r.estimate[k] - mean) * (r.estimate[k] - mean))
            .sum::<f64>()
            / reps)
            .sqrt();
        let rmse = (records
            .iter()
            .map(|r| (r.estimate[k] - truth[k]) * (r.estimate[k] - truth[k]))
            .sum::<f64>()
            / reps)
            .sqrt();
        let coverage = ci_levels
            .iter()
            .enumerate()
            .map(|(li, &level)| LevelCoverage {
                level,
                rate: records.iter().filter(|r| r.ci_hits[li][k]).count() as f64 / reps,
            })
            .collect();
        coordinates.push(CoordinateSummary {
            coordinate: k,
            true_value: truth[k],
            mean,
            bias: mean - truth[k],
            sd,
            rmse,
            coverage,
        });
    }
    EstimatorSummary {
        estimator: name.to_string(),
        coordinates,
    }
}

/// Run a full study on the current rayon thread pool. Replications execute
/// in parallel; records are collected by index, so the summary does not
/// depend on scheduling.
pub fn run_study(config: &SimulationConfig) -> Result<SimulationSummary> {
    config.validate()?;
    let records: Vec<RepRecord> = (0..config.reps as u64)
        .into_par_iter()
        .map(|i| run_replication(config, i))
        .collect();

    let completed: Vec<&RepRecord> = records.iter().filter(|r| !r.failed()).collect();
    if completed.is_empty() {
        let first_error = records
            .iter()
            .find_map(|r| r.error.clone())
            .unwrap_or_else(|| "unknown".into());
        return Err(Error::StudyFailed {
            reps: config.reps,
            first_error,
        });
    }
    let truth = true_parameters(config);
    let mover_recs: Vec<&EstimatorRep> = completed
        .iter()
        .filter_map(|r| r.mover.as_ref())
        .collect();
    let unified_recs: Vec<&EstimatorRep> = completed
        .iter()
        .filter_map(|r| r.unified.as_ref())
        .collect();
    let estimators = vec![
        summarize_estimator("mover", &mover_recs, &truth.beta, &config.ci_levels),
        summarize_estimator("unified", &unified_recs, &truth.beta, &config.ci_levels),
    ];
    Ok(SimulationSummary {
        config: config.clone(),
        true_parameters: truth,
        estimators,
        reps_completed: completed.len(),
        reps_failed: records.len() - completed.len(),
    })
}

/// Run a study on a dedicated thread pool of the given size (0 = rayon
/// default). Output is identical for every thread count.
pub fn run_study_with_threads(
    config: &SimulationConfig,
    threads: usize,
) -> Result<SimulationSummary> {
    if threads == 0 {
        return run_study(config);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Validation(format!("could not build thread pool: {e}")))?;
    pool.install(|| run_study(config))
}

/// Output format for rendered tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableFormat {
    Csv,
    Markdown,
}

/// Fixed three-decimal formatting, with negative zero normalized.
fn fmt3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

fn coverage_header(level: f64) -> String {
    format!("{}%", fmt_level(level))
}

fn fmt_level(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

/// Render a summary as a table with the column order
/// True, Mean, Bias, SD, RMSE, then one coverage column per level.
pub fn emit_table(summary: &SimulationSummary, format: TableFormat) -> String {
    let levels: Vec<f64> = summary.config.ci_levels.clone();
    let mut header = vec![
        "Estimator".to_string(),
        "Coordinate".to_string(),
        "True".to_string(),
        "Mean".to_string(),
        "Bias".to_string(),
        "SD".to_string(),
        "RMSE".to_string(),
    ];
    header.extend(levels.iter().map(|&l| coverage_header(l)));

    let mut rows: Vec<Vec<String>> = Vec::new();
    for est in &summary.estimators {
        for coord in &est.coordinates {
            let mut row = vec![
                est.estimator.clone(),
                coord.coordinate.to_string(),
                fmt3(coord.true_value),
                fmt3(coord.mean),
                fmt3(coord.bias),
                fmt3(coord.sd),
                fmt3(coord.rmse),
            ];
            row.extend(coord.coverage.iter().map(|c| fmt3(c.rate)));
            rows.push(row);
        }
    }

    match format {
        TableFormat::Csv => {
            let mut out = String::new();
            out.push_str(&header.join(","));
            out.push('\n');
            for row in rows {
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        }
        TableFormat::Markdown => {
            let mut out = String::new();
            out.push_str(&format!("| {} |\n", header.join(" | ")));
            out.push_str(&format!(
                "|{}|\n",
                header.iter().map(|_| " --- ").collect::<Vec<_>>().join("|")
            ));
            for row in rows {
                out.push_str(&format!("| {} |\n", row.join(" | ")));
            }
            out
        }
    }
}
