//! Estimators for the square (`T = p`) panel.
//!
//! Observations are split by the within-variation scalar `D` into stayers
//! (`D = 0`), slow movers (`0 < |D| <= h`) and movers (`|D| > h`). The
//! trimmed-mean estimator over movers,
//!
//! ```text
//! beta_M = E_N[ 1{|D|>h} D^{-1} X*(Y - W delta) ] / E_N[ 1{|D|>h} ],
//! ```
//!
//! is complemented by an order-`L` local-polynomial correction built from the
//! slow movers, giving the unified estimator
//!
//! ```text
//! beta_L = E_N[ 1{|D|>h} D^{-1} X*(Y - W delta) ] + gamma * h_hat,
//! ```
//!
//! where `gamma` regresses `X*(Y - W delta)` on `(D, ..., D^L)` without an
//! intercept over `|D| <= h` and `h_hat = E_N[ 1{|D|<=h} (1, ..., D^{L-1})' ]`.
//! The time shifts `delta` come from intercept-extracting local polynomial
//! regressions of every entry of `(X*W)'X*[Y, W]` on `D`, assembled into one
//! weighted least-squares solve. The average partial effect for period `t`
//! is `theta = beta_L + R delta` with `R` the block selector for period `t`.
//!
//! Boundary conventions are inclusive for slow movers (`|D| <= h`) and strict
//! for movers (`|D| > h`); stayers enter the `D_{0:L}` stacks with leading
//! entry 1 and contribute zero rows to `D_{1:L}`. Polynomial powers are built
//! by iterated multiplication so runs are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{solve, solve_mat, Mat};
use crate::panel::{compute_design_artifacts, d_sample, DesignArtifacts, PanelDataset, PanelMode};

/// Bandwidth choice: a fixed value or the plug-in rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    Explicit(f64),
    PlugIn,
}

/// Configuration for a single estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Local polynomial order `L >= 1`.
    pub poly_order: usize,
    pub bandwidth: Bandwidth,
    /// Period `t` in `1..=T` selecting the time effect added to beta.
    pub target_period: usize,
    /// Confidence levels in (0, 1).
    pub ci_levels: Vec<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            poly_order: 2,
            bandwidth: Bandwidth::PlugIn,
            target_period: 1,
            ci_levels: vec![0.90, 0.95],
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self, t_periods: usize) -> Result<()> {
        if self.poly_order < 1 {
            return Err(Error::Validation("poly_order must be at least 1".into()));
        }
        if let Bandwidth::Explicit(h) = self.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Validation(format!(
                    "explicit bandwidth must be positive and finite, got {h}"
                )));
            }
        }
        if self.target_period < 1 || self.target_period > t_periods {
            return Err(Error::InvalidPeriod {
                period: self.target_period,
                t_periods,
            });
        }
        for &level in &self.ci_levels {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::Validation(format!(
                    "confidence level must lie in (0, 1), got {level}"
                )));
            }
        }
        Ok(())
    }
}

/// Group sizes after trimming at bandwidth `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub stayers: usize,
    pub slow_movers: usize,
    pub movers: usize,
}

/// Per-observation polynomial stacks and their sample means.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyStacks {
    /// `1{|D|<=h} (1, D, ..., D^L)'` per observation (length L+1).
    pub d0l: Vec<Vec<f64>>,
    /// `1{|D|<=h} (D, ..., D^L)'` per observation (length L).
    pub d1l: Vec<Vec<f64>>,
    /// `E_N[ 1{|D|<=h} (1, D, ..., D^{L-1})' ]` (length L).
    pub h_hat: Vec<f64>,
    pub counts: GroupCounts,
    /// Bandwidth the stacks were built with.
    pub h: f64,
    pub poly_order: usize,
}

/// Powers `(1, d, d^2, ..., d^max)` by iterated multiplication.
fn powers(d: f64, max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max + 1);
    let mut acc = 1.0;
    out.push(acc);
    for _ in 0..max {
        acc *= d;
        out.push(acc);
    }
    out
}

/// Sample standard deviation (denominator N-1).
fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Linear-interpolation quantile on sorted data (R type 7).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Plug-in bandwidth `h = 0.5 * min(sd(D), IQR(D)/1.34) * N^(-1/(2L+1))`.
///
/// `sd` is the sample standard deviation and the interquartile range uses
/// linear-interpolation quantiles.
pub fn bandwidth_plugin(d_values: &[f64], n: usize, poly_order: usize) -> Result<f64> {
    if n != d_values.len() {
        return Err(Error::Validation(format!(
            "n = {n} does not match {} D values",
            d_values.len()
        )));
    }
    if n < 4 {
        return Err(Error::Validation(format!(
            "plug-in bandwidth needs at least 4 observations, got {n}"
        )));
    }
    if poly_order < 1 {
        return Err(Error::Validation("poly_order must be at least 1".into()));
    }
    let mut sorted = d_values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite D values"));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let sd = sample_sd(d_values);
    let spread = sd.min(iqr / 1.34);
    if !(spread > 0.0) {
        return Err(Error::DegenerateSample);
    }
    let rate = -(1.0 / (2.0 * poly_order as f64 + 1.0));
    Ok(0.5 * spread * (n as f64).powf(rate))
}

/// Build the polynomial stacks, sample means, and group counts at bandwidth
/// `h`. Total: every observation falls in exactly one group.
pub fn stack_poly(d_values: &[f64], h: f64, poly_order: usize) -> Result<PolyStacks> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Validation(format!(
            "bandwidth must be positive and finite, got {h}"
        )));
    }
    if poly_order < 1 {
        return Err(Error::Validation("poly_order must be at least 1".into()));
    }
    let n = d_values.len();
    let l = poly_order;
    let mut d0l = Vec::with_capacity(n);
    let mut d1l = Vec::with_capacity(n);
    let mut h_hat = vec![0.0; l];
    let mut counts = GroupCounts {
        stayers: 0,
        slow_movers: 0,
        movers: 0,
    };
    for &d in d_values {
        if d == 0.0 {
            counts.stayers += 1;
        } else if d.abs() <= h {
            counts.slow_movers += 1;
        } else {
            counts.movers += 1;
        }
        if d.abs() <= h {
            let pw = powers(d, l);
            for (k, acc) in h_hat.iter_mut().enumerate() {
                *acc += pw[k];
            }
            d1l.push(pw[1..].to_vec());
            d0l.push(pw);
        } else {
            d0l.push(vec![0.0; l + 1]);
            d1l.push(vec![0.0; l]);
        }
    }
    for acc in &mut h_hat {
        *acc /= n as f64;
    }
    Ok(PolyStacks {
        d0l,
        d1l,
        h_hat,
        counts,
        h,
        poly_order,
    })
}

pub(crate) fn too_few_slow_movers(stacks: &PolyStacks) -> Error {
    Error::TooFewSlowMovers {
        poly_order: stacks.poly_order,
        stayers: stacks.counts.stayers,
        slow_movers: stacks.counts.slow_movers,
        movers: stacks.counts.movers,
    }
}

// The polynomial Gram solves below work in the bandwidth-scaled basis
// (powers of D/h rather than D). The intercept weights, slow-mover scalars,
// and slope estimates are exactly invariant to this diagonal rescaling, but
// the Gram condition number improves by about h^{-2L}, which matters when
// slow movers concentrate many orders of magnitude below h.

/// Intercept-extracting weights `w_i = D_{0:L,i}' E_N[D_{0:L} D_{0:L}']^{-1} e_1`.
///
/// `E_N[w_i Z_i]` is then the intercept of the order-L local polynomial
/// regression of `Z` on `D` over the `|D| <= h` subsample.
pub(crate) fn intercept_weights(stacks: &PolyStacks) -> Result<Vec<f64>> {
    let n = stacks.d0l.len();
    let l1 = stacks.poly_order + 1;
    let hp = powers(stacks.h, stacks.poly_order);
    let mut gram = Mat::zeros(l1, l1);
    for row in &stacks.d0l {
        for a in 0..l1 {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..l1 {
                let cur = gram.get(a, b);
                gram.set(a, b, cur + (row[a] / hp[a]) * (row[b] / hp[b]));
            }
        }
    }
    let gram = gram.scale(1.0 / n as f64);
    let mut e1 = vec![0.0; l1];
    e1[0] = 1.0;
    let s = solve(&gram, &e1).map_err(|_| too_few_slow_movers(stacks))?;
    Ok(stacks
        .d0l
        .iter()
        .map(|row| {
            row.iter()
                .zip(&s)
                .zip(&hp)
                .map(|((a, b), h)| (a / h) * b)
                .sum()
        })
        .collect())
}

/// Scaled Gram `E_N[(D/h)_{1:L} (D/h)_{1:L}']` of the no-intercept stacks.
fn d1l_gram_scaled(stacks: &PolyStacks) -> Mat {
    let n = stacks.d1l.len();
    let l = stacks.poly_order;
    let hp = powers(stacks.h, l);
    let mut gram = Mat::zeros(l, l);
    for row in &stacks.d1l {
        for a in 0..l {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..l {
                let cur = gram.get(a, b);
                gram.set(a, b, cur + (row[a] / hp[a + 1]) * (row[b] / hp[b + 1]));
            }
        }
    }
    gram.scale(1.0 / n as f64)
}

/// Slow-mover projection scalars `c_i = D_{1:L,i}' E_N[D_{1:L} D_{1:L}']^{-1} h_hat`.
pub(crate) fn slow_mover_scalars(stacks: &PolyStacks) -> Result<Vec<f64>> {
    let l = stacks.poly_order;
    let hp = powers(stacks.h, l);
    let gram = d1l_gram_scaled(stacks);
    let h_scaled: Vec<f64> = stacks
        .h_hat
        .iter()
        .enumerate()
        .map(|(k, v)| v / hp[k + 1])
        .collect();
    let y = solve(&gram, &h_scaled).map_err(|_| too_few_slow_movers(stacks))?;
    Ok(stacks
        .d1l
        .iter()
        .map(|row| {
            row.iter()
                .zip(&y)
                .enumerate()
                .map(|(k, (a, b))| (a / hp[k + 1]) * b)
                .sum()
        })
        .collect())
}

/// Residual vector `X*(Y - W delta)` for one observation.
pub(crate) fn projected_residual(
    obs_y: &[f64],
    art: &DesignArtifacts,
    delta: &[f64],
) -> Vec<f64> {
    let w_delta = art.w.matvec(delta);
    let resid: Vec<f64> = obs_y.iter().zip(&w_delta).map(|(y, wd)| y - wd).collect();
    art.a_matrix.matvec(&resid)
}

/// Time-shift estimator: one weighted least-squares solve assembling the
/// local-polynomial intercepts of every entry of `(X*W)'X*[Y, W]` at `D = 0`.
pub fn estimate_delta(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    stacks: &PolyStacks,
) -> Result<Vec<f64>> {
    let n = dataset.n();
    let q = dataset.p_regressors() * (dataset.t_periods() - 1);
    let weights = intercept_weights(stacks)?;

    let mut gram = Mat::zeros(q, q);
    let mut moment = vec![0.0; q];
    for ((obs, art), &w_i) in dataset
        .observations()
        .iter()
        .zip(artifacts)
        .zip(&weights)
    {
        if w_i == 0.0 {
            continue;
        }
        let aw = art.a_matrix.matmul(&art.w); // X*W, p x q
        let awt_aw = aw.transpose().matmul(&aw); // (X*W)'X*W, q x q
        gram.axpy(w_i, &awt_aw);
        let ay = art.a_matrix.matvec(&obs.y); // X*Y
        let awt_ay = aw.tr_matvec(&ay); // (X*W)'X*Y
        for (acc, v) in moment.iter_mut().zip(&awt_ay) {
            *acc += w_i * v;
        }
    }
    let gram = gram.scale(1.0 / n as f64);
    let moment: Vec<f64> = moment.iter().map(|v| v / n as f64).collect();
    solve(&gram, &moment).map_err(|_| Error::CollinearTimeShift)
}

/// Slope estimator: order-L local polynomial regression of `X*(Y - W delta)`
/// on `(D, ..., D^L)` without an intercept. Column `l` estimates the `l`-th
/// scaled derivative of the conditional mean at zero.
pub fn estimate_gamma(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    stacks: &PolyStacks,
    delta: &[f64],
) -> Result<Mat> {
    let n = dataset.n();
    let p = dataset.p_regressors();
    let l = stacks.poly_order;
    let hp = powers(stacks.h, l);
    let mut cross = Mat::zeros(p, l); // E_N[X*(Y - W delta) (D/h)_{1:L}']
    for ((obs, art), row) in dataset
        .observations()
        .iter()
        .zip(artifacts)
        .zip(&stacks.d1l)
    {
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        let r = projected_residual(&obs.y, art, delta);
        for (a, &ra) in r.iter().enumerate() {
            for (b, &db) in row.iter().enumerate() {
                let cur = cross.get(a, b);
                cross.set(a, b, cur + ra * (db / hp[b + 1]));
            }
        }
    }
    let cross = cross.scale(1.0 / n as f64);
    let gram = d1l_gram_scaled(stacks);
    // gamma_scaled = cross * gram^{-1}; solve on the transpose since the
    // gram is symmetric, then undo the basis scaling column by column.
    let gamma_t = solve_mat(&gram, &cross.transpose()).map_err(|_| too_few_slow_movers(stacks))?;
    let gamma_scaled = gamma_t.transpose();
    Ok(Mat::from_fn(p, l, |a, b| gamma_scaled.get(a, b) / hp[b + 1]))
}

/// Trimmed-mean estimator over movers.
pub fn estimate_beta_mover(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    stacks: &PolyStacks,
    delta: &[f64],
) -> Result<Vec<f64>> {
    if stacks.counts.movers == 0 {
        return Err(Error::NoMovers);
    }
    let n = dataset.n();
    let p = dataset.p_regressors();
    let mut sum = vec![0.0; p];
    for (obs, art) in dataset.observations().iter().zip(artifacts) {
        if art.d.abs() <= stacks.h {
            continue;
        }
        let r = projected_residual(&obs.y, art, delta);
        for (acc, v) in sum.iter_mut().zip(&r) {
            *acc += v / art.d;
        }
    }
    let mover_share = stacks.counts.movers as f64 / n as f64;
    Ok(sum.iter().map(|v| v / n as f64 / mover_share).collect())
}

/// Unified estimator: un-normalized mover term plus the slow-mover
/// polynomial correction `gamma * h_hat`.
pub fn estimate_beta_unified(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    stacks: &PolyStacks,
    delta: &[f64],
    gamma: &Mat,
) -> Vec<f64> {
    let n = dataset.n();
    let p = dataset.p_regressors();
    let mut beta = vec![0.0; p];
    for (obs, art) in dataset.observations().iter().zip(artifacts) {
        if art.d.abs() <= stacks.h {
            continue;
        }
        let r = projected_residual(&obs.y, art, delta);
        for (acc, v) in beta.iter_mut().zip(&r) {
            *acc += v / art.d;
        }
    }
    for acc in beta.iter_mut() {
        *acc /= n as f64;
    }
    let correction = gamma.matvec(&stacks.h_hat);
    for (acc, v) in beta.iter_mut().zip(&correction) {
        *acc += v;
    }
    beta
}

/// Rewritten form of the unified estimator: mover share times the trimmed
/// mean plus the derivative terms weighted by raw `D`-power means. Kept as a
/// second code path; both forms agree to floating-point accuracy.
pub fn beta_unified_rewritten(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    stacks: &PolyStacks,
    delta: &[f64],
    gamma: &Mat,
) -> Result<Vec<f64>> {
    let n = dataset.n();
    let p = dataset.p_regressors();
    let l = stacks.poly_order;
    let mover_share = stacks.counts.movers as f64 / n as f64;

    let mut beta = vec![0.0; p];
    if stacks.counts.movers > 0 {
        let beta_m = estimate_beta_mover(dataset, artifacts, stacks, delta)?;
        for (acc, v) in beta.iter_mut().zip(&beta_m) {
            *acc = mover_share * v;
        }
    }
    // Raw means E_N[D^{l-1} 1{|D|<=h}] recomputed from D directly.
    let mut power_means = vec![0.0; l];
    for art in artifacts {
        if art.d.abs() <= stacks.h {
            let pw = powers(art.d, l.saturating_sub(1));
            for (acc, v) in power_means.iter_mut().zip(&pw) {
                *acc += v;
            }
        }
    }
    for acc in &mut power_means {
        *acc /= n as f64;
    }
    for col in 0..l {
        for (k, acc) in beta.iter_mut().enumerate() {
            *acc += gamma.get(k, col) * power_means[col];
        }
    }
    Ok(beta)
}

/// Selector matrix `R` extracting the period-`t` time effect: zero for
/// `t = 1`, the identity in block `t-1` for `t >= 2`.
pub fn selector_matrix(target_period: usize, t_periods: usize, p: usize) -> Result<Mat> {
    if target_period < 1 || target_period > t_periods {
        return Err(Error::InvalidPeriod {
            period: target_period,
            t_periods,
        });
    }
    let mut r = Mat::zeros(p, p * (t_periods - 1));
    if target_period >= 2 {
        let block = target_period - 2;
        for j in 0..p {
            r.set(j, block * p + j, 1.0);
        }
    }
    Ok(r)
}

/// Point estimates from one square-panel run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreEstimates {
    /// Time shifts, length p(T-1).
    pub delta_hat: Vec<f64>,
    /// Scaled derivative estimates, p x L.
    pub gamma_hat: Mat,
    /// Trimmed mean over movers; absent when the trimmed sample is empty.
    pub beta_mover: Option<Vec<f64>>,
    /// Unified estimator.
    pub beta_unified: Vec<f64>,
    /// `beta_unified + R delta_hat` for the configured period.
    pub theta_hat: Vec<f64>,
    pub bandwidth_used: f64,
}

/// Full output of [`estimate_all`]: estimates plus the per-observation
/// material needed downstream for inference.
#[derive(Debug, Clone)]
pub struct CoreFit {
    pub estimates: CoreEstimates,
    pub stacks: PolyStacks,
    pub artifacts: Vec<DesignArtifacts>,
    pub warnings: Vec<String>,
}

/// Run the full square-panel pipeline: bandwidth, stacks, delta, gamma, both
/// beta estimators, and theta. Deterministic given its inputs.
pub fn estimate_all(dataset: &PanelDataset, config: &EstimatorConfig) -> Result<CoreFit> {
    if dataset.mode() != PanelMode::SquareTP {
        return Err(Error::Validation(
            "estimate_all requires a square (T = p) panel; use the tall-panel pipeline".into(),
        ));
    }
    config.validate(dataset.t_periods())?;
    let artifacts = compute_design_artifacts(dataset).map_err(|e| e.stage("design"))?;
    let d_values = d_sample(&artifacts);
    let h = match config.bandwidth {
        Bandwidth::Explicit(h) => h,
        Bandwidth::PlugIn => bandwidth_plugin(&d_values, dataset.n(), config.poly_order)
            .map_err(|e| e.stage("bandwidth"))?,
    };
    let stacks = stack_poly(&d_values, h, config.poly_order).map_err(|e| e.stage("stacks"))?;
    let delta = estimate_delta(dataset, &artifacts, &stacks).map_err(|e| e.stage("delta"))?;
    let gamma =
        estimate_gamma(dataset, &artifacts, &stacks, &delta).map_err(|e| e.stage("gamma"))?;

    let mut warnings = Vec::new();
    let beta_mover = match estimate_beta_mover(dataset, &artifacts, &stacks, &delta) {
        Ok(b) => Some(b),
        Err(Error::NoMovers) => {
            warnings.push(format!(
                "no movers at bandwidth h = {h}: the trimmed-mean estimator is undefined and \
                 the unified estimator has a zero mover term"
            ));
            None
        }
        Err(e) => return Err(e.stage("beta_mover")),
    };
    let beta_unified = estimate_beta_unified(dataset, &artifacts, &stacks, &delta, &gamma);

    let r = selector_matrix(
        config.target_period,
        dataset.t_periods(),
        dataset.p_regressors(),
    )?;
    let r_delta = r.matvec(&delta);
    let theta_hat: Vec<f64> = beta_unified
        .iter()
        .zip(&r_delta)
        .map(|(b, rd)| b + rd)
        .collect();

    Ok(CoreFit {
        estimates: CoreEstimates {
            delta_hat: delta,
            gamma_hat: gamma,
            beta_mover,
            beta_unified,
            theta_hat,
            bandwidth_used: h,
        },
        stacks,
        artifacts,
        warnings,
    })
}
