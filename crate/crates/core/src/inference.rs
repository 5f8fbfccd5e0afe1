//! Influence-function inference for the square-panel estimators.
//!
//! The estimated influence function for `theta = beta_L + R delta` is the
//! three-term sum
//!
//! ```text
//! zeta_i = [ 1{|D|>h} D^{-1} X*(Y - W delta) - E_N(same) ]
//!        + [ X*(Y - W delta) - gamma D_{1:L} ] * ( D_{1:L}' G1^{-1} h_hat )
//!        + Q V^{-1} w_i (X*W)' X*(Y - W delta),
//! ```
//!
//! with `G1 = E_N[D_{1:L} D_{1:L}']`, `w_i` the intercept-extracting local
//! polynomial weights, `V = E_N[w_i (X*W)'X*W]`, and
//! `Q = R - E_N[(1{|D|>h} D^{-1} + D_{1:L}' G1^{-1} h_hat) X*W]`.
//!
//! The sampling covariance of `theta_hat` is `E_N[zeta zeta'] / N` (the
//! uncentered second moment: blocks 2-3 are not exactly mean zero in sample,
//! only block 1 is centered by construction), standard errors are the square
//! roots of its diagonal, and confidence intervals use normal quantiles.
//!
//! For the trimmed-mean estimator alone a reduced influence function is used:
//! the centered mover block and the delta-propagation block, both normalized
//! by the mover share, with no slow-mover correction term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{selector_matrix, CoreEstimates, PolyStacks};
use crate::matrix::{solve_mat, Mat};
use crate::panel::{DesignArtifacts, PanelDataset};

/// Per-observation influence contributions and the matrices behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSet {
    /// N x p; row i is `zeta_i'`.
    pub zeta: Mat,
    /// `V`: p(T-1) x p(T-1).
    pub v_hat: Mat,
    /// `Q`: p x p(T-1).
    pub q_hat: Mat,
}

/// Per-coordinate confidence intervals at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelIntervals {
    pub level: f64,
    /// `(lower, upper)` per coordinate.
    pub intervals: Vec<(f64, f64)>,
}

/// Covariance, standard errors, and intervals for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    /// Sampling covariance of the estimator: `E_N[zeta zeta'] / N`, p x p.
    pub covariance: Mat,
    pub std_errors: Vec<f64>,
    pub intervals: Vec<LevelIntervals>,
}

/// Standard normal quantile via the Wichura rational approximation
/// (algorithm AS 241, PPND16); absolute error below 1e-9 over (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0, 1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            / (((((((5.226_495_278_852_545_5e3 * r + 2.872_908_573_572_194_3e4) * r
                + 3.930_789_580_009_271e4)
                * r
                + 2.121_379_430_158_659_7e4)
                * r
                + 5.394_196_021_424_751e3)
                * r
                + 6.871_870_074_920_579e2)
                * r
                + 4.231_333_070_160_091e1)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 1.519_866_656_361_645_7e-2)
                * r
                + 1.481_039_764_274_800_8e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 1.487_536_129_085_061_5e-2)
                * r
                + 1.369_298_809_227_358e-1)
                * r
                + 5.998_322_065_558_88e-1)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

/// Shared pieces of the influence assembly.
struct InfluenceParts {
    /// Residuals `X*(Y - W delta)` per observation, N x p.
    residuals: Vec<Vec<f64>>,
    /// Intercept weights `w_i`.
    weights: Vec<f64>,
    /// Slow-mover projection scalars `c_i = D_{1:L,i}' G1^{-1} h_hat`.
    slow_scalars: Vec<f64>,
    /// `(X*W)' X*(Y - W delta)` per observation, N x q.
    awt_res: Vec<Vec<f64>>,
    /// `E_N[w_i (X*W)'X*W]`.
    v_hat: Mat,
    /// `E_N[(1{|D|>h} D^{-1} + c_i) X*W]`, p x q.
    mean_sens: Mat,
    /// Mover indicator contribution `1{|D|>h} / D` (0 for non-movers).
    mover_scalars: Vec<f64>,
}

fn assemble_parts(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    stacks: &PolyStacks,
    delta: &[f64],
) -> Result<InfluenceParts> {
    let n = dataset.n();
    let p = dataset.p_regressors();
    let q = p * (dataset.t_periods() - 1);

    let intercept_weights = crate::estimator::intercept_weights(stacks)?;
    let slow = crate::estimator::slow_mover_scalars(stacks)?;

    let mut residuals = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut slow_scalars = Vec::with_capacity(n);
    let mut awt_res = Vec::with_capacity(n);
    let mut mover_scalars = Vec::with_capacity(n);
    let mut v_hat = Mat::zeros(q, q);
    let mut mean_sens = Mat::zeros(p, q);

    for (i, (obs, art)) in dataset.observations().iter().zip(artifacts).enumerate() {
        let r = crate::estimator::projected_residual(&obs.y, art, delta);
        let w_i = intercept_weights[i];
        let c_i = slow[i];
        let mover = if art.d.abs() > stacks.h {
            1.0 / art.d
        } else {
            0.0
        };

        let aw = art.a_matrix.matmul(&art.w); // X*W, p x q
        if w_i != 0.0 {
            let awt_aw = aw.transpose().matmul(&aw);
            v_hat.axpy(w_i, &awt_aw);
        }
        let sens = mover + c_i;
        if sens != 0.0 {
            mean_sens.axpy(sens, &aw);
        }
        awt_res.push(aw.tr_matvec(&r));
        residuals.push(r);
        weights.push(w_i);
        slow_scalars.push(c_i);
        mover_scalars.push(mover);
    }
    let v_hat = v_hat.scale(1.0 / n as f64);
    let mean_sens = mean_sens.scale(1.0 / n as f64);

    Ok(InfluenceParts {
        residuals,
        weights,
        slow_scalars,
        awt_res,
        v_hat,
        mean_sens,
        mover_scalars,
    })
}

/// Influence contributions for the unified estimator of
/// `theta = beta_L + R delta` at the period used to produce `estimates`.
pub fn influence_contributions(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    stacks: &PolyStacks,
    estimates: &CoreEstimates,
    target_period: usize,
) -> Result<InfluenceSet> {
    let n = dataset.n();
    let p = dataset.p_regressors();
    let parts = assemble_parts(dataset, artifacts, stacks, &estimates.delta_hat)?;

    let r_mat = selector_matrix(target_period, dataset.t_periods(), p)?;
    let q_hat = r_mat.sub(&parts.mean_sens);
    // Q V^{-1} via the symmetric solve V Z = Q'.
    let qv = solve_mat(&parts.v_hat, &q_hat.transpose())
        .map_err(|_| Error::CollinearTimeShift)?
        .transpose();

    // Mean of the mover term for centering block 1.
    let mut mover_mean = vec![0.0; p];
    for (i, r) in parts.residuals.iter().enumerate() {
        let m = parts.mover_scalars[i];
        if m != 0.0 {
            for (acc, v) in mover_mean.iter_mut().zip(r) {
                *acc += m * v;
            }
        }
    }
    for acc in &mut mover_mean {
        *acc /= n as f64;
    }

    let gamma = &estimates.gamma_hat;
    let mut zeta = Mat::zeros(n, p);
    for i in 0..n {
        let r = &parts.residuals[i];
        let m = parts.mover_scalars[i];
        let c = parts.slow_scalars[i];
        // Block 3 weight: w_i (X*W)'X*r propagated through Q V^{-1}.
        let prop = qv.matvec(&parts.awt_res[i]);
        let gamma_d1l = gamma.matvec(&stacks.d1l[i]);
        for k in 0..p {
            let block1 = m * r[k] - mover_mean[k];
            let block2 = (r[k] - gamma_d1l[k]) * c;
            let block3 = parts.weights[i] * prop[k];
            zeta.set(i, k, block1 + block2 + block3);
        }
    }

    Ok(InfluenceSet {
        zeta,
        v_hat: parts.v_hat,
        q_hat,
    })
}

/// Reduced influence contributions for the trimmed-mean estimator of
/// `beta_M + R delta`: the unified construction with the slow-mover
/// correction removed, i.e. the centered mover block plus the
/// delta-propagation block with `Q = R - E_N[1{|D|>h} D^{-1} X*W]`.
pub fn influence_mover(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    stacks: &PolyStacks,
    estimates: &CoreEstimates,
    target_period: usize,
) -> Result<InfluenceSet> {
    if stacks.counts.movers == 0 {
        return Err(Error::NoMovers);
    }
    let n = dataset.n();
    let p = dataset.p_regressors();
    let parts = assemble_parts(dataset, artifacts, stacks, &estimates.delta_hat)?;

    // Mover-only sensitivity to delta: E_N[1{|D|>h} D^{-1} X*W].
    let q = p * (dataset.t_periods() - 1);
    let mut mover_sens = Mat::zeros(p, q);
    for (i, art) in artifacts.iter().enumerate() {
        let m = parts.mover_scalars[i];
        if m != 0.0 {
            let aw = art.a_matrix.matmul(&art.w);
            mover_sens.axpy(m, &aw);
        }
    }
    let mover_sens = mover_sens.scale(1.0 / n as f64);

    let r_mat = selector_matrix(target_period, dataset.t_periods(), p)?;
    let q_hat = r_mat.sub(&mover_sens);
    let qv = solve_mat(&parts.v_hat, &q_hat.transpose())
        .map_err(|_| Error::CollinearTimeShift)?
        .transpose();

    let mut mover_mean = vec![0.0; p];
    for (i, r) in parts.residuals.iter().enumerate() {
        let m = parts.mover_scalars[i];
        if m != 0.0 {
            for (acc, v) in mover_mean.iter_mut().zip(r) {
                *acc += m * v;
            }
        }
    }
    for acc in &mut mover_mean {
        *acc /= n as f64;
    }

    let mut zeta = Mat::zeros(n, p);
    for i in 0..n {
        let r = &parts.residuals[i];
        let m = parts.mover_scalars[i];
        let prop = qv.matvec(&parts.awt_res[i]);
        for k in 0..p {
            let block1 = m * r[k] - mover_mean[k];
            let block3 = parts.weights[i] * prop[k];
            zeta.set(i, k, block1 + block3);
        }
    }

    Ok(InfluenceSet {
        zeta,
        v_hat: parts.v_hat,
        q_hat,
    })
}

/// Sampling covariance `E_N[zeta zeta'] / N` and its diagonal square roots.
pub fn covariance_and_se(influence: &InfluenceSet, n: usize) -> Result<(Mat, Vec<f64>)> {
    if n < 2 {
        return Err(Error::Validation(format!(
            "covariance needs n >= 2, got {n}"
        )));
    }
    if !influence.zeta.is_finite() {
        return Err(Error::NonFinite("influence contributions".into()));
    }
    let p = influence.zeta.cols();
    let rows = influence.zeta.rows();
    let mut second_moment = Mat::zeros(p, p);
    for i in 0..rows {
        let zi = influence.zeta.row(i);
        for a in 0..p {
            if zi[a] == 0.0 {
                continue;
            }
            for b in 0..p {
                let cur = second_moment.get(a, b);
                second_moment.set(a, b, cur + zi[a] * zi[b]);
            }
        }
    }
    let covariance = second_moment.scale(1.0 / (rows as f64 * n as f64));
    let se = (0..p).map(|k| covariance.get(k, k).sqrt()).collect();
    Ok((covariance, se))
}

/// Per-coordinate normal confidence intervals `theta_k +- z * se_k`.
pub fn confidence_intervals(
    theta: &[f64],
    std_errors: &[f64],
    level: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Validation(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    Ok(theta
        .iter()
        .zip(std_errors)
        .map(|(&t, &s)| (t - z * s, t + z * s))
        .collect())
}

/// Assemble the full report: covariance, standard errors, and intervals at
/// every requested level.
pub fn inference_report(
    theta: &[f64],
    influence: &InfluenceSet,
    n: usize,
    ci_levels: &[f64],
) -> Result<InferenceReport> {
    let (covariance, std_errors) = covariance_and_se(influence, n)?;
    let mut intervals = Vec::with_capacity(ci_levels.len());
    for &level in ci_levels {
        intervals.push(LevelIntervals {
            level,
            intervals: confidence_intervals(theta, &std_errors, level)?,
        });
    }
    Ok(InferenceReport {
        covariance,
        std_errors,
        intervals,
    })
}
