//! Estimators for the tall (`T > p`) panel.
//!
//! The within-variation scalar becomes the Gram determinant `D = det(X'X)`,
//! which is non-negative, so all trimming is one-sided: movers have `D > h`
//! and slow movers `D <= h`. The time shifts come from a pooled mover-only
//! solve through the residual projector,
//!
//! ```text
//! delta = E_N[ 1{D>h} W' M_X W ]^{-1} E_N[ 1{D>h} W' M_X Y ],
//! ```
//!
//! which recovers the truth exactly on homogeneous data for any coefficient
//! vector because `M_X X = 0`. The unified estimator and its influence
//! function mirror the square case with `(X'X)* X'` in place of `X*`:
//!
//! ```text
//! beta_L = E_N[ 1{D>h} D^{-1} (X'X)* X' (Y - W delta) ] + gamma h_hat,
//! zeta_i = [mover term centered] + [slow-mover projection] +
//!          Q V^{-1} 1{D>h} W' M_X (Y - W delta),
//! V = E_N[ 1{D>h} W' M_X W ],
//! Q = R - E_N[ (1{D>h} D^{-1} + D_{1:L}' G1^{-1} h_hat) (X'X)* X' W ].
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    bandwidth_plugin, selector_matrix, stack_poly, Bandwidth, EstimatorConfig, GroupCounts,
    PolyStacks,
};
use crate::inference::{inference_report, InferenceReport, InfluenceSet};
use crate::matrix::{solve, solve_mat, Mat};
use crate::panel::{compute_design_artifacts, d_sample, DesignArtifacts, PanelDataset, PanelMode};

/// Estimates and inference material from one tall-panel run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtEstimates {
    pub delta_hat: Vec<f64>,
    pub gamma_hat: Mat,
    pub beta_unified: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub bandwidth_used: f64,
    pub v_hat: Mat,
    pub q_hat: Mat,
    /// N x p influence contributions.
    pub zeta: Mat,
}

/// Full output of [`estimate_all_ext`].
#[derive(Debug, Clone)]
pub struct ExtFit {
    pub estimates: ExtEstimates,
    pub counts: GroupCounts,
    pub inference: InferenceReport,
    pub warnings: Vec<String>,
}

/// `M_X` for observation `i`, which must be a mover (the projector is only
/// undefined on numerically singular designs, and movers have `D > h > 0`).
fn projector_of(art: &DesignArtifacts, index: usize) -> Result<&Mat> {
    art.m_x.as_ref().ok_or(Error::SingularDesign {
        observation: Some(index),
    })
}

/// Pooled mover-only time-shift estimator through the within projector.
pub fn estimate_delta_pooled(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    h: f64,
) -> Result<Vec<f64>> {
    if dataset.mode() != PanelMode::TallTP {
        return Err(Error::Validation(
            "pooled delta estimation requires a tall (T > p) panel".into(),
        ));
    }
    let n = dataset.n();
    let q = dataset.p_regressors() * (dataset.t_periods() - 1);
    let mut gram = Mat::zeros(q, q);
    let mut moment = vec![0.0; q];
    let mut any_mover = false;
    for (i, (obs, art)) in dataset.observations().iter().zip(artifacts).enumerate() {
        if art.d <= h {
            continue;
        }
        any_mover = true;
        let m_x = projector_of(art, i)?;
        let mw = m_x.matmul(&art.w); // M_X W, T x q
        let wt_mw = art.w.transpose().matmul(&mw); // W' M_X W
        gram.axpy(1.0, &wt_mw);
        let my = m_x.matvec(&obs.y);
        let wt_my = art.w.tr_matvec(&my); // W' M_X Y
        for (acc, v) in moment.iter_mut().zip(&wt_my) {
            *acc += v;
        }
    }
    if !any_mover {
        return Err(Error::InsufficientMoverVariation);
    }
    let gram = gram.scale(1.0 / n as f64);
    let moment: Vec<f64> = moment.iter().map(|v| v / n as f64).collect();
    solve(&gram, &moment).map_err(|_| Error::InsufficientMoverVariation)
}

/// Residual `(X'X)* X' (Y - W delta)` for one observation.
fn gram_adjugate_residual(obs_y: &[f64], art: &DesignArtifacts, delta: &[f64]) -> Vec<f64> {
    let w_delta = art.w.matvec(delta);
    let resid: Vec<f64> = obs_y.iter().zip(&w_delta).map(|(y, wd)| y - wd).collect();
    art.a_matrix.matvec(&resid)
}

/// Slope matrix from the one-sided slow-mover polynomial regression.
fn estimate_gamma_ext(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    stacks: &PolyStacks,
    delta: &[f64],
) -> Result<Mat> {
    let n = dataset.n();
    let p = dataset.p_regressors();
    let l = stacks.poly_order;
    // Bandwidth-scaled polynomial basis, as in the square case.
    let hp = {
        let mut out = Vec::with_capacity(l + 1);
        let mut acc = 1.0;
        out.push(acc);
        for _ in 0..l {
            acc *= stacks.h;
            out.push(acc);
        }
        out
    };
    let mut cross = Mat::zeros(p, l);
    let mut g1 = Mat::zeros(l, l);
    for ((obs, art), row) in dataset
        .observations()
        .iter()
        .zip(artifacts)
        .zip(&stacks.d1l)
    {
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        for a in 0..l {
            for b in 0..l {
                let cur = g1.get(a, b);
                g1.set(a, b, cur + (row[a] / hp[a + 1]) * (row[b] / hp[b + 1]));
            }
        }
        let r = gram_adjugate_residual(&obs.y, art, delta);
        for (a, &ra) in r.iter().enumerate() {
            for (b, &db) in row.iter().enumerate() {
                let cur = cross.get(a, b);
                cross.set(a, b, cur + ra * (db / hp[b + 1]));
            }
        }
    }
    let cross = cross.scale(1.0 / n as f64);
    let g1 = g1.scale(1.0 / n as f64);
    let gamma_t = solve_mat(&g1, &cross.transpose()).map_err(|_| Error::TooFewSlowMovers {
        poly_order: l,
        stayers: stacks.counts.stayers,
        slow_movers: stacks.counts.slow_movers,
        movers: stacks.counts.movers,
    })?;
    let gamma_scaled = gamma_t.transpose();
    Ok(Mat::from_fn(p, l, |a, b| gamma_scaled.get(a, b) / hp[b + 1]))
}

/// Unified tall-panel estimator; `gamma` is fit internally from the
/// one-sided stacks.
pub fn estimate_beta_unified_ext(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    stacks: &PolyStacks,
    delta: &[f64],
) -> Result<(Vec<f64>, Mat)> {
    let n = dataset.n();
    let p = dataset.p_regressors();
    let gamma = estimate_gamma_ext(dataset, artifacts, stacks, delta)?;
    let mut beta = vec![0.0; p];
    for (obs, art) in dataset.observations().iter().zip(artifacts) {
        if art.d <= stacks.h {
            continue;
        }
        let r = gram_adjugate_residual(&obs.y, art, delta);
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
    Ok((beta, gamma))
}

/// Trimmed mean over movers for the tall panel (no coverage target attaches
/// to it; exposed as a convenience).
pub fn estimate_beta_mover_ext(
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
        if art.d <= stacks.h {
            continue;
        }
        let r = gram_adjugate_residual(&obs.y, art, delta);
        for (acc, v) in sum.iter_mut().zip(&r) {
            *acc += v / art.d;
        }
    }
    let share = stacks.counts.movers as f64 / n as f64;
    Ok(sum.iter().map(|v| v / n as f64 / share).collect())
}

/// Influence contributions, `V`, and `Q` for the tall-panel estimator of
/// `theta = beta_L + R delta`.
pub fn influence_ext(
    dataset: &PanelDataset,
    artifacts: &[DesignArtifacts],
    stacks: &PolyStacks,
    delta: &[f64],
    gamma: &Mat,
    target_period: usize,
) -> Result<InfluenceSet> {
    let n = dataset.n();
    let p = dataset.p_regressors();
    let q = p * (dataset.t_periods() - 1);

    let slow = crate::estimator::slow_mover_scalars(stacks)?;

    let mut residuals = Vec::with_capacity(n);
    let mut slow_scalars = Vec::with_capacity(n);
    let mut mover_scalars = Vec::with_capacity(n);
    let mut pooled_scores: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_hat = Mat::zeros(q, q);
    let mut mean_sens = Mat::zeros(p, q);
    let mut mover_mean = vec![0.0; p];

    for (i, (obs, art)) in dataset.observations().iter().zip(artifacts).enumerate() {
        let r = gram_adjugate_residual(&obs.y, art, delta);
        let c_i = slow[i];
        let mover = if art.d > stacks.h { 1.0 / art.d } else { 0.0 };
        let aw = art.a_matrix.matmul(&art.w); // (X'X)* X' W, p x q
        let sens = mover + c_i;
        if sens != 0.0 {
            mean_sens.axpy(sens, &aw);
        }
        if mover != 0.0 {
            let m_x = projector_of(art, i)?;
            let mw = m_x.matmul(&art.w);
            let wt_mw = art.w.transpose().matmul(&mw);
            v_hat.axpy(1.0, &wt_mw);
            // W' M_X (Y - W delta)
            let w_delta = art.w.matvec(delta);
            let resid: Vec<f64> = obs.y.iter().zip(&w_delta).map(|(y, wd)| y - wd).collect();
            let m_resid = m_x.matvec(&resid);
            pooled_scores.push(art.w.tr_matvec(&m_resid));
            for (acc, v) in mover_mean.iter_mut().zip(&r) {
                *acc += mover * v;
            }
        } else {
            pooled_scores.push(vec![0.0; q]);
        }
        residuals.push(r);
        slow_scalars.push(c_i);
        mover_scalars.push(mover);
    }
    let v_hat = v_hat.scale(1.0 / n as f64);
    let mean_sens = mean_sens.scale(1.0 / n as f64);
    for acc in &mut mover_mean {
        *acc /= n as f64;
    }

    let r_mat = selector_matrix(target_period, dataset.t_periods(), p)?;
    let q_hat = r_mat.sub(&mean_sens);
    let qv = solve_mat(&v_hat, &q_hat.transpose())
        .map_err(|_| Error::InsufficientMoverVariation)?
        .transpose();

    let mut zeta = Mat::zeros(n, p);
    for i in 0..n {
        let r = &residuals[i];
        let m = mover_scalars[i];
        let c = slow_scalars[i];
        let prop = qv.matvec(&pooled_scores[i]);
        let gamma_d1l = gamma.matvec(&stacks.d1l[i]);
        for k in 0..p {
            let block1 = m * r[k] - mover_mean[k];
            let block2 = (r[k] - gamma_d1l[k]) * c;
            zeta.set(i, k, block1 + block2 + prop[k]);
        }
    }

    Ok(InfluenceSet { zeta, v_hat, q_hat })
}

/// Full tall-panel pipeline: bandwidth on the Gram-determinant sample,
/// one-sided stacks, pooled delta, unified beta, theta, and inference.
pub fn estimate_all_ext(dataset: &PanelDataset, config: &EstimatorConfig) -> Result<ExtFit> {
    if dataset.mode() != PanelMode::TallTP {
        return Err(Error::Validation(
            "estimate_all_ext requires a tall (T > p) panel".into(),
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
    // D >= 0, so the absolute-value convention reduces to one-sided trimming.
    let stacks = stack_poly(&d_values, h, config.poly_order).map_err(|e| e.stage("stacks"))?;
    let delta =
        estimate_delta_pooled(dataset, &artifacts, h).map_err(|e| e.stage("delta_pooled"))?;
    let (beta_unified, gamma) = estimate_beta_unified_ext(dataset, &artifacts, &stacks, &delta)
        .map_err(|e| e.stage("beta_unified"))?;

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

    let influence = influence_ext(
        dataset,
        &artifacts,
        &stacks,
        &delta,
        &gamma,
        config.target_period,
    )
    .map_err(|e| e.stage("influence"))?;
    let inference = inference_report(&theta_hat, &influence, dataset.n(), &config.ci_levels)
        .map_err(|e| e.stage("inference"))?;

    Ok(ExtFit {
        estimates: ExtEstimates {
            delta_hat: delta,
            gamma_hat: gamma,
            beta_unified,
            theta_hat,
            bandwidth_used: h,
            v_hat: influence.v_hat,
            q_hat: influence.q_hat,
            zeta: influence.zeta,
        },
        counts: stacks.counts,
        inference,
        warnings: Vec::new(),
    })
}
