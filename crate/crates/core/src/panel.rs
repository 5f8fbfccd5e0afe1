//! Panel data types and per-observation design algebra.
//!
//! An observation is a `T`-vector of outcomes `Y` paired with a `T x p`
//! regressor matrix `X` whose row `t` is `X_t'`. The derived quantities every
//! estimator consumes are collected in [`DesignArtifacts`]:
//!
//! - `D`: the within-variation scalar, `det(X)` when `T = p` and
//!   `det(X'X)` when `T > p` (non-negative in the tall case);
//! - `a_matrix`: `X*` (the adjugate) when square, `(X'X)* X'` when tall,
//!   so that `a_matrix * Y` is the numerator of the per-observation effect;
//! - `w`: the `T x p(T-1)` time-shift design with `X_t'` in block `t-1` for
//!   `t >= 2` and a zero first row;
//! - `m_x`: the residual projector `I - X (X'X)^{-1} X'` (tall case only,
//!   absent when `X'X` is numerically singular, e.g. for stayers).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{adjugate, determinant, solve_mat, Mat};

/// Whether the panel is square (`T = p`) or tall (`T > p`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PanelMode {
    SquareTP,
    TallTP,
}

/// One cross-sectional unit: outcomes `y` (length T) and regressors `x`
/// (T x p, row t = X_t').
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub y: Vec<f64>,
    pub x: Mat,
}

impl PanelObservation {
    pub fn new(y: Vec<f64>, x: Mat) -> Result<PanelObservation> {
        if y.len() != x.rows() {
            return Err(Error::Dimension(format!(
                "outcome length {} does not match {} regressor rows",
                y.len(),
                x.rows()
            )));
        }
        if x.cols() == 0 || x.rows() < x.cols() {
            return Err(Error::UnsupportedShape {
                t: x.rows(),
                p: x.cols(),
            });
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("panel observation entries".into()));
        }
        Ok(PanelObservation { y, x })
    }

    pub fn t_periods(&self) -> usize {
        self.x.rows()
    }

    pub fn p_regressors(&self) -> usize {
        self.x.cols()
    }
}

/// A balanced cross-section of observations sharing one `(T, p)` shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    observations: Vec<PanelObservation>,
    t_periods: usize,
    p_regressors: usize,
    mode: PanelMode,
}

impl PanelDataset {
    pub fn new(observations: Vec<PanelObservation>) -> Result<PanelDataset> {
        if observations.len() < 2 {
            return Err(Error::Validation(format!(
                "a panel dataset needs at least 2 observations, got {}",
                observations.len()
            )));
        }
        let t = observations[0].t_periods();
        let p = observations[0].p_regressors();
        for (i, obs) in observations.iter().enumerate() {
            if obs.t_periods() != t || obs.p_regressors() != p {
                return Err(Error::Validation(format!(
                    "observation {i} has shape ({}, {}) but the panel is ({t}, {p})",
                    obs.t_periods(),
                    obs.p_regressors()
                )));
            }
        }
        let mode = if t == p {
            PanelMode::SquareTP
        } else {
            PanelMode::TallTP
        };
        Ok(PanelDataset {
            observations,
            t_periods: t,
            p_regressors: p,
            mode,
        })
    }

    pub fn observations(&self) -> &[PanelObservation] {
        &self.observations
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn t_periods(&self) -> usize {
        self.t_periods
    }

    pub fn p_regressors(&self) -> usize {
        self.p_regressors
    }

    pub fn mode(&self) -> PanelMode {
        self.mode
    }
}

/// Per-observation derived algebra shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignArtifacts {
    /// Within-variation scalar: `det(X)` (square) or `det(X'X)` (tall).
    pub d: f64,
    /// `X*` (p x p) when square; `(X'X)* X'` (p x T) when tall.
    pub a_matrix: Mat,
    /// Time-shift design, T x p(T-1).
    pub w: Mat,
    /// Residual projector `I - X(X'X)^{-1}X'`; tall case only, and absent
    /// when `X'X` is numerically singular.
    pub m_x: Option<Mat>,
}

/// Build the time-shift design `W`: row 1 is zero; row `t` (t >= 2) carries
/// `X_t'` in column block `t-1` and zeros elsewhere.
pub fn build_time_shift_design(x: &Mat) -> Result<Mat> {
    let t_periods = x.rows();
    let p = x.cols();
    if t_periods < 2 {
        return Err(Error::UnsupportedPanelLength(t_periods));
    }
    let mut w = Mat::zeros(t_periods, p * (t_periods - 1));
    for t in 1..t_periods {
        for j in 0..p {
            w.set(t, (t - 1) * p + j, x.get(t, j));
        }
    }
    Ok(w)
}

/// Residual projector `M_X = I - X (X'X)^{-1} X'` for a tall design (`T > p`).
///
/// Symmetric and idempotent, and annihilates the column space of `x`. A
/// rank-deficient `X'X` is a singular-design error; the caller attaches the
/// observation index.
pub fn residual_projector(x: &Mat) -> Result<Mat> {
    let t = x.rows();
    let p = x.cols();
    if t <= p {
        return Err(Error::Dimension(format!(
            "residual projector needs T > p, got {t}x{p}"
        )));
    }
    let xt = x.transpose();
    let gram = xt.matmul(x);
    let gram_inv_xt = solve_mat(&gram, &xt)?;
    let mut m = Mat::identity(t);
    let x_ginv_xt = x.matmul(&gram_inv_xt);
    m = m.sub(&x_ginv_xt);
    Ok(m)
}

/// Assemble the [`DesignArtifacts`] for one observation.
///
/// Square: `d = det(x)`, `a_matrix = adjugate(x)`. Tall: `d = det(x'x)`,
/// `a_matrix = adjugate(x'x) * x'`; both stay defined for singular designs
/// since the adjugate path is total. Only `m_x` can be missing, when `X'X`
/// is not numerically invertible (that projector is only ever applied to
/// movers, which have `D` bounded away from zero).
pub fn design_artifacts(obs: &PanelObservation, mode: PanelMode) -> Result<DesignArtifacts> {
    let t = obs.t_periods();
    let p = obs.p_regressors();
    match mode {
        PanelMode::SquareTP if t != p => {
            return Err(Error::Dimension(format!(
                "square mode requires T = p, got {t}x{p}"
            )))
        }
        PanelMode::TallTP if t <= p => {
            return Err(Error::Dimension(format!(
                "tall mode requires T > p, got {t}x{p}"
            )))
        }
        _ => {}
    }
    let w = build_time_shift_design(&obs.x)?;
    match mode {
        PanelMode::SquareTP => Ok(DesignArtifacts {
            d: determinant(&obs.x)?,
            a_matrix: adjugate(&obs.x)?,
            w,
            m_x: None,
        }),
        PanelMode::TallTP => {
            let xt = obs.x.transpose();
            let gram = xt.matmul(&obs.x);
            let d = determinant(&gram)?;
            let a_matrix = adjugate(&gram)?.matmul(&xt);
            let m_x = residual_projector(&obs.x).ok();
            Ok(DesignArtifacts {
                d,
                a_matrix,
                w,
                m_x,
            })
        }
    }
}

/// Artifacts for every observation, with singular-projector errors tagged by
/// observation index. Pure: identical inputs give bit-identical outputs.
pub fn compute_design_artifacts(dataset: &PanelDataset) -> Result<Vec<DesignArtifacts>> {
    dataset
        .observations()
        .iter()
        .enumerate()
        .map(|(i, obs)| design_artifacts(obs, dataset.mode()).map_err(|e| e.with_observation(i)))
        .collect()
}

/// The `D` sample across observations.
pub fn d_sample(artifacts: &[DesignArtifacts]) -> Vec<f64> {
    artifacts.iter().map(|a| a.d).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn time_shift_design_t2_p2() {
        let x = mat(&[&[1.0, 0.3], &[1.0, 0.7]]);
        let w = build_time_shift_design(&x).unwrap();
        assert_eq!(w, mat(&[&[0.0, 0.0], &[1.0, 0.7]]));
    }

    #[test]
    fn time_shift_design_block_diagonal() {
        // T=3, p=1, X_2 = 2, X_3 = 5.
        let x = mat(&[&[9.0], &[2.0], &[5.0]]);
        let w = build_time_shift_design(&x).unwrap();
        assert_eq!(w, mat(&[&[0.0, 0.0], &[2.0, 0.0], &[0.0, 5.0]]));
    }

    #[test]
    fn time_shift_design_zero_row() {
        let x = mat(&[&[1.0, 1.0], &[0.0, 0.0]]);
        let w = build_time_shift_design(&x).unwrap();
        assert_eq!(w, Mat::zeros(2, 2));
    }

    #[test]
    fn time_shift_design_rejects_single_period() {
        let x = mat(&[&[1.0]]);
        assert!(matches!(
            build_time_shift_design(&x),
            Err(Error::UnsupportedPanelLength(1))
        ));
    }

    #[test]
    fn projector_off_constant_vector() {
        let x = mat(&[&[1.0], &[1.0]]);
        let m = residual_projector(&x).unwrap();
        let expected = mat(&[&[0.5, -0.5], &[-0.5, 0.5]]);
        assert!(m.sub(&expected).max_abs() < 1e-14);
    }

    #[test]
    fn projector_orthogonal_columns() {
        let x = mat(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let m = residual_projector(&x).unwrap();
        let mut expected = Mat::zeros(3, 3);
        expected.set(2, 2, 1.0);
        assert!(m.sub(&expected).max_abs() < 1e-14);
    }

    #[test]
    fn projector_rejects_collinear_columns() {
        let x = mat(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]);
        assert!(matches!(
            residual_projector(&x),
            Err(Error::SingularDesign { .. })
        ));
    }

    #[test]
    fn square_artifacts_d_is_within_variation() {
        let obs =
            PanelObservation::new(vec![0.0, 0.0], mat(&[&[1.0, 0.2], &[1.0, 0.9]])).unwrap();
        let art = design_artifacts(&obs, PanelMode::SquareTP).unwrap();
        assert!((art.d - 0.7).abs() < 1e-15);
    }

    #[test]
    fn square_artifacts_stayer_has_zero_d() {
        let obs =
            PanelObservation::new(vec![1.0, 2.0], mat(&[&[1.0, 0.4], &[1.0, 0.4]])).unwrap();
        let art = design_artifacts(&obs, PanelMode::SquareTP).unwrap();
        assert_eq!(art.d, 0.0);
        // Adjugate identity still holds at the singular point.
        let prod = art.a_matrix.matmul(&obs.x);
        assert!(prod.max_abs() < 1e-15);
    }

    #[test]
    fn tall_artifacts_gram_determinant() {
        let x = mat(&[&[1.0, 0.5], &[1.0, 1.5], &[1.0, 2.0]]);
        let obs = PanelObservation::new(vec![0.0, 0.0, 0.0], x.clone()).unwrap();
        let art = design_artifacts(&obs, PanelMode::TallTP).unwrap();
        // Direct 2x2 Gram evaluation.
        let g00: f64 = (0..3).map(|t| x.get(t, 0) * x.get(t, 0)).sum();
        let g01: f64 = (0..3).map(|t| x.get(t, 0) * x.get(t, 1)).sum();
        let g11: f64 = (0..3).map(|t| x.get(t, 1) * x.get(t, 1)).sum();
        let expected = g00 * g11 - g01 * g01;
        assert!((art.d - expected).abs() < 1e-12);
        assert!(art.d >= 0.0);
        let m_x = art.m_x.expect("projector defined for full-rank design");
        // Idempotent and annihilates X.
        assert!(m_x.matmul(&m_x).sub(&m_x).max_abs() < 1e-10);
        assert!(m_x.matmul(&x).max_abs() < 1e-10);
    }

    #[test]
    fn tall_artifacts_stayer_skips_projector() {
        // Duplicate rows: X'X singular, but d and a_matrix still defined.
        let x = mat(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let obs = PanelObservation::new(vec![0.0, 0.0, 0.0], x).unwrap();
        let art = design_artifacts(&obs, PanelMode::TallTP).unwrap();
        assert_eq!(art.d, 0.0);
        assert!(art.m_x.is_none());
    }

    #[test]
    fn dataset_rejects_mixed_shapes() {
        let a = PanelObservation::new(vec![0.0, 0.0], mat(&[&[1.0, 0.0], &[1.0, 1.0]])).unwrap();
        let b = PanelObservation::new(vec![0.0, 0.0, 0.0], mat(&[&[1.0], &[2.0], &[3.0]])).unwrap();
        assert!(PanelDataset::new(vec![a, b]).is_err());
    }

    #[test]
    fn dataset_mode_inference() {
        let a = PanelObservation::new(vec![0.0, 0.0], mat(&[&[1.0, 0.0], &[1.0, 1.0]])).unwrap();
        let b = PanelObservation::new(vec![0.0, 0.0], mat(&[&[1.0, 0.2], &[1.0, 0.8]])).unwrap();
        let ds = PanelDataset::new(vec![a, b]).unwrap();
        assert_eq!(ds.mode(), PanelMode::SquareTP);
    }
}
