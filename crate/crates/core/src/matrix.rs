//! Small dense matrix kernels.
//!
//! Everything here targets short panels: matrices are at most a few tens of
//! entries per side, stored dense and row-major. The two kernels the
//! estimators actually lean on are
//!
//! - [`determinant`], the within-variation scalar `D`, and
//! - [`adjugate`], computed cofactor-wise so that `adj(m) * m = det(m) * I`
//!   holds even when `m` is exactly singular (stayers have `D = 0`, and the
//!   adjugate must stay well-defined there).
//!
//! Linear solves go through LU with partial pivoting and an explicit
//! infinity-norm condition estimate; systems beyond [`CONDITION_LIMIT`] are
//! rejected instead of returning garbage.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Condition-number threshold for any explicit solve or inverse.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Build from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows in matrix literal".into()));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Ok(Mat { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Column vector from a slice.
    pub fn column(v: &[f64]) -> Mat {
        Mat {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self' * v` without forming the transpose.
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tr_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let w = v[i];
            if w == 0.0 {
                continue;
            }
            for j in 0..self.cols {
                out[j] += self.get(i, j) * w;
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Add `c * other` in place.
    pub fn axpy(&mut self, c: f64, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    /// Maximum absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Infinity norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// Serialize as nested rows so reports stay human-readable.
impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Mat::from_rows(&rows).map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// LU factorization with partial pivoting.
struct Lu {
    lu: Mat,
    perm: Vec<usize>,
    sign: f64,
    singular: bool,
}

fn lu_factor(a: &Mat) -> Lu {
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    let mut singular = false;

    for k in 0..n {
        let mut pivot_row = k;
        let mut pivot_val = lu.get(k, k).abs();
        for i in (k + 1)..n {
            let v = lu.get(i, k).abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = i;
            }
        }
        if pivot_val == 0.0 {
            singular = true;
            continue;
        }
        if pivot_row != k {
            for j in 0..n {
                let tmp = lu.get(k, j);
                lu.set(k, j, lu.get(pivot_row, j));
                lu.set(pivot_row, j, tmp);
            }
            perm.swap(k, pivot_row);
            sign = -sign;
        }
        let pivot = lu.get(k, k);
        for i in (k + 1)..n {
            let factor = lu.get(i, k) / pivot;
            lu.set(i, k, factor);
            for j in (k + 1)..n {
                lu.set(i, j, lu.get(i, j) - factor * lu.get(k, j));
            }
        }
    }

    Lu {
        lu,
        perm,
        sign,
        singular,
    }
}

impl Lu {
    fn det(&self) -> f64 {
        if self.singular {
            return 0.0;
        }
        let n = self.lu.rows();
        let mut d = self.sign;
        for i in 0..n {
            d *= self.lu.get(i, i);
        }
        d
    }

    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        let mut x: Vec<f64> = self.perm.iter().map(|&pi| b[pi]).collect();
        for i in 1..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu.get(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu.get(i, j) * x[j];
            }
            x[i] = s / self.lu.get(i, i);
        }
        x
    }
}

/// Determinant; exact closed form for 1x1 and 2x2, LU with partial pivoting
/// otherwise. The empty 0x0 matrix has determinant 1 so that cofactor
/// recursion bottoms out correctly.
pub fn determinant(m: &Mat) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "determinant needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(match m.rows() {
        0 => 1.0,
        1 => m.get(0, 0),
        2 => m.get(0, 0) * m.get(1, 1) - m.get(0, 1) * m.get(1, 0),
        _ => lu_factor(m).det(),
    })
}

/// Minor of `m` with row `i` and column `j` removed.
fn minor(m: &Mat, i: usize, j: usize) -> Mat {
    let n = m.rows();
    Mat::from_fn(n - 1, n - 1, |r, c| {
        let rr = if r < i { r } else { r + 1 };
        let cc = if c < j { c } else { c + 1 };
        m.get(rr, cc)
    })
}

/// Adjugate (transposed cofactor matrix), computed cofactor-wise so it stays
/// defined at `det(m) = 0`. Satisfies `adjugate(m) * m = det(m) * I`.
pub fn adjugate(m: &Mat) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "adjugate needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let n = m.rows();
    let mut adj = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let cof = determinant(&minor(m, i, j))?;
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            // Transposed: cofactor of (i, j) lands at (j, i).
            adj.set(j, i, sign * cof);
        }
    }
    Ok(adj)
}

/// Solve `a * x = b` for one or more right-hand sides with a condition check.
///
/// The infinity-norm condition number is estimated from the explicit inverse
/// (cheap at these sizes); systems with `cond > CONDITION_LIMIT` or an exact
/// zero pivot are rejected as [`Error::SingularDesign`].
pub fn solve_mat(a: &Mat, b: &Mat) -> Result<Mat> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "solve needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() != b.rows() {
        return Err(Error::Dimension(
            "solve right-hand side has mismatched rows".into(),
        ));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(b.clone());
    }
    let lu = lu_factor(a);
    if lu.singular {
        return Err(Error::SingularDesign { observation: None });
    }

    // cond_inf(a) = ||a||_inf * ||a^{-1}||_inf via inverse columns.
    let mut inv_norm = 0.0f64;
    let mut unit = vec![0.0; n];
    let mut inv_rows_abs = vec![0.0f64; n];
    for j in 0..n {
        unit[j] = 1.0;
        let col = lu.solve_vec(&unit);
        unit[j] = 0.0;
        for (i, v) in col.iter().enumerate() {
            inv_rows_abs[i] += v.abs();
        }
    }
    for v in inv_rows_abs {
        inv_norm = inv_norm.max(v);
    }
    let cond = a.norm_inf() * inv_norm;
    if !cond.is_finite() || cond > CONDITION_LIMIT {
        return Err(Error::SingularDesign { observation: None });
    }

    let mut out = Mat::zeros(n, b.cols());
    let mut rhs = vec![0.0; n];
    for j in 0..b.cols() {
        for i in 0..n {
            rhs[i] = b.get(i, j);
        }
        let x = lu.solve_vec(&rhs);
        for i in 0..n {
            out.set(i, j, x[i]);
        }
    }
    Ok(out)
}

/// Solve `a * x = b` for a single right-hand side vector.
pub fn solve(a: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let x = solve_mat(a, &Mat::column(b))?;
    Ok(x.data().to_vec())
}

/// Inverse via the condition-checked solve.
pub fn inverse(a: &Mat) -> Result<Mat> {
    solve_mat(a, &Mat::identity(a.rows()))
}
