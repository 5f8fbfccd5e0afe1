//! Shared desk fixtures and independent oracle helpers.
//!
//! Everything here deliberately avoids the library's linear algebra: solves
//! go through a plain Gauss-Jordan elimination on `Vec<Vec<f64>>`, means are
//! straight loops, and quantities are assembled term by term from their
//! definitions. Oracle equality tests then compare two genuinely different
//! code paths.

#![allow(dead_code)]

use crcpanel_core::matrix::Mat;
use crcpanel_core::panel::{PanelDataset, PanelObservation};
use crcpanel_core::sim::rng::{derive_stream, CounterRng};

/// Desk dataset DS1: T = p = 2, N = 12, fixed numbers.
///
/// At bandwidth `DS1_H` the groups are 2 stayers, 4 slow movers, 6 movers.
pub const DS1_H: f64 = 0.35;

pub const DS1_ROWS: [(f64, f64, f64, f64); 12] = [
    // (x1, x2, y1, y2); D = x2 - x1
    (0.20, 0.20, 0.50, 1.10),    // stayer
    (1.10, 1.10, -0.30, 0.80),   // stayer
    (0.50, 0.62, 0.90, 1.40),    // slow, D = 0.12
    (-0.40, -0.55, -1.20, 0.40), // slow, D = -0.15
    (0.95, 1.25, 2.10, 2.60),    // slow, D = 0.30
    (0.00, -0.33, 0.70, -0.90),  // slow, D = -0.33
    (0.30, 0.90, 1.50, 2.20),    // mover, D = 0.60
    (-0.80, -1.50, -0.60, -2.00),// mover, D = -0.70
    (1.40, 0.50, 1.00, 0.30),    // mover, D = -0.90
    (0.10, 1.20, 0.40, 2.90),    // mover, D = 1.10
    (-1.00, 0.45, -1.70, 1.30),  // mover, D = 1.45
    (0.75, -0.85, 1.90, -1.10),  // mover, D = -1.60
];

pub fn ds1() -> PanelDataset {
    let observations = DS1_ROWS
        .iter()
        .map(|&(x1, x2, y1, y2)| {
            let x = Mat::from_rows(&[vec![1.0, x1], vec![1.0, x2]]).unwrap();
            PanelObservation::new(vec![y1, y2], x).unwrap()
        })
        .collect();
    PanelDataset::new(observations).unwrap()
}

/// Desk dataset DS2: T = 3, p = 2, N = 8, fixed numbers.
///
/// At bandwidth `DS2_H` (on D = det(X'X)) there is 1 stayer, 2 slow movers,
/// and 5 movers.
pub const DS2_H: f64 = 0.01;

pub fn ds2_designs() -> Vec<[[f64; 2]; 3]> {
    vec![
        [[1.0, 0.20], [1.0, 0.50], [1.0, 0.90]],
        [[1.0, -0.30], [1.0, 0.10], [1.0, 0.60]],
        [[1.0, 0.80], [1.0, 0.81], [1.0, 0.82]], // slow mover
        [[1.0, 0.30], [1.0, 0.33], [1.0, 0.27]], // slow mover
        [[1.0, 0.40], [1.0, 0.40], [1.0, 0.40]], // stayer
        [[1.0, 1.20], [1.0, -0.50], [1.0, 0.30]],
        [[1.0, 0.00], [1.0, 1.00], [1.0, -1.00]],
        [[1.0, -0.90], [1.0, -0.20], [1.0, 0.70]],
    ]
}

pub const DS2_Y: [[f64; 3]; 8] = [
    [0.80, 1.90, 2.40],
    [-0.50, 0.90, 1.70],
    [1.30, 1.95, 1.75],
    [0.40, 1.10, 0.95],
    [0.60, 1.20, 1.05],
    [2.20, 0.10, 1.15],
    [0.30, 2.40, -0.80],
    [-1.10, 0.35, 1.60],
];

pub fn ds2() -> PanelDataset {
    let observations = ds2_designs()
        .iter()
        .zip(&DS2_Y)
        .map(|(rows, y)| {
            let x = Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
            PanelObservation::new(y.to_vec(), x).unwrap()
        })
        .collect();
    PanelDataset::new(observations).unwrap()
}

/// Naive Gauss-Jordan solve; deliberately not the library path.
pub fn naive_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| {
            let mut r = row.clone();
            r.push(rhs);
            r
        })
        .collect();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| {
                aug[i][col]
                    .abs()
                    .partial_cmp(&aug[j][col].abs())
                    .unwrap()
            })
            .unwrap();
        aug.swap(col, pivot_row);
        let pivot = aug[col][col];
        assert!(pivot.abs() > 0.0, "singular system in naive_solve");
        for j in col..=n {
            aug[col][j] /= pivot;
        }
        for i in 0..n {
            if i != col {
                let factor = aug[i][col];
                for j in col..=n {
                    aug[i][j] -= factor * aug[col][j];
                }
            }
        }
    }
    aug.iter().map(|row| row[n]).collect()
}

/// 2x2 matrix helpers for the square-panel oracles.
pub fn adj2(x1: f64, x2: f64) -> [[f64; 2]; 2] {
    // X = [[1, x1], [1, x2]] -> X* = [[x2, -x1], [-1, 1]].
    [[x2, -x1], [-1.0, 1.0]]
}

/// `X*W` for the T = p = 2 design with row 2 = (1, x2).
pub fn astar_w(x1: f64, x2: f64) -> [[f64; 2]; 2] {
    // W = [[0, 0], [1, x2]]; X*W = [[-x1, -x1*x2], [1, x2]].
    [[-x1, -x1 * x2], [1.0, x2]]
}

/// `X*(y - W delta)` for the T = p = 2 design.
pub fn astar_resid(x1: f64, x2: f64, y1: f64, y2: f64, delta: &[f64]) -> [f64; 2] {
    let r1 = y1;
    let r2 = y2 - (delta[0] + x2 * delta[1]);
    let a = adj2(x1, x2);
    [a[0][0] * r1 + a[0][1] * r2, a[1][0] * r1 + a[1][1] * r2]
}

/// Sort-based standard deviation and linear-interpolation IQR oracle.
pub fn sd_iqr_oracle(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0))
        .sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| {
        let pos = q * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    (sd, quantile(0.75) - quantile(0.25))
}

/// Randomized square desk dataset with a guaranteed group mix: at least one
/// stayer, `poly_order + 2` well-separated slow movers, and several movers.
/// Returns the dataset and the bandwidth that produces that mix.
pub fn random_square_dataset(seed: u64, poly_order: usize) -> (PanelDataset, f64) {
    let mut rng = CounterRng::new(derive_stream(seed, 0xD5));
    let h = 0.25 + 0.5 * rng.next_unit();
    let n = 24 + (rng.next_u64() % 24) as usize;
    let n_stayers = 1 + (rng.next_u64() % 3) as usize;
    let n_slow = poly_order + 2 + (rng.next_u64() % 4) as usize;
    let mut observations = Vec::with_capacity(n);
    for i in 0..n {
        let x1 = 2.0 * rng.next_unit() - 1.0;
        let d = if i < n_stayers {
            0.0
        } else if i < n_stayers + n_slow {
            // Spread slow movers across (0.15 h, h], alternating sign.
            let rank = (i - n_stayers) as f64 + 1.0;
            let magnitude = h * (0.15 + 0.85 * rank / (n_slow as f64 + 1.0));
            if i % 2 == 0 {
                magnitude
            } else {
                -magnitude
            }
        } else {
            let sign = if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
            sign * (h * 1.05 + 2.0 * rng.next_unit())
        };
        let x2 = x1 + d;
        let y1 = 2.0 * rng.next_unit() - 1.0 + 0.4 * x1;
        let y2 = 2.0 * rng.next_unit() - 1.0 + 0.4 * x2 + 0.3;
        let x = Mat::from_rows(&[vec![1.0, x1], vec![1.0, x2]]).unwrap();
        observations.push(PanelObservation::new(vec![y1, y2], x).unwrap());
    }
    (PanelDataset::new(observations).unwrap(), h)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Per-entry local polynomial oracle for delta: intercepts of the order-L
/// regressions of every entry of (X*W)'X*[Y, W] on D over |D| <= h, then the
/// 2x2 identification solve.
pub fn delta_oracle(rows: &[(f64, f64, f64, f64)], h: f64, poly_order: usize) -> Vec<f64> {
    let n = rows.len();
    let l1 = poly_order + 1;

    // Intercept of the indicator-weighted polynomial regression of z on D.
    let intercept = |z: &dyn Fn(usize) -> f64| -> f64 {
        let mut gram = vec![vec![0.0; l1]; l1];
        let mut moment = vec![0.0; l1];
        for (i, &(x1, x2, _, _)) in rows.iter().enumerate() {
            let d = x2 - x1;
            if d.abs() > h {
                continue;
            }
            let mut basis = vec![1.0];
            for k in 1..l1 {
                basis.push(basis[k - 1] * d);
            }
            for a in 0..l1 {
                for b in 0..l1 {
                    gram[a][b] += basis[a] * basis[b] / n as f64;
                }
                moment[a] += basis[a] * z(i) / n as f64;
            }
        }
        naive_solve(&gram, &moment)[0]
    };

    // Entries of (X*W)'X*Y and (X*W)'X*W per observation.
    let awt_ay = |i: usize, a: usize| -> f64 {
        let (x1, x2, y1, y2) = rows[i];
        let aw = astar_w(x1, x2);
        let ay = astar_resid(x1, x2, y1, y2, &[0.0, 0.0]);
        aw[0][a] * ay[0] + aw[1][a] * ay[1]
    };
    let awt_aw = |i: usize, a: usize, b: usize| -> f64 {
        let (x1, x2, _, _) = rows[i];
        let aw = astar_w(x1, x2);
        aw[0][a] * aw[0][b] + aw[1][a] * aw[1][b]
    };

    let m_y = vec![
        intercept(&|i| awt_ay(i, 0)),
        intercept(&|i| awt_ay(i, 1)),
    ];
    let m_w = vec![
        vec![
            intercept(&|i| awt_aw(i, 0, 0)),
            intercept(&|i| awt_aw(i, 0, 1)),
        ],
        vec![
            intercept(&|i| awt_aw(i, 1, 0)),
            intercept(&|i| awt_aw(i, 1, 1)),
        ],
    ];
    naive_solve(&m_w, &m_y)
}
