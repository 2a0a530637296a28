//! Test-side oracles shared by the integration suites.
#![allow(dead_code)]

use coordkit_core::rqa::RecurrenceMatrix;

/// `(RR, %DET, MeanLR)` found by locating the start of every diagonal run and
/// walking it, independently of the library's histogram.
pub fn diagonal_oracle(m: &RecurrenceMatrix, l_min: usize, exclude_loi: bool) -> (f64, f64, f64) {
    let (r, c) = (m.rows(), m.cols());
    let on = |i: usize, j: usize| m.get(i, j) && !(exclude_loi && i == j);
    let (mut points, mut line_points, mut lines) = (0usize, 0usize, 0usize);
    for i in 0..r {
        for j in 0..c {
            if !on(i, j) {
                continue;
            }
            points += 1;
            if i == 0 || j == 0 || !on(i - 1, j - 1) {
                let mut len = 0;
                while i + len < r && j + len < c && on(i + len, j + len) {
                    len += 1;
                }
                if len >= l_min {
                    line_points += len;
                    lines += 1;
                }
            }
        }
    }
    let cells = r * c - if exclude_loi { r.min(c) } else { 0 };
    let rr = if cells > 0 { points as f64 / cells as f64 } else { 0.0 };
    let det = if points > 0 { line_points as f64 / points as f64 } else { 0.0 };
    let mlr = if lines > 0 { line_points as f64 / lines as f64 } else { 0.0 };
    (rr, det, mlr)
}

pub fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let (ma, mb) = (a.iter().sum::<f64>() / n as f64, b.iter().sum::<f64>() / n as f64);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
