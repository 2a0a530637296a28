//! Time-delay embedding and (cross-)recurrence quantification.
//!
//! The recurrence radius is calibrated per analysis so every slice is measured at
//! the same recurrence rate; determinism and mean diagonal line length are then
//! read off the maximal diagonal runs of the thresholded matrix.

use crate::series::{znormalize, ChannelSeries};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RqaError {
    #[error("series of length {len} is too short for embedding (dim {dim}, delay {delay})")]
    TooShort { len: usize, dim: usize, delay: usize },
    #[error("embedding dimension and delay must be at least 1")]
    BadParams,
    #[error("point clouds have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("series differ in rate or length")]
    SeriesMismatch,
    #[error("target recurrence rate must lie in (0, 1], got {0}")]
    BadTarget(f64),
    #[error("recurrence rate {achieved:.4} at radius 0 already exceeds target {target:.4}")]
    Unreachable { target: f64, achieved: f64 },
    #[error("recurrence matrix is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub dim: usize,
    pub delay: usize,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self { dim: 3, delay: 10 }
    }
}

/// Row-major `[n × dim]` set of embedded state vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    data: Vec<f64>,
    dim: usize,
}

impl PointCloud {
    pub fn new(data: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "ragged point cloud");
        Self { data, dim }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Row `i` is `(x_i, x_{i+τ}, …, x_{i+(m−1)τ})`.
pub fn embed(series: &[f64], params: EmbeddingParams) -> Result<PointCloud, RqaError> {
    let EmbeddingParams { dim, delay } = params;
    if dim == 0 || delay == 0 {
        return Err(RqaError::BadParams);
    }
    let span = (dim - 1) * delay;
    if series.len() < span + 2 {
        return Err(RqaError::TooShort {
            len: series.len(),
            dim,
            delay,
        });
    }
    let n = series.len() - span;
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        data.extend((0..dim).map(|k| series[i + k * delay]));
    }
    Ok(PointCloud::new(data, dim))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Binary `[rows × cols]` recurrence matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecurrenceMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl RecurrenceMatrix {
    pub fn from_cells(rows: usize, cols: usize, cells: Vec<bool>) -> Self {
        assert_eq!(rows * cols, cells.len());
        Self { rows, cols, cells }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut cells = vec![false; self.cells.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                cells[j * self.rows + i] = self.get(i, j);
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            cells,
        }
    }
}

/// All pairwise Euclidean distances between two clouds, row-major. When
/// `exclude_loi` is set the main diagonal is stored as +∞ and never counts as
/// recurrent.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    d: Vec<f64>,
    valid: usize,
    max: f64,
}

impl DistanceMatrix {
    pub fn new(a: &PointCloud, b: &PointCloud, exclude_loi: bool) -> Result<Self, RqaError> {
        if a.dim() != b.dim() {
            return Err(RqaError::DimensionMismatch(a.dim(), b.dim()));
        }
        let (rows, cols) = (a.len(), b.len());
        if rows == 0 || cols == 0 {
            return Err(RqaError::Empty);
        }
        let mut d = Vec::with_capacity(rows * cols);
        let mut max: f64 = 0.0;
        for i in 0..rows {
            let p = a.point(i);
            for j in 0..cols {
                if exclude_loi && i == j {
                    d.push(f64::INFINITY);
                } else {
                    let v = sq_dist(p, b.point(j)).sqrt();
                    max = max.max(v);
                    d.push(v);
                }
            }
        }
        let loi = if exclude_loi { rows.min(cols) } else { 0 };
        let valid = rows * cols - loi;
        if valid == 0 {
            return Err(RqaError::Empty);
        }
        Ok(Self { rows, cols, d, valid, max })
    }

    pub fn max_distance(&self) -> f64 {
        self.max
    }

    pub fn recurrence_rate(&self, eps: f64) -> f64 {
        self.d.iter().filter(|&&v| v <= eps).count() as f64 / self.valid as f64
    }

    pub fn threshold(&self, eps: f64) -> RecurrenceMatrix {
        RecurrenceMatrix::from_cells(self.rows, self.cols, self.d.iter().map(|&v| v <= eps).collect())
    }

    /// Bisection on the radius over `[0, max distance]`. Stops when the recurrence
    /// rate is within `tol` of the target, or when the bracket holds a single
    /// distinct distance, in which case that distance (the smallest radius with
    /// rate ≥ target) is returned.
    pub fn calibrate(&self, target_rr: f64, tol: f64) -> Result<f64, RqaError> {
        if !(target_rr > 0.0 && target_rr <= 1.0) {
            return Err(RqaError::BadTarget(target_rr));
        }
        let at_zero = self.recurrence_rate(0.0);
        if at_zero >= target_rr {
            return if at_zero - target_rr <= tol {
                Ok(0.0)
            } else {
                Err(RqaError::Unreachable {
                    target: target_rr,
                    achieved: at_zero,
                })
            };
        }
        if target_rr >= 1.0 {
            return Ok(self.max);
        }
        let (mut lo, mut hi) = (0.0, self.max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let mut count = 0usize;
            let mut in_min = f64::INFINITY;
            let mut in_max = f64::NEG_INFINITY;
            for &v in &self.d {
                if v <= mid {
                    count += 1;
                }
                if v > lo && v <= hi {
                    in_min = in_min.min(v);
                    in_max = in_max.max(v);
                }
            }
            if in_min == in_max {
                return Ok(in_max);
            }
            let rr = count as f64 / self.valid as f64;
            if (rr - target_rr).abs() <= tol {
                return Ok(mid);
            }
            if rr < target_rr {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }
}

/// `M[i,j] = 1` iff `‖a_i − b_j‖₂ ≤ ε`.
pub fn cross_recurrence_matrix(a: &PointCloud, b: &PointCloud, eps: f64) -> Result<RecurrenceMatrix, RqaError> {
    Ok(DistanceMatrix::new(a, b, false)?.threshold(eps))
}

/// Radius at which the cross-recurrence rate of `a` and `b` reaches `target_rr`.
pub fn calibrate_radius(a: &PointCloud, b: &PointCloud, target_rr: f64, tol: f64) -> Result<f64, RqaError> {
    DistanceMatrix::new(a, b, false)?.calibrate(target_rr, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceResult {
    pub rr: f64,
    pub det: f64,
    pub mean_lr: f64,
    /// Radius that produced the matrix, when it came from a calibration.
    pub radius: Option<f64>,
    pub l_min: usize,
}

/// Recurrence rate, determinism and mean diagonal line length. Lines are maximal
/// runs along every diagonal; with `exclude_loi` the main diagonal is ignored
/// entirely (auto-recurrence).
pub fn rqa_measures(m: &RecurrenceMatrix, l_min: usize, exclude_loi: bool) -> Result<RecurrenceResult, RqaError> {
    let (rows, cols) = (m.rows, m.cols);
    if rows == 0 || cols == 0 {
        return Err(RqaError::Empty);
    }
    let l_min = l_min.max(1);
    let mut points = 0usize;
    let mut line_points = 0usize;
    let mut lines = 0usize;
    for k in -(rows as i64 - 1)..=(cols as i64 - 1) {
        if exclude_loi && k == 0 {
            continue;
        }
        let (mut i, mut j) = if k < 0 { ((-k) as usize, 0) } else { (0, k as usize) };
        let mut run = 0usize;
        let close = |run: usize, line_points: &mut usize, lines: &mut usize| {
            if run >= l_min {
                *line_points += run;
                *lines += 1;
            }
        };
        while i < rows && j < cols {
            if m.cells[i * cols + j] {
                points += 1;
                run += 1;
            } else {
                close(run, &mut line_points, &mut lines);
                run = 0;
            }
            i += 1;
            j += 1;
        }
        close(run, &mut line_points, &mut lines);
    }
    let loi = if exclude_loi { rows.min(cols) } else { 0 };
    let cells = (rows * cols - loi).max(1);
    Ok(RecurrenceResult {
        rr: points as f64 / cells as f64,
        det: if points > 0 { line_points as f64 / points as f64 } else { 0.0 },
        mean_lr: if lines > 0 { line_points as f64 / lines as f64 } else { 0.0 },
        radius: None,
        l_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RqaConfig {
    pub dim: usize,
    pub delay: usize,
    pub target_rr: f64,
    pub tol: f64,
    pub l_min: usize,
}

impl Default for RqaConfig {
    fn default() -> Self {
        Self {
            dim: 3,
            delay: 10,
            target_rr: 0.02,
            tol: 0.002,
            l_min: 2,
        }
    }
}

impl RqaConfig {
    pub fn embedding(&self) -> EmbeddingParams {
        EmbeddingParams {
            dim: self.dim,
            delay: self.delay,
        }
    }
}

fn prepared(series: &ChannelSeries, cfg: &RqaConfig) -> Result<PointCloud, RqaError> {
    let mut v = series.column(0);
    znormalize(&mut v);
    embed(&v, cfg.embedding())
}

/// Cross-recurrence between two equally long 1-D series: z-score, embed, calibrate
/// the radius to `cfg.target_rr`, measure.
pub fn crqa_pipeline(x: &ChannelSeries, y: &ChannelSeries, cfg: &RqaConfig) -> Result<RecurrenceResult, RqaError> {
    if x.len() != y.len() || (x.rate() - y.rate()).abs() > 1e-9 * x.rate() {
        return Err(RqaError::SeriesMismatch);
    }
    let a = prepared(x, cfg)?;
    let b = prepared(y, cfg)?;
    measure(&DistanceMatrix::new(&a, &b, false)?, cfg, false)
}

/// Auto-recurrence of a single series; the line of identity is excluded.
pub fn rqa_pipeline(x: &ChannelSeries, cfg: &RqaConfig) -> Result<RecurrenceResult, RqaError> {
    let a = prepared(x, cfg)?;
    measure(&DistanceMatrix::new(&a, &a, true)?, cfg, true)
}

fn measure(d: &DistanceMatrix, cfg: &RqaConfig, exclude_loi: bool) -> Result<RecurrenceResult, RqaError> {
    let eps = d.calibrate(cfg.target_rr, cfg.tol)?;
    let mut r = rqa_measures(&d.threshold(eps), cfg.l_min, exclude_loi)?;
    r.radius = Some(eps);
    Ok(r)
}
