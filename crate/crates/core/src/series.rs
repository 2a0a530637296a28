//! Uniformly sampled multichannel time series.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SeriesError {
    #[error("sample rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("series must contain at least one sample")]
    Empty,
    #[error("series must have at least one dimension")]
    NoDims,
    #[error("data length {len} is not a multiple of the dimension count {dims}")]
    Ragged { len: usize, dims: usize },
    #[error("non-finite value at sample {index}")]
    NonFinite { index: usize },
}

/// A `[n × k]` block of samples taken at a fixed rate.
///
/// Storage is row-major: sample `i`, dimension `d` lives at `data[i * dims + d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSeries {
    data: Vec<f64>,
    dims: usize,
    rate: f64,
    label: String,
    start_time: f64,
}

impl ChannelSeries {
    pub fn new(
        data: Vec<f64>,
        dims: usize,
        rate: f64,
        label: impl Into<String>,
        start_time: f64,
    ) -> Result<Self, SeriesError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(SeriesError::BadRate(rate));
        }
        if dims == 0 {
            return Err(SeriesError::NoDims);
        }
        if data.is_empty() {
            return Err(SeriesError::Empty);
        }
        if data.len() % dims != 0 {
            return Err(SeriesError::Ragged {
                len: data.len(),
                dims,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite { index: pos / dims });
        }
        Ok(Self {
            data,
            dims,
            rate,
            label: label.into(),
            start_time,
        })
    }

    /// Convenience constructor for a 1-D series starting at t = 0.
    pub fn scalar(values: Vec<f64>, rate: f64, label: impl Into<String>) -> Result<Self, SeriesError> {
        Self::new(values, 1, rate, label, 0.0)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.rate
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dims)
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        self.rows().map(|r| r[d]).collect()
    }

    /// Time stamp of sample `i`.
    pub fn time_of(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.rate
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Copy of samples `[from, to)` with the start time moved accordingly.
    pub fn window(&self, from: usize, to: usize) -> Self {
        Self {
            data: self.data[from * self.dims..to * self.dims].to_vec(),
            dims: self.dims,
            rate: self.rate,
            label: self.label.clone(),
            start_time: self.time_of(from),
        }
    }

    /// Block-mean downsampling by an integer factor. A trailing partial block is dropped
    /// unless it is the only block.
    pub fn block_mean(&self, factor: usize) -> Self {
        if factor <= 1 {
            return self.clone();
        }
        let n = self.len();
        let blocks = (n / factor).max(1);
        let mut out = Vec::with_capacity(blocks * self.dims);
        for b in 0..blocks {
            let lo = b * factor;
            let hi = ((b + 1) * factor).min(n);
            for d in 0..self.dims {
                let sum: f64 = (lo..hi).map(|i| self.data[i * self.dims + d]).sum();
                out.push(sum / (hi - lo) as f64);
            }
        }
        Self {
            data: out,
            dims: self.dims,
            rate: self.rate / factor as f64,
            label: self.label.clone(),
            start_time: self.start_time,
        }
    }

    /// Downsample to approximately `target_rate` using block means. Returns a clone when
    /// the series is already at or below the target.
    pub fn resample_to(&self, target_rate: f64) -> Self {
        let factor = (self.rate / target_rate).round() as usize;
        self.block_mean(factor)
    }
}

/// Mean and population standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-normalize a slice in place. Zero-variance input is only centered.
pub(crate) fn znormalize(values: &mut [f64]) {
    let (mean, std) = mean_std(values);
    let scale = if std > 0.0 { 1.0 / std } else { 1.0 };
    for v in values.iter_mut() {
        *v = (*v - mean) * scale;
    }
}

#[cfg(test)]
pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (ma, sa) = mean_std(&a[..n]);
    let (mb, sb) = mean_std(&b[..n]);
    if sa == 0.0 || sb == 0.0 {
        return 0.0;
    }
    let cov = a[..n]
        .iter()
        .zip(&b[..n])
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n as f64;
    cov / (sa * sb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_construction() {
        assert_eq!(
            ChannelSeries::scalar(vec![], 10.0, "x").unwrap_err(),
            SeriesError::Empty
        );
        assert_eq!(
            ChannelSeries::scalar(vec![1.0], 0.0, "x").unwrap_err(),
            SeriesError::BadRate(0.0)
        );
        assert!(matches!(
            ChannelSeries::new(vec![1.0, 2.0, 3.0], 2, 1.0, "x", 0.0),
            Err(SeriesError::Ragged { .. })
        ));
        assert_eq!(
            ChannelSeries::scalar(vec![1.0, f64::NAN], 1.0, "x").unwrap_err(),
            SeriesError::NonFinite { index: 1 }
        );
    }

    #[test]
    fn window_and_block_mean() {
        let s = ChannelSeries::new((0..8).map(f64::from).collect(), 2, 10.0, "p", 1.0).unwrap();
        assert_eq!(s.len(), 4);
        let w = s.window(1, 3);
        assert_eq!(w.data(), &[2.0, 3.0, 4.0, 5.0]);
        assert!((w.start_time() - 1.1).abs() < 1e-12);
        let b = s.block_mean(2);
        assert_eq!(b.data(), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(b.rate(), 5.0);
    }
}
