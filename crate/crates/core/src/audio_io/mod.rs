//! Mono audio, amplitude envelopes and F0 contours.

mod envelope;
mod pitch;
mod wav;

pub use envelope::{amplitude_envelope, EnvelopeParams};
pub use pitch::{extract_f0, F0Params};
pub use wav::{read_wav, write_wav, SampleFormat};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported codec: {0}")]
    UnsupportedCodec(String),
    #[error("malformed WAV: {0}")]
    Malformed(String),
    #[error("sample rate must be positive, got {0}")]
    BadRate(f64),
    #[error("sample {index} is not a finite value in [-1, 1]")]
    BadSample { index: usize },
    #[error("audio track is empty")]
    Empty,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl AudioTrack {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self, AudioError> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(AudioError::BadRate(sample_rate));
        }
        if let Some(index) = samples.iter().position(|s| !(s.is_finite() && s.abs() <= 1.0)) {
            return Err(AudioError::BadSample { index });
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub(crate) fn from_parts_unchecked(samples: Vec<f64>, sample_rate: f64) -> Self {
        Self { samples, sample_rate }
    }
}

/// Frame-wise fundamental frequency with explicit unvoiced frames (`None`).
///
/// Frame `i` is centred at `start_time + (i + 0.5) * hop`.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    pub values: Vec<Option<f64>>,
    pub hop: f64,
    pub start_time: f64,
    pub voicing_threshold: f64,
    pub f0_min: f64,
    pub f0_max: f64,
}

impl F0Contour {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    pub fn voiced_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn time_of(&self, i: usize) -> f64 {
        self.start_time + (i as f64 + 0.5) * self.hop
    }

    /// Frames `[from, to)` as a new contour.
    pub fn window(&self, from: usize, to: usize) -> Self {
        Self {
            values: self.values[from..to].to_vec(),
            start_time: self.start_time + from as f64 * self.hop,
            ..self.clone()
        }
    }

    /// `time_s,f0_hz` rows; unvoiced frames leave the F0 field empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,f0_hz\n");
        for (i, v) in self.values.iter().enumerate() {
            match v {
                Some(f) => out.push_str(&format!("{},{}\n", self.time_of(i), f)),
                None => out.push_str(&format!("{},\n", self.time_of(i))),
            }
        }
        out
    }
}
