use super::{AudioError, AudioTrack};
use std::io::Cursor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

impl From<hound::Error> for AudioError {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => AudioError::Io(io),
            hound::Error::Unsupported => AudioError::UnsupportedCodec("unsupported WAV format".into()),
            other => AudioError::Malformed(other.to_string()),
        }
    }
}

/// Decode a RIFF WAV (16-bit PCM or 32-bit float). Multichannel input is
/// downmixed by averaging each frame.
pub fn read_wav(bytes: &[u8]) -> Result<AudioTrack, AudioError> {
    let reader = hound::WavReader::new(Cursor::new(bytes))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(AudioError::Malformed("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(AudioError::UnsupportedCodec(format!("{fmt:?} with {bits} bits per sample")))
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(AudioError::Malformed("truncated final frame".into()));
    }
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioTrack::new(samples, f64::from(spec.sample_rate))
}

pub fn write_wav(track: &AudioTrack, format: SampleFormat) -> Result<Vec<u8>, AudioError> {
    let rate = track.sample_rate().round();
    if rate < 1.0 || rate > f64::from(u32::MAX) {
        return Err(AudioError::BadRate(track.sample_rate()));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: match format {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Pcm16 => hound::SampleFormat::Int,
            SampleFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec)?;
        for &s in track.samples() {
            match format {
                SampleFormat::Pcm16 => {
                    let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
                SampleFormat::Float32 => writer.write_sample(s as f32)?,
            }
        }
        writer.finalize()?;
    }
    Ok(cursor.into_inner())
}
