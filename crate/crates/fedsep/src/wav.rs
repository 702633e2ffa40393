//! 16-bit PCM mono WAV files.

use std::path::Path;

use fedsep_core::AudioBuffer;

use crate::error::{Error, Result};

pub fn write_pcm16(path: &Path, samples: &[i16], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::format(path, other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        w.write_sample(s).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)
}

/// Loads a mono 16-bit clip as samples in `[-1, 1)`.
pub fn load_clip(path: &Path, clip: &str, sample_rate: u32) -> Result<AudioBuffer> {
    let ingest = |detail: String| Error::Ingest { clip: clip.to_string(), detail };
    let reader = hound::WavReader::open(path).map_err(|e| ingest(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(ingest(format!("{} channels, only mono is supported", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(ingest(format!(
            "unsupported format {:?}/{} bits, expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate != sample_rate {
        return Err(ingest(format!("sample rate {} Hz, expected {sample_rate} Hz", spec.sample_rate)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| ingest(e.to_string()))?;
    AudioBuffer::new(samples, sample_rate).map_err(|e| ingest(e.to_string()))
}
