//! PCM waveform container and RIFF/WAVE input/output.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Sampled mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform(format!("non-finite sample at {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Scales so the absolute peak equals `target`. Silent signals are returned unchanged.
    pub fn peak_normalized(&self, target: f64) -> Waveform {
        let peak = self.peak();
        if peak == 0.0 {
            return self.clone();
        }
        let g = target / peak;
        Waveform {
            samples: self.samples.iter().map(|s| s * g).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Default peak level used when normalizing training audio.
pub const NORMALIZATION_PEAK: f64 = 0.9;

/// Reads a PCM16 or float32 WAV file. Multichannel files yield channel 0.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    if channels > 1 {
        log::warn!(
            "{}: {} channels, using channel 0",
            path.display(),
            spec.channels
        );
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec {
                path: path.into(),
                reason: format!("{bits}-bit {fmt:?} samples"),
            })
        }
    };
    if samples.is_empty() {
        return Err(Error::EmptySignal(format!(
            "{} has an empty data chunk",
            path.display()
        )));
    }
    Waveform::new(samples, spec.sample_rate).map_err(|e| Error::Format {
        path: path.into(),
        reason: e.to_string(),
    })
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Format {
                path: path.into(),
                reason: "truncated file".into(),
            }
        }
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::UnsupportedCodec {
            path: path.into(),
            reason: "unsupported WAV encoding".into(),
        },
        other => Error::Format {
            path: path.into(),
            reason: other.to_string(),
        },
    }
}

/// Quantizes to 16-bit, clipping to `[-1, 1]`.
pub fn quantize_i16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes 16-bit PCM mono. The file appears only once fully written.
pub fn save_wav(w: &Waveform, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if w.is_empty() {
        return Err(Error::EmptySignal("refusing to write an empty waveform".into()));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let tmp = temp_path(path);
    let result = (|| {
        let mut writer = hound::WavWriter::create(&tmp, spec).map_err(|e| map_hound(path, e))?;
        for &s in &w.samples {
            writer
                .write_sample(quantize_i16(s))
                .map_err(|e| map_hound(path, e))?;
        }
        writer.finalize().map_err(|e| map_hound(path, e))
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Sibling path used for write-then-rename.
pub fn temp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}
