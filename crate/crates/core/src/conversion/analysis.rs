use rayon::prelude::*;

use crate::align::FeatureSequence;
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::glottal::{
    closed_phase_lpc, detect_gci, estimate_pitch, frame_pitch_synchronous, full_frame_lpc_lsf, AnalysisFrame,
    ClosedPhaseConfig, FramingConfig, GciMarks, PitchConfig, PitchTrack, FRAME_CONTEXT,
};
use crate::lpc::{inverse_filter, lpc_to_lsf, LpcModel, LsfVector};

/// Representation of the vocal-tract filter used as regression features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSpace {
    #[default]
    Lsf,
    /// Raw predictor coefficients; mixture averages of these are not
    /// guaranteed stable, so converted filters are re-stabilized.
    Lpc,
}

impl FeatureSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSpace::Lsf => "lsf",
            FeatureSpace::Lpc => "lpc",
        }
    }
}

impl std::str::FromStr for FeatureSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lsf" => Ok(FeatureSpace::Lsf),
            "lpc" => Ok(FeatureSpace::Lpc),
            other => Err(Error::Config(format!("unknown feature space `{other}`"))),
        }
    }
}

/// What goes into a per-frame feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub order: usize,
    pub space: FeatureSpace,
    /// Append the natural log of the residual RMS.
    pub log_gain: bool,
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        self.order + usize::from(self.log_gain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 || self.order > FRAME_CONTEXT {
            return Err(Error::Config(format!(
                "LPC order must be in 1..={FRAME_CONTEXT}, got {}",
                self.order
            )));
        }
        Ok(())
    }

    /// Feature vector of a (stable) model.
    pub fn extract(&self, m: &LpcModel) -> Result<Vec<f64>> {
        let lsf = match self.space {
            FeatureSpace::Lsf => Some(lpc_to_lsf(m)?),
            FeatureSpace::Lpc => None,
        };
        Ok(self.assemble(m, lsf))
    }

    /// Feature vector of a model whose line spectral frequencies are known.
    pub fn extract_with_lsf(&self, m: &LpcModel, lsf: LsfVector) -> Vec<f64> {
        self.assemble(m, Some(lsf))
    }

    fn assemble(&self, m: &LpcModel, lsf: Option<LsfVector>) -> Vec<f64> {
        let mut v = match (self.space, lsf) {
            (FeatureSpace::Lsf, Some(l)) => l.into_inner(),
            _ => m.coeffs.clone(),
        };
        if self.log_gain {
            v.push(log_gain(m.gain));
        }
        v
    }
}

pub(crate) fn log_gain(g: f64) -> f64 {
    g.max(1e-10).ln()
}

/// Settings for the pitch, closure and framing stages.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalysisConfig {
    pub pitch: PitchConfig,
    pub framing: FramingConfig,
    pub closed_phase: ClosedPhaseConfig,
}

/// Frames of one utterance with their tract models, residuals and features.
#[derive(Debug, Clone)]
pub struct UtteranceAnalysis {
    pub sample_rate: u32,
    pub len: usize,
    pub track: Option<PitchTrack>,
    pub marks: GciMarks,
    /// Every frame has `lpc` and `residual` filled in.
    pub frames: Vec<AnalysisFrame>,
    pub features: FeatureSequence,
    /// Voiced frames whose closed phase was unusable.
    pub fallback_frames: usize,
}

impl UtteranceAnalysis {
    pub fn voiced_frames(&self) -> usize {
        self.frames.iter().filter(|f| f.voiced).count()
    }
}

/// Pitch, closure instants, pitch-synchronous frames and per-frame tract
/// estimates: closed-phase covariance LPC for voiced frames, autocorrelation
/// LPC for the rest.
pub fn analyze_utterance(w: &Waveform, features: &FeatureConfig, cfg: &AnalysisConfig) -> Result<UtteranceAnalysis> {
    features.validate()?;
    if w.is_empty() {
        return Err(Error::EmptySignal("cannot analyse an empty waveform".into()));
    }
    let track = match estimate_pitch(w, &cfg.pitch) {
        Ok(t) => Some(t),
        Err(Error::TooShort(reason)) => {
            log::debug!("{reason}; treating the utterance as unvoiced");
            None
        }
        Err(e) => return Err(e),
    };
    let marks = track.as_ref().map(|t| detect_gci(w, t)).unwrap_or_default();
    let empty = PitchTrack {
        sample_rate: w.sample_rate,
        hop: 1,
        span: 1,
        f0: Vec::new(),
        voicing: Vec::new(),
    };
    let mut frames = frame_pitch_synchronous(w, &marks, track.as_ref().unwrap_or(&empty), &cfg.framing)?;

    let order = features.order;
    let fitted: Vec<(LpcModel, LsfVector, bool)> = frames
        .par_iter()
        .map(|f| {
            if f.voiced {
                closed_phase_lpc(f, order, &cfg.closed_phase).map(|e| (e.model, e.lsf, e.fallback))
            } else {
                full_frame_lpc_lsf(f, order).map(|(m, l)| (m, l, false))
            }
        })
        .collect::<Result<_>>()?;
    let mut vectors = Vec::with_capacity(frames.len());
    let mut fallback_frames = 0;
    for (f, (m, lsf, fallback)) in frames.iter_mut().zip(fitted) {
        fallback_frames += usize::from(fallback);
        let residual = inverse_filter(&f.samples, &m, &f.history(order))?;
        vectors.push(features.extract_with_lsf(&m, lsf));
        f.lpc = Some(m);
        f.residual = Some(residual);
    }
    let timing = frames.iter().map(|f| f.start).collect();
    let voiced = frames.iter().map(|f| f.voiced).collect();
    Ok(UtteranceAnalysis {
        sample_rate: w.sample_rate,
        len: w.len(),
        track,
        marks,
        frames,
        features: FeatureSequence::new(vectors, timing, voiced)?,
        fallback_frames,
    })
}
