//! Training a conversion model from a parallel corpus and converting source
//! utterances with it.

mod analysis;
mod excitation;
mod model_io;

pub use analysis::{analyze_utterance, AnalysisConfig, FeatureConfig, FeatureSpace, UtteranceAnalysis};
pub use excitation::{
    predict_excitation, resample_periodic, ExcitationMode, ExcitationPrototype, PROTOTYPE_LEN,
};
pub use model_io::{load_model, model_from_text, model_to_text, save_model, MODEL_FORMAT_VERSION};

use rayon::prelude::*;

use crate::align::{dtw_align_with, DtwConfig, WarpPath};
use crate::audio::{Waveform, NORMALIZATION_PEAK};
use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::glottal::AnalysisFrame;
use crate::gmm::{em_fit_traced, EmConfig, JointGmm};
use crate::lpc::{enforce_lsf_order, history_at, rms, lsf_to_lpc, synthesize, LpcModel, LsfVector, Residual, LSF_MIN_GAP};
use excitation::PrototypeAccumulator;

/// Smallest spacing between neighbouring converted line spectral
/// frequencies. Regression far from the training data can bring two lines
/// together, which gives a near-lossless resonance.
pub const CONVERTED_LSF_MIN_GAP_HZ: f64 = 50.0;

/// LPC order used at a sample rate: one pole pair per kHz plus two.
pub fn default_order(sample_rate: u32) -> usize {
    (sample_rate / 1000) as usize + 2
}

#[derive(Debug, Clone)]
pub struct ConversionConfig {
    pub features: FeatureConfig,
    /// Mixture settings; `em.components` is the number of Gaussians.
    pub em: EmConfig,
    /// Use only the first this-many utterance pairs of the corpus.
    pub training_pairs: Option<usize>,
    pub excitation: ExcitationMode,
    pub prototype_len: usize,
    /// Peak-normalize utterances before analysis.
    pub normalize: bool,
    pub analysis: AnalysisConfig,
    pub dtw: DtwConfig,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        Self::for_rate(16000)
    }
}

impl ConversionConfig {
    pub fn for_rate(sample_rate: u32) -> Self {
        Self {
            features: FeatureConfig {
                order: default_order(sample_rate),
                space: FeatureSpace::Lsf,
                log_gain: false,
            },
            em: EmConfig::default(),
            training_pairs: None,
            excitation: ExcitationMode::Predicted,
            prototype_len: PROTOTYPE_LEN,
            normalize: true,
            analysis: AnalysisConfig::default(),
            dtw: DtwConfig::default(),
        }
    }

    pub fn components(&self) -> usize {
        self.em.components
    }

    pub fn with_components(mut self, k: usize) -> Self {
        self.em.components = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.em.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.em.validate()?;
        if self.training_pairs == Some(0) {
            return Err(Error::Config("training pair limit must be positive".into()));
        }
        if self.prototype_len < 2 {
            return Err(Error::Config("prototype length must be at least 2".into()));
        }
        Ok(())
    }
}

/// Facts about the training run, stored with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummary {
    pub pairs: usize,
    /// Stacked voiced source/target vectors fed to EM.
    pub vectors: usize,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub converged: bool,
}

/// The trained conversion and excitation-prediction rules.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionModel {
    pub joint: JointGmm,
    /// One per mixture component.
    pub prototypes: Vec<ExcitationPrototype>,
    pub features: FeatureConfig,
    pub sample_rate: u32,
    pub excitation: ExcitationMode,
    pub normalize: bool,
    pub analysis: AnalysisConfig,
    pub summary: TrainingSummary,
}

impl ConversionModel {
    pub fn components(&self) -> usize {
        self.joint.components()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let d = self.features.dim();
        if self.joint.split() != d || self.joint.output_dim() != d {
            return Err(Error::IncompatibleModel(format!(
                "joint mixture of dimension {}+{} for {d}-dimensional features",
                self.joint.split(),
                self.joint.output_dim()
            )));
        }
        if self.prototypes.len() != self.components() {
            return Err(Error::IncompatibleModel(format!(
                "{} excitation prototypes for {} components",
                self.prototypes.len(),
                self.components()
            )));
        }
        Ok(())
    }

    /// Converted feature vector for source features `x`, after LSF ordering
    /// is enforced, together with the component responsibilities.
    pub fn convert_features(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut y, h) = self.joint.regress_with_posterior(x)?;
        if self.features.space == FeatureSpace::Lsf {
            let p = self.features.order;
            let gap = (2.0 * std::f64::consts::PI * CONVERTED_LSF_MIN_GAP_HZ / self.sample_rate as f64).max(LSF_MIN_GAP);
            let ordered = enforce_lsf_order(&y[..p], gap);
            y[..p].copy_from_slice(&ordered);
        }
        Ok((y, h))
    }

    /// Stable all-pole filter for a converted feature vector.
    pub fn filter_from_features(&self, y: &[f64], gain: f64) -> Result<LpcModel> {
        let p = self.features.order;
        let m = match self.features.space {
            FeatureSpace::Lsf => lsf_to_lpc(&LsfVector::new(y[..p].to_vec())?)?,
            FeatureSpace::Lpc => LpcModel::new(y[..p].to_vec(), 0.0)?
                .stabilized(200)
                .map(|(m, _)| m)
                .ok_or_else(|| Error::Unstable("converted coefficients could not be stabilized".into()))?,
        };
        Ok(LpcModel { gain, ..m })
    }
}

struct PairAnalysis {
    source: UtteranceAnalysis,
    target: UtteranceAnalysis,
    path: WarpPath,
}

fn prepare(w: &Waveform, normalize: bool) -> Waveform {
    if normalize {
        w.peak_normalized(NORMALIZATION_PEAK)
    } else {
        w.clone()
    }
}

/// Analysed and aligned utterance pairs, reusable across trainings that
/// differ only in mixture settings.
pub struct CorpusAnalysis {
    sample_rate: u32,
    pairs: Vec<PairAnalysis>,
    features: FeatureConfig,
    normalize: bool,
    analysis: AnalysisConfig,
    dtw: DtwConfig,
}

impl CorpusAnalysis {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn matches(&self, cfg: &ConversionConfig) -> bool {
        self.features == cfg.features
            && self.normalize == cfg.normalize
            && self.analysis == cfg.analysis
            && self.dtw == cfg.dtw
    }
}

/// Analyses and aligns the pairs `train` would use under `cfg`.
pub fn analyze_corpus(corpus: &ParallelCorpus, cfg: &ConversionConfig) -> Result<CorpusAnalysis> {
    cfg.validate()?;
    let Some(sample_rate) = corpus.sample_rate() else {
        return Err(Error::EmptyInput("training corpus has no utterance pairs".into()));
    };
    let n_pairs = match cfg.training_pairs {
        Some(n) if n > corpus.len() => {
            return Err(Error::Config(format!(
                "{n} training pairs requested but the corpus has {}",
                corpus.len()
            )))
        }
        Some(n) => n,
        None => corpus.len(),
    };
    for p in &corpus.pairs[..n_pairs] {
        if p.sample_rate() != sample_rate {
            return Err(Error::RateMismatch {
                context: format!("training pair {}", p.id),
                expected: sample_rate,
                found: p.sample_rate(),
            });
        }
    }
    let pairs = corpus.pairs[..n_pairs]
        .par_iter()
        .map(|p| {
            let source = analyze_utterance(&prepare(&p.source, cfg.normalize), &cfg.features, &cfg.analysis)?;
            let target = analyze_utterance(&prepare(&p.target, cfg.normalize), &cfg.features, &cfg.analysis)?;
            let path = dtw_align_with(&source.features, &target.features, &cfg.dtw)?;
            Ok(PairAnalysis { source, target, path })
        })
        .collect::<Result<_>>()?;
    Ok(CorpusAnalysis {
        sample_rate,
        pairs,
        features: cfg.features,
        normalize: cfg.normalize,
        analysis: cfg.analysis.clone(),
        dtw: cfg.dtw.clone(),
    })
}

/// Trains the joint mixture and the excitation prototypes.
///
/// Each pair is analysed and aligned by DTW; aligned pairs of voiced frames
/// are stacked into joint vectors. Excitation prototypes average the
/// length-normalized two-period target residuals, weighted by each stacked
/// vector's component responsibilities.
pub fn train(corpus: &ParallelCorpus, cfg: &ConversionConfig) -> Result<ConversionModel> {
    train_analyzed(&analyze_corpus(corpus, cfg)?, cfg)
}

/// [`train`] on pairs analysed beforehand. Uses the first
/// `cfg.training_pairs` of them, or all.
pub fn train_analyzed(corpus: &CorpusAnalysis, cfg: &ConversionConfig) -> Result<ConversionModel> {
    cfg.validate()?;
    if !corpus.matches(cfg) {
        return Err(Error::Config(
            "corpus was analysed with different feature, analysis or alignment settings".into(),
        ));
    }
    let n_pairs = cfg.training_pairs.unwrap_or(corpus.len());
    if n_pairs > corpus.len() {
        return Err(Error::Config(format!(
            "{n_pairs} training pairs requested but only {} were analysed",
            corpus.len()
        )));
    }
    if n_pairs == 0 {
        return Err(Error::EmptyInput("training corpus has no utterance pairs".into()));
    }
    let analysed = &corpus.pairs[..n_pairs];

    let mut stacked = Vec::new();
    let mut target_frames: Vec<&AnalysisFrame> = Vec::new();
    for a in analysed {
        for &(i, j) in &a.path.pairs {
            if !(a.source.features.voiced[i] && a.target.features.voiced[j]) {
                continue;
            }
            let mut z = a.source.features.frames[i].clone();
            z.extend_from_slice(&a.target.features.frames[j]);
            stacked.push(z);
            target_frames.push(&a.target.frames[j]);
        }
    }
    let k = cfg.components();
    if stacked.len() < 10 * k {
        return Err(Error::InsufficientData(format!(
            "{} aligned voiced frame pairs from {n_pairs} utterance pair(s); K={k} needs at least {}",
            stacked.len(),
            10 * k
        )));
    }
    let fallback: usize = analysed
        .iter()
        .map(|a| a.source.fallback_frames + a.target.fallback_frames)
        .sum();
    log::info!(
        "training on {} stacked vectors from {n_pairs} pair(s), {fallback} closed-phase fallback frame(s)",
        stacked.len()
    );

    let (gmm, trace) = em_fit_traced(&stacked, &cfg.em)?;
    let joint = JointGmm::new(gmm, cfg.features.dim())?;

    let mut acc = PrototypeAccumulator::new(k, cfg.prototype_len);
    for (z, f) in stacked.iter().zip(&target_frames) {
        let h = joint.gmm().posterior(z)?;
        let r = f.residual.as_ref().expect("analysed frames carry residuals");
        acc.add(&r.samples, f.pitch_period, &h);
    }
    let prototypes = acc.finish()?;

    let model = ConversionModel {
        joint,
        prototypes,
        features: cfg.features,
        sample_rate: corpus.sample_rate,
        excitation: cfg.excitation,
        normalize: cfg.normalize,
        analysis: cfg.analysis.clone(),
        summary: TrainingSummary {
            pairs: n_pairs,
            vectors: stacked.len(),
            iterations: trace.iterations(),
            log_likelihood: trace.final_log_likelihood(),
            converged: trace.converged,
        },
    };
    model.check()?;
    Ok(model)
}

/// Counts from one conversion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConversionReport {
    pub frames: usize,
    pub voiced_frames: usize,
    /// Frames whose conversion or synthesis failed; the source frame was used.
    pub flagged_frames: usize,
    /// Voiced source frames analysed with the full-frame fallback.
    pub fallback_frames: usize,
}

pub fn convert(model: &ConversionModel, src: &Waveform) -> Result<Waveform> {
    convert_with_report(model, src).map(|(w, _)| w)
}

/// Weights `(α, k)` for `α·ringing + k·driven` with RMS `want`.
///
/// Scaling the excitation alone keeps the filter state intact. The ringing of
/// the previous output through a new filter can be far louder than the frame
/// should be, though, and when plain scaling misses `want` by more than a
/// factor of two the ringing is damped to at most `want` instead.
fn level_match(ringing: &[f64], driven: &[f64], want: f64) -> (f64, f64) {
    let total: Vec<f64> = ringing.iter().zip(driven).map(|(r, d)| r + d).collect();
    let have = rms(&total);
    if have > 0.0 {
        let k = want / have;
        let got = rms(&ringing.iter().zip(driven).map(|(r, d)| r + k * d).collect::<Vec<_>>());
        if got <= 2.0 * want {
            return (1.0, k);
        }
    }
    let n = ringing.len() as f64;
    let target = want * want * n;
    let rr: f64 = ringing.iter().map(|v| v * v).sum();
    let alpha = if rr > target { (target / rr).sqrt() } else { 1.0 };
    let a: f64 = driven.iter().map(|v| v * v).sum();
    if a == 0.0 {
        return (alpha, 0.0);
    }
    let b = alpha * ringing.iter().zip(driven).map(|(r, d)| r * d).sum::<f64>();
    let c = (alpha * alpha * rr - target).min(0.0);
    (alpha, ((-b + (b * b - a * c).sqrt()) / a).max(0.0))
}

/// Converts `src` frame by frame.
///
/// Each frame's features are regressed onto the target space and rebuilt
/// into a stable filter, driven by the predicted excitation (voiced frames in
/// predicted mode) or the source residual. Frame `k` synthesizes the stretch
/// from its start to the start of frame `k + 1` (its first pitch period when
/// voiced), continuing the filter state from the output so far. The
/// excitation is scaled, and the carried-over state damped when it alone is
/// too loud, so each stretch keeps the RMS of the same stretch of
/// the source, or, when the gain is part of the features, the source RMS
/// times the regressed change in residual level. The input's amplitude
/// normalization is undone at the end, backing off only to avoid clipping.
pub fn convert_with_report(model: &ConversionModel, src: &Waveform) -> Result<(Waveform, ConversionReport)> {
    model.check()?;
    if src.sample_rate != model.sample_rate {
        return Err(Error::RateMismatch {
            context: "conversion input".into(),
            expected: model.sample_rate,
            found: src.sample_rate,
        });
    }
    let sa = analyze_source(src, &model.features, &model.analysis, model.normalize)?;
    convert_analyzed(model, &sa)
}

/// A conversion input with its analysis, reusable across models that share
/// feature and analysis settings.
pub struct SourceAnalysis {
    original_peak: f64,
    prepared: Waveform,
    analysis: UtteranceAnalysis,
    features: FeatureConfig,
    settings: AnalysisConfig,
    normalize: bool,
}

pub fn analyze_source(
    src: &Waveform,
    features: &FeatureConfig,
    analysis: &AnalysisConfig,
    normalize: bool,
) -> Result<SourceAnalysis> {
    if src.is_empty() {
        return Err(Error::EmptySignal("nothing to convert".into()));
    }
    let prepared = prepare(src, normalize);
    Ok(SourceAnalysis {
        original_peak: src.peak(),
        analysis: analyze_utterance(&prepared, features, analysis)?,
        prepared,
        features: *features,
        settings: analysis.clone(),
        normalize,
    })
}

/// [`convert_with_report`] on an input analysed beforehand.
pub fn convert_analyzed(model: &ConversionModel, sa: &SourceAnalysis) -> Result<(Waveform, ConversionReport)> {
    model.check()?;
    if sa.prepared.sample_rate != model.sample_rate {
        return Err(Error::RateMismatch {
            context: "conversion input".into(),
            expected: model.sample_rate,
            found: sa.prepared.sample_rate,
        });
    }
    if sa.features != model.features || sa.settings != model.analysis || sa.normalize != model.normalize {
        return Err(Error::Config("input was analysed with settings other than the model's".into()));
    }
    let (prepared, a) = (&sa.prepared, &sa.analysis);
    let mut report = ConversionReport {
        frames: a.frames.len(),
        voiced_frames: a.voiced_frames(),
        flagged_frames: 0,
        fallback_frames: a.fallback_frames,
    };
    let p = model.features.order;
    let limit = 1e3 * prepared.peak().max(f64::MIN_POSITIVE);
    let count = a.frames.len();
    let mut out = vec![0.0; a.len];
    for (idx, (f, x)) in a.frames.iter().zip(&a.features.frames).enumerate() {
        let stop = if idx + 1 == count { f.end() } else { f.mid };
        let len = stop - f.start;
        let synthesized = (|| -> Result<Vec<f64>> {
            let source_model = f.lpc.as_ref().expect("analysed frames carry models");
            let source_residual = f.residual.as_ref().expect("analysed frames carry residuals");
            let (y, h) = model.convert_features(x)?;
            let filter = model.filter_from_features(&y, source_model.gain)?;
            let e = if f.voiced && model.excitation == ExcitationMode::Predicted {
                predict_excitation(&model.prototypes, &h, source_residual, f.pitch_period)?
            } else {
                source_residual.clone()
            };
            let e = Residual::new(e.samples[..len].to_vec());
            let history = history_at(&out, f.start, p);
            // the mixture has only seen voiced frames, so only they get a mapped level
            let mut want = rms(&prepared.samples[f.start..stop]);
            if model.features.log_gain && f.voiced {
                want *= (y[p] - x[p]).exp();
            }
            let ringing = synthesize(&filter, &Residual::new(vec![0.0; len]), &history)?;
            let driven = synthesize(&filter, &e, &vec![0.0; p])?;
            let (alpha, k) = level_match(&ringing, &driven, want);
            let seg: Vec<f64> = ringing.iter().zip(&driven).map(|(r, d)| alpha * r + k * d).collect();
            if seg.iter().any(|v| v.abs() > limit) {
                return Err(Error::SynthesisDivergence(len));
            }
            Ok(seg)
        })();
        match synthesized {
            Ok(seg) => out[f.start..stop].copy_from_slice(&seg),
            Err(e) => {
                log::warn!("frame at sample {}: {e}; using the source samples", f.start);
                report.flagged_frames += 1;
                out[f.start..stop].copy_from_slice(&prepared.samples[f.start..stop]);
            }
        }
    }
    let scale = if prepared.peak() > 0.0 { sa.original_peak / prepared.peak() } else { 1.0 };
    let out = Waveform::new(out.into_iter().map(|v| v * scale).collect(), prepared.sample_rate)?;
    Ok((if out.peak() > 1.0 { out.peak_normalized(1.0) } else { out }, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms_of(alpha: f64, k: f64, r: &[f64], d: &[f64]) -> f64 {
        rms(&r.iter().zip(d).map(|(a, b)| alpha * a + k * b).collect::<Vec<_>>())
    }

    #[test]
    fn level_match_hits_the_target() {
        let d = [1.0, -2.0, 0.5, 0.0, 3.0];
        for r in [[0.0; 5], [0.1, 0.1, -0.2, 0.0, 0.05], [9.0, -7.0, 4.0, 1.0, 0.0]] {
            for want in [0.01, 0.7, 5.0] {
                let (alpha, k) = level_match(&r, &d, want);
                assert!(alpha > 0.0 && alpha <= 1.0 && k >= 0.0);
                let got = rms_of(alpha, k, &r, &d);
                assert!(got <= 2.0 * want && got >= 0.5 * want, "{r:?} {want}: {got}");
                if alpha < 1.0 {
                    assert!((got - want).abs() < 1e-9 * want.max(1.0), "{r:?} {want}: {got}");
                }
            }
        }
    }

    #[test]
    fn level_match_keeps_an_exact_reconstruction() {
        // ringing louder than the frame, cancelled by the excitation
        let r = [3.0, 2.0, 1.0];
        let d = [-2.5, -1.5, -0.5];
        let want = rms(&[0.5, 0.5, 0.5]);
        let (alpha, k) = level_match(&r, &d, want);
        assert_eq!(alpha, 1.0);
        assert!((k - 1.0).abs() < 1e-12);
        assert_eq!(level_match(&[2.0, 0.0], &[0.0, 0.0], 0.5), ((0.125f64).sqrt(), 0.0));
    }
}
