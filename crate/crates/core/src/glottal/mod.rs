//! Glottal-waveform separation: pitch, closure instants, pitch-synchronous
//! framing and closed-phase vocal-tract estimation.
//!
//! Voiced speech is modelled as the glottal-flow derivative (glottal flow
//! times lip radiation) driving the vocal-tract filter. Estimating the tract
//! only from the closed phase that follows each closure keeps the source out of
//! the estimate; inverse filtering with that tract then yields the
//! glottal-derivative residual.

mod gci;
mod pitch;

pub use gci::{coarse_residual, detect_gci, GciMarks, COARSE_ORDER};
pub use pitch::{estimate_pitch, PitchConfig, PitchTrack};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::lpc::{
    analyze_autocorrelation, analyze_covariance, inverse_filter, lpc_to_lsf, rms, LpcModel, LsfVector, Residual,
};

/// Samples of pre-frame context kept on every frame; bounds the usable LPC order.
pub const FRAME_CONTEXT: usize = 64;

/// One analysis segment. Voiced frames span two pitch periods
/// `[gci_k, gci_{k+2})`; unvoiced frames span about 20 ms. Consecutive frames
/// overlap by their second half.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisFrame {
    pub start: usize,
    /// Boundary between the two halves (the middle GCI for voiced frames).
    pub mid: usize,
    pub samples: Vec<f64>,
    /// Up to `FRAME_CONTEXT` samples immediately before `start`.
    pub context: Vec<f64>,
    /// Closure instants (absolute) at start, middle and end of a voiced frame.
    pub gci: Vec<usize>,
    /// Half the frame length in samples.
    pub pitch_period: f64,
    pub voiced: bool,
    pub lpc: Option<LpcModel>,
    pub residual: Option<Residual>,
}

impl AnalysisFrame {
    pub fn end(&self) -> usize {
        self.start + self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The `p` samples preceding the frame, zero-padded at the signal start.
    pub fn history(&self, p: usize) -> Vec<f64> {
        let mut h = vec![0.0; p];
        let avail = self.context.len().min(p);
        h[p - avail..].copy_from_slice(&self.context[self.context.len() - avail..]);
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramingConfig {
    /// Unvoiced frame hop (frames are two hops long).
    pub unvoiced_hop_seconds: f64,
    /// Lowest admissible f0; wider closure spacing breaks a voiced run.
    pub min_f0: f64,
}

impl Default for FramingConfig {
    fn default() -> Self {
        Self {
            unvoiced_hop_seconds: 0.01,
            min_f0: 50.0,
        }
    }
}

/// Groups closure instants into runs with period-consistent spacing.
fn voiced_runs(marks: &GciMarks, track: &PitchTrack, max_period: f64) -> Vec<Vec<usize>> {
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for &m in &marks.instants {
        if let Some(run) = runs.last_mut() {
            let prev = *run.last().unwrap();
            let t = track.period_at(prev).unwrap_or(max_period);
            let gap = (m - prev) as f64;
            if gap <= (1.25 * t).max(1.0) + 1.0 && gap <= max_period {
                run.push(m);
                continue;
            }
        }
        runs.push(vec![m]);
    }
    runs
}

/// Splits `[a, b)` into steps of roughly `hop` samples.
fn fill_gap(a: usize, b: usize, hop: usize, out: &mut Vec<usize>) {
    let gap = b - a;
    if gap == 0 {
        return;
    }
    let steps = ((gap as f64 / hop as f64).round() as usize).max(1);
    for i in 1..steps {
        out.push(a + (i * gap + steps / 2) / steps);
    }
}

/// Cuts the waveform into overlapping frames.
///
/// Frame boundaries form a chain: closure instants inside voiced runs (runs of
/// at least three marks), and roughly 10 ms steps everywhere else. Frame `i`
/// spans boundaries `i..i+2`.
pub fn frame_pitch_synchronous(
    w: &Waveform,
    marks: &GciMarks,
    track: &PitchTrack,
    cfg: &FramingConfig,
) -> Result<Vec<AnalysisFrame>> {
    if marks.instants.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::Ordering("GCI marks must be strictly increasing".into()));
    }
    let n = w.len();
    if n < 2 {
        return Ok(Vec::new());
    }
    let sr = w.sample_rate as f64;
    let hop = (cfg.unvoiced_hop_seconds * sr).round().max(1.0) as usize;
    let mut runs = voiced_runs(marks, track, sr / cfg.min_f0);
    runs.retain(|r| {
        let keep = r.len() >= 3 && *r.last().unwrap() < n;
        if !keep {
            log::warn!(
                "voiced stretch with {} closure instant(s) at {} treated as unvoiced",
                r.len(),
                r[0]
            );
        }
        keep
    });

    let mut bounds = vec![0usize];
    let mut voiced_edge: Vec<bool> = vec![false];
    let mut cursor = 0usize;
    for run in &runs {
        let mut tmp = Vec::new();
        fill_gap(cursor, run[0], hop, &mut tmp);
        voiced_edge.extend(std::iter::repeat_n(false, tmp.len()));
        bounds.extend(tmp);
        for &m in run {
            if m > *bounds.last().unwrap() {
                bounds.push(m);
                voiced_edge.push(true);
            } else if m == 0 {
                voiced_edge[0] = true;
            }
        }
        cursor = *run.last().unwrap();
    }
    let mut tmp = Vec::new();
    fill_gap(cursor, n, hop, &mut tmp);
    voiced_edge.extend(std::iter::repeat_n(false, tmp.len()));
    bounds.extend(tmp);
    if *bounds.last().unwrap() < n {
        bounds.push(n);
        voiced_edge.push(false);
    }
    if bounds.len() == 2 {
        bounds.insert(1, n / 2);
        voiced_edge.insert(1, false);
    }

    // run membership of each voiced boundary, so frames never straddle two runs
    let mut run_id = vec![usize::MAX; bounds.len()];
    for (r, run) in runs.iter().enumerate() {
        for m in run {
            if let Ok(i) = bounds.binary_search(m) {
                run_id[i] = r;
            }
        }
    }

    let mut frames = Vec::with_capacity(bounds.len() - 2);
    for i in 0..bounds.len() - 2 {
        let (s, m, e) = (bounds[i], bounds[i + 1], bounds[i + 2]);
        let voiced = voiced_edge[i]
            && voiced_edge[i + 1]
            && voiced_edge[i + 2]
            && run_id[i] == run_id[i + 1]
            && run_id[i + 1] == run_id[i + 2];
        let ctx = s.min(FRAME_CONTEXT);
        frames.push(AnalysisFrame {
            start: s,
            mid: m,
            samples: w.samples[s..e].to_vec(),
            context: w.samples[s - ctx..s].to_vec(),
            gci: if voiced { vec![s, m, e] } else { Vec::new() },
            pitch_period: (e - s) as f64 / 2.0,
            voiced,
            lpc: None,
            residual: None,
        });
    }
    Ok(frames)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedPhaseConfig {
    /// Closed phase length as a fraction of the local period.
    pub fraction: f64,
    /// Samples skipped after each closure before the interval starts.
    pub offset: usize,
}

impl Default for ClosedPhaseConfig {
    fn default() -> Self {
        Self {
            fraction: 0.4,
            offset: 1,
        }
    }
}

/// Closed-phase vocal-tract estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedPhaseEstimate {
    pub model: LpcModel,
    pub lsf: LsfVector,
    /// True when the closed phase was too short or the covariance solution
    /// could not be stabilized, and full-frame autocorrelation LPC was used.
    pub fallback: bool,
}

/// Covariance-method LPC over the closed phase `[g + offset, g + fraction·T)`
/// after each closure in the frame, pooled across periods. The gain is the
/// RMS of the resulting full-frame residual.
pub fn closed_phase_lpc(
    f: &AnalysisFrame,
    order: usize,
    cfg: &ClosedPhaseConfig,
) -> Result<ClosedPhaseEstimate> {
    if !f.voiced || f.gci.len() < 2 {
        return Err(Error::WrongFrameKind(format!(
            "closed-phase analysis needs a voiced frame (frame at {})",
            f.start
        )));
    }
    if order > FRAME_CONTEXT {
        return Err(Error::Config(format!("LPC order {order} exceeds {FRAME_CONTEXT}")));
    }
    let mut buf = f.context.clone();
    buf.extend_from_slice(&f.samples);
    let base = f.context.len();
    let mut ranges = Vec::new();
    let mut usable = 0usize;
    for pair in f.gci.windows(2) {
        let t = (pair[1] - pair[0]) as f64;
        let a = base + pair[0] - f.start + cfg.offset;
        let b = base + pair[0] - f.start + (cfg.fraction * t).ceil() as usize;
        let b = b.min(base + pair[1] - f.start);
        if b > a {
            usable += b.saturating_sub(a.max(order));
            ranges.push(a..b);
        }
    }
    let covariance = if usable >= 2 * order {
        analyze_covariance(&buf, &ranges, order)
            .ok()
            .and_then(|m| m.stabilized(40))
    } else {
        None
    };
    let ((model, lsf), fallback) = match covariance {
        Some(m) => (m, false),
        None => {
            log::debug!("frame at {}: closed phase unusable, full-frame LPC", f.start);
            (full_frame_lpc_lsf(f, order)?, true)
        }
    };
    let residual = inverse_filter(&f.samples, &model, &f.history(order))?;
    Ok(ClosedPhaseEstimate {
        model: LpcModel {
            gain: residual.rms(),
            ..model
        },
        lsf,
        fallback,
    })
}

/// Autocorrelation-method LPC over the whole (Hann-windowed) frame, with the
/// gain set to the residual RMS. Silent frames give a flat zero-gain model.
pub fn full_frame_lpc(f: &AnalysisFrame, order: usize) -> Result<LpcModel> {
    full_frame_lpc_lsf(f, order).map(|(m, _)| m)
}

/// [`full_frame_lpc`] together with the model's line spectral frequencies.
pub fn full_frame_lpc_lsf(f: &AnalysisFrame, order: usize) -> Result<(LpcModel, LsfVector)> {
    let stable = match analyze_autocorrelation(&f.samples, order) {
        Ok(m) => m.stabilized(40),
        Err(Error::DegenerateSignal(_)) | Err(Error::Size(_)) => None,
        Err(e) => return Err(e),
    };
    let (model, lsf) = match stable {
        Some(pair) => pair,
        None => {
            let flat = LpcModel::flat(order, 0.0);
            let lsf = lpc_to_lsf(&flat)?;
            (flat, lsf)
        }
    };
    let residual = inverse_filter(&f.samples, &model, &f.history(order))?;
    Ok((
        LpcModel {
            gain: residual.rms(),
            ..model
        },
        lsf,
    ))
}

/// Inverse-filters the frame with `m`, giving the glottal-derivative estimate.
pub fn separate_glottal(f: &AnalysisFrame, m: &LpcModel) -> Result<Residual> {
    let r = inverse_filter(&f.samples, m, &f.history(m.order()))?;
    if f.voiced && !closing_phase_decays(f, &r) {
        log::trace!("frame at {}: residual does not decay after closure", f.start);
    }
    Ok(r)
}

/// Soft check that residual energy falls off over the closing/closed phase:
/// mean magnitude in the first half of each post-closure interval exceeds the
/// second half.
pub fn closing_phase_decays(f: &AnalysisFrame, r: &Residual) -> bool {
    let mut ok = 0;
    let mut total = 0;
    for pair in f.gci.windows(2) {
        let a = pair[0] - f.start;
        let len = ((pair[1] - pair[0]) as f64 * 0.4) as usize;
        if len < 4 {
            continue;
        }
        let h = len / 2;
        let first = rms(&r.samples[a..a + h]);
        let second = rms(&r.samples[a + h..a + len]);
        total += 1;
        if first >= second {
            ok += 1;
        }
    }
    total == 0 || ok * 2 >= total
}
