//! Glottal closure instants from the negative peaks of a coarse LPC residual.

use super::PitchTrack;
use crate::audio::Waveform;
use crate::lpc::{analyze_autocorrelation, history_at, inverse_filter, LpcModel};

/// Order of the whole-signal LPC used only to expose excitation peaks.
pub const COARSE_ORDER: usize = 12;

/// Closure instants, strictly increasing sample indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GciMarks {
    pub instants: Vec<usize>,
}

impl GciMarks {
    pub fn len(&self) -> usize {
        self.instants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instants.is_empty()
    }
}

/// Residual of a short-time order-12 LPC, re-estimated every 10 ms over a
/// 25 ms Hann window.
pub fn coarse_residual(w: &Waveform) -> Vec<f64> {
    let x = &w.samples;
    let sr = w.sample_rate as f64;
    let hop = (0.01 * sr).round().max(1.0) as usize;
    let half = (0.0125 * sr).round() as usize;
    let mut out = vec![0.0; x.len()];
    let mut start = 0;
    while start < x.len() {
        let end = (start + hop).min(x.len());
        let center = (start + end) / 2;
        let lo = center.saturating_sub(half);
        let hi = (center + half).min(x.len());
        if hi - lo > COARSE_ORDER {
            if let Ok(m) = analyze_autocorrelation(&x[lo..hi], COARSE_ORDER) {
                let m = LpcModel { gain: 1.0, ..m };
                let h = history_at(x, start, COARSE_ORDER);
                if let Ok(r) = inverse_filter(&x[start..end], &m, &h) {
                    out[start..end].copy_from_slice(&r.samples);
                }
            }
        }
        start = end;
    }
    out
}

fn argmin(e: &[f64], lo: usize, hi: usize) -> Option<usize> {
    (lo..hi).min_by(|a, b| e[*a].partial_cmp(&e[*b]).unwrap().then(a.cmp(b)))
}

/// Minimum relative strength of a residual peak against the previously
/// accepted one.
const RELATIVE_STRENGTH: f64 = 0.2;
/// The reference strength shrinks by this factor for every skipped period, so
/// one outlying peak cannot silence the rest of a voiced stretch.
const SKIP_DECAY: f64 = 0.5;

/// Places one mark per pitch period inside each voiced stretch of `track`.
///
/// Each stretch is anchored at its strongest negative residual peak; marks
/// then propagate in both directions, each searched within `[0.8, 1.25]`
/// local periods of the last one. Weak candidates are skipped.
pub fn detect_gci(w: &Waveform, track: &PitchTrack) -> GciMarks {
    if w.is_empty() || track.is_empty() {
        return GciMarks::default();
    }
    let e = coarse_residual(w);
    let n = e.len();
    let mut marks = Vec::new();
    for (k0, k1) in track.voiced_runs() {
        let lo = track.center(k0).saturating_sub(track.hop).min(n);
        let hi = (track.center(k1) + track.hop).min(n);
        if hi <= lo + 1 {
            continue;
        }
        let Some(anchor) = argmin(&e, lo, hi) else { continue };
        if e[anchor] >= 0.0 {
            continue;
        }
        let mut region = vec![anchor];
        // forward
        let (mut pos, mut strength) = (anchor as f64, -e[anchor]);
        loop {
            let t = track.period_at(pos as usize).unwrap_or(100.0);
            let a = (pos + 0.8 * t).round() as usize;
            let b = ((pos + 1.25 * t).round() as usize + 1).min(hi);
            if a >= b {
                break;
            }
            let c = argmin(&e, a, b).unwrap();
            if e[c] < 0.0 && -e[c] >= RELATIVE_STRENGTH * strength {
                region.push(c);
                strength = -e[c];
                pos = c as f64;
            } else {
                pos += t;
                strength *= SKIP_DECAY;
            }
        }
        // backward
        let (mut pos, mut strength) = (anchor as f64, -e[anchor]);
        loop {
            let t = track.period_at(pos as usize).unwrap_or(100.0);
            let b = (pos - 0.8 * t).round();
            let a = (pos - 1.25 * t).round().max(lo as f64);
            if b <= a || b < 0.0 {
                break;
            }
            let c = argmin(&e, a as usize, b as usize + 1).unwrap();
            if e[c] < 0.0 && -e[c] >= RELATIVE_STRENGTH * strength {
                region.push(c);
                strength = -e[c];
                pos = c as f64;
            } else {
                pos -= t;
                strength *= SKIP_DECAY;
            }
        }
        marks.extend(region);
    }
    marks.sort_unstable();
    marks.dedup();
    GciMarks { instants: marks }
}
