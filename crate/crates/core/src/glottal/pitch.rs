//! Normalized cross-correlation pitch tracker.

use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PitchConfig {
    pub min_f0: f64,
    pub max_f0: f64,
    /// Minimum normalized correlation for a voiced decision.
    pub voicing_threshold: f64,
    pub hop_seconds: f64,
    /// Correlation window, excluding the lag span.
    pub window_seconds: f64,
    /// Hops quieter than this (dB relative to the loudest hop) are unvoiced.
    pub silence_db: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            min_f0: 50.0,
            max_f0: 500.0,
            voicing_threshold: 0.3,
            hop_seconds: 0.01,
            window_seconds: 0.03,
            silence_db: -45.0,
        }
    }
}

/// Per-hop fundamental frequency; `f0 == 0` marks unvoiced hops.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    pub sample_rate: u32,
    pub hop: usize,
    /// Length of the analysed span per hop (window plus maximum lag).
    pub span: usize,
    pub f0: Vec<f64>,
    pub voicing: Vec<bool>,
}

impl PitchTrack {
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    /// Centre sample of hop `k`.
    pub fn center(&self, k: usize) -> usize {
        k * self.hop + self.span / 2
    }

    /// Hop whose centre is nearest to sample `n`.
    pub fn hop_at(&self, n: usize) -> usize {
        let rel = n as f64 - (self.span / 2) as f64;
        let k = (rel / self.hop as f64).round().max(0.0) as usize;
        k.min(self.f0.len().saturating_sub(1))
    }

    pub fn voiced_at(&self, n: usize) -> bool {
        !self.voicing.is_empty() && self.voicing[self.hop_at(n)]
    }

    /// Pitch period in samples at `n`, taken from the nearest voiced hop.
    pub fn period_at(&self, n: usize) -> Option<f64> {
        if self.f0.is_empty() {
            return None;
        }
        let k = self.hop_at(n);
        let mut best: Option<(usize, f64)> = None;
        for (i, f) in self.f0.iter().enumerate() {
            if *f > 0.0 {
                let d = i.abs_diff(k);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, *f));
                }
            }
        }
        best.map(|(_, f)| self.sample_rate as f64 / f)
    }

    /// Runs of consecutive voiced hops as inclusive `(first, last)` indices.
    pub fn voiced_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (k, v) in self.voicing.iter().enumerate() {
            match (v, start) {
                (true, None) => start = Some(k),
                (false, Some(s)) => {
                    runs.push((s, k - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.voicing.len() - 1));
        }
        runs
    }
}

/// Estimates f0 every hop from the normalized cross-correlation between a
/// window and its lagged copy.
///
/// Among lags whose correlation reaches 90% of the maximum, the shortest local
/// peak is chosen to avoid period doubling.
pub fn estimate_pitch(w: &Waveform, cfg: &PitchConfig) -> Result<PitchTrack> {
    if w.sample_rate < 8000 {
        return Err(Error::Config(format!(
            "pitch tracking needs at least 8 kHz, got {}",
            w.sample_rate
        )));
    }
    let sr = w.sample_rate as f64;
    let min_lag = (sr / cfg.max_f0).floor().max(2.0) as usize;
    let max_lag = (sr / cfg.min_f0).ceil() as usize;
    let win = (cfg.window_seconds * sr).round() as usize;
    let hop = (cfg.hop_seconds * sr).round().max(1.0) as usize;
    let span = win + max_lag + 1;
    let x = &w.samples;
    if x.len() < span {
        return Err(Error::TooShort(format!(
            "{} samples, need at least {span} for one pitch window",
            x.len()
        )));
    }
    let n_hops = (x.len() - span) / hop + 1;
    let mut sq = vec![0.0; x.len() + 1];
    for (i, v) in x.iter().enumerate() {
        sq[i + 1] = sq[i] + v * v;
    }
    let energy = |a: usize, b: usize| (sq[b] - sq[a]).max(0.0);
    let loudest = (0..n_hops)
        .map(|k| energy(k * hop, k * hop + span))
        .fold(0.0, f64::max);
    let gate = loudest * 10f64.powf(cfg.silence_db / 10.0);

    let mut f0 = vec![0.0; n_hops];
    let mut nccf = vec![0.0; max_lag + 2];
    for k in 0..n_hops {
        let s = k * hop;
        if energy(s, s + span) <= gate || loudest == 0.0 {
            continue;
        }
        let e0 = energy(s, s + win);
        if e0 <= 0.0 {
            continue;
        }
        let mut best = f64::MIN;
        for lag in min_lag - 1..=max_lag + 1 {
            let el = energy(s + lag, s + lag + win);
            let num: f64 = x[s..s + win]
                .iter()
                .zip(&x[s + lag..s + lag + win])
                .map(|(a, b)| a * b)
                .sum();
            nccf[lag] = if el > 0.0 { num / (e0 * el).sqrt() } else { 0.0 };
            if (min_lag..=max_lag).contains(&lag) {
                best = best.max(nccf[lag]);
            }
        }
        if best < cfg.voicing_threshold {
            continue;
        }
        let pick = (min_lag..=max_lag).find(|&l| {
            nccf[l] >= 0.9 * best && nccf[l] >= nccf[l - 1] && nccf[l] >= nccf[l + 1]
        });
        let Some(l) = pick else { continue };
        // parabolic refinement
        let (a, b, c) = (nccf[l - 1], nccf[l], nccf[l + 1]);
        let denom = a - 2.0 * b + c;
        let delta = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        f0[k] = (sr / (l as f64 + delta)).clamp(cfg.min_f0, cfg.max_f0);
    }
    smooth_track(&mut f0);
    let voicing = f0.iter().map(|f| *f > 0.0).collect();
    Ok(PitchTrack {
        sample_rate: w.sample_rate,
        hop,
        span,
        f0,
        voicing,
    })
}

/// Drops isolated voiced hops and median-filters f0 inside voiced runs.
fn smooth_track(f0: &mut [f64]) {
    let n = f0.len();
    let orig = f0.to_vec();
    for k in 0..n {
        if orig[k] <= 0.0 {
            continue;
        }
        let left = k > 0 && orig[k - 1] > 0.0;
        let right = k + 1 < n && orig[k + 1] > 0.0;
        if !left && !right {
            f0[k] = 0.0;
            continue;
        }
        if left && right {
            let mut v = [orig[k - 1], orig[k], orig[k + 1]];
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            f0[k] = v[1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand::{Rng, SeedableRng};

    #[test]
    fn sawtooth_100hz() {
        let w = Waveform::new(synth::sawtooth(100.0, 16000, 16000), 16000).unwrap();
        let t = estimate_pitch(&w, &PitchConfig::default()).unwrap();
        assert!(t.len() > 80);
        for k in 1..t.len() - 1 {
            assert!((t.f0[k] - 100.0).abs() <= 2.0, "hop {k}: {}", t.f0[k]);
            assert!(t.voicing[k]);
        }
    }

    #[test]
    fn white_noise_unvoiced() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..16000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let t = estimate_pitch(&Waveform::new(x, 16000).unwrap(), &PitchConfig::default()).unwrap();
        assert!(t.voicing.iter().all(|v| !v));
        assert!(t.f0.iter().all(|f| *f == 0.0));
    }

    #[test]
    fn synthetic_vowel_200hz() {
        let tract = synth::formant_lpc(&[(700.0, 80.0), (1200.0, 90.0), (2500.0, 150.0)], 16000);
        let (w, _) = synth::impulse_vowel(&tract, 80, 0, 12000, 16000);
        let t = estimate_pitch(&w, &PitchConfig::default()).unwrap();
        for k in 1..t.len() - 1 {
            assert!((t.f0[k] - 200.0).abs() <= 4.0, "hop {k}: {}", t.f0[k]);
        }
    }

    #[test]
    fn track_invariants_and_errors() {
        let w = Waveform::new(vec![0.0; 100], 16000).unwrap();
        assert!(matches!(
            estimate_pitch(&w, &PitchConfig::default()),
            Err(Error::TooShort(_))
        ));
        let w = Waveform::new(vec![0.0; 8000], 4000).unwrap();
        assert!(estimate_pitch(&w, &PitchConfig::default()).is_err());

        let silent = Waveform::new(vec![0.0; 8000], 16000).unwrap();
        let t = estimate_pitch(&silent, &PitchConfig::default()).unwrap();
        assert!(t.voicing.iter().all(|v| !v));

        let w = Waveform::new(synth::sawtooth(150.0, 16000, 8000), 16000).unwrap();
        let t = estimate_pitch(&w, &PitchConfig::default()).unwrap();
        for (f, v) in t.f0.iter().zip(&t.voicing) {
            assert_eq!(*v, *f > 0.0);
            assert!(*f == 0.0 || (50.0..=500.0).contains(f));
        }
    }
}
