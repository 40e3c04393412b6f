use crate::align::{dtw_align, FeatureSequence};
use crate::audio::Waveform;
use crate::conversion::default_order;
use crate::error::{Error, Result};
use crate::glottal::{detect_gci, estimate_pitch, frame_pitch_synchronous, full_frame_lpc_lsf, FramingConfig, PitchConfig};
use crate::lpc::spectral_envelope;

/// Value reported when the test signal matches the reference exactly.
pub const SNR_CAP_DB: f64 = 100.0;
/// Largest global offset searched when lining up test against reference.
pub const MAX_LAG_SECONDS: f64 = 0.02;
/// Envelope samples over `[0, π]` per frame.
pub const ENVELOPE_POINTS: usize = 512;

fn check_pair(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySignal("metric needs two nonempty signals".into()));
    }
    if a.sample_rate != b.sample_rate {
        return Err(Error::RateMismatch {
            context: "metric inputs".into(),
            expected: a.sample_rate,
            found: b.sample_rate,
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lag in `-max..=max` maximizing `|Σ r[n] t[n + lag]|`; ties go to the
/// smallest `|lag|`, then to the negative one.
fn best_lag(r: &[f64], t: &[f64], max: usize) -> isize {
    let corr = |lag: isize| -> f64 {
        let (r0, t0) = if lag >= 0 { (0, lag as usize) } else { ((-lag) as usize, 0) };
        if r0 >= r.len() || t0 >= t.len() {
            return 0.0;
        }
        let n = (r.len() - r0).min(t.len() - t0);
        dot(&r[r0..r0 + n], &t[t0..t0 + n]).abs()
    };
    let mut best = (corr(0), 0isize);
    for m in 1..=max as isize {
        for lag in [-m, m] {
            let c = corr(lag);
            if c > best.0 {
                best = (c, lag);
            }
        }
    }
    best.1
}

/// Signal-to-noise ratio of `test` against `reference`, in dB.
///
/// `test` is first shifted by the lag (within ±20 ms) that maximizes its
/// cross-correlation with the reference, zero-filled where it runs out. The
/// reference-aligned part of the shifted test is its orthogonal projection
/// `s·r`; everything else counts as noise:
/// `10·log10(‖s·r‖² / ‖t − s·r‖²)`. The value is independent of the test's
/// scale and is clamped to ±100 dB.
pub fn snr_db(reference: &Waveform, test: &Waveform) -> Result<f64> {
    check_pair(reference, test)?;
    let r = &reference.samples;
    let energy = dot(r, r);
    if energy == 0.0 {
        return Err(Error::UndefinedReference("reference signal has zero energy".into()));
    }
    let max = (MAX_LAG_SECONDS * reference.sample_rate as f64).round() as usize;
    let lag = best_lag(r, &test.samples, max);
    let aligned: Vec<f64> = (0..r.len())
        .map(|n| {
            let k = n as isize + lag;
            if k >= 0 && (k as usize) < test.len() {
                test.samples[k as usize]
            } else {
                0.0
            }
        })
        .collect();
    let s = dot(&aligned, r) / energy;
    let signal = s * s * energy;
    let noise: f64 = aligned.iter().zip(r).map(|(t, x)| (t - s * x).powi(2)).sum();
    let db = if noise == 0.0 {
        if signal > 0.0 {
            SNR_CAP_DB
        } else {
            -SNR_CAP_DB
        }
    } else if signal == 0.0 {
        -SNR_CAP_DB
    } else {
        10.0 * (signal / noise).log10()
    };
    Ok(db.clamp(-SNR_CAP_DB, SNR_CAP_DB))
}

/// LSF features and log envelopes of the voiced pitch-synchronous frames of
/// one utterance. Envelopes come from autocorrelation LPC over the whole
/// Hann-windowed frame.
fn voiced_envelopes(w: &Waveform) -> Result<(FeatureSequence, Vec<Vec<f64>>)> {
    let order = default_order(w.sample_rate);
    let no_speech = || Error::NoSpeech(format!("no voiced frames in a {:.2} s signal", w.duration_secs()));
    let track = match estimate_pitch(w, &PitchConfig::default()) {
        Ok(t) => t,
        Err(Error::TooShort(_)) => return Err(no_speech()),
        Err(e) => return Err(e),
    };
    let marks = detect_gci(w, &track);
    let frames = frame_pitch_synchronous(w, &marks, &track, &FramingConfig::default())?;
    let (mut vecs, mut timing, mut env) = (Vec::new(), Vec::new(), Vec::new());
    for f in frames.iter().filter(|f| f.voiced) {
        let (m, lsf) = full_frame_lpc_lsf(f, order)?;
        vecs.push(lsf.into_inner());
        timing.push(f.start);
        env.push(spectral_envelope(&m, ENVELOPE_POINTS));
    }
    if vecs.is_empty() {
        return Err(no_speech());
    }
    let n = vecs.len();
    Ok((FeatureSequence::new(vecs, timing, vec![true; n])?, env))
}

/// Voiced-frame features and envelopes of a reference utterance, computed
/// once for repeated distortion measurements against it.
pub struct SpectralReference {
    sample_rate: u32,
    features: FeatureSequence,
    envelopes: Vec<Vec<f64>>,
}

impl SpectralReference {
    pub fn new(w: &Waveform) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::EmptySignal("metric needs two nonempty signals".into()));
        }
        let (features, envelopes) = voiced_envelopes(w)?;
        Ok(Self {
            sample_rate: w.sample_rate,
            features,
            envelopes,
        })
    }

    /// Average distortion of `test` against this reference, with the number
    /// of aligned frame pairs.
    pub fn distortion(&self, test: &Waveform) -> Result<(f64, usize)> {
        if test.is_empty() {
            return Err(Error::EmptySignal("metric needs two nonempty signals".into()));
        }
        if test.sample_rate != self.sample_rate {
            return Err(Error::RateMismatch {
                context: "metric inputs".into(),
                expected: self.sample_rate,
                found: test.sample_rate,
            });
        }
        let (ft, et) = voiced_envelopes(test)?;
        let path = dtw_align(&ft, &self.features)?;
        let total: f64 = path
            .pairs
            .iter()
            .map(|&(i, j)| {
                let ms = et[i]
                    .iter()
                    .zip(&self.envelopes[j])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    / ENVELOPE_POINTS as f64;
                ms.sqrt()
            })
            .sum();
        Ok((total / path.pairs.len() as f64, path.pairs.len()))
    }
}

/// Average spectral distortion with the number of aligned frame pairs.
pub fn spectral_distortion_detail(a: &Waveform, b: &Waveform) -> Result<(f64, usize)> {
    check_pair(a, b)?;
    SpectralReference::new(b)?.distortion(a)
}

/// Mean over DTW-aligned voiced frames of the RMS difference (dB) between
/// the two utterances' LPC envelopes at 512 frequencies. Frames are aligned
/// on their line spectral frequencies.
pub fn avg_spectral_distortion(a: &Waveform, b: &Waveform) -> Result<f64> {
    spectral_distortion_detail(a, b).map(|(d, _)| d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn speech() -> Waveform {
        synth::render_utterance(3, 0, &synth::SpeakerProfile::male(), 16000)
    }

    #[test]
    fn identical_signals_hit_the_cap() {
        let w = speech();
        assert_eq!(snr_db(&w, &w).unwrap(), SNR_CAP_DB);
    }

    #[test]
    fn constructed_noise_ratio() {
        let r = noise(1, 40000);
        let mut n = noise(2, 40000);
        // make the noise orthogonal to the reference and exactly a tenth of its power
        let k = dot(&n, &r) / dot(&r, &r);
        for (v, x) in n.iter_mut().zip(&r) {
            *v -= k * x;
        }
        let scale = (dot(&r, &r) / 10.0 / dot(&n, &n)).sqrt();
        let t: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + scale * b).collect();
        let snr = snr_db(&Waveform::new(r, 16000).unwrap(), &Waveform::new(t, 16000).unwrap()).unwrap();
        assert!((snr - 10.0).abs() < 0.1, "{snr}");
    }

    #[test]
    fn decreasing_in_noise_power() {
        let w = speech();
        let n = noise(5, w.len());
        let mut last = f64::INFINITY;
        for a in [0.001, 0.003, 0.01, 0.03, 0.1, 0.3] {
            let t: Vec<f64> = w.samples.iter().zip(&n).map(|(x, e)| x + a * e).collect();
            let s = snr_db(&w, &Waveform::new(t, 16000).unwrap()).unwrap();
            assert!(s < last, "{s} after {last}");
            last = s;
        }
    }

    #[test]
    fn invariant_to_scale_and_lag() {
        let w = speech();
        let n = noise(6, w.len() + 400);
        let noisy: Vec<f64> = w.samples.iter().zip(&n).map(|(x, e)| x + 0.05 * e).collect();
        let base = snr_db(&w, &Waveform::new(noisy.clone(), 16000).unwrap()).unwrap();
        let scaled: Vec<f64> = noisy.iter().map(|v| -3.7 * v).collect();
        let s = snr_db(&w, &Waveform::new(scaled, 16000).unwrap()).unwrap();
        assert!((s - base).abs() < 1e-9);
        for shift in [1usize, 57, 320] {
            let mut delayed = vec![0.0; shift];
            delayed.extend(&noisy);
            let s = snr_db(&w, &Waveform::new(delayed, 16000).unwrap()).unwrap();
            assert!((s - base).abs() < 1e-9, "shift {shift}: {s} vs {base}");
        }
    }

    #[test]
    fn snr_errors() {
        let z = Waveform::new(vec![0.0; 100], 16000).unwrap();
        let w = Waveform::new(vec![1.0; 100], 16000).unwrap();
        assert!(matches!(snr_db(&z, &w), Err(Error::UndefinedReference(_))));
        let other = Waveform::new(vec![1.0; 100], 8000).unwrap();
        assert!(matches!(snr_db(&w, &other), Err(Error::RateMismatch { .. })));
        assert_eq!(snr_db(&w, &z).unwrap(), -SNR_CAP_DB);
    }

    #[test]
    fn distortion_of_identical_and_scaled_signals() {
        let w = speech();
        let (d, frames) = spectral_distortion_detail(&w, &w).unwrap();
        assert_eq!(d, 0.0);
        assert!(frames > 10);
        for g in [0.5, 2.0] {
            let scaled = Waveform::new(w.samples.iter().map(|v| v * g).collect(), 16000).unwrap();
            let d = avg_spectral_distortion(&w, &scaled).unwrap();
            let want = 20.0 * f64::log10(g).abs();
            assert!((d - want).abs() < 1e-9, "{d} vs {want}");
        }
    }

    #[test]
    fn distortion_needs_voicing() {
        let w = speech();
        let z = Waveform::new(noise(9, 16000).iter().map(|v| 0.1 * v).collect(), 16000).unwrap();
        assert!(matches!(avg_spectral_distortion(&w, &z), Err(Error::NoSpeech(_))));
    }
}
