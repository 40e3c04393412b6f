//! Deterministic synthetic speech: pulse-excited formant filters and a
//! two-speaker parallel corpus built from them.
//!
//! These signals have a known vocal tract and known closure instants, which
//! makes them usable as ground truth for the analysis stages.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;
use crate::corpus::{ParallelCorpus, UtterancePair};
use crate::error::Result;
use crate::lpc::LpcModel;

/// Band-limited sawtooth (harmonics below Nyquist), peak about 0.5.
pub fn sawtooth(f0: f64, sample_rate: u32, len: usize) -> Vec<f64> {
    let sr = sample_rate as f64;
    let harmonics = ((sr / 2.0) / f0).floor() as usize;
    (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let s: f64 = (1..=harmonics)
                .map(|k| {
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    sign * (2.0 * PI * k as f64 * f0 * t).sin() / k as f64
                })
                .sum();
            0.3 * s
        })
        .collect()
}

/// All-pole model whose poles sit at the given `(frequency Hz, bandwidth Hz)` pairs.
pub fn formant_lpc(formants: &[(f64, f64)], sample_rate: u32) -> LpcModel {
    let sr = sample_rate as f64;
    let mut poly = vec![1.0];
    for &(f, bw) in formants {
        let r = (-PI * bw / sr).exp();
        let theta = 2.0 * PI * f / sr;
        let sec = [1.0, -2.0 * r * theta.cos(), r * r];
        let mut next = vec![0.0; poly.len() + 2];
        for (i, a) in poly.iter().enumerate() {
            for (j, b) in sec.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        poly = next;
    }
    LpcModel {
        coeffs: poly[1..].iter().map(|c| -c).collect(),
        gain: 1.0,
    }
}

/// Shape of one glottal-flow-derivative cycle.
#[derive(Debug, Clone, Copy)]
pub struct PulseShape {
    /// Fraction of the period during which the glottis is open.
    pub open_quotient: f64,
    /// Fraction of the open phase spent rising to maximum flow.
    pub speed: f64,
    /// Exponential return-phase time constant in samples (0 = abrupt closure).
    pub return_tau: f64,
}

impl Default for PulseShape {
    fn default() -> Self {
        Self {
            open_quotient: 0.5,
            speed: 0.65,
            return_tau: 0.0,
        }
    }
}

/// Writes one derivative pulse whose negative peak lands on `gci`, opening
/// `open_len` samples earlier. Returns nothing; values are added to `out`.
fn add_pulse(out: &mut [f64], gci: usize, open_len: usize, shape: &PulseShape, amp: f64, next_open: usize) {
    let open_len = open_len.max(4);
    let tp = (shape.speed * open_len as f64).max(1.0);
    let tf = (open_len as f64 - tp).max(1.0);
    // normalize so the closure peak has magnitude `amp`
    let peak = PI / (2.0 * tf);
    let start = gci as isize - open_len as isize + 1;
    for i in 0..open_len {
        let n = start + i as isize;
        if n < 0 || n as usize >= out.len() {
            continue;
        }
        let t = i as f64 + 1.0;
        let d = if t <= tp {
            (PI / (2.0 * tp)) * (PI * t / tp).sin()
        } else {
            -(PI / (2.0 * tf)) * (PI * (t - tp) / (2.0 * tf)).sin()
        };
        out[n as usize] += amp * d / peak;
    }
    if shape.return_tau > 0.0 {
        let mut m = 1;
        while gci + m < out.len() && gci + m < next_open {
            let v = -amp * (-(m as f64) / shape.return_tau).exp();
            if v.abs() < amp * 1e-6 {
                break;
            }
            out[gci + m] += v;
            m += 1;
        }
    }
}

/// Glottal-derivative pulse train with closures at `gcis`.
pub fn pulse_train(len: usize, gcis: &[usize], periods: &[f64], shape: &PulseShape) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, &g) in gcis.iter().enumerate() {
        let t0 = periods[i];
        let open_len = (shape.open_quotient * t0).round() as usize;
        let next_open = gcis
            .get(i + 1)
            .map(|n| n + 1 - ((shape.open_quotient * periods[i + 1]).round() as usize).min(*n + 1))
            .unwrap_or(len);
        add_pulse(&mut out, g, open_len, shape, 1.0, next_open);
    }
    out
}

/// Constant-pitch vowel with a known filter.
#[derive(Debug, Clone)]
pub struct SyntheticVowel {
    pub waveform: Waveform,
    pub gcis: Vec<usize>,
    pub excitation: Vec<f64>,
    pub tract: LpcModel,
}

/// Renders `len` samples of a vowel: `tract` excited by pulses every `period`
/// samples starting at `first_gci`.
pub fn vowel(
    tract: &LpcModel,
    period: usize,
    first_gci: usize,
    len: usize,
    shape: &PulseShape,
    sample_rate: u32,
) -> SyntheticVowel {
    let gcis: Vec<usize> = (first_gci..len).step_by(period).collect();
    let periods = vec![period as f64; gcis.len()];
    let excitation = pulse_train(len, &gcis, &periods, shape);
    let y = crate::lpc::synthesize(
        tract,
        &crate::lpc::Residual::new(excitation.clone()),
        &vec![0.0; tract.order()],
    )
    .expect("stable synthetic tract");
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let scale = 0.5 / peak;
    SyntheticVowel {
        waveform: Waveform {
            samples: y.iter().map(|v| v * scale).collect(),
            sample_rate,
        },
        gcis,
        excitation: excitation.iter().map(|v| v * scale).collect(),
        tract: tract.clone(),
    }
}

/// Negative unit impulses every `period` samples starting at `offset`, passed
/// through `tract`.
pub fn impulse_vowel(tract: &LpcModel, period: usize, offset: usize, len: usize, sample_rate: u32) -> (Waveform, Vec<usize>) {
    let mut e = vec![0.0; len];
    let marks: Vec<usize> = (offset..len).step_by(period).collect();
    for &m in &marks {
        e[m] = -1.0;
    }
    let y = crate::lpc::synthesize(tract, &crate::lpc::Residual::new(e), &vec![0.0; tract.order()])
        .expect("stable synthetic tract");
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    (
        Waveform {
            samples: y.iter().map(|v| 0.5 * v / peak).collect(),
            sample_rate,
        },
        marks,
    )
}

/// Random stable vocal tract with `n_formants` resonances spread over the band.
pub fn random_tract(rng: &mut impl Rng, n_formants: usize, sample_rate: u32) -> LpcModel {
    let nyq = sample_rate as f64 / 2.0;
    let band = (nyq - 600.0) / n_formants as f64;
    let formants: Vec<(f64, f64)> = (0..n_formants)
        .map(|i| {
            let lo = 250.0 + i as f64 * band;
            (rng.gen_range(lo..lo + 0.8 * band), rng.gen_range(60.0..250.0))
        })
        .collect();
    formant_lpc(&formants, sample_rate)
}

/// Speaker-specific rendering parameters.
#[derive(Debug, Clone)]
pub struct SpeakerProfile {
    pub name: String,
    /// Multiplies every formant frequency.
    pub formant_scale: f64,
    pub bandwidth_scale: f64,
    pub f0: f64,
    pub pulse: PulseShape,
    /// Multiplies segment durations.
    pub tempo: f64,
    /// Stream id for duration jitter.
    pub jitter_stream: u64,
}

impl SpeakerProfile {
    pub fn male() -> Self {
        Self {
            name: "synth_m".into(),
            formant_scale: 1.0,
            bandwidth_scale: 1.0,
            f0: 110.0,
            pulse: PulseShape {
                open_quotient: 0.5,
                speed: 0.65,
                return_tau: 1.5,
            },
            tempo: 1.0,
            jitter_stream: 1,
        }
    }

    pub fn female() -> Self {
        Self {
            name: "synth_f".into(),
            formant_scale: 1.17,
            bandwidth_scale: 1.2,
            f0: 190.0,
            pulse: PulseShape {
                open_quotient: 0.6,
                speed: 0.7,
                return_tau: 2.5,
            },
            tempo: 1.1,
            jitter_stream: 2,
        }
    }
}

const VOWELS: [[(f64, f64); 5]; 5] = [
    [(730.0, 90.0), (1090.0, 110.0), (2440.0, 160.0), (3400.0, 250.0), (4500.0, 300.0)],
    [(270.0, 60.0), (2290.0, 100.0), (3010.0, 160.0), (3700.0, 250.0), (4600.0, 300.0)],
    [(300.0, 60.0), (870.0, 90.0), (2240.0, 150.0), (3300.0, 250.0), (4400.0, 300.0)],
    [(530.0, 70.0), (1840.0, 100.0), (2480.0, 160.0), (3500.0, 250.0), (4500.0, 300.0)],
    [(570.0, 80.0), (840.0, 90.0), (2410.0, 160.0), (3400.0, 250.0), (4500.0, 300.0)],
];

const FRICATIVE: [(f64, f64); 2] = [(3500.0, 600.0), (5500.0, 900.0)];

#[derive(Debug, Clone, Copy)]
enum Segment {
    Vowel(usize),
    Fricative,
    Silence,
}

fn utterance_plan(rng: &mut ChaCha8Rng) -> Vec<(Segment, f64)> {
    let mut plan = vec![(Segment::Silence, 0.08)];
    let n = rng.gen_range(4..=7);
    for i in 0..n {
        if i > 0 && rng.gen_bool(0.25) {
            plan.push((Segment::Fricative, rng.gen_range(0.06..0.11)));
        }
        plan.push((Segment::Vowel(rng.gen_range(0..VOWELS.len())), rng.gen_range(0.12..0.24)));
    }
    plan.push((Segment::Silence, 0.08));
    plan
}

struct Resonator {
    y1: f64,
    y2: f64,
}

/// Renders a segment plan with time-varying formants and a declining pitch contour.
fn render(plan: &[(Segment, f64)], speaker: &SpeakerProfile, sample_rate: u32, jitter: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = sample_rate as f64;
    // per-segment sample bounds
    let mut bounds = vec![0usize];
    for (_, dur) in plan {
        let d = dur * speaker.tempo * jitter.gen_range(0.85..1.15);
        bounds.push(bounds.last().unwrap() + (d * sr).round() as usize);
    }
    let len = *bounds.last().unwrap();
    let seg_at = |n: usize| bounds.windows(2).position(|w| n >= w[0] && n < w[1]).unwrap_or(plan.len() - 1);
    let voiced: Vec<bool> = (0..len).map(|n| matches!(plan[seg_at(n)].0, Segment::Vowel(_))).collect();

    // voiced excitation: closures accumulated along a declining contour
    let mut gcis = Vec::new();
    let mut periods = Vec::new();
    let mut t = 0.0f64;
    while (t as usize) < len {
        let frac = t / len as f64;
        let f0 = speaker.f0 * (1.08 - 0.16 * frac) * (1.0 + 0.02 * jitter.gen_range(-1.0..1.0));
        let period = sr / f0;
        let n = t as usize;
        if voiced[n] {
            gcis.push(n);
            periods.push(period);
        }
        t += period;
    }
    let mut excitation = pulse_train(len, &gcis, &periods, &speaker.pulse);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(jitter.gen());
    // amplitude ramps at voicing boundaries
    let ramp = (0.015 * sr) as usize;
    let mut env = vec![0.0; len];
    for (s, w) in bounds.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let level = match plan[s].0 {
            Segment::Vowel(_) => 1.0,
            Segment::Fricative => 0.0,
            Segment::Silence => 0.0,
        };
        for n in a..b {
            let edge = (n - a).min(b - 1 - n) as f64 / ramp as f64;
            env[n] = level * edge.min(1.0);
        }
    }
    for n in 0..len {
        excitation[n] *= env[n];
        match plan[seg_at(n)].0 {
            Segment::Fricative => excitation[n] += 0.08 * noise_rng.gen_range(-1.0..1.0),
            Segment::Silence => excitation[n] += 1e-4 * noise_rng.gen_range(-1.0..1.0),
            Segment::Vowel(_) => excitation[n] += 2e-3 * noise_rng.gen_range(-1.0..1.0),
        }
    }

    // formant targets per segment; transitions interpolate over 40 ms
    let target = |s: usize| -> Vec<(f64, f64)> {
        match plan[s].0 {
            Segment::Vowel(v) => VOWELS[v].to_vec(),
            Segment::Fricative | Segment::Silence => {
                // neighbouring vowel (or neutral) tract
                let v = plan[s + 1..]
                    .iter()
                    .chain(plan[..s].iter().rev())
                    .find_map(|(seg, _)| match seg {
                        Segment::Vowel(v) => Some(*v),
                        _ => None,
                    })
                    .unwrap_or(0);
                VOWELS[v].to_vec()
            }
        }
    };
    let trans = (0.04 * sr) as usize;
    let mut out = vec![0.0; len];
    let mut res: Vec<Resonator> = (0..5).map(|_| Resonator { y1: 0.0, y2: 0.0 }).collect();
    let mut fric: Vec<Resonator> = (0..2).map(|_| Resonator { y1: 0.0, y2: 0.0 }).collect();
    for n in 0..len {
        let s = seg_at(n);
        let mut formants = target(s);
        let into = n - bounds[s];
        if s > 0 && into < trans {
            let prev = target(s - 1);
            let a = 0.5 + 0.5 * into as f64 / trans as f64;
            for (f, p) in formants.iter_mut().zip(prev) {
                f.0 = a * f.0 + (1.0 - a) * p.0;
                f.1 = a * f.1 + (1.0 - a) * p.1;
            }
        }
        let to_end = bounds[s + 1] - n;
        if s + 1 < plan.len() && to_end <= trans {
            let next = target(s + 1);
            let a = 0.5 + 0.5 * to_end as f64 / trans as f64;
            for (f, q) in formants.iter_mut().zip(next) {
                f.0 = a * f.0 + (1.0 - a) * q.0;
                f.1 = a * f.1 + (1.0 - a) * q.1;
            }
        }
        let is_fric = matches!(plan[s].0, Segment::Fricative);
        let mut x = if is_fric { 0.0 } else { excitation[n] };
        for (r, (f, bw)) in res.iter_mut().zip(&formants) {
            let f = (f * speaker.formant_scale).min(0.45 * sr);
            let bw = bw * speaker.bandwidth_scale;
            let rad = (-PI * bw / sr).exp();
            let c1 = 2.0 * rad * (2.0 * PI * f / sr).cos();
            let c2 = -rad * rad;
            let g = 1.0 - c1 - c2;
            let y = g * x + c1 * r.y1 + c2 * r.y2;
            r.y2 = r.y1;
            r.y1 = y;
            x = y;
        }
        let mut fx = if is_fric { excitation[n] } else { 0.0 };
        for (r, (f, bw)) in fric.iter_mut().zip(FRICATIVE.iter()) {
            let f = (f * speaker.formant_scale.sqrt()).min(0.45 * sr);
            let rad = (-PI * bw / sr).exp();
            let c1 = 2.0 * rad * (2.0 * PI * f / sr).cos();
            let c2 = -rad * rad;
            let y = fx + c1 * r.y1 + c2 * r.y2;
            r.y2 = r.y1;
            r.y1 = y;
            fx = y;
        }
        out[n] = x + 0.05 * fx;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    out.iter().map(|v| 0.8 * v / peak).collect()
}

/// Renders utterance `index` for `speaker`. The phone sequence depends only
/// on `(seed, index)`; durations also depend on the speaker.
pub fn render_utterance(seed: u64, index: usize, speaker: &SpeakerProfile, sample_rate: u32) -> Waveform {
    let mut plan_rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let plan = utterance_plan(&mut plan_rng);
    let mut jitter = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    jitter.set_stream(speaker.jitter_stream);
    Waveform {
        samples: render(&plan, speaker, sample_rate, &mut jitter),
        sample_rate,
    }
}

/// Parallel corpus of `n` utterances spoken by two synthetic speakers.
pub fn parallel_corpus(
    n: usize,
    source: &SpeakerProfile,
    target: &SpeakerProfile,
    sample_rate: u32,
    seed: u64,
) -> Result<ParallelCorpus> {
    let pairs = (0..n)
        .map(|i| {
            UtterancePair::new(
                format!("synth_{:04}", i + 1),
                render_utterance(seed, i, source, sample_rate),
                render_utterance(seed, i, target, sample_rate),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    ParallelCorpus::new(source.name.clone(), target.name.clone(), pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formant_filter_is_stable() {
        let m = formant_lpc(&VOWELS[0], 16000);
        assert_eq!(m.order(), 10);
        assert!(m.is_stable());
    }

    #[test]
    fn pulse_peak_on_gci() {
        let e = pulse_train(400, &[150, 310], &[160.0, 160.0], &PulseShape::default());
        let imin = (100..200).min_by(|a, b| e[*a].partial_cmp(&e[*b]).unwrap()).unwrap();
        assert_eq!(imin, 150);
        assert!((e[150] + 1.0).abs() < 1e-12);
        // abrupt closure: closed phase is silent
        assert!(e[151..230].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = parallel_corpus(2, &SpeakerProfile::male(), &SpeakerProfile::female(), 16000, 5).unwrap();
        let b = parallel_corpus(2, &SpeakerProfile::male(), &SpeakerProfile::female(), 16000, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.pairs[0].source.peak() <= 0.8 + 1e-12);
        assert_ne!(a.pairs[0].source.len(), a.pairs[0].target.len());
    }
}
