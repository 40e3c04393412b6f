//! Linear prediction: analysis, inverse filtering and all-pole synthesis.
//!
//! Coefficients use the prediction convention `x̂[n] = Σ a_k x[n-k]`, so the
//! inverse filter is `A(z) = 1 - Σ a_k z^-k` and the synthesis filter `1/A(z)`.
//! Filter history is always passed oldest-first: `history[p-1]` is the sample
//! immediately preceding the frame.

mod lsf;

pub use lsf::{enforce_lsf_order, lpc_to_lsf, lsf_to_lpc, LsfVector, LSF_MIN_GAP};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Bandwidth expansion factor applied to marginally stable models.
pub const BANDWIDTH_EXPANSION: f64 = 0.994;

/// All-pole vocal-tract model.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcModel {
    pub coeffs: Vec<f64>,
    /// Residual RMS.
    pub gain: f64,
}

impl LpcModel {
    pub fn new(coeffs: Vec<f64>, gain: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Size("LPC order must be positive".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) || !gain.is_finite() || gain < 0.0 {
            return Err(Error::DegenerateSignal("non-finite LPC parameters".into()));
        }
        Ok(Self { coeffs, gain })
    }

    /// Identity filter of the given order.
    pub fn flat(order: usize, gain: f64) -> Self {
        Self {
            coeffs: vec![0.0; order],
            gain,
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    /// Strict stability by the step-down test: every reflection coefficient
    /// has magnitude below 1.
    pub fn is_stable(&self) -> bool {
        self.reflection_coefficients().is_some()
    }

    /// Reflection coefficients from the step-down recursion, first stage
    /// first. `None` as soon as one has magnitude 1 or more, i.e. when the
    /// synthesis filter is not strictly stable.
    pub fn reflection_coefficients(&self) -> Option<Vec<f64>> {
        let mut a = self.coeffs.clone();
        let mut k = Vec::with_capacity(a.len());
        while let Some(&km) = a.last() {
            let d = 1.0 - km * km;
            if !(d > 0.0) {
                return None;
            }
            k.push(km);
            let m = a.len() - 1;
            a = (0..m).map(|i| (a[i] + km * a[m - 1 - i]) / d).collect();
        }
        k.reverse();
        Some(k)
    }

    /// Scales the pole radii by `gamma` (`a_k <- a_k * gamma^k`).
    pub fn bandwidth_expanded(&self, gamma: f64) -> Self {
        let mut g = 1.0;
        let coeffs = self
            .coeffs
            .iter()
            .map(|a| {
                g *= gamma;
                a * g
            })
            .collect();
        Self {
            coeffs,
            gain: self.gain,
        }
    }

    /// Repeatedly bandwidth-expands until the model converts to LSFs.
    pub fn stabilized(&self, max_rounds: usize) -> Option<(Self, LsfVector)> {
        let mut m = self.clone();
        for _ in 0..=max_rounds {
            if let Ok(lsf) = lpc_to_lsf(&m) {
                return Some((m, lsf));
            }
            m = m.bandwidth_expanded(BANDWIDTH_EXPANSION);
        }
        None
    }
}

/// Prediction residual, the glottal-derivative estimate for voiced frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Residual {
    pub samples: Vec<f64>,
}

impl Residual {
    pub fn new(samples: Vec<f64>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Raw autocorrelation sums `r[k] = Σ x[n] x[n+k]` for `k = 0..=max_lag`.
pub fn autocorrelate(frame: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if frame.len() <= max_lag {
        return Err(Error::Size(format!(
            "frame of {} samples is too short for lag {}",
            frame.len(),
            max_lag
        )));
    }
    Ok((0..=max_lag)
        .map(|k| {
            frame[..frame.len() - k]
                .iter()
                .zip(&frame[k..])
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect())
}

/// Levinson-Durbin recursion on an autocorrelation sequence.
///
/// The returned gain is the square root of the final prediction-error power in
/// the units of `r`. If the error vanishes before order `p` the recursion stops
/// and the remaining coefficients are left at zero.
pub fn levinson_durbin(r: &[f64], p: usize) -> Result<LpcModel> {
    if p == 0 {
        return Err(Error::Size("LPC order must be positive".into()));
    }
    if r.len() < p + 1 {
        return Err(Error::Size(format!(
            "need {} autocorrelation lags, got {}",
            p + 1,
            r.len()
        )));
    }
    if !(r[0] > 0.0) || !r[0].is_finite() {
        return Err(Error::DegenerateSignal(format!("r[0] = {}", r[0])));
    }
    let mut a = vec![0.0; p];
    let mut prev = vec![0.0; p];
    let mut err = r[0];
    for i in 0..p {
        if err <= r[0] * 1e-15 {
            log::warn!("prediction error vanished at order {i}; padding with zeros");
            break;
        }
        let mut acc = r[i + 1];
        for j in 0..i {
            acc -= a[j] * r[i - j];
        }
        let k = acc / err;
        prev[..i].copy_from_slice(&a[..i]);
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
    }
    LpcModel::new(a, err.max(0.0).sqrt())
}

/// Hann window without zero endpoints.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / n as f64).cos())
        .collect()
}

/// Autocorrelation-method LPC over a Hann-windowed frame.
///
/// The autocorrelation is normalized by the window energy so the gain
/// approximates the residual RMS of the unwindowed signal.
pub fn analyze_autocorrelation(frame: &[f64], order: usize) -> Result<LpcModel> {
    if frame.len() <= order {
        return Err(Error::Size(format!(
            "frame of {} samples cannot support order {}",
            frame.len(),
            order
        )));
    }
    let w = hann(frame.len());
    let wsum: f64 = w.iter().map(|v| v * v).sum();
    let windowed: Vec<f64> = frame.iter().zip(&w).map(|(x, w)| x * w).collect();
    let mut r = autocorrelate(&windowed, order)?;
    for v in r.iter_mut() {
        *v /= wsum;
    }
    // white-noise correction
    r[0] *= 1.0 + 1e-9;
    levinson_durbin(&r, order)
}

/// Covariance-method LPC restricted to the sample indices in `ranges`.
///
/// `signal` must provide `order` samples before every index used; indices
/// below `order` are skipped. The gain is left at zero for the caller.
pub fn analyze_covariance(
    signal: &[f64],
    ranges: &[std::ops::Range<usize>],
    order: usize,
) -> Result<LpcModel> {
    let p = order;
    let mut phi = DMatrix::<f64>::zeros(p + 1, p + 1);
    let mut count = 0usize;
    for range in ranges {
        let lo = range.start.max(p);
        let hi = range.end.min(signal.len());
        for n in lo..hi {
            count += 1;
            for i in 0..=p {
                let xi = signal[n - i];
                for j in i..=p {
                    phi[(i, j)] += xi * signal[n - j];
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Size("empty covariance analysis interval".into()));
    }
    for i in 0..=p {
        for j in 0..i {
            phi[(i, j)] = phi[(j, i)];
        }
    }
    let mut lhs = phi.view((1, 1), (p, p)).into_owned();
    let rhs = DVector::from_iterator(p, (1..=p).map(|i| phi[(i, 0)]));
    let scale = (0..p).map(|i| lhs[(i, i)]).sum::<f64>() / p as f64;
    if !(scale > 0.0) {
        return Err(Error::DegenerateSignal("zero-energy covariance interval".into()));
    }
    let mut ridge = 0.0;
    for _ in 0..8 {
        if let Some(ch) = lhs.clone().cholesky() {
            let a = ch.solve(&rhs);
            return LpcModel::new(a.iter().copied().collect(), 0.0);
        }
        let add = if ridge == 0.0 { scale * 1e-12 } else { ridge * 100.0 };
        for i in 0..p {
            lhs[(i, i)] += add - ridge;
        }
        ridge = add;
    }
    Err(Error::DegenerateSignal("singular covariance matrix".into()))
}

/// Last `p` samples before `start`, zero-padded at the signal start.
pub fn history_at(signal: &[f64], start: usize, p: usize) -> Vec<f64> {
    let mut h = vec![0.0; p];
    let avail = start.min(p);
    h[p - avail..].copy_from_slice(&signal[start - avail..start]);
    h
}

fn check_history(m: &LpcModel, history: &[f64]) -> Result<()> {
    if history.len() != m.order() {
        return Err(Error::Size(format!(
            "history of {} samples for order {}",
            history.len(),
            m.order()
        )));
    }
    Ok(())
}

/// `e[n] = x[n] - Σ a_k x[n-k]`, with `history` supplying samples before the frame.
pub fn inverse_filter(frame: &[f64], m: &LpcModel, history: &[f64]) -> Result<Residual> {
    check_history(m, history)?;
    let p = m.order();
    let mut buf = Vec::with_capacity(p + frame.len());
    buf.extend_from_slice(history);
    buf.extend_from_slice(frame);
    let out = (0..frame.len())
        .map(|n| {
            let t = n + p;
            let pred: f64 = m
                .coeffs
                .iter()
                .enumerate()
                .map(|(k, a)| a * buf[t - k - 1])
                .sum();
            buf[t] - pred
        })
        .collect();
    Ok(Residual::new(out))
}

/// All-pole synthesis `y[n] = e[n] + Σ a_k y[n-k]`.
pub fn synthesize(m: &LpcModel, excitation: &Residual, history: &[f64]) -> Result<Vec<f64>> {
    check_history(m, history)?;
    let p = m.order();
    let mut buf = Vec::with_capacity(p + excitation.len());
    buf.extend_from_slice(history);
    for (n, e) in excitation.samples.iter().enumerate() {
        let t = n + p;
        let pred: f64 = m
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, a)| a * buf[t - k - 1])
            .sum();
        let y = e + pred;
        if !y.is_finite() {
            return Err(Error::SynthesisDivergence(n));
        }
        buf.push(y);
    }
    Ok(buf.split_off(p))
}

/// Log-magnitude envelope `20 log10(gain / |A(e^jω)|)` at `n_points` uniform
/// frequencies in `[0, π]`.
pub fn spectral_envelope(m: &LpcModel, n_points: usize) -> Vec<f64> {
    let n_points = n_points.max(2);
    let gain = m.gain.max(1e-10);
    (0..n_points)
        .map(|i| {
            let w = PI * i as f64 / (n_points - 1) as f64;
            let (mut re, mut im) = (1.0, 0.0);
            for (k, a) in m.coeffs.iter().enumerate() {
                let phase = w * (k + 1) as f64;
                re -= a * phase.cos();
                im += a * phase.sin();
            }
            let mag = (re * re + im * im).sqrt().max(1e-300);
            20.0 * (gain / mag).log10()
        })
        .collect()
}
