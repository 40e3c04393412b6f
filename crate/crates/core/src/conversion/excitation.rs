use crate::error::{Error, Result};
use crate::lpc::{rms, Residual};

/// Default prototype length in samples (two normalized pitch periods).
pub const PROTOTYPE_LEN: usize = 256;

/// How converted frames are excited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExcitationMode {
    /// Responsibility-weighted target residual prototypes, stretched to the
    /// source pitch and scaled to the source residual energy.
    #[default]
    Predicted,
    /// The source residual, unchanged.
    Passthrough,
}

impl ExcitationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExcitationMode::Predicted => "predicted",
            ExcitationMode::Passthrough => "passthrough",
        }
    }
}

impl std::str::FromStr for ExcitationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(ExcitationMode::Predicted),
            "passthrough" => Ok(ExcitationMode::Passthrough),
            other => Err(Error::Config(format!("unknown excitation mode `{other}`"))),
        }
    }
}

/// Unit-RMS two-period residual template for one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationPrototype {
    pub samples: Vec<f64>,
    /// Responsibility-weighted mean pitch period of the target frames, samples.
    pub mean_period: f64,
    /// Responsibility-weighted mean residual RMS of the target frames.
    pub mean_gain: f64,
}

/// Linear-interpolation resampling of one cycle of a periodic signal to `n`
/// samples. Output sample `i` reads the input at `i · len / n`.
pub fn resample_periodic(x: &[f64], n: usize) -> Vec<f64> {
    if x.is_empty() || n == 0 {
        return vec![0.0; n];
    }
    let len = x.len();
    (0..n)
        .map(|i| {
            let t = i as f64 * len as f64 / n as f64;
            let k = t.floor() as usize;
            let frac = t - k as f64;
            let a = x[k % len];
            let b = x[(k + 1) % len];
            a + frac * (b - a)
        })
        .collect()
}

/// Scales `x` to unit RMS; silent input stays silent.
pub(crate) fn unit_rms(mut x: Vec<f64>) -> Vec<f64> {
    let r = rms(&x);
    if r > 0.0 {
        for v in &mut x {
            *v /= r;
        }
    }
    x
}

/// Accumulates responsibility-weighted, length-normalized target residuals.
pub(crate) struct PrototypeAccumulator {
    len: usize,
    sums: Vec<Vec<f64>>,
    weight: Vec<f64>,
    period: Vec<f64>,
    gain: Vec<f64>,
    pooled: Vec<f64>,
}

impl PrototypeAccumulator {
    pub fn new(k: usize, len: usize) -> Self {
        Self {
            len,
            sums: vec![vec![0.0; len]; k],
            weight: vec![0.0; k],
            period: vec![0.0; k],
            gain: vec![0.0; k],
            pooled: vec![0.0; len],
        }
    }

    pub fn add(&mut self, residual: &[f64], period: f64, responsibilities: &[f64]) {
        let r = rms(residual);
        if r <= 0.0 {
            return;
        }
        let shape = unit_rms(resample_periodic(residual, self.len));
        for (p, s) in self.pooled.iter_mut().zip(&shape) {
            *p += s;
        }
        for (k, h) in responsibilities.iter().enumerate() {
            if *h == 0.0 {
                continue;
            }
            for (acc, s) in self.sums[k].iter_mut().zip(&shape) {
                *acc += h * s;
            }
            self.weight[k] += h;
            self.period[k] += h * period;
            self.gain[k] += h * r;
        }
    }

    /// Components that received no usable residual fall back to the pooled
    /// average over all frames.
    pub fn finish(self) -> Result<Vec<ExcitationPrototype>> {
        let pooled = unit_rms(self.pooled);
        if rms(&pooled) == 0.0 {
            return Err(Error::InsufficientData(
                "no voiced target residual to build excitation prototypes".into(),
            ));
        }
        let total_w: f64 = self.weight.iter().sum();
        let mean_period = self.period.iter().sum::<f64>() / total_w;
        let mean_gain = self.gain.iter().sum::<f64>() / total_w;
        Ok(self
            .sums
            .into_iter()
            .enumerate()
            .map(|(k, s)| {
                let w = self.weight[k];
                let shape = unit_rms(s);
                if w > 1e-12 && rms(&shape) > 0.0 {
                    ExcitationPrototype {
                        samples: shape,
                        mean_period: self.period[k] / w,
                        mean_gain: self.gain[k] / w,
                    }
                } else {
                    log::warn!("component {k} has no target residuals; using the pooled prototype");
                    ExcitationPrototype {
                        samples: pooled.clone(),
                        mean_period,
                        mean_gain,
                    }
                }
            })
            .collect())
    }
}

/// Excitation for one frame of length `round(2 · pitch_period)`: the
/// responsibility-weighted blend of prototypes, normalized to unit RMS,
/// stretched to the frame and scaled to the RMS of `source_residual`.
pub fn predict_excitation(
    prototypes: &[ExcitationPrototype],
    responsibilities: &[f64],
    source_residual: &Residual,
    pitch_period: f64,
) -> Result<Residual> {
    if prototypes.is_empty() || responsibilities.len() != prototypes.len() {
        return Err(Error::Shape(format!(
            "{} responsibilities for {} prototypes",
            responsibilities.len(),
            prototypes.len()
        )));
    }
    let total: f64 = responsibilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 || responsibilities.iter().any(|h| *h < 0.0) {
        return Err(Error::Config(format!("responsibilities sum to {total}")));
    }
    if !(pitch_period > 0.0) {
        return Err(Error::Config(format!("pitch period {pitch_period} must be positive")));
    }
    let len = prototypes[0].samples.len();
    let mut blend = vec![0.0; len];
    for (p, h) in prototypes.iter().zip(responsibilities) {
        if *h == 0.0 {
            continue;
        }
        for (b, s) in blend.iter_mut().zip(&p.samples) {
            *b += h * s;
        }
    }
    let n = (2.0 * pitch_period).round() as usize;
    let shaped = unit_rms(resample_periodic(&blend, n));
    let g = source_residual.rms();
    Ok(Residual::new(shaped.into_iter().map(|v| v * g).collect()))
}
