//! The TOML run configuration.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use vcmorph::conversion::ConversionConfig;
use vcmorph::eval::ExperimentSpec;
use vcmorph::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub seed: u64,
    /// Every corpus file must have this rate.
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    /// `error`, `warn`, `info`, `debug` or `trace`.
    #[serde(default = "default_log_level")]
    pub log_level: String,
    pub corpus: Option<CorpusSection>,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub gmm: GmmSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

fn default_rate() -> u32 {
    16000
}

fn default_log_level() -> String {
    "info".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub source_dir: PathBuf,
    pub target_dir: PathBuf,
    /// Load at most this many pairs (in id order).
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSection {
    /// Defaults to one pole pair per kHz plus two.
    pub order: Option<usize>,
    pub space: Option<String>,
    pub log_gain: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSection {
    pub components: Option<usize>,
    pub max_iters: Option<usize>,
    pub tolerance: Option<f64>,
    pub covariance: Option<String>,
    pub variance_floor: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub pairs: Option<usize>,
    pub excitation: Option<String>,
    pub prototype_len: Option<usize>,
    pub normalize: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub model: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub training_pairs: Option<Vec<usize>>,
    pub gaussians: Option<Vec<usize>>,
    pub eval_pairs: Option<usize>,
    pub timing_repeats: Option<usize>,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.log_filter()?;
        Ok(cfg)
    }

    /// Reads the file; relative corpus and output paths are taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(c) = cfg.corpus.as_mut() {
            rebase(&mut c.source_dir);
            rebase(&mut c.target_dir);
        }
        for p in [&mut cfg.output.model, &mut cfg.output.csv].into_iter().flatten() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn log_filter(&self) -> Result<log::LevelFilter> {
        self.log_level
            .parse()
            .map_err(|_| Error::Config(format!("unknown log level `{}`", self.log_level)))
    }

    pub fn conversion(&self) -> Result<ConversionConfig> {
        let mut c = ConversionConfig::for_rate(self.sample_rate).with_seed(self.seed);
        let f = &self.features;
        if let Some(o) = f.order {
            c.features.order = o;
        }
        if let Some(s) = &f.space {
            c.features.space = s.parse()?;
        }
        if let Some(g) = f.log_gain {
            c.features.log_gain = g;
        }
        let g = &self.gmm;
        if let Some(k) = g.components {
            c.em.components = k;
        }
        if let Some(n) = g.max_iters {
            c.em.max_iters = n;
        }
        if let Some(t) = g.tolerance {
            c.em.tolerance = t;
        }
        if let Some(s) = &g.covariance {
            c.em.covariance = s.parse()?;
        }
        if let Some(v) = g.variance_floor {
            c.em.variance_floor = v;
        }
        let t = &self.training;
        c.training_pairs = t.pairs;
        if let Some(e) = &t.excitation {
            c.excitation = e.parse()?;
        }
        if let Some(l) = t.prototype_len {
            c.prototype_len = l;
        }
        if let Some(n) = t.normalize {
            c.normalize = n;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn experiment(&self) -> ExperimentSpec {
        let d = ExperimentSpec::default();
        let e = &self.experiment;
        ExperimentSpec {
            training_pairs: e.training_pairs.clone().unwrap_or(d.training_pairs),
            gaussians: e.gaussians.clone().unwrap_or(d.gaussians),
            eval_pairs: e.eval_pairs.unwrap_or(d.eval_pairs),
            timing_repeats: e.timing_repeats.unwrap_or(d.timing_repeats),
        }
    }

    pub fn corpus(&self) -> Result<&CorpusSection> {
        self.corpus
            .as_ref()
            .ok_or_else(|| Error::Config("the configuration has no [corpus] section".into()))
    }
}
