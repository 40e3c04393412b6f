//! Plain-text model files.
//!
//! ```text
//! vcmorph-model <version>
//! sample_rate <Hz>
//! features <order> <lsf|lpc> <log_gain 0|1>
//! excitation <predicted|passthrough>
//! normalize <0|1>
//! pitch <min_f0> <max_f0> <voicing_threshold> <hop_s> <window_s> <silence_db>
//! framing <unvoiced_hop_s> <min_f0>
//! closed_phase <fraction> <offset>
//! training <pairs> <vectors> <iterations> <log_likelihood> <converged 0|1>
//! split <p>
//! gmm <K> <dim> <full|diagonal>
//! weight <w>                 \
//! mean <dim values>           > once per component
//! covariance <dim² values>   /  (row-major)
//! prototypes <K> <L>
//! prototype <mean_period> <mean_gain> <L values>   (K lines)
//! end
//! ```
//!
//! Floats use the shortest representation that parses back to the same bits,
//! so a save/load round trip is exact.

use std::fs;
use std::path::Path;

use super::{ConversionModel, ExcitationPrototype, TrainingSummary};
use crate::audio::temp_path;
use crate::error::{Error, Result};
use crate::glottal::{ClosedPhaseConfig, FramingConfig, PitchConfig};
use crate::gmm::JointGmm;
use crate::textio::{TextReader, TextWriter};

use super::{AnalysisConfig, FeatureConfig};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "vcmorph-model";

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

pub fn model_to_text(m: &ConversionModel) -> String {
    let mut w = TextWriter::new();
    w.line(MAGIC, &[MODEL_FORMAT_VERSION.to_string()]);
    w.line("sample_rate", &[m.sample_rate.to_string()]);
    w.line(
        "features",
        &[
            m.features.order.to_string(),
            m.features.space.as_str().into(),
            flag(m.features.log_gain),
        ],
    );
    w.line("excitation", &[m.excitation.as_str().into()]);
    w.line("normalize", &[flag(m.normalize)]);
    let p = &m.analysis.pitch;
    w.floats(
        "pitch",
        [p.min_f0, p.max_f0, p.voicing_threshold, p.hop_seconds, p.window_seconds, p.silence_db],
    );
    w.floats("framing", [m.analysis.framing.unvoiced_hop_seconds, m.analysis.framing.min_f0]);
    w.line(
        "closed_phase",
        &[
            format!("{:e}", m.analysis.closed_phase.fraction),
            m.analysis.closed_phase.offset.to_string(),
        ],
    );
    let s = &m.summary;
    w.line(
        "training",
        &[
            s.pairs.to_string(),
            s.vectors.to_string(),
            s.iterations.to_string(),
            format!("{:e}", s.log_likelihood),
            flag(s.converged),
        ],
    );
    m.joint.write_text(&mut w);
    let l = m.prototypes.first().map_or(0, |p| p.samples.len());
    w.line("prototypes", &[m.prototypes.len().to_string(), l.to_string()]);
    for p in &m.prototypes {
        w.floats(
            "prototype",
            [p.mean_period, p.mean_gain].into_iter().chain(p.samples.iter().copied()),
        );
    }
    w.line("end", &[]);
    w.finish()
}

fn parse<T: std::str::FromStr>(r: &TextReader<'_>, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| r.error(format!("bad {what} `{s}`")))
}

fn parse_flag(r: &TextReader<'_>, s: &str) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(r.error(format!("expected 0 or 1, found `{s}`"))),
    }
}

pub fn model_from_text(text: &str) -> Result<ConversionModel> {
    let mut r = TextReader::new(text);
    if r.peek_key() != Some(MAGIC) {
        return Err(Error::IncompatibleModel("not a conversion model file".into()));
    }
    let version: u32 = {
        let v = r.expect_word(MAGIC)?;
        parse(&r, v, "format version")?
    };
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::IncompatibleModel(format!(
            "format version {version}, this build reads version {MODEL_FORMAT_VERSION}"
        )));
    }
    let sample_rate: u32 = {
        let v = r.expect_word("sample_rate")?;
        parse(&r, v, "sample rate")?
    };
    let f = r.expect("features")?;
    let features = match f.as_slice() {
        [order, space, log_gain] => FeatureConfig {
            order: parse(&r, order, "order")?,
            space: space.parse().map_err(|e: Error| r.error(e.to_string()))?,
            log_gain: parse_flag(&r, log_gain)?,
        },
        _ => return Err(r.error("`features` takes order, space and gain flag")),
    };
    let excitation = r
        .expect_word("excitation")?
        .parse()
        .map_err(|e: Error| r.error(e.to_string()))?;
    let normalize = {
        let v = r.expect_word("normalize")?;
        parse_flag(&r, v)?
    };
    let p = r.expect_floats("pitch", 6)?;
    let fr = r.expect_floats("framing", 2)?;
    let cp = r.expect("closed_phase")?;
    let closed_phase = match cp.as_slice() {
        [fraction, offset] => ClosedPhaseConfig {
            fraction: parse(&r, fraction, "closed-phase fraction")?,
            offset: parse(&r, offset, "closed-phase offset")?,
        },
        _ => return Err(r.error("`closed_phase` takes fraction and offset")),
    };
    let analysis = AnalysisConfig {
        pitch: PitchConfig {
            min_f0: p[0],
            max_f0: p[1],
            voicing_threshold: p[2],
            hop_seconds: p[3],
            window_seconds: p[4],
            silence_db: p[5],
        },
        framing: FramingConfig {
            unvoiced_hop_seconds: fr[0],
            min_f0: fr[1],
        },
        closed_phase,
    };
    let t = r.expect("training")?;
    let summary = match t.as_slice() {
        [pairs, vectors, iterations, ll, converged] => TrainingSummary {
            pairs: parse(&r, pairs, "pair count")?,
            vectors: parse(&r, vectors, "vector count")?,
            iterations: parse(&r, iterations, "iteration count")?,
            log_likelihood: parse(&r, ll, "log-likelihood")?,
            converged: parse_flag(&r, converged)?,
        },
        _ => return Err(r.error("`training` takes five fields")),
    };
    let joint = JointGmm::read_text(&mut r)?;
    let pr = r.expect("prototypes")?;
    let (k, l): (usize, usize) = match pr.as_slice() {
        [k, l] => (parse(&r, k, "prototype count")?, parse(&r, l, "prototype length")?),
        _ => return Err(r.error("`prototypes` takes count and length")),
    };
    let mut prototypes = Vec::with_capacity(k);
    for _ in 0..k {
        let v = r.expect_floats("prototype", l + 2)?;
        prototypes.push(ExcitationPrototype {
            mean_period: v[0],
            mean_gain: v[1],
            samples: v[2..].to_vec(),
        });
    }
    r.expect("end")?;
    if !r.at_end() {
        return Err(r.error("content after `end`"));
    }
    let model = ConversionModel {
        joint,
        prototypes,
        features,
        sample_rate,
        excitation,
        normalize,
        analysis,
        summary,
    };
    model.check()?;
    Ok(model)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_model(m: &ConversionModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = temp_path(path);
    if let Err(e) = fs::write(&tmp, model_to_text(m)) {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ConversionModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_text(&text)
}
