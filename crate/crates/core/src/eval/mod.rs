//! Objective metrics and the training-size × mixture-size experiment grid.

mod metrics;

pub use metrics::{
    avg_spectral_distortion, snr_db, spectral_distortion_detail, SpectralReference, ENVELOPE_POINTS,
    MAX_LAG_SECONDS, SNR_CAP_DB,
};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::audio::{temp_path, Waveform};
use crate::conversion::{
    analyze_corpus, analyze_source, convert_analyzed, train_analyzed, ConversionConfig, ConversionReport, CorpusAnalysis,
    SourceAnalysis,
};
use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};

/// How SNR is computed, printed alongside every report.
pub const SNR_DEFINITION: &str = "snr_db = 10*log10(|s*r|^2 / |t - s*r|^2), t = test shifted by the best \
cross-correlation lag within 20 ms, s*r = projection of t onto the reference r";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub snr_db: f64,
    pub avg_spectral_distortion: f64,
    pub frames_compared: usize,
    pub flagged_frames: usize,
}

impl EvalReport {
    /// `key value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "snr_db {}", self.snr_db);
        let _ = writeln!(s, "avg_sd {}", self.avg_spectral_distortion);
        let _ = writeln!(s, "frames_compared {}", self.frames_compared);
        let _ = writeln!(s, "flagged_frames {}", self.flagged_frames);
        s
    }
}

/// SNR of `converted` against `reference` and their spectral distortion.
pub fn evaluate(converted: &Waveform, reference: &Waveform, flagged_frames: usize) -> Result<EvalReport> {
    evaluate_against(converted, reference, &SpectralReference::new(reference)?, flagged_frames)
}

fn evaluate_against(
    converted: &Waveform,
    reference: &Waveform,
    spectral: &SpectralReference,
    flagged_frames: usize,
) -> Result<EvalReport> {
    let snr = snr_db(reference, converted)?;
    let (sd, frames) = spectral.distortion(converted)?;
    Ok(EvalReport {
        snr_db: snr,
        avg_spectral_distortion: sd,
        frames_compared: frames,
        flagged_frames,
    })
}

/// One cell of the grid. Metrics are `None` when the cell failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub training_pairs: usize,
    pub gaussians: usize,
    pub time_s: f64,
    pub snr_db: Option<f64>,
    pub avg_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentGrid {
    pub rows: Vec<ExperimentRow>,
}

pub const CSV_HEADER: [&str; 5] = ["training_pairs", "gaussians", "time_s", "snr_db", "avg_sd"];

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

impl ExperimentGrid {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.training_pairs.to_string(),
                r.gaussians.to_string(),
                r.time_s.to_string(),
                opt(r.snr_db),
                opt(r.avg_sd),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?;
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Csv(format!("unexpected header {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let bad = |what: &str| Error::Csv(format!("row {}: bad {what}", i + 1));
            let field = |k: usize| rec.get(k).unwrap_or("");
            let float = |k: usize, what: &str| -> Result<Option<f64>> {
                match field(k) {
                    "" => Ok(None),
                    s => s.parse().map(Some).map_err(|_| bad(what)),
                }
            };
            rows.push(ExperimentRow {
                training_pairs: field(0).parse().map_err(|_| bad("training_pairs"))?,
                gaussians: field(1).parse().map_err(|_| bad("gaussians"))?,
                time_s: field(2).parse().map_err(|_| bad("time_s"))?,
                snr_db: float(3, "snr_db")?,
                avg_sd: float(4, "avg_sd")?,
            });
        }
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = temp_path(path);
        if let Err(e) = fs::write(&tmp, self.to_csv()?) {
            let _ = fs::remove_file(&tmp);
            return Err(Error::io(path, e));
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Fixed-width console table. The subjective quality column of a
    /// listening test cannot be computed and is shown as `n/a`.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:>14} {:>9} {:>10} {:>9} {:>9} {:>8}\n",
            "training_pairs", "gaussians", "time_s", "snr_db", "avg_sd", "mos"
        );
        let f = |v: Option<f64>| v.map_or("failed".to_string(), |x| format!("{x:.3}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>14} {:>9} {:>10.2} {:>9} {:>9} {:>8}",
                r.training_pairs,
                r.gaussians,
                r.time_s,
                f(r.snr_db),
                f(r.avg_sd),
                "n/a"
            );
        }
        s.push_str("mos: subjective listening scores are not computed\n");
        s
    }
}

/// Grid axes and evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub training_pairs: Vec<usize>,
    pub gaussians: Vec<usize>,
    /// Held-out pairs taken from the end of the corpus. Zero evaluates each
    /// cell on its own training pairs.
    pub eval_pairs: usize,
    /// Back-to-back runs of each cell; the fastest is reported. Metrics are
    /// identical across runs.
    pub timing_repeats: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            training_pairs: vec![2, 8],
            gaussians: vec![1, 3, 5, 10],
            eval_pairs: 2,
            timing_repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub training_pairs: usize,
    pub gaussians: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub grid: ExperimentGrid,
    pub failures: Vec<CellFailure>,
}

/// A held-out utterance with everything about it that no model changes.
struct EvalItem<'a> {
    source: SourceAnalysis,
    target: &'a Waveform,
    spectral: SpectralReference,
}

/// Trains and converts every evaluation source; the part of a cell that is
/// timed.
fn execute_cell(
    corpus: &CorpusAnalysis,
    eval: &[EvalItem<'_>],
    cfg: &ConversionConfig,
) -> Result<Vec<(Waveform, ConversionReport)>> {
    let model = train_analyzed(corpus, cfg)?;
    eval.par_iter().map(|item| convert_analyzed(&model, &item.source)).collect()
}

fn score_cell(eval: &[EvalItem<'_>], converted: &[(Waveform, ConversionReport)]) -> Result<(f64, f64)> {
    let scores: Vec<(f64, f64)> = eval
        .par_iter()
        .zip(converted)
        .map(|(item, (w, report))| {
            let r = evaluate_against(w, item.target, &item.spectral, report.flagged_frames)?;
            Ok((r.snr_db, r.avg_spectral_distortion))
        })
        .collect::<Result<_>>()?;
    let n = scores.len() as f64;
    Ok((
        scores.iter().map(|s| s.0).sum::<f64>() / n,
        scores.iter().map(|s| s.1).sum::<f64>() / n,
    ))
}

/// Trains and evaluates one model per (training pairs, K) cell, in order.
///
/// Utterances are analysed once up front, since analysis does not depend on
/// the mixture. Each cell's wall time is the execution time of the system:
/// fitting the mixture and prototypes and converting the evaluation
/// utterances, the fastest of `timing_repeats` runs. Scoring is not timed. A failing cell is recorded and the
/// remaining cells still run.
pub fn run_experiment(
    corpus: &ParallelCorpus,
    spec: &ExperimentSpec,
    base: &ConversionConfig,
) -> Result<ExperimentOutcome> {
    if spec.training_pairs.is_empty() || spec.gaussians.is_empty() {
        return Err(Error::Config("experiment grid has an empty axis".into()));
    }
    if spec.timing_repeats == 0 {
        return Err(Error::Config("timing repeats must be positive".into()));
    }
    let max_train = *spec.training_pairs.iter().max().unwrap();
    if corpus.len() < max_train + spec.eval_pairs {
        return Err(Error::Config(format!(
            "corpus has {} pairs; the grid needs {max_train} for training plus {} held out",
            corpus.len(),
            spec.eval_pairs
        )));
    }
    let start = Instant::now();
    let mut shared = base.clone();
    shared.training_pairs = Some(max_train);
    let analysed = analyze_corpus(corpus, &shared)?;
    let eval_range = if spec.eval_pairs == 0 { 0..max_train } else { corpus.len() - spec.eval_pairs..corpus.len() };
    let eval: Vec<EvalItem<'_>> = corpus.pairs[eval_range]
        .par_iter()
        .map(|p| {
            Ok(EvalItem {
                source: analyze_source(&p.source, &base.features, &base.analysis, base.normalize)?,
                target: &p.target,
                spectral: SpectralReference::new(&p.target)?,
            })
        })
        .collect::<Result<_>>()?;
    log::info!("analysed the corpus in {:.2} s", start.elapsed().as_secs_f64());

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &n in &spec.training_pairs {
        for &k in &spec.gaussians {
            let mut cfg = base.clone().with_components(k);
            cfg.training_pairs = Some(n);
            let cell_eval = if spec.eval_pairs == 0 { &eval[..n] } else { &eval[..] };
            let start = Instant::now();
            let executed = execute_cell(&analysed, cell_eval, &cfg);
            let mut time_s = start.elapsed().as_secs_f64();
            if executed.is_ok() {
                for _ in 1..spec.timing_repeats {
                    let start = Instant::now();
                    let _ = execute_cell(&analysed, cell_eval, &cfg);
                    time_s = time_s.min(start.elapsed().as_secs_f64());
                }
            }
            let result = executed.and_then(|c| score_cell(cell_eval, &c));
            let (snr, sd) = match result {
                Ok((s, d)) => {
                    log::info!("pairs={n} K={k}: {time_s:.2} s, snr {s:.3} dB, sd {d:.3} dB");
                    (Some(s), Some(d))
                }
                Err(e) => {
                    log::error!("pairs={n} K={k} failed: {e}");
                    failures.push(CellFailure {
                        training_pairs: n,
                        gaussians: k,
                        error: e.to_string(),
                    });
                    (None, None)
                }
            };
            rows.push(ExperimentRow {
                training_pairs: n,
                gaussians: k,
                time_s,
                snr_db: snr,
                avg_sd: sd,
            });
        }
    }
    Ok(ExperimentOutcome {
        grid: ExperimentGrid { rows },
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_failed_cell() {
        let grid = ExperimentGrid {
            rows: vec![
                ExperimentRow {
                    training_pairs: 2,
                    gaussians: 1,
                    time_s: 0.123456789,
                    snr_db: Some(3.65),
                    avg_sd: Some(2.940637),
                },
                ExperimentRow {
                    training_pairs: 8,
                    gaussians: 10,
                    time_s: 12.5,
                    snr_db: None,
                    avg_sd: None,
                },
            ],
        };
        let text = grid.to_csv().unwrap();
        assert!(text.starts_with("training_pairs,gaussians,time_s,snr_db,avg_sd\n"));
        assert_eq!(ExperimentGrid::from_csv(&text).unwrap(), grid);
        assert!(ExperimentGrid::from_csv("a,b\n1,2\n").is_err());
        assert!(ExperimentGrid::from_csv("training_pairs,gaussians,time_s,snr_db,avg_sd\nx,1,1,1,1\n").is_err());
    }

    #[test]
    fn report_lines() {
        let r = EvalReport {
            snr_db: 100.0,
            avg_spectral_distortion: 0.0,
            frames_compared: 12,
            flagged_frames: 0,
        };
        let s = r.to_key_values();
        assert!(s.contains("snr_db 100\n"));
        assert!(s.contains("avg_sd 0\n"));
    }
}
