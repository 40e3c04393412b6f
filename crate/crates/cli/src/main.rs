mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vcmorph::audio::{load_wav, save_wav, temp_path};
use vcmorph::conversion::{convert_with_report, load_model, save_model, train};
use vcmorph::corpus::{ingest_corpus, ParallelCorpus};
use vcmorph::eval::{evaluate, run_experiment, SNR_DEFINITION};
use vcmorph::{Error, Result};

use config::CliConfig;

/// Voice conversion with a joint Gaussian mixture over vocal-tract features.
#[derive(Parser, Debug)]
#[command(name = "vcmorph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a conversion model from a parallel corpus.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Model file; overrides `output.model`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Convert one utterance with a trained model.
    Convert {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare a converted utterance with the target recording.
    Evaluate {
        #[arg(long)]
        converted: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Also write the metrics as a one-row CSV file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the training-size by mixture-size grid.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV file; overrides `output.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const NUMERICAL: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => USAGE,
        e if e.is_numerical() => NUMERICAL,
        _ => DATA,
    }
}

fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<CliConfig> {
    let mut cfg = CliConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    init_logging(cfg.log_filter()?);
    Ok(cfg)
}

fn load_corpus(cfg: &CliConfig) -> Result<ParallelCorpus> {
    let c = cfg.corpus()?;
    let (corpus, report) = ingest_corpus(&c.source_dir, &c.target_dir, c.limit)?;
    let unmatched = report.unmatched_source.len() + report.unmatched_target.len();
    if unmatched > 0 {
        log::warn!("{unmatched} files had no partner and were skipped");
    }
    if let Some(rate) = corpus.sample_rate() {
        if rate != cfg.sample_rate {
            return Err(Error::RateMismatch {
                context: format!("corpus in {}", c.source_dir.display()),
                expected: cfg.sample_rate,
                found: rate,
            });
        }
    }
    log::info!("loaded {} utterance pairs", corpus.len());
    Ok(corpus)
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("no {what} path: pass --output or set it in the configuration")))
}

/// Output lines go to stdout in one piece.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn cmd_train(config: &Path, seed: Option<u64>, output: Option<PathBuf>) -> std::result::Result<(), Failure> {
    let cfg = load_config(config, seed)?;
    let out = required(output.or(cfg.output.model.clone()), "model")?;
    let conv = cfg.conversion()?;
    let corpus = load_corpus(&cfg).map_err(stage("loading the corpus"))?;
    let model = train(&corpus, &conv).map_err(stage("training"))?;
    save_model(&model, &out)?;
    let s = &model.summary;
    emit(&format!(
        "model {}\npairs {}\nvectors {}\ngaussians {}\niterations {}\nlog_likelihood {}\nconverged {}\n",
        out.display(),
        s.pairs,
        s.vectors,
        model.components(),
        s.iterations,
        s.log_likelihood,
        s.converged
    ));
    Ok(())
}

/// An error with the pipeline stage it came from.
struct Failure {
    stage: &'static str,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure { stage: "", error }
    }
}

fn stage(name: &'static str) -> impl FnOnce(Error) -> Failure {
    move |error| Failure { stage: name, error }
}

fn cmd_convert(model: &Path, input: &Path, output: &Path) -> std::result::Result<(), Failure> {
    init_logging(log::LevelFilter::Info);
    let m = load_model(model)?;
    let src = load_wav(input)?;
    let (out, report) = convert_with_report(&m, &src).map_err(stage("conversion"))?;
    save_wav(&out, output)?;
    emit(&format!(
        "output {}\nframes {}\nvoiced_frames {}\nflagged_frames {}\nfallback_frames {}\n",
        output.display(),
        report.frames,
        report.voiced_frames,
        report.flagged_frames,
        report.fallback_frames
    ));
    Ok(())
}

fn cmd_evaluate(converted: &Path, target: &Path, output: Option<PathBuf>) -> std::result::Result<(), Failure> {
    init_logging(log::LevelFilter::Info);
    let c = load_wav(converted)?;
    let t = load_wav(target)?;
    let r = evaluate(&c, &t, 0).map_err(stage("evaluating"))?;
    emit(&format!("{}snr_definition {SNR_DEFINITION}\n", r.to_key_values()));
    if let Some(path) = output {
        let text = format!(
            "snr_db,avg_sd,frames_compared\n{},{},{}\n",
            r.snr_db, r.avg_spectral_distortion, r.frames_compared
        );
        write_atomic(&path, &text)?;
    }
    Ok(())
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = temp_path(path);
    let io = |e| Error::Io {
        path: path.into(),
        source: e,
    };
    if let Err(e) = std::fs::write(&tmp, text) {
        let _ = std::fs::remove_file(&tmp);
        return Err(io(e));
    }
    std::fs::rename(&tmp, path).map_err(io)
}

fn cmd_experiment(config: &Path, seed: Option<u64>, output: Option<PathBuf>) -> std::result::Result<(), Failure> {
    let cfg = load_config(config, seed)?;
    let out = required(output.or(cfg.output.csv.clone()), "CSV")?;
    let conv = cfg.conversion()?;
    let corpus = load_corpus(&cfg).map_err(stage("loading the corpus"))?;
    let outcome = run_experiment(&corpus, &cfg.experiment(), &conv).map_err(stage("running the experiment"))?;
    outcome.grid.write_csv(&out)?;
    for f in &outcome.failures {
        log::warn!("cell pairs={} K={}: {}", f.training_pairs, f.gaussians, f.error);
    }
    emit(&format!("{}snr: {SNR_DEFINITION}\n", outcome.grid.to_table()));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train { config, seed, output } => cmd_train(&config, seed, output),
        Command::Convert { model, input, output } => cmd_convert(&model, &input, &output),
        Command::Evaluate {
            converted,
            target,
            output,
        } => cmd_evaluate(&converted, &target, output),
        Command::Experiment { config, seed, output } => cmd_experiment(&config, seed, output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { stage, error }) => {
            if stage.is_empty() {
                eprintln!("error: {error}");
            } else {
                eprintln!("error while {stage}: {error}");
            }
            ExitCode::from(exit_code(&error))
        }
    }
}
