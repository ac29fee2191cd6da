use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ppg_gate_core::conditioning::{zscore, Window};
use ppg_gate_core::io;
use ppg_gate_core::pipeline::{self, condition_or_empty, Gate, RunConfig, RunDir};
use ppg_gate_core::synth::{make_corpus, synth_ppg};
use ppg_gate_core::Error;

#[derive(Parser)]
#[command(name = "ppg-gate", version, about = "Label-free signal-quality gate for wrist PPG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults are used for anything omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Zero all recorded durations so reports are byte-identical across runs.
    #[arg(long)]
    deterministic: bool,
    /// Run directory holding every stage artifact.
    #[arg(long, default_value = "ppg-gate-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, resample and segment traces into the run directory.
    Condition {
        #[command(flatten)]
        common: Common,
        /// Trace files (CSV or PPGT); glob patterns are expanded.
        inputs: Vec<String>,
    },
    /// Train the contrastive encoder on the conditioned windows.
    Train(Common),
    /// Export backbone features with the trained encoder.
    Embed(Common),
    /// Compute persistence signatures of the features.
    Topo(Common),
    /// Cluster signatures and assign the binary SQI.
    Cluster(Common),
    /// Validity metrics, ablation arms and baseline agreement.
    Evaluate(Common),
    /// Gate new traces (or a PPGW window file) with the frozen model;
    /// writes `window_id,sqi` to stdout.
    Gate {
        #[command(flatten)]
        common: Common,
        /// Defaults to the run directory's encoder.pgck.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the run directory's gate_model.json.
        #[arg(long)]
        model: Option<PathBuf>,
        inputs: Vec<String>,
    },
    /// Write a labelled synthetic corpus into the run directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: SynthArgs,
        /// Also write the raw synthetic traces as CSV files under traces/.
        #[arg(long)]
        emit_traces: bool,
    },
    /// Every stage in order: conditioning (or a synthetic corpus) first.
    Run {
        #[command(flatten)]
        common: Common,
        /// Use a synthetic corpus instead of trace files.
        #[arg(long)]
        synth: bool,
        #[command(flatten)]
        corpus: SynthArgs,
        inputs: Vec<String>,
    },
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    n_clean: usize,
    #[arg(long, default_value_t = 1000)]
    n_poor: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parameter(_) | Error::Length { .. } | Error::Format { .. } | Error::Json(_) | Error::UndefinedMetric(_) | Error::Resource(_) => 2,
        Error::MissingArtifact(_) => 3,
        Error::ModelMismatch(_) => 4,
        Error::NoCleanStratum => 5,
        Error::Training { .. } | Error::Io(_) => 1,
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.resolve(common.seed)
}

fn has_glob_chars(s: &str) -> bool {
    s.contains(['*', '?', '['])
}

fn expand_inputs(patterns: &[String]) -> Result<Vec<PathBuf>, Error> {
    let mut paths = Vec::new();
    for p in patterns {
        if has_glob_chars(p) {
            let matches = glob::glob(p).map_err(|e| Error::Parameter(format!("bad glob {p:?}: {e}")))?;
            let mut found: Vec<PathBuf> = matches.filter_map(|m| m.ok()).filter(|m| m.is_file()).collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(PathBuf::from(p));
        }
    }
    Ok(paths)
}

fn log_epoch(t: &ppg_gate_core::encoder::TrainTelemetry) {
    eprintln!("epoch {:>3}  loss {:.4}  mean view cosine {:.4}  {:.1}s", t.epoch, t.loss, t.mean_view_cosine, t.wall_time_s);
}

fn write_synth(dir: &RunDir, cfg: &RunConfig, corpus: &SynthArgs, emit_traces: bool) -> Result<(), Error> {
    let synth = make_corpus(corpus.n_clean, corpus.n_poor, cfg.seed, &cfg.conditioning)?;
    pipeline::stage_import_windows(dir, cfg, &synth.windows, Some(&synth.truth))?;
    if emit_traces {
        let traces = dir.root.join("traces");
        std::fs::create_dir_all(&traces)?;
        for (i, spec) in synth.specs.iter().enumerate() {
            let mut trace = synth_ppg(spec)?;
            trace.source_id = format!("synth-{i:06}");
            io::write_trace_csv(&traces.join(format!("{}.csv", trace.source_id)), &trace)?;
        }
    }
    eprintln!("wrote {} synthetic windows to {}", synth.windows.len(), dir.root.display());
    Ok(())
}

/// Windows for gating: a PPGW file is taken as is, anything else is
/// conditioned as a trace.
fn gate_windows(path: &Path, cfg: &RunConfig) -> Result<Vec<Window>, Error> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(io::WINDOWS_MAGIC) {
        let (_, rows) = io::parse_windows_bin(&bytes)?;
        let id = path.display().to_string();
        return Ok(rows
            .into_iter()
            .enumerate()
            .map(|(i, samples)| {
                let degenerate = zscore(&samples).1;
                Window { samples, source_id: id.clone(), start_index: i, degenerate }
            })
            .collect());
    }
    let trace = io::read_trace(path)?;
    condition_or_empty(&trace, &cfg.conditioning)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Condition { common, inputs } => {
            let cfg = load_config(&common)?;
            let dir = RunDir::create(&common.out)?;
            let summary = pipeline::stage_condition(&dir, &cfg, &expand_inputs(&inputs)?, common.deterministic)?;
            for s in &summary.skipped {
                eprintln!("skipped {}: {}", s.path, s.error);
            }
            eprintln!("{} windows ({} degenerate) from {} traces", summary.windows, summary.degenerate, summary.traces);
        }
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            pipeline::stage_train(&RunDir::create(&common.out)?, &cfg, common.deterministic, log_epoch)?;
        }
        Command::Embed(common) => {
            let cfg = load_config(&common)?;
            let f = pipeline::stage_embed(&RunDir::create(&common.out)?, &cfg, common.deterministic)?;
            eprintln!("embedded {} windows into {} features", f.features.rows(), f.features.cols());
        }
        Command::Topo(common) => {
            let cfg = load_config(&common)?;
            let rows = pipeline::stage_topo(&RunDir::create(&common.out)?, &cfg, common.deterministic)?;
            eprintln!("{} signatures", rows.len());
        }
        Command::Cluster(common) => {
            let cfg = load_config(&common)?;
            let s = pipeline::stage_cluster(&RunDir::create(&common.out)?, &cfg, common.deterministic)?;
            eprintln!(
                "clusters {:?}, noise {}, acceptance rate {:.4}{}",
                s.sizes,
                s.noise,
                s.acceptance_rate,
                if s.low_confidence { " (low confidence)" } else { "" }
            );
        }
        Command::Evaluate(common) => {
            let cfg = load_config(&common)?;
            let dir = RunDir::create(&common.out)?;
            pipeline::stage_evaluate(&dir, &cfg, common.deterministic)?;
            eprintln!("report written to {}", dir.report().display());
        }
        Command::Gate { common, checkpoint, model, inputs } => {
            let cfg = load_config(&common)?;
            let inputs = expand_inputs(&inputs)?;
            if inputs.is_empty() {
                return Err(Error::Parameter("no inputs".into()));
            }
            let dir = RunDir { root: common.out.clone() };
            let gate = Gate::load(
                &checkpoint.unwrap_or_else(|| dir.checkpoint()),
                &model.unwrap_or_else(|| dir.gate_model()),
                &cfg,
            )?;
            let stdout = std::io::stdout();
            let mut out = csv::Writer::from_writer(stdout.lock());
            out.write_record(["window_id", "sqi"]).map_err(|e| Error::Io(e.into()))?;
            let mut next_id = 0u64;
            for path in &inputs {
                let windows = gate_windows(path, &cfg)?;
                for s in gate.classify(&windows)? {
                    out.write_record([next_id.to_string(), s.to_string()]).map_err(|e| Error::Io(e.into()))?;
                    next_id += 1;
                }
                out.flush()?;
            }
        }
        Command::Synth { common, corpus, emit_traces } => {
            let cfg = load_config(&common)?;
            write_synth(&RunDir::create(&common.out)?, &cfg, &corpus, emit_traces)?;
        }
        Command::Run { common, synth, corpus, inputs } => {
            let cfg = load_config(&common)?;
            let dir = RunDir::create(&common.out)?;
            if synth {
                write_synth(&dir, &cfg, &corpus, false)?;
            } else {
                pipeline::stage_condition(&dir, &cfg, &expand_inputs(&inputs)?, common.deterministic)?;
            }
            if let Some(report) = pipeline::run_stages(&dir, &cfg, common.deterministic, log_epoch)? {
                eprintln!(
                    "acceptance rate {:.4}; report written to {}",
                    report.clusters.acceptance_rate,
                    dir.report().display()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = std::io::stderr().flush();
            ExitCode::from(exit_code(&e))
        }
    }
}
