use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use setloc::data::{load_scans, ExperimentId, TagMap};
use setloc::evaluation::write_metrics_csv;
use setloc::models::Arch;
use setloc::pipeline::{
    find_runs, run_benchmark, run_eval, run_simulate, run_train, DataSource, RunManifest, CHECKPOINT_FILE, PLOT_FILE,
    TEST_SCANS_FILE,
};

const USAGE_EXIT: u8 = 2;
const RUNTIME_EXIT: u8 = 1;

#[derive(Parser)]
#[command(name = "setloc", version, about = "Wi-Fi fingerprint localization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scan CSV and tag map.
    Simulate(SimulateArgs),
    /// Train one model and evaluate it on the held-out split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a scan file.
    Eval(EvalArgs),
    /// Compare every run found under a directory.
    Benchmark(BenchmarkArgs),
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e: setloc::Error| e.to_string())
}

fn parse_experiment(s: &str) -> Result<ExperimentId, String> {
    s.parse().map_err(|e: setloc::Error| e.to_string())
}

#[derive(Args)]
struct SimulateArgs {
    /// Which stand-in world to generate: e1 one floor, e2 three buildings, e3 three floors.
    #[arg(long, value_parser = parse_experiment, default_value = "e1")]
    experiment: ExperimentId,
    #[arg(long, default_value_t = 600)]
    scans: usize,
    #[arg(long, env = "SETLOC_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Start from this manifest; other flags override its fields.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_experiment)]
    experiment: Option<ExperimentId>,
    /// One of mlp, rnn, lstm, attention, set_transformer.
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Arch>,
    /// Scan CSV to train on.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Tag map JSON checked against the scan CSV.
    #[arg(long, requires = "data")]
    tags: Option<PathBuf>,
    /// Generate the experiment's synthetic world instead of reading a file.
    #[arg(long)]
    synthetic: bool,
    /// Number of synthetic scans.
    #[arg(long)]
    scans: Option<usize>,
    #[arg(long, env = "SETLOC_SEED")]
    seed: Option<u64>,
    /// Add the floor/building classifier.
    #[arg(long)]
    multi_task: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Scans per optimizer step.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file, or a run directory holding one.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scan CSV; defaults to the run's saved test split.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    tags: Option<PathBuf>,
    /// Fail unless the checkpoint holds this architecture.
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Arch>,
    /// Where to write per-scan plot data; defaults next to the checkpoint.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Directory whose subdirectories are training runs.
    runs: PathBuf,
    /// Write the table as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let DataSource::Synthetic { world, .. } = DataSource::synthetic_for(a.experiment, a.seed) else {
        unreachable!("synthetic_for builds a synthetic source")
    };
    let out = run_simulate(&world, a.scans, a.seed, &a.out)?;
    println!("wrote {} scans to {}", out.n_scans, out.scans_path.display());
    println!("wrote tag map to {}", out.tags_path.display());
    Ok(())
}

fn manifest_from(a: &TrainArgs) -> anyhow::Result<RunManifest> {
    let mut m = match &a.manifest {
        Some(path) => {
            let mut m = RunManifest::load(path)?;
            if let Some(id) = a.experiment {
                m.experiment = setloc::data::ExperimentSpec { id, ..setloc::data::ExperimentSpec::new(id, m.experiment.split_seed) };
            }
            if let Some(arch) = a.arch {
                m.model = setloc::models::ModelConfig::new(arch);
            }
            if let Some(seed) = a.seed {
                m.train.seed = seed;
                m.experiment.split_seed = seed;
            }
            if a.synthetic {
                m.data = DataSource::synthetic_for(m.experiment.id, m.train.seed);
            }
            m
        }
        None => {
            let id = a.experiment.unwrap_or(ExperimentId::E1);
            let arch = a.arch.unwrap_or(Arch::SetTransformer);
            let seed = a.seed.unwrap_or(0);
            let out = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{id}-{arch}")));
            RunManifest::synthetic(id, arch, seed, out)
        }
    };
    if let Some(scans) = &a.data {
        m.data = DataSource::File { scans: scans.clone(), tags: a.tags.clone() };
    }
    if let Some(n) = a.scans {
        match &mut m.data {
            DataSource::Synthetic { n_scans, .. } => *n_scans = n,
            DataSource::File { .. } => anyhow::bail!(setloc::Error::Config("--scans applies to synthetic data only".into())),
        }
    }
    if a.multi_task {
        m.experiment.multi_task = true;
    }
    if let Some(v) = a.epochs {
        m.train.epochs = v;
    }
    if let Some(v) = a.lr {
        m.train.lr = v;
    }
    if let Some(v) = a.window {
        m.train.window = v;
    }
    if let Some(v) = a.patience {
        m.train.patience = v;
    }
    if let Some(out) = &a.out {
        m.output_dir = out.clone();
    }
    Ok(m)
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let manifest = manifest_from(&a)?;
    let out = run_train(&manifest)?;
    println!(
        "trained {} epochs (best {}, val {:.3} m)",
        out.history.epochs.len(),
        out.history.best_epoch,
        out.history.best_val_error_m
    );
    print!("{}", out.report);
    println!("run files in {}", manifest.output_dir.display());
    Ok(())
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p.to_path_buf()
    }
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let ckpt = checkpoint_path(&a.checkpoint);
    let run_dir = ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    let data = a.data.clone().unwrap_or_else(|| run_dir.join(TEST_SCANS_FILE));
    let tags = a.tags.as_deref().map(TagMap::load).transpose()?;
    let report = load_scans(&data, tags.as_ref()).with_context(|| format!("reading {}", data.display()))?;
    if report.quarantined() > 0 {
        eprintln!("{} rows quarantined while reading {}", report.quarantined(), data.display());
    }
    let plot = a.plot.clone().unwrap_or_else(|| run_dir.join(PLOT_FILE));
    let out = run_eval(&ckpt, &report.scans, a.arch, Some(&plot))?;
    print!("{}", out.report);
    println!("plot data in {}", plot.display());
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> anyhow::Result<()> {
    let runs = find_runs(&a.runs).with_context(|| format!("listing {}", a.runs.display()))?;
    let (rows, table) = run_benchmark(&runs)?;
    print!("{table}");
    if let Some(out) = &a.out {
        write_metrics_csv(&rows, out)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<setloc::Error>().is_some_and(setloc::Error::is_usage);
            ExitCode::from(if usage { USAGE_EXIT } else { RUNTIME_EXIT })
        }
    }
}
