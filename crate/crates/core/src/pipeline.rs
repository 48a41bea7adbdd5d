//! Reproducible runs: simulate, train, evaluate and compare.
//!
//! A [`RunManifest`] pins everything a run depends on. `run_train` writes into the
//! manifest's output directory:
//!
//! | file             | contents                                        |
//! |------------------|-------------------------------------------------|
//! | `manifest.toml`  | the manifest, echoed                            |
//! | `model.ckpt`     | checkpoint (weights, vocabulary, stats, labels) |
//! | `history.csv`    | `epoch,train_loss,val_error_m`                  |
//! | `test_scans.csv` | the held-out test split                         |
//! | `metrics.csv`    | test metrics, one row                           |
//! | `report.txt`     | test metrics, human-readable                    |
//! | `plot.csv`       | per-scan truth and prediction                   |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    assemble_experiment, generate_synthetic, load_scans, save_scans, ExperimentId, ExperimentSpec, Scan, Splits,
    SynthWorld, TagMap,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, export_plot_data, format_table, write_metrics_csv, Metrics, MetricsRow};
use crate::models::{Arch, ModelConfig};
use crate::training::{build_model, train, History, TrainConfig, TrainedModel};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const TEST_SCANS_FILE: &str = "test_scans.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const PLOT_FILE: &str = "plot.csv";
pub const SCANS_FILE: &str = "scans.csv";
pub const TAGS_FILE: &str = "tags.json";

/// Default number of synthetic scans per generated world.
pub const DEFAULT_SYNTH_SCANS: usize = 600;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    File {
        scans: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tags: Option<PathBuf>,
    },
    Synthetic {
        n_scans: usize,
        seed: u64,
        world: SynthWorld,
    },
}

impl DataSource {
    /// The stand-in world for an experiment: one floor (E1), three buildings (E2) or three floors (E3).
    pub fn synthetic_for(id: ExperimentId, seed: u64) -> Self {
        let world = match id {
            ExperimentId::E1 => SynthWorld::single_floor(seed),
            ExperimentId::E2 => SynthWorld::multi_building(seed),
            ExperimentId::E3 => SynthWorld::multi_floor(seed),
        };
        DataSource::Synthetic { n_scans: DEFAULT_SYNTH_SCANS, seed, world }
    }

    pub fn load(&self) -> Result<Vec<Scan>> {
        match self {
            DataSource::File { scans, tags } => {
                let tags = tags.as_deref().map(TagMap::load).transpose()?;
                let report = load_scans(scans, tags.as_ref())?;
                if report.scans.is_empty() {
                    return Err(Error::Data(format!("{} holds no usable scans", scans.display())));
                }
                Ok(report.scans)
            }
            DataSource::Synthetic { n_scans, seed, world } => generate_synthetic(world, *n_scans, *seed),
        }
    }
}

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub output_dir: PathBuf,
    pub experiment: ExperimentSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSource,
}

impl RunManifest {
    /// Default synthetic run; every seed derives from `seed`.
    pub fn synthetic(id: ExperimentId, arch: Arch, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        RunManifest {
            output_dir: output_dir.into(),
            experiment: ExperimentSpec::new(id, seed),
            model: ModelConfig::new(arch),
            train: TrainConfig::with_seed(seed),
            data: DataSource::synthetic_for(id, seed),
        }
    }

    pub fn with_multi_task(mut self, on: bool) -> Self {
        self.experiment.multi_task = on;
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.experiment.multi_task && self.experiment.id == ExperimentId::E1 {
            return Err(Error::Config("multi-task needs a class field; e1 has a single class".into()));
        }
        if !(0.0 < self.experiment.val_fraction && self.experiment.val_fraction < 0.5) {
            return Err(Error::Config(format!("val_fraction must lie in (0, 0.5), got {}", self.experiment.val_fraction)));
        }
        if !(0.0 < self.experiment.test_fraction && self.experiment.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must lie in (0, 1), got {}", self.experiment.test_fraction)));
        }
        let mut model = self.model.clone();
        if self.experiment.multi_task {
            // class count is only known once data is loaded
            let classes = model.num_classes.max(2);
            model = model.with_classes(classes);
        }
        model.validate()?;
        if let DataSource::Synthetic { n_scans, world, .. } = &self.data {
            if *n_scans == 0 {
                return Err(Error::Config("n_scans must be at least 1".into()));
            }
            world.validate()?;
        }
        Ok(())
    }
}

/// Files written by [`run_simulate`].
#[derive(Clone, Debug)]
pub struct SimulateOutput {
    pub scans_path: PathBuf,
    pub tags_path: PathBuf,
    pub n_scans: usize,
}

pub fn run_simulate(world: &SynthWorld, n_scans: usize, seed: u64, out_dir: &Path) -> Result<SimulateOutput> {
    if n_scans == 0 {
        return Err(Error::Config("n_scans must be at least 1".into()));
    }
    world.validate()?;
    let scans = generate_synthetic(world, n_scans, seed)?;
    fs::create_dir_all(out_dir)?;
    let scans_path = out_dir.join(SCANS_FILE);
    let tags_path = out_dir.join(TAGS_FILE);
    save_scans(&scans, &scans_path)?;
    TagMap::from_scans(&scans).save(&tags_path)?;
    Ok(SimulateOutput { scans_path, tags_path, n_scans: scans.len() })
}

pub struct TrainOutput {
    pub trained: TrainedModel,
    pub history: History,
    pub splits: Splits,
    pub metrics: Metrics,
    pub report: String,
}

fn report_text(model: &TrainedModel, metrics: &Metrics) -> String {
    format!(
        "{} on {}: {}\n",
        model.model.config().arch.display_name(),
        model.spec.id.to_string().to_uppercase(),
        metrics.report()
    )
}

fn metrics_row(model: &TrainedModel, metrics: &Metrics) -> MetricsRow {
    MetricsRow::new(model.model.config().arch.display_name(), model.spec.id.to_string(), metrics)
}

/// Loads data, splits, trains, evaluates on the test split and writes all run files.
pub fn run_train(manifest: &RunManifest) -> Result<TrainOutput> {
    manifest.validate()?;
    let scans = manifest.data.load()?;
    let splits = assemble_experiment(&scans, &manifest.experiment)?;
    let mut config = manifest.model.clone();
    config.multi_task = false;
    config.num_classes = 0;
    if splits.spec.multi_task {
        config = config.with_classes(splits.classes.len());
    }
    let (model, encoder) = build_model(&splits, config, manifest.train.seed)?;
    let (trained, history) = train(model, encoder, &splits, &manifest.train)?;
    let metrics = evaluate(&trained, &splits.test)?;
    let report = report_text(&trained, &metrics);

    let dir = &manifest.output_dir;
    fs::create_dir_all(dir)?;
    manifest.save(&dir.join(MANIFEST_FILE))?;
    trained.save(&dir.join(CHECKPOINT_FILE))?;
    history.write_csv(&dir.join(HISTORY_FILE))?;
    save_scans(&splits.test, &dir.join(TEST_SCANS_FILE))?;
    write_metrics_csv(&[metrics_row(&trained, &metrics)], &dir.join(METRICS_FILE))?;
    fs::write(dir.join(REPORT_FILE), &report)?;
    export_plot_data(&trained, &splits.test, &dir.join(PLOT_FILE))?;
    Ok(TrainOutput { trained, history, splits, metrics, report })
}

pub struct EvalOutput {
    pub model: TrainedModel,
    pub metrics: Metrics,
    pub report: String,
}

/// Evaluates a checkpoint on `scans`, writing the plot data when `plot_path` is given.
/// `expect_arch`, when set, must match the checkpoint.
pub fn run_eval(checkpoint: &Path, scans: &[Scan], expect_arch: Option<Arch>, plot_path: Option<&Path>) -> Result<EvalOutput> {
    let model = TrainedModel::load(checkpoint)?;
    let arch = model.model.config().arch;
    if let Some(want) = expect_arch {
        if want != arch {
            return Err(Error::Checkpoint(format!("{} holds a {arch} model, not {want}", checkpoint.display())));
        }
    }
    let metrics = evaluate(&model, scans)?;
    if let Some(p) = plot_path {
        export_plot_data(&model, scans, p)?;
    }
    let report = report_text(&model, &metrics);
    Ok(EvalOutput { model, metrics, report })
}

/// Re-evaluates each run directory's checkpoint on its saved test split.
pub fn run_benchmark(run_dirs: &[PathBuf]) -> Result<(Vec<MetricsRow>, String)> {
    if run_dirs.len() < 2 {
        return Err(Error::Config(format!("benchmark needs at least 2 runs, got {}", run_dirs.len())));
    }
    let mut rows = Vec::with_capacity(run_dirs.len());
    let mut experiment: Option<ExperimentId> = None;
    for dir in run_dirs {
        let ckpt = dir.join(CHECKPOINT_FILE);
        if !ckpt.is_file() {
            return Err(Error::Checkpoint(format!("missing checkpoint {}", ckpt.display())));
        }
        let model = TrainedModel::load(&ckpt)?;
        match experiment {
            None => experiment = Some(model.spec.id),
            Some(id) if id != model.spec.id => {
                return Err(Error::Config(format!(
                    "mixed experiments: {} is {}, earlier runs are {id}",
                    dir.display(),
                    model.spec.id
                )))
            }
            Some(_) => {}
        }
        let test = load_scans(&dir.join(TEST_SCANS_FILE), None)?.scans;
        let metrics = evaluate(&model, &test)?;
        rows.push(metrics_row(&model, &metrics));
    }
    let table = format_table(&rows);
    Ok((rows, table))
}

/// Subdirectories of `root` that contain a run manifest, sorted by name.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        let m = RunManifest::synthetic(ExperimentId::E3, Arch::SetTransformer, 4, "runs/st").with_multi_task(true);
        m.save(&path).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);
        let file = RunManifest {
            data: DataSource::File { scans: "a.csv".into(), tags: None },
            ..RunManifest::synthetic(ExperimentId::E1, Arch::Mlp, 1, "o")
        };
        file.save(&path).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), file);
    }

    #[test]
    fn malformed_manifest_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        fs::write(&path, "output_dir = 3").unwrap();
        let err = RunManifest::load(&path).unwrap_err();
        assert!(err.is_usage(), "{err}");
    }

    #[test]
    fn e1_multi_task_is_rejected() {
        let m = RunManifest::synthetic(ExperimentId::E1, Arch::Mlp, 1, "o").with_multi_task(true);
        assert!(m.validate().unwrap_err().is_usage());
    }

    #[test]
    fn simulate_rejects_zero_scans() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_simulate(&SynthWorld::single_floor(1), 0, 1, dir.path()).unwrap_err();
        assert!(err.is_usage());
    }

    #[test]
    fn benchmark_needs_two_runs_with_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_benchmark(&[dir.path().to_path_buf()]).is_err());
        let err = run_benchmark(&[dir.path().join("a"), dir.path().join("b")]).unwrap_err().to_string();
        assert!(err.contains("missing checkpoint") && err.contains("model.ckpt"), "{err}");
    }
}
