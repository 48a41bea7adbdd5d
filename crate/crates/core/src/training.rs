//! Coordinate normalization, losses and the optimization loop.
//!
//! Scans are processed one at a time so sets keep their natural size. Gradients
//! from `window` consecutive scans are summed, averaged and applied in a single
//! Adam step; a shorter window at the end of an epoch still triggers a step.
//! After each epoch the model is scored on the validation split in metres and
//! the best weights seen so far are kept.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{AdamState, Tape, Tensor, Var};
use crate::data::{ClassMap, ExperimentSpec, Position, Scan, Splits};
use crate::encoding::{Encoder, Vocabulary};
use crate::error::{Error, Result};
use crate::models::checkpoint::{read_checkpoint, write_checkpoint};
use crate::models::{ForwardOutput, Model, ModelConfig, ModelInput, Prediction};

/// Per-axis mean and population standard deviation of the training positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu_x: f64,
    pub sigma_x: f64,
    pub mu_y: f64,
    pub sigma_y: f64,
}

impl NormStats {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn fit(scans: &[Scan]) -> Result<Self> {
        if scans.len() < 2 {
            return Err(Error::Data(format!("need at least 2 scans to fit normalization, got {}", scans.len())));
        }
        let n = scans.len() as f64;
        let axis = |f: fn(&Scan) -> f64, name: char| -> Result<(f64, f64)> {
            let mu = scans.iter().map(f).sum::<f64>() / n;
            let var = scans.iter().map(|s| (f(s) - mu).powi(2)).sum::<f64>() / n;
            let sigma = var.sqrt();
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(Error::DegenerateAxis(name));
            }
            Ok((mu, sigma))
        };
        let (mu_x, sigma_x) = axis(|s| s.position.x, 'x')?;
        let (mu_y, sigma_y) = axis(|s| s.position.y, 'y')?;
        Ok(NormStats { mu_x, sigma_x, mu_y, sigma_y })
    }

    pub fn normalize(&self, p: Position) -> (f64, f64) {
        ((p.x - self.mu_x) / self.sigma_x, (p.y - self.mu_y) / self.sigma_y)
    }

    pub fn denormalize(&self, (x, y): (f64, f64)) -> Position {
        Position::new(x * self.sigma_x + self.mu_x, y * self.sigma_y + self.mu_y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Scans per optimizer step.
    pub window: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Weight of the classification term.
    pub lambda: f64,
    /// Seeds weight initialization, epoch shuffling and unseen-BSSID embeddings.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-3, epochs: 50, window: 32, patience: 10, lambda: 1.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        TrainConfig { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Squared Euclidean distance between the predicted and target normalized positions.
pub fn regression_loss(t: &mut Tape, position: Var, target: (f64, f64)) -> Result<Var> {
    if !t.value(position).all_finite() {
        return Err(Error::NonFinite("predicted position"));
    }
    let target = t.constant(Tensor::row(vec![target.0, target.1]));
    t.squared_error(position, target)
}

/// Tape handles of one scan's loss and its parts.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub regression: Var,
    pub classification: Option<Var>,
}

/// `regression + lambda · cross_entropy`; the label must be given exactly when the model has a classifier.
pub fn total_loss(t: &mut Tape, out: &ForwardOutput, target: (f64, f64), label: Option<usize>, lambda: f64) -> Result<LossParts> {
    let regression = regression_loss(t, out.position, target)?;
    match (out.logits, label) {
        (None, None) => Ok(LossParts { total: regression, regression, classification: None }),
        (Some(logits), Some(label)) => {
            let ce = t.cross_entropy(logits, label)?;
            let weighted = t.scale(ce, lambda);
            let total = t.add(regression, weighted)?;
            Ok(LossParts { total, regression, classification: Some(ce) })
        }
        (Some(_), None) => Err(Error::Config("multi-task model needs a class label".into())),
        (None, Some(_)) => Err(Error::Config("class label given to a model without a classifier".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-scan total loss over the epoch.
    pub train_loss: f64,
    pub val_error_m: f64,
}

/// Window-averaged losses of one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub total: f64,
    pub regression: f64,
    pub classification: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_error_m: f64,
}

impl History {
    /// `epoch,train_loss,val_error_m`, one row per completed epoch.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_error_m"])?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_error_m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A prediction mapped back to metres and class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanPrediction {
    pub position: Position,
    pub class: Option<usize>,
    pub raw: Prediction,
}

/// Everything needed to apply a trained model to new scans.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub encoder: Encoder,
    pub stats: NormStats,
    pub classes: ClassMap,
    pub spec: ExperimentSpec,
    pub train_config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    encoder: Encoder,
    stats: NormStats,
    classes: ClassMap,
    spec: ExperimentSpec,
    train: TrainConfig,
}

impl TrainedModel {
    pub fn prepare(&self, scan: &Scan) -> Result<ModelInput> {
        self.model.prepare(&self.encoder, scan)
    }

    pub fn predict(&self, scan: &Scan) -> Result<ScanPrediction> {
        let raw = self.model.predict(&self.prepare(scan)?)?;
        Ok(ScanPrediction { position: self.stats.denormalize(raw.position_norm), class: raw.predicted_class(), raw })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            model: self.model.config().clone(),
            encoder: self.encoder.clone(),
            stats: self.stats,
            classes: self.classes.clone(),
            spec: self.spec.clone(),
            train: self.train_config.clone(),
        };
        write_checkpoint(path, &serde_json::to_value(header)?, &self.model.named_arrays())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, arrays) = read_checkpoint(path)?;
        let h: CheckpointHeader = serde_json::from_value(header)
            .map_err(|e| Error::Checkpoint(format!("{}: unreadable header: {e}", path.display())))?;
        let mut model = Model::new(h.model, h.encoder.vocab.len(), 0)?;
        model.load_arrays(arrays)?;
        Ok(TrainedModel { model, encoder: h.encoder, stats: h.stats, classes: h.classes, spec: h.spec, train_config: h.train })
    }
}

/// Builds the vocabulary from the training split and a freshly initialized model over it.
pub fn build_model(splits: &Splits, config: ModelConfig, seed: u64) -> Result<(Model, Encoder)> {
    let vocab = Vocabulary::build(&splits.train)?;
    let encoder = Encoder::new(vocab, config.embed_dim, seed);
    let model = Model::new(config, encoder.vocab.len(), seed)?;
    Ok((model, encoder))
}

fn mean_error_m(model: &Model, encoder: &Encoder, stats: &NormStats, scans: &[Scan]) -> Result<f64> {
    let mut sum = 0.0;
    for s in scans {
        let p = stats.denormalize(model.predict(&model.prepare(encoder, s)?)?.position_norm);
        sum += (p.x - s.position.x).hypot(p.y - s.position.y);
    }
    Ok(sum / scans.len() as f64)
}

struct Example {
    input: ModelInput,
    target: (f64, f64),
    label: Option<usize>,
}

fn examples(model: &Model, encoder: &Encoder, stats: &NormStats, classes: &ClassMap, scans: &[Scan]) -> Result<Vec<Example>> {
    scans
        .iter()
        .map(|s| {
            let label = if model.config().multi_task {
                let l = classes.label_of(s).ok_or_else(|| Error::Data(format!("scan `{}` has no class label", s.id)))?;
                Some(l)
            } else {
                None
            };
            Ok(Example { input: model.prepare(encoder, s)?, target: stats.normalize(s.position), label })
        })
        .collect()
}

/// One optimizer step on the gradient averaged over `batch`, each scan run separately.
fn optimize_window(model: &mut Model, adam: &mut AdamState, batch: &[&Example], lambda: f64) -> Result<StepRecord> {
    model.params_mut().zero_grad();
    let (mut total, mut reg, mut class) = (0.0, 0.0, 0.0);
    for ex in batch {
        let mut t = Tape::new();
        let out = model.forward(&mut t, &ex.input)?;
        let parts = total_loss(&mut t, &out, ex.target, ex.label, lambda)?;
        t.backward(parts.total, model.params_mut())?;
        total += t.value(parts.total).item();
        reg += t.value(parts.regression).item();
        class += parts.classification.map_or(0.0, |c| t.value(c).item());
    }
    let k = batch.len() as f64;
    model.params_mut().scale_grads(1.0 / k);
    adam.step(model.params_mut())?;
    Ok(StepRecord {
        step: adam.step_count(),
        total: total / k,
        regression: reg / k,
        classification: model.config().multi_task.then_some(class / k),
    })
}

/// Trains `model` on `splits.train`, early-stopping on `splits.val`.
///
/// `encoder` must be the one the model was built for (see [`build_model`]).
pub fn train(mut model: Model, encoder: Encoder, splits: &Splits, config: &TrainConfig) -> Result<(TrainedModel, History)> {
    config.validate()?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::Empty("training and validation splits must be non-empty".into()));
    }
    if encoder.vocab.len() != model.vocab_size() {
        return Err(Error::Config(format!(
            "encoder vocabulary has {} entries, model expects {}",
            encoder.vocab.len(),
            model.vocab_size()
        )));
    }
    if model.config().multi_task && model.config().num_classes != splits.classes.len() {
        return Err(Error::Config(format!(
            "classifier has {} outputs, experiment has {} classes",
            model.config().num_classes,
            splits.classes.len()
        )));
    }
    let stats = NormStats::fit(&splits.train)?;
    let data = examples(&model, &encoder, &stats, &splits.classes, &splits.train)?;

    let mut adam = AdamState::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History { best_val_error_m: f64::INFINITY, ..History::default() };
    let mut best = model.params().snapshot();
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.window) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let record = optimize_window(&mut model, &mut adam, &batch, config.lambda)?;
            epoch_loss += record.total * batch.len() as f64;
            history.steps.push(record);
        }
        let val_error_m = mean_error_m(&model, &encoder, &stats, &splits.val)?;
        if !val_error_m.is_finite() {
            return Err(Error::NonFinite("validation error"));
        }
        history.epochs.push(EpochRecord { epoch, train_loss: epoch_loss / data.len() as f64, val_error_m });
        if val_error_m < history.best_val_error_m {
            history.best_val_error_m = val_error_m;
            history.best_epoch = epoch;
            best = model.params().snapshot();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            break;
        }
    }
    model.params_mut().restore(best)?;

    let trained = TrainedModel {
        model,
        encoder,
        stats,
        classes: splits.classes.clone(),
        spec: splits.spec.clone(),
        train_config: config.clone(),
    };
    Ok((trained, history))
}
