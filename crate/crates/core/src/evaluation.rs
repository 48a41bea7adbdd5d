//! Metre-space error metrics and plot-data export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClassField, ClassMap, Position, Scan};
use crate::error::{Error, Result};
use crate::training::TrainedModel;

pub fn euclidean_error(pred: Position, truth: Position) -> f64 {
    (pred.x - truth.x).hypot(pred.y - truth.y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_error_m: f64,
    /// Population standard deviation of the per-scan errors.
    pub std_error_m: f64,
    pub per_scan_errors: Vec<f64>,
    /// Share of scans whose predicted class is correct, for multi-task models.
    pub class_accuracy: Option<f64>,
}

impl Metrics {
    pub fn from_errors(errors: Vec<f64>, class_accuracy: Option<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::Empty("no scans to evaluate".into()));
        }
        if !errors.iter().all(|e| e.is_finite()) {
            return Err(Error::NonFinite("per-scan error"));
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        Ok(Metrics { mean_error_m: mean, std_error_m: var.sqrt(), per_scan_errors: errors, class_accuracy })
    }

    /// `mean ± std` with two decimals, the layout of comparison tables.
    pub fn cell(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean_error_m, self.std_error_m)
    }

    pub fn report(&self) -> String {
        let mut s = format!("{} (m) over {} scans", self.cell(), self.per_scan_errors.len());
        if let Some(acc) = self.class_accuracy {
            s.push_str(&format!("\nclass accuracy {acc:.4}"));
        }
        s
    }
}

/// Scores any predictor returning a metre-space position and optional class index.
/// Accuracy is reported when `classes` is given.
pub fn evaluate_with(
    test: &[Scan],
    classes: Option<&ClassMap>,
    mut predict: impl FnMut(&Scan) -> Result<(Position, Option<usize>)>,
) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::Empty("test set is empty".into()));
    }
    let mut errors = Vec::with_capacity(test.len());
    let mut correct = 0usize;
    for s in test {
        let (p, class) = predict(s)?;
        errors.push(euclidean_error(p, s.position));
        if let Some(map) = classes {
            let truth = map.label_of(s).ok_or_else(|| Error::Data(format!("scan `{}` has no class label", s.id)))?;
            correct += usize::from(class == Some(truth));
        }
    }
    let accuracy = classes.map(|_| correct as f64 / test.len() as f64);
    Metrics::from_errors(errors, accuracy)
}

pub fn evaluate(model: &TrainedModel, test: &[Scan]) -> Result<Metrics> {
    let classes = model.model.config().multi_task.then_some(&model.classes);
    evaluate_with(test, classes, |s| {
        let p = model.predict(s)?;
        Ok((p.position, p.class))
    })
}

/// Error of always answering the mean training position.
pub fn centroid_baseline(train: &[Scan], test: &[Scan]) -> Result<Metrics> {
    if train.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    let n = train.len() as f64;
    let c = Position::new(
        train.iter().map(|s| s.position.x).sum::<f64>() / n,
        train.iter().map(|s| s.position.y).sum::<f64>() / n,
    );
    evaluate_with(test, None, |_| Ok((c, None)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub scan_id: String,
    pub true_x: f64,
    pub true_y: f64,
    pub true_floor: Option<i32>,
    pub pred_x: f64,
    pub pred_y: f64,
    /// Predicted floor from a floor classifier; absent otherwise.
    pub pred_floor: Option<i32>,
    pub error_m: f64,
}

pub fn plot_rows(model: &TrainedModel, test: &[Scan]) -> Result<Vec<PlotRow>> {
    test.iter()
        .map(|s| {
            let p = model.predict(s)?;
            let pred_floor = match (model.classes.field, p.class) {
                (ClassField::Floor, Some(c)) => model.classes.labels.get(c).and_then(|l| l.parse().ok()),
                _ => None,
            };
            Ok(PlotRow {
                scan_id: s.id.clone(),
                true_x: s.position.x,
                true_y: s.position.y,
                true_floor: s.floor,
                pred_x: p.position.x,
                pred_y: p.position.y,
                pred_floor,
                error_m: euclidean_error(p.position, s.position),
            })
        })
        .collect()
}

/// One CSV row per test scan, in test order.
pub fn export_plot_data(model: &TrainedModel, test: &[Scan], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in plot_rows(model, test)? {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// A labelled result, one row of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub experiment: String,
    pub mean_error_m: f64,
    pub std_error_m: f64,
    pub class_accuracy: Option<f64>,
    pub n_scans: usize,
}

impl MetricsRow {
    pub fn new(model: impl Into<String>, experiment: impl Into<String>, m: &Metrics) -> Self {
        MetricsRow {
            model: model.into(),
            experiment: experiment.into(),
            mean_error_m: m.mean_error_m,
            std_error_m: m.std_error_m,
            class_accuracy: m.class_accuracy,
            n_scans: m.per_scan_errors.len(),
        }
    }
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Plain-text table: one row per model, one `mean ± std` column per experiment.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let mut experiments: Vec<&str> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !experiments.contains(&r.experiment.as_str()) {
            experiments.push(&r.experiment);
        }
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let cell = |m: &str, e: &str| {
        rows.iter()
            .find(|r| r.model == m && r.experiment == e)
            .map_or_else(|| "-".to_string(), |r| format!("{:.2} ± {:.2}", r.mean_error_m, r.std_error_m))
    };
    let name_w = models.iter().map(|m| m.chars().count()).max().unwrap_or(0).max("Model".len());
    let mut out = format!("{:<name_w$}", "Model");
    for e in &experiments {
        out.push_str(&format!("  {:>16}", e.to_uppercase()));
    }
    out.push('\n');
    for m in &models {
        out.push_str(&format!("{m:<name_w$}"));
        for e in &experiments {
            out.push_str(&format!("  {:>16}", cell(m, e)));
        }
        out.push('\n');
    }
    out
}
