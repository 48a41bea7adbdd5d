use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Scan;
use crate::error::{Error, Result};

pub const MIN_EXPERIMENT_SCANS: usize = 50;
pub const MIN_CLASS_SCANS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    /// One floor of one building.
    E1,
    /// First floors of several buildings.
    E2,
    /// All floors of one building.
    E3,
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentId::E1 => "e1",
            ExperimentId::E2 => "e2",
            ExperimentId::E3 => "e3",
        })
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "e1" => Ok(ExperimentId::E1),
            "e2" => Ok(ExperimentId::E2),
            "e3" => Ok(ExperimentId::E3),
            other => Err(Error::Config(format!("unknown experiment `{other}`, expected one of e1, e2, e3"))),
        }
    }
}

/// The domain tag used for stratification and the auxiliary classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassField {
    None,
    Building,
    Floor,
}

impl ClassField {
    pub fn key(self, scan: &Scan) -> Option<String> {
        match self {
            ClassField::None => Some(String::new()),
            ClassField::Building => scan.building.clone(),
            ClassField::Floor => scan.floor.map(|f| f.to_string()),
        }
    }
}

/// Ordered class labels; a scan's class index is the position of its tag here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub field: ClassField,
    pub labels: Vec<String>,
}

impl ClassMap {
    pub fn label_of(&self, scan: &Scan) -> Option<usize> {
        let key = self.field.key(scan)?;
        self.labels.iter().position(|l| *l == key)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Which scans an experiment uses and how they are split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    /// `None` selects automatically from the data (see [`ExperimentSpec::resolve`]).
    pub buildings: Option<Vec<String>>,
    pub floors: Option<Vec<i32>>,
    pub multi_task: bool,
    pub class_field: ClassField,
    pub split_seed: u64,
    pub test_fraction: f64,
    /// Share of the non-test scans held out for validation.
    pub val_fraction: f64,
}

impl ExperimentSpec {
    pub fn new(id: ExperimentId, split_seed: u64) -> Self {
        let class_field = match id {
            ExperimentId::E1 => ClassField::None,
            ExperimentId::E2 => ClassField::Building,
            ExperimentId::E3 => ClassField::Floor,
        };
        ExperimentSpec {
            id,
            buildings: None,
            floors: None,
            multi_task: false,
            class_field,
            split_seed,
            test_fraction: 0.2,
            val_fraction: 0.15,
        }
    }

    pub fn with_multi_task(mut self, on: bool) -> Self {
        self.multi_task = on;
        self
    }

    /// Fills unset building/floor filters from the data:
    /// E1 takes the (building, floor) pair with the most scans, E2 the lowest floor
    /// of every building, E3 the building with the most floors.
    pub fn resolve(&self, scans: &[Scan]) -> Result<ExperimentSpec> {
        let mut spec = self.clone();
        let mut counts: BTreeMap<(String, i32), usize> = BTreeMap::new();
        for s in scans {
            *counts.entry((s.building.clone().unwrap_or_default(), s.floor.unwrap_or(0))).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(Error::Data("no scans to build an experiment from".into()));
        }
        let mut floors_of: BTreeMap<&str, BTreeSet<i32>> = BTreeMap::new();
        for (b, f) in counts.keys() {
            floors_of.entry(b.as_str()).or_default().insert(*f);
        }
        match self.id {
            ExperimentId::E1 => {
                if spec.buildings.is_none() || spec.floors.is_none() {
                    let ((b, f), _) = counts
                        .iter()
                        .filter(|((b, f), _)| {
                            spec.buildings.as_ref().is_none_or(|bs| bs.contains(b))
                                && spec.floors.as_ref().is_none_or(|fs| fs.contains(f))
                        })
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                        .ok_or_else(|| Error::Data("E1 filter matches no scans".into()))?;
                    spec.buildings = Some(vec![b.clone()]);
                    spec.floors = Some(vec![*f]);
                }
            }
            ExperimentId::E2 => {
                if spec.buildings.is_none() {
                    spec.buildings = Some(floors_of.keys().map(|b| b.to_string()).collect());
                }
                if spec.floors.is_none() {
                    let lowest: BTreeSet<i32> = spec
                        .buildings
                        .iter()
                        .flatten()
                        .filter_map(|b| floors_of.get(b.as_str()).and_then(|fs| fs.first().copied()))
                        .collect();
                    spec.floors = Some(lowest.into_iter().collect());
                }
            }
            ExperimentId::E3 => {
                if spec.buildings.is_none() {
                    let best = floors_of
                        .iter()
                        .max_by_key(|(b, fs)| {
                            let n: usize = counts.iter().filter(|((cb, _), _)| cb == *b).map(|(_, c)| c).sum();
                            (fs.len(), n)
                        })
                        .map(|(b, _)| b.to_string())
                        .expect("non-empty");
                    spec.buildings = Some(vec![best]);
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(Error::Config(format!("val_fraction must lie in (0, 0.5), got {}", self.val_fraction)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction)));
        }
        let nb = self.buildings.as_ref().map(Vec::len);
        let nf = self.floors.as_ref().map(Vec::len);
        let ok = match self.id {
            ExperimentId::E1 => nb == Some(1) && nf == Some(1) && self.class_field == ClassField::None,
            ExperimentId::E2 => nb.is_some_and(|n| n >= 2) && self.class_field == ClassField::Building,
            ExperimentId::E3 => nb == Some(1) && nf.is_none_or(|n| n >= 2) && self.class_field == ClassField::Floor,
        };
        if !ok {
            return Err(Error::Config(format!(
                "{} filter inconsistent: buildings {:?}, floors {:?}, class field {:?}",
                self.id, self.buildings, self.floors, self.class_field
            )));
        }
        Ok(())
    }

    pub fn matches(&self, scan: &Scan) -> bool {
        let b_ok = self
            .buildings
            .as_ref()
            .is_none_or(|bs| scan.building.as_ref().is_some_and(|b| bs.contains(b)));
        let f_ok = self.floors.as_ref().is_none_or(|fs| scan.floor.is_some_and(|f| fs.contains(&f)));
        b_ok && f_ok && !scan.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub spec: ExperimentSpec,
    pub classes: ClassMap,
    pub train: Vec<Scan>,
    pub val: Vec<Scan>,
    pub test: Vec<Scan>,
}

/// Filters `scans` by the (resolved) spec and splits them, stratified by class.
///
/// Within each class the scans are shuffled with `split_seed`; a `test_fraction`
/// share goes to test and a `val_fraction` share of the rest to validation, each
/// at least one scan. Splits keep the input order.
pub fn assemble_experiment(scans: &[Scan], spec: &ExperimentSpec) -> Result<Splits> {
    let spec = spec.resolve(scans)?;
    let chosen: Vec<usize> = (0..scans.len()).filter(|&i| spec.matches(&scans[i])).collect();
    if chosen.len() < MIN_EXPERIMENT_SCANS {
        return Err(Error::Data(format!(
            "{} selects {} scans, at least {MIN_EXPERIMENT_SCANS} required",
            spec.id,
            chosen.len()
        )));
    }
    let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &i in &chosen {
        let key = spec
            .class_field
            .key(&scans[i])
            .ok_or_else(|| Error::Stratification(format!("scan `{}` has no {:?} tag", scans[i].id, spec.class_field)))?;
        by_class.entry(key).or_default().push(i);
    }
    if spec.class_field != ClassField::None && by_class.len() < 2 {
        return Err(Error::Stratification(format!("{} needs at least two classes, found {}", spec.id, by_class.len())));
    }
    if let Some((k, v)) = by_class.iter().find(|(_, v)| v.len() < MIN_CLASS_SCANS) {
        return Err(Error::Stratification(format!("class `{k}` has {} scans, at least {MIN_CLASS_SCANS} required", v.len())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.split_seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for members in by_class.values() {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        let n = members.len();
        let n_test = ((n as f64 * spec.test_fraction).round() as usize).clamp(1, n - 2);
        let rest = n - n_test;
        let n_val = ((rest as f64 * spec.val_fraction).round() as usize).clamp(1, rest - 1);
        test.extend_from_slice(&members[..n_test]);
        val.extend_from_slice(&members[n_test..n_test + n_val]);
        train.extend_from_slice(&members[n_test + n_val..]);
    }
    let collect = |mut idx: Vec<usize>| {
        idx.sort_unstable();
        idx.into_iter().map(|i| scans[i].clone()).collect::<Vec<_>>()
    };
    let classes = ClassMap {
        field: spec.class_field,
        labels: if spec.class_field == ClassField::None { Vec::new() } else { by_class.keys().cloned().collect() },
    };
    Ok(Splits { classes, train: collect(train), val: collect(val), test: collect(test), spec })
}
