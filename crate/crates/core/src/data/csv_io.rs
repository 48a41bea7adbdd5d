//! Scan CSV files.
//!
//! Long format, one detection per row:
//!
//! ```text
//! scan_id,building,floor,x,y,bssid,rssi,timestamp
//! s00001,B1,1,12.5,3.25,02:01:01:00:00:04,-61.2,
//! ```
//!
//! `building`, `floor` and `timestamp` may be empty. `timestamp` is optional in
//! input files. A scan that heard nothing is written as a single row with empty
//! `bssid` and `rssi`; such scans are quarantined when read back.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::scan::{canonical_bssid, rssi_in_range, Detection, Position, Scan, RSSI_FLOOR_DBM};
use crate::error::{Error, Result};

pub const COLUMNS: [&str; 8] = ["scan_id", "building", "floor", "x", "y", "bssid", "rssi", "timestamp"];
const REQUIRED: [&str; 7] = ["scan_id", "building", "floor", "x", "y", "bssid", "rssi"];

/// Building metadata keyed by building tag, stored as a JSON object.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TagMap(pub BTreeMap<String, BuildingTags>);

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildingTags {
    pub floors: Vec<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_m2: Option<f64>,
}

impl TagMap {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    /// Collects the buildings and floors that appear in `scans`.
    pub fn from_scans(scans: &[Scan]) -> Self {
        let mut map: BTreeMap<String, BTreeSet<i32>> = BTreeMap::new();
        for s in scans {
            if let Some(b) = &s.building {
                let floors = map.entry(b.clone()).or_default();
                floors.extend(s.floor);
            }
        }
        TagMap(
            map.into_iter()
                .map(|(b, floors)| (b, BuildingTags { floors: floors.into_iter().collect(), area_m2: None }))
                .collect(),
        )
    }

    fn check(&self, building: Option<&str>, floor: Option<i32>) -> std::result::Result<(), String> {
        let Some(b) = building else { return Ok(()) };
        let Some(tags) = self.0.get(b) else {
            return Err(format!("building `{b}` not in tag map"));
        };
        match floor {
            Some(f) if !tags.floors.contains(&f) => Err(format!("floor {f} not listed for building `{b}`")),
            _ => Ok(()),
        }
    }
}

/// A row that failed validation, with its 1-based line number.
#[derive(Clone, Debug, PartialEq)]
pub struct QuarantinedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub scans: Vec<Scan>,
    pub quarantined_rows: Vec<QuarantinedRow>,
    /// Scans left with no valid detection.
    pub empty_scans: Vec<String>,
}

impl LoadReport {
    pub fn quarantined(&self) -> usize {
        self.quarantined_rows.len()
    }
}

fn parse_opt<T: std::str::FromStr>(field: &str, name: &str) -> std::result::Result<Option<T>, String> {
    if field.trim().is_empty() {
        return Ok(None);
    }
    field.trim().parse().map(Some).map_err(|_| format!("unparseable {name} `{field}`"))
}

fn parse_coord(field: &str, name: &str) -> std::result::Result<f64, String> {
    match parse_opt::<f64>(field, name)? {
        Some(v) if v.is_finite() => Ok(v),
        Some(v) => Err(format!("non-finite {name} {v}")),
        None => Err(format!("missing {name}")),
    }
}

struct Row {
    scan_id: String,
    building: Option<String>,
    floor: Option<i32>,
    position: Position,
    detection: Option<Detection>,
    timestamp: Option<f64>,
}

fn parse_row(rec: &csv::StringRecord, col: &HashMap<&str, usize>, tags: Option<&TagMap>) -> std::result::Result<Row, String> {
    let get = |name: &str| col.get(name).and_then(|&i| rec.get(i)).unwrap_or("");
    let scan_id = get("scan_id").trim().to_string();
    if scan_id.is_empty() {
        return Err("missing scan_id".into());
    }
    let building = Some(get("building").trim()).filter(|b| !b.is_empty()).map(str::to_string);
    let floor = parse_opt::<i32>(get("floor"), "floor")?;
    let position = Position::new(parse_coord(get("x"), "x")?, parse_coord(get("y"), "y")?);
    let timestamp = parse_opt::<f64>(get("timestamp"), "timestamp")?;
    let bssid = canonical_bssid(get("bssid"));
    let rssi = parse_opt::<f64>(get("rssi"), "rssi")?;
    let detection = match (bssid.is_empty(), rssi) {
        (true, None) => None,
        (false, Some(r)) if rssi_in_range(r) => Some(Detection { bssid, rssi: r }),
        (false, Some(r)) => return Err(format!("rssi {r} dBm outside [-100, 0]")),
        (true, Some(_)) => return Err("rssi without bssid".into()),
        (false, None) => return Err("bssid without rssi".into()),
    };
    if let Some(t) = tags {
        t.check(building.as_deref(), floor)?;
    }
    Ok(Row { scan_id, building, floor, position, detection, timestamp })
}

/// Reads a long-format scan file. Bad rows are quarantined and reported, never silently dropped.
pub fn load_scans(path: &Path, tags: Option<&TagMap>) -> Result<LoadReport> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut col = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(&name) = COLUMNS.iter().find(|c| **c == h.trim()) {
            col.insert(name, i);
        }
    }
    if let Some(missing) = REQUIRED.iter().find(|c| !col.contains_key(*c)) {
        return Err(Error::MissingColumn(missing.to_string()));
    }

    let mut report = LoadReport::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = match parse_row(&rec, &col, tags) {
            Ok(r) => r,
            Err(reason) => {
                report.quarantined_rows.push(QuarantinedRow { line, reason });
                continue;
            }
        };
        match index.get(&row.scan_id) {
            Some(&i) => {
                let scan = &mut report.scans[i];
                if scan.position != row.position || scan.building != row.building || scan.floor != row.floor {
                    report.quarantined_rows.push(QuarantinedRow {
                        line,
                        reason: format!("metadata disagrees with earlier rows of scan `{}`", row.scan_id),
                    });
                    continue;
                }
                scan.detections.extend(row.detection);
            }
            None => {
                index.insert(row.scan_id.clone(), report.scans.len());
                report.scans.push(Scan {
                    id: row.scan_id,
                    detections: row.detection.into_iter().collect(),
                    position: row.position,
                    floor: row.floor,
                    building: row.building,
                    timestamp: row.timestamp,
                });
            }
        }
    }

    let (kept, empty): (Vec<Scan>, Vec<Scan>) = report.scans.drain(..).partition(|s| !s.is_empty());
    report.scans = kept;
    report.empty_scans = empty.into_iter().map(|s| s.id).collect();
    Ok(report)
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

/// Writes scans in long format. Floats use shortest round-trip formatting, so
/// [`load_scans`] reads back identical values.
pub fn save_scans(scans: &[Scan], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COLUMNS)?;
    for s in scans {
        let head = [s.id.clone(), opt(&s.building), opt(&s.floor), s.position.x.to_string(), s.position.y.to_string()];
        let ts = opt(&s.timestamp);
        if s.detections.is_empty() {
            w.write_record(head.iter().map(String::as_str).chain(["", "", &ts]))?;
        }
        for d in &s.detections {
            let rssi = d.rssi.to_string();
            w.write_record(head.iter().map(String::as_str).chain([d.bssid.as_str(), &rssi, &ts]))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wide export: one row per scan, one column per BSSID (sorted), `-100` where not heard.
///
/// When a BSSID repeats within a scan the strongest reading is kept.
pub fn save_wide(scans: &[Scan], path: &Path) -> Result<()> {
    let bssids: BTreeSet<&str> = scans.iter().flat_map(|s| s.detections.iter().map(|d| d.bssid.as_str())).collect();
    let column: HashMap<&str, usize> = bssids.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["scan_id", "building", "floor", "x", "y"];
    header.extend(bssids.iter());
    w.write_record(&header)?;
    for s in scans {
        let mut values = vec![RSSI_FLOOR_DBM; bssids.len()];
        for d in &s.detections {
            let v = &mut values[column[d.bssid.as_str()]];
            *v = v.max(d.rssi);
        }
        let mut row = vec![s.id.clone(), opt(&s.building), opt(&s.floor), s.position.x.to_string(), s.position.y.to_string()];
        row.extend(values.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
