use serde::{Deserialize, Serialize};

/// Weakest signal a receiver reports, also the fill value for missing access points.
pub const RSSI_FLOOR_DBM: f64 = -100.0;
pub const RSSI_CEIL_DBM: f64 = 0.0;

/// One access point heard in a scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bssid: String,
    pub rssi: f64,
}

impl Detection {
    pub fn new(bssid: &str, rssi: f64) -> Self {
        Detection { bssid: canonical_bssid(bssid), rssi }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }
}

/// A labelled observation: an unordered multiset of detections taken at a known position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub id: String,
    pub detections: Vec<Detection>,
    pub position: Position,
    pub floor: Option<i32>,
    pub building: Option<String>,
    pub timestamp: Option<f64>,
}

impl Scan {
    pub fn new(id: impl Into<String>, position: Position, detections: Vec<Detection>) -> Self {
        Scan { id: id.into(), detections, position, floor: None, building: None, timestamp: None }
    }

    pub fn with_building(mut self, building: impl Into<String>) -> Self {
        self.building = Some(building.into());
        self
    }

    pub fn with_floor(mut self, floor: i32) -> Self {
        self.floor = Some(floor);
        self
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// Lowercase, trimmed form used as the vocabulary key.
pub fn canonical_bssid(raw: &str) -> String {
    raw.trim().to_ascii_lowercase()
}

pub fn rssi_in_range(rssi: f64) -> bool {
    (RSSI_FLOOR_DBM..=RSSI_CEIL_DBM).contains(&rssi)
}
