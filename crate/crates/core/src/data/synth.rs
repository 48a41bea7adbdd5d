//! Log-distance path-loss simulator used in place of a surveyed dataset.
//!
//! Received power from an access point at horizontal distance `d` metres and
//! `Δf` floors away is
//!
//! ```text
//! r = tx_power − 10·n·log10(max(d, 1 m)) − floor_attenuation·|Δf| + N(0, σ²)
//! ```
//!
//! A reading is kept when `r ≥ detect_threshold` and is clamped to `[-100, 0]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::scan::{Detection, Position, Scan, RSSI_CEIL_DBM, RSSI_FLOOR_DBM};
use crate::error::{Error, Result};

const MAX_RESAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub bssid: String,
    pub x: f64,
    pub y: f64,
    pub floor: i32,
}

/// A rectangular walkable area belonging to one building. Coordinates are in the
/// shared campus frame: the site covers `origin .. origin + extent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub building: String,
    pub origin: (f64, f64),
    pub extent: (f64, f64),
    pub floors: Vec<i32>,
}

impl Site {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (ox, oy) = self.origin;
        let (w, h) = self.extent;
        (ox..=ox + w).contains(&x) && (oy..=oy + h).contains(&y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthWorld {
    pub sites: Vec<Site>,
    pub aps: Vec<AccessPoint>,
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    pub noise_sigma: f64,
    pub detect_threshold: f64,
    pub floor_attenuation: f64,
}

fn bssid(building: usize, floor: i32, ap: usize) -> String {
    format!("02:{:02x}:{:02x}:00:{:02x}:{:02x}", building + 1, floor as u8, ap >> 8, ap & 0xff)
}

/// `cols × rows` grid over the site, each point jittered by up to ±`jitter` metres.
fn jittered_grid(site: &Site, building: usize, floor: i32, cols: usize, rows: usize, jitter: f64, rng: &mut impl Rng) -> Vec<AccessPoint> {
    let (ox, oy) = site.origin;
    let (w, h) = site.extent;
    let (dx, dy) = (w / cols as f64, h / rows as f64);
    let mut aps = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let x = (c as f64 + 0.5) * dx + rng.random_range(-jitter..=jitter);
            let y = (r as f64 + 0.5) * dy + rng.random_range(-jitter..=jitter);
            aps.push(AccessPoint {
                bssid: bssid(building, floor, aps.len()),
                x: ox + x.clamp(0.0, w),
                y: oy + y.clamp(0.0, h),
                floor,
            });
        }
    }
    aps
}

impl SynthWorld {
    fn with_radio(sites: Vec<Site>, aps: Vec<AccessPoint>) -> Self {
        SynthWorld {
            sites,
            aps,
            tx_power_dbm: -30.0,
            path_loss_exponent: 3.0,
            noise_sigma: 4.0,
            detect_threshold: -95.0,
            floor_attenuation: 15.0,
        }
    }

    /// One 50 m × 30 m floor with 20 access points on a jittered 5 × 4 grid.
    pub fn single_floor(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let site = Site { building: "B1".into(), origin: (0.0, 0.0), extent: (50.0, 30.0), floors: vec![1] };
        let aps = jittered_grid(&site, 0, 1, 5, 4, 2.0, &mut rng);
        Self::with_radio(vec![site], aps)
    }

    /// Three single-floor buildings placed 150 m apart, each with its own 20 access points.
    pub fn multi_building(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sites = Vec::new();
        let mut aps = Vec::new();
        for b in 0..3 {
            let site = Site {
                building: format!("B{}", b + 1),
                origin: (150.0 * b as f64, 0.0),
                extent: (50.0, 30.0),
                floors: vec![1],
            };
            aps.extend(jittered_grid(&site, b, 1, 5, 4, 2.0, &mut rng));
            sites.push(site);
        }
        Self::with_radio(sites, aps)
    }

    /// One building with three stacked floors sharing the same footprint, 20 access points per floor.
    pub fn multi_floor(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let site = Site { building: "B1".into(), origin: (0.0, 0.0), extent: (50.0, 30.0), floors: vec![1, 2, 3] };
        let aps = (1..=3).flat_map(|f| jittered_grid(&site, 0, f, 5, 4, 2.0, &mut rng)).collect();
        Self::with_radio(vec![site], aps)
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.aps.is_empty() {
            return Err(Error::Config("synthetic world has no access points".into()));
        }
        if self.sites.is_empty() || self.sites.iter().any(|s| s.floors.is_empty() || s.extent.0 <= 0.0 || s.extent.1 <= 0.0) {
            return Err(Error::Config("every site needs a positive extent and at least one floor".into()));
        }
        if !(self.path_loss_exponent > 0.0) {
            return Err(Error::Config(format!("path-loss exponent must be positive, got {}", self.path_loss_exponent)));
        }
        if !(self.detect_threshold > RSSI_FLOOR_DBM) {
            return Err(Error::Config(format!("detect threshold must exceed -100 dBm, got {}", self.detect_threshold)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        if let Some(ap) = self.aps.iter().find(|ap| !self.sites.iter().any(|s| s.contains(ap.x, ap.y))) {
            return Err(Error::Config(format!("access point {} lies outside every site", ap.bssid)));
        }
        Ok(())
    }

    /// Noise-free mean received power.
    pub fn mean_rssi(&self, ap: &AccessPoint, at: Position, floor: i32) -> f64 {
        let dist = (ap.x - at.x).hypot(ap.y - at.y).max(1.0);
        self.tx_power_dbm
            - 10.0 * self.path_loss_exponent * dist.log10()
            - self.floor_attenuation * f64::from((ap.floor - floor).abs())
    }

    /// One noisy reading; `None` when below the detection threshold.
    pub fn sample_rssi(&self, ap: &AccessPoint, at: Position, floor: i32, rng: &mut impl Rng) -> Option<f64> {
        let mut r = self.mean_rssi(ap, at, floor);
        if self.noise_sigma > 0.0 {
            r += Normal::new(0.0, self.noise_sigma).expect("sigma checked").sample(rng);
        }
        (r >= self.detect_threshold).then(|| r.clamp(RSSI_FLOOR_DBM, RSSI_CEIL_DBM))
    }

    fn scan_at(&self, at: Position, floor: i32, rng: &mut impl Rng) -> Vec<Detection> {
        self.aps
            .iter()
            .filter_map(|ap| self.sample_rssi(ap, at, floor, rng).map(|r| Detection { bssid: ap.bssid.clone(), rssi: r }))
            .collect()
    }
}

/// Draws `n_scans` labelled scans, cycling through sites and then floors so every
/// (building, floor) pair gets an equal share. Scan `i` uses its own RNG stream
/// derived from `(seed, i)`; positions that hear nothing are redrawn.
pub fn generate_synthetic(world: &SynthWorld, n_scans: usize, seed: u64) -> Result<Vec<Scan>> {
    world.validate()?;
    if n_scans == 0 {
        return Err(Error::Config("n_scans must be at least 1".into()));
    }
    let cells: Vec<(&Site, i32)> = world.sites.iter().flat_map(|s| s.floors.iter().map(move |&f| (s, f))).collect();
    let mut scans = Vec::with_capacity(n_scans);
    for i in 0..n_scans {
        let (site, floor) = cells[i % cells.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut attempt = 0;
        let (position, detections) = loop {
            let x = site.origin.0 + rng.random_range(0.0..=site.extent.0);
            let y = site.origin.1 + rng.random_range(0.0..=site.extent.1);
            let at = Position::new(x, y);
            let det = world.scan_at(at, floor, &mut rng);
            if !det.is_empty() {
                break (at, det);
            }
            attempt += 1;
            if attempt >= MAX_RESAMPLES {
                return Err(Error::Config(format!("no access point audible anywhere in site {}", site.building)));
            }
        };
        scans.push(Scan {
            id: format!("s{i:05}"),
            detections,
            position,
            floor: Some(floor),
            building: Some(site.building.clone()),
            timestamp: None,
        });
    }
    Ok(scans)
}
