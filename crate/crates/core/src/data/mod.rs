//! Scan records, file formats, experiment assembly and the synthetic generator.

mod csv_io;
mod experiment;
mod scan;
mod synth;

pub use csv_io::{load_scans, save_scans, save_wide, BuildingTags, LoadReport, QuarantinedRow, TagMap, COLUMNS};
pub use experiment::{
    assemble_experiment, ClassField, ClassMap, ExperimentId, ExperimentSpec, Splits, MIN_CLASS_SCANS,
    MIN_EXPERIMENT_SCANS,
};
pub use scan::{canonical_bssid, rssi_in_range, Detection, Position, Scan, RSSI_CEIL_DBM, RSSI_FLOOR_DBM};
pub use synth::{generate_synthetic, AccessPoint, Site, SynthWorld};
