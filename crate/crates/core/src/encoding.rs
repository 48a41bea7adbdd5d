//! From scans to model inputs.
//!
//! Set and sequence models see a scan as an `n × (d + 1)` matrix whose row `i`
//! is the BSSID embedding followed by the normalized RSSI. The MLP instead sees
//! a fixed-length vector indexed by the training vocabulary.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autograd::{RowSource, Tensor};
use crate::data::{canonical_bssid, Detection, Scan, RSSI_FLOOR_DBM};
use crate::error::{Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 16;
/// Embedding components are drawn from `U(-EMBED_INIT_SCALE, EMBED_INIT_SCALE)`.
pub const EMBED_INIT_SCALE: f64 = 0.1;

/// Maps `[-100, -40]` dBm onto `[0, 1]`.
pub fn normalize_rssi(dbm: f64) -> f64 {
    (dbm - RSSI_FLOOR_DBM) / 60.0
}

/// BSSIDs seen in training, indexed in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    bssids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build(training: &[Scan]) -> Result<Self> {
        let set: BTreeSet<String> =
            training.iter().flat_map(|s| s.detections.iter().map(|d| canonical_bssid(&d.bssid))).collect();
        if set.is_empty() {
            return Err(Error::Empty("vocabulary needs at least one detection".into()));
        }
        Ok(Self::from_sorted(set.into_iter().collect()))
    }

    fn from_sorted(bssids: Vec<String>) -> Self {
        let index = bssids.iter().enumerate().map(|(i, b)| (b.clone(), i)).collect();
        Vocabulary { bssids, index }
    }

    pub fn get(&self, bssid: &str) -> Option<usize> {
        self.index.get(bssid).copied().or_else(|| self.index.get(&canonical_bssid(bssid)).copied())
    }

    pub fn len(&self) -> usize {
        self.bssids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bssids.is_empty()
    }

    pub fn bssids(&self) -> &[String] {
        &self.bssids
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.bssids.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let bssids = Vec::<String>::deserialize(d)?;
        if bssids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(serde::de::Error::custom("vocabulary must be strictly sorted"));
        }
        Ok(Self::from_sorted(bssids))
    }
}

pub fn build_vocabulary(training: &[Scan]) -> Result<Vocabulary> {
    Vocabulary::build(training)
}

pub fn init_embedding(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..vocab_size * dim).map(|_| rng.random_range(-EMBED_INIT_SCALE..EMBED_INIT_SCALE)).collect();
    Tensor::matrix(vocab_size, dim, data).expect("sized")
}

// FNV-1a, stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Embedding for a BSSID absent from the vocabulary. Drawn from the same
/// distribution as the trained table, keyed by `(bssid, seed)` only.
pub fn fallback_row(bssid: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(canonical_bssid(bssid).as_bytes()) ^ seed);
    (0..dim).map(|_| rng.random_range(-EMBED_INIT_SCALE..EMBED_INIT_SCALE)).collect()
}

/// A scan resolved against a vocabulary, before the embedding values are looked up.
#[derive(Clone, Debug, PartialEq)]
pub struct SetInput {
    pub rows: Vec<RowSource>,
    /// Normalized RSSI, one per row.
    pub rssi: Vec<f64>,
}

impl SetInput {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reads the current embedding values and appends the RSSI column.
    pub fn materialize(&self, table: &Tensor) -> Result<EncodedSet> {
        let d = table.cols();
        let mut data = Vec::with_capacity(self.len() * (d + 1));
        for (src, r) in self.rows.iter().zip(&self.rssi) {
            match src {
                RowSource::Table(i) => data.extend_from_slice(table.row_slice(*i)),
                RowSource::Fixed(row) => data.extend_from_slice(row),
            }
            data.push(*r);
        }
        Ok(EncodedSet { rows: Tensor::matrix(self.len(), d + 1, data)? })
    }
}

/// `n × (d + 1)` matrix of `[embedding ‖ rssi]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSet {
    pub rows: Tensor,
}

impl EncodedSet {
    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Vocabulary plus the settings needed to encode any scan reproducibly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub vocab: Vocabulary,
    pub dim: usize,
    pub fallback_seed: u64,
}

impl Encoder {
    pub fn new(vocab: Vocabulary, dim: usize, fallback_seed: u64) -> Self {
        Encoder { vocab, dim, fallback_seed }
    }

    fn resolve(&self, d: &Detection) -> RowSource {
        match self.vocab.get(&d.bssid) {
            Some(i) => RowSource::Table(i),
            None => RowSource::Fixed(fallback_row(&d.bssid, self.dim, self.fallback_seed)),
        }
    }

    fn rows_for<'a>(&self, dets: impl Iterator<Item = &'a Detection>) -> SetInput {
        let (rows, rssi) = dets.map(|d| (self.resolve(d), normalize_rssi(d.rssi))).unzip();
        SetInput { rows, rssi }
    }

    /// One row per detection, in the order the scan lists them.
    pub fn encode_set(&self, scan: &Scan) -> Result<SetInput> {
        if scan.is_empty() {
            return Err(Error::Empty(format!("scan `{}` has no detections", scan.id)));
        }
        Ok(self.rows_for(scan.detections.iter()))
    }

    /// Rows ordered by RSSI descending, ties by BSSID ascending.
    pub fn encode_sequence(&self, scan: &Scan) -> Result<SetInput> {
        if scan.is_empty() {
            return Err(Error::Empty(format!("scan `{}` has no detections", scan.id)));
        }
        let mut dets: Vec<&Detection> = scan.detections.iter().collect();
        dets.sort_by(|a, b| sequence_order(a, b));
        Ok(self.rows_for(dets.into_iter()))
    }

    /// Raw dBm per vocabulary index, `-100` where not heard. Unknown BSSIDs are dropped;
    /// a BSSID heard twice keeps its strongest reading.
    pub fn encode_fixed_vector(&self, scan: &Scan) -> Vec<f64> {
        encode_fixed_vector(scan, &self.vocab)
    }
}

pub(crate) fn sequence_order(a: &Detection, b: &Detection) -> Ordering {
    b.rssi.total_cmp(&a.rssi).then_with(|| a.bssid.cmp(&b.bssid))
}

pub fn encode_fixed_vector(scan: &Scan, vocab: &Vocabulary) -> Vec<f64> {
    let mut out = vec![RSSI_FLOOR_DBM; vocab.len()];
    for d in &scan.detections {
        if let Some(i) = vocab.get(&d.bssid) {
            if out[i] == RSSI_FLOOR_DBM || d.rssi > out[i] {
                out[i] = d.rssi;
            }
        }
    }
    out
}

pub fn encode_set(scan: &Scan, vocab: &Vocabulary, table: &Tensor, fallback_seed: u64) -> Result<EncodedSet> {
    Encoder::new(vocab.clone(), table.cols(), fallback_seed).encode_set(scan)?.materialize(table)
}

pub fn encode_sequence(scan: &Scan, vocab: &Vocabulary, table: &Tensor, fallback_seed: u64) -> Result<EncodedSet> {
    Encoder::new(vocab.clone(), table.cols(), fallback_seed).encode_sequence(scan)?.materialize(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Position;
    use proptest::prelude::*;

    fn scan(dets: &[(&str, f64)]) -> Scan {
        Scan::new("t", Position::new(0.0, 0.0), dets.iter().map(|(b, r)| Detection::new(b, *r)).collect())
    }

    fn table(vocab: &Vocabulary, dim: usize) -> Tensor {
        init_embedding(vocab.len(), dim, &mut ChaCha8Rng::seed_from_u64(1))
    }

    #[test]
    fn vocabulary_is_sorted_union() {
        let v = build_vocabulary(&[scan(&[("aa", -40.0)]), scan(&[("bb", -60.0), ("aa", -70.0)])]).unwrap();
        assert_eq!(v.bssids(), ["aa", "bb"]);
        assert_eq!(v.get("AA"), Some(0));
        assert_eq!(v.get("bb"), Some(1));
        assert!(build_vocabulary(&[]).is_err());
        assert!(build_vocabulary(&[scan(&[])]).is_err());
    }

    #[test]
    fn single_detection_set() {
        let v = build_vocabulary(&[scan(&[("aa", -40.0)])]).unwrap();
        let t = table(&v, 4);
        let e = encode_set(&scan(&[("aa", -40.0)]), &v, &t, 0).unwrap();
        assert_eq!(e.rows.shape(), &[1, 5]);
        assert_eq!(e.rows.get(0, 4), normalize_rssi(-40.0));
        assert_eq!(&e.rows.row_slice(0)[..4], t.row_slice(0));
    }

    #[test]
    fn empty_scan_rejected() {
        let v = build_vocabulary(&[scan(&[("aa", -40.0)])]).unwrap();
        let t = table(&v, 4);
        assert!(matches!(encode_set(&scan(&[]), &v, &t, 0), Err(Error::Empty(_))));
        assert!(matches!(encode_sequence(&scan(&[]), &v, &t, 0), Err(Error::Empty(_))));
    }

    #[test]
    fn unseen_bssid_fallback_is_deterministic() {
        let v = build_vocabulary(&[scan(&[("aa", -40.0)])]).unwrap();
        let t = table(&v, 8);
        let s = scan(&[("zz:99", -50.0), ("aa", -60.0)]);
        let a = encode_set(&s, &v, &t, 42).unwrap();
        let b = encode_set(&s, &v, &t, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.rows.row_slice(0)[..8].iter().all(|x| x.abs() < EMBED_INIT_SCALE));
        let c = encode_set(&s, &v, &t, 43).unwrap();
        assert_ne!(a.rows.row_slice(0), c.rows.row_slice(0));
    }

    #[test]
    fn sequence_sorts_by_strength_then_bssid() {
        let v = build_vocabulary(&[scan(&[("aa", -40.0), ("bb", -40.0)])]).unwrap();
        let enc = Encoder::new(v, 4, 0);
        let order = |s: &Scan| {
            enc.encode_sequence(s)
                .unwrap()
                .rows
                .iter()
                .map(|r| match r {
                    RowSource::Table(i) => *i,
                    RowSource::Fixed(_) => usize::MAX,
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(order(&scan(&[("aa", -70.0), ("bb", -40.0)])), vec![1, 0]);
        assert_eq!(order(&scan(&[("bb", -50.0), ("aa", -50.0)])), vec![0, 1]);
    }

    #[test]
    fn fixed_vector_fills_missing_and_drops_unknown() {
        let v = build_vocabulary(&[scan(&[("aa", -40.0), ("bb", -40.0)])]).unwrap();
        assert_eq!(encode_fixed_vector(&scan(&[("aa", -40.0)]), &v), vec![-40.0, -100.0]);
        assert_eq!(encode_fixed_vector(&scan(&[]), &v), vec![-100.0, -100.0]);
        assert_eq!(encode_fixed_vector(&scan(&[("cc", -30.0)]), &v), vec![-100.0, -100.0]);
    }

    fn arb_scan() -> impl Strategy<Value = Vec<(u8, i32)>> {
        prop::collection::vec((0u8..12, -100i32..=0), 1..25)
    }

    fn build(dets: &[(u8, i32)]) -> Scan {
        Scan::new(
            "p",
            Position::new(0.0, 0.0),
            dets.iter().map(|(b, r)| Detection::new(&format!("ap{b:02}"), f64::from(*r))).collect(),
        )
    }

    fn sorted_rows(e: &EncodedSet) -> Vec<Vec<u64>> {
        let mut rows: Vec<Vec<u64>> = (0..e.len()).map(|i| e.rows.row_slice(i).iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        rows
    }

    proptest! {
        #[test]
        fn set_rows_are_a_permutation_invariant_multiset(dets in arb_scan(), seed in any::<u64>()) {
            let vocab_scan = build(&[(0, -50), (3, -50), (5, -50), (7, -50)]);
            let v = build_vocabulary(&[vocab_scan]).unwrap();
            let t = table(&v, 4);
            let s = build(&dets);
            let mut shuffled = s.clone();
            shuffled.detections.reverse();
            let n = shuffled.detections.len();
            shuffled.detections.rotate_left((seed as usize) % n);
            let a = encode_set(&s, &v, &t, 9).unwrap();
            let b = encode_set(&shuffled, &v, &t, 9).unwrap();
            prop_assert_eq!(sorted_rows(&a), sorted_rows(&b));
        }

        #[test]
        fn sequence_matches_reference_stable_sort(dets in arb_scan()) {
            let s = build(&dets);
            let v = build_vocabulary(std::slice::from_ref(&s)).unwrap();
            let enc = Encoder::new(v.clone(), 4, 0);
            let got = enc.encode_sequence(&s).unwrap();
            // reference: key-based stable sort on (-rssi, bssid)
            let mut reference: Vec<(i64, String)> =
                s.detections.iter().map(|d| (-(d.rssi as i64), d.bssid.clone())).collect();
            reference.sort();
            let expect_rows: Vec<RowSource> = reference.iter().map(|(_, b)| RowSource::Table(v.get(b).unwrap())).collect();
            let expect_rssi: Vec<f64> = reference.iter().map(|(r, _)| normalize_rssi(-(*r as f64))).collect();
            prop_assert_eq!(&got.rows, &expect_rows);
            prop_assert_eq!(&got.rssi, &expect_rssi);
            prop_assert!(got.rssi.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn fixed_vector_entries_come_from_the_scan(dets in arb_scan()) {
            let s = build(&dets);
            let v = build_vocabulary(&[build(&[(1, -60), (2, -60), (4, -60)])]).unwrap();
            let x = encode_fixed_vector(&s, &v);
            let heard: Vec<f64> = s.detections.iter().map(|d| d.rssi).collect();
            prop_assert!(x.iter().all(|val| *val == -100.0 || heard.contains(val)));
        }
    }
}
