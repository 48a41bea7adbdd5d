//! The five localization architectures behind one `scan → prediction` contract.
//!
//! | arch              | input                          | summary of the scan                |
//! |-------------------|--------------------------------|------------------------------------|
//! | `mlp`             | fixed vector over the vocabulary | two ReLU layers                  |
//! | `rnn`             | rows sorted by RSSI            | final `tanh` hidden state          |
//! | `lstm`            | rows sorted by RSSI            | final LSTM hidden state            |
//! | `attention`       | rows in any order              | softmax-weighted sum, one query    |
//! | `set_transformer` | rows in any order              | SAB stack, PMA with a single seed  |
//!
//! Every architecture can carry an extra linear classifier over its summary
//! vector (floor or building logits).

pub mod checkpoint;
mod config;
mod layers;

pub use config::{Arch, ModelConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::Scan;
use crate::encoding::{init_embedding, normalize_rssi, Encoder, SetInput};
use crate::error::{Error, Result};
use layers::{uniform, AttentionBlock, Linear};

/// Model output for one scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Position in normalized coordinates.
    pub position_norm: (f64, f64),
    pub class_logits: Option<Vec<f64>>,
}

impl Prediction {
    pub fn predicted_class(&self) -> Option<usize> {
        let logits = self.class_logits.as_ref()?;
        logits.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i)
    }
}

/// What a model consumes for one scan.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelInput {
    /// Normalized RSSI per vocabulary index (MLP).
    Fixed(Vec<f64>),
    /// Resolved detections (sequence and set models).
    Set(SetInput),
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[1, 2]` normalized position.
    pub position: Var,
    /// `[1, C]` class logits when the model has a classifier.
    pub logits: Option<Var>,
}

#[derive(Clone, Debug)]
struct Recurrent {
    w_in: ParamId,
    w_hidden: ParamId,
    bias: ParamId,
    out: Linear,
}

#[derive(Clone, Debug)]
enum Net {
    Mlp { l1: Linear, l2: Linear, l3: Linear },
    Rnn(Recurrent),
    Lstm(Recurrent),
    Attention { query: ParamId, l1: Linear, l2: Linear, l3: Linear },
    SetTransformer { input: Linear, sabs: Vec<AttentionBlock>, seed: ParamId, pma: AttentionBlock, head1: Linear, head2: Linear },
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    vocab_size: usize,
    store: ParamStore,
    embedding: Option<ParamId>,
    net: Net,
    classifier: Option<Linear>,
}

impl Model {
    /// Builds a randomly initialized model for a vocabulary of `vocab_size` BSSIDs.
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let row = config.embed_dim + 1;
        let h = config.hidden;

        let embedding = (config.arch != Arch::Mlp)
            .then(|| store.add("embedding", init_embedding(vocab_size, config.embed_dim, &mut rng)));

        let (net, pooled_width) = match config.arch {
            Arch::Mlp => {
                let l1 = Linear::new(&mut store, "mlp.l1", vocab_size, h, &mut rng);
                let l2 = Linear::new(&mut store, "mlp.l2", h, h, &mut rng);
                let l3 = Linear::new(&mut store, "mlp.l3", h, 2, &mut rng);
                (Net::Mlp { l1, l2, l3 }, h)
            }
            Arch::Rnn | Arch::Lstm => {
                let gates = if config.arch == Arch::Lstm { 4 } else { 1 };
                let name = config.arch.name();
                let bound = 1.0 / (h as f64).sqrt();
                let rec = Recurrent {
                    w_in: store.add(format!("{name}.w_in"), uniform(&mut rng, &[row, gates * h], bound)),
                    w_hidden: store.add(format!("{name}.w_hidden"), uniform(&mut rng, &[h, gates * h], bound)),
                    bias: store.add(format!("{name}.bias"), uniform(&mut rng, &[1, gates * h], bound)),
                    out: Linear::new(&mut store, &format!("{name}.out"), h, 2, &mut rng),
                };
                (if gates == 4 { Net::Lstm(rec) } else { Net::Rnn(rec) }, h)
            }
            Arch::Attention => {
                let query = store.add("attention.query", uniform(&mut rng, &[1, row], 1.0 / (row as f64).sqrt()));
                let l1 = Linear::new(&mut store, "attention.l1", row, h, &mut rng);
                let l2 = Linear::new(&mut store, "attention.l2", h, h, &mut rng);
                let l3 = Linear::new(&mut store, "attention.l3", h, 2, &mut rng);
                (Net::Attention { query, l1, l2, l3 }, row)
            }
            Arch::SetTransformer => {
                let input = Linear::new(&mut store, "st.input", row, h, &mut rng);
                let sabs = (0..config.sab_blocks)
                    .map(|i| AttentionBlock::new(&mut store, &format!("st.sab{i}"), h, config.heads, &mut rng))
                    .collect();
                let seed = store.add("st.pma.seed", uniform(&mut rng, &[1, h], 1.0 / (h as f64).sqrt()));
                let pma = AttentionBlock::new(&mut store, "st.pma", h, config.heads, &mut rng);
                let head1 = Linear::new(&mut store, "st.head1", h, config.head_hidden, &mut rng);
                let head2 = Linear::new(&mut store, "st.head2", config.head_hidden, 2, &mut rng);
                (Net::SetTransformer { input, sabs, seed, pma, head1, head2 }, h)
            }
        };
        let classifier = config
            .multi_task
            .then(|| Linear::new(&mut store, "classifier", pooled_width, config.num_classes, &mut rng));

        Ok(Model { config, vocab_size, store, embedding, net, classifier })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Parameter values paired with their names, in creation order.
    pub fn named_arrays(&self) -> Vec<(String, Tensor)> {
        self.store.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Overwrites every parameter from `arrays`; names and shapes must match exactly.
    pub fn load_arrays(&mut self, arrays: Vec<(String, Tensor)>) -> Result<()> {
        if arrays.len() != self.store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} arrays, {} model has {} parameters",
                arrays.len(),
                self.config.arch,
                self.store.len()
            )));
        }
        for (name, value) in arrays {
            let id = self.store.find(&name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint array `{name}` does not belong to a {} model", self.config.arch))
            })?;
            let p = self.store.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?} in the checkpoint but {:?} in the model",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }

    /// The BSSID embedding table, absent for the MLP.
    pub fn embedding(&self) -> Option<&Tensor> {
        self.embedding.map(|id| self.store.value(id))
    }

    /// Encodes `scan` the way this architecture expects.
    pub fn prepare(&self, encoder: &Encoder, scan: &Scan) -> Result<ModelInput> {
        match self.config.arch {
            Arch::Mlp => Ok(ModelInput::Fixed(encoder.encode_fixed_vector(scan).into_iter().map(normalize_rssi).collect())),
            Arch::Rnn | Arch::Lstm => Ok(ModelInput::Set(encoder.encode_sequence(scan)?)),
            Arch::Attention | Arch::SetTransformer => Ok(ModelInput::Set(encoder.encode_set(scan)?)),
        }
    }

    fn encoded_rows(&self, t: &mut Tape, input: &ModelInput) -> Result<Var> {
        let ModelInput::Set(set) = input else {
            return Err(Error::Config(format!("{} expects a set input, got a fixed vector", self.config.arch)));
        };
        if set.is_empty() {
            return Err(Error::Empty(format!("{} needs at least one detection", self.config.arch)));
        }
        let table = self.embedding.expect("set models own an embedding");
        let emb = t.gather_rows(&self.store, table, &set.rows)?;
        let rssi = t.constant(Tensor::matrix(set.len(), 1, set.rssi.clone())?);
        t.concat_cols(&[emb, rssi])
    }

    fn recurrent(&self, t: &mut Tape, rec: &Recurrent, rows: Var, lstm: bool) -> Result<Var> {
        let s = &self.store;
        let h = self.config.hidden;
        let w_in = t.param(s, rec.w_in);
        let w_hidden = t.param(s, rec.w_hidden);
        let bias = t.param(s, rec.bias);
        let projected = t.matmul(rows, w_in)?;
        let projected = t.add_row(projected, bias)?;
        let n = t.value(rows).rows();

        let mut hidden: Option<Var> = None;
        let mut cell: Option<Var> = None;
        for i in 0..n {
            let mut pre = t.row(projected, i)?;
            if let Some(prev) = hidden {
                let rec_term = t.matmul(prev, w_hidden)?;
                pre = t.add(pre, rec_term)?;
            }
            if !lstm {
                hidden = Some(t.tanh(pre));
                continue;
            }
            let gi = t.slice_cols(pre, 0, h)?;
            let gf = t.slice_cols(pre, h, h)?;
            let gg = t.slice_cols(pre, 2 * h, h)?;
            let go = t.slice_cols(pre, 3 * h, h)?;
            let input_gate = t.sigmoid(gi);
            let candidate = t.tanh(gg);
            let output_gate = t.sigmoid(go);
            let mut c = t.mul(input_gate, candidate)?;
            if let Some(prev) = cell {
                let forget_gate = t.sigmoid(gf);
                let kept = t.mul(forget_gate, prev)?;
                c = t.add(kept, c)?;
            }
            let squashed = t.tanh(c);
            hidden = Some(t.mul(output_gate, squashed)?);
            cell = Some(c);
        }
        Ok(hidden.expect("n >= 1"))
    }

    /// Records the forward pass on `t`.
    pub fn forward(&self, t: &mut Tape, input: &ModelInput) -> Result<ForwardOutput> {
        let s = &self.store;
        let (position, pooled) = match &self.net {
            Net::Mlp { l1, l2, l3 } => {
                let ModelInput::Fixed(x) = input else {
                    return Err(Error::Config("mlp expects a fixed-length vector".into()));
                };
                if x.len() != self.vocab_size {
                    return Err(Error::Shape {
                        op: "mlp",
                        detail: format!("input has {} features, model expects {}", x.len(), self.vocab_size),
                    });
                }
                let x = t.constant(Tensor::row(x.clone()));
                let h1 = l1.forward(t, s, x)?;
                let h1 = t.relu(h1);
                let h2 = l2.forward(t, s, h1)?;
                let h2 = t.relu(h2);
                (l3.forward(t, s, h2)?, h2)
            }
            Net::Rnn(rec) | Net::Lstm(rec) => {
                let rows = self.encoded_rows(t, input)?;
                let last = self.recurrent(t, rec, rows, matches!(self.net, Net::Lstm(_)))?;
                (rec.out.forward(t, s, last)?, last)
            }
            Net::Attention { query, l1, l2, l3 } => {
                let rows = self.encoded_rows(t, input)?;
                let q = t.param(s, *query);
                let scores = t.matmul_nt(q, rows)?;
                let alpha = t.softmax(scores)?;
                let z = t.matmul(alpha, rows)?;
                let h1 = l1.forward(t, s, z)?;
                let h1 = t.relu(h1);
                let h2 = l2.forward(t, s, h1)?;
                let h2 = t.relu(h2);
                (l3.forward(t, s, h2)?, z)
            }
            Net::SetTransformer { input: proj, sabs, seed, pma, head1, head2 } => {
                let rows = self.encoded_rows(t, input)?;
                let mut x = proj.forward(t, s, rows)?;
                for sab in sabs {
                    x = sab.forward(t, s, x, x)?;
                }
                let seed = t.param(s, *seed);
                let pooled = pma.forward(t, s, seed, x)?;
                let h = head1.forward(t, s, pooled)?;
                let h = t.relu(h);
                (head2.forward(t, s, h)?, pooled)
            }
        };
        let logits = match &self.classifier {
            Some(c) => Some(c.forward(t, s, pooled)?),
            None => None,
        };
        Ok(ForwardOutput { position, logits })
    }

    pub fn predict(&self, input: &ModelInput) -> Result<Prediction> {
        let mut t = Tape::new();
        let out = self.forward(&mut t, input)?;
        let p = t.value(out.position).data();
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("predicted position"));
        }
        Ok(Prediction {
            position_norm: (p[0], p[1]),
            class_logits: out.logits.map(|l| t.value(l).data().to_vec()),
        })
    }
}

#[cfg(test)]
mod tests;
