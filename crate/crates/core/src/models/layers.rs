use rand::Rng;

use crate::autograd::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

const LN_EPS: f64 = 1e-5;

pub(crate) fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}

/// `y = x·W + b` with `W: [in, out]`, initialized `U(-1/√in, 1/√in)`.
#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(rng, &[fan_in, fan_out], bound));
        let b = store.add(format!("{name}.b"), uniform(rng, &[1, fan_out], bound));
        Linear { w, b }
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let w = t.param(s, self.w);
        let b = t.param(s, self.b);
        let y = t.matmul(x, w)?;
        t.add_row(y, b)
    }
}

/// Layer normalization with learnable scale and shift.
#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[1, width], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[1, width]));
        LayerNorm { gamma, beta }
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var) -> Result<Var> {
        let n = t.layer_norm(x, LN_EPS)?;
        let g = t.param(s, self.gamma);
        let b = t.param(s, self.beta);
        let y = t.mul_row(n, g)?;
        t.add_row(y, b)
    }
}

/// Scaled dot-product attention over `heads` column groups.
#[derive(Clone, Debug)]
pub(crate) struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    width: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Self {
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), width, width, rng),
            k: Linear::new(store, &format!("{name}.k"), width, width, rng),
            v: Linear::new(store, &format!("{name}.v"), width, width, rng),
            o: Linear::new(store, &format!("{name}.o"), width, width, rng),
            heads,
            width,
        }
    }

    /// Rows of `query` attend over the rows of `context`.
    pub fn forward(&self, t: &mut Tape, s: &ParamStore, query: Var, context: Var) -> Result<Var> {
        let q = self.q.forward(t, s, query)?;
        let k = self.k.forward(t, s, context)?;
        let v = self.v.forward(t, s, context)?;
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * dh, dh)?;
            let kh = t.slice_cols(k, h * dh, dh)?;
            let vh = t.slice_cols(v, h * dh, dh)?;
            let scores = t.matmul_nt(qh, kh)?;
            let scores = t.scale(scores, scale);
            let weights = t.softmax(scores)?;
            outs.push(t.matmul(weights, vh)?);
        }
        let joined = t.concat_cols(&outs)?;
        self.o.forward(t, s, joined)
    }
}

/// Attention block with post-norm residuals:
/// `H = LN(X + MHA(X, Y))`, `out = LN(H + FF(H))`, `FF = Linear → ReLU → Linear` (×2 expansion).
#[derive(Clone, Debug)]
pub(crate) struct AttentionBlock {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
    norm2: LayerNorm,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Self {
        AttentionBlock {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, rng),
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), width),
            ff_in: Linear::new(store, &format!("{name}.ff1"), width, 2 * width, rng),
            ff_out: Linear::new(store, &format!("{name}.ff2"), 2 * width, width, rng),
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), width),
        }
    }

    pub fn forward(&self, t: &mut Tape, s: &ParamStore, x: Var, y: Var) -> Result<Var> {
        let a = self.attn.forward(t, s, x, y)?;
        let r = t.add(x, a)?;
        let h = self.norm1.forward(t, s, r)?;
        let f = self.ff_in.forward(t, s, h)?;
        let f = t.relu(f);
        let f = self.ff_out.forward(t, s, f)?;
        let r = t.add(h, f)?;
        self.norm2.forward(t, s, r)
    }
}
