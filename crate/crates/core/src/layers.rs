//! Reusable parameterised building blocks: dense layers, layer norm,
//! multi-head self-attention, transformer blocks and a bidirectional LSTM.

use rand::Rng;

use crate::autodiff::{Activation, Var};
use crate::error::{Error, Result};
use crate::params::{Graph, ParamId, ParamStore};
use crate::tensor::{AdditiveMask, Matrix};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_weight(format!("{name}.w"), in_dim, out_dim, rng);
        let b = store.add(format!("{name}.b"), Matrix::zeros(1, out_dim));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, act: Activation) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.tape.dense(x, w, b, act)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Matrix::filled(1, dim, 1.0)),
            beta: store.add(format!("{name}.beta"), Matrix::zeros(1, dim)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.tape.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

pub fn check_heads(hidden: usize, heads: usize) -> Result<()> {
    if heads == 0 || !hidden.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "hidden size {hidden} is not divisible by head count {heads}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_heads(hidden, heads)?;
        Ok(Self {
            query: Linear::new(store, &format!("{name}.query"), hidden, hidden, rng),
            key: Linear::new(store, &format!("{name}.key"), hidden, hidden, rng),
            value: Linear::new(store, &format!("{name}.value"), hidden, hidden, rng),
            output: Linear::new(store, &format!("{name}.output"), hidden, hidden, rng),
            heads,
        })
    }

    /// Returns the projected attention output and each head's weight matrix.
    /// Scores are scaled by `1/√(hidden/heads)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        masks: &[&AdditiveMask],
    ) -> Result<(Var, Vec<Var>)> {
        let hidden = g.tape.shape(x).1;
        check_heads(hidden, self.heads)?;
        let head_dim = hidden / self.heads;
        let q = self.query.forward(g, x, Activation::Linear)?;
        let k = self.key.forward(g, x, Activation::Linear)?;
        let v = self.value.forward(g, x, Activation::Linear)?;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let mut outputs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let (lo, hi) = (head * head_dim, (head + 1) * head_dim);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.tape.slice_cols(q, lo, hi)?,
                    g.tape.slice_cols(k, lo, hi)?,
                    g.tape.slice_cols(v, lo, hi)?,
                )
            };
            let kt = g.tape.transpose(kh);
            let raw = g.tape.matmul(qh, kt)?;
            let scores = g.tape.scale(raw, scale);
            let attn = g.tape.masked_softmax(scores, masks)?;
            outputs.push(g.tape.matmul(attn, vh)?);
            weights.push(attn);
        }
        let merged = if outputs.len() == 1 {
            outputs[0]
        } else {
            g.tape.concat_cols(&outputs)?
        };
        let out = self.output.forward(g, merged, Activation::Linear)?;
        Ok((out, weights))
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        inner: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), hidden, inner, rng),
            down: Linear::new(store, &format!("{name}.down"), inner, hidden, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let inner = self.up.forward(g, x, Activation::Gelu)?;
        self.down.forward(g, inner, Activation::Linear)
    }
}

/// Post-norm transformer block: `LN(x + attn(x) [+ extra])` then `LN(y + ffn(y))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attention: MultiHeadAttention,
    pub attention_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), hidden, heads, rng)?,
            attention_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), hidden),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), hidden, 4 * hidden, rng),
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), hidden),
        })
    }

    /// `extra` is added to the attention sub-layer output before the residual.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        masks: &[&AdditiveMask],
        extra: Option<Var>,
    ) -> Result<(Var, Vec<Var>)> {
        let (attn, weights) = self.attention.forward(g, x, masks)?;
        let attn = match extra {
            Some(e) => g.tape.add(attn, e)?,
            None => attn,
        };
        let residual = g.tape.add(x, attn)?;
        let y = self.attention_norm.forward(g, residual)?;
        let ff = self.ffn.forward(g, y)?;
        let residual = g.tape.add(y, ff)?;
        let out = self.ffn_norm.forward(g, residual)?;
        Ok((out, weights))
    }
}

#[derive(Clone, Debug)]
struct LstmDirection {
    input: Linear,
    recurrent: ParamId,
}

/// Bidirectional LSTM over the rows of its input; output width is `2·units`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    forward_dir: LstmDirection,
    backward_dir: LstmDirection,
    pub units: usize,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        units: usize,
        rng: &mut R,
    ) -> Self {
        let mut direction = |dir: &str| LstmDirection {
            input: Linear::new(store, &format!("{name}.{dir}.input"), in_dim, 4 * units, rng),
            recurrent: store.add_weight(format!("{name}.{dir}.recurrent"), units, 4 * units, rng),
        };
        let forward_dir = direction("fwd");
        let backward_dir = direction("bwd");
        Self {
            forward_dir,
            backward_dir,
            units,
        }
    }

    fn run(&self, g: &mut Graph, x: Var, dir: &LstmDirection, reverse: bool) -> Result<Vec<Var>> {
        let steps = g.tape.shape(x).0;
        let d = self.units;
        let projected = dir.input.forward(g, x, Activation::Linear)?;
        let recurrent = g.param(dir.recurrent);
        let mut h = g.tape.constant(Matrix::zeros(1, d));
        let mut c = g.tape.constant(Matrix::zeros(1, d));
        let mut states = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let xt = g.tape.gather_rows(projected, &[t])?;
            let hu = g.tape.matmul(h, recurrent)?;
            let z = g.tape.add(xt, hu)?;
            let gate = |g: &mut Graph, k: usize, act| -> Result<Var> {
                let s = g.tape.slice_cols(z, k * d, (k + 1) * d)?;
                Ok(g.tape.activation(s, act))
            };
            let i = gate(g, 0, Activation::Sigmoid)?;
            let f = gate(g, 1, Activation::Sigmoid)?;
            let o = gate(g, 2, Activation::Sigmoid)?;
            let cand = gate(g, 3, Activation::Tanh)?;
            let keep = g.tape.mul(f, c)?;
            let write = g.tape.mul(i, cand)?;
            c = g.tape.add(keep, write)?;
            let squashed = g.tape.activation(c, Activation::Tanh);
            h = g.tape.mul(o, squashed)?;
            states[t] = h;
        }
        Ok(states)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.tape.shape(x).0 == 0 {
            return Err(Error::Empty("bilstm"));
        }
        let fwd = self.run(g, x, &self.forward_dir, false)?;
        let bwd = self.run(g, x, &self.backward_dir, true)?;
        let fwd = g.tape.concat_rows(&fwd)?;
        let bwd = g.tape.concat_rows(&bwd)?;
        g.tape.concat_cols(&[fwd, bwd])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transformer_block_shapes_and_weight_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let block = TransformerBlock::new(&mut store, "blk", 8, 2, &mut rng).unwrap();
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Matrix::randn(4, 8, 1.0, &mut rng));
        let (y, weights) = block.forward(&mut g, x, &[], None).unwrap();
        assert_eq!(g.tape.shape(y), (4, 8));
        assert_eq!(weights.len(), 2);
        for w in weights {
            let a = g.tape.value(w);
            for i in 0..a.rows() {
                assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn head_count_must_divide_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        assert!(matches!(
            TransformerBlock::new(&mut store, "blk", 10, 4, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bilstm_output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let lstm = BiLstm::new(&mut store, "rnn", 6, 4, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Matrix::randn(5, 6, 1.0, &mut rng));
        let y = lstm.forward(&mut g, x).unwrap();
        assert_eq!(g.tape.shape(y), (5, 8));
    }
}
