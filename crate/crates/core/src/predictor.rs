//! Multi-level cascaded answer predictor: long answer → short start →
//! short end → answer type, each stage consuming the previous stage's
//! prediction representation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Var};
use crate::config::{ModelConfig, PredictionLayerKind};
use crate::error::{Error, Result};
use crate::layers::{BiLstm, Linear, TransformerBlock};
use crate::params::{Graph, ParamId, ParamStore};
use crate::reader::{ParagraphMap, ReaderOutput};
use crate::tensor::Matrix;

pub const NUM_ANSWER_TYPES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum AnswerType {
    Null = 0,
    Short = 1,
    Long = 2,
    Yes = 3,
    No = 4,
}

impl AnswerType {
    pub const ALL: [AnswerType; NUM_ANSWER_TYPES] = [
        AnswerType::Null,
        AnswerType::Short,
        AnswerType::Long,
        AnswerType::Yes,
        AnswerType::No,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl TryFrom<u8> for AnswerType {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Self::from_index(v as usize).ok_or_else(|| format!("answer type {v} not in 0..=4"))
    }
}

impl From<AnswerType> for u8 {
    fn from(t: AnswerType) -> u8 {
        t as u8
    }
}

/// Targets of one instance in local coordinates. `None` is the NULL sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TargetLabels {
    pub long: Option<usize>,
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub answer_type: AnswerType,
}

impl TargetLabels {
    pub fn null() -> Self {
        Self {
            long: None,
            start: None,
            end: None,
            answer_type: AnswerType::Null,
        }
    }

    /// Checks the label invariants against `paragraphs` paragraphs and `tokens` tokens.
    pub fn validate(&self, paragraphs: usize, tokens: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Labels(msg));
        match self.answer_type {
            AnswerType::Null => {
                if self.long.is_some() || self.start.is_some() || self.end.is_some() {
                    return bad(format!("NULL instance carries targets: {self:?}"));
                }
            }
            AnswerType::Short => match (self.long, self.start, self.end) {
                (Some(_), Some(s), Some(e)) if s <= e => {}
                _ => return bad(format!("SHORT instance needs long and s <= e: {self:?}")),
            },
            AnswerType::Long | AnswerType::Yes | AnswerType::No => {
                if self.long.is_none() || self.start.is_some() || self.end.is_some() {
                    return bad(format!("long-only instance must have long and no span: {self:?}"));
                }
            }
        }
        if let Some(c) = self.long {
            if c >= paragraphs {
                return bad(format!("long target {c} out of {paragraphs} paragraphs"));
            }
        }
        for pos in [self.start, self.end].into_iter().flatten() {
            if pos >= tokens {
                return bad(format!("span target {pos} out of {tokens} tokens"));
            }
        }
        Ok(())
    }
}

/// The layer type used for every prediction representation.
#[derive(Clone, Debug)]
pub enum PredictionLayer {
    Dense(Linear, Activation),
    Transformer(Linear, Box<TransformerBlock>),
    Recurrent(BiLstm),
}

impl PredictionLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        heads: usize,
        kind: PredictionLayerKind,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match kind {
            PredictionLayerKind::Tanh => Self::Dense(Linear::new(store, name, in_dim, hidden, rng), Activation::Tanh),
            PredictionLayerKind::Gelu => Self::Dense(Linear::new(store, name, in_dim, hidden, rng), Activation::Gelu),
            PredictionLayerKind::Linear => {
                Self::Dense(Linear::new(store, name, in_dim, hidden, rng), Activation::Linear)
            }
            PredictionLayerKind::Transformer => Self::Transformer(
                Linear::new(store, &format!("{name}.proj"), in_dim, hidden, rng),
                Box::new(TransformerBlock::new(store, &format!("{name}.block"), hidden, heads, rng)?),
            ),
            PredictionLayerKind::Recurrent => {
                Self::Recurrent(BiLstm::new(store, name, in_dim, hidden / 2, rng))
            }
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Self::Dense(linear, act) => linear.forward(g, x, *act),
            Self::Transformer(proj, block) => {
                let p = proj.forward(g, x, Activation::Linear)?;
                Ok(block.forward(g, p, &[], None)?.0)
            }
            Self::Recurrent(lstm) => lstm.forward(g, x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CascadeOrder {
    /// long → start → end → type
    LongToShort,
    /// start → end → long → type
    ShortToLong,
    /// every head reads only the reader outputs
    Independent,
}

#[derive(Clone, Debug)]
pub struct PredictorParams {
    pub long_layer: PredictionLayer,
    pub start_layer: PredictionLayer,
    pub end_layer: PredictionLayer,
    pub type_layer: PredictionLayer,
    pub w_long: ParamId,
    pub w_start: ParamId,
    pub w_end: ParamId,
    pub w_type: ParamId,
    pub order: CascadeOrder,
    pub use_question_embedding: bool,
    pub type_softmax: bool,
}

impl PredictorParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let h = cfg.hidden;
        let order = if cfg.no_cascade {
            CascadeOrder::Independent
        } else if cfg.s2l_cascade {
            CascadeOrder::ShortToLong
        } else {
            CascadeOrder::LongToShort
        };
        let (long_in, start_in, end_in) = match order {
            CascadeOrder::LongToShort => (h, 2 * h, 2 * h),
            CascadeOrder::ShortToLong => (2 * h, h, 2 * h),
            CascadeOrder::Independent => (h, h, h),
        };
        let mut type_in = 3 * h;
        if cfg.no_question_embedding {
            type_in -= h;
        }
        if order == CascadeOrder::Independent {
            type_in -= h;
        }
        let kind = cfg.prediction_layer;
        let mut layer = |name: &str, in_dim: usize| {
            PredictionLayer::new(store, &format!("predictor.{name}"), in_dim, h, cfg.heads, kind, rng)
        };
        let long_layer = layer("long", long_in)?;
        let start_layer = layer("start", start_in)?;
        let end_layer = layer("end", end_in)?;
        let type_layer = layer("type", type_in)?;
        Ok(Self {
            long_layer,
            start_layer,
            end_layer,
            type_layer,
            w_long: store.add_weight("predictor.w_long", h, 1, rng),
            w_start: store.add_weight("predictor.w_start", h, 1, rng),
            w_end: store.add_weight("predictor.w_end", h, 1, rng),
            w_type: store.add_weight("predictor.w_type", h, NUM_ANSWER_TYPES, rng),
            order,
            use_question_embedding: !cfg.no_question_embedding,
            type_softmax: cfg.type_head_softmax,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PredictorOutput {
    /// `1×(l+1)`: one logit per paragraph plus a fixed zero null slot.
    pub long_logits: Var,
    /// `1×m`
    pub start_logits: Var,
    /// `1×m`
    pub end_logits: Var,
    /// `1×5`, probabilities unless the type head runs without softmax.
    pub answer_type: Var,
    pub long_repr: Var,
    pub start_repr: Var,
    pub end_repr: Var,
}

/// `(m×h)·(h×1)` logits as a `1×m` row.
fn row_logits(g: &mut Graph, repr: Var, w: ParamId) -> Result<Var> {
    let w = g.param(w);
    let col = g.tape.matmul(repr, w)?;
    Ok(g.tape.transpose(col))
}

/// Returns `(H_L, o_L)` with the null slot appended at index `l`.
pub fn predict_long(g: &mut Graph, paragraphs: Var, params: &PredictorParams) -> Result<(Var, Var)> {
    let h_long = params.long_layer.forward(g, paragraphs)?;
    let logits = long_logits_from(g, h_long, params)?;
    Ok((h_long, logits))
}

fn long_logits_from(g: &mut Graph, h_long: Var, params: &PredictorParams) -> Result<Var> {
    let logits = row_logits(g, h_long, params.w_long)?;
    let null_slot = g.tape.constant(Matrix::zeros(1, 1));
    g.tape.concat_cols(&[logits, null_slot])
}

/// Row `i` of the result is row `seg[i]` of `h_long`.
pub fn tile_long(g: &mut Graph, h_long: Var, seg: &ParagraphMap) -> Result<Var> {
    g.tape.gather_rows(h_long, seg.entries())
}

/// Returns `(H_S, o_S, H_E, o_E)`.
pub fn predict_short(
    g: &mut Graph,
    tiled_long: Var,
    document: Var,
    params: &PredictorParams,
) -> Result<(Var, Var, Var, Var)> {
    let start_in = g.tape.concat_cols(&[tiled_long, document])?;
    let h_start = params.start_layer.forward(g, start_in)?;
    let o_start = row_logits(g, h_start, params.w_start)?;
    let end_in = g.tape.concat_cols(&[h_start, document])?;
    let h_end = params.end_layer.forward(g, end_in)?;
    let o_end = row_logits(g, h_end, params.w_end)?;
    Ok((h_start, o_start, h_end, o_end))
}

/// `o_T = softmax(F^T([mean(D) ; q ; max(H_E)]) · W^T)`; `q` and `H_E` may
/// be absent under ablations.
pub fn predict_type(
    g: &mut Graph,
    document: Var,
    question: Option<Var>,
    h_end: Option<Var>,
    params: &PredictorParams,
) -> Result<Var> {
    let mut parts = vec![g.tape.mean_pool_rows(document)?];
    if let Some(q) = question {
        parts.push(q);
    }
    if let Some(e) = h_end {
        parts.push(g.tape.max_pool_rows(e)?);
    }
    let input = g.tape.concat_cols(&parts)?;
    let h_type = params.type_layer.forward(g, input)?;
    let w = g.param(params.w_type);
    let logits = g.tape.matmul(h_type, w)?;
    if params.type_softmax {
        g.tape.masked_softmax(logits, &[])
    } else {
        Ok(logits)
    }
}

pub fn predict(
    g: &mut Graph,
    reader: &ReaderOutput,
    seg: &ParagraphMap,
    params: &PredictorParams,
) -> Result<PredictorOutput> {
    let question = params.use_question_embedding.then_some(reader.question_embedding);
    let d = reader.document;
    match params.order {
        CascadeOrder::LongToShort => {
            let (h_long, o_long) = predict_long(g, reader.paragraphs, params)?;
            let tiled = tile_long(g, h_long, seg)?;
            let (h_start, o_start, h_end, o_end) = predict_short(g, tiled, d, params)?;
            let o_type = predict_type(g, d, question, Some(h_end), params)?;
            Ok(PredictorOutput {
                long_logits: o_long,
                start_logits: o_start,
                end_logits: o_end,
                answer_type: o_type,
                long_repr: h_long,
                start_repr: h_start,
                end_repr: h_end,
            })
        }
        CascadeOrder::ShortToLong => {
            let h_start = params.start_layer.forward(g, d)?;
            let o_start = row_logits(g, h_start, params.w_start)?;
            let end_in = g.tape.concat_cols(&[h_start, d])?;
            let h_end = params.end_layer.forward(g, end_in)?;
            let o_end = row_logits(g, h_end, params.w_end)?;
            let pooled_end = g.tape.segment_mean_pool(h_end, seg.entries(), seg.count())?;
            let long_in = g.tape.concat_cols(&[reader.paragraphs, pooled_end])?;
            let h_long = params.long_layer.forward(g, long_in)?;
            let o_long = long_logits_from(g, h_long, params)?;
            let o_type = predict_type(g, d, question, Some(h_end), params)?;
            Ok(PredictorOutput {
                long_logits: o_long,
                start_logits: o_start,
                end_logits: o_end,
                answer_type: o_type,
                long_repr: h_long,
                start_repr: h_start,
                end_repr: h_end,
            })
        }
        CascadeOrder::Independent => {
            let (h_long, o_long) = predict_long(g, reader.paragraphs, params)?;
            let h_start = params.start_layer.forward(g, d)?;
            let o_start = row_logits(g, h_start, params.w_start)?;
            let h_end = params.end_layer.forward(g, d)?;
            let o_end = row_logits(g, h_end, params.w_end)?;
            let o_type = predict_type(g, d, question, None, params)?;
            Ok(PredictorOutput {
                long_logits: o_long,
                start_logits: o_start,
                end_logits: o_end,
                answer_type: o_type,
                long_repr: h_long,
                start_repr: h_start,
                end_repr: h_end,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    /// Include the long-answer term in the total.
    pub multilevel: bool,
    /// The type head output is a probability vector.
    pub type_is_probs: bool,
}

impl From<&ModelConfig> for LossOptions {
    fn from(cfg: &ModelConfig) -> Self {
        Self {
            multilevel: !cfg.no_multilevel,
            type_is_probs: cfg.type_head_softmax,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub long: Var,
    pub start: Var,
    pub end: Var,
    pub answer_type: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub long: f64,
    pub start: f64,
    pub end: f64,
    pub answer_type: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> LossValues {
        let v = |x: Var| g.tape.value(x).get(0, 0);
        LossValues {
            total: v(self.total),
            long: v(self.long),
            start: v(self.start),
            end: v(self.end),
            answer_type: v(self.answer_type),
        }
    }
}

/// Sum of the four cross-entropy terms. NULL long targets map to the null
/// slot; NULL span targets map to position 0.
pub fn total_loss(
    g: &mut Graph,
    out: &PredictorOutput,
    targets: &TargetLabels,
    opts: &LossOptions,
) -> Result<LossTerms> {
    let paragraphs = g.tape.shape(out.long_logits).1 - 1;
    let tokens = g.tape.shape(out.start_logits).1;
    targets.validate(paragraphs, tokens)?;
    let long = g.tape.cross_entropy(out.long_logits, targets.long.unwrap_or(paragraphs), false)?;
    let start = g.tape.cross_entropy(out.start_logits, targets.start.unwrap_or(0), false)?;
    let end = g.tape.cross_entropy(out.end_logits, targets.end.unwrap_or(0), false)?;
    let answer_type = g.tape.cross_entropy(out.answer_type, targets.answer_type.index(), opts.type_is_probs)?;
    let total = if opts.multilevel {
        g.tape.add_scalars(&[long, start, end, answer_type])?
    } else {
        g.tape.add_scalars(&[start, end, answer_type])?
    };
    Ok(LossTerms {
        total,
        long,
        start,
        end,
        answer_type,
    })
}
