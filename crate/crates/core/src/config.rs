//! Model, training and ablation configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionLayerKind {
    Tanh,
    Gelu,
    /// Dense projection without a non-linearity.
    Linear,
    /// Linear projection followed by a transformer block.
    Transformer,
    /// Bidirectional LSTM with `hidden/2` units per direction.
    Recurrent,
}

/// Which question representation is mean-pooled into the question embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionEmbeddingSource {
    /// Output of the last dual-attention layer.
    DualAttention,
    /// Output of the last question self-attention layer.
    SelfAttention,
}

/// Normalisation axes for the two dual-attention weight matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualAttentionAxes {
    /// Question-side weights are distributions over document tokens, and
    /// document-side weights are distributions over question tokens.
    PerQuestionOverDocument,
    /// The two normalisations swapped.
    PerDocumentOverQuestion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Number of reader blocks; 0 removes the reader entirely.
    pub blocks: usize,
    pub top_k: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub vocab_size: usize,
    pub max_question_len: usize,
    pub window: usize,
    pub stride: usize,
    pub negative_keep_prob: f64,
    pub learning_rate: f64,
    pub warmup_proportion: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub max_span_len: usize,
    pub embedding_std: f64,

    pub no_dual_attention: bool,
    pub no_question_self_attention: bool,
    pub no_paragraph_self_attention: bool,
    pub no_paragraph_mask: bool,
    pub no_dynamic_mask: bool,
    pub no_multilevel: bool,
    pub no_cascade: bool,
    pub s2l_cascade: bool,
    pub no_question_embedding: bool,
    pub prediction_layer: PredictionLayerKind,

    pub question_embedding_source: QuestionEmbeddingSource,
    pub dual_attention_axes: DualAttentionAxes,
    /// When false the type head emits raw logits instead of probabilities.
    pub type_head_softmax: bool,
    /// Search short spans in every window containing the chosen paragraph.
    pub cross_span_short: bool,
}

/// Full-scale settings, kept for reference and reachable via a config file.
pub mod full_scale {
    pub const HIDDEN: usize = 1024;
    pub const BLOCKS: usize = 2;
    pub const TOP_K: usize = 256;
    pub const LEARNING_RATE: f64 = 2e-5;
    pub const WARMUP_PROPORTION: f64 = 0.1;
    pub const BATCH_SIZE: usize = 36;
    pub const EPOCHS: usize = 2;
    pub const WINDOW: usize = 512;
    pub const STRIDE: usize = 192;
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            blocks: 2,
            top_k: 16,
            heads: 4,
            encoder_layers: 1,
            vocab_size: 1024,
            max_question_len: 64,
            window: full_scale::WINDOW,
            stride: full_scale::STRIDE,
            negative_keep_prob: 0.1,
            learning_rate: 1e-3,
            warmup_proportion: full_scale::WARMUP_PROPORTION,
            batch_size: 8,
            epochs: 2,
            max_steps: None,
            seed: 0,
            max_span_len: 30,
            embedding_std: 1.0,
            no_dual_attention: false,
            no_question_self_attention: false,
            no_paragraph_self_attention: false,
            no_paragraph_mask: false,
            no_dynamic_mask: false,
            no_multilevel: false,
            no_cascade: false,
            s2l_cascade: false,
            no_question_embedding: false,
            prediction_layer: PredictionLayerKind::Tanh,
            question_embedding_source: QuestionEmbeddingSource::DualAttention,
            dual_attention_axes: DualAttentionAxes::PerQuestionOverDocument,
            type_head_softmax: true,
            cross_span_short: false,
        }
    }
}

/// Ablation table rows and the configuration that realises each.
pub const ABLATION_ROWS: &[(&str, &str)] = &[
    ("(a)", "blocks = 0: reader removed"),
    ("(b)", "no_dual_attention"),
    ("(c)", "no_question_self_attention"),
    ("(d)", "no_paragraph_self_attention"),
    ("(e)", "no_paragraph_mask"),
    ("(f)", "no_dynamic_mask"),
    ("(1)", "blocks = 0 and no_multilevel: reader and multi-level predictor removed"),
    ("(2)", "no_multilevel"),
    ("(3)", "no_cascade"),
    ("(4)", "s2l_cascade"),
    ("(5)", "no_question_embedding"),
    ("(6)", "prediction_layer = linear"),
    ("(7)", "prediction_layer = recurrent"),
    ("(8)", "prediction_layer = transformer"),
    ("(9)", "prediction_layer = gelu"),
];

impl ModelConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Tiny configuration used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            hidden: 16,
            blocks: 2,
            top_k: 4,
            heads: 2,
            vocab_size: 32,
            max_question_len: 8,
            window: 24,
            stride: 24,
            ..Self::default()
        }
    }

    /// Longest packed sequence the encoder must accept.
    pub fn max_sequence_len(&self) -> usize {
        self.window + self.max_question_len + 3
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.hidden == 0 {
            return fail("hidden must be >= 1".into());
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden {} must be divisible by heads {}",
                self.hidden, self.heads
            ));
        }
        if self.top_k == 0 {
            return fail("top_k must be >= 1".into());
        }
        if self.stride == 0 || self.stride > self.window {
            return fail(format!(
                "stride {} must satisfy 1 <= stride <= window {}",
                self.stride, self.window
            ));
        }
        if !(self.negative_keep_prob > 0.0 && self.negative_keep_prob <= 1.0) {
            return fail(format!(
                "negative_keep_prob {} must lie in (0, 1]",
                self.negative_keep_prob
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.warmup_proportion) {
            return fail(format!(
                "warmup_proportion {} must lie in [0, 1)",
                self.warmup_proportion
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.vocab_size < 3 {
            return fail("vocab_size must cover the special tokens".into());
        }
        if self.max_span_len == 0 {
            return fail("max_span_len must be >= 1".into());
        }
        if self.max_question_len == 0 {
            return fail("max_question_len must be >= 1".into());
        }
        if self.no_cascade && self.s2l_cascade {
            return fail("no_cascade and s2l_cascade are mutually exclusive".into());
        }
        if self.prediction_layer == PredictionLayerKind::Recurrent && !self.hidden.is_multiple_of(2) {
            return fail("recurrent prediction layer needs an even hidden size".into());
        }
        if !(self.embedding_std >= 0.0 && self.embedding_std.is_finite()) {
            return fail("embedding_std must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Ablation rows active under this configuration.
    pub fn ablation_rows(&self) -> Vec<&'static str> {
        let mut rows = Vec::new();
        if self.blocks == 0 {
            rows.push(if self.no_multilevel { "(1)" } else { "(a)" });
        }
        let flags = [
            (self.no_dual_attention, "(b)"),
            (self.no_question_self_attention, "(c)"),
            (self.no_paragraph_self_attention, "(d)"),
            (self.no_paragraph_mask, "(e)"),
            (self.no_dynamic_mask, "(f)"),
            (self.no_multilevel && self.blocks > 0, "(2)"),
            (self.no_cascade, "(3)"),
            (self.s2l_cascade, "(4)"),
            (self.no_question_embedding, "(5)"),
            (self.prediction_layer == PredictionLayerKind::Linear, "(6)"),
            (self.prediction_layer == PredictionLayerKind::Recurrent, "(7)"),
            (self.prediction_layer == PredictionLayerKind::Transformer, "(8)"),
            (self.prediction_layer == PredictionLayerKind::Gelu, "(9)"),
        ];
        rows.extend(flags.iter().filter(|(on, _)| *on).map(|(_, row)| *row));
        rows
    }
}
