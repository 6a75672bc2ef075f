//! Dynamic paragraph dual-attention reader.
//!
//! Each block runs, in order:
//!
//! 1. dual attention between the question and the document span, with
//!    residual connections and layer norm on both sides;
//! 2. a transformer block over the question;
//! 3. a transformer block over the document whose self-attention is
//!    restricted to tokens of the same paragraph and to the top-K tokens
//!    chosen by a learned sigmoid scorer.
//!
//! After the last block the document rows are mean-pooled per paragraph and
//! the question rows are mean-pooled into a single question embedding.

use std::ops::Range;

use rand::Rng;

use crate::autodiff::{Activation, Var};
use crate::config::{DualAttentionAxes, ModelConfig, QuestionEmbeddingSource};
use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Linear, TransformerBlock};
use crate::params::{Graph, ParamId, ParamStore};
use crate::tensor::{AdditiveMask, Matrix};

/// Token index → paragraph index for one document span. Paragraphs are
/// contiguous runs numbered from 0 in order of appearance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParagraphMap {
    entries: Vec<usize>,
    count: usize,
}

impl ParagraphMap {
    pub fn new(entries: Vec<usize>) -> Result<Self> {
        match entries.first() {
            None => return Err(Error::Empty("paragraph map")),
            Some(&first) if first != 0 => {
                return Err(Error::Config("paragraph map must start at 0".into()))
            }
            _ => {}
        }
        for w in entries.windows(2) {
            if w[1] != w[0] && w[1] != w[0] + 1 {
                return Err(Error::Config(format!(
                    "paragraph map must be contiguous and non-decreasing, found {} after {}",
                    w[1], w[0]
                )));
            }
        }
        let count = entries[entries.len() - 1] + 1;
        Ok(Self { entries, count })
    }

    /// Builds the map from consecutive paragraph lengths (all ≥ 1).
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        if lengths.contains(&0) {
            return Err(Error::Empty("paragraph"));
        }
        let entries = lengths
            .iter()
            .enumerate()
            .flat_map(|(p, &len)| std::iter::repeat_n(p, len))
            .collect();
        Self::new(entries)
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    /// Number of tokens.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of paragraphs.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn paragraph_of(&self, token: usize) -> usize {
        self.entries[token]
    }

    /// Token range of paragraph `p`.
    pub fn range(&self, p: usize) -> Range<usize> {
        let start = self.entries.partition_point(|&e| e < p);
        let end = self.entries.partition_point(|&e| e <= p);
        start..end
    }
}

#[derive(Clone, Debug)]
pub struct DualAttentionParams {
    pub w_document: ParamId,
    pub w_question: ParamId,
    pub document_norm: LayerNorm,
    pub question_norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct DpdaBlockParams {
    pub dual: DualAttentionParams,
    pub question_block: TransformerBlock,
    pub paragraph_block: TransformerBlock,
    pub scorer: Linear,
    /// `1×h` projection of the token scores added after the attention sub-layer.
    pub score_projection: ParamId,
}

impl DpdaBlockParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dual = DualAttentionParams {
            w_document: store.add_weight(format!("{name}.dual.w_document"), 2 * hidden, hidden, rng),
            w_question: store.add_weight(format!("{name}.dual.w_question"), 2 * hidden, hidden, rng),
            document_norm: LayerNorm::new(store, &format!("{name}.dual.document_norm"), hidden),
            question_norm: LayerNorm::new(store, &format!("{name}.dual.question_norm"), hidden),
        };
        Ok(Self {
            dual,
            question_block: TransformerBlock::new(store, &format!("{name}.question"), hidden, heads, rng)?,
            paragraph_block: TransformerBlock::new(store, &format!("{name}.paragraph"), hidden, heads, rng)?,
            scorer: Linear::new(store, &format!("{name}.scorer"), hidden, 1, rng),
            score_projection: store.add_weight(format!("{name}.score_projection"), 1, hidden, rng),
        })
    }
}

/// Intermediate dual-attention values, kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct DualAttentionTrace {
    /// `m×n` similarity `D·Qᵀ`
    pub similarity: Var,
    /// `m×n`
    pub question_weights: Var,
    /// `n×m`
    pub document_weights: Var,
    /// `n×h` attended document summary per question token
    pub question_context: Var,
    /// `m×2h`
    pub document_fused: Var,
    /// `m×h` attended question summary per document token
    pub document_context: Var,
    /// `n×2h`
    pub question_fused: Var,
}

/// Returns `(Q_C, D_C, trace)`.
pub fn dual_attention(
    g: &mut Graph,
    q_prev: Var,
    d_prev: Var,
    params: &DualAttentionParams,
    axes: DualAttentionAxes,
) -> Result<(Var, Var, DualAttentionTrace)> {
    let (n, h) = g.tape.shape(q_prev);
    let (m, hd) = g.tape.shape(d_prev);
    if h != hd {
        return Err(Error::Shape {
            op: "dual_attention",
            lhs: (n, h),
            rhs: (m, hd),
        });
    }
    let q_t = g.tape.transpose(q_prev);
    let similarity = g.tape.matmul(d_prev, q_t)?;
    let similarity_t = g.tape.transpose(similarity);
    let (question_weights, document_weights) = match axes {
        DualAttentionAxes::PerQuestionOverDocument => {
            // Columns of both matrices are distributions.
            let per_question = g.tape.masked_softmax(similarity_t, &[])?;
            let per_document = g.tape.masked_softmax(similarity, &[])?;
            (g.tape.transpose(per_question), g.tape.transpose(per_document))
        }
        DualAttentionAxes::PerDocumentOverQuestion => (
            g.tape.masked_softmax(similarity, &[])?,
            g.tape.masked_softmax(similarity_t, &[])?,
        ),
    };

    let aq_t = g.tape.transpose(question_weights);
    let ad_t = g.tape.transpose(document_weights);
    let question_context = g.tape.matmul(aq_t, d_prev)?;
    let q_stack = g.tape.concat_cols(&[q_prev, question_context])?;
    let document_fused = g.tape.matmul(ad_t, q_stack)?;
    let document_context = g.tape.matmul(ad_t, q_prev)?;
    let d_stack = g.tape.concat_cols(&[d_prev, document_context])?;
    let question_fused = g.tape.matmul(aq_t, d_stack)?;

    let w_d = g.param(params.w_document);
    let projected = g.tape.matmul(document_fused, w_d)?;
    let residual = g.tape.add(d_prev, projected)?;
    let d_c = params.document_norm.forward(g, residual)?;

    let w_q = g.param(params.w_question);
    let projected = g.tape.matmul(question_fused, w_q)?;
    let residual = g.tape.add(q_prev, projected)?;
    let q_c = params.question_norm.forward(g, residual)?;

    Ok((
        q_c,
        d_c,
        DualAttentionTrace {
            similarity,
            question_weights,
            document_weights,
            question_context,
            document_fused,
            document_context,
            question_fused,
        },
    ))
}

pub fn question_self_attention(g: &mut Graph, q_c: Var, block: &TransformerBlock) -> Result<Var> {
    Ok(block.forward(g, q_c, &[], None)?.0)
}

/// Entry `(i, j)` is open iff tokens `i` and `j` share a paragraph.
pub fn paragraph_mask(seg: &ParagraphMap) -> AdditiveMask {
    let e = seg.entries();
    AdditiveMask::from_fn(e.len(), e.len(), |i, j| e[i] == e[j])
}

/// `sigmoid(D_C·w + b)`, one importance score per token.
pub fn score_tokens(g: &mut Graph, d_c: Var, scorer: &Linear) -> Result<Var> {
    scorer.forward(g, d_c, Activation::Sigmoid)
}

/// Selects the `min(k, m)` highest scores (lowest index wins ties) and opens
/// exactly the selected × selected block. The selection is returned sorted.
pub fn dynamic_mask(scores: &Matrix, k: usize) -> (AdditiveMask, Vec<usize>) {
    let m = scores.rows();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        scores
            .get(b, 0)
            .partial_cmp(&scores.get(a, 0))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k.min(m));
    order.sort_unstable();
    let mut chosen = vec![false; m];
    for &i in &order {
        chosen[i] = true;
    }
    let mask = AdditiveMask::from_fn(m, m, |i, j| chosen[i] && chosen[j]);
    (mask, order)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReaderOptions {
    pub top_k: usize,
    pub dual_attention: bool,
    pub question_self_attention: bool,
    pub paragraph_self_attention: bool,
    pub paragraph_mask: bool,
    pub dynamic_mask: bool,
    pub question_embedding_source: QuestionEmbeddingSource,
    pub axes: DualAttentionAxes,
}

impl From<&ModelConfig> for ReaderOptions {
    fn from(cfg: &ModelConfig) -> Self {
        Self {
            top_k: cfg.top_k,
            dual_attention: !cfg.no_dual_attention,
            question_self_attention: !cfg.no_question_self_attention,
            paragraph_self_attention: !cfg.no_paragraph_self_attention,
            paragraph_mask: !cfg.no_paragraph_mask,
            dynamic_mask: !cfg.no_dynamic_mask,
            question_embedding_source: cfg.question_embedding_source,
            axes: cfg.dual_attention_axes,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParagraphAttention {
    pub output: Var,
    /// One `m×m` weight matrix per head.
    pub weights: Vec<Var>,
    /// Tokens kept by the dynamic mask (all tokens when it is disabled).
    pub selected: Vec<usize>,
}

pub fn paragraph_dynamic_self_attention(
    g: &mut Graph,
    d_c: Var,
    scores: Var,
    seg: &ParagraphMap,
    block: &DpdaBlockParams,
    opts: &ReaderOptions,
) -> Result<ParagraphAttention> {
    let m = g.tape.shape(d_c).0;
    if seg.len() != m {
        return Err(Error::Shape {
            op: "paragraph_dynamic_self_attention",
            lhs: g.tape.shape(d_c),
            rhs: (seg.len(), 1),
        });
    }
    let para_mask = opts.paragraph_mask.then(|| paragraph_mask(seg));
    let (dyn_mask, selected) = if opts.dynamic_mask {
        let (mask, selected) = dynamic_mask(g.tape.value(scores), opts.top_k);
        (Some(mask), selected)
    } else {
        (None, (0..m).collect())
    };
    let masks: Vec<&AdditiveMask> = dyn_mask.iter().chain(para_mask.iter()).collect();

    let projection = g.param(block.score_projection);
    let reinjected = g.tape.matmul(scores, projection)?;
    let (output, weights) = block.paragraph_block.forward(g, d_c, &masks, Some(reinjected))?;
    Ok(ParagraphAttention {
        output,
        weights,
        selected,
    })
}

#[derive(Clone, Debug, Default)]
pub struct BlockTrace {
    pub dual: Option<DualAttentionTrace>,
    pub question_c: Option<Var>,
    pub document_c: Option<Var>,
    pub scores: Option<Var>,
    pub selected: Vec<usize>,
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct ReaderOutput {
    /// `m×h` final token representation.
    pub document: Var,
    /// `l×h` paragraph representation.
    pub paragraphs: Var,
    /// `1×h` question embedding.
    pub question_embedding: Var,
    /// `n×h` question representation after the last block.
    pub question: Var,
    pub blocks: Vec<BlockTrace>,
}

pub fn run_reader(
    g: &mut Graph,
    q0: Var,
    d0: Var,
    seg: &ParagraphMap,
    blocks: &[DpdaBlockParams],
    opts: &ReaderOptions,
) -> Result<ReaderOutput> {
    let (mut q, mut d) = (q0, d0);
    let mut q_c_last = q0;
    let mut traces = Vec::with_capacity(blocks.len());
    for (t, block) in blocks.iter().enumerate() {
        let mut trace = BlockTrace::default();
        let (q_c, d_c) = if opts.dual_attention {
            let (q_c, d_c, dual) = dual_attention(g, q, d, &block.dual, opts.axes)?;
            trace.dual = Some(dual);
            (q_c, d_c)
        } else {
            (q, d)
        };
        trace.question_c = Some(q_c);
        trace.document_c = Some(d_c);

        let last = t + 1 == blocks.len();
        let q_needed = !last || opts.question_embedding_source == QuestionEmbeddingSource::SelfAttention;
        q = if opts.question_self_attention && q_needed {
            question_self_attention(g, q_c, &block.question_block)?
        } else {
            q_c
        };

        d = if opts.paragraph_self_attention {
            let scores = score_tokens(g, d_c, &block.scorer)?;
            let attn = paragraph_dynamic_self_attention(g, d_c, scores, seg, block, opts)?;
            trace.scores = Some(scores);
            trace.selected = attn.selected;
            trace.attention = attn.weights;
            attn.output
        } else {
            d_c
        };
        q_c_last = q_c;
        traces.push(trace);
    }

    let paragraphs = g.tape.segment_mean_pool(d, seg.entries(), seg.count())?;
    let pooled_from = match opts.question_embedding_source {
        QuestionEmbeddingSource::DualAttention => q_c_last,
        QuestionEmbeddingSource::SelfAttention => q,
    };
    let question_embedding = g.tape.mean_pool_rows(pooled_from)?;
    Ok(ReaderOutput {
        document: d,
        paragraphs,
        question_embedding,
        question: q,
        blocks: traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::NEG_INF;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn opts(top_k: usize) -> ReaderOptions {
        ReaderOptions::from(&ModelConfig {
            top_k,
            ..ModelConfig::default()
        })
    }

    fn setup(hidden: usize, heads: usize, blocks: usize, seed: u64) -> (ParamStore, Vec<DpdaBlockParams>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let blocks = (0..blocks)
            .map(|t| DpdaBlockParams::new(&mut store, &format!("b{t}"), hidden, heads, &mut rng).unwrap())
            .collect();
        (store, blocks)
    }

    #[test]
    fn paragraph_map_validation() {
        assert!(ParagraphMap::new(vec![0, 0, 1, 1, 2]).is_ok());
        assert!(ParagraphMap::new(vec![1, 1]).is_err());
        assert!(ParagraphMap::new(vec![0, 2]).is_err());
        assert!(ParagraphMap::new(vec![0, 1, 0]).is_err());
        assert!(ParagraphMap::new(vec![]).is_err());
        let seg = ParagraphMap::from_lengths(&[2, 3, 1]).unwrap();
        assert_eq!(seg.entries(), &[0, 0, 1, 1, 1, 2]);
        assert_eq!(seg.count(), 3);
        assert_eq!(seg.range(1), 2..5);
        assert_eq!(seg.range(2), 5..6);
    }

    #[test]
    fn paragraph_mask_example() {
        let seg = ParagraphMap::new(vec![0, 0, 1]).unwrap();
        let mask = paragraph_mask(&seg);
        let open = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)];
        for i in 0..3 {
            for j in 0..3 {
                let expected = if open.contains(&(i, j)) { 0.0 } else { NEG_INF };
                assert_eq!(mask.entries().get(i, j), expected);
            }
        }
        assert!(paragraph_mask(&ParagraphMap::new(vec![0; 4]).unwrap()).is_all_open());
    }

    #[test]
    fn dynamic_mask_examples() {
        let phi = Matrix::column_vector(&[0.9, 0.1, 0.5, 0.7]);
        let (mask, sel) = dynamic_mask(&phi, 2);
        assert_eq!(sel, vec![0, 3]);
        assert!(mask.is_open(0, 3) && mask.is_open(3, 0) && !mask.is_open(0, 2) && !mask.is_open(1, 1));

        let (mask, sel) = dynamic_mask(&phi, 10);
        assert_eq!(sel, vec![0, 1, 2, 3]);
        assert!(mask.is_all_open());

        let (_, sel) = dynamic_mask(&Matrix::column_vector(&[0.5, 0.5, 0.2]), 1);
        assert_eq!(sel, vec![0]);
    }

    #[test]
    fn dual_attention_single_token() {
        let (store, blocks) = setup(4, 2, 1, 1);
        let mut g = Graph::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = g.tape.constant(Matrix::randn(1, 4, 1.0, &mut rng));
        let d = g.tape.constant(Matrix::randn(1, 4, 1.0, &mut rng));
        let (_, _, tr) =
            dual_attention(&mut g, q, d, &blocks[0].dual, DualAttentionAxes::PerQuestionOverDocument).unwrap();
        assert_eq!(g.tape.value(tr.question_weights).data(), &[1.0]);
        assert_eq!(g.tape.value(tr.document_weights).data(), &[1.0]);
    }

    #[test]
    fn dual_attention_shapes_and_axes() {
        let (store, blocks) = setup(4, 2, 1, 3);
        let mut g = Graph::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = g.tape.constant(Matrix::randn(3, 4, 1.0, &mut rng));
        let d = g.tape.constant(Matrix::randn(5, 4, 1.0, &mut rng));
        let (q_c, d_c, tr) =
            dual_attention(&mut g, q, d, &blocks[0].dual, DualAttentionAxes::PerQuestionOverDocument).unwrap();
        assert_eq!(g.tape.shape(q_c), (3, 4));
        assert_eq!(g.tape.shape(d_c), (5, 4));
        assert_eq!(g.tape.shape(tr.document_fused), (5, 8));
        assert_eq!(g.tape.shape(tr.question_fused), (3, 8));
        assert_eq!(g.tape.shape(tr.question_context), (3, 4));
        assert_eq!(g.tape.shape(tr.document_context), (5, 4));

        // Question-side weights (m×n): each question token's column is a distribution over documents.
        let aq = g.tape.value(tr.question_weights);
        assert_eq!(aq.shape(), (5, 3));
        for j in 0..3 {
            let s: f64 = (0..5).map(|i| aq.get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // Document-side weights (n×m): each document token's column is a distribution over questions.
        let ad = g.tape.value(tr.document_weights);
        assert_eq!(ad.shape(), (3, 5));
        for j in 0..5 {
            let s: f64 = (0..3).map(|i| ad.get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn score_tokens_range_and_zero_weights() {
        let (mut store, blocks) = setup(4, 2, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Matrix::randn(6, 4, 3.0, &mut rng);
        {
            let mut g = Graph::new(&store);
            let d = g.tape.constant(x.clone());
            let phi = score_tokens(&mut g, d, &blocks[0].scorer).unwrap();
            assert!(g.tape.value(phi).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        *store.get_mut(blocks[0].scorer.w) = Matrix::zeros(4, 1);
        let mut g = Graph::new(&store);
        let d = g.tape.constant(x);
        let phi = score_tokens(&mut g, d, &blocks[0].scorer).unwrap();
        assert!(g.tape.value(phi).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn unmasked_equivalence_when_everything_selected() {
        let (store, blocks) = setup(8, 2, 1, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Matrix::randn(5, 8, 1.0, &mut rng);
        let seg = ParagraphMap::new(vec![0; 5]).unwrap();
        let run = |o: ReaderOptions| {
            let mut g = Graph::new(&store);
            let d = g.tape.constant(x.clone());
            let phi = score_tokens(&mut g, d, &blocks[0].scorer).unwrap();
            let out = paragraph_dynamic_self_attention(&mut g, d, phi, &seg, &blocks[0], &o).unwrap();
            g.tape.value(out.output).clone()
        };
        let masked = run(opts(5));
        let unmasked = run(ReaderOptions {
            paragraph_mask: false,
            dynamic_mask: false,
            ..opts(5)
        });
        assert!(masked.data().iter().zip(unmasked.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn reader_output_shapes() {
        let (store, blocks) = setup(8, 2, 1, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut g = Graph::new(&store);
        let q0 = g.tape.constant(Matrix::randn(2, 8, 1.0, &mut rng));
        let d0 = g.tape.constant(Matrix::randn(6, 8, 1.0, &mut rng));
        let seg = ParagraphMap::new(vec![0, 0, 0, 1, 1, 1]).unwrap();
        let out = run_reader(&mut g, q0, d0, &seg, &blocks, &opts(4)).unwrap();
        assert_eq!(g.tape.shape(out.document), (6, 8));
        assert_eq!(g.tape.shape(out.paragraphs), (2, 8));
        assert_eq!(g.tape.shape(out.question_embedding), (1, 8));
        assert_eq!(out.blocks[0].selected.len(), 4);

        // The question embedding is the exact row mean of the last dual-attention output.
        let qc = g.tape.value(out.blocks[0].question_c.unwrap());
        for j in 0..8 {
            let mean = (qc.get(0, j) + qc.get(1, j)) / 2.0;
            assert_eq!(g.tape.value(out.question_embedding).get(0, j), mean);
        }
    }

    #[test]
    fn zero_blocks_pools_encoder_output() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let q0 = g.tape.constant(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let d0 = g.tape.constant(Matrix::from_rows(&[[1.0, 1.0], [3.0, 3.0], [5.0, 5.0]]));
        let seg = ParagraphMap::new(vec![0, 0, 1]).unwrap();
        let out = run_reader(&mut g, q0, d0, &seg, &[], &opts(4)).unwrap();
        assert_eq!(g.tape.value(out.paragraphs), &Matrix::from_rows(&[[2.0, 2.0], [5.0, 5.0]]));
        assert_eq!(g.tape.value(out.question_embedding).data(), &[2.0, 3.0]);
    }
}
