//! Trainable stand-in for a pre-trained language model. Packs the question
//! and a document span into `[CLS] q [SEP] d [SEP]` and produces the initial
//! question and document representations.

use std::ops::Range;

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::TransformerBlock;
use crate::params::{Graph, ParamId, ParamStore};
use crate::tensor::Matrix;

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedSequence {
    pub ids: Vec<u32>,
    pub question_range: Range<usize>,
    pub document_range: Range<usize>,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Segment 0 covers `[CLS] q [SEP]`, segment 1 covers `d [SEP]`.
    pub fn segment_ids(&self) -> Vec<usize> {
        (0..self.ids.len())
            .map(|i| usize::from(i >= self.document_range.start))
            .collect()
    }
}

pub fn pack_sequence(question: &[u32], document: &[u32], max_len: usize) -> Result<PackedSequence> {
    if question.is_empty() {
        return Err(Error::Empty("question"));
    }
    if document.is_empty() {
        return Err(Error::Empty("document span"));
    }
    let (n, m) = (question.len(), document.len());
    if n + m + 3 > max_len {
        return Err(Error::Length {
            question: n,
            document: m,
            max_len,
        });
    }
    let mut ids = Vec::with_capacity(n + m + 3);
    ids.push(CLS_ID);
    ids.extend_from_slice(question);
    ids.push(SEP_ID);
    ids.extend_from_slice(document);
    ids.push(SEP_ID);
    Ok(PackedSequence {
        ids,
        question_range: 1..1 + n,
        document_range: n + 2..n + 2 + m,
    })
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub vocab_size: usize,
    pub hidden: usize,
    pub max_len: usize,
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub segment_embedding: ParamId,
    pub blocks: Vec<TransformerBlock>,
}

impl EncoderParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab_size: usize,
        hidden: usize,
        max_len: usize,
        layers: usize,
        heads: usize,
        embedding_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let token_embedding = store.add(
            "encoder.token_embedding",
            Matrix::randn(vocab_size, hidden, embedding_std, rng),
        );
        let position_embedding = store.add(
            "encoder.position_embedding",
            Matrix::randn(max_len, hidden, 0.1 * embedding_std, rng),
        );
        let segment_embedding = store.add(
            "encoder.segment_embedding",
            Matrix::randn(2, hidden, 0.1 * embedding_std, rng),
        );
        let blocks = (0..layers)
            .map(|i| TransformerBlock::new(store, &format!("encoder.block{i}"), hidden, heads, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            vocab_size,
            hidden,
            max_len,
            token_embedding,
            position_embedding,
            segment_embedding,
            blocks,
        })
    }

    /// Returns `(Q0, D0)`: the rows at the question and document positions.
    pub fn encode(&self, g: &mut Graph, seq: &PackedSequence) -> Result<(Var, Var)> {
        if seq.len() > self.max_len {
            return Err(Error::Length {
                question: seq.question_range.len(),
                document: seq.document_range.len(),
                max_len: self.max_len,
            });
        }
        let mut token_rows = Vec::with_capacity(seq.len());
        for &id in &seq.ids {
            if id as usize >= self.vocab_size {
                return Err(Error::Vocab {
                    id,
                    vocab: self.vocab_size,
                });
            }
            token_rows.push(id as usize);
        }
        let positions: Vec<usize> = (0..seq.len()).collect();

        let table = g.param(self.token_embedding);
        let tokens = g.tape.gather_rows(table, &token_rows)?;
        let table = g.param(self.position_embedding);
        let pos = g.tape.gather_rows(table, &positions)?;
        let table = g.param(self.segment_embedding);
        let segs = g.tape.gather_rows(table, &seq.segment_ids())?;
        let sum = g.tape.add(tokens, pos)?;
        let mut hidden = g.tape.add(sum, segs)?;
        for block in &self.blocks {
            hidden = block.forward(g, hidden, &[], None)?.0;
        }
        let q_rows: Vec<usize> = seq.question_range.clone().collect();
        let d_rows: Vec<usize> = seq.document_range.clone().collect();
        let q0 = g.tape.gather_rows(hidden, &q_rows)?;
        let d0 = g.tape.gather_rows(hidden, &d_rows)?;
        Ok((q0, d0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(layers: usize, seed: u64) -> (ParamStore, EncoderParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = EncoderParams::new(&mut store, 20, 8, 16, layers, 2, 1.0, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn pack_layout() {
        let seq = pack_sequence(&[7], &[9], 5).unwrap();
        assert_eq!(seq.ids, vec![CLS_ID, 7, SEP_ID, 9, SEP_ID]);
        assert_eq!(seq.question_range, 1..2);
        assert_eq!(seq.document_range, 3..4);
        assert_eq!(seq.segment_ids(), vec![0, 0, 0, 1, 1]);

        let seq = pack_sequence(&[3; 4], &[4; 10], 17).unwrap();
        assert_eq!(seq.len(), 17);
    }

    #[test]
    fn pack_overflow_reports_lengths() {
        let err = pack_sequence(&[3; 4], &[4; 10], 16).unwrap_err();
        match err {
            Error::Length {
                question,
                document,
                max_len,
            } => assert_eq!((question, document, max_len), (4, 10, 16)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_tables_give_zero_outputs() {
        let (mut store, enc) = encoder(0, 1);
        for v in store.values_mut() {
            *v = Matrix::zeros(v.rows(), v.cols());
        }
        let seq = pack_sequence(&[5, 6], &[7, 8, 9], 16).unwrap();
        let mut g = Graph::new(&store);
        let (q0, d0) = enc.encode(&mut g, &seq).unwrap();
        assert_eq!(g.tape.shape(q0), (2, 8));
        assert_eq!(g.tape.shape(d0), (3, 8));
        assert!(g.tape.value(q0).data().iter().all(|&v| v == 0.0));
        assert!(g.tape.value(d0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positions_distinguish_identical_tokens() {
        let (store, enc) = encoder(1, 2);
        let seq = pack_sequence(&[5], &[7, 7], 16).unwrap();
        let mut g = Graph::new(&store);
        let (_, d0) = enc.encode(&mut g, &seq).unwrap();
        let d = g.tape.value(d0);
        assert_ne!(d.row(0), d.row(1));
    }

    #[test]
    fn encode_is_deterministic() {
        let seq = pack_sequence(&[5, 11], &[7, 3, 19], 16).unwrap();
        let run = || {
            let (store, enc) = encoder(1, 9);
            let mut g = Graph::new(&store);
            let (q0, _) = enc.encode(&mut g, &seq).unwrap();
            g.tape.value(q0).clone()
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn out_of_vocabulary_id() {
        let (store, enc) = encoder(0, 1);
        let seq = pack_sequence(&[25], &[7], 16).unwrap();
        let mut g = Graph::new(&store);
        assert!(matches!(enc.encode(&mut g, &seq), Err(Error::Vocab { id: 25, vocab: 20 })));
    }
}
