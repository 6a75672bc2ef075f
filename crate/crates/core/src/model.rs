//! Encoder + reader + predictor, built deterministically from a config.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::InstanceTuple;
use crate::encoder::{pack_sequence, EncoderParams};
use crate::error::{Error, Result};
use crate::inference::HeadOutputs;
use crate::params::{Graph, ParamStore};
use crate::predictor::{predict, total_loss, LossOptions, LossTerms, PredictorOutput, PredictorParams};
use crate::reader::{run_reader, DpdaBlockParams, ParagraphMap, ReaderOptions, ReaderOutput};

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub blocks: Vec<DpdaBlockParams>,
    pub predictor: PredictorParams,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub reader: ReaderOutput,
    pub heads: PredictorOutput,
}

impl Model {
    /// Parameters are drawn from a generator seeded with `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(
            &mut store,
            config.vocab_size,
            config.hidden,
            config.max_sequence_len(),
            config.encoder_layers,
            config.heads,
            config.embedding_std,
            &mut rng,
        )?;
        let blocks = (0..config.blocks)
            .map(|t| DpdaBlockParams::new(&mut store, &format!("reader.block{t}"), config.hidden, config.heads, &mut rng))
            .collect::<Result<_>>()?;
        let predictor = PredictorParams::new(&mut store, &config, &mut rng)?;
        Ok(Self {
            config,
            store,
            encoder,
            blocks,
            predictor,
        })
    }

    pub fn forward(&self, g: &mut Graph, question: &[u32], document: &[u32], seg: &ParagraphMap) -> Result<ModelOutput> {
        if question.len() > self.config.max_question_len || document.len() > self.config.window {
            return Err(Error::Length {
                question: question.len(),
                document: document.len(),
                max_len: self.config.max_sequence_len(),
            });
        }
        if seg.len() != document.len() {
            return Err(Error::Shape {
                op: "paragraph map",
                lhs: (seg.len(), 1),
                rhs: (document.len(), 1),
            });
        }
        let seq = pack_sequence(question, document, self.config.max_sequence_len())?;
        let (q0, d0) = self.encoder.encode(g, &seq)?;
        let reader = run_reader(g, q0, d0, seg, &self.blocks, &ReaderOptions::from(&self.config))?;
        let heads = predict(g, &reader, seg, &self.predictor)?;
        Ok(ModelOutput { reader, heads })
    }

    pub fn loss(&self, g: &mut Graph, inst: &InstanceTuple) -> Result<LossTerms> {
        let out = self.forward(g, &inst.question, &inst.document, &inst.seg)?;
        total_loss(g, &out.heads, &inst.targets, &LossOptions::from(&self.config))
    }

    pub fn head_outputs(&self, inst: &InstanceTuple) -> Result<HeadOutputs> {
        let mut g = Graph::inference(&self.store);
        let out = self.forward(&mut g, &inst.question, &inst.document, &inst.seg)?;
        HeadOutputs::from_graph(&g, &out.heads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::TargetLabels;

    fn instance() -> InstanceTuple {
        InstanceTuple {
            page_id: "p".into(),
            question: vec![3, 4, 9],
            document: (10..22).collect(),
            seg: ParagraphMap::from_lengths(&[5, 7]).unwrap(),
            paragraph_ids: vec![0, 1],
            offset: 0,
            targets: TargetLabels::null(),
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Model::new(ModelConfig::tiny()).unwrap();
        let b = Model::new(ModelConfig::tiny()).unwrap();
        assert_eq!(a.store.values(), b.store.values());
        let c = Model::new(ModelConfig { seed: 1, ..ModelConfig::tiny() }).unwrap();
        assert_ne!(a.store.values(), c.store.values());
    }

    #[test]
    fn head_output_sizes() {
        let model = Model::new(ModelConfig::tiny()).unwrap();
        let out = model.head_outputs(&instance()).unwrap();
        assert_eq!(out.long.len(), 3);
        assert_eq!(out.start.len(), 12);
        assert_eq!(out.end.len(), 12);
        assert!((out.answer_type.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_inputs_are_rejected() {
        let model = Model::new(ModelConfig::tiny()).unwrap();
        let mut inst = instance();
        inst.question = vec![3; 9];
        assert!(matches!(model.head_outputs(&inst), Err(Error::Length { .. })));
        let mut inst = instance();
        inst.seg = ParagraphMap::from_lengths(&[5]).unwrap();
        assert!(model.head_outputs(&inst).is_err());
    }

    #[test]
    fn loss_is_finite_and_positive() {
        let model = Model::new(ModelConfig::tiny()).unwrap();
        let mut g = Graph::new(&model.store);
        let terms = model.loss(&mut g, &instance()).unwrap();
        let v = terms.values(&g);
        assert!(v.total.is_finite() && v.total > 0.0);
    }
}
