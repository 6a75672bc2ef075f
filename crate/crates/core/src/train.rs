//! Shuffled mini-batch Adam training with a per-step metrics log.

use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::InstanceTuple;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::{adam_step, scheduled_lr, AdamState};
use crate::params::{Gradients, Graph};
use crate::predictor::LossValues;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub learning_rate: f64,
    #[serde(flatten)]
    pub loss: LossValues,
    /// Milliseconds since training started; not reproducible across runs.
    pub wall_ms: f64,
}

/// Number of optimizer steps for `instances` under the model's config.
pub fn total_steps(model: &Model, instances: usize) -> usize {
    let cfg = &model.config;
    let per_epoch = instances.div_ceil(cfg.batch_size);
    cfg.max_steps.unwrap_or(cfg.epochs * per_epoch)
}

/// Mean loss and gradient over a batch.
pub fn batch_gradients(model: &Model, batch: &[&InstanceTuple]) -> Result<(LossValues, Gradients)> {
    let mut grads = Gradients::zeros_like(&model.store);
    let mut loss = LossValues::default();
    for inst in batch {
        let mut g = Graph::new(&model.store);
        let terms = model.loss(&mut g, inst)?;
        g.tape.backward(terms.total)?;
        grads.add_assign(&g.gradients());
        let v = terms.values(&g);
        loss.total += v.total;
        loss.long += v.long;
        loss.start += v.start;
        loss.end += v.end;
        loss.answer_type += v.answer_type;
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    for v in [&mut loss.total, &mut loss.long, &mut loss.start, &mut loss.end, &mut loss.answer_type] {
        *v *= scale;
    }
    if !loss.total.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    Ok((loss, grads))
}

/// Trains in place. Epochs repeat, each with a fresh shuffle, until the step
/// budget is spent. `on_step` sees every record as it is produced.
pub fn train(
    model: &mut Model,
    instances: &[InstanceTuple],
    mut on_step: impl FnMut(&StepRecord),
) -> Result<(AdamState, Vec<StepRecord>)> {
    model.config.validate()?;
    if instances.is_empty() {
        return Err(Error::Empty("training instances"));
    }
    let total = total_steps(model, instances.len());
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = AdamState::new(&model.store);
    let mut records = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let started = Instant::now();
    let mut step = 0;
    let mut epoch = 0;
    while step < total {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if step == total {
                break;
            }
            let batch: Vec<&InstanceTuple> = chunk.iter().map(|&i| &instances[i]).collect();
            let (loss, grads) = batch_gradients(model, &batch)?;
            let lr = scheduled_lr(cfg.learning_rate, step, total, cfg.warmup_proportion);
            adam_step(&mut model.store, &grads, &mut adam, lr)?;
            let record = StepRecord {
                step,
                epoch,
                learning_rate: lr,
                loss,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            };
            on_step(&record);
            records.push(record);
            step += 1;
        }
        epoch += 1;
    }
    Ok((adam, records))
}

pub fn write_metrics(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
