//! Finite-difference verification of the full training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::BackwardFault;
use crate::config::ModelConfig;
use crate::data::InstanceTuple;
use crate::error::Result;
use crate::model::Model;
use crate::params::Graph;
use crate::predictor::{AnswerType, TargetLabels};
use crate::reader::ParagraphMap;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that gradients at roundoff
/// level are compared absolutely.
pub const DEFAULT_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    pub floor: f64,
    pub fault: Option<BackwardFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            tolerance: DEFAULT_TOLERANCE,
            floor: DEFAULT_FLOOR,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub scalars: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Random SHORT-labelled instance with a `question_len`-token question and
/// a document made of paragraphs of the given lengths.
pub fn random_instance(cfg: &ModelConfig, question_len: usize, paragraphs: &[usize], seed: u64) -> Result<InstanceTuple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = cfg.vocab_size as u32;
    let seg = ParagraphMap::from_lengths(paragraphs)?;
    let token = |rng: &mut ChaCha8Rng| rng.random_range(3..vocab);
    let question = (0..question_len).map(|_| token(&mut rng)).collect();
    let document = (0..seg.len()).map(|_| token(&mut rng)).collect();
    let c = rng.random_range(0..seg.count());
    let range = seg.range(c);
    let s = rng.random_range(range.clone());
    let e = rng.random_range(s..range.end);
    Ok(InstanceTuple {
        page_id: format!("random-{seed}"),
        question,
        document,
        paragraph_ids: (0..seg.count()).collect(),
        seg,
        offset: 0,
        targets: TargetLabels {
            long: Some(c),
            start: Some(s),
            end: Some(e),
            answer_type: AnswerType::Short,
        },
    })
}

fn loss_value(model: &Model, inst: &InstanceTuple) -> Result<f64> {
    let mut g = Graph::inference(&model.store);
    let terms = model.loss(&mut g, inst)?;
    Ok(g.tape.value(terms.total).get(0, 0))
}

/// Compares analytic gradients with central differences for every scalar parameter.
pub fn grad_check(model: &Model, inst: &InstanceTuple, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut g = Graph::new(&model.store);
    if let Some(fault) = opts.fault {
        g.tape.inject_fault(fault);
    }
    let terms = model.loss(&mut g, inst)?;
    g.tape.backward(terms.total)?;
    let analytic = g.gradients();
    drop(g);

    let mut probe = model.clone();
    let mut groups = Vec::with_capacity(model.store.len());
    for id in model.store.ids() {
        let mut report = GroupReport {
            name: model.store.name(id).to_string(),
            scalars: model.store.get(id).len(),
            max_abs_error: 0.0,
            max_rel_error: 0.0,
        };
        for k in 0..report.scalars {
            let original = model.store.get(id).data()[k];
            probe.store.get_mut(id).data_mut()[k] = original + opts.epsilon;
            let plus = loss_value(&probe, inst)?;
            probe.store.get_mut(id).data_mut()[k] = original - opts.epsilon;
            let minus = loss_value(&probe, inst)?;
            probe.store.get_mut(id).data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let a = analytic.get(id).data()[k];
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric, opts.floor));
        }
        groups.push(report);
    }
    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        groups,
        max_rel_error,
        tolerance: opts.tolerance,
        passed: max_rel_error < opts.tolerance,
    })
}
