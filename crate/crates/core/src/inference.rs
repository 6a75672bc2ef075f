//! Page-level answer selection, threshold calibration and a simplified
//! exact-match evaluator.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{build_instances, Gold, Page, PipelineConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::Graph;
use crate::predictor::{AnswerType, PredictorOutput, NUM_ANSWER_TYPES};
use crate::reader::ParagraphMap;

/// Head values of one document span, detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    /// Paragraph logits followed by the null slot.
    pub long: Vec<f64>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub answer_type: [f64; NUM_ANSWER_TYPES],
}

impl HeadOutputs {
    pub fn from_graph(g: &Graph, out: &PredictorOutput) -> Result<Self> {
        let row = |v| g.tape.value(v).data().to_vec();
        let t = row(out.answer_type);
        let answer_type = t.as_slice().try_into().map_err(|_| Error::Shape {
            op: "answer type head",
            lhs: (1, t.len()),
            rhs: (1, NUM_ANSWER_TYPES),
        })?;
        Ok(Self {
            long: row(out.long_logits),
            start: row(out.start_logits),
            end: row(out.end_logits),
            answer_type,
        })
    }

    /// Paragraph logits without the null slot.
    pub fn paragraph_logits(&self) -> &[f64] {
        &self.long[..self.long.len().saturating_sub(1)]
    }
}

/// `Σ_{t≥1} o_T[t] − o_T[0]`.
pub fn type_score(o_t: &[f64; NUM_ANSWER_TYPES]) -> f64 {
    o_t[1] + o_t[2] + o_t[3] + o_t[4] - o_t[0]
}

/// `o_L[c] + Σ_{t≥1} o_T[t] − o_T[0]` over paragraph logits (no null slot).
pub fn long_answer_score(o_l: &[f64], o_t: &[f64; NUM_ANSWER_TYPES], c: usize) -> Result<f64> {
    let logit = o_l.get(c).ok_or(Error::Index {
        what: "paragraph",
        index: c,
        len: o_l.len(),
    })?;
    Ok(logit + type_score(o_t))
}

/// `o_S[s] + o_E[e] + o_T[1] − o_T[0]`.
pub fn short_answer_score(o_s: &[f64], o_e: &[f64], o_t: &[f64; NUM_ANSWER_TYPES], s: usize, e: usize) -> Result<f64> {
    if s > e || e >= o_s.len() || e >= o_e.len() {
        return Err(Error::Labels(format!(
            "invalid span ({s}, {e}) over {} tokens",
            o_s.len().min(o_e.len())
        )));
    }
    Ok(o_s[s] + o_e[e] + (o_t[1] - o_t[0]))
}

/// Predictions of one window of a page.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanPrediction {
    pub span_id: usize,
    /// Local paragraph index → page paragraph id.
    pub paragraph_ids: Vec<usize>,
    pub seg: ParagraphMap,
    pub offset: usize,
    pub outputs: HeadOutputs,
}

impl SpanPrediction {
    fn validate(&self) -> Result<()> {
        let l = self.paragraph_ids.len();
        let m = self.seg.len();
        if self.outputs.long.len() != l + 1 || self.seg.count() != l {
            return Err(Error::Shape {
                op: "span prediction paragraphs",
                lhs: (self.outputs.long.len(), self.seg.count()),
                rhs: (l + 1, l),
            });
        }
        if self.outputs.start.len() != m || self.outputs.end.len() != m {
            return Err(Error::Shape {
                op: "span prediction tokens",
                lhs: (self.outputs.start.len(), self.outputs.end.len()),
                rhs: (m, m),
            });
        }
        let all = self.outputs.long.iter().chain(&self.outputs.start).chain(&self.outputs.end);
        if !all.chain(&self.outputs.answer_type).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("span prediction"));
        }
        Ok(())
    }

    fn answer_type(&self) -> AnswerType {
        let t = &self.outputs.answer_type;
        let best = (1..NUM_ANSWER_TYPES).fold(0, |b, i| if t[i] > t[b] { i } else { b });
        AnswerType::ALL[best]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub long: f64,
    pub short: f64,
}

impl Thresholds {
    pub const OPEN: Thresholds = Thresholds {
        long: f64::NEG_INFINITY,
        short: f64::NEG_INFINITY,
    };
}

/// `+∞` is written as `null`; `−∞` is clamped to the most negative finite value.
#[derive(Serialize, Deserialize)]
struct ThresholdsWire {
    long: Option<f64>,
    short: Option<f64>,
}

impl Serialize for Thresholds {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let wire = |v: f64| if v == f64::INFINITY { None } else { Some(v.max(f64::MIN)) };
        ThresholdsWire {
            long: wire(self.long),
            short: wire(self.short),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Thresholds {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = ThresholdsWire::deserialize(d)?;
        Ok(Self {
            long: w.long.unwrap_or(f64::INFINITY),
            short: w.short.unwrap_or(f64::INFINITY),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectOptions {
    pub max_span_len: usize,
    /// Search short spans in every window that contains the chosen paragraph.
    pub cross_span: bool,
    /// When false the long answer is the paragraph of the best short span.
    pub multilevel: bool,
}

impl SelectOptions {
    pub fn new(max_span_len: usize) -> Self {
        Self {
            max_span_len,
            cross_span: false,
            multilevel: true,
        }
    }
}

/// The best long and short answers before thresholds are applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PageCandidate {
    pub long_pid: usize,
    pub long_score: f64,
    /// Page-global inclusive `[s, e]`.
    pub short: [usize; 2],
    pub short_score: f64,
    pub answer_type: AnswerType,
}

/// Page answer after thresholds, with the ungated candidates kept for calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PagePrediction {
    pub long: Option<usize>,
    pub long_score: f64,
    pub short: Option<[usize; 2]>,
    pub short_score: f64,
    pub answer_type: AnswerType,
    pub candidate_long: usize,
    pub candidate_short: [usize; 2],
}

impl PagePrediction {
    pub fn gate(c: &PageCandidate, th: &Thresholds) -> Self {
        let long = (c.long_score >= th.long).then_some(c.long_pid);
        let short = (long.is_some() && c.short_score >= th.short).then_some(c.short);
        Self {
            long,
            long_score: c.long_score,
            short,
            short_score: c.short_score,
            answer_type: c.answer_type,
            candidate_long: c.long_pid,
            candidate_short: c.short,
        }
    }
}

struct Best<T> {
    score: f64,
    item: Option<T>,
}

impl<T> Best<T> {
    fn new() -> Self {
        Self {
            score: f64::NEG_INFINITY,
            item: None,
        }
    }

    /// Keeps the first maximum in visiting order.
    fn offer(&mut self, score: f64, item: T) {
        if self.item.is_none() || score > self.score {
            self.score = score;
            self.item = Some(item);
        }
    }
}

/// Best `(s, e)` with `e − s + 1 ≤ max_len` and both ends in `range`.
fn best_short_in(
    span: &SpanPrediction,
    range: std::ops::Range<usize>,
    max_len: usize,
    best: &mut Best<(usize, [usize; 2])>,
    span_index: usize,
) -> Result<()> {
    let o = &span.outputs;
    for s in range.clone() {
        for e in s..range.end.min(s + max_len) {
            let score = short_answer_score(&o.start, &o.end, &o.answer_type, s, e)?;
            best.offer(score, (span_index, [span.offset + s, span.offset + e]));
        }
    }
    Ok(())
}

pub fn best_candidate(spans: &[SpanPrediction], opts: &SelectOptions) -> Result<PageCandidate> {
    if spans.is_empty() {
        return Err(Error::Empty("span predictions"));
    }
    if opts.max_span_len == 0 {
        return Err(Error::Config("max_span_len must be >= 1".into()));
    }
    for span in spans {
        span.validate()?;
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| spans[i].span_id);

    if !opts.multilevel {
        let mut best = Best::new();
        for &i in &order {
            for p in 0..spans[i].seg.count() {
                best_short_in(&spans[i], spans[i].seg.range(p), opts.max_span_len, &mut best, i)?;
            }
        }
        let (i, short) = best.item.expect("non-empty spans");
        let span = &spans[i];
        let local = span.seg.paragraph_of(short[0] - span.offset);
        return Ok(PageCandidate {
            long_pid: span.paragraph_ids[local],
            long_score: best.score,
            short,
            short_score: best.score,
            answer_type: span.answer_type(),
        });
    }

    let mut long = Best::new();
    for &i in &order {
        let o = &spans[i].outputs;
        for c in 0..spans[i].paragraph_ids.len() {
            long.offer(long_answer_score(o.paragraph_logits(), &o.answer_type, c)?, (i, c));
        }
    }
    let (win, c) = long.item.expect("non-empty spans");
    let pid = spans[win].paragraph_ids[c];

    let mut short = Best::new();
    if opts.cross_span {
        for &i in &order {
            if let Some(local) = spans[i].paragraph_ids.iter().position(|&p| p == pid) {
                best_short_in(&spans[i], spans[i].seg.range(local), opts.max_span_len, &mut short, i)?;
            }
        }
    } else {
        best_short_in(&spans[win], spans[win].seg.range(c), opts.max_span_len, &mut short, win)?;
    }
    let (_, span) = short.item.expect("paragraphs are non-empty");
    Ok(PageCandidate {
        long_pid: pid,
        long_score: long.score,
        short: span,
        short_score: short.score,
        answer_type: spans[win].answer_type(),
    })
}

pub fn select_answers(spans: &[SpanPrediction], max_span_len: usize, thresholds: &Thresholds) -> Result<PagePrediction> {
    select_answers_with(spans, &SelectOptions::new(max_span_len), thresholds)
}

pub fn select_answers_with(
    spans: &[SpanPrediction],
    opts: &SelectOptions,
    thresholds: &Thresholds,
) -> Result<PagePrediction> {
    Ok(PagePrediction::gate(&best_candidate(spans, opts)?, thresholds))
}

/// Runs every window of `page` through the model and merges the results.
pub fn predict_page(model: &Model, page: &Page, thresholds: &Thresholds) -> Result<PagePrediction> {
    let cfg = &model.config;
    let instances = build_instances(page, &PipelineConfig::from(cfg))?;
    let spans = instances
        .into_iter()
        .enumerate()
        .map(|(span_id, inst)| {
            Ok(SpanPrediction {
                span_id,
                outputs: model.head_outputs(&inst)?,
                paragraph_ids: inst.paragraph_ids,
                seg: inst.seg,
                offset: inst.offset,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = SelectOptions {
        max_span_len: cfg.max_span_len,
        cross_span: cfg.cross_span_short,
        multilevel: !cfg.no_multilevel,
    };
    select_answers_with(&spans, &opts, thresholds)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        // harmonic mean of P and R, written so equal counts give equal values
        let f1 = if correct == 0 {
            0.0
        } else {
            2.0 * correct as f64 / (predicted + gold) as f64
        };
        Self { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NqMetrics {
    pub long: Prf,
    pub short: Prf,
}

/// Page prediction tagged with its page id; one JSON object per line on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub page_id: String,
    #[serde(flatten)]
    pub prediction: PagePrediction,
}

fn check_aligned(records: &[PredictionRecord], gold: &[Page]) -> Result<()> {
    if records.len() != gold.len() {
        return Err(Error::IdMismatch(format!(
            "{} predictions for {} gold pages",
            records.len(),
            gold.len()
        )));
    }
    for (i, (r, g)) in records.iter().zip(gold).enumerate() {
        if r.page_id != g.page_id {
            return Err(Error::IdMismatch(format!(
                "record {i}: prediction for {} but gold page {}",
                r.page_id, g.page_id
            )));
        }
    }
    Ok(())
}

/// Exact-match precision, recall and F1 for emitted long and short answers.
pub fn nq_f1(records: &[PredictionRecord], gold: &[Page]) -> Result<NqMetrics> {
    check_aligned(records, gold)?;
    let (mut lc, mut lp, mut lg, mut sc, mut sp, mut sg) = (0, 0, 0, 0, 0, 0);
    for (r, page) in records.iter().zip(gold) {
        let g = page.gold;
        let gold_short = g.and_then(|g| g.short_inclusive());
        lg += usize::from(g.is_some());
        sg += usize::from(gold_short.is_some());
        if let Some(pid) = r.prediction.long {
            lp += 1;
            lc += usize::from(g.map(|g| g.long_pid) == Some(pid));
        }
        if let Some(span) = r.prediction.short {
            sp += 1;
            sc += usize::from(gold_short == Some(span));
        }
    }
    Ok(NqMetrics {
        long: Prf::from_counts(lc, lp, lg),
        short: Prf::from_counts(sc, sp, sg),
    })
}

/// Accuracy of the ungated candidates over pages that have the matching gold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateAccuracy {
    pub long: f64,
    pub long_pages: usize,
    pub short: f64,
    pub short_pages: usize,
}

pub fn candidate_accuracy(records: &[PredictionRecord], gold: &[Page]) -> Result<CandidateAccuracy> {
    check_aligned(records, gold)?;
    let (mut lc, mut ln, mut sc, mut sn) = (0, 0, 0, 0);
    for (r, page) in records.iter().zip(gold) {
        if let Some(g) = page.gold {
            ln += 1;
            lc += usize::from(r.prediction.candidate_long == g.long_pid);
            if let Some(span) = g.short_inclusive() {
                sn += 1;
                sc += usize::from(r.prediction.candidate_short == span);
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(CandidateAccuracy {
        long: ratio(lc, ln),
        long_pages: ln,
        short: ratio(sc, sn),
        short_pages: sn,
    })
}

/// Picks the threshold maximising F1 over candidate scores, preferring the
/// lowest threshold on ties; `+∞` when no threshold yields a positive F1.
/// Returns `(threshold, f1)`.
pub fn sweep_threshold(scored: &[(f64, bool)], gold_count: usize) -> (f64, f64) {
    let mut thresholds: Vec<f64> = scored.iter().map(|&(s, _)| s).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let mut best = (f64::INFINITY, 0.0);
    for &th in &thresholds {
        let predicted = scored.iter().filter(|&&(s, _)| s >= th).count();
        let correct = scored.iter().filter(|&&(s, ok)| ok && s >= th).count();
        let f1 = Prf::from_counts(correct, predicted, gold_count).f1;
        if f1 > best.1 {
            best = (th, f1);
        }
    }
    best
}

/// Long and short thresholds calibrated independently on a dev set.
pub fn calibrate_thresholds(dev: &[(PagePrediction, Option<Gold>)]) -> Result<Thresholds> {
    if dev.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    let long: Vec<(f64, bool)> = dev
        .iter()
        .map(|(p, g)| (p.long_score, g.map(|g| g.long_pid) == Some(p.candidate_long)))
        .collect();
    let short: Vec<(f64, bool)> = dev
        .iter()
        .map(|(p, g)| (p.short_score, g.and_then(|g| g.short_inclusive()) == Some(p.candidate_short)))
        .collect();
    let long_gold = dev.iter().filter(|(_, g)| g.is_some()).count();
    let short_gold = dev.iter().filter(|(_, g)| g.is_some_and(|g| g.short.is_some())).count();
    Ok(Thresholds {
        long: sweep_threshold(&long, long_gold).0,
        short: sweep_threshold(&short, short_gold).0,
    })
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outputs(long: &[f64], start: &[f64], end: &[f64], t: [f64; 5]) -> HeadOutputs {
        let mut long = long.to_vec();
        long.push(0.0);
        HeadOutputs {
            long,
            start: start.to_vec(),
            end: end.to_vec(),
            answer_type: t,
        }
    }

    #[test]
    fn score_examples() {
        let t = [0.1, 0.4, 0.2, 0.2, 0.1];
        assert!((long_answer_score(&[1.0, 2.0], &t, 1).unwrap() - 2.8).abs() < 1e-12);
        assert!(long_answer_score(&[1.0, 2.0], &t, 2).is_err());
        assert_eq!(type_score(&[0.5, 0.125, 0.125, 0.125, 0.125]), 0.0);

        let o_s = [0.0, 0.0, 1.5, 0.0, 0.0];
        let o_e = [0.0, 0.0, 0.0, 0.0, 0.5];
        let got = short_answer_score(&o_s, &o_e, &[0.1, 0.4, 0.2, 0.2, 0.1], 2, 4).unwrap();
        assert!((got - 2.3).abs() < 1e-12);
        let even = short_answer_score(&o_s, &o_e, &[0.3, 0.3, 0.2, 0.1, 0.1], 2, 4).unwrap();
        assert_eq!(even, 2.0);
        assert!(short_answer_score(&o_s, &o_e, &t, 3, 2).is_err());
        assert!(short_answer_score(&o_s, &o_e, &t, 3, 5).is_err());
    }

    #[test]
    fn single_paragraph_selection_and_threshold_dominance() {
        let span = SpanPrediction {
            span_id: 0,
            paragraph_ids: vec![7],
            seg: ParagraphMap::new(vec![0; 4]).unwrap(),
            offset: 10,
            outputs: outputs(&[3.0], &[0.0, 2.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], [0.1, 0.6, 0.1, 0.1, 0.1]),
        };
        let p = select_answers(std::slice::from_ref(&span), 30, &Thresholds::OPEN).unwrap();
        assert_eq!(p.long, Some(7));
        assert_eq!(p.short, Some([11, 12]));
        assert_eq!(p.answer_type, AnswerType::Short);

        let closed = Thresholds {
            long: f64::INFINITY,
            short: f64::NEG_INFINITY,
        };
        let p = select_answers(&[span], 30, &closed).unwrap();
        assert_eq!((p.long, p.short), (None, None));
        assert_eq!(p.candidate_long, 7);
        assert!(select_answers(&[], 30, &Thresholds::OPEN).is_err());
    }

    #[test]
    fn short_search_stays_in_winning_paragraph() {
        // best start/end logits sit in paragraph 0, but paragraph 1 wins the long answer
        let span = SpanPrediction {
            span_id: 0,
            paragraph_ids: vec![0, 1],
            seg: ParagraphMap::from_lengths(&[2, 3]).unwrap(),
            offset: 0,
            outputs: outputs(&[0.0, 1.0], &[9.0, 0.0, 0.0, 1.0, 0.0], &[0.0, 9.0, 0.0, 0.0, 1.0], [0.2; 5]),
        };
        let p = select_answers(&[span.clone()], 30, &Thresholds::OPEN).unwrap();
        assert_eq!(p.long, Some(1));
        assert_eq!(p.short, Some([3, 4]));
        let p = select_answers(&[span.clone()], 1, &Thresholds::OPEN).unwrap();
        assert_eq!(p.short.map(|[s, e]| e - s), Some(0));

        let flat = SelectOptions {
            multilevel: false,
            ..SelectOptions::new(30)
        };
        let p = select_answers_with(&[span], &flat, &Thresholds::OPEN).unwrap();
        assert_eq!((p.long, p.short), (Some(0), Some([0, 1])));
    }

    #[test]
    fn ties_prefer_lower_span_id_regardless_of_order() {
        let make = |span_id, pid| SpanPrediction {
            span_id,
            paragraph_ids: vec![pid],
            seg: ParagraphMap::new(vec![0; 2]).unwrap(),
            offset: span_id * 2,
            outputs: outputs(&[1.0], &[0.0, 0.0], &[0.0, 0.0], [0.2; 5]),
        };
        let spans = vec![make(3, 30), make(1, 10), make(2, 20)];
        let p = select_answers(&spans, 4, &Thresholds::OPEN).unwrap();
        assert_eq!(p.long, Some(10));
        assert_eq!(p.short, Some([2, 2]));
    }

    #[test]
    fn cross_span_short_search() {
        let a = SpanPrediction {
            span_id: 0,
            paragraph_ids: vec![0, 1],
            seg: ParagraphMap::from_lengths(&[2, 2]).unwrap(),
            offset: 0,
            outputs: outputs(&[0.0, 5.0], &[0.0; 4], &[0.0; 4], [0.2; 5]),
        };
        let b = SpanPrediction {
            span_id: 1,
            paragraph_ids: vec![1, 2],
            seg: ParagraphMap::from_lengths(&[2, 2]).unwrap(),
            offset: 2,
            outputs: outputs(&[0.0, 0.0], &[0.0, 4.0, 0.0, 0.0], &[0.0, 4.0, 0.0, 0.0], [0.2; 5]),
        };
        let spans = [a, b];
        let p = select_answers(&spans, 5, &Thresholds::OPEN).unwrap();
        assert_eq!((p.long, p.short), (Some(1), Some([2, 2])));
        let cross = SelectOptions {
            cross_span: true,
            ..SelectOptions::new(5)
        };
        let p = select_answers_with(&spans, &cross, &Thresholds::OPEN).unwrap();
        assert_eq!((p.long, p.short), (Some(1), Some([3, 3])));
    }

    #[test]
    fn mismatched_span_shapes_are_rejected() {
        let span = SpanPrediction {
            span_id: 0,
            paragraph_ids: vec![0, 1],
            seg: ParagraphMap::new(vec![0; 3]).unwrap(),
            offset: 0,
            outputs: outputs(&[0.0, 1.0], &[0.0; 3], &[0.0; 3], [0.2; 5]),
        };
        assert!(select_answers(&[span], 3, &Thresholds::OPEN).is_err());
    }

    #[test]
    fn metric_examples() {
        let perfect = Prf::from_counts(3, 3, 3);
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        assert_eq!(Prf::from_counts(0, 0, 4), Prf::default());
        let p = Prf::from_counts(1, 2, 4);
        assert!((p.f1 - 2.0 * 0.5 * 0.25 / 0.75).abs() < 1e-15);
    }

    #[test]
    fn sweep_examples() {
        // separable: correct candidates outscore wrong ones
        let scored = [(0.9, true), (0.8, true), (0.3, false), (0.1, false)];
        assert_eq!(sweep_threshold(&scored, 2), (0.8, 1.0));
        // nothing answerable
        assert_eq!(sweep_threshold(&[(0.5, false), (0.2, false)], 0), (f64::INFINITY, 0.0));
        // F1 = 0.5 at both 0.9 and 0.2; the lower threshold wins
        let tied = [(0.9, true), (0.5, false), (0.4, false), (0.3, false), (0.2, true)];
        assert_eq!(sweep_threshold(&tied, 3), (0.2, 0.5));
    }

    #[test]
    fn thresholds_wire_format() {
        let th = Thresholds {
            long: f64::INFINITY,
            short: 0.25,
        };
        let text = serde_json::to_string(&th).unwrap();
        assert_eq!(text, r#"{"long":null,"short":0.25}"#);
        assert_eq!(serde_json::from_str::<Thresholds>(&text).unwrap(), th);
    }
}
