//! Pages, sliding-window instance construction, negative sub-sampling and
//! line-delimited JSON dataset I/O.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::predictor::{AnswerType, TargetLabels};
use crate::reader::ParagraphMap;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paragraph {
    pub pid: usize,
    pub tokens: Vec<u32>,
}

/// Gold annotation. `short` is a page-global half-open token range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gold {
    pub long_pid: usize,
    pub short: Option<[usize; 2]>,
    #[serde(rename = "type")]
    pub answer_type: AnswerType,
}

impl Gold {
    /// Inclusive `[s, e]` form of the short span.
    pub fn short_inclusive(&self) -> Option<[usize; 2]> {
        self.short.map(|[s, e]| [s, e - 1])
    }
}

/// One page; `gold = None` means unanswerable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Page {
    pub page_id: String,
    pub question: Vec<u32>,
    pub paragraphs: Vec<Paragraph>,
    pub gold: Option<Gold>,
}

impl Page {
    pub fn num_tokens(&self) -> usize {
        self.paragraphs.iter().map(|p| p.tokens.len()).sum()
    }

    pub fn tokens(&self) -> Vec<u32> {
        self.paragraphs.iter().flat_map(|p| p.tokens.iter().copied()).collect()
    }

    /// Page-global token range of each paragraph, in order.
    pub fn paragraph_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.paragraphs
            .iter()
            .map(|p| {
                let r = start..start + p.tokens.len();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn paragraph_index(&self, pid: usize) -> Option<usize> {
        self.paragraphs.iter().position(|p| p.pid == pid)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Labels(format!("page {}: {msg}", self.page_id)));
        if self.question.is_empty() {
            return bad("empty question".into());
        }
        if self.paragraphs.is_empty() {
            return bad("no paragraphs".into());
        }
        for (i, p) in self.paragraphs.iter().enumerate() {
            if p.tokens.is_empty() {
                return bad(format!("paragraph {} is empty", p.pid));
            }
            if self.paragraphs[..i].iter().any(|q| q.pid == p.pid) {
                return bad(format!("duplicate paragraph id {}", p.pid));
            }
        }
        let Some(gold) = self.gold else {
            return Ok(());
        };
        let Some(idx) = self.paragraph_index(gold.long_pid) else {
            return bad(format!("gold paragraph {} not on page", gold.long_pid));
        };
        let range = &self.paragraph_ranges()[idx];
        match (gold.answer_type, gold.short) {
            (AnswerType::Null, _) => bad("gold of type NULL must be null".into()),
            (AnswerType::Short, Some([s, e])) => {
                if s < e && range.start <= s && e <= range.end {
                    Ok(())
                } else {
                    bad(format!("short span [{s}, {e}) not inside paragraph {range:?}"))
                }
            }
            (AnswerType::Short, None) => bad("SHORT gold without a span".into()),
            (_, Some(_)) => bad("only SHORT gold may carry a span".into()),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTuple {
    pub page_id: String,
    pub question: Vec<u32>,
    pub document: Vec<u32>,
    pub seg: ParagraphMap,
    /// Local paragraph index → page paragraph id.
    pub paragraph_ids: Vec<usize>,
    /// Page-global position of the first document token.
    pub offset: usize,
    pub targets: TargetLabels,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub window: usize,
    pub stride: usize,
    pub negative_keep_prob: f64,
    pub seed: u64,
}

impl From<&ModelConfig> for PipelineConfig {
    fn from(cfg: &ModelConfig) -> Self {
        Self {
            window: cfg.window,
            stride: cfg.stride,
            negative_keep_prob: cfg.negative_keep_prob,
            seed: cfg.seed,
        }
    }
}

/// Window offsets `[start, end)` at `0, stride, 2·stride, …`, stopping at the
/// first window that reaches the end of the page.
pub fn split_document(n: usize, window: usize, stride: usize) -> Result<Vec<Range<usize>>> {
    if n == 0 {
        return Err(Error::Empty("page"));
    }
    if window == 0 || stride == 0 || stride > window {
        return Err(Error::Config(format!(
            "window {window} / stride {stride} must satisfy 1 <= stride <= window"
        )));
    }
    let mut spans = Vec::new();
    let mut start = 0;
    loop {
        spans.push(start..(start + window).min(n));
        if start + window >= n {
            return Ok(spans);
        }
        start += stride;
    }
}

fn window_labels(page: &Page, window: &Range<usize>, local_of: impl Fn(usize) -> Option<usize>) -> Result<TargetLabels> {
    let Some(gold) = page.gold else {
        return Ok(TargetLabels::null());
    };
    let idx = page
        .paragraph_index(gold.long_pid)
        .ok_or_else(|| Error::Labels(format!("page {}: unknown gold paragraph", page.page_id)))?;
    let para = page.paragraph_ranges()[idx].clone();
    let local_long = local_of(gold.long_pid);
    if let (AnswerType::Short, Some([s, e])) = (gold.answer_type, gold.short) {
        if window.start <= s && e <= window.end {
            return Ok(TargetLabels {
                long: local_long,
                start: Some(s - window.start),
                end: Some(e - 1 - window.start),
                answer_type: AnswerType::Short,
            });
        }
    }
    if window.contains(&para.start) {
        let answer_type = match gold.answer_type {
            AnswerType::Short | AnswerType::Null => AnswerType::Long,
            other => other,
        };
        return Ok(TargetLabels {
            long: local_long,
            start: None,
            end: None,
            answer_type,
        });
    }
    Ok(TargetLabels::null())
}

/// One instance per sliding window, labelled in local coordinates.
pub fn build_instances(page: &Page, cfg: &PipelineConfig) -> Result<Vec<InstanceTuple>> {
    page.validate()?;
    let tokens = page.tokens();
    let ranges = page.paragraph_ranges();
    let windows = split_document(tokens.len(), cfg.window, cfg.stride)?;
    let mut out = Vec::with_capacity(windows.len());
    for window in windows {
        let mut entries = Vec::with_capacity(window.len());
        let mut paragraph_ids = Vec::new();
        for (para, range) in page.paragraphs.iter().zip(&ranges) {
            let lo = range.start.max(window.start);
            let hi = range.end.min(window.end);
            if lo < hi {
                entries.extend(std::iter::repeat_n(paragraph_ids.len(), hi - lo));
                paragraph_ids.push(para.pid);
            }
        }
        let seg = ParagraphMap::new(entries)?;
        let targets = window_labels(page, &window, |pid| paragraph_ids.iter().position(|&p| p == pid))?;
        targets.validate(seg.count(), seg.len())?;
        out.push(InstanceTuple {
            page_id: page.page_id.clone(),
            question: page.question.clone(),
            document: tokens[window.clone()].to_vec(),
            seg,
            paragraph_ids,
            offset: window.start,
            targets,
        });
    }
    Ok(out)
}

/// Keeps every positive and each NULL instance with probability `keep_p`.
pub fn subsample_negatives(instances: Vec<InstanceTuple>, keep_p: f64, seed: u64) -> Result<Vec<InstanceTuple>> {
    if !(keep_p > 0.0 && keep_p <= 1.0) {
        return Err(Error::Config(format!("keep probability {keep_p} must lie in (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(instances
        .into_iter()
        .filter(|inst| inst.targets.answer_type != AnswerType::Null || rng.random::<f64>() < keep_p)
        .collect())
}

/// Builds, labels and sub-samples instances for every page, in page order.
pub fn training_instances(pages: &[Page], cfg: &PipelineConfig) -> Result<Vec<InstanceTuple>> {
    let mut all = Vec::new();
    for page in pages {
        all.extend(build_instances(page, cfg)?);
    }
    subsample_negatives(all, cfg.negative_keep_prob, cfg.seed)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Page>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut pages = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let page: Page = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        page.validate().map_err(|e| parse_err(e.to_string()))?;
        pages.push(page);
    }
    Ok(pages)
}

pub fn save_dataset(pages: &[Page], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for page in pages {
        serde_json::to_writer(&mut w, page)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(lengths: &[usize], gold: Option<Gold>) -> Page {
        let mut next = 10;
        Page {
            page_id: "p".into(),
            question: vec![3, 4],
            paragraphs: lengths
                .iter()
                .enumerate()
                .map(|(i, &len)| Paragraph {
                    pid: 100 + i,
                    tokens: (0..len)
                        .map(|_| {
                            next += 1;
                            next
                        })
                        .collect(),
                })
                .collect(),
            gold,
        }
    }

    fn cfg(window: usize, stride: usize) -> PipelineConfig {
        PipelineConfig {
            window,
            stride,
            negative_keep_prob: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_document(512, 512, 192).unwrap(), vec![0..512]);
        assert_eq!(split_document(700, 512, 192).unwrap(), vec![0..512, 192..700]);
        let spans = split_document(1200, 512, 192).unwrap();
        let starts: Vec<usize> = spans.iter().map(|r| r.start).collect();
        assert_eq!(starts, vec![0, 192, 384, 576, 768]);
        assert_eq!(spans.last().unwrap(), &(768..1200));
        assert_eq!(split_document(5, 8, 3).unwrap(), vec![0..5]);
        assert!(split_document(0, 8, 3).is_err());
        assert!(split_document(10, 4, 5).is_err());
        assert!(split_document(10, 4, 0).is_err());
    }

    #[test]
    fn short_span_inside_window_is_shifted() {
        let gold = Gold {
            long_pid: 101,
            short: Some([7, 9]),
            answer_type: AnswerType::Short,
        };
        let p = page(&[5, 5, 5], Some(gold));
        let inst = build_instances(&p, &cfg(8, 4)).unwrap();
        let offsets: Vec<usize> = inst.iter().map(|i| i.offset).collect();
        assert_eq!(offsets, vec![0, 4, 8]);
        // [7,9) straddles the edge of the first window.
        assert_eq!(inst[0].targets.answer_type, AnswerType::Long);
        assert_eq!(inst[0].targets.long, Some(1));
        assert_eq!(
            inst[1].targets,
            TargetLabels {
                long: Some(1),
                start: Some(3),
                end: Some(4),
                answer_type: AnswerType::Short,
            }
        );
        assert_eq!(inst[1].paragraph_ids, vec![100, 101, 102]);
        assert_eq!(inst[1].seg.entries(), &[0, 1, 1, 1, 1, 1, 2, 2]);
        assert_eq!(inst[2].targets, TargetLabels::null());
        assert_eq!(inst[2].paragraph_ids, vec![101, 102]);
    }

    #[test]
    fn yes_no_type_kept_when_head_in_window() {
        let gold = Gold {
            long_pid: 102,
            short: None,
            answer_type: AnswerType::No,
        };
        let p = page(&[4, 4, 4], Some(gold));
        let inst = build_instances(&p, &cfg(6, 3)).unwrap();
        let types: Vec<AnswerType> = inst.iter().map(|i| i.targets.answer_type).collect();
        assert_eq!(types, vec![AnswerType::Null, AnswerType::No, AnswerType::No]);
        assert_eq!(inst[1].targets.long, Some(2));
        assert_eq!(inst[2].targets.long, Some(1));
    }

    #[test]
    fn null_page_gives_null_instances() {
        let p = page(&[3, 3], None);
        for inst in build_instances(&p, &cfg(4, 2)).unwrap() {
            assert_eq!(inst.targets, TargetLabels::null());
            assert!(inst.document.len() <= 4);
        }
    }

    #[test]
    fn inconsistent_gold_is_rejected() {
        let outside = Gold {
            long_pid: 100,
            short: Some([3, 6]),
            answer_type: AnswerType::Short,
        };
        assert!(build_instances(&page(&[4, 4], Some(outside)), &cfg(4, 4)).is_err());
        let missing = Gold {
            long_pid: 7,
            short: None,
            answer_type: AnswerType::Long,
        };
        assert!(page(&[4], Some(missing)).validate().is_err());
        let null_typed = Gold {
            long_pid: 100,
            short: None,
            answer_type: AnswerType::Null,
        };
        assert!(page(&[4], Some(null_typed)).validate().is_err());
    }

    fn instances_with(types: &[AnswerType]) -> Vec<InstanceTuple> {
        types
            .iter()
            .map(|&t| InstanceTuple {
                page_id: "p".into(),
                question: vec![3],
                document: vec![9],
                seg: ParagraphMap::new(vec![0]).unwrap(),
                paragraph_ids: vec![0],
                offset: 0,
                targets: if t == AnswerType::Null {
                    TargetLabels::null()
                } else {
                    TargetLabels {
                        long: Some(0),
                        start: None,
                        end: None,
                        answer_type: t,
                    }
                },
            })
            .collect()
    }

    #[test]
    fn subsampling_examples() {
        let mixed = instances_with(&[AnswerType::Null, AnswerType::Long, AnswerType::Null]);
        assert_eq!(subsample_negatives(mixed.clone(), 1.0, 3).unwrap(), mixed);
        let positives = instances_with(&[AnswerType::Long; 20]);
        assert_eq!(subsample_negatives(positives.clone(), 0.01, 3).unwrap(), positives);
        assert!(subsample_negatives(mixed, 0.0, 3).is_err());
    }

    #[test]
    fn subsampling_rate_is_binomial() {
        let negatives = instances_with(&vec![AnswerType::Null; 10_000]);
        let kept = subsample_negatives(negatives.clone(), 0.1, 42).unwrap().len() as f64;
        let sigma = (10_000.0f64 * 0.1 * 0.9).sqrt();
        assert!((kept - 1000.0).abs() <= 3.0 * sigma, "kept {kept}");
        assert_eq!(subsample_negatives(negatives, 0.1, 42).unwrap().len() as f64, kept);
    }

    #[test]
    fn dataset_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pages.jsonl");
        let pages = vec![
            page(&[3, 2], None),
            page(
                &[2, 2],
                Some(Gold {
                    long_pid: 101,
                    short: Some([2, 4]),
                    answer_type: AnswerType::Short,
                }),
            ),
        ];
        save_dataset(&pages, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), pages);

        std::fs::write(&path, "").unwrap();
        assert!(load_dataset(&path).unwrap().is_empty());

        let text = serde_json::to_string(&pages[0]).unwrap();
        std::fs::write(&path, format!("{text}\n{}\n", &text[..text.len() / 2])).unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wire_format_field_names() {
        let gold = Gold {
            long_pid: 4,
            short: Some([1, 3]),
            answer_type: AnswerType::Short,
        };
        assert_eq!(
            serde_json::to_string(&gold).unwrap(),
            r#"{"long_pid":4,"short":[1,3],"type":1}"#
        );
    }
}
