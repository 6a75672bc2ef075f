//! Synthetic pages with a planted key phrase that the question asks about.
//!
//! Token layout: ids 0..=2 are reserved by the encoder, 3..=5 are question
//! template words, 6 and 7 mark yes/no sentences, filler starts at 8.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Gold, Page, Paragraph};
use crate::error::{Error, Result};
use crate::predictor::AnswerType;

pub const WHAT_ID: u32 = 3;
pub const IS_ID: u32 = 4;
pub const DOES_ID: u32 = 5;
pub const YES_MARKER: u32 = 6;
pub const NO_MARKER: u32 = 7;
pub const FIRST_FILLER_ID: u32 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub pages: usize,
    pub paragraphs_per_page: usize,
    pub tokens_per_paragraph: usize,
    pub vocab_size: usize,
    pub null_fraction: f64,
    pub long_only_fraction: f64,
    pub yes_no_fraction: f64,
    pub min_key_len: usize,
    pub max_key_len: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            pages: 64,
            paragraphs_per_page: 4,
            tokens_per_paragraph: 48,
            vocab_size: 1024,
            null_fraction: 0.2,
            long_only_fraction: 0.0,
            yes_no_fraction: 0.0,
            min_key_len: 2,
            max_key_len: 3,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    fn type_counts(&self) -> Result<[usize; 5]> {
        let count = |f: f64, what: &str| -> Result<usize> {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{what} {f} must lie in [0, 1]")));
            }
            Ok((self.pages as f64 * f).round() as usize)
        };
        let null = count(self.null_fraction, "null_fraction")?;
        let long = count(self.long_only_fraction, "long_only_fraction")?;
        let yes_no = count(self.yes_no_fraction, "yes_no_fraction")?;
        if null + long + yes_no > self.pages {
            return Err(Error::Config("page type fractions sum to more than 1".into()));
        }
        let yes = yes_no.div_ceil(2);
        Ok([null, self.pages - null - long - yes_no, long, yes, yes_no - yes])
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.paragraphs_per_page == 0 || self.tokens_per_paragraph == 0 {
            return fail("pages need at least one paragraph of one token");
        }
        if self.min_key_len == 0 || self.min_key_len > self.max_key_len {
            return fail("key length bounds must satisfy 1 <= min <= max");
        }
        // long-only plants need a gap between key tokens, yes/no plants a marker slot
        let len = self.tokens_per_paragraph;
        if 2 * self.max_key_len > len + 1 || self.max_key_len >= len {
            return fail("tokens_per_paragraph too small for the key phrase");
        }
        let filler = self.vocab_size.saturating_sub(FIRST_FILLER_ID as usize);
        if filler < 2 * self.max_key_len {
            return fail("vocab_size leaves too few filler ids");
        }
        self.type_counts().map(|_| ())
    }
}

fn draw_distinct<R: Rng>(rng: &mut R, lo: u32, hi: u32, k: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let id = rng.random_range(lo..hi);
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

fn generate_page<R: Rng>(cfg: &SyntheticConfig, index: usize, kind: AnswerType, rng: &mut R) -> Page {
    let vocab = cfg.vocab_size as u32;
    let key_len = rng.random_range(cfg.min_key_len..=cfg.max_key_len);
    let key = draw_distinct(rng, FIRST_FILLER_ID, vocab, key_len);
    let mut paragraphs: Vec<Paragraph> = (0..cfg.paragraphs_per_page)
        .map(|pid| Paragraph {
            pid,
            tokens: (0..cfg.tokens_per_paragraph)
                .map(|_| loop {
                    let id = rng.random_range(FIRST_FILLER_ID..vocab);
                    if !key.contains(&id) {
                        break id;
                    }
                })
                .collect(),
        })
        .collect();

    let mut question = match kind {
        AnswerType::Yes | AnswerType::No => vec![DOES_ID],
        _ => vec![WHAT_ID, IS_ID],
    };
    question.extend_from_slice(&key);

    let len = cfg.tokens_per_paragraph;
    let target = rng.random_range(0..cfg.paragraphs_per_page);
    let para_start = target * len;
    let tokens = &mut paragraphs[target].tokens;
    let gold = match kind {
        AnswerType::Null => None,
        AnswerType::Short => {
            let at = rng.random_range(0..=len - key_len);
            tokens[at..at + key_len].copy_from_slice(&key);
            Some(Gold {
                long_pid: target,
                short: Some([para_start + at, para_start + at + key_len]),
                answer_type: AnswerType::Short,
            })
        }
        AnswerType::Long => {
            // key tokens in order with at least one filler token between them
            let slack = len - (2 * key_len - 1);
            let mut gaps: Vec<usize> = (0..key_len).map(|_| rng.random_range(0..=slack)).collect();
            gaps.sort_unstable();
            for (i, (&k, &g)) in key.iter().zip(&gaps).enumerate() {
                tokens[g + 2 * i] = k;
            }
            Some(Gold {
                long_pid: target,
                short: None,
                answer_type: AnswerType::Long,
            })
        }
        AnswerType::Yes | AnswerType::No => {
            let at = rng.random_range(0..len - key_len);
            tokens[at..at + key_len].copy_from_slice(&key);
            tokens[at + key_len] = if kind == AnswerType::Yes { YES_MARKER } else { NO_MARKER };
            Some(Gold {
                long_pid: target,
                short: None,
                answer_type: kind,
            })
        }
    };
    Page {
        page_id: format!("page-{index:05}"),
        question,
        paragraphs,
        gold,
    }
}

/// Deterministic corpus with exact per-type page counts in shuffled order.
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig) -> Result<Vec<Page>> {
    cfg.validate()?;
    let counts = cfg.type_counts()?;
    let mut kinds: Vec<AnswerType> = AnswerType::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&t, n)| std::iter::repeat_n(t, n))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    kinds.shuffle(&mut rng);
    Ok(kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| generate_page(cfg, i, kind, &mut rng))
        .collect())
}

/// Page counts indexed by answer type (NULL pages have no gold).
pub fn count_by_type(pages: &[Page]) -> [usize; 5] {
    let mut counts = [0; 5];
    for p in pages {
        counts[p.gold.map_or(0, |g| g.answer_type.index())] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_null_corpus() {
        let cfg = SyntheticConfig {
            null_fraction: 1.0,
            ..SyntheticConfig::default()
        };
        let pages = generate_synthetic_corpus(&cfg).unwrap();
        assert_eq!(pages.len(), 64);
        assert!(pages.iter().all(|p| p.gold.is_none()));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = SyntheticConfig::default();
        assert_eq!(generate_synthetic_corpus(&cfg).unwrap(), generate_synthetic_corpus(&cfg).unwrap());
        let other = SyntheticConfig { seed: 2, ..cfg.clone() };
        assert_ne!(generate_synthetic_corpus(&cfg).unwrap(), generate_synthetic_corpus(&other).unwrap());
    }

    #[test]
    fn gold_spans_hold_the_question_key() {
        let cfg = SyntheticConfig {
            long_only_fraction: 0.1,
            yes_no_fraction: 0.1,
            ..SyntheticConfig::default()
        };
        let pages = generate_synthetic_corpus(&cfg).unwrap();
        assert_eq!(count_by_type(&pages), [13, 39, 6, 3, 3]);
        for page in &pages {
            page.validate().unwrap();
            let tokens = page.tokens();
            match page.gold {
                Some(Gold {
                    short: Some([s, e]), ..
                }) => assert_eq!(&tokens[s..e], &page.question[2..]),
                Some(g) => {
                    let skip = if page.question[0] == DOES_ID { 1 } else { 2 };
                    let key = &page.question[skip..];
                    let para = &page.paragraphs[g.long_pid].tokens;
                    if g.answer_type == AnswerType::Long {
                        assert!(!para.windows(key.len()).any(|w| w == key));
                    }
                    assert!(key.iter().all(|k| para.contains(k)));
                }
                None => {
                    let key = &page.question[2..];
                    assert!(tokens.iter().all(|t| !key.contains(t)));
                }
            }
        }
    }

    #[test]
    fn too_large_fractions_are_rejected() {
        let cfg = SyntheticConfig {
            null_fraction: 0.7,
            long_only_fraction: 0.5,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic_corpus(&cfg).is_err());
    }
}
