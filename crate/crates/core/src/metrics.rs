//! Answer metrics: exact match, token F1, corpus BLEU-4 and ROUGE-L.
//!
//! EM and F1 compare SQuAD-normalized answers. BLEU and ROUGE-L work on
//! lowercased word tokens (punctuation split off, articles kept).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::split_words;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, delete punctuation, drop the articles "a", "an", "the", and
/// collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalize_answer(pred) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

fn counts<'a>(tokens: impl IntoIterator<Item = &'a str>) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Harmonic mean of token precision and recall over the multiset overlap of
/// normalized answers.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    match (pt.is_empty(), gt.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let gc = counts(gt.iter().copied());
    let common: usize = counts(pt.iter().copied())
        .iter()
        .map(|(t, c)| (*c).min(gc.get(t).copied().unwrap_or(0)))
        .sum();
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub const BLEU_MAX_N: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 with clipped n-gram counts, add-one smoothing for orders 2
/// to 4 whose match count is zero, and the brevity penalty `exp(1 - r/c)`.
pub fn bleu(preds: &[&str], refs: &[&str]) -> Result<f64> {
    if preds.len() != refs.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: refs.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut matches = [0usize; BLEU_MAX_N];
    let mut totals = [0usize; BLEU_MAX_N];
    let (mut c, mut r) = (0usize, 0usize);
    for (p, g) in preds.iter().zip(refs) {
        let pt = split_words(p);
        let gt = split_words(g);
        c += pt.len();
        r += gt.len();
        for n in 1..=BLEU_MAX_N {
            let pc = ngram_counts(&pt, n);
            let gc = ngram_counts(&gt, n);
            totals[n - 1] += pt.len().saturating_sub(n - 1);
            matches[n - 1] += pc
                .iter()
                .map(|(g, k)| (*k).min(gc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if c == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..BLEU_MAX_N {
        let p = if n > 0 && matches[n] == 0 {
            1.0 / (totals[n] + 1) as f64
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_sum / BLEU_MAX_N as f64).exp())
}

/// Sentence-level BLEU, i.e. corpus BLEU over a single pair.
pub fn sentence_bleu(pred: &str, gold: &str) -> f64 {
    bleu(&[pred], &[gold]).expect("one pair is a valid corpus")
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (beta = 1) over word tokens.
pub fn rouge_l(pred: &str, gold: &str) -> f64 {
    let pt = split_words(pred);
    let gt = split_words(gold);
    if pt.is_empty() || gt.is_empty() {
        return 0.0;
    }
    let l = lcs_len(&pt, &gt) as f64;
    let p = l / pt.len() as f64;
    let r = l / gt.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Corpus metrics, each scaled to `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub em: f64,
    pub f1: f64,
    pub bleu: f64,
    pub rouge_l: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub em: f64,
    pub f1: f64,
    pub bleu: f64,
    pub rouge_l: f64,
}

pub fn score_sample(pred: &str, gold: &str) -> SampleScores {
    SampleScores {
        em: exact_match(pred, gold),
        f1: token_f1(pred, gold),
        bleu: sentence_bleu(pred, gold),
        rouge_l: rouge_l(pred, gold),
    }
}

/// EM, F1 and ROUGE-L are sample means; BLEU is the corpus statistic.
pub fn score_corpus(preds: &[&str], golds: &[&str]) -> Result<MetricReport> {
    let corpus_bleu = bleu(preds, golds)?;
    let n = preds.len() as f64;
    let mut em = 0.0;
    let mut f1 = 0.0;
    let mut rl = 0.0;
    for (p, g) in preds.iter().zip(golds) {
        em += exact_match(p, g);
        f1 += token_f1(p, g);
        rl += rouge_l(p, g);
    }
    Ok(MetricReport {
        em: 100.0 * em / n,
        f1: 100.0 * f1 / n,
        bleu: 100.0 * corpus_bleu,
        rouge_l: 100.0 * rl / n,
        n_samples: preds.len(),
    })
}
