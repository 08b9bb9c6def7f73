//! Text-generation metrics: BLEU, ROUGE-N, ROUGE-L, METEOR, Levenshtein
//! distance and normalized exact match.
//!
//! Every word-level metric works on [`TokenSeq`] values from [`tokenize`],
//! which lowercases, splits on whitespace and emits each punctuation
//! character as its own token.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextMetricsError {
    #[error("at least one reference is required")]
    EmptyReference,
    #[error("invalid BLEU configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub source: String,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercases, splits on whitespace, and splits every character that is
/// neither alphanumeric nor whitespace into a token of its own.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
        } else if c.is_alphanumeric() {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
            tokens.push(c.to_string());
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    TokenSeq {
        tokens,
        source: text.to_string(),
    }
}

/// One token per character, case preserved. Used for BLEU over SMILES.
pub fn char_tokens(text: &str) -> TokenSeq {
    TokenSeq {
        tokens: text.chars().map(|c| c.to_string()).collect(),
        source: text.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub weights: Vec<f64>,
    /// Replaces a zero n-gram precision numerator when positive.
    pub smoothing_epsilon: f64,
}

impl BleuConfig {
    /// Uniform weights up to `max_n`, unsmoothed.
    pub fn uniform(max_n: usize) -> BleuConfig {
        BleuConfig {
            max_n,
            weights: vec![1.0 / max_n as f64; max_n],
            smoothing_epsilon: 0.0,
        }
    }

    pub fn bleu2() -> BleuConfig {
        BleuConfig::uniform(2)
    }

    pub fn bleu4() -> BleuConfig {
        BleuConfig::uniform(4)
    }

    pub fn validate(&self) -> Result<(), TextMetricsError> {
        let bad = |m: String| Err(TextMetricsError::InvalidConfig(m));
        if self.max_n == 0 {
            return bad("max_n must be at least 1".into());
        }
        if self.weights.len() != self.max_n {
            return bad(format!("{} weights for max_n {}", self.weights.len(), self.max_n));
        }
        if self.weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return bad("weights must be non-negative".into());
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("weights must sum to 1".into());
        }
        if self.smoothing_epsilon.is_nan() || self.smoothing_epsilon < 0.0 {
            return bad("smoothing_epsilon must be non-negative".into());
        }
        Ok(())
    }
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig::bleu4()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with clipped n-gram precisions and brevity penalty
/// `exp(1 - r/c)` for `c <= r`, where `r` is the reference length closest to
/// the candidate length (the shorter one on ties).
pub fn bleu(candidate: &TokenSeq, references: &[TokenSeq], cfg: &BleuConfig) -> Result<f64, TextMetricsError> {
    cfg.validate()?;
    if references.is_empty() {
        return Err(TextMetricsError::EmptyReference);
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=cfg.max_n {
        let cand = ngram_counts(&candidate.tokens, n);
        let total: usize = cand.values().sum();
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in references {
            for (g, k) in ngram_counts(&r.tokens, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        let clipped: usize = cand
            .iter()
            .map(|(g, k)| (*k).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if clipped > 0 {
            clipped as f64 / total as f64
        } else if cfg.smoothing_epsilon > 0.0 {
            cfg.smoothing_epsilon / total.max(1) as f64
        } else {
            return Ok(0.0);
        };
        log_sum += cfg.weights[n - 1] * p.ln();
    }
    let r = references
        .iter()
        .map(|t| t.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap();
    let bp = if c <= r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * log_sum.exp())
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// ROUGE-N F1 over clipped n-gram overlap.
pub fn rouge_n(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> f64 {
    let cand = ngram_counts(&candidate.tokens, n);
    let refc = ngram_counts(&reference.tokens, n);
    let (ct, rt): (usize, usize) = (cand.values().sum(), refc.values().sum());
    if ct == 0 || rt == 0 {
        return 0.0;
    }
    let overlap: usize = cand
        .iter()
        .map(|(g, k)| (*k).min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    f1(overlap as f64 / ct as f64, overlap as f64 / rt as f64)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-score with beta = 1.
pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(&candidate.tokens, &reference.tokens) as f64;
    f1(l / candidate.len() as f64, l / reference.len() as f64)
}

/// Exact-match unigram alignment: each candidate token, left to right, is
/// aligned to the leftmost unused reference token with the same text.
/// Entry `i` is the reference index aligned to candidate token `i`.
pub fn meteor_alignment(candidate: &TokenSeq, reference: &TokenSeq) -> Vec<Option<usize>> {
    let mut used = vec![false; reference.len()];
    candidate
        .tokens
        .iter()
        .map(|t| {
            let j = (0..reference.len()).find(|&j| !used[j] && reference.tokens[j] == *t)?;
            used[j] = true;
            Some(j)
        })
        .collect()
}

/// Number of maximal runs of aligned candidate tokens that are adjacent in
/// both sequences.
pub fn meteor_chunks(alignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, a) in alignment.iter().enumerate() {
        match a {
            Some(j) => {
                if prev != Some((i.wrapping_sub(1), j.wrapping_sub(1))) {
                    chunks += 1;
                }
                prev = Some((i, *j));
            }
            None => prev = None,
        }
    }
    chunks
}

/// METEOR with exact matching only: `Fmean * (1 - 0.5 * (chunks/m)^3)` where
/// `Fmean = 10PR / (R + 9P)`.
pub fn meteor(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    let alignment = meteor_alignment(candidate, reference);
    let m = alignment.iter().flatten().count();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let frag = meteor_chunks(&alignment) as f64 / m as f64;
    fmean * (1.0 - 0.5 * frag.powi(3))
}

/// Character-level edit distance with unit costs.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    #[default]
    None,
    /// Lowercase and collapse whitespace runs to one space, trimmed.
    Iupac,
}

impl Normalizer {
    pub fn apply(self, s: &str) -> String {
        match self {
            Normalizer::None => s.to_string(),
            Normalizer::Iupac => s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase(),
        }
    }
}

pub fn exact_match_text(a: &str, b: &str, normalizer: Normalizer) -> u8 {
    u8::from(normalizer.apply(a) == normalizer.apply(b))
}
