//! Text alignment metrics over lowercase whitespace tokens: BLEU with clipped
//! n-gram counts and a brevity penalty (no smoothing), and an exact-match
//! METEOR variant (no stemming or synonyms).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU-`max_n` over `(candidate, reference)` pairs: clipped counts
/// and lengths are summed over the corpus before the geometric mean of
/// precisions `1..=max_n` (uniform weights) and the brevity penalty.
/// Any zero precision gives 0.
pub fn corpus_bleu(pairs: &[(&str, &str)], max_n: usize) -> f64 {
    if max_n == 0 || pairs.is_empty() {
        return 0.0;
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, reference) in pairs {
        let c = tokenize(cand);
        let r = tokenize(reference);
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(&r, n);
            for (gram, count) in ngram_counts(&c, n) {
                matched[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    if cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        if matched[n] == 0 {
            return 0.0;
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    bp * (log_sum / max_n as f64).exp()
}

/// Sentence BLEU-`max_n` (a one-pair corpus).
pub fn bleu(candidate: &str, reference: &str, max_n: usize) -> f64 {
    corpus_bleu(&[(candidate, reference)], max_n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuScores {
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
}

pub fn bleu_scores(candidate: &str, reference: &str) -> BleuScores {
    BleuScores {
        bleu2: bleu(candidate, reference, 2),
        bleu3: bleu(candidate, reference, 3),
        bleu4: bleu(candidate, reference, 4),
    }
}

const RECALL_WEIGHT: f64 = 9.0;
const PENALTY_GAMMA: f64 = 0.5;
const PENALTY_BETA: f64 = 3.0;

/// Exact-match METEOR: `Fmean = 10PR / (R + 9P)` scaled by
/// `1 - 0.5 (chunks / matches)^3`.
///
/// Alignment is greedy: each candidate token, left to right, takes the
/// earliest unused identical reference token. A chunk is a maximal run of
/// matches adjacent in both sentences.
pub fn meteor_exact(candidate: &str, reference: &str) -> f64 {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; r.len()];
    let mut alignment: Vec<(usize, usize)> = Vec::new();
    for (i, tok) in c.iter().enumerate() {
        if let Some(j) = (0..r.len()).find(|&j| !used[j] && &r[j] == tok) {
            used[j] = true;
            alignment.push((i, j));
        }
    }
    let matches = alignment.len();
    if matches == 0 {
        return 0.0;
    }
    let chunks = 1 + alignment
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let p = matches as f64 / c.len() as f64;
    let rec = matches as f64 / r.len() as f64;
    let fmean = (1.0 + RECALL_WEIGHT) * p * rec / (rec + RECALL_WEIGHT * p);
    let penalty = PENALTY_GAMMA * (chunks as f64 / matches as f64).powf(PENALTY_BETA);
    fmean * (1.0 - penalty)
}
