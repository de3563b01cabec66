//! Text-generation metrics on whitespace tokens.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// The frozen metric tokenizer: lowercase, detach ASCII punctuation into
/// separate tokens, split on whitespace.
pub fn tokenize_for_metrics(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() * 2);
    for c in text.to_lowercase().chars() {
        if c.is_ascii_punctuation() {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BleuSmoothing {
    /// Zero n-gram matches zero the cumulative score.
    #[default]
    Off,
    /// Add-one smoothing on orders above 1, for tiny corpora.
    AddOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    /// Cumulative BLEU-n for n = 1..=max_n (geometric mean of the first n
    /// precisions times the brevity penalty).
    pub per_n: Vec<f64>,
    pub brevity_penalty: f64,
    /// Set when the candidate side was empty; the score is 0, not an error.
    pub empty_candidate: bool,
}

/// Sentence-level BLEU: a corpus of one.
pub fn bleu(
    candidate: &[String],
    references: &[Vec<String>],
    max_n: usize,
) -> Result<BleuScore> {
    corpus_bleu(
        &[(candidate.to_vec(), references.to_vec())],
        max_n,
        BleuSmoothing::Off,
    )
}

/// Corpus BLEU with per-reference clipping and brevity penalty
/// exp(1 - r/c) for c < r; r uses the closest reference length.
pub fn corpus_bleu(
    pairs: &[(Vec<String>, Vec<Vec<String>>)],
    max_n: usize,
    smoothing: BleuSmoothing,
) -> Result<BleuScore> {
    if max_n == 0 || max_n > 4 {
        return Err(Error::Config(format!("bleu max_n {max_n} outside 1..=4")));
    }
    if pairs.iter().any(|(_, refs)| refs.is_empty()) {
        return Err(Error::DegenerateInput("bleu requires references".into()));
    }
    let mut clipped = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (candidate, references) in pairs {
        cand_len += candidate.len();
        ref_len += closest_ref_len(candidate.len(), references);
        for n in 1..=max_n {
            let cand_grams = ngram_counts(candidate, n);
            totals[n - 1] += candidate.len().saturating_sub(n - 1);
            for (gram, &count) in &cand_grams {
                let max_ref = references
                    .iter()
                    .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                clipped[n - 1] += count.min(max_ref);
            }
        }
    }
    let empty_candidate = cand_len == 0;
    let brevity_penalty = if empty_candidate {
        0.0
    } else if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let precision = |n: usize| -> f64 {
        let (c, t) = (clipped[n - 1], totals[n - 1]);
        match smoothing {
            BleuSmoothing::AddOne if n > 1 => (c + 1) as f64 / (t + 1) as f64,
            _ => {
                if t == 0 {
                    0.0
                } else {
                    c as f64 / t as f64
                }
            }
        }
    };
    let mut per_n = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let ps: Vec<f64> = (1..=n).map(precision).collect();
        let score = if ps.iter().any(|&p| p == 0.0) {
            0.0
        } else {
            let log_mean = ps.iter().map(|p| p.ln()).sum::<f64>() / n as f64;
            brevity_penalty * log_mean.exp()
        };
        per_n.push(score);
    }
    Ok(BleuScore {
        per_n,
        brevity_penalty,
        empty_candidate,
    })
}

fn closest_ref_len(cand_len: usize, references: &[Vec<String>]) -> usize {
    let mut best = references[0].len();
    for r in references {
        let d = r.len().abs_diff(cand_len);
        let bd = best.abs_diff(cand_len);
        if d < bd || (d == bd && r.len() < best) {
            best = r.len();
        }
    }
    best
}

/// ROUGE-L F-measure: LCS via dynamic programming, beta = 1.2 favoring
/// recall: F = (1 + b^2) P R / (R + b^2 P).
pub fn rouge_l(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let beta2 = 1.2f64 * 1.2;
    (1.0 + beta2) * p * r / (r + beta2 * p)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Exact-match METEOR: unigram alignment maximizing matches, then
/// minimizing chunks; F_mean = 10PR/(R+9P); penalty = 0.5 (chunks/m)^3.
///
/// No synonym or stem stage — matching is literal token equality, hence
/// the name. The chunk search is exhaustive with pruning, which is exact
/// and fine for caption-length sentences.
pub fn meteor_exact(candidate: &[String], reference: &[String]) -> f64 {
    let (matches, chunks) = align_exact(candidate, reference);
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

/// Returns (max matches, min chunks over max-match alignments).
fn align_exact(candidate: &[String], reference: &[String]) -> (usize, usize) {
    let mut cand_counts: HashMap<&String, usize> = HashMap::new();
    for w in candidate {
        *cand_counts.entry(w).or_insert(0) += 1;
    }
    let mut ref_counts: HashMap<&String, usize> = HashMap::new();
    for w in reference {
        *ref_counts.entry(w).or_insert(0) += 1;
    }
    let mut need: HashMap<&String, usize> = HashMap::new();
    let mut total_matches = 0;
    for (w, &c) in &cand_counts {
        let r = ref_counts.get(w).copied().unwrap_or(0);
        let n = c.min(r);
        if n > 0 {
            need.insert(w, n);
            total_matches += n;
        }
    }
    if total_matches == 0 {
        return (0, 0);
    }
    // Candidate occurrences of each word not yet passed, to know when a
    // skip would make the required match count unreachable.
    let mut remaining: HashMap<&String, usize> = cand_counts.clone();
    let mut used = vec![false; reference.len()];
    let mut best = usize::MAX;
    search_chunks(
        candidate,
        reference,
        0,
        None,
        0,
        total_matches,
        &mut need,
        &mut remaining,
        &mut used,
        &mut best,
    );
    (total_matches, best)
}

#[allow(clippy::too_many_arguments)]
fn search_chunks<'a>(
    candidate: &'a [String],
    reference: &'a [String],
    i: usize,
    last_ref: Option<usize>,
    chunks: usize,
    pending: usize,
    need: &mut HashMap<&'a String, usize>,
    remaining: &mut HashMap<&'a String, usize>,
    used: &mut [bool],
    best: &mut usize,
) {
    // Any further match costs at least one more chunk unless it extends
    // the run ending at last_ref.
    let lower = chunks + usize::from(pending > 0 && last_ref.is_none());
    if lower >= *best {
        return;
    }
    if i == candidate.len() {
        if pending == 0 {
            *best = chunks;
        }
        return;
    }
    let word = &candidate[i];
    let needed = need.get(word).copied().unwrap_or(0);
    let avail = remaining[word];
    *remaining.get_mut(word).unwrap() -= 1;
    if needed > 0 {
        for j in 0..reference.len() {
            if used[j] || &reference[j] != word {
                continue;
            }
            let extends = last_ref == Some(j.wrapping_sub(1)) && j > 0;
            let new_chunks = chunks + usize::from(!extends);
            used[j] = true;
            *need.get_mut(word).unwrap() -= 1;
            search_chunks(
                candidate,
                reference,
                i + 1,
                Some(j),
                new_chunks,
                pending - 1,
                need,
                remaining,
                used,
                best,
            );
            *need.get_mut(word).unwrap() += 1;
            used[j] = false;
        }
    }
    // Skipping is legal only if later occurrences still cover the need.
    if avail - 1 >= needed {
        search_chunks(
            candidate, reference, i + 1, None, chunks, pending, need, remaining, used, best,
        );
    }
    *remaining.get_mut(word).unwrap() += 1;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderReport {
    /// Corpus score: mean of per-sample scores, in [0, 10].
    pub score: f64,
    pub per_sample: Vec<f64>,
    /// True when the corpus has fewer than two samples, making every IDF
    /// weight ln(1) = 0 and the score vacuously 0.
    pub degenerate: bool,
}

/// CIDEr: TF-IDF weighted n-gram cosine against each reference, averaged
/// over references and over n-gram orders 1..=max_n, scaled by 10.
///
/// IDF is ln(I / df) with df counted over reference sets and clamped to 1,
/// so a single-sample corpus zeroes every weight; that case is reported
/// via `degenerate` rather than an error.
pub fn cider(
    candidates: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    max_n: usize,
) -> Result<CiderReport> {
    if candidates.len() != references.len() {
        return Err(Error::ShapeMismatch {
            op: "cider",
            lhs: vec![candidates.len()],
            rhs: vec![references.len()],
        });
    }
    if candidates.is_empty() {
        return Err(Error::DegenerateInput("cider on empty corpus".into()));
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(Error::DegenerateInput("cider requires references".into()));
    }
    let images = candidates.len();
    // Document frequency per order: how many images' reference sets
    // contain the gram.
    let mut df: Vec<HashMap<Vec<String>, usize>> = vec![HashMap::new(); max_n];
    for refs in references {
        for n in 1..=max_n {
            let mut seen: HashMap<&[String], ()> = HashMap::new();
            for r in refs {
                for gram in r.windows(n).take(r.len().saturating_sub(n - 1)) {
                    seen.entry(gram).or_insert(());
                }
            }
            for (gram, ()) in seen {
                *df[n - 1].entry(gram.to_vec()).or_insert(0) += 1;
            }
        }
    }
    let idf = |n: usize, gram: &[String]| -> f64 {
        let d = df[n - 1].get(gram).copied().unwrap_or(0).max(1);
        (images as f64 / d as f64).ln()
    };
    fn weighted_vec<'t>(
        tokens: &'t [String],
        n: usize,
        idf: &dyn Fn(usize, &[String]) -> f64,
    ) -> HashMap<&'t [String], f64> {
        let mut vec: HashMap<&[String], f64> = HashMap::new();
        if tokens.len() >= n {
            for gram in tokens.windows(n) {
                *vec.entry(gram).or_insert(0.0) += idf(n, gram);
            }
        }
        vec
    }
    let mut per_sample = Vec::with_capacity(images);
    for (candidate, refs) in candidates.iter().zip(references) {
        let mut order_sum = 0.0;
        for n in 1..=max_n {
            let cv = weighted_vec(candidate, n, &idf);
            let c_norm: f64 = cv.values().map(|w| w * w).sum::<f64>().sqrt();
            let mut ref_sum = 0.0;
            for r in refs {
                let rv = weighted_vec(r, n, &idf);
                let r_norm: f64 = rv.values().map(|w| w * w).sum::<f64>().sqrt();
                if c_norm == 0.0 || r_norm == 0.0 {
                    continue;
                }
                let dot: f64 = cv
                    .iter()
                    .filter_map(|(g, w)| rv.get(g).map(|rw| w * rw))
                    .sum();
                ref_sum += dot / (c_norm * r_norm);
            }
            order_sum += ref_sum / refs.len() as f64;
        }
        per_sample.push(10.0 * order_sum / max_n as f64);
    }
    let score = per_sample.iter().sum::<f64>() / images as f64;
    Ok(CiderReport {
        score,
        per_sample,
        degenerate: images < 2,
    })
}
