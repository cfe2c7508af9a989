use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

fn ngram_counts<X: Hash + Eq>(tokens: &[X], n: usize) -> HashMap<&[X], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Unsmoothed corpus BLEU with clipped n-gram precisions up to `max_n`,
/// aggregated over the corpus, and brevity penalty
/// `min(1, exp(1 − ref_len/hyp_len))`.
///
/// An order with no n-grams on either side (every sentence shorter than
/// `n`) carries no evidence and is left out of the geometric mean.
pub fn corpus_bleu<X: Hash + Eq>(hypotheses: &[Vec<X>], references: &[Vec<X>], max_n: usize) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::contract("BLEU needs a nonempty corpus"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::contract(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::contract("BLEU order must be positive"));
    }
    let hyp_len: usize = hypotheses.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=max_n {
        let (mut matched, mut total, mut ref_total) = (0usize, 0usize, 0usize);
        for (h, r) in hypotheses.iter().zip(references) {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            total += h.len().saturating_sub(n - 1);
            ref_total += r.len().saturating_sub(n - 1);
            matched += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
        if total == 0 && ref_total == 0 {
            continue;
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
        orders += 1;
    }
    if orders == 0 {
        return Ok(1.0);
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * (log_sum / orders as f64).exp())
}

/// Position-wise agreement: matching positions over the longer length,
/// summed across the corpus.
pub fn token_accuracy<X: Eq>(hypotheses: &[Vec<X>], references: &[Vec<X>]) -> Result<f64> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(Error::contract("token accuracy needs aligned nonempty corpora"));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hits += h.iter().zip(r).filter(|(a, b)| a == b).count();
        total += h.len().max(r.len());
    }
    Ok(if total == 0 { 1.0 } else { hits as f64 / total as f64 })
}
