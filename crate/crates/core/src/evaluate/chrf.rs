//! Character n-gram F-score.
//!
//! Whitespace is removed before counting. Each order n contributes an
//! F-beta score only when both strings have at least one n-gram of that
//! order; the result is the mean over those effective orders, so short
//! strings are not penalised for orders they cannot fill.

use std::collections::HashMap;

use thiserror::Error;

pub const DEFAULT_MAX_N: usize = 6;
pub const DEFAULT_BETA: f64 = 2.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ChrfError {
    #[error("empty reference")]
    EmptyReference,
    #[error("max_n must be at least 1")]
    BadOrder,
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for gram in chars.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn strip(text: &str) -> Vec<char> {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

/// chrF with the default order 6 and beta 2.
pub fn chrf_default(hypothesis: &str, reference: &str) -> Result<f64, ChrfError> {
    chrf(hypothesis, reference, DEFAULT_MAX_N, DEFAULT_BETA)
}

/// Score in [0, 1]. A reference that is empty after whitespace removal is
/// an error; an empty hypothesis scores 0.
pub fn chrf(hypothesis: &str, reference: &str, max_n: usize, beta: f64) -> Result<f64, ChrfError> {
    if max_n == 0 {
        return Err(ChrfError::BadOrder);
    }
    let refc = strip(reference);
    if refc.is_empty() {
        return Err(ChrfError::EmptyReference);
    }
    let hypc = strip(hypothesis);
    if hypc.is_empty() {
        return Ok(0.0);
    }
    let beta2 = beta * beta;
    let mut total = 0.0;
    let mut effective = 0usize;
    for n in 1..=max_n {
        let hyp = ngram_counts(&hypc, n);
        let reference = ngram_counts(&refc, n);
        let hyp_total: usize = hyp.values().sum();
        let ref_total: usize = reference.values().sum();
        if hyp_total == 0 || ref_total == 0 {
            continue;
        }
        effective += 1;
        let matched: usize = hyp
            .iter()
            .map(|(gram, &c)| c.min(reference.get(gram).copied().unwrap_or(0)))
            .sum();
        if matched == 0 {
            continue;
        }
        let precision = matched as f64 / hyp_total as f64;
        let recall = matched as f64 / ref_total as f64;
        total += (1.0 + beta2) * precision * recall / (beta2 * precision + recall);
    }
    if effective == 0 {
        return Ok(0.0);
    }
    Ok(total / effective as f64)
}
