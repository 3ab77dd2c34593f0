use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{MetricError, MetricValue};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BleuOptions {
    pub max_n: usize,
    /// Add one to numerator and denominator of every precision above
    /// unigrams.
    pub smoothing: bool,
}

impl Default for BleuOptions {
    fn default() -> Self {
        BleuOptions {
            max_n: 4,
            smoothing: false,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with clipped n-gram precisions and the brevity penalty
/// against the closest reference length (shorter reference on ties).
///
/// Orders longer than the candidate are left out of the geometric mean, so a
/// candidate identical to a short reference still scores 1. Tokens are
/// compared case-sensitively.
pub fn bleu<S: AsRef<str>>(
    candidate: &str,
    references: &[S],
    options: &BleuOptions,
) -> Result<MetricValue, MetricError> {
    if references.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let cand = tokenize(candidate).tokens().to_vec();
    let refs: Vec<Vec<String>> = references
        .iter()
        .map(|r| tokenize(r.as_ref()).tokens().to_vec())
        .collect();
    let c = cand.len();
    if c == 0 {
        return Ok(MetricValue::new("bleu", 0.0).with("brevity_penalty", 0.0));
    }

    let orders = options.max_n.max(1).min(c);
    let mut log_sum = 0.0;
    let mut zero = false;
    let mut value = MetricValue::new("bleu", 0.0);
    for n in 1..=orders {
        let cand_counts = ngram_counts(&cand, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &refs {
            for (gram, count) in ngram_counts(r, n) {
                let e = max_ref.entry(gram).or_insert(0);
                *e = (*e).max(count);
            }
        }
        let clipped: usize = cand_counts
            .iter()
            .map(|(g, &count)| count.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let total = c + 1 - n;
        let (num, den) = if options.smoothing && n > 1 {
            (clipped as f64 + 1.0, total as f64 + 1.0)
        } else {
            (clipped as f64, total as f64)
        };
        let p = num / den;
        value = value.with(&format!("p{n}"), p);
        if p == 0.0 {
            zero = true;
        } else {
            log_sum += p.ln();
        }
    }

    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(0);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    value.value = if zero {
        0.0
    } else {
        bp * (log_sum / orders as f64).exp()
    };
    Ok(value.with("brevity_penalty", bp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(c: &str, r: &[&str], max_n: usize) -> f64 {
        bleu(c, r, &BleuOptions { max_n, smoothing: false }).unwrap().value
    }

    #[test]
    fn clipped_unigram() {
        assert!((b("the the the", &["the cat"], 1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_and_empty() {
        assert_eq!(b("the cat sat on the mat", &["the cat sat on the mat"], 4), 1.0);
        assert_eq!(b("a b", &["a b"], 4), 1.0);
        assert_eq!(b("", &["a b"], 4), 0.0);
        let none: [&str; 0] = [];
        assert_eq!(bleu("a", &none, &BleuOptions::default()).unwrap_err(), MetricError::NoReferences);
    }

    #[test]
    fn missing_order_is_zero_unless_smoothed() {
        assert_eq!(b("a b c d", &["a x c y"], 2), 0.0);
        let s = bleu("a b c d", &["a x c y"], &BleuOptions { max_n: 2, smoothing: true }).unwrap();
        // p1 = 2/4, p2 = (0+1)/(3+1)
        assert!((s.value - (0.5f64 * 0.25).sqrt()).abs() < 1e-12);
    }
}
