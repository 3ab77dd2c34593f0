use std::collections::HashMap;

use super::{MetricError, MetricValue};
use crate::remote::Embedder;
use crate::text::tokenize;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b && a.iter().any(|x| *x != 0.0) {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Greedy matching: precision averages each candidate vector's best cosine
/// against the reference, recall the reverse. Negative similarities count as
/// zero.
pub fn greedy_match(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> MetricValue {
    match (candidate.is_empty(), reference.is_empty()) {
        (true, true) => return MetricValue::degenerate("bertscore"),
        (true, false) | (false, true) => return MetricValue::prf("bertscore", 0.0, 0.0),
        _ => {}
    }
    let best = |from: &[Vec<f64>], to: &[Vec<f64>]| -> f64 {
        from.iter()
            .map(|u| to.iter().map(|v| cosine(u, v)).fold(0.0, f64::max))
            .sum::<f64>()
            / from.len() as f64
    };
    MetricValue::prf("bertscore", best(candidate, reference), best(reference, candidate))
}

/// Token-level embedding similarity; tokens are embedded individually in one
/// batched call.
pub fn bertscore(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<MetricValue, MetricError> {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let mut unique: Vec<String> = c.tokens().iter().chain(r.tokens()).cloned().collect();
    unique.sort();
    unique.dedup();
    if unique.is_empty() {
        return Ok(greedy_match(&[], &[]));
    }
    let vectors = embedder
        .embed(&unique)
        .map_err(|e| MetricError::Unavailable(e.to_string()))?;
    let table: HashMap<&str, &Vec<f64>> =
        unique.iter().map(String::as_str).zip(vectors.iter()).collect();
    let lookup = |toks: &[String]| -> Vec<Vec<f64>> {
        toks.iter().map(|t| table[t.as_str()].clone()).collect()
    };
    Ok(greedy_match(&lookup(c.tokens()), &lookup(r.tokens())))
}
