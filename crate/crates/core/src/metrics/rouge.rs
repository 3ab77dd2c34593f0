use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MetricValue;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    N(usize),
    L,
}

fn lowered(text: &str) -> Vec<String> {
    tokenize(text).tokens().iter().map(|t| t.to_lowercase()).collect()
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn counts<T: std::hash::Hash + Eq>(items: impl Iterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

fn overlap<T: std::hash::Hash + Eq>(a: &HashMap<T, usize>, b: &HashMap<T, usize>) -> usize {
    a.iter()
        .map(|(k, &n)| n.min(b.get(k).copied().unwrap_or(0)))
        .sum()
}

/// F1 from an overlap count and the two sizes; empty-vs-empty is degenerate.
fn scored(name: String, hits: usize, cand: usize, reference: usize) -> MetricValue {
    match (cand, reference) {
        (0, 0) => MetricValue::degenerate(name),
        (0, _) | (_, 0) => MetricValue::prf(name, 0.0, 0.0),
        _ => MetricValue::prf(name, hits as f64 / cand as f64, hits as f64 / reference as f64),
    }
}

/// ROUGE-N or ROUGE-L F1 over lowercased tokens, with precision and recall
/// as components.
pub fn rouge(candidate: &str, reference: &str, variant: RougeVariant) -> MetricValue {
    let c = lowered(candidate);
    let r = lowered(reference);
    match variant {
        RougeVariant::N(n) => {
            let n = n.max(1);
            let name = format!("rouge{n}");
            if c.is_empty() || r.is_empty() {
                return scored(name, 0, c.len(), r.len());
            }
            let cg = counts(c.windows(n));
            let rg = counts(r.windows(n));
            let (cn, rn) = (c.len().saturating_sub(n - 1), r.len().saturating_sub(n - 1));
            scored(name, overlap(&cg, &rg), cn, rn)
        }
        RougeVariant::L => scored("rougeL".into(), lcs_len(&c, &r), c.len(), r.len()),
    }
}

/// F1 over the multiset of lowercased tokens.
pub fn token_f1(candidate: &str, reference: &str) -> MetricValue {
    let c = lowered(candidate);
    let r = lowered(reference);
    let hits = overlap(&counts(c.iter()), &counts(r.iter()));
    scored("token_f1".into(), hits, c.len(), r.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rouge_l_example() {
        let v = rouge("the cat sat", "the cat", RougeVariant::L);
        assert!((v.components["precision"] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(v.components["recall"], 1.0);
        assert!((v.value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rouge_edges() {
        assert_eq!(rouge("a b c", "a b c", RougeVariant::N(2)).value, 1.0);
        assert_eq!(rouge("a b", "c d", RougeVariant::L).value, 0.0);
        let both = rouge("", " ", RougeVariant::L);
        assert!(both.degenerate && both.value == 1.0);
        assert_eq!(rouge("a", "", RougeVariant::N(1)).value, 0.0);
        // tokens but no bigrams on one side
        assert_eq!(rouge("a", "a b", RougeVariant::N(2)).value, 0.0);
    }

    #[test]
    fn token_f1_examples() {
        let v = token_f1("a b", "b c");
        assert_eq!((v.components["precision"], v.components["recall"], v.value), (0.5, 0.5, 0.5));
        assert_eq!(token_f1("x y", "x y").value, 1.0);
        assert_eq!(token_f1("x", "y").value, 0.0);
        assert!(token_f1("", "").degenerate);
    }

    #[test]
    fn lcs_small() {
        assert_eq!(lcs_len(b"abcbdab", b"bdcaba"), 4);
        assert_eq!(lcs_len::<u8>(b"", b"abc"), 0);
    }
}
