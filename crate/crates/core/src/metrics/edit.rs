use serde::{Deserialize, Serialize};

use super::MetricValue;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditUnit {
    #[default]
    Char,
    Token,
}

/// Unit-cost Levenshtein distance, two-row dynamic program.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Distance as the value, `1 - d / max(|a|, |b|)` as the `similarity`
/// component (1 when both are empty).
pub fn edit_distance(a: &str, b: &str, unit: EditUnit) -> MetricValue {
    let (d, longest) = match unit {
        EditUnit::Char => {
            let a: Vec<char> = a.chars().collect();
            let b: Vec<char> = b.chars().collect();
            (levenshtein(&a, &b), a.len().max(b.len()))
        }
        EditUnit::Token => {
            let ta = tokenize(a);
            let tb = tokenize(b);
            (levenshtein(ta.tokens(), tb.tokens()), ta.len().max(tb.len()))
        }
    };
    let similarity = if longest == 0 {
        1.0
    } else {
        1.0 - d as f64 / longest as f64
    };
    MetricValue::new("edit_distance", d as f64).with("similarity", similarity)
}
