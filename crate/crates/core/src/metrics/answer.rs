use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{MetricError, MetricValue};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    /// Numeric answer, after a `####` marker when present.
    Gsm8k,
    Boolean,
    MultipleChoice,
    #[default]
    Freeform,
}

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").expect("number pattern"));
static BOOLEAN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(true|false)\b").expect("boolean pattern"));
static CHOICE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(([A-Za-z])\)").expect("choice pattern"));

fn last_number(text: &str) -> Option<String> {
    NUMBER
        .find_iter(text)
        .last()
        .map(|m| m.as_str().replace(',', ""))
}

/// Pulls the answer out of model output; an empty string when nothing
/// matches.
pub fn extract_answer(output: &str, format: AnswerFormat) -> String {
    match format {
        AnswerFormat::Gsm8k => {
            let tail = output.rsplit_once("####").map_or(output, |(_, t)| t);
            last_number(tail).or_else(|| last_number(output)).unwrap_or_default()
        }
        AnswerFormat::Boolean => BOOLEAN
            .captures_iter(output)
            .last()
            .map(|c| {
                if c[1].eq_ignore_ascii_case("true") {
                    "True".to_string()
                } else {
                    "False".to_string()
                }
            })
            .unwrap_or_default(),
        AnswerFormat::MultipleChoice => CHOICE
            .captures_iter(output)
            .last()
            .map(|c| c[1].to_ascii_uppercase())
            .unwrap_or_default(),
        AnswerFormat::Freeform => output.trim().to_string(),
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn as_number(s: &str) -> Option<f64> {
    let cleaned = s.replace(',', "");
    let cleaned = cleaned.strip_prefix('$').unwrap_or(&cleaned);
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Exact match after whitespace/case normalization, with numbers compared by
/// value. An empty prediction never matches.
pub fn answer_matches(prediction: &str, gold: &str) -> bool {
    let p = normalize(prediction);
    let g = normalize(gold);
    if p.is_empty() {
        return false;
    }
    match (as_number(&p), as_number(&g)) {
        (Some(a), Some(b)) => a == b,
        _ => p == g,
    }
}

/// Fraction of predictions matching their gold answer.
pub fn accuracy<P: AsRef<str>, G: AsRef<str>>(
    predictions: &[P],
    golds: &[G],
) -> Result<MetricValue, MetricError> {
    if predictions.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Ok(MetricValue::degenerate("accuracy"));
    }
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| answer_matches(p.as_ref(), g.as_ref()))
        .count();
    Ok(MetricValue::new("accuracy", correct as f64 / predictions.len() as f64)
        .with("correct", correct as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extraction_rules() {
        assert_eq!(extract_answer("so the total is 6. #### 6", AnswerFormat::Gsm8k), "6");
        assert_eq!(extract_answer("3 apples and 1,200 pears", AnswerFormat::Gsm8k), "1200");
        assert_eq!(extract_answer("The statement is False.", AnswerFormat::Boolean), "False");
        assert_eq!(extract_answer("true, then FALSE", AnswerFormat::Boolean), "False");
        assert_eq!(extract_answer("I choose (B) because", AnswerFormat::MultipleChoice), "B");
        assert_eq!(extract_answer("  Paris \n", AnswerFormat::Freeform), "Paris");
        assert_eq!(extract_answer("no idea", AnswerFormat::Gsm8k), "");
        assert_eq!(extract_answer("maybe", AnswerFormat::Boolean), "");
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&["6"], &["6"]).unwrap().value, 1.0);
        assert_eq!(accuracy(&["6", "7"], &["6", "8"]).unwrap().value, 0.5);
        assert_eq!(accuracy(&["6.0"], &["6"]).unwrap().value, 1.0);
        assert_eq!(accuracy(&[" TRUE "], &["True"]).unwrap().value, 1.0);
        assert_eq!(accuracy(&[""], &[""]).unwrap().value, 0.0);
        assert!(accuracy(&["1"], &["1", "2"]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(pairs in prop::collection::vec(("[0-3]", "[0-3]"), 1..12), seed in any::<u64>()) {
            let (p, g): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
            let mut idx: Vec<usize> = (0..p.len()).collect();
            // deterministic shuffle from the seed
            idx.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
            let ps: Vec<&String> = idx.iter().map(|&i| &p[i]).collect();
            let gs: Vec<&String> = idx.iter().map(|&i| &g[i]).collect();
            prop_assert_eq!(accuracy(&p, &g).unwrap().value, accuracy(&ps.iter().map(|s| s.as_str()).collect::<Vec<_>>(), &gs.iter().map(|s| s.as_str()).collect::<Vec<_>>()).unwrap().value);
        }
    }
}
