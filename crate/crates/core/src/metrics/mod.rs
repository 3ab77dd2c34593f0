//! Text-comparison metrics and answer accuracy.

mod answer;
mod bertscore;
mod bleu;
mod edit;
mod rouge;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::remote::Embedder;

pub use answer::{accuracy, answer_matches, extract_answer, AnswerFormat};
pub use bertscore::{bertscore, greedy_match};
pub use bleu::{bleu, BleuOptions};
pub use edit::{edit_distance, levenshtein, EditUnit};
pub use rouge::{lcs_len, rouge, token_f1, RougeVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub components: BTreeMap<String, f64>,
    /// Both sides were empty; `value` is 1 by convention.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl MetricValue {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        MetricValue {
            name: name.into(),
            value,
            components: BTreeMap::new(),
            degenerate: false,
        }
    }

    pub fn with(mut self, component: &str, value: f64) -> Self {
        self.components.insert(component.to_string(), value);
        self
    }

    pub(crate) fn degenerate(name: impl Into<String>) -> Self {
        MetricValue {
            degenerate: true,
            ..MetricValue::new(name, 1.0)
        }
    }

    /// Precision/recall/F1 triple with F1 as the value.
    pub(crate) fn prf(name: impl Into<String>, precision: f64, recall: f64) -> Self {
        MetricValue::new(name, f1(precision, recall))
            .with("precision", precision)
            .with("recall", recall)
    }
}

pub(crate) fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("at least one reference is required")]
    NoReferences,
    #[error("{predictions} predictions but {golds} gold answers")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("metric unavailable: {0}")]
    Unavailable(String),
    #[error("unknown metric {0:?}")]
    Unknown(String),
}

/// Metrics a run can request by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Bleu,
    Rouge1,
    Rouge2,
    RougeL,
    TokenF1,
    EditDistance,
    BertScore,
    Accuracy,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::Bleu,
        MetricKind::Rouge1,
        MetricKind::Rouge2,
        MetricKind::RougeL,
        MetricKind::TokenF1,
        MetricKind::EditDistance,
        MetricKind::BertScore,
        MetricKind::Accuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Bleu => "bleu",
            MetricKind::Rouge1 => "rouge1",
            MetricKind::Rouge2 => "rouge2",
            MetricKind::RougeL => "rougeL",
            MetricKind::TokenF1 => "token_f1",
            MetricKind::EditDistance => "edit_distance",
            MetricKind::BertScore => "bertscore",
            MetricKind::Accuracy => "accuracy",
        }
    }

    /// Compares a candidate text with a reference text.
    pub fn score_pair(
        self,
        candidate: &str,
        reference: &str,
        embedder: Option<&dyn Embedder>,
    ) -> Result<MetricValue, MetricError> {
        match self {
            MetricKind::Bleu => bleu(candidate, &[reference], &BleuOptions::default()),
            MetricKind::Rouge1 => Ok(rouge(candidate, reference, RougeVariant::N(1))),
            MetricKind::Rouge2 => Ok(rouge(candidate, reference, RougeVariant::N(2))),
            MetricKind::RougeL => Ok(rouge(candidate, reference, RougeVariant::L)),
            MetricKind::TokenF1 => Ok(token_f1(candidate, reference)),
            MetricKind::EditDistance => Ok(edit_distance(candidate, reference, EditUnit::Token)),
            MetricKind::BertScore => match embedder {
                Some(e) => bertscore(candidate, reference, e),
                None => Err(MetricError::Unavailable("no embedding endpoint configured".into())),
            },
            MetricKind::Accuracy => Ok(MetricValue::new(
                "accuracy",
                f64::from(u8::from(answer_matches(candidate, reference))),
            )),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "bleu" => MetricKind::Bleu,
            "rouge1" => MetricKind::Rouge1,
            "rouge2" => MetricKind::Rouge2,
            "rougel" => MetricKind::RougeL,
            "tokenf1" | "f1" => MetricKind::TokenF1,
            "editdistance" | "levenshtein" => MetricKind::EditDistance,
            "bertscore" => MetricKind::BertScore,
            "accuracy" | "acc" => MetricKind::Accuracy,
            _ => return Err(MetricError::Unknown(s.to_string())),
        })
    }
}

impl Serialize for MetricKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for MetricKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
