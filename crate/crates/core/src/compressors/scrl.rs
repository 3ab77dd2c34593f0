//! SCRL-style token deletion with a linear keep policy.
//!
//! Each token gets a keep probability `sigmoid(w . phi(token))`. At inference
//! the `k` most probable tokens are kept (no sampling), where `k` is the ratio
//! target further capped by `max_length`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{top_k, CompressError};
use crate::contract::{CompressionRequest, CompressionResult, TraceEntry};
use crate::scorer::{self_information, Scorer};
use crate::text::{is_punctuation, is_stopword, keep_count, tokenize, TokenizedText};

pub const FEATURE_COUNT: usize = 7;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "self_information",
    "is_stopword",
    "is_punctuation",
    "relative_position",
    "token_length",
    "is_capitalized",
    "bias",
];

pub type Features = [f64; FEATURE_COUNT];

const DEFAULT_WEIGHTS: Features = [1.0, -1.0, -1.5, 0.0, 0.5, 0.5, 1.0];

/// Per-token feature vectors. Self-information is scaled by 1/10 and token
/// length (in chars, capped at 20) by 1/10 so every feature stays near unit
/// range.
pub fn features(text: &TokenizedText, self_info: &[f64]) -> Vec<Features> {
    let n = text.len();
    text.tokens()
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            let position = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let chars = tok.chars().count().min(20) as f64;
            let capitalized = tok.chars().next().is_some_and(char::is_uppercase);
            [
                self_info[i] / 10.0,
                f64::from(u8::from(is_stopword(tok))),
                f64::from(u8::from(is_punctuation(tok))),
                position,
                chars / 10.0,
                f64::from(u8::from(capitalized)),
                1.0,
            ]
        })
        .collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Keeps probabilities strictly inside (0, 1) even when the logistic
/// saturates in floating point.
pub(crate) fn open_unit(p: f64) -> f64 {
    p.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BTreeMap<String, f64>", try_from = "BTreeMap<String, f64>")]
pub struct ScrlPolicy {
    pub weights: Features,
}

impl Default for ScrlPolicy {
    fn default() -> Self {
        ScrlPolicy {
            weights: DEFAULT_WEIGHTS,
        }
    }
}

impl ScrlPolicy {
    pub fn zero() -> Self {
        ScrlPolicy {
            weights: [0.0; FEATURE_COUNT],
        }
    }

    pub fn logit(&self, phi: &Features) -> f64 {
        self.weights.iter().zip(phi).map(|(w, x)| w * x).sum()
    }

    pub fn keep_probability(&self, phi: &Features) -> f64 {
        open_unit(sigmoid(self.logit(phi)))
    }

    pub fn weight(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.weights[i])
    }
}

impl From<ScrlPolicy> for BTreeMap<String, f64> {
    fn from(p: ScrlPolicy) -> Self {
        FEATURE_NAMES
            .iter()
            .zip(p.weights)
            .map(|(n, w)| (n.to_string(), w))
            .collect()
    }
}

impl TryFrom<BTreeMap<String, f64>> for ScrlPolicy {
    type Error = String;

    /// Missing features keep their default weight.
    fn try_from(map: BTreeMap<String, f64>) -> Result<Self, Self::Error> {
        let mut weights = DEFAULT_WEIGHTS;
        for (name, w) in map {
            let i = FEATURE_NAMES
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| format!("unknown SCRL feature {name:?}"))?;
            if !w.is_finite() {
                return Err(format!("SCRL weight {name:?} must be finite"));
            }
            weights[i] = w;
        }
        Ok(ScrlPolicy { weights })
    }
}

pub fn compress_scrl(
    req: &CompressionRequest,
    policy: &ScrlPolicy,
    scorer: &dyn Scorer,
) -> Result<CompressionResult, CompressError> {
    let text = tokenize(&req.text);
    let n = text.len();
    if let Some(max_length) = req.max_length {
        if max_length > n {
            return Err(CompressError::invalid(
                "max_length",
                format!("{} (max_length {max_length} > {n} tokens)", super::SCRL_MAX_LENGTH_RULE),
            ));
        }
    }
    let si = self_information(scorer, text.tokens(), &[])?;
    let phi = features(&text, &si);
    let logits: Vec<f64> = phi.iter().map(|f| policy.logit(f)).collect();
    let k = keep_count(n, req.ratio).min(req.max_length.unwrap_or(usize::MAX));
    let kept = top_k(&logits, k);

    let order: Vec<usize> = (0..n).filter(|&i| kept[i]).collect();
    let trace = text
        .tokens()
        .iter()
        .zip(&logits)
        .zip(&kept)
        .map(|((t, &z), &k)| TraceEntry {
            token: t.clone(),
            score: open_unit(sigmoid(z)),
            kept: k,
        })
        .collect();
    let mut notes = Vec::new();
    if k < keep_count(n, req.ratio) {
        notes.push(format!("max_length {k} binds below the ratio target"));
    }
    Ok(CompressionResult::assemble(
        text.render(&order),
        n,
        order.len(),
        trace,
        order,
        notes,
    ))
}
