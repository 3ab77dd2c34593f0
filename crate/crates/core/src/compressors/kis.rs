//! Keep-it-Simple-style abstractive compression by generate and rerank.
//!
//! A generator proposes several shorter rewrites of the text; each candidate
//! is scored for fluency, salience and simplicity and the best one is
//! returned.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{top_k, CompressError};
use crate::contract::{CompressionRequest, CompressionResult, TraceEntry};
use crate::remote::{GenerationRequest, TextGenerator};
use crate::scorer::{perplexity_from_logprobs, to_bits, Scorer};
use crate::text::{keep_count, tokenize, TokenizedText};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KisWeights {
    pub fluency: f64,
    pub salience: f64,
    pub simplicity: f64,
}

impl Default for KisWeights {
    fn default() -> Self {
        KisWeights {
            fluency: 1.0 / 3.0,
            salience: 1.0 / 3.0,
            simplicity: 1.0 / 3.0,
        }
    }
}

impl KisWeights {
    pub fn validate(&self) -> Result<(), CompressError> {
        let parts = [self.fluency, self.salience, self.simplicity];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CompressError::invalid("kis.weights", "weights must be non-negative"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CompressError::invalid(
                "kis.weights",
                format!("weights must sum to 1 (got {sum})"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KisConfig {
    pub candidates: usize,
    pub temperature: f64,
    pub weights: KisWeights,
    /// Share of source tokens, by self-information, that count as keywords.
    pub salience_fraction: f64,
}

impl Default for KisConfig {
    fn default() -> Self {
        KisConfig {
            candidates: 4,
            temperature: 0.7,
            weights: KisWeights::default(),
            salience_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KisReward {
    /// `min(1, ppl(source) / ppl(candidate))`.
    pub fluency: f64,
    /// Fraction of source keywords present in the candidate.
    pub salience: f64,
    /// `max(0, 1 - |candidate ratio - requested ratio|)`.
    pub simplicity: f64,
    pub total: f64,
}

impl KisReward {
    pub fn new(fluency: f64, salience: f64, simplicity: f64, weights: &KisWeights) -> Self {
        KisReward {
            fluency,
            salience,
            simplicity,
            total: weights.fluency * fluency
                + weights.salience * salience
                + weights.simplicity * simplicity,
        }
    }
}

/// Index of the largest value, ties to the earliest.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Everything about the source the reward needs.
pub struct KisSource {
    text: TokenizedText,
    self_info: Vec<f64>,
    perplexity: f64,
    keywords: HashSet<String>,
}

impl KisSource {
    pub fn new(
        text: TokenizedText,
        scorer: &dyn Scorer,
        salience_fraction: f64,
    ) -> Result<Self, CompressError> {
        let lps = scorer.logprobs(text.tokens(), &[])?;
        let self_info: Vec<f64> = lps.iter().copied().map(to_bits).collect();
        let n_keys = (salience_fraction.clamp(0.0, 1.0) * text.len() as f64).ceil() as usize;
        let keywords = text
            .tokens()
            .iter()
            .zip(top_k(&self_info, n_keys))
            .filter(|(_, k)| *k)
            .map(|(t, _)| t.to_lowercase())
            .collect();
        Ok(KisSource {
            perplexity: perplexity_from_logprobs(&lps),
            text,
            self_info,
            keywords,
        })
    }

    pub fn keywords(&self) -> &HashSet<String> {
        &self.keywords
    }

    pub fn reward(
        &self,
        candidate: &TokenizedText,
        ratio: f64,
        scorer: &dyn Scorer,
        weights: &KisWeights,
    ) -> Result<KisReward, CompressError> {
        let lps = scorer.logprobs(candidate.tokens(), &[])?;
        let ppl = perplexity_from_logprobs(&lps);
        let fluency = (self.perplexity / ppl).min(1.0);
        let salience = if self.keywords.is_empty() {
            1.0
        } else {
            let present: HashSet<String> =
                candidate.tokens().iter().map(|t| t.to_lowercase()).collect();
            self.keywords.intersection(&present).count() as f64 / self.keywords.len() as f64
        };
        let candidate_ratio = 1.0 - candidate.len() as f64 / self.text.len() as f64;
        let simplicity = (1.0 - (candidate_ratio - ratio).abs()).max(0.0);
        Ok(KisReward::new(fluency, salience, simplicity, weights))
    }
}

fn system_prompt(target_words: usize) -> String {
    format!(
        "Rewrite the user's text so it is shorter and simpler while keeping its key facts. \
         Use at most {target_words} words. Reply with the rewritten text only."
    )
}

pub fn compress_kis(
    req: &CompressionRequest,
    generator: &dyn TextGenerator,
    scorer: &dyn Scorer,
    config: &KisConfig,
) -> Result<CompressionResult, CompressError> {
    config.weights.validate()?;
    let text = tokenize(&req.text);
    let n = text.len();
    if let Some(max_length) = req.max_length {
        if max_length < n {
            return Err(CompressError::invalid(
                "max_length",
                format!("{} (max_length {max_length} < {n} tokens)", super::KIS_MAX_LENGTH_RULE),
            ));
        }
    }
    if n == 0 {
        return Ok(CompressionResult::assemble(String::new(), 0, 0, Vec::new(), Vec::new(), Vec::new()));
    }
    let target = keep_count(n, req.ratio);
    let gen_req = GenerationRequest {
        system: Some(system_prompt(target)),
        prompt: req.text.clone(),
        n: config.candidates.max(1),
        temperature: config.temperature,
        max_tokens: Some(u32::try_from(2 * target + 16).unwrap_or(u32::MAX)),
        seed: req.seed,
    };
    let raw = generator.generate(&gen_req).map_err(CompressError::Generator)?;
    let candidates: Vec<TokenizedText> = raw
        .iter()
        .map(|c| tokenize(c.trim()))
        .filter(|c| !c.is_empty())
        .collect();
    if candidates.is_empty() {
        return Err(CompressError::NoCandidates);
    }

    let source = KisSource::new(text, scorer, config.salience_fraction)?;
    let rewards = candidates
        .iter()
        .map(|c| source.reward(c, req.ratio, scorer, &config.weights))
        .collect::<Result<Vec<_>, _>>()?;
    let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
    let best = argmax(&totals).ok_or(CompressError::NoCandidates)?;
    let chosen = &candidates[best];

    let mut available: HashMap<&str, usize> = HashMap::new();
    for t in chosen.tokens() {
        *available.entry(t.as_str()).or_insert(0) += 1;
    }
    let trace = source
        .text
        .tokens()
        .iter()
        .zip(&source.self_info)
        .map(|(t, &s)| {
            let kept = match available.get_mut(t.as_str()) {
                Some(c) if *c > 0 => {
                    *c -= 1;
                    true
                }
                _ => false,
            };
            TraceEntry {
                token: t.clone(),
                score: s,
                kept,
            }
        })
        .collect();
    let r = rewards[best];
    let notes = vec![format!(
        "candidate {best} of {}: fluency {:.4}, salience {:.4}, simplicity {:.4}, reward {:.4}",
        candidates.len(),
        r.fluency,
        r.salience,
        r.simplicity,
        r.total
    )];
    Ok(CompressionResult::assemble(
        chosen.detokenize(),
        n,
        chosen.len(),
        trace,
        Vec::new(),
        notes,
    ))
}
