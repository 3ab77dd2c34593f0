//! Language-model scoring backends.
//!
//! A [`Scorer`] returns natural-log probabilities for a token sequence that
//! continues a given prefix. Everything the compressors need (self-information,
//! perplexity, conditional perplexity) is derived from that one call, so the
//! built-in n-gram model and a remote logprob endpoint are interchangeable.

mod ngram;
mod remote;

use std::f64::consts::LN_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::remote::RemoteError;
use crate::text::{tokenize, TokenizedText};

pub use ngram::{fit_ngram, ModelError, NgramModel, UNK};
pub use remote::RemoteScorer;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("cannot score an empty text")]
    EmptyText,
    #[error("remote scorer failed: {0}")]
    Remote(#[from] RemoteError),
}

impl ScoreError {
    pub fn upstream_status(&self) -> Option<u16> {
        match self {
            ScoreError::Remote(e) => e.status(),
            ScoreError::EmptyText => None,
        }
    }
}

pub trait Scorer: Send + Sync {
    /// Natural-log probability of each of `tokens`, where token `i` is
    /// conditioned on `prefix` followed by `tokens[..i]`.
    fn logprobs(&self, tokens: &[String], prefix: &[String]) -> Result<Vec<f64>, ScoreError>;
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn logprobs(&self, tokens: &[String], prefix: &[String]) -> Result<Vec<f64>, ScoreError> {
        (**self).logprobs(tokens, prefix)
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn logprobs(&self, tokens: &[String], prefix: &[String]) -> Result<Vec<f64>, ScoreError> {
        (**self).logprobs(tokens, prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    /// Natural log, `<= 0`.
    pub logprob: f64,
    /// `-logprob / ln 2`, in bits.
    pub self_information: f64,
}

impl TokenScore {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        let logprob = logprob.min(0.0);
        TokenScore {
            token: token.into(),
            logprob,
            self_information: to_bits(logprob),
        }
    }
}

pub fn to_bits(logprob: f64) -> f64 {
    (-logprob).max(0.0) / LN_2
}

pub fn token_logprobs(
    scorer: &dyn Scorer,
    text: &TokenizedText,
) -> Result<Vec<TokenScore>, ScoreError> {
    if text.is_empty() {
        return Err(ScoreError::EmptyText);
    }
    let lps = scorer.logprobs(text.tokens(), &[])?;
    Ok(text
        .tokens()
        .iter()
        .zip(lps)
        .map(|(t, lp)| TokenScore::new(t.clone(), lp))
        .collect())
}

/// Self-information in bits of each token continuing `prefix`. Empty input
/// yields an empty vector.
pub fn self_information(
    scorer: &dyn Scorer,
    tokens: &[String],
    prefix: &[String],
) -> Result<Vec<f64>, ScoreError> {
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    Ok(scorer
        .logprobs(tokens, prefix)?
        .into_iter()
        .map(to_bits)
        .collect())
}

/// `exp` of the mean negative log-likelihood of `tokens` after `prefix`.
pub fn perplexity_of(
    scorer: &dyn Scorer,
    tokens: &[String],
    prefix: &[String],
) -> Result<f64, ScoreError> {
    if tokens.is_empty() {
        return Err(ScoreError::EmptyText);
    }
    let lps = scorer.logprobs(tokens, prefix)?;
    Ok(perplexity_from_logprobs(&lps))
}

pub(crate) fn perplexity_from_logprobs(lps: &[f64]) -> f64 {
    if lps.is_empty() {
        return 1.0;
    }
    let first = lps[0];
    let ppl = if lps.iter().all(|&lp| lp == first) {
        (-first).exp()
    } else {
        (-lps.iter().sum::<f64>() / lps.len() as f64).exp()
    };
    // exp(ln v) is not always v in floating point; integer-valued
    // perplexities (uniform models) are reported exactly.
    let nearest = ppl.round();
    if nearest >= 1.0 && (ppl - nearest).abs() <= 1e-12 * nearest {
        nearest
    } else {
        ppl
    }
}

/// Perplexity of `text`, optionally with `condition` prepended to every
/// token's context.
pub fn perplexity(
    scorer: &dyn Scorer,
    text: &TokenizedText,
    condition: Option<&str>,
) -> Result<f64, ScoreError> {
    let prefix = condition
        .map(|c| tokenize(c).tokens().to_vec())
        .unwrap_or_default();
    perplexity_of(scorer, text.tokens(), &prefix)
}

/// Multiplies every logprob of an inner scorer by a positive factor, which
/// scales all self-information values by the same factor.
pub struct ScaledScorer<S> {
    inner: S,
    factor: f64,
}

impl<S: Scorer> ScaledScorer<S> {
    pub fn new(inner: S, factor: f64) -> Self {
        assert!(factor > 0.0, "scale factor must be positive");
        ScaledScorer { inner, factor }
    }
}

impl<S: Scorer> Scorer for ScaledScorer<S> {
    fn logprobs(&self, tokens: &[String], prefix: &[String]) -> Result<Vec<f64>, ScoreError> {
        Ok(self
            .inner
            .logprobs(tokens, prefix)?
            .into_iter()
            .map(|lp| lp * self.factor)
            .collect())
    }
}
