use std::collections::HashMap;

use thiserror::Error;

use super::{ScoreError, Scorer};
use crate::text::tokenize;

/// Reserved vocabulary entry for tokens never seen in training.
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("training corpus contains no tokens")]
    EmptyCorpus,
    #[error("n-gram order must be 1, 2 or 3 (got {0})")]
    InvalidOrder(usize),
    #[error("smoothing constant must be positive and finite (got {0})")]
    InvalidSmoothing(f64),
    #[error("cache weight must be non-negative and finite (got {0})")]
    InvalidCacheWeight(f64),
}

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Add-k smoothed n-gram model of order 1 to 3.
///
/// Counts are kept for every context length below the order, and a token is
/// scored under the longest observed context (shorter contexts near the
/// start of a text and after unseen histories):
///
/// `p(t | c) = (count(c, t) + k) / (total(c) + k * |V|)`.
///
/// When scoring with a prefix, the prefix supplies the history and also acts
/// as a unigram cache: each prefix token adds `cache_weight` pseudo-counts,
/// so tokens already present in the conditioning text become more likely.
/// The distribution stays normalized either way.
#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    smoothing_k: f64,
    cache_weight: f64,
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
    contexts: HashMap<Vec<u32>, ContextCounts>,
}

/// Trains an add-k model on `corpus`; each entry is tokenized on its own, so
/// contexts never span two entries.
pub fn fit_ngram<S: AsRef<str>>(
    corpus: &[S],
    order: usize,
    smoothing_k: f64,
) -> Result<NgramModel, ModelError> {
    let mut model = NgramModel::empty(order, smoothing_k)?;
    let mut seen_any = false;
    for doc in corpus {
        let toks = tokenize(doc.as_ref());
        let ids: Vec<u32> = toks.tokens().iter().map(|t| model.intern(t)).collect();
        for (i, &id) in ids.iter().enumerate() {
            seen_any = true;
            for len in 0..order.min(i + 1) {
                let ctx = ids[i - len..i].to_vec();
                let entry = model.contexts.entry(ctx).or_default();
                entry.total += 1;
                *entry.next.entry(id).or_insert(0) += 1;
            }
        }
    }
    if !seen_any {
        return Err(ModelError::EmptyCorpus);
    }
    Ok(model)
}

impl NgramModel {
    fn empty(order: usize, smoothing_k: f64) -> Result<Self, ModelError> {
        if !(1..=3).contains(&order) {
            return Err(ModelError::InvalidOrder(order));
        }
        if !(smoothing_k > 0.0 && smoothing_k.is_finite()) {
            return Err(ModelError::InvalidSmoothing(smoothing_k));
        }
        let mut model = NgramModel {
            order,
            smoothing_k,
            cache_weight: 1.0,
            ids: HashMap::new(),
            tokens: Vec::new(),
            contexts: HashMap::new(),
        };
        model.intern(UNK);
        Ok(model)
    }

    /// A model that assigns `1 / |V|` to every token of `vocab` (plus UNK).
    pub fn uniform<S: AsRef<str>>(vocab: &[S]) -> Self {
        let mut model = NgramModel::empty(1, 1.0).expect("valid parameters");
        for t in vocab {
            model.intern(t.as_ref());
        }
        model
    }

    pub fn with_cache_weight(mut self, weight: f64) -> Result<Self, ModelError> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(ModelError::InvalidCacheWeight(weight));
        }
        self.cache_weight = weight;
        Ok(self)
    }

    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.ids.insert(token.to_string(), id);
        self.tokens.push(token.to_string());
        id
    }

    fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(0)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    /// Vocabulary size, including [`UNK`].
    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    /// Every context with at least one training observation.
    pub fn observed_contexts(&self) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = self
            .contexts
            .iter()
            .filter(|(_, c)| c.total > 0)
            .map(|(ctx, _)| ctx.iter().map(|&id| self.tokens[id as usize].clone()).collect())
            .collect();
        out.sort();
        out
    }

    fn counts_for(&self, history: &[u32]) -> Option<&ContextCounts> {
        let max_len = (self.order - 1).min(history.len());
        (0..=max_len).rev().find_map(|len| {
            self.contexts
                .get(&history[history.len() - len..])
                .filter(|c| c.total > 0)
        })
    }

    fn prob_ids(&self, history: &[u32], token: u32, cache: &Cache) -> f64 {
        let (count, total) = match self.counts_for(history) {
            Some(c) => (c.next.get(&token).copied().unwrap_or(0), c.total),
            None => (0, 0),
        };
        let v = self.tokens.len() as f64;
        let num = count as f64 + self.smoothing_k + self.cache_weight * cache.count(token);
        let den = total as f64 + self.smoothing_k * v + self.cache_weight * cache.total as f64;
        num / den
    }

    /// `p(token | context)` without any cache. Unknown tokens map to [`UNK`].
    pub fn prob(&self, context: &[&str], token: &str) -> f64 {
        let history: Vec<u32> = context.iter().map(|t| self.id(t)).collect();
        self.prob_ids(&history, self.id(token), &Cache::default())
    }
}

#[derive(Default)]
struct Cache {
    counts: HashMap<u32, u64>,
    total: u64,
}

impl Cache {
    fn count(&self, id: u32) -> f64 {
        self.counts.get(&id).copied().unwrap_or(0) as f64
    }
}

impl Scorer for NgramModel {
    fn logprobs(&self, tokens: &[String], prefix: &[String]) -> Result<Vec<f64>, ScoreError> {
        let mut cache = Cache::default();
        let mut history: Vec<u32> = Vec::with_capacity(prefix.len() + tokens.len());
        for t in prefix {
            let id = self.id(t);
            *cache.counts.entry(id).or_insert(0) += 1;
            cache.total += 1;
            history.push(id);
        }
        let mut out = Vec::with_capacity(tokens.len());
        for t in tokens {
            let id = self.id(t);
            out.push(self.prob_ids(&history, id, &cache).ln());
            history.push(id);
        }
        Ok(out)
    }
}
