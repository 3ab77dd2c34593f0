//! Selective Context: drop the least informative lexical units.
//!
//! Tokens are scored by self-information, grouped into lexical units, and the
//! units with the highest total surprisal are kept until the token budget
//! `ceil((1 - ratio) * L)` is met. The first unit that does not fit whole is
//! trimmed to its most informative tokens so the budget is met exactly.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{top_k, CompressError};
use crate::contract::{CompressionRequest, CompressionResult, TraceEntry};
use crate::scorer::{self_information, Scorer};
use crate::text::{is_punctuation, is_sentence_end, is_stopword, keep_count, tokenize, TokenizedText};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Token,
    /// Runs of content words between punctuation and stopwords; each
    /// punctuation mark and stopword is a unit of its own.
    #[default]
    Phrase,
    Sentence,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectiveContextConfig {
    pub granularity: Granularity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexicalUnit {
    pub token_indices: Range<usize>,
    pub text: String,
    /// Sum of member self-information, in bits.
    pub surprisal: f64,
}

fn unit_ranges(text: &TokenizedText, granularity: Granularity) -> Vec<Range<usize>> {
    let n = text.len();
    let toks = text.tokens();
    let mut ranges = Vec::new();
    match granularity {
        Granularity::Token => ranges.extend((0..n).map(|i| i..i + 1)),
        Granularity::Phrase => {
            let mut start = 0;
            for i in 0..n {
                if is_punctuation(&toks[i]) || is_stopword(&toks[i]) {
                    if start < i {
                        ranges.push(start..i);
                    }
                    ranges.push(i..i + 1);
                    start = i + 1;
                }
            }
            if start < n {
                ranges.push(start..n);
            }
        }
        Granularity::Sentence => {
            let mut start = 0;
            for i in 0..n {
                let ends = is_sentence_end(&toks[i]) || text.gap_after(i).contains('\n');
                if ends || i + 1 == n {
                    ranges.push(start..i + 1);
                    start = i + 1;
                }
            }
        }
    }
    ranges
}

/// Groups tokens into units that partition the sequence.
pub fn lexical_units(
    text: &TokenizedText,
    self_info: &[f64],
    granularity: Granularity,
) -> Vec<LexicalUnit> {
    unit_ranges(text, granularity)
        .into_iter()
        .map(|r| {
            let idx: Vec<usize> = r.clone().collect();
            LexicalUnit {
                text: text.render(&idx),
                surprisal: self_info[r.clone()].iter().sum(),
                token_indices: r,
            }
        })
        .collect()
}

/// Keeps the highest-surprisal units (ties to earlier units) until exactly
/// `keep` tokens are selected.
pub(crate) fn select_units(units: &[LexicalUnit], self_info: &[f64], keep: usize) -> Vec<bool> {
    let surprisal: Vec<f64> = units.iter().map(|u| u.surprisal).collect();
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by(|&a, &b| surprisal[b].total_cmp(&surprisal[a]).then(a.cmp(&b)));

    let mut kept = vec![false; self_info.len()];
    let mut count = 0;
    for u in order {
        if count >= keep {
            break;
        }
        let range = units[u].token_indices.clone();
        let room = keep - count;
        if range.len() <= room {
            kept[range.clone()].iter_mut().for_each(|k| *k = true);
            count += range.len();
        } else {
            let partial = top_k(&self_info[range.clone()], room);
            for (offset, take) in partial.into_iter().enumerate() {
                kept[range.start + offset] = take;
            }
            count = keep;
        }
    }
    kept
}

pub fn compress_selective_context(
    req: &CompressionRequest,
    scorer: &dyn Scorer,
    config: &SelectiveContextConfig,
) -> Result<CompressionResult, CompressError> {
    let text = tokenize(&req.text);
    let n = text.len();
    let self_info = self_information(scorer, text.tokens(), &[])?;
    let units = lexical_units(&text, &self_info, config.granularity);
    let keep = keep_count(n, req.ratio);
    let kept = select_units(&units, &self_info, keep);

    let order: Vec<usize> = (0..n).filter(|&i| kept[i]).collect();
    let trace = text
        .tokens()
        .iter()
        .zip(&self_info)
        .zip(&kept)
        .map(|((t, &s), &k)| TraceEntry {
            token: t.clone(),
            score: s,
            kept: k,
        })
        .collect();
    Ok(CompressionResult::assemble(
        text.render(&order),
        n,
        order.len(),
        trace,
        order,
        Vec::new(),
    ))
}
