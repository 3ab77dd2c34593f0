//! LLMLingua-style coarse-to-fine compression.
//!
//! The prompt is split into instruction, context and question. A budget
//! controller keeps the instruction and question (by default whole) and
//! assigns the rest of the target to the context. When the context holds
//! several demonstrations (blank-line separated), whole demonstrations with
//! the highest perplexity are dropped first; the survivors are then pruned
//! token by token, segment after segment, each segment scored against the
//! tokens already kept.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::budget::{allocate_budget, Budget, SegmentLengths};
use super::{proportional_split, top_k, CompressError};
use crate::contract::{CompressionRequest, CompressionResult, TraceEntry};
use crate::scorer::{perplexity_from_logprobs, self_information, to_bits, ScoreError, Scorer};
use crate::text::{keep_count, tokenize, TokenizedText};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinguaConfig {
    /// Tokens per fine-stage segment.
    pub segment_size: usize,
    /// Coarse budget as a multiple of the context budget.
    pub coarse_factor: f64,
    /// Fraction of the instruction that is never pruned.
    pub instruction_floor: f64,
    /// Fraction of the question that is never pruned.
    pub question_floor: f64,
}

impl Default for LinguaConfig {
    fn default() -> Self {
        LinguaConfig {
            segment_size: 64,
            coarse_factor: 1.4,
            instruction_floor: 1.0,
            question_floor: 1.0,
        }
    }
}

/// Instruction, context and question laid out as one tokenized prompt
/// (joined by blank lines).
pub(crate) struct SegmentedPrompt {
    pub text: TokenizedText,
    pub instruction: Range<usize>,
    pub context: Range<usize>,
    pub question: Range<usize>,
}

impl SegmentedPrompt {
    pub fn new(instruction: Option<&str>, context: &str, question: Option<&str>) -> Self {
        let parts = [
            instruction.unwrap_or(""),
            context,
            question.unwrap_or(""),
        ];
        let lens: Vec<usize> = parts.iter().map(|p| tokenize(p).len()).collect();
        let joined: Vec<&str> = parts
            .iter()
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .collect();
        let text = tokenize(&joined.join("\n\n"));
        let instruction = 0..lens[0];
        let context = lens[0]..lens[0] + lens[1];
        let question = context.end..context.end + lens[2];
        debug_assert_eq!(question.end, text.len());
        SegmentedPrompt {
            text,
            instruction,
            context,
            question,
        }
    }

    pub fn lengths(&self) -> SegmentLengths {
        SegmentLengths {
            instruction: self.instruction.len(),
            context: self.context.len(),
            question: self.question.len(),
        }
    }

    pub fn budget(&self, ratio: f64, config: &LinguaConfig) -> Budget {
        allocate_budget(
            keep_count(self.text.len(), ratio),
            self.lengths(),
            config.instruction_floor,
            config.question_floor,
        )
    }
}

/// Keeps `budget` tokens of `tokens`.
///
/// Tokens are processed in segments of `segment_size`; the budget is split
/// across segments in proportion to their length, and each segment keeps its
/// most informative tokens, scored with the tokens kept so far as prefix.
/// Returns the keep mask and the self-information used for each token.
pub(crate) fn fine_prune(
    scorer: &dyn Scorer,
    tokens: &[String],
    budget: usize,
    segment_size: usize,
) -> Result<(Vec<bool>, Vec<f64>), ScoreError> {
    let segment_size = segment_size.max(1);
    let sizes: Vec<usize> = tokens.chunks(segment_size).map(<[String]>::len).collect();
    let shares = proportional_split(budget, &sizes);

    let mut keep = Vec::with_capacity(tokens.len());
    let mut scores = Vec::with_capacity(tokens.len());
    let mut prefix: Vec<String> = Vec::new();
    for (segment, &share) in tokens.chunks(segment_size).zip(&shares) {
        let si = self_information(scorer, segment, &prefix)?;
        let mask = top_k(&si, share);
        prefix.extend(
            segment
                .iter()
                .zip(&mask)
                .filter(|(_, &k)| k)
                .map(|(t, _)| t.clone()),
        );
        keep.extend(mask);
        scores.extend(si);
    }
    Ok((keep, scores))
}

/// Drops whole blocks, highest perplexity first (later blocks first among
/// ties), while the context exceeds `ceil(coarse_factor * budget)` and the
/// drop would not leave fewer than `budget` tokens.
///
/// Returns which blocks survive plus each token's self-information.
pub(crate) fn coarse_select(
    scorer: &dyn Scorer,
    text: &TokenizedText,
    blocks: &[Range<usize>],
    budget: usize,
    coarse_factor: f64,
) -> Result<(Vec<bool>, Vec<f64>), ScoreError> {
    let mut survive = vec![true; blocks.len()];
    let mut scores = Vec::new();
    if blocks.len() <= 1 {
        return Ok((survive, scores));
    }
    let mut ppl = Vec::with_capacity(blocks.len());
    for block in blocks {
        let lps = scorer.logprobs(&text.tokens()[block.clone()], &[])?;
        ppl.push(perplexity_from_logprobs(&lps));
        scores.extend(lps.into_iter().map(to_bits));
    }
    drop_by_perplexity(&ppl, blocks, budget, coarse_factor, &mut survive);
    Ok((survive, scores))
}

fn drop_by_perplexity(
    ppl: &[f64],
    blocks: &[Range<usize>],
    budget: usize,
    coarse_factor: f64,
    survive: &mut [bool],
) {
    let coarse_budget = (coarse_factor.max(1.0) * budget as f64).ceil() as usize;
    let mut remaining: usize = blocks.iter().map(Range::len).sum();
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.sort_by(|&a, &b| ppl[b].total_cmp(&ppl[a]).then(b.cmp(&a)));
    for i in order {
        if remaining <= coarse_budget {
            break;
        }
        let len = blocks[i].len();
        if remaining - len >= budget {
            survive[i] = false;
            remaining -= len;
        }
    }
}

/// Prunes `range` of `text` to `budget` tokens with the fine stage, writing
/// into `kept` / `scores` (indexed by prompt position).
pub(crate) fn prune_range(
    scorer: &dyn Scorer,
    text: &TokenizedText,
    range: Range<usize>,
    budget: usize,
    segment_size: usize,
    kept: &mut [bool],
    scores: &mut [f64],
) -> Result<(), ScoreError> {
    let idx: Vec<usize> = range.collect();
    prune_indices(scorer, text, &idx, budget, segment_size, kept, scores)
}

pub(crate) fn prune_indices(
    scorer: &dyn Scorer,
    text: &TokenizedText,
    idx: &[usize],
    budget: usize,
    segment_size: usize,
    kept: &mut [bool],
    scores: &mut [f64],
) -> Result<(), ScoreError> {
    let tokens: Vec<String> = idx.iter().map(|&i| text.tokens()[i].clone()).collect();
    let (mask, si) = fine_prune(scorer, &tokens, budget, segment_size)?;
    for ((&i, k), s) in idx.iter().zip(mask).zip(si) {
        kept[i] = k;
        scores[i] = s;
    }
    Ok(())
}

/// Compresses the instruction and question segments per their budgets.
pub(crate) fn compress_frame(
    scorer: &dyn Scorer,
    prompt: &SegmentedPrompt,
    budget: &Budget,
    config: &LinguaConfig,
    kept: &mut [bool],
    scores: &mut [f64],
) -> Result<(), ScoreError> {
    for (range, share) in [
        (prompt.instruction.clone(), budget.instruction_tokens),
        (prompt.question.clone(), budget.question_tokens),
    ] {
        if !range.is_empty() {
            prune_range(scorer, &prompt.text, range, share, config.segment_size, kept, scores)?;
        }
    }
    Ok(())
}

pub(crate) fn build_trace(text: &TokenizedText, scores: &[f64], kept: &[bool]) -> Vec<TraceEntry> {
    text.tokens()
        .iter()
        .zip(scores)
        .zip(kept)
        .map(|((t, &s), &k)| TraceEntry {
            token: t.clone(),
            score: s,
            kept: k,
        })
        .collect()
}

pub(crate) fn overshoot_note(budget: &Budget) -> Option<String> {
    budget.overshoot.then(|| {
        format!(
            "instruction and question need {} tokens, over the target of {}; context dropped",
            budget.total_tokens, budget.target_tokens
        )
    })
}

pub fn compress_lingua(
    req: &CompressionRequest,
    scorer: &dyn Scorer,
    config: &LinguaConfig,
) -> Result<CompressionResult, CompressError> {
    let prompt = SegmentedPrompt::new(
        req.instruction.as_deref(),
        &req.text,
        req.question.as_deref(),
    );
    let n = prompt.text.len();
    let budget = prompt.budget(req.ratio, config);
    let mut kept = vec![false; n];
    let mut scores = vec![0.0; n];

    compress_frame(scorer, &prompt, &budget, config, &mut kept, &mut scores)?;

    let blocks = prompt.text.blank_line_blocks(prompt.context.clone());
    let (survive, coarse_scores) = coarse_select(
        scorer,
        &prompt.text,
        &blocks,
        budget.context_tokens,
        config.coarse_factor,
    )?;
    // coarse scores cover every block in order; dropped blocks keep them
    let mut pos = prompt.context.start;
    for s in coarse_scores {
        scores[pos] = s;
        pos += 1;
    }
    let surviving: Vec<usize> = blocks
        .iter()
        .zip(&survive)
        .filter(|(_, &s)| s)
        .flat_map(|(b, _)| b.clone())
        .collect();
    prune_indices(
        scorer,
        &prompt.text,
        &surviving,
        budget.context_tokens,
        config.segment_size,
        &mut kept,
        &mut scores,
    )?;

    let order: Vec<usize> = (0..n).filter(|&i| kept[i]).collect();
    let mut notes: Vec<String> = overshoot_note(&budget).into_iter().collect();
    let dropped = survive.iter().filter(|s| !**s).count();
    if dropped > 0 {
        notes.push(format!("coarse stage dropped {dropped} of {} demonstrations", blocks.len()));
    }
    let mut result = CompressionResult::assemble(
        prompt.text.render(&order),
        n,
        order.len(),
        build_trace(&prompt.text, &scores, &kept),
        order,
        notes,
    );
    result.includes_question = !prompt.question.is_empty();
    Ok(result)
}
