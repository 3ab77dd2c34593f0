//! LongLLMLingua-style question-aware compression.
//!
//! Documents (blank-line separated) are ranked by how much they lower the
//! question's perplexity, reordered so the most relevant comes first, and
//! given token budgets that fall off linearly with rank. Each document is then
//! pruned with the same fine stage as [`compress_lingua`].

use super::lingua::{build_trace, compress_frame, overshoot_note, prune_range, SegmentedPrompt};
use super::{compress_lingua, CompressError, LinguaConfig};
use crate::contract::{CompressionRequest, CompressionResult};
use crate::scorer::{perplexity_of, Scorer};
use crate::text::tokenize;

/// Relevance of each document to `question`: the drop in the question's
/// perplexity when the document is prepended as context.
pub fn relevance_scores<S: AsRef<str>>(
    question: &str,
    documents: &[S],
    scorer: &dyn Scorer,
) -> Result<Vec<f64>, CompressError> {
    let q = tokenize(question);
    if q.is_empty() {
        return Err(CompressError::invalid("question", "question must not be empty"));
    }
    if documents.is_empty() {
        return Err(CompressError::invalid("documents", "need at least one document"));
    }
    let docs: Vec<Vec<String>> = documents
        .iter()
        .map(|d| tokenize(d.as_ref()).tokens().to_vec())
        .collect();
    relevance_of_tokens(q.tokens(), &docs, scorer)
}

fn relevance_of_tokens(
    question: &[String],
    documents: &[Vec<String>],
    scorer: &dyn Scorer,
) -> Result<Vec<f64>, CompressError> {
    let base = perplexity_of(scorer, question, &[])?;
    documents
        .iter()
        .map(|d| Ok(base - perplexity_of(scorer, question, d)?))
        .collect()
}

/// Indices sorted by score descending, ties by index.
pub fn order_by_relevance(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Document indices, most relevant to `question` first.
pub fn rank_documents<S: AsRef<str>>(
    question: &str,
    documents: &[S],
    scorer: &dyn Scorer,
) -> Result<Vec<usize>, CompressError> {
    Ok(order_by_relevance(&relevance_scores(
        question, documents, scorer,
    )?))
}

/// Splits `total` tokens over documents listed in rank order.
///
/// The document at rank `r` of `n` has weight `n - r`. Every document but the
/// last receives `ceil(total * w / sum(w))` (bounded by what is left), the
/// last takes the remainder. A share larger than its document is capped and
/// the excess handed down the ranking.
pub fn document_budgets(total: usize, lengths: &[usize]) -> Vec<usize> {
    let n = lengths.len();
    if n == 0 {
        return Vec::new();
    }
    let total = total.min(lengths.iter().sum());
    let weight_sum = n * (n + 1) / 2;
    let mut shares = Vec::with_capacity(n);
    let mut left = total;
    for r in 0..n - 1 {
        let w = n - r;
        let share = (total * w).div_ceil(weight_sum).min(left);
        shares.push(share);
        left -= share;
    }
    shares.push(left);

    let mut overflow = 0;
    for (s, &len) in shares.iter_mut().zip(lengths) {
        if *s > len {
            overflow += *s - len;
            *s = len;
        }
    }
    for (s, &len) in shares.iter_mut().zip(lengths) {
        let add = overflow.min(len - *s);
        *s += add;
        overflow -= add;
    }
    shares
}

pub fn compress_long_lingua(
    req: &CompressionRequest,
    scorer: &dyn Scorer,
    config: &LinguaConfig,
) -> Result<CompressionResult, CompressError> {
    let question = req.question.as_deref().unwrap_or("");
    if tokenize(question).is_empty() {
        let mut result = compress_lingua(req, scorer, config)?;
        result
            .notes
            .push("no question given; documents were not reordered (plain Lingua)".into());
        return Ok(result);
    }

    let prompt = SegmentedPrompt::new(req.instruction.as_deref(), &req.text, Some(question));
    let text = &prompt.text;
    let n = text.len();
    let budget = prompt.budget(req.ratio, config);
    let mut kept = vec![false; n];
    let mut scores = vec![0.0; n];
    compress_frame(scorer, &prompt, &budget, config, &mut kept, &mut scores)?;

    let blocks = text.blank_line_blocks(prompt.context.clone());
    let mut doc_order = Vec::new();
    if !blocks.is_empty() {
        let docs: Vec<Vec<String>> = blocks.iter().map(|b| text.tokens()[b.clone()].to_vec()).collect();
        let q = &text.tokens()[prompt.question.clone()];
        doc_order = order_by_relevance(&relevance_of_tokens(q, &docs, scorer)?);
        let lengths: Vec<usize> = doc_order.iter().map(|&d| blocks[d].len()).collect();
        let shares = document_budgets(budget.context_tokens, &lengths);
        for (&d, &share) in doc_order.iter().zip(&shares) {
            prune_range(scorer, text, blocks[d].clone(), share, config.segment_size, &mut kept, &mut scores)?;
        }
    }

    let kept_in = |r: std::ops::Range<usize>| -> Vec<usize> { r.filter(|&i| kept[i]).collect() };
    let mut groups = vec![kept_in(prompt.instruction.clone())];
    groups.extend(doc_order.iter().map(|&d| kept_in(blocks[d].clone())));
    groups.push(kept_in(prompt.question.clone()));
    groups.retain(|g| !g.is_empty());

    let compressed = groups
        .iter()
        .map(|g| text.render(g))
        .collect::<Vec<_>>()
        .join("\n\n");
    let order: Vec<usize> = groups.concat();
    let mut notes: Vec<String> = overshoot_note(&budget).into_iter().collect();
    if doc_order.len() > 1 {
        notes.push(format!("document order by relevance: {doc_order:?}"));
    }
    let mut result = CompressionResult::assemble(
        compressed,
        n,
        order.len(),
        build_trace(text, &scores, &kept),
        order,
        notes,
    );
    result.includes_question = true;
    Ok(result)
}
