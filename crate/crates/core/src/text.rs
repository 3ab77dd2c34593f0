//! Word-level tokenization and the compression-ratio arithmetic.
//!
//! Every length in the toolkit (original length, compressed length, budgets)
//! is counted in the tokens produced here: maximal runs of alphanumeric
//! characters, with every other non-whitespace character split off as a
//! token of its own. The tokenizer has no model dependency, so ratios are
//! reproducible across machines.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A prompt split into tokens, with byte offsets back into the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    source: String,
    tokens: Vec<String>,
    offsets: Vec<(usize, usize)>,
}

impl TokenizedText {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Half-open byte ranges into [`source`](Self::source), one per token.
    pub fn offsets(&self) -> &[(usize, usize)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Source text between token `i` and token `i + 1`.
    pub fn gap_after(&self, i: usize) -> &str {
        match (self.offsets.get(i), self.offsets.get(i + 1)) {
            (Some(&(_, end)), Some(&(start, _))) => &self.source[end..start],
            _ => "",
        }
    }

    /// Reassembles the source from its tokens, keeping the original spacing
    /// between tokens and dropping leading/trailing whitespace.
    pub fn detokenize(&self) -> String {
        let all: Vec<usize> = (0..self.len()).collect();
        self.render(&all)
    }

    /// Renders the tokens at `indices` (in the given order).
    ///
    /// Two tokens that were adjacent in the source keep the source gap
    /// between them; any other pair is joined by a single space. The output
    /// re-tokenizes to exactly the selected tokens.
    pub fn render(&self, indices: &[usize]) -> String {
        let mut out = String::new();
        for (pos, &i) in indices.iter().enumerate() {
            if pos > 0 {
                let prev = indices[pos - 1];
                if prev + 1 == i {
                    out.push_str(self.gap_after(prev));
                } else {
                    out.push(' ');
                }
            }
            out.push_str(&self.tokens[i]);
        }
        out
    }

    /// Splits the token range `range` into blocks separated by blank lines
    /// in the source (a gap containing two or more newlines).
    pub fn blank_line_blocks(&self, range: Range<usize>) -> Vec<Range<usize>> {
        let mut blocks = Vec::new();
        let mut start = range.start;
        for i in range.clone() {
            if i + 1 < range.end && self.gap_after(i).matches('\n').count() >= 2 {
                blocks.push(start..i + 1);
                start = i + 1;
            }
        }
        if start < range.end {
            blocks.push(start..range.end);
        }
        blocks
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits `text` on whitespace, detaching punctuation into single-character
/// tokens.
pub fn tokenize(text: &str) -> TokenizedText {
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();
    let mut word_start: Option<usize> = None;

    for (i, c) in text.char_indices() {
        if is_word_char(c) {
            if word_start.is_none() {
                word_start = Some(i);
            }
            continue;
        }
        if let Some(start) = word_start.take() {
            tokens.push(text[start..i].to_string());
            offsets.push((start, i));
        }
        if !c.is_whitespace() {
            let end = i + c.len_utf8();
            tokens.push(text[i..end].to_string());
            offsets.push((i, end));
        }
    }
    if let Some(start) = word_start {
        tokens.push(text[start..].to_string());
        offsets.push((start, text.len()));
    }

    TokenizedText {
        source: text.to_string(),
        tokens,
        offsets,
    }
}

/// Joins tokens with single spaces (the offset-free inverse of [`tokenize`]).
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

/// Convenience: the token strings of `text`.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text).tokens
}

pub fn is_punctuation(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if !is_word_char(c) && !c.is_whitespace())
}

pub fn is_sentence_end(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she",
    "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
    "yourselves",
];

pub fn is_stopword(token: &str) -> bool {
    let lower = token.to_lowercase();
    STOPWORDS.binary_search(&lower.as_str()).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RatioError {
    #[error("original length must be positive")]
    EmptyOriginal,
    #[error("compressed length {compressed} exceeds original length {original}")]
    Longer { original: usize, compressed: usize },
}

/// Fraction of tokens removed: `1 - compressed_len / original_len`.
pub fn compute_ratio(original_len: usize, compressed_len: usize) -> Result<f64, RatioError> {
    if original_len == 0 {
        return Err(RatioError::EmptyOriginal);
    }
    if compressed_len > original_len {
        return Err(RatioError::Longer {
            original: original_len,
            compressed: compressed_len,
        });
    }
    Ok(1.0 - compressed_len as f64 / original_len as f64)
}

/// Number of tokens to keep for a target ratio: `ceil((1 - ratio) * len)`.
///
/// Products that land within floating-point noise of an integer snap to it,
/// so `keep_count(10, 0.3)` is 7 rather than 8.
pub fn keep_count(original_len: usize, ratio: f64) -> usize {
    let exact = (1.0 - ratio) * original_len as f64;
    let nearest = exact.round();
    let keep = if (exact - nearest).abs() <= 1e-9 * (original_len.max(1) as f64) {
        nearest
    } else {
        exact.ceil()
    };
    (keep.max(0.0) as usize).min(original_len)
}
