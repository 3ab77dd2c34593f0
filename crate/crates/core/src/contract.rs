//! The request/response shapes shared by every compressor.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::text::compute_ratio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompressorKind {
    SelectiveContext,
    Lingua,
    LongLingua,
    #[serde(rename = "SCRL")]
    Scrl,
    #[serde(rename = "KiS")]
    Kis,
}

impl CompressorKind {
    pub const ALL: [CompressorKind; 5] = [
        CompressorKind::SelectiveContext,
        CompressorKind::Lingua,
        CompressorKind::LongLingua,
        CompressorKind::Scrl,
        CompressorKind::Kis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CompressorKind::SelectiveContext => "SelectiveContext",
            CompressorKind::Lingua => "Lingua",
            CompressorKind::LongLingua => "LongLingua",
            CompressorKind::Scrl => "SCRL",
            CompressorKind::Kis => "KiS",
        }
    }

    /// Output tokens form a subsequence of the input tokens.
    pub fn is_extractive(self) -> bool {
        matches!(
            self,
            CompressorKind::SelectiveContext | CompressorKind::Lingua | CompressorKind::Scrl
        )
    }

    pub fn uses_max_length(self) -> bool {
        matches!(self, CompressorKind::Scrl | CompressorKind::Kis)
    }
}

impl fmt::Display for CompressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownCompressor(pub String);

impl fmt::Display for UnknownCompressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "unknown compressor {:?} (expected one of SelectiveContext, Lingua, LongLingua, SCRL, KiS)",
            self.0
        )
    }
}

impl std::error::Error for UnknownCompressor {}

impl FromStr for CompressorKind {
    type Err = UnknownCompressor;

    /// Accepts the canonical names plus the common aliases, case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "selectivecontext" | "sc" | "sccompressor" => Ok(CompressorKind::SelectiveContext),
            "lingua" | "llmlingua" | "llmlinguacompressor" => Ok(CompressorKind::Lingua),
            "longlingua" | "longllmlingua" | "longllmlinguacompressor" => {
                Ok(CompressorKind::LongLingua)
            }
            "scrl" | "scrlcompressor" => Ok(CompressorKind::Scrl),
            "kis" | "kiscompressor" => Ok(CompressorKind::Kis),
            _ => Err(UnknownCompressor(s.to_string())),
        }
    }
}

/// One call into a compressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRequest {
    pub text: String,
    pub compressor: CompressorKind,
    /// Fraction of tokens to remove, in `[0, 1)`.
    pub ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    /// Instruction segment for the budget-controlled compressors; kept whole
    /// by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    /// Context window (SCRL) or maximum input length (KiS), in tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompressionRequest {
    pub fn new(text: impl Into<String>, compressor: CompressorKind, ratio: f64) -> Self {
        CompressionRequest {
            text: text.into(),
            compressor,
            ratio,
            question: None,
            instruction: None,
            max_length: None,
            seed: None,
        }
    }

    pub fn with_question(mut self, question: impl Into<String>) -> Self {
        self.question = Some(question.into());
        self
    }

    pub fn with_instruction(mut self, instruction: impl Into<String>) -> Self {
        self.instruction = Some(instruction.into());
        self
    }

    pub fn with_max_length(mut self, max_length: usize) -> Self {
        self.max_length = Some(max_length);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub token: String,
    /// Score the compressor ranked this token by (self-information in bits,
    /// or keep-probability for SCRL).
    pub score: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub compressed: String,
    pub original_len: usize,
    pub compressed_len: usize,
    pub achieved_ratio: f64,
    /// One entry per source token, in source order.
    pub trace: Vec<TraceEntry>,
    /// Kept source-token indices in output order. Empty for abstractive
    /// output.
    #[serde(default)]
    pub output_order: Vec<usize>,
    /// The question (when given) is part of `compressed`.
    #[serde(default)]
    pub includes_question: bool,
    /// Warnings raised while compressing (budget overshoot, fallbacks).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl CompressionResult {
    pub(crate) fn assemble(
        compressed: String,
        original_len: usize,
        compressed_len: usize,
        trace: Vec<TraceEntry>,
        output_order: Vec<usize>,
        notes: Vec<String>,
    ) -> Self {
        // Abstractive output can be longer than its source, so the ratio is
        // computed directly rather than through `compute_ratio`.
        let achieved_ratio = match compute_ratio(original_len, compressed_len) {
            Ok(r) => r,
            Err(_) if original_len > 0 => 1.0 - compressed_len as f64 / original_len as f64,
            Err(_) => 0.0,
        };
        CompressionResult {
            compressed,
            original_len,
            compressed_len,
            achieved_ratio,
            trace,
            output_order,
            includes_question: false,
            notes,
        }
    }

    pub fn kept_tokens(&self) -> Vec<&str> {
        self.output_order
            .iter()
            .map(|&i| self.trace[i].token.as_str())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_aliases() {
        assert_eq!("SCCompressor".parse(), Ok(CompressorKind::SelectiveContext));
        assert_eq!("LongLLMLingua".parse(), Ok(CompressorKind::LongLingua));
        assert_eq!("scrl".parse(), Ok(CompressorKind::Scrl));
        assert_eq!("KiS".parse(), Ok(CompressorKind::Kis));
        assert!("gzip".parse::<CompressorKind>().is_err());
        for kind in CompressorKind::ALL {
            assert_eq!(kind.name().parse(), Ok(kind));
        }
    }

    #[test]
    fn serde_names() {
        assert_eq!(
            serde_json::to_string(&CompressorKind::Scrl).unwrap(),
            "\"SCRL\""
        );
        let req: CompressionRequest =
            serde_json::from_str(r#"{"text":"a","compressor":"KiS","ratio":0.2}"#).unwrap();
        assert_eq!(req.compressor, CompressorKind::Kis);
        assert_eq!(req.max_length, None);
    }
}
