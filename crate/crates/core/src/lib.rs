//! Prompt compression toolkit.
//!
//! Five compressors (Selective Context, LLMLingua, LongLLMLingua, SCRL and
//! KiS) share one request/response contract and run over a pluggable
//! language-model [`scorer`]. The [`metrics`], [`datasets`] and [`runner`]
//! modules evaluate them on reconstruction, summarization and
//! answer-accuracy protocols.
//!
//! ```
//! use std::sync::Arc;
//! use pct_core::{fit_ngram, CompressionRequest, CompressorKind, PromptCompressor};
//!
//! let model = fit_ngram(&["the cat sat on the mat", "a dog ran"], 2, 0.1).unwrap();
//! let compressor = PromptCompressor::new(Arc::new(model));
//! let req = CompressionRequest::new("the cat sat on the mat", CompressorKind::SelectiveContext, 0.5);
//! let out = compressor.compress(&req).unwrap();
//! assert_eq!(out.compressed_len, 3);
//! ```

pub mod compressors;
pub mod contract;
pub mod datasets;
pub mod metrics;
pub mod remote;
pub mod runner;
pub mod scorer;
pub mod text;

pub use compressors::{CompressError, CompressorConfig, PromptCompressor};
pub use contract::{CompressionRequest, CompressionResult, CompressorKind, TraceEntry};
pub use scorer::{fit_ngram, NgramModel, Scorer, TokenScore};
pub use text::{compute_ratio, keep_count, tokenize, TokenizedText};

/// Toolkit version, stamped into evaluation reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
