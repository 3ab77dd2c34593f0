//! The five compressors behind one invocation contract.
//!
//! [`PromptCompressor`] validates a [`CompressionRequest`] and dispatches it
//! to the algorithm named by `request.compressor`. Every algorithm returns a
//! [`CompressionResult`] with a per-token trace; the extractive ones also
//! report which source tokens were kept and in what order.

pub mod budget;
pub mod kis;
pub mod lingua;
pub mod long_lingua;
pub mod scrl;
pub mod scrl_train;
pub mod selective_context;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contract::{CompressionRequest, CompressionResult, CompressorKind};
use crate::remote::{RemoteError, TextGenerator};
use crate::scorer::{ScoreError, Scorer};
use crate::text::tokenize;

pub use budget::{allocate_budget, Budget, SegmentLengths};
pub use kis::{compress_kis, KisConfig, KisReward, KisWeights};
pub use lingua::{compress_lingua, LinguaConfig};
pub use long_lingua::{compress_long_lingua, document_budgets, order_by_relevance, rank_documents};
pub use scrl::{compress_scrl, ScrlPolicy};
pub use scrl_train::{policy_ratio_gap, train_scrl_policy, ScrlTrainConfig, TrainError};
pub use selective_context::{
    compress_selective_context, lexical_units, Granularity, LexicalUnit, SelectiveContextConfig,
};

/// Constraint on SCRL's `max_length`.
pub const SCRL_MAX_LENGTH_RULE: &str = "for SCRL, max_length is the length of the context window, \
     so it must not exceed the length of the original context";
/// Constraint on KiS's `max_length`.
pub const KIS_MAX_LENGTH_RULE: &str = "for KiS, max_length is the maximum length of the input \
     context, so it must be at least the length of the original context";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompressError {
    #[error("invalid {field}: {message}")]
    InvalidRequest { field: &'static str, message: String },
    #[error("{0} is unavailable: {1}")]
    Unavailable(CompressorKind, String),
    #[error(transparent)]
    Scorer(#[from] ScoreError),
    #[error("generator failed: {0}")]
    Generator(RemoteError),
    #[error("generator returned no usable candidates")]
    NoCandidates,
}

impl CompressError {
    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        CompressError::InvalidRequest {
            field,
            message: message.into(),
        }
    }

    /// Status of the failing upstream endpoint, when the error came from one.
    pub fn upstream_status(&self) -> Option<u16> {
        match self {
            CompressError::Scorer(e) => e.upstream_status(),
            CompressError::Generator(e) => e.status(),
            _ => None,
        }
    }

    pub fn is_upstream(&self) -> bool {
        matches!(
            self,
            CompressError::Scorer(ScoreError::Remote(_)) | CompressError::Generator(_)
        )
    }
}

/// Per-algorithm settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressorConfig {
    pub selective_context: SelectiveContextConfig,
    pub lingua: LinguaConfig,
    pub scrl: ScrlPolicy,
    pub kis: KisConfig,
}

/// Unified entry point over all compressors.
#[derive(Clone)]
pub struct PromptCompressor {
    scorer: Arc<dyn Scorer>,
    generator: Option<Arc<dyn TextGenerator>>,
    config: CompressorConfig,
}

impl PromptCompressor {
    pub fn new(scorer: Arc<dyn Scorer>) -> Self {
        PromptCompressor {
            scorer,
            generator: None,
            config: CompressorConfig::default(),
        }
    }

    pub fn with_config(mut self, config: CompressorConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_generator(mut self, generator: Arc<dyn TextGenerator>) -> Self {
        self.generator = Some(generator);
        self
    }

    pub fn config(&self) -> &CompressorConfig {
        &self.config
    }

    pub fn scorer(&self) -> &dyn Scorer {
        self.scorer.as_ref()
    }

    pub fn is_available(&self, kind: CompressorKind) -> bool {
        kind != CompressorKind::Kis || self.generator.is_some()
    }

    pub fn compress(&self, req: &CompressionRequest) -> Result<CompressionResult, CompressError> {
        validate(req)?;
        let scorer = self.scorer.as_ref();
        match req.compressor {
            CompressorKind::SelectiveContext => {
                compress_selective_context(req, scorer, &self.config.selective_context)
            }
            CompressorKind::Lingua => compress_lingua(req, scorer, &self.config.lingua),
            CompressorKind::LongLingua => compress_long_lingua(req, scorer, &self.config.lingua),
            CompressorKind::Scrl => compress_scrl(req, &self.config.scrl, scorer),
            CompressorKind::Kis => {
                let generator = self.generator.as_deref().ok_or_else(|| {
                    CompressError::Unavailable(
                        CompressorKind::Kis,
                        "no generation endpoint configured".into(),
                    )
                })?;
                compress_kis(req, generator, scorer, &self.config.kis)
            }
        }
    }
}

/// Checks the request-level invariants, including the `max_length` gates.
pub fn validate(req: &CompressionRequest) -> Result<(), CompressError> {
    if !(req.ratio.is_finite() && (0.0..1.0).contains(&req.ratio)) {
        return Err(CompressError::invalid(
            "ratio",
            format!("ratio must lie in [0, 1) (got {})", req.ratio),
        ));
    }
    let Some(max_length) = req.max_length else {
        return Ok(());
    };
    if max_length == 0 {
        return Err(CompressError::invalid(
            "max_length",
            "max_length must be a positive integer",
        ));
    }
    let original = tokenize(&req.text).len();
    match req.compressor {
        CompressorKind::Scrl if max_length > original => Err(CompressError::invalid(
            "max_length",
            format!("{SCRL_MAX_LENGTH_RULE} (max_length {max_length} > {original} tokens)"),
        )),
        CompressorKind::Kis if max_length < original => Err(CompressError::invalid(
            "max_length",
            format!("{KIS_MAX_LENGTH_RULE} (max_length {max_length} < {original} tokens)"),
        )),
        _ => Ok(()),
    }
}

/// Marks the `k` highest-scoring positions, ties going to earlier positions.
/// NaN scores rank last.
pub(crate) fn top_k(scores: &[f64], k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let key = |i: usize| {
        let s = scores[i];
        if s.is_nan() {
            f64::NEG_INFINITY
        } else {
            s
        }
    };
    idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut keep = vec![false; scores.len()];
    for &i in idx.iter().take(k) {
        keep[i] = true;
    }
    keep
}

/// Splits `total` across parts proportionally to `sizes` (largest remainder,
/// ties to earlier parts). The shares sum to `min(total, sum(sizes))` and no
/// share exceeds its size.
pub(crate) fn proportional_split(total: usize, sizes: &[usize]) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    if sum == 0 {
        return vec![0; sizes.len()];
    }
    let total = total.min(sum);
    let mut shares: Vec<usize> = sizes.iter().map(|&s| total * s / sum).collect();
    let mut rest = total - shares.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = total * sizes[a] % sum;
        let rb = total * sizes[b] % sum;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    for &i in &order {
        if rest == 0 {
            break;
        }
        if shares[i] < sizes[i] {
            shares[i] += 1;
            rest -= 1;
        }
    }
    shares
}
