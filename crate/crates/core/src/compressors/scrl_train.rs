//! REINFORCE training for [`ScrlPolicy`].
//!
//! Every token is an independent Bernoulli keep decision. A sampled deletion
//! is rewarded for agreeing with the scorer's most informative tokens (token
//! F1 against the top `ceil((1 - target) * L)` self-information positions)
//! and penalized for missing the target ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scrl::{features, sigmoid, Features, ScrlPolicy, FEATURE_COUNT};
use super::top_k;
use crate::scorer::{self_information, ScoreError, Scorer};
use crate::text::{keep_count, tokenize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScrlTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub target_ratio: f64,
    pub seed: u64,
    /// Sampled deletions per step.
    pub samples_per_step: usize,
    /// Weight of the F1 term.
    pub alpha: f64,
    /// Weight of the ratio penalty.
    pub beta: f64,
    /// Starting policy; the default policy when absent.
    pub init: Option<ScrlPolicy>,
}

impl Default for ScrlTrainConfig {
    fn default() -> Self {
        ScrlTrainConfig {
            steps: 200,
            learning_rate: 0.5,
            target_ratio: 0.5,
            seed: 0,
            samples_per_step: 8,
            alpha: 1.0,
            beta: 1.0,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training corpus contains no tokens")]
    EmptyCorpus,
    #[error("steps must be at least 1")]
    NoSteps,
    #[error("learning rate must be finite and non-negative (got {0})")]
    LearningRate(f64),
    #[error("target ratio must lie in [0, 1) (got {0})")]
    TargetRatio(f64),
    #[error("samples_per_step must be at least 1")]
    NoSamples,
    #[error(transparent)]
    Scorer(#[from] ScoreError),
}

struct Example {
    phi: Vec<Features>,
    /// Positions of the top self-information tokens.
    reference: Vec<bool>,
}

fn prepare<S: AsRef<str>>(
    corpus: &[S],
    target_ratio: f64,
    scorer: &dyn Scorer,
) -> Result<Vec<Example>, TrainError> {
    let mut out = Vec::new();
    for doc in corpus {
        let text = tokenize(doc.as_ref());
        if text.is_empty() {
            continue;
        }
        let si = self_information(scorer, text.tokens(), &[])?;
        let reference = top_k(&si, keep_count(text.len(), target_ratio));
        out.push(Example {
            phi: features(&text, &si),
            reference,
        });
    }
    if out.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    Ok(out)
}

fn f1(kept: &[bool], reference: &[bool]) -> f64 {
    let tp = kept.iter().zip(reference).filter(|(a, b)| **a && **b).count() as f64;
    let k = kept.iter().filter(|a| **a).count() as f64;
    let r = reference.iter().filter(|a| **a).count() as f64;
    if k + r == 0.0 {
        1.0
    } else {
        2.0 * tp / (k + r)
    }
}

pub fn train_scrl_policy<S: AsRef<str>>(
    corpus: &[S],
    config: &ScrlTrainConfig,
    scorer: &dyn Scorer,
) -> Result<ScrlPolicy, TrainError> {
    if config.steps == 0 {
        return Err(TrainError::NoSteps);
    }
    if !(config.learning_rate.is_finite() && config.learning_rate >= 0.0) {
        return Err(TrainError::LearningRate(config.learning_rate));
    }
    if !(config.target_ratio.is_finite() && (0.0..1.0).contains(&config.target_ratio)) {
        return Err(TrainError::TargetRatio(config.target_ratio));
    }
    if config.samples_per_step == 0 {
        return Err(TrainError::NoSamples);
    }
    let examples = prepare(corpus, config.target_ratio, scorer)?;
    let mut policy = config.init.clone().unwrap_or_default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut baseline: Option<f64> = None;

    for _ in 0..config.steps {
        let ex = &examples[rng.random_range(0..examples.len())];
        let n = ex.phi.len();
        let probs: Vec<f64> = ex.phi.iter().map(|f| sigmoid(policy.logit(f))).collect();

        let mut rewards = Vec::with_capacity(config.samples_per_step);
        let mut scores = Vec::with_capacity(config.samples_per_step);
        for _ in 0..config.samples_per_step {
            let actions: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
            let kept = actions.iter().filter(|a| **a).count();
            let achieved = 1.0 - kept as f64 / n as f64;
            let reward = config.alpha * f1(&actions, &ex.reference)
                - config.beta * (achieved - config.target_ratio).abs();
            // d log pi / d w = sum_i (a_i - p_i) phi_i
            let mut score = [0.0; FEATURE_COUNT];
            for ((&a, &p), phi) in actions.iter().zip(&probs).zip(&ex.phi) {
                let diff = f64::from(u8::from(a)) - p;
                for (s, x) in score.iter_mut().zip(phi) {
                    *s += diff * x;
                }
            }
            rewards.push(reward);
            scores.push(score);
        }

        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let b = *baseline.get_or_insert(mean_reward);
        let scale = config.learning_rate / (n * config.samples_per_step) as f64;
        for (reward, score) in rewards.iter().zip(&scores) {
            let advantage = reward - b;
            for (w, s) in policy.weights.iter_mut().zip(score) {
                *w += scale * advantage * s;
            }
        }
        baseline = Some(0.9 * b + 0.1 * mean_reward);
    }
    Ok(policy)
}

/// Mean over the corpus of `|expected ratio - target|`, where the expected
/// ratio of a text is one minus the mean keep probability of its tokens.
pub fn policy_ratio_gap<S: AsRef<str>>(
    policy: &ScrlPolicy,
    corpus: &[S],
    target_ratio: f64,
    scorer: &dyn Scorer,
) -> Result<f64, TrainError> {
    let examples = prepare(corpus, target_ratio, scorer)?;
    let total: f64 = examples
        .iter()
        .map(|ex| {
            let mean_p = ex.phi.iter().map(|f| sigmoid(policy.logit(f))).sum::<f64>()
                / ex.phi.len() as f64;
            ((1.0 - mean_p) - target_ratio).abs()
        })
        .sum();
    Ok(total / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::fit_ngram;

    const CORPUS: [&str; 4] = [
        "The committee approved the new budget on Friday.",
        "Rain is expected across the north of the country tonight.",
        "She said the results would be published next week.",
        "A small boat was found drifting near the harbour.",
    ];

    #[test]
    fn reproducible() {
        let m = fit_ngram(&CORPUS, 2, 0.1).unwrap();
        let cfg = ScrlTrainConfig {
            steps: 30,
            seed: 7,
            ..Default::default()
        };
        let a = train_scrl_policy(&CORPUS, &cfg, &m).unwrap();
        let b = train_scrl_policy(&CORPUS, &cfg, &m).unwrap();
        assert_eq!(a.weights.map(f64::to_bits), b.weights.map(f64::to_bits));
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let m = fit_ngram(&CORPUS, 2, 0.1).unwrap();
        let cfg = ScrlTrainConfig {
            steps: 1,
            learning_rate: 0.0,
            ..Default::default()
        };
        assert_eq!(train_scrl_policy(&CORPUS, &cfg, &m).unwrap(), ScrlPolicy::default());
    }

    #[test]
    fn rejects_bad_config() {
        let m = fit_ngram(&CORPUS, 2, 0.1).unwrap();
        let empty: [&str; 0] = [];
        let cfg = ScrlTrainConfig::default();
        assert_eq!(train_scrl_policy(&empty, &cfg, &m).unwrap_err(), TrainError::EmptyCorpus);
        let no_steps = ScrlTrainConfig { steps: 0, ..Default::default() };
        assert_eq!(train_scrl_policy(&CORPUS, &no_steps, &m).unwrap_err(), TrainError::NoSteps);
        let neg = ScrlTrainConfig { learning_rate: -0.1, ..Default::default() };
        assert!(train_scrl_policy(&CORPUS, &neg, &m).is_err());
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1(&[true, false], &[true, false]), 1.0);
        assert_eq!(f1(&[false, false], &[false, false]), 1.0);
        assert_eq!(f1(&[true, true], &[true, false]), 2.0 / 3.0);
    }
}
