//! Counterfactual generation by a double deep-Q-network editing agent.
//!
//! Each episode starts at the molecule being explained and applies up to
//! `max_steps` legal edits. The Q-network scores an action by the
//! fingerprint of the molecule it leads to. Every distinct molecule visited
//! during training is a candidate counterfactual; the best `top_k` by reward
//! are reported.

mod agent;
mod qnet;
mod reward;

use serde::{Deserialize, Serialize};

use crate::fingerprint::{FingerprintConfig, FingerprintError};
use crate::gnn::GnnError;
use crate::molgraph::{Element, MolError};
use crate::similarity::{SimilarityError, SimilarityWeights};

pub use agent::{
    generate_counterfactuals, select_action, Agent, CounterfactualObjective, CounterfactualRecord,
    CounterfactualReport, Episode, EpisodeStep, Explanation, HeavyAtomObjective, Objective,
    ReportInput, Scored,
};
pub use qnet::{
    double_dqn_target, dqn_train_step, state_features, DqnLearner, LearnerConfig, QNetwork,
    ReplayBuffer, StateFeatures, Transition, DEFAULT_Q_HIDDEN,
};
pub use reward::{
    combine_rewards, epsilon_schedule, regression_beta, reward_classification, reward_regression,
    sign,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RlError {
    #[error("value out of range: {0}")]
    RangeViolation(String),
    #[error("invalid reward weights: {0}")]
    WeightViolation(String),
    #[error("the molecule has no legal actions")]
    NoLegalActions,
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("Q-network training diverged")]
    Diverged,
    #[error("no valid counterfactual was visited")]
    NoCounterfactualFound,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Molecule(#[from] MolError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Predictor(#[from] GnnError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

/// Settings of one counterfactual search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub include_noop: bool,
    pub gamma: f64,
    pub epsilon0: f64,
    pub decay_lambda: f64,
    /// Multiply ε by `decay_lambda` after every episode; otherwise ε stays at
    /// `epsilon0`.
    pub decaying_policy: bool,
    /// Number of training episodes.
    pub train_epochs: usize,
    pub top_k: usize,
    /// Weight of the prediction term against similarity.
    pub alpha: f64,
    pub similarity_weights: SimilarityWeights,
    pub fingerprint: FingerprintConfig,
    /// Elements the agent may add.
    pub vocab: Vec<Element>,
    pub q_hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Target-network synchronisation period, in gradient steps.
    pub target_sync: usize,
    /// Reference score of the regression reward's direction gate; defaults
    /// to the original molecule's prediction.
    pub regression_target: Option<f64>,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_steps: 1,
            include_noop: false,
            gamma: 0.9,
            epsilon0: 1.0,
            decay_lambda: 0.9987,
            decaying_policy: true,
            train_epochs: 3000,
            top_k: 10,
            alpha: 0.5,
            similarity_weights: SimilarityWeights::default(),
            fingerprint: FingerprintConfig::default(),
            vocab: vec![Element::C, Element::N, Element::O],
            q_hidden: DEFAULT_Q_HIDDEN.to_vec(),
            replay_capacity: 5000,
            batch_size: 64,
            learning_rate: 1e-4,
            target_sync: 20,
            regression_target: None,
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let fail = |msg: String| Err(RlError::Config(msg));
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.max_steps == 0 {
            return fail("max_steps must be at least 1".into());
        }
        if !unit(self.gamma) {
            return fail(format!("gamma {} is outside [0, 1]", self.gamma));
        }
        if !(self.epsilon0 > 0.0 && self.epsilon0 <= 1.0) {
            return fail(format!("epsilon0 {} is outside (0, 1]", self.epsilon0));
        }
        if !(self.decay_lambda > 0.0 && self.decay_lambda <= 1.0) {
            return fail(format!(
                "decay_lambda {} is outside (0, 1]",
                self.decay_lambda
            ));
        }
        if !unit(self.alpha) {
            return fail(format!("alpha {} is outside [0, 1]", self.alpha));
        }
        if self.train_epochs == 0 || self.top_k == 0 {
            return fail("train_epochs and top_k must be at least 1".into());
        }
        if self.vocab.is_empty() {
            return fail("vocab is empty".into());
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.target_sync == 0 {
            return fail("batch_size, replay_capacity and target_sync must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if self.regression_target.is_some_and(|t| !t.is_finite()) {
            return fail("regression_target must be finite".into());
        }
        SimilarityWeights::new(
            self.similarity_weights.alpha_tanimoto(),
            self.similarity_weights.alpha_cosine(),
        )?;
        self.fingerprint.validate()?;
        Ok(())
    }

    pub(crate) fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            replay_capacity: self.replay_capacity,
            batch_size: self.batch_size,
            target_sync: self.target_sync,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        EpisodeConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            EpisodeConfig {
                max_steps: 0,
                ..Default::default()
            },
            EpisodeConfig {
                gamma: 1.5,
                ..Default::default()
            },
            EpisodeConfig {
                epsilon0: 0.0,
                ..Default::default()
            },
            EpisodeConfig {
                decay_lambda: 1.1,
                ..Default::default()
            },
            EpisodeConfig {
                alpha: -0.2,
                ..Default::default()
            },
            EpisodeConfig {
                vocab: vec![],
                ..Default::default()
            },
            EpisodeConfig {
                regression_target: Some(f64::NAN),
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(RlError::Config(_))), "{cfg:?}");
        }
    }
}
