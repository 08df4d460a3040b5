use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::qnet::{DqnLearner, QNetwork, StateFeatures, Transition};
use super::reward::{epsilon_schedule, reward_classification, reward_regression};
use super::{EpisodeConfig, RlError};
use crate::actions::{action_signature, enumerate_actions, EditAction};
use crate::fingerprint::tanimoto;
use crate::gnn::{Prediction, PredictorModel};
use crate::molgraph::{apply_edit, canonical_key, check_validity, write_smiles, Molecule};
use crate::similarity::SimilarityReference;

/// Scores molecules reached by the agent.
pub trait Objective {
    fn reward(&mut self, m: &Molecule) -> Result<f64, RlError>;
}

/// Rewards molecule size: the reward is the heavy-atom count.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeavyAtomObjective;

impl Objective for HeavyAtomObjective {
    fn reward(&mut self, m: &Molecule) -> Result<f64, RlError> {
        Ok(m.atom_count() as f64)
    }
}

/// Prediction, similarity to the original, and reward of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub prediction: Prediction,
    pub similarity: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy)]
enum Goal {
    /// Move away from the original predicted class.
    LeaveClass(usize),
    /// Move the score away from `target`, starting from `original`.
    ShiftScore { original: f64, target: f64 },
}

/// Reward of a candidate counterfactual of a fixed molecule under a fixed
/// predictor. Scores are cached by canonical key.
pub struct CounterfactualObjective<'a> {
    model: &'a PredictorModel,
    reference: SimilarityReference,
    goal: Goal,
    alpha: f64,
    original: Prediction,
    cache: BTreeMap<String, Scored>,
}

impl<'a> CounterfactualObjective<'a> {
    pub fn new(
        model: &'a PredictorModel,
        m: &Molecule,
        cfg: &EpisodeConfig,
    ) -> Result<Self, RlError> {
        let (prediction, embedding) = model.predict_and_embed(m)?;
        let goal = match &prediction {
            Prediction::Class { class, .. } => {
                if cfg.regression_target.is_some() {
                    return Err(RlError::Config(
                        "regression_target is set but the predictor is a classifier".into(),
                    ));
                }
                Goal::LeaveClass(*class)
            }
            Prediction::Value { value } => Goal::ShiftScore {
                original: *value,
                target: cfg.regression_target.unwrap_or(*value),
            },
        };
        let reference = SimilarityReference::from_parts(
            cfg.fingerprint.fingerprint(m)?,
            embedding,
            cfg.similarity_weights,
            cfg.fingerprint,
        );
        Ok(CounterfactualObjective {
            model,
            reference,
            goal,
            alpha: cfg.alpha,
            original: prediction,
            cache: BTreeMap::new(),
        })
    }

    pub fn original_prediction(&self) -> &Prediction {
        &self.original
    }

    /// Reference score of the regression direction gate, if any.
    pub fn regression_target(&self) -> Option<f64> {
        match self.goal {
            Goal::ShiftScore { target, .. } => Some(target),
            Goal::LeaveClass(_) => None,
        }
    }

    pub fn score(&mut self, m: &Molecule) -> Result<Scored, RlError> {
        let key = canonical_key(m);
        if let Some(s) = self.cache.get(&key) {
            return Ok(s.clone());
        }
        let (prediction, embedding) = self.model.predict_and_embed(m)?;
        let t = tanimoto(
            self.reference.fingerprint(),
            &self.reference_fp_config().fingerprint(m)?,
        )?;
        let similarity = self
            .reference
            .similarity_from_fingerprint(t, &embedding)?
            .clamp(0.0, 1.0);
        let reward = match (self.goal, &prediction) {
            (Goal::LeaveClass(c), p) => {
                let y_c = p.probability(c).unwrap_or(0.0).clamp(0.0, 1.0);
                reward_classification(y_c, similarity, self.alpha)?
            }
            (Goal::ShiftScore { original, target }, p) => {
                let value = p.value().unwrap_or(original);
                reward_regression(original, value, target, similarity, self.alpha)?
            }
        };
        let scored = Scored {
            prediction,
            similarity,
            reward,
        };
        self.cache.insert(key, scored.clone());
        Ok(scored)
    }

    fn reference_fp_config(&self) -> crate::fingerprint::FingerprintConfig {
        self.reference.fingerprint_config()
    }
}

impl Objective for CounterfactualObjective<'_> {
    fn reward(&mut self, m: &Molecule) -> Result<f64, RlError> {
        Ok(self.score(m)?.reward)
    }
}

struct Candidate {
    action: EditAction,
    signature: String,
    molecule: Molecule,
    features: StateFeatures,
}

fn candidates(
    m: &Molecule,
    steps_after: usize,
    cfg: &EpisodeConfig,
) -> Result<Vec<Candidate>, RlError> {
    enumerate_actions(m, &cfg.vocab, cfg.include_noop)?
        .into_iter()
        .map(|action| {
            let molecule = apply_edit(m, &action)?;
            let features =
                StateFeatures::new(&molecule, steps_after, cfg.max_steps, cfg.fingerprint)?;
            Ok(Candidate {
                signature: action_signature(&action),
                action,
                molecule,
                features,
            })
        })
        .collect()
}

/// ε-greedy choice. A uniform draw is always consumed first so the random
/// stream does not depend on the Q values.
fn choose<R: Rng + ?Sized>(q: &QNetwork, cands: &[Candidate], epsilon: f64, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    if cands.len() == 1 {
        return 0;
    }
    if u < epsilon {
        return rng.gen_range(0..cands.len());
    }
    let feats: Vec<&StateFeatures> = cands.iter().map(|c| &c.features).collect();
    let values = q.q_values(&feats);
    let mut best = 0;
    for i in 1..cands.len() {
        if values[i] > values[best]
            || (values[i] == values[best] && cands[i].signature < cands[best].signature)
        {
            best = i;
        }
    }
    best
}

/// ε-greedy action for `m` with `steps_remaining` steps left in the episode.
/// Greedy choices maximise the Q value of the resulting molecule; ties go to
/// the lexicographically smallest action signature.
pub fn select_action<R: Rng + ?Sized>(
    qnet: &QNetwork,
    m: &Molecule,
    steps_remaining: usize,
    epsilon: f64,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<EditAction, RlError> {
    let cands = candidates(m, steps_remaining.saturating_sub(1), cfg)?;
    if cands.is_empty() {
        return Err(RlError::NoLegalActions);
    }
    Ok(cands[choose(qnet, &cands, epsilon, rng)].action)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub action: EditAction,
    pub signature: String,
    pub molecule: Molecule,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    pub steps: Vec<EpisodeStep>,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn final_reward(&self) -> Option<f64> {
        self.steps.last().map(|s| s.reward)
    }
}

/// A Q-learning editing agent with its own networks, replay memory and
/// random stream.
pub struct Agent {
    cfg: EpisodeConfig,
    learner: DqnLearner,
    rng: ChaCha8Rng,
    epsilon: f64,
}

impl Agent {
    pub fn new(cfg: EpisodeConfig) -> Result<Self, RlError> {
        cfg.validate()?;
        let q = QNetwork::new(
            cfg.fingerprint.width + 1,
            &cfg.q_hidden,
            cfg.seed ^ 0x5157_4e45_5457,
        );
        Ok(Agent {
            learner: DqnLearner::new(q, cfg.learner_config()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            epsilon: cfg.epsilon0,
            cfg,
        })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn q_network(&self) -> &QNetwork {
        &self.learner.online
    }

    /// Runs one episode from `start`. With `learn`, each step is stored in
    /// replay memory and followed by one gradient step. The exploration rate
    /// is `epsilon` if given, else the agent's scheduled rate.
    pub fn run_episode(
        &mut self,
        start: &Molecule,
        objective: &mut dyn Objective,
        epsilon: Option<f64>,
        learn: bool,
    ) -> Result<Episode, RlError> {
        let epsilon = epsilon.unwrap_or(self.epsilon);
        let max_steps = self.cfg.max_steps;
        let mut episode = Episode::default();
        let mut cands = candidates(start, max_steps - 1, &self.cfg)?;
        if cands.is_empty() {
            return Err(RlError::NoLegalActions);
        }
        for t in 0..max_steps {
            if cands.is_empty() {
                break;
            }
            let steps_left = max_steps - t;
            let pick = choose(&self.learner.online, &cands, epsilon, &mut self.rng);
            let chosen = cands.swap_remove(pick);
            let reward = objective.reward(&chosen.molecule)?;
            let next = if steps_left > 1 {
                candidates(&chosen.molecule, steps_left - 2, &self.cfg)?
            } else {
                Vec::new()
            };
            if learn {
                self.learner.remember(Transition {
                    state: chosen.features,
                    reward,
                    next: next.iter().map(|c| c.features.clone()).collect(),
                    terminal: next.is_empty(),
                });
                self.learner.update(&mut self.rng)?;
            }
            episode.steps.push(EpisodeStep {
                action: chosen.action,
                signature: chosen.signature,
                molecule: chosen.molecule,
                reward,
            });
            cands = next;
        }
        Ok(episode)
    }

    /// Advances the exploration schedule by one episode.
    pub fn end_episode(&mut self) {
        if self.cfg.decaying_policy {
            self.epsilon = epsilon_schedule(self.epsilon, self.cfg.decay_lambda);
        }
    }

    /// Trains for `episodes` episodes from `start`, calling `visit` for every
    /// episode.
    pub fn train(
        &mut self,
        start: &Molecule,
        objective: &mut dyn Objective,
        episodes: usize,
        mut visit: impl FnMut(&Episode),
    ) -> Result<(), RlError> {
        for _ in 0..episodes {
            let episode = self.run_episode(start, objective, None, true)?;
            visit(&episode);
            self.end_episode();
        }
        Ok(())
    }
}

/// One ranked counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualRecord {
    pub rank: usize,
    pub smiles: String,
    pub prediction: Prediction,
    pub similarity: f64,
    pub reward: f64,
    /// Signatures of the edits leading from the input to this molecule.
    pub edit_trace: Vec<String>,
    #[serde(skip)]
    pub molecule: Molecule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportInput {
    pub smiles: String,
    pub prediction: Prediction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression_target: Option<f64>,
}

/// JSON report of one explanation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterfactualReport {
    pub input: ReportInput,
    pub config: EpisodeConfig,
    pub counterfactuals: Vec<CounterfactualRecord>,
}

impl CounterfactualReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub input: ReportInput,
    pub counterfactuals: Vec<CounterfactualRecord>,
}

impl Explanation {
    pub fn report(&self, cfg: &EpisodeConfig) -> CounterfactualReport {
        CounterfactualReport {
            input: self.input.clone(),
            config: cfg.clone(),
            counterfactuals: self.counterfactuals.clone(),
        }
    }
}

/// Trains a fresh agent on `m` for `cfg.train_epochs` episodes and returns the
/// `top_k` distinct visited molecules by reward (ties broken by canonical key).
pub fn generate_counterfactuals(
    predictor: &PredictorModel,
    m: &Molecule,
    cfg: &EpisodeConfig,
) -> Result<Explanation, RlError> {
    cfg.validate()?;
    let report = check_validity(m);
    if !report.valid {
        return Err(RlError::Molecule(
            crate::molgraph::MolError::InvalidMolecule(report),
        ));
    }
    let mut objective = CounterfactualObjective::new(predictor, m, cfg)?;
    let start_key = canonical_key(m);
    let mut pool: BTreeMap<String, (Molecule, Vec<String>)> = BTreeMap::new();
    let mut agent = Agent::new(cfg.clone())?;
    agent.train(m, &mut objective, cfg.train_epochs, |episode| {
        let mut trace = Vec::new();
        for step in &episode.steps {
            trace.push(step.signature.clone());
            let key = canonical_key(&step.molecule);
            if key == start_key {
                continue;
            }
            let shorter = pool.get(&key).is_none_or(|(_, t)| trace.len() < t.len());
            if shorter {
                pool.insert(key, (step.molecule.clone(), trace.clone()));
            }
        }
    })?;
    if pool.is_empty() {
        return Err(RlError::NoCounterfactualFound);
    }

    let mut ranked = Vec::with_capacity(pool.len());
    for (key, (molecule, trace)) in pool {
        debug_assert!(check_validity(&molecule).valid);
        let scored = objective.score(&molecule)?;
        ranked.push((key, molecule, trace, scored));
    }
    ranked.sort_by(|a, b| {
        b.3.reward
            .total_cmp(&a.3.reward)
            .then_with(|| a.0.cmp(&b.0))
    });
    let counterfactuals = ranked
        .into_iter()
        .take(cfg.top_k)
        .enumerate()
        .map(
            |(i, (_, molecule, edit_trace, scored))| CounterfactualRecord {
                rank: i + 1,
                smiles: write_smiles(&molecule),
                prediction: scored.prediction,
                similarity: scored.similarity,
                reward: scored.reward,
                edit_trace,
                molecule,
            },
        )
        .collect();
    Ok(Explanation {
        input: ReportInput {
            smiles: write_smiles(m),
            prediction: objective.original_prediction().clone(),
            regression_target: objective.regression_target(),
        },
        counterfactuals,
    })
}
