//! Denoising agent: a three-way policy over NA instances plus its
//! REINFORCE update with a moving-average baseline.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{argmax, ClassifierError, RelationPredictor};
use crate::corpus::Instance;
use crate::encoder::{EncoderConfig, Pass, Vocab};
use crate::model::SoftmaxModel;
use crate::nn::{self, NnError};

pub const BASELINE_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("instance {0} is not labelled NA")]
    NotNegative(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Keep = 0,
    Discard = 1,
    Revise = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Keep, Action::Discard, Action::Revise];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Option<Self> {
        Self::ALL.get(k).copied()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Keep => "keep",
            Action::Discard => "discard",
            Action::Revise => "revise",
        })
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "keep" => Ok(Action::Keep),
            "discard" => Ok(Action::Discard),
            "revise" => Ok(Action::Revise),
            other => Err(format!("unknown action {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub id: String,
    pub action: Action,
    /// Log-probability of `action` under the policy that chose it.
    pub log_prob: f64,
    /// Set exactly when `action` is `Revise`.
    pub revised_relation: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Mean reward over the last [`BASELINE_WINDOW`] epochs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaselineTracker {
    rewards: VecDeque<f64>,
}

impl BaselineTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn baseline(&self) -> f64 {
        if self.rewards.is_empty() {
            0.0
        } else {
            self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
        }
    }

    pub fn record(&mut self, reward: f64) {
        if self.rewards.len() == BASELINE_WINDOW {
            self.rewards.pop_front();
        }
        self.rewards.push_back(reward);
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.rewards.iter().copied()
    }
}

/// A stochastic policy trainable by REINFORCE.
pub trait Policy {
    type Input: ?Sized;

    /// Adds `scale * d(-log p(action | input))` to the gradient buffers.
    fn accumulate_neg_log_prob_grad(
        &mut self,
        input: &Self::Input,
        action: usize,
        scale: f64,
    ) -> Result<(), NnError>;

    /// Applies and clears the accumulated gradient.
    fn step(&mut self);
}

/// One ascent step on `(R - b) * sum log p(a)` over `samples`, then records
/// `reward`. The baseline excludes the current reward. A zero advantage or
/// an empty sample list leaves the parameters untouched. Returns the
/// advantage used.
pub fn reinforce_update<P: Policy>(
    policy: &mut P,
    samples: &[(&P::Input, usize)],
    reward: f64,
    tracker: &mut BaselineTracker,
) -> Result<f64, NnError> {
    let advantage = reward - tracker.baseline();
    if samples.is_empty() {
        log::warn!("reinforce update with no decisions; skipping the step");
    } else if advantage != 0.0 {
        for &(input, action) in samples {
            policy.accumulate_neg_log_prob_grad(input, action, advantage)?;
        }
        policy.step();
    }
    tracker.record(reward);
    Ok(advantage)
}

/// Samples an index from a probability vector.
pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[derive(Clone, Debug)]
pub struct AgentModel {
    pub net: SoftmaxModel,
}

impl AgentModel {
    pub fn new(config: EncoderConfig, vocab: Vocab, lr: f64, rng: &mut ChaCha8Rng) -> Result<Self, AgentError> {
        Ok(Self {
            net: SoftmaxModel::new(config, vocab, Action::ALL.len(), "da", lr, rng)?,
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.net.adam.lr = lr;
    }

    /// Inference-mode action probabilities `(keep, discard, revise)`.
    pub fn policy(&self, inst: &Instance) -> Result<Vec<f64>, AgentError> {
        Ok(self.net.probs(inst)?)
    }

    /// Decides on every instance of `negatives`, all of which must carry
    /// `na_index`. Revisions take the classifier's best positive relation.
    pub fn act<P: RelationPredictor + ?Sized>(
        &self,
        negatives: &[&Instance],
        na_index: usize,
        classifier: &P,
        mode: ActMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Decision>, AgentError> {
        let mut out = Vec::with_capacity(negatives.len());
        for inst in negatives {
            if inst.relation != na_index {
                return Err(AgentError::NotNegative(inst.id.clone()));
            }
            let scores = self.net.scores(inst)?;
            let log_p = nn::log_softmax(&scores);
            let k = match mode {
                ActMode::Greedy => argmax(&log_p),
                ActMode::Sample => {
                    let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
                    sample_index(&p, rng)
                }
            };
            let action = Action::from_index(k).expect("three outputs");
            let revised_relation = match action {
                Action::Revise => Some(classifier.revise(inst)?),
                _ => None,
            };
            out.push(Decision {
                id: inst.id.clone(),
                action,
                log_prob: log_p[k].min(0.0),
                revised_relation,
            });
        }
        Ok(out)
    }

    /// One shuffled cross-entropy pass against fixed action labels.
    pub fn train_epoch(
        &mut self,
        data: &[(&Instance, usize)],
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, AgentError> {
        Ok(self.net.train_epoch(data, batch_size, rng)?.0)
    }
}

/// Log-probabilities are taken without dropout so they match the
/// probabilities the actions were drawn from.
impl Policy for AgentModel {
    type Input = Instance;

    fn accumulate_neg_log_prob_grad(&mut self, input: &Instance, action: usize, scale: f64) -> Result<(), NnError> {
        self.net.accumulate_xent(input, action, scale, &mut Pass::Eval).map(|_| ())
    }

    fn step(&mut self) {
        self.net.step();
    }
}

/// Context-free policy over a fixed set of arms, trained by plain gradient
/// ascent. Used to sanity-check [`reinforce_update`].
#[derive(Clone, Debug, PartialEq)]
pub struct LogitBandit {
    pub logits: Vec<f64>,
    pub lr: f64,
    grad: Vec<f64>,
}

impl LogitBandit {
    pub fn new(arms: usize, lr: f64) -> Self {
        Self {
            logits: vec![0.0; arms],
            lr,
            grad: vec![0.0; arms],
        }
    }

    pub fn probs(&self) -> Vec<f64> {
        nn::softmax(&self.logits)
    }
}

impl Policy for LogitBandit {
    type Input = ();

    fn accumulate_neg_log_prob_grad(&mut self, _: &(), action: usize, scale: f64) -> Result<(), NnError> {
        let (_, g) = nn::softmax_xent(&self.logits, action)?;
        for (acc, gi) in self.grad.iter_mut().zip(g) {
            *acc += scale * gi;
        }
        Ok(())
    }

    fn step(&mut self) {
        for (l, g) in self.logits.iter_mut().zip(self.grad.iter_mut()) {
            *l -= self.lr * *g;
            *g = 0.0;
        }
    }
}

/// Runs `updates` single-pull REINFORCE steps on a bandit with the given
/// per-arm rewards; returns the final arm probabilities.
pub fn run_bandit(rewards: &[f64], updates: usize, lr: f64, seed: u64) -> Vec<f64> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bandit = LogitBandit::new(rewards.len(), lr);
    let mut tracker = BaselineTracker::new();
    for _ in 0..updates {
        let arm = sample_index(&bandit.probs(), &mut rng);
        reinforce_update(&mut bandit, &[(&(), arm)], rewards[arm], &mut tracker).expect("valid arm");
    }
    bandit.probs()
}
