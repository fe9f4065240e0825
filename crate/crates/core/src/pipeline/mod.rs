//! Pretraining, action-label generation and the per-epoch co-training loop.

mod config;
mod output;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ExperimentConfig, RunMode};
pub use output::{
    load_run_classifier, write_manifest, write_pr_curve, write_predictions, write_run_outputs, RunManifest, CODE_VERSION,
};

use crate::agent::{reinforce_update, ActMode, Action, AgentError, AgentModel, BaselineTracker, Decision};
use crate::classifier::{ClassifierError, ClassifierModel, RelationPredictor};
use crate::corpus::{
    generate_synthetic, heldout_filter, inject_false_negatives, load_linerecords, CorpusError, Dataset, FlipLog,
    Instance, InventoryMode, Split,
};
use crate::encoder::Vocab;
use crate::eval::{self, EvalError, PolicyDistribution, PrPoint};
use crate::nn::NnError;
use crate::AdamState;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("no action label for instance {0}")]
    MissingLabel(String),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Splits after held-out filtering and false-negative injection.
#[derive(Clone, Debug)]
pub struct PreparedData {
    /// Filtered training split before injection.
    pub clean_train: Dataset,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub flips_train: FlipLog,
    pub flips_val: FlipLog,
}

fn load_split(dir: &Path, name: &str, mode: InventoryMode, split: Split) -> Result<Dataset, PipelineError> {
    let path = dir.join(name);
    load_linerecords(&path, mode, split).map_err(|e| match e {
        CorpusError::Io(source) => PipelineError::File {
            path: path.display().to_string(),
            source,
        },
        other => other.into(),
    })
}

/// Loads or generates the corpus, removes test-triple overlap and injects
/// false negatives into train and validation.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData, PipelineError> {
    let (train, val, test) = match &cfg.data_dir {
        Some(dir) => {
            let train = load_split(dir, "train.txt", InventoryMode::Embedded, Split::Train)?;
            let inv = InventoryMode::Explicit(train.inventory.clone());
            let val = load_split(dir, "val.txt", inv.clone(), Split::Validation)?;
            let test = load_split(dir, "test.txt", inv, Split::Test)?;
            (train, val, test)
        }
        None => generate_synthetic(&cfg.synth, cfg.data_seed())?,
    };
    let (train, val) = heldout_filter(&train, &val, &test);
    let (noisy_train, flips_train) = inject_false_negatives(&train, cfg.fn_ratio, cfg.noise_seed())?;
    let (noisy_val, flips_val) = inject_false_negatives(&val, cfg.fn_ratio, cfg.noise_seed().wrapping_add(1))?;
    Ok(PreparedData {
        clean_train: train,
        train: noisy_train,
        val: noisy_val,
        test,
        flips_train,
        flips_val,
    })
}

fn load_vectors(cfg: &ExperimentConfig, net: &mut crate::model::SoftmaxModel) -> Result<(), PipelineError> {
    if let Some(path) = &cfg.word_vectors {
        let file = File::open(path).map_err(|source| PipelineError::File {
            path: path.display().to_string(),
            source,
        })?;
        let hits = net
            .encoder
            .load_word_vectors(BufReader::new(file), &net.vocab, &mut net.params, cfg.freeze_word_vectors)?;
        log::info!("loaded {hits} word vectors from {}", path.display());
    }
    Ok(())
}

pub fn new_classifier(
    cfg: &ExperimentConfig,
    vocab: &Vocab,
    train: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<ClassifierModel, PipelineError> {
    let mut rc = ClassifierModel::new(cfg.encoder.clone(), vocab.clone(), train.inventory.clone(), cfg.lr_rc_pre, rng)?;
    load_vectors(cfg, &mut rc.net)?;
    Ok(rc)
}

pub fn new_agent(cfg: &ExperimentConfig, vocab: &Vocab, rng: &mut ChaCha8Rng) -> Result<AgentModel, PipelineError> {
    let mut da = AgentModel::new(cfg.encoder.clone(), vocab.clone(), cfg.lr_da_pre, rng)?;
    load_vectors(cfg, &mut da.net)?;
    Ok(da)
}

/// Supervised training on the raw labels; returns per-epoch mean losses.
pub fn pretrain_classifier(
    rc: &mut ClassifierModel,
    cfg: &ExperimentConfig,
    train: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, PipelineError> {
    if train.is_empty() {
        return Err(PipelineError::EmptyTrain);
    }
    let data: Vec<(&Instance, usize)> = train.instances.iter().map(|i| (i, i.relation)).collect();
    rc.set_lr(cfg.lr_rc_pre);
    (0..cfg.epochs_rc_pre)
        .map(|_| Ok(rc.train_epoch(&data, cfg.batch_size, rng)?))
        .collect()
}

/// Correct positive prediction -> Revise, correct NA prediction -> Keep,
/// any wrong prediction -> Discard.
pub fn generate_action_labels<P: RelationPredictor + ?Sized>(
    rc: &P,
    train: &Dataset,
) -> Result<BTreeMap<String, Action>, PipelineError> {
    let na = train.inventory.na_index();
    let mut labels = BTreeMap::new();
    for inst in &train.instances {
        let pred = rc.predict(inst)?;
        let action = if pred != inst.relation {
            Action::Discard
        } else if inst.relation == na {
            Action::Keep
        } else {
            Action::Revise
        };
        labels.insert(inst.id.clone(), action);
    }
    Ok(labels)
}

/// Cross-entropy training of the agent against action labels over every
/// training instance; returns per-epoch mean losses.
pub fn pretrain_agent(
    da: &mut AgentModel,
    cfg: &ExperimentConfig,
    train: &Dataset,
    labels: &BTreeMap<String, Action>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, PipelineError> {
    let data = train
        .instances
        .iter()
        .map(|i| {
            labels
                .get(&i.id)
                .map(|a| (i, a.index()))
                .ok_or_else(|| PipelineError::MissingLabel(i.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if data.is_empty() {
        return Err(PipelineError::EmptyTrain);
    }
    da.set_lr(cfg.lr_da_pre);
    (0..cfg.epochs_da_pre)
        .map(|_| Ok(da.train_epoch(&data, cfg.batch_size, rng)?))
        .collect()
}

/// Applies decisions to a dataset: positives pass through, kept NA stays
/// NA, revised instances take their new label, discarded ones are dropped.
pub fn clean<'a>(data: &'a Dataset, decisions: &[Decision]) -> Vec<(&'a Instance, usize)> {
    let by_id: HashMap<&str, &Decision> = decisions.iter().map(|d| (d.id.as_str(), d)).collect();
    let na = data.inventory.na_index();
    data.instances
        .iter()
        .filter_map(|inst| {
            if inst.relation != na {
                return Some((inst, inst.relation));
            }
            match by_id.get(inst.id.as_str()) {
                None => Some((inst, na)),
                Some(d) => match d.action {
                    Action::Keep => Some((inst, na)),
                    Action::Discard => None,
                    Action::Revise => d.revised_relation.map(|r| (inst, r)),
                },
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCounts {
    pub keep: usize,
    pub discard: usize,
    pub revise: usize,
}

impl ActionCounts {
    pub fn of(decisions: &[Decision]) -> Self {
        let mut c = Self::default();
        for d in decisions {
            match d.action {
                Action::Keep => c.keep += 1,
                Action::Discard => c.discard += 1,
                Action::Revise => c.revise += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.keep + self.discard + self.revise
    }
}

/// Per-epoch record. Agent fields are absent in base runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub aborted: bool,
    pub train_loss: Option<f64>,
    /// Micro-F1 of the classifier on the noisy validation labels.
    pub val_f1: f64,
    pub cleaned_train: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_actions: Option<ActionCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_actions: Option<ActionCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleaned_val: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_train: Option<PolicyDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_f1: Option<f64>,
}

/// Decisions an agent epoch produced, in dataset order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochDecisions {
    /// As sampled; these drive the policy gradient.
    pub train: Vec<Decision>,
    /// As applied to the data (differs from `train` only without Revise).
    pub train_applied: Vec<Decision>,
    pub val: Vec<Decision>,
}

fn predictions(rc: &ClassifierModel, data: &Dataset) -> Result<Vec<usize>, PipelineError> {
    data.instances.iter().map(|i| Ok(rc.predict(i)?)).collect()
}

fn discard_revisions(decisions: &[Decision]) -> Vec<Decision> {
    decisions
        .iter()
        .map(|d| match d.action {
            Action::Revise => Decision {
                action: Action::Discard,
                revised_relation: None,
                ..d.clone()
            },
            _ => d.clone(),
        })
        .collect()
}

/// Mutable co-training state.
pub struct CoTrainState {
    pub rc: ClassifierModel,
    pub da: AgentModel,
    pub tracker: BaselineTracker,
    pub rng: ChaCha8Rng,
}

/// One co-training epoch on the original noisy data. Returns the report
/// and the decisions taken.
pub fn cotrain_epoch(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    state: &mut CoTrainState,
    epoch: usize,
) -> Result<(EpochReport, EpochDecisions), PipelineError> {
    let na = data.train.inventory.na_index();
    let train_neg: Vec<&Instance> = data.train.negatives().collect();
    let val_neg: Vec<&Instance> = data.val.negatives().collect();

    let sampled = state.da.act(&train_neg, na, &state.rc, ActMode::Sample, &mut state.rng)?;
    let mut val_dec = state.da.act(&val_neg, na, &state.rc, ActMode::Greedy, &mut state.rng)?;
    let applied = if cfg.mode == RunMode::NoRevise {
        val_dec = discard_revisions(&val_dec);
        discard_revisions(&sampled)
    } else {
        sampled.clone()
    };

    let cleaned_train = clean(&data.train, &applied);
    let has_positive = cleaned_train.iter().any(|&(_, r)| r != na);
    let mut report = EpochReport {
        epoch,
        aborted: false,
        train_loss: None,
        val_f1: 0.0,
        cleaned_train: cleaned_train.len(),
        train_actions: Some(ActionCounts::of(&applied)),
        val_actions: Some(ActionCounts::of(&val_dec)),
        cleaned_val: None,
        reward: None,
        baseline: Some(state.tracker.baseline()),
        policy_train: Some(eval::policy_distribution(&applied, &data.flips_train)),
        revision_accuracy: eval::revision_accuracy(&applied, &data.flips_train),
        test_f1: None,
    };

    if !has_positive {
        log::warn!("epoch {epoch}: cleaned training set has no positives; epoch aborted");
        report.aborted = true;
        report.val_f1 = val_f1(&state.rc, &data.val)?;
    } else {
        report.train_loss = Some(state.rc.train_epoch(&cleaned_train, cfg.batch_size, &mut state.rng)?);
        let preds = predictions(&state.rc, &data.val)?;
        let noisy: Vec<(usize, usize)> = data.val.instances.iter().map(|i| i.relation).zip(preds.iter().copied()).collect();
        report.val_f1 = eval::micro_f1(&noisy, na).2;

        let pred_of: HashMap<&str, usize> = data.val.instances.iter().map(|i| i.id.as_str()).zip(preds).collect();
        let cleaned_val: Vec<(usize, usize)> = clean(&data.val, &val_dec)
            .into_iter()
            .map(|(inst, gold)| (gold, pred_of[inst.id.as_str()]))
            .collect();
        let reward = eval::micro_f1(&cleaned_val, na).2;
        report.cleaned_val = Some(cleaned_val.len());
        report.reward = Some(reward);

        let by_id: HashMap<&str, &Instance> = train_neg.iter().map(|i| (i.id.as_str(), *i)).collect();
        let samples: Vec<(&Instance, usize)> = sampled
            .iter()
            .map(|d| (by_id[d.id.as_str()], d.action.index()))
            .collect();
        reinforce_update(&mut state.da, &samples, reward, &mut state.tracker)?;
    }

    Ok((
        report,
        EpochDecisions {
            train: sampled,
            train_applied: applied,
            val: val_dec,
        },
    ))
}

fn val_f1(rc: &ClassifierModel, val: &Dataset) -> Result<f64, PipelineError> {
    let pairs: Vec<(usize, usize)> = val
        .instances
        .iter()
        .map(|i| Ok((i.relation, rc.predict(i)?)))
        .collect::<Result<_, PipelineError>>()?;
    Ok(eval::micro_f1(&pairs, val.inventory.na_index()).2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub instances: usize,
    pub gold_positives: usize,
}

/// Test-set metrics, PR curve and per-instance `(predicted, probability)`.
pub fn evaluate(
    rc: &ClassifierModel,
    test: &Dataset,
) -> Result<(TestMetrics, Vec<PrPoint>, Vec<(usize, f64)>), PipelineError> {
    let na = test.inventory.na_index();
    let scored: Vec<(usize, f64)> = test
        .instances
        .iter()
        .map(|i| Ok(rc.predict_scored(i)?))
        .collect::<Result<_, PipelineError>>()?;
    let pairs: Vec<(usize, usize)> = test.instances.iter().zip(&scored).map(|(i, s)| (i.relation, s.0)).collect();
    let (precision, recall, f1) = eval::micro_f1(&pairs, na);
    let gold_positives = test.positive_count();
    let triples: Vec<(usize, usize, f64)> = test
        .instances
        .iter()
        .zip(&scored)
        .map(|(i, &(p, c))| (i.relation, p, c))
        .collect();
    let curve = if gold_positives > 0 {
        eval::pr_curve(&triples, na, gold_positives)?
    } else {
        Vec::new()
    };
    Ok((
        TestMetrics {
            precision,
            recall,
            f1,
            instances: test.len(),
            gold_positives,
        },
        curve,
        scored,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub mode: RunMode,
    pub seed: u64,
    pub data_seed: u64,
    pub noise_seed: u64,
    pub fn_ratio: f64,
    pub train_instances: usize,
    pub train_flips: usize,
    pub val_flips: usize,
    pub test: TestMetrics,
    pub final_val_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_train: Option<PolicyDistribution>,
}

/// Everything a run produces.
pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub data: PreparedData,
    pub vocab: Vocab,
    pub rc: ClassifierModel,
    pub da: Option<AgentModel>,
    pub pretrain_rc_losses: Vec<f64>,
    pub pretrain_da_losses: Vec<f64>,
    pub action_labels: BTreeMap<String, Action>,
    pub reports: Vec<EpochReport>,
    pub decisions: Vec<EpochDecisions>,
    pub final_metrics: FinalMetrics,
    pub pr_curve: Vec<PrPoint>,
    pub test_predictions: Vec<(usize, f64)>,
}

/// Full run: data preparation, pretraining (per mode), co-training and
/// the final test evaluation.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    if data.train.is_empty() {
        return Err(PipelineError::EmptyTrain);
    }
    let vocab = Vocab::build([&data.train, &data.val]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rc = new_classifier(cfg, &vocab, &data.train, &mut rng)?;
    let mut da = if cfg.mode.uses_agent() {
        Some(new_agent(cfg, &vocab, &mut rng)?)
    } else {
        None
    };

    let mut pretrain_rc_losses = Vec::new();
    let mut pretrain_da_losses = Vec::new();
    let mut action_labels = BTreeMap::new();
    if cfg.mode != RunMode::NoPretrain {
        pretrain_rc_losses = pretrain_classifier(&mut rc, cfg, &data.train, &mut rng)?;
        if let Some(da) = da.as_mut() {
            action_labels = generate_action_labels(&rc, &data.train)?;
            pretrain_da_losses = pretrain_agent(da, cfg, &data.train, &action_labels, &mut rng)?;
        }
    }

    rc.net.adam = AdamState::new(&rc.net.params, cfg.lr_rc_co);
    let mut reports = Vec::with_capacity(cfg.epochs_co);
    let mut decisions = Vec::new();
    match da.take() {
        None => {
            let all: Vec<(&Instance, usize)> = data.train.instances.iter().map(|i| (i, i.relation)).collect();
            for epoch in 0..cfg.epochs_co {
                let loss = rc.train_epoch(&all, cfg.batch_size, &mut rng)?;
                reports.push(EpochReport {
                    epoch,
                    aborted: false,
                    train_loss: Some(loss),
                    val_f1: val_f1(&rc, &data.val)?,
                    cleaned_train: all.len(),
                    train_actions: None,
                    val_actions: None,
                    cleaned_val: None,
                    reward: None,
                    baseline: None,
                    policy_train: None,
                    revision_accuracy: None,
                    test_f1: None,
                });
            }
        }
        Some(mut agent) => {
            agent.net.adam = AdamState::new(&agent.net.params, cfg.lr_da_co);
            let mut state = CoTrainState {
                rc,
                da: agent,
                tracker: BaselineTracker::new(),
                rng,
            };
            for epoch in 0..cfg.epochs_co {
                let (report, dec) = cotrain_epoch(cfg, &data, &mut state, epoch)?;
                log::info!(
                    "epoch {epoch}: loss {:?} val_f1 {:.4} reward {:?}",
                    report.train_loss,
                    report.val_f1,
                    report.reward
                );
                reports.push(report);
                decisions.push(dec);
            }
            rc = state.rc;
            da = Some(state.da);
        }
    }

    let (test, pr_curve, test_predictions) = evaluate(&rc, &data.test)?;
    if let Some(last) = reports.last_mut() {
        last.test_f1 = Some(test.f1);
    }
    let last = reports.last();
    let final_metrics = FinalMetrics {
        mode: cfg.mode,
        seed: cfg.seed,
        data_seed: cfg.data_seed(),
        noise_seed: cfg.noise_seed(),
        fn_ratio: cfg.fn_ratio,
        train_instances: data.train.len(),
        train_flips: data.flips_train.len(),
        val_flips: data.flips_val.len(),
        test,
        final_val_f1: last.map(|r| r.val_f1),
        revision_accuracy: last.and_then(|r| r.revision_accuracy),
        policy_train: last.and_then(|r| r.policy_train),
    };
    Ok(RunOutcome {
        config: cfg.clone(),
        data,
        vocab,
        rc,
        da,
        pretrain_rc_losses,
        pretrain_da_losses,
        action_labels,
        reports,
        decisions,
        final_metrics,
        pr_curve,
        test_predictions,
    })
}
