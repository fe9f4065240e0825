use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fnd_core::agent::{Action, AgentModel, BaselineTracker, Decision};
use fnd_core::classifier::{ClassifierModel, RelationPredictor};
use fnd_core::encoder::{EncoderConfig, PoolingMode, Vocab};
use fnd_core::pipeline::{
    self, cotrain_epoch, generate_action_labels, prepare_data, pretrain_agent, pretrain_classifier, run_experiment,
    CoTrainState, ExperimentConfig, PreparedData, RunMode,
};
use fnd_core::AdamState;

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk();
    cfg.encoder = EncoderConfig {
        mode: PoolingMode::Pcnn,
        word_dim: 8,
        pos_dim: 2,
        filters: 4,
        widths: vec![2, 3],
        max_distance: 30,
        dropout: 0.5,
    };
    cfg.batch_size = 16;
    cfg.epochs_rc_pre = 2;
    cfg.epochs_da_pre = 2;
    cfg.epochs_co = 7;
    cfg.fn_ratio = 0.3;
    cfg.synth.n_relations = 4;
    cfg.synth.n_train = 200;
    cfg.synth.n_val = 60;
    cfg.synth.n_test = 60;
    cfg
}

fn state(cfg: &ExperimentConfig, data: &PreparedData) -> CoTrainState {
    let vocab = Vocab::build([&data.train, &data.val]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rc = pipeline::new_classifier(cfg, &vocab, &data.train, &mut rng).unwrap();
    let mut da = pipeline::new_agent(cfg, &vocab, &mut rng).unwrap();
    da.net.adam = AdamState::new(&da.net.params, cfg.lr_da_co);
    CoTrainState {
        rc,
        da,
        tracker: BaselineTracker::new(),
        rng,
    }
}

/// Makes the agent choose `action` with probability ~1 and stop learning.
fn force(da: &mut AgentModel, action: Action) {
    da.net.zero_output_layer();
    let b = da.net.output_bias();
    da.net.params.value_mut(b).set(0, action.index(), 60.0);
    da.net.adam = AdamState::new(&da.net.params, 1e-12);
}

fn ids<'a>(it: impl Iterator<Item = &'a str>) -> BTreeSet<String> {
    it.map(String::from).collect()
}

#[test]
fn epoch_invariants_hold_over_a_run() {
    let cfg = ExperimentConfig { mode: RunMode::Hfnd, ..small() };
    let run = run_experiment(&cfg).unwrap();
    let na = run.data.train.inventory.na_index();
    let train_neg = ids(run.data.train.negatives().map(|i| i.id.as_str()));
    let val_neg = ids(run.data.val.negatives().map(|i| i.id.as_str()));
    let positives = ids(run.data.train.positives().map(|i| i.id.as_str()));

    let mut rewards = Vec::new();
    for (rep, dec) in run.reports.iter().zip(&run.decisions) {
        assert_eq!(rep.train_actions.unwrap().total(), train_neg.len());
        assert_eq!(rep.val_actions.unwrap().total(), val_neg.len());
        assert_eq!(ids(dec.train.iter().map(|d| d.id.as_str())), train_neg);
        assert_eq!(ids(dec.val.iter().map(|d| d.id.as_str())), val_neg);

        let cleaned = pipeline::clean(&run.data.train, &dec.train_applied);
        let kept_pos = ids(cleaned.iter().filter(|(i, _)| i.relation != na).map(|(i, _)| i.id.as_str()));
        assert_eq!(kept_pos, positives);
        for d in dec.train.iter().chain(&dec.val) {
            match d.action {
                Action::Revise => assert!(matches!(d.revised_relation, Some(r) if r != na)),
                _ => assert_eq!(d.revised_relation, None),
            }
        }
        for (inst, label) in &cleaned {
            if inst.relation == na && *label != na {
                let d = dec.train_applied.iter().find(|d| d.id == inst.id).unwrap();
                assert_eq!(d.action, Action::Revise);
            }
        }

        let window = &rewards[rewards.len().saturating_sub(5)..];
        let expected = if window.is_empty() { 0.0 } else { window.iter().sum::<f64>() / window.len() as f64 };
        assert!((rep.baseline.unwrap() - expected).abs() < 1e-12, "epoch {}", rep.epoch);
        if let Some(r) = rep.reward {
            rewards.push(r);
        }
    }
    assert!(rewards.len() > 5);
}

#[test]
fn forced_keep_trains_on_the_original_labels() {
    let cfg = small();
    let data = prepare_data(&cfg).unwrap();
    let mut st = state(&cfg, &data);
    force(&mut st.da, Action::Keep);
    let (rep, dec) = cotrain_epoch(&cfg, &data, &mut st, 0).unwrap();
    let a = rep.train_actions.unwrap();
    assert_eq!((a.discard, a.revise), (0, 0));
    let cleaned = pipeline::clean(&data.train, &dec.train_applied);
    let original: Vec<(String, usize)> = data.train.instances.iter().map(|i| (i.id.clone(), i.relation)).collect();
    let got: Vec<(String, usize)> = cleaned.iter().map(|(i, r)| (i.id.clone(), *r)).collect();
    assert_eq!(got, original);
    assert_eq!(rep.cleaned_train, data.train.len());
}

#[test]
fn forced_discard_leaves_only_positives() {
    let cfg = small();
    let data = prepare_data(&cfg).unwrap();
    let mut st = state(&cfg, &data);
    force(&mut st.da, Action::Discard);
    let (rep, _) = cotrain_epoch(&cfg, &data, &mut st, 0).unwrap();
    let a = rep.train_actions.unwrap();
    assert_eq!((a.keep, a.revise), (0, 0));
    assert_eq!(rep.cleaned_train, data.train.positive_count());
}

#[test]
fn consecutive_epochs_start_from_the_same_labels() {
    let cfg = small();
    let data = prepare_data(&cfg).unwrap();
    let snapshot: Vec<usize> = data.train.instances.iter().map(|i| i.relation).collect();
    let mut st = state(&cfg, &data);
    force(&mut st.da, Action::Revise);
    let (first, _) = cotrain_epoch(&cfg, &data, &mut st, 0).unwrap();
    assert_eq!(first.train_actions.unwrap().revise, data.train.negatives().count());
    assert_eq!(data.train.instances.iter().map(|i| i.relation).collect::<Vec<_>>(), snapshot);
    let (second, dec) = cotrain_epoch(&cfg, &data, &mut st, 1).unwrap();
    assert_eq!(second.train_actions.unwrap().total(), data.train.negatives().count());
    assert!(dec.train.iter().all(|d| data.train.negatives().any(|i| i.id == d.id)));
}

#[test]
fn no_revise_mode_applies_revisions_as_discards() {
    let cfg = ExperimentConfig { mode: RunMode::NoRevise, ..small() };
    let data = prepare_data(&cfg).unwrap();
    let mut st = state(&cfg, &data);
    force(&mut st.da, Action::Revise);
    let (rep, dec) = cotrain_epoch(&cfg, &data, &mut st, 0).unwrap();
    assert!(dec.train.iter().all(|d| d.action == Action::Revise));
    assert!(dec.train_applied.iter().all(|d| d.action == Action::Discard));
    assert_eq!(rep.val_actions.unwrap().revise, 0);
    assert_eq!(rep.cleaned_train, data.train.positive_count());
}

#[test]
fn zero_ratio_has_nothing_to_fix() {
    let cfg = ExperimentConfig { fn_ratio: 0.0, ..small() };
    let data = prepare_data(&cfg).unwrap();
    assert!(data.flips_train.is_empty() && data.flips_val.is_empty());
    assert_eq!(data.train.instances, data.clean_train.instances);
    let run = run_experiment(&ExperimentConfig { epochs_co: 1, ..cfg }).unwrap();
    assert_eq!(run.final_metrics.revision_accuracy, None);
    let pd = run.final_metrics.policy_train.unwrap();
    assert_eq!(pd.population(1), 0);
}

#[test]
fn zero_pretrain_epochs_leave_models_at_init() {
    let cfg = ExperimentConfig {
        epochs_rc_pre: 0,
        epochs_da_pre: 0,
        ..small()
    };
    let data = prepare_data(&cfg).unwrap();
    let vocab = Vocab::build([&data.train, &data.val]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rc = pipeline::new_classifier(&cfg, &vocab, &data.train, &mut rng).unwrap();
    let mut da = pipeline::new_agent(&cfg, &vocab, &mut rng).unwrap();
    let (rc0, da0) = (rc.net.params.clone(), da.net.params.clone());
    assert!(pretrain_classifier(&mut rc, &cfg, &data.train, &mut rng).unwrap().is_empty());
    let labels = generate_action_labels(&rc, &data.train).unwrap();
    assert!(pretrain_agent(&mut da, &cfg, &data.train, &labels, &mut rng).unwrap().is_empty());
    assert_eq!(rc.net.params, rc0);
    assert_eq!(da.net.params, da0);
}

fn desk_data() -> (ExperimentConfig, PreparedData, Vocab) {
    let cfg = ExperimentConfig::desk();
    let data = prepare_data(&cfg).unwrap();
    let vocab = Vocab::build([&data.train, &data.val]);
    (cfg, data, vocab)
}

#[test]
fn pretrained_classifier_beats_chance_on_train() {
    let (cfg, data, vocab) = desk_data();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rc = pipeline::new_classifier(&cfg, &vocab, &data.train, &mut rng).unwrap();
    pretrain_classifier(&mut rc, &cfg, &data.train, &mut rng).unwrap();
    let correct = data
        .train
        .instances
        .iter()
        .filter(|i| rc.predict(i).unwrap() == i.relation)
        .count();
    let k = data.train.inventory.len() as f64;
    assert!(correct as f64 / data.train.len() as f64 > 1.0 / k);
}

#[test]
fn all_keep_labels_train_a_keep_policy() {
    let (cfg, data, vocab) = desk_data();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut da = pipeline::new_agent(&cfg, &vocab, &mut rng).unwrap();
    let labels: BTreeMap<String, Action> = data.train.instances.iter().map(|i| (i.id.clone(), Action::Keep)).collect();
    pretrain_agent(&mut da, &cfg, &data.train, &labels, &mut rng).unwrap();
    let keep = data
        .train
        .instances
        .iter()
        .filter(|i| {
            let p = da.policy(i).unwrap();
            p[0] >= p[1] && p[0] >= p[2]
        })
        .count();
    assert!(keep as f64 >= 0.95 * data.train.len() as f64, "{keep}");
}

#[test]
fn agent_pretraining_loss_does_not_rise_early() {
    let (cfg, data, vocab) = desk_data();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rc = pipeline::new_classifier(&cfg, &vocab, &data.train, &mut rng).unwrap();
    pretrain_classifier(&mut rc, &cfg, &data.train, &mut rng).unwrap();
    let labels = generate_action_labels(&rc, &data.train).unwrap();
    let mut da = pipeline::new_agent(&cfg, &vocab, &mut rng).unwrap();
    let cfg = ExperimentConfig { epochs_da_pre: 5, ..cfg };
    let losses = pretrain_agent(&mut da, &cfg, &data.train, &labels, &mut rng).unwrap();
    assert_eq!(losses.len(), 5);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "{losses:?}");
    }
}

#[test]
fn missing_action_label_is_an_error() {
    let cfg = small();
    let data = prepare_data(&cfg).unwrap();
    let vocab = Vocab::build([&data.train]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut da = AgentModel::new(cfg.encoder.clone(), vocab, 1e-3, &mut rng).unwrap();
    let mut labels: BTreeMap<String, Action> = data.train.instances.iter().map(|i| (i.id.clone(), Action::Keep)).collect();
    let dropped = data.train.instances[3].id.clone();
    labels.remove(&dropped);
    let err = pretrain_agent(&mut da, &cfg, &data.train, &labels, &mut rng).unwrap_err();
    assert!(err.to_string().contains(&dropped));
}

#[test]
fn runs_are_reproducible() {
    let cfg = ExperimentConfig { epochs_co: 3, ..small() };
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.decisions, b.decisions);
    assert_eq!(a.rc.net.params, b.rc.net.params);
    let c = run_experiment(&ExperimentConfig { seed: cfg.seed + 1, ..cfg }).unwrap();
    assert_ne!(a.decisions, c.decisions);
}

#[test]
fn clean_drops_revisions_without_a_relation() {
    let cfg = small();
    let data = prepare_data(&cfg).unwrap();
    let neg = data.train.negatives().next().unwrap();
    let d = Decision {
        id: neg.id.clone(),
        action: Action::Discard,
        log_prob: -1.0,
        revised_relation: None,
    };
    let cleaned = pipeline::clean(&data.train, &[d]);
    assert_eq!(cleaned.len(), data.train.len() - 1);
    assert!(cleaned.iter().all(|(i, _)| i.id != neg.id));
}

#[test]
fn classifier_revision_never_returns_na() {
    let cfg = small();
    let data = prepare_data(&cfg).unwrap();
    let vocab = Vocab::build([&data.train]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rc = ClassifierModel::new(cfg.encoder.clone(), vocab, data.train.inventory.clone(), 1e-3, &mut rng).unwrap();
    let na = data.train.inventory.na_index();
    assert!(data.train.instances.iter().all(|i| rc.revise(i).unwrap() != na));
}

#[test]
fn shipped_configs_match_the_presets() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let read = |name: &str| ExperimentConfig::from_text(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap();
    assert_eq!(read("desk.conf"), ExperimentConfig::desk());
    assert_eq!(read("full.conf"), ExperimentConfig::default());
}
