//! Relation classifier: `softmax(FC(encoder(s)))` over the full inventory.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Instance, RelationInventory};
use crate::encoder::{EncoderConfig, Vocab};
use crate::model::SoftmaxModel;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("inventory has no positive relation")]
    NoPositiveClass,
    #[error("label {label} outside inventory of {classes}")]
    InvalidLabel { label: usize, classes: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Argmax over everything except `excluded`, lowest index on ties.
pub fn argmax_excluding(values: &[f64], excluded: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in values.iter().enumerate() {
        if k == excluded {
            continue;
        }
        if best.map_or(true, |b| v > values[b]) {
            best = Some(k);
        }
    }
    best
}

/// What label generation and the agent need from a classifier.
pub trait RelationPredictor {
    fn predict(&self, inst: &Instance) -> Result<usize, ClassifierError>;
    fn revise(&self, inst: &Instance) -> Result<usize, ClassifierError>;
}

#[derive(Clone, Debug)]
pub struct ClassifierModel {
    pub net: SoftmaxModel,
    pub inventory: RelationInventory,
}

impl ClassifierModel {
    pub fn new(
        config: EncoderConfig,
        vocab: Vocab,
        inventory: RelationInventory,
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ClassifierError> {
        let net = SoftmaxModel::new(config, vocab, inventory.len(), "rc", lr, rng)?;
        Ok(Self { net, inventory })
    }

    pub fn classes(&self) -> usize {
        self.net.classes()
    }

    /// Inference-mode probabilities over all relations.
    pub fn probs(&self, inst: &Instance) -> Result<Vec<f64>, ClassifierError> {
        Ok(self.net.probs(inst)?)
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.net.adam.lr = lr;
    }

    /// One shuffled mini-batch pass; returns the mean per-instance loss.
    pub fn train_epoch(
        &mut self,
        data: &[(&Instance, usize)],
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, ClassifierError> {
        let classes = self.classes();
        if let Some(&(_, label)) = data.iter().find(|(_, l)| *l >= classes) {
            return Err(ClassifierError::InvalidLabel { label, classes });
        }
        Ok(self.net.train_epoch(data, batch_size, rng)?.0)
    }

    /// Predicted relation with its probability.
    pub fn predict_scored(&self, inst: &Instance) -> Result<(usize, f64), ClassifierError> {
        let p = self.probs(inst)?;
        let k = argmax(&p);
        Ok((k, p[k]))
    }

    /// Most likely positive relation with its probability.
    pub fn revise_scored(&self, inst: &Instance) -> Result<(usize, f64), ClassifierError> {
        let p = self.probs(inst)?;
        let k = argmax_excluding(&p, self.inventory.na_index()).ok_or(ClassifierError::NoPositiveClass)?;
        Ok((k, p[k]))
    }

    /// Writes `id\tpredicted relation\tprobability` rows.
    pub fn write_predictions<'a, W: Write>(
        &self,
        instances: impl IntoIterator<Item = &'a Instance>,
        mut out: W,
    ) -> Result<(), ClassifierError> {
        for inst in instances {
            let (k, p) = self.predict_scored(inst)?;
            writeln!(out, "{}\t{}\t{p}", inst.id, self.inventory.name(k))?;
        }
        Ok(())
    }
}

impl RelationPredictor for ClassifierModel {
    fn predict(&self, inst: &Instance) -> Result<usize, ClassifierError> {
        Ok(self.predict_scored(inst)?.0)
    }

    fn revise(&self, inst: &Instance) -> Result<usize, ClassifierError> {
        Ok(self.revise_scored(inst)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthSpec};
    use crate::encoder::PoolingMode;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            mode: PoolingMode::Cnn,
            word_dim: 8,
            pos_dim: 2,
            filters: 6,
            widths: vec![2, 3],
            max_distance: 10,
            dropout: 0.2,
        }
    }

    fn setup(seed: u64, k: usize) -> (ClassifierModel, crate::corpus::Dataset) {
        let spec = SynthSpec {
            n_relations: k,
            n_train: 400,
            n_val: 10,
            n_test: 10,
            na_fraction: 0.25,
            ..SynthSpec::default()
        };
        let (train, _, _) = generate_synthetic(&spec, seed).unwrap();
        let vocab = Vocab::build([&train]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = ClassifierModel::new(small_config(), vocab, train.inventory.clone(), 3e-3, &mut rng).unwrap();
        (m, train)
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.25; 4]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
        assert_eq!(argmax_excluding(&[0.9, 0.02, 0.06, 0.02], 0), Some(2));
        assert_eq!(argmax_excluding(&[0.9, 0.1], 0), Some(1));
        assert_eq!(argmax_excluding(&[0.9], 0), None);
        assert_eq!(argmax_excluding(&[0.3, 0.3, 0.4], 2), Some(0));
    }

    #[test]
    fn uniform_when_output_zeroed() {
        let (mut m, train) = setup(1, 10);
        m.net.zero_output_layer();
        let p = m.probs(&train.instances[0]).unwrap();
        assert_eq!(p.len(), 10);
        assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-15));
        assert_eq!(m.predict(&train.instances[0]).unwrap(), 0);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let (mut m, train) = setup(2, 4);
        m.set_lr(0.0);
        let before = m.net.params.clone();
        let data: Vec<_> = train.instances.iter().map(|i| (i, i.relation)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = m.train_epoch(&data, 64, &mut rng).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert_eq!(m.net.params, before);
    }

    #[test]
    fn one_step_when_batch_covers_data() {
        let (mut m, train) = setup(3, 4);
        let data: Vec<_> = train.instances.iter().map(|i| (i, i.relation)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.train_epoch(&data, data.len(), &mut rng).unwrap();
        assert_eq!(m.net.adam.steps(), 1);
        m.train_epoch(&data, 100, &mut rng).unwrap();
        assert_eq!(m.net.adam.steps(), 1 + 4);
    }

    #[test]
    fn empty_data_is_an_error() {
        let (mut m, _) = setup(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(m.train_epoch(&[], 8, &mut rng).is_err());
    }

    #[test]
    fn fits_separable_synthetic() {
        let (mut m, train) = setup(5, 4);
        let data: Vec<_> = train.instances.iter().map(|i| (i, i.relation)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            m.train_epoch(&data, 32, &mut rng).unwrap();
        }
        let pairs: Vec<(usize, usize)> = train
            .instances
            .iter()
            .map(|i| (i.relation, m.predict(i).unwrap()))
            .collect();
        let (_, _, f1) = crate::eval::micro_f1(&pairs, 0);
        assert!(f1 >= 0.95, "train F1 {f1}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let run = || {
            let (mut m, train) = setup(6, 4);
            let data: Vec<_> = train.instances.iter().map(|i| (i, i.relation)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let loss = m.train_epoch(&data, 50, &mut rng).unwrap();
            (loss, m.net.params)
        };
        let (l1, p1) = run();
        let (l2, p2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(p1, p2);
    }

    #[test]
    fn revise_matches_predict_off_na_and_is_never_na() {
        for seed in 0..4 {
            let (m, train) = setup(10 + seed, 5);
            for inst in train.instances.iter().take(60) {
                let p = m.probs(inst).unwrap();
                let pred = m.predict(inst).unwrap();
                let rev = m.revise(inst).unwrap();
                assert_ne!(rev, 0);
                let brute = (0..p.len()).fold(0, |b, k| if p[k] > p[b] { k } else { b });
                assert_eq!(pred, brute);
                if pred != 0 {
                    assert_eq!(rev, pred);
                }
            }
        }
    }

    #[test]
    fn single_positive_class_always_revised_to_it() {
        let (m, train) = setup(20, 2);
        for inst in train.instances.iter().take(20) {
            assert_eq!(m.revise(inst).unwrap(), 1);
        }
    }

    #[test]
    fn prediction_dump_rows() {
        let (m, train) = setup(21, 3);
        let mut buf = Vec::new();
        m.write_predictions(train.instances.iter().take(3), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].starts_with(&format!("{}\t", train.instances[0].id)));
    }

    proptest! {
        #[test]
        fn argmax_invariant_to_monotone_transforms(
            v in proptest::collection::vec(-5.0f64..5.0, 2..8),
            shift in -10.0f64..10.0,
            scale in 0.01f64..10.0,
        ) {
            let t: Vec<f64> = v.iter().map(|x| x * scale + shift).collect();
            prop_assert_eq!(argmax(&v), argmax(&t));
            let p = crate::nn::softmax(&v);
            let q = crate::nn::softmax(&v.iter().map(|x| x + shift).collect::<Vec<_>>());
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
