//! Encoder plus fully connected softmax layer, with its own parameters,
//! optimizer state and vocabulary. Both the relation classifier and the
//! denoising agent are thin wrappers around [`SoftmaxModel`].

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Instance;
use crate::encoder::{EncodeTrace, Encoder, EncoderConfig, Pass, Vocab};
use crate::nn::{self, NnError, ParamId};
use crate::{AdamState, Matrix, ParamSet};

pub struct Trace {
    encode: EncodeTrace,
    feature: Matrix,
}

#[derive(Clone, Debug)]
pub struct SoftmaxModel {
    pub encoder: Encoder,
    pub vocab: Vocab,
    pub params: ParamSet,
    pub adam: AdamState,
    out_w: ParamId,
    out_b: ParamId,
    classes: usize,
}

impl SoftmaxModel {
    pub fn new(
        config: EncoderConfig,
        vocab: Vocab,
        classes: usize,
        prefix: &str,
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let mut params = ParamSet::new();
        let encoder = Encoder::new(config, vocab.len(), prefix, &mut params, rng)?;
        let d = encoder.config.feature_dim();
        let bound = 1.0 / (d as f64).sqrt();
        let out_w = params.add(format!("{prefix}.fc.weight"), Matrix::uniform(d, classes, bound, rng));
        let out_b = params.add(format!("{prefix}.fc.bias"), Matrix::uniform(1, classes, bound, rng));
        let adam = AdamState::new(&params, lr);
        Ok(Self {
            encoder,
            vocab,
            params,
            adam,
            out_w,
            out_b,
            classes,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn output_weight(&self) -> ParamId {
        self.out_w
    }

    pub fn output_bias(&self) -> ParamId {
        self.out_b
    }

    /// Zeroes the output layer, making every prediction uniform.
    pub fn zero_output_layer(&mut self) {
        self.params.value_mut(self.out_w).fill(0.0);
        self.params.value_mut(self.out_b).fill(0.0);
    }

    /// Pre-softmax scores `FC(encoder(s))` plus the trace for backward.
    pub fn scores_traced(
        &self,
        inst: &Instance,
        params: &ParamSet,
        pass: &mut Pass<'_>,
    ) -> Result<(Vec<f64>, Trace), NnError> {
        let (feature, encode) = self.encoder.encode(inst, &self.vocab, params, pass)?;
        let feature = Matrix::row_vector(feature.0);
        let out = nn::affine(&feature, params.value(self.out_w), params.value(self.out_b).data())?;
        Ok((out.into_vec(), Trace { encode, feature }))
    }

    /// Inference-mode scores with the model's own parameters.
    pub fn scores(&self, inst: &Instance) -> Result<Vec<f64>, NnError> {
        Ok(self.scores_traced(inst, &self.params, &mut Pass::Eval)?.0)
    }

    /// Inference-mode class probabilities.
    pub fn probs(&self, inst: &Instance) -> Result<Vec<f64>, NnError> {
        Ok(nn::softmax(&self.scores(inst)?))
    }

    /// Backpropagates `grad_scores` into `params`' gradient buffers.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_scores: &[f64],
        params: &mut ParamSet,
    ) -> Result<(), NnError> {
        let g = Matrix::row_vector(grad_scores.to_vec());
        let grads = nn::affine_backward(&trace.feature, params.value(self.out_w), &g)?;
        params.accumulate(self.out_w, 1.0, &grads.w)?;
        params.accumulate(self.out_b, 1.0, &Matrix::row_vector(grads.b))?;
        self.encoder.backward(&trace.encode, grads.x.data(), params)
    }

    /// Cross-entropy loss of one instance; adds `scale * gradient` to the
    /// model's gradient buffers.
    pub fn accumulate_xent(
        &mut self,
        inst: &Instance,
        target: usize,
        scale: f64,
        pass: &mut Pass<'_>,
    ) -> Result<f64, NnError> {
        let (scores, trace) = self.scores_traced(inst, &self.params, pass)?;
        let (loss, mut grad) = nn::softmax_xent(&scores, target)?;
        grad.iter_mut().for_each(|g| *g *= scale);
        let mut params = std::mem::take(&mut self.params);
        let res = self.backward(&trace, &grad, &mut params);
        self.params = params;
        res.map(|_| loss)
    }

    pub fn step(&mut self) {
        nn::adam_step(&mut self.params, &mut self.adam);
    }

    /// One pass of mini-batch cross-entropy training over `data`, shuffled
    /// with `rng`. Each batch contributes its mean gradient to one Adam
    /// step. Returns the mean per-instance loss and the number of steps.
    pub fn train_epoch(
        &mut self,
        data: &[(&Instance, usize)],
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, usize), NnError> {
        if data.is_empty() {
            return Err(NnError::EmptyInput("train_epoch"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng);
        let batch_size = batch_size.max(1);
        let mut total = 0.0;
        let mut steps = 0;
        self.params.zero_grad();
        for chunk in order.chunks(batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            for &k in chunk {
                let (inst, target) = data[k];
                total += self.accumulate_xent(inst, target, scale, &mut Pass::Train(rng))?;
            }
            self.step();
            steps += 1;
        }
        Ok((total / data.len() as f64, steps))
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), NnError> {
        nn::write_checkpoint(&self.params, w)
    }

    pub fn load<R: Read>(&mut self, r: R) -> Result<(), NnError> {
        let entries = nn::read_checkpoint(r)?;
        self.params.load_values(entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;
    use crate::encoder::PoolingMode;
    use rand::SeedableRng;

    fn sentence(tokens: &[&str], head: usize, tail: usize) -> Instance {
        Instance {
            id: "s".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            head: Span::new(head, head),
            tail: Span::new(tail, tail),
            relation: 0,
        }
    }

    fn config(mode: PoolingMode) -> EncoderConfig {
        EncoderConfig {
            mode,
            word_dim: 6,
            pos_dim: 3,
            filters: 4,
            widths: vec![2, 3],
            max_distance: 5,
            dropout: 0.3,
        }
    }

    /// Full encoder -> FC -> softmax cross-entropy, analytic gradients vs
    /// central differences, dropout masks pinned by reseeding.
    fn composed_error(mode: PoolingMode, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = Vocab::from_tokens(["a", "b", "c", "d", "e"]);
        let mut model = SoftmaxModel::new(config(mode), vocab, 4, "m", 1e-3, &mut rng).unwrap();
        let inst = sentence(&["a", "b", "c", "zz", "d", "e", "a"], 1, 4);
        let target = 2;
        model.params.zero_grad();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed + 100);
        model
            .accumulate_xent(&inst, target, 1.0, &mut Pass::Train(&mut drop_rng))
            .unwrap();
        let m = model.clone();
        nn::grad_check_params(
            &model.params,
            |p| {
                let mut r = ChaCha8Rng::seed_from_u64(seed + 100);
                let (s, _) = m.scores_traced(&inst, p, &mut Pass::Train(&mut r)).unwrap();
                nn::softmax_xent(&s, target).unwrap().0
            },
            1e-5,
            1,
        )
        .unwrap()
    }

    #[test]
    fn composed_gradients_cnn_and_pcnn() {
        for seed in 0..3 {
            for mode in [PoolingMode::Cnn, PoolingMode::Pcnn] {
                let err = composed_error(mode, seed);
                assert!(err < 1e-4, "{mode} seed {seed}: {err}");
            }
        }
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vocab = Vocab::from_tokens(["a", "b"]);
        let mut model = SoftmaxModel::new(config(PoolingMode::Cnn), vocab, 5, "m", 1e-3, &mut rng).unwrap();
        model.zero_output_layer();
        let p = model.probs(&sentence(&["a", "b", "a"], 0, 2)).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vocab = Vocab::from_tokens(["a", "b"]);
        let a = SoftmaxModel::new(config(PoolingMode::Pcnn), vocab.clone(), 3, "m", 1e-3, &mut rng).unwrap();
        let mut b = SoftmaxModel::new(config(PoolingMode::Pcnn), vocab, 3, "m", 1e-3, &mut rng).unwrap();
        assert_ne!(a.params, b.params);
        let mut buf = Vec::new();
        a.save(&mut buf).unwrap();
        b.load(buf.as_slice()).unwrap();
        assert_eq!(a.params, b.params);
    }
}
