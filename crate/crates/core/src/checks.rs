//! Finite-difference verification of every backward pass, usable from
//! tests and the command line.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{AgentModel, Policy};
use crate::classifier::ClassifierModel;
use crate::corpus::{Instance, RelationInventory, Span};
use crate::encoder::{Encoder, EncoderConfig, Pass, PoolingMode, Vocab};
use crate::model::SoftmaxModel;
use crate::nn::{self, NnError};
use crate::{Matrix, ParamSet};

pub const LAYER_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;
const MODEL_STEP: f64 = 1e-5;
/// Factor applied to analytic gradients when a fault is planted.
const CORRUPTION: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Layers,
    Encoder,
    Classifier,
    Agent,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::Layers, Scope::Encoder, Scope::Classifier, Scope::Agent];
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Layers => "layers",
            Scope::Encoder => "encoder",
            Scope::Classifier => "classifier",
            Scope::Agent => "agent",
        })
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scope::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .ok_or_else(|| format!("unknown scope {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::uniform(rows, cols, 1.0, rng)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Checker {
    rows: Vec<CheckRow>,
    corrupt: bool,
}

impl Checker {
    fn check<F: FnMut(&[f64]) -> f64>(&mut self, name: String, f: F, point: &[f64], analytic: &[f64], tol: f64) -> Result<(), NnError> {
        let analytic: Vec<f64> = if self.corrupt {
            analytic.iter().map(|g| g * CORRUPTION).collect()
        } else {
            analytic.to_vec()
        };
        let step = if tol == LAYER_TOLERANCE { STEP } else { MODEL_STEP };
        let error = nn::grad_check(f, point, &analytic, step)?;
        self.rows.push(CheckRow { name, error, tolerance: tol });
        Ok(())
    }

    fn check_params<F: FnMut(&ParamSet) -> f64>(&mut self, name: String, params: &ParamSet, loss: F) -> Result<(), NnError> {
        let params = if self.corrupt {
            let mut p = params.clone();
            p.scale_grad(CORRUPTION);
            p
        } else {
            params.clone()
        };
        let error = nn::grad_check_params(&params, loss, MODEL_STEP, 1)?;
        self.rows.push(CheckRow {
            name,
            error,
            tolerance: MODEL_TOLERANCE,
        });
        Ok(())
    }
}

fn layer_checks(c: &mut Checker, rng: &mut ChaCha8Rng) -> Result<(), NnError> {
    let tol = LAYER_TOLERANCE;

    let (x, w, b) = (random(3, 4, rng), random(4, 5, rng), random(1, 5, rng).into_vec());
    let g = random(3, 5, rng);
    let grads = nn::affine_backward(&x, &w, &g)?;
    let loss = |x: &Matrix, w: &Matrix, b: &[f64]| dot(nn::affine(x, w, b).unwrap().data(), g.data());
    c.check("affine.x".into(), |p| loss(&Matrix::from_vec(3, 4, p.to_vec()).unwrap(), &w, &b), x.data(), grads.x.data(), tol)?;
    c.check("affine.w".into(), |p| loss(&x, &Matrix::from_vec(4, 5, p.to_vec()).unwrap(), &b), w.data(), grads.w.data(), tol)?;
    c.check("affine.b".into(), |p| loss(&x, &w, p), &b, &grads.b, tol)?;

    for width in 1..=3 {
        let (l, d, h) = (6, 4, 3);
        let input = random(l, d, rng);
        let bank = random(h, width * d, rng);
        let bias = random(1, h, rng).into_vec();
        let g = random(h, l - width + 1, rng);
        let grads = nn::conv_seq_backward(&input, &bank, width, &g)?;
        let loss = |i: &Matrix, k: &Matrix, b: &[f64]| dot(nn::conv_seq(i, k, b, width).unwrap().data(), g.data());
        c.check(
            format!("conv.input(f={width})"),
            |p| loss(&Matrix::from_vec(l, d, p.to_vec()).unwrap(), &bank, &bias),
            input.data(),
            grads.input.data(),
            tol,
        )?;
        c.check(
            format!("conv.bank(f={width})"),
            |p| loss(&input, &Matrix::from_vec(h, width * d, p.to_vec()).unwrap(), &bias),
            bank.data(),
            grads.bank.data(),
            tol,
        )?;
        c.check(format!("conv.bias(f={width})"), |p| loss(&input, &bank, p), &bias, &grads.bias, tol)?;
    }

    let m = random(4, 7, rng);
    let g = random(1, 4, rng).into_vec();
    let analytic = nn::max_over_time(&m)?.backward(&g, 4, 7)?;
    c.check(
        "max_over_time".into(),
        |p| dot(&nn::max_over_time(&Matrix::from_vec(4, 7, p.to_vec()).unwrap()).unwrap().values, &g),
        m.data(),
        analytic.data(),
        tol,
    )?;

    for (cut1, cut2) in [(2, 5), (0, 3), (3, 3), (4, 7)] {
        let g = random(1, 12, rng).into_vec();
        let analytic = nn::piecewise_max(&m, cut1, cut2)?.backward(&g, 4, 7)?;
        c.check(
            format!("piecewise_max({cut1},{cut2})"),
            |p| dot(&nn::piecewise_max(&Matrix::from_vec(4, 7, p.to_vec()).unwrap(), cut1, cut2).unwrap().values, &g),
            m.data(),
            analytic.data(),
            tol,
        )?;
    }

    let logits = random(1, 6, rng).into_vec();
    for target in [0, 3, 5] {
        let (_, grad) = nn::softmax_xent(&logits, target)?;
        c.check(
            format!("softmax_xent(target={target})"),
            |p| nn::softmax_xent(p, target).unwrap().0,
            &logits,
            &grad,
            tol,
        )?;
    }

    let x = random(3, 5, rng);
    let g = random(3, 5, rng);
    let mask_seed: u64 = rng.gen();
    let (_, mask) = nn::dropout(&x, 0.4, &mut ChaCha8Rng::seed_from_u64(mask_seed), true)?;
    let analytic = mask.apply(&g);
    c.check(
        "dropout".into(),
        |p| {
            let xm = Matrix::from_vec(3, 5, p.to_vec()).unwrap();
            let (y, _) = nn::dropout(&xm, 0.4, &mut ChaCha8Rng::seed_from_u64(mask_seed), true).unwrap();
            dot(y.data(), g.data())
        },
        x.data(),
        analytic.data(),
        tol,
    )?;
    Ok(())
}

fn small_config(mode: PoolingMode) -> EncoderConfig {
    EncoderConfig {
        mode,
        word_dim: 6,
        pos_dim: 3,
        filters: 4,
        widths: vec![1, 2, 3],
        max_distance: 5,
        dropout: 0.3,
    }
}

fn fixture(rng: &mut ChaCha8Rng) -> (Vocab, Instance) {
    let vocab = Vocab::from_tokens(["a", "b", "c", "d", "e", "f"]);
    let words = ["a", "b", "c", "d", "e", "f", "oov"];
    let len = rng.gen_range(5..10);
    let tokens: Vec<String> = (0..len).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect();
    let head = rng.gen_range(0..len);
    let mut tail = rng.gen_range(0..len - 1);
    if tail >= head {
        tail += 1;
    }
    let inst = Instance {
        id: "g".into(),
        tokens,
        head: Span::new(head, head),
        tail: Span::new(tail, tail),
        relation: 1,
    };
    (vocab, inst)
}

fn encoder_check(c: &mut Checker, mode: PoolingMode, rng: &mut ChaCha8Rng) -> Result<(), NnError> {
    let (vocab, inst) = fixture(rng);
    let mut params = ParamSet::new();
    let enc = Encoder::new(small_config(mode), vocab.len(), "enc", &mut params, rng)?;
    let g: Vec<f64> = (0..enc.config.feature_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let drop_seed: u64 = rng.gen();
    let (_, trace) = enc.encode(&inst, &vocab, &params, &mut Pass::Train(&mut ChaCha8Rng::seed_from_u64(drop_seed)))?;
    params.zero_grad();
    enc.backward(&trace, &g, &mut params)?;
    c.check_params(format!("encoder.{mode}"), &params, |p| {
        let mut r = ChaCha8Rng::seed_from_u64(drop_seed);
        let (f, _) = enc.encode(&inst, &vocab, p, &mut Pass::Train(&mut r)).unwrap();
        dot(&f.0, &g)
    })
}

fn classifier_check(c: &mut Checker, mode: PoolingMode, rng: &mut ChaCha8Rng) -> Result<(), NnError> {
    let (vocab, inst) = fixture(rng);
    let inv = RelationInventory::new(vec!["NA".into(), "r1".into(), "r2".into(), "r3".into()]).expect("valid inventory");
    let net = SoftmaxModel::new(small_config(mode), vocab, inv.len(), "rc", 1e-3, rng)?;
    let mut rc = ClassifierModel { net, inventory: inv };
    let target = rng.gen_range(0..4);
    let drop_seed: u64 = rng.gen();
    rc.net.params.zero_grad();
    rc.net.accumulate_xent(&inst, target, 1.0, &mut Pass::Train(&mut ChaCha8Rng::seed_from_u64(drop_seed)))?;
    let net = rc.net.clone();
    c.check_params(format!("classifier.{mode}"), &rc.net.params, |p| {
        let mut r = ChaCha8Rng::seed_from_u64(drop_seed);
        let (s, _) = net.scores_traced(&inst, p, &mut Pass::Train(&mut r)).unwrap();
        nn::softmax_xent(&s, target).unwrap().0
    })
}

fn agent_check(c: &mut Checker, mode: PoolingMode, rng: &mut ChaCha8Rng) -> Result<(), NnError> {
    let (vocab, inst) = fixture(rng);
    let mut da = AgentModel {
        net: SoftmaxModel::new(small_config(mode), vocab, 3, "da", 1e-3, rng)?,
    };
    let action = rng.gen_range(0..3);
    let advantage = rng.gen_range(-1.0..1.0);
    da.net.params.zero_grad();
    da.accumulate_neg_log_prob_grad(&inst, action, advantage)?;
    let net = da.net.clone();
    c.check_params(format!("agent.{mode}"), &da.net.params, |p| {
        let (s, _) = net.scores_traced(&inst, p, &mut Pass::Eval).unwrap();
        -advantage * nn::log_softmax(&s)[action]
    })
}

/// Runs the checks of `scope` with data drawn from `seed`. With `corrupt`
/// set, every analytic gradient is scaled by 1.1 before comparison.
pub fn run_gradchecks(scope: Scope, seed: u64, corrupt: bool) -> Result<Vec<CheckRow>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Checker { rows: Vec::new(), corrupt };
    match scope {
        Scope::Layers => layer_checks(&mut c, &mut rng)?,
        Scope::Encoder => {
            for mode in [PoolingMode::Cnn, PoolingMode::Pcnn] {
                encoder_check(&mut c, mode, &mut rng)?;
            }
        }
        Scope::Classifier => {
            for mode in [PoolingMode::Cnn, PoolingMode::Pcnn] {
                classifier_check(&mut c, mode, &mut rng)?;
            }
        }
        Scope::Agent => {
            for mode in [PoolingMode::Cnn, PoolingMode::Pcnn] {
                agent_check(&mut c, mode, &mut rng)?;
            }
        }
    }
    Ok(c.rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scope_passes() {
        for scope in Scope::ALL {
            let rows = run_gradchecks(scope, 3, false).unwrap();
            assert!(!rows.is_empty());
            for r in rows {
                assert!(r.passed(), "{scope} {}: {}", r.name, r.error);
            }
        }
    }

    #[test]
    fn planted_fault_is_reported() {
        for scope in Scope::ALL {
            let rows = run_gradchecks(scope, 3, true).unwrap();
            assert!(rows.iter().all(|r| !r.passed()), "{scope}");
        }
    }

    #[test]
    fn scope_names_roundtrip() {
        for s in Scope::ALL {
            assert_eq!(s.to_string().parse::<Scope>().unwrap(), s);
        }
        assert!("nope".parse::<Scope>().is_err());
    }
}
