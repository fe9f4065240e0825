//! Experiment configuration as flat `key = value` text.

use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::SynthSpec;
use crate::encoder::{EncoderConfig, PoolingMode};

use super::PipelineError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    /// Classifier only, trained on the noisy labels.
    Base,
    /// Pretraining followed by co-training.
    Hfnd,
    /// As `Hfnd`, with every Revise decision treated as Discard.
    NoRevise,
    /// Co-training from random initialisation.
    NoPretrain,
}

impl RunMode {
    pub fn uses_agent(self) -> bool {
        self != RunMode::Base
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Base => "base",
            RunMode::Hfnd => "hfnd",
            RunMode::NoRevise => "ablation-no-revise",
            RunMode::NoPretrain => "ablation-no-pretrain",
        })
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(RunMode::Base),
            "hfnd" => Ok(RunMode::Hfnd),
            "ablation-no-revise" => Ok(RunMode::NoRevise),
            "ablation-no-pretrain" => Ok(RunMode::NoPretrain),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: RunMode,
    pub encoder: EncoderConfig,
    pub batch_size: usize,
    pub lr_rc_pre: f64,
    pub lr_da_pre: f64,
    pub lr_rc_co: f64,
    pub lr_da_co: f64,
    pub epochs_rc_pre: usize,
    pub epochs_da_pre: usize,
    pub epochs_co: usize,
    pub fn_ratio: f64,
    /// Model initialisation, shuffling and action sampling.
    pub seed: u64,
    /// Synthetic data generation; defaults to `seed`.
    pub data_seed: Option<u64>,
    /// False-negative injection; defaults to `seed + 1`.
    pub noise_seed: Option<u64>,
    /// Directory holding `train.txt`, `val.txt` and `test.txt`. When unset
    /// the corpus is generated from `synth`.
    pub data_dir: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    pub freeze_word_vectors: bool,
    pub synth: SynthSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Hfnd,
            encoder: EncoderConfig::default(),
            batch_size: 256,
            lr_rc_pre: 3e-3,
            lr_da_pre: 3e-3,
            lr_rc_co: 3e-3,
            lr_da_co: 1e-4,
            epochs_rc_pre: 5,
            epochs_da_pre: 20,
            epochs_co: 150,
            fn_ratio: 0.1,
            seed: 1,
            data_seed: None,
            noise_seed: None,
            data_dir: None,
            word_vectors: None,
            freeze_word_vectors: false,
            synth: SynthSpec::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| PipelineError::Config(format!("{key}: {e}")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, PipelineError>
where
    T::Err: fmt::Display,
{
    match value {
        "" | "auto" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn show<T: fmt::Display>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), |x| x.to_string())
}

impl ExperimentConfig {
    /// Small dimensions and epoch budgets for CPU-only synthetic runs.
    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig {
                mode: PoolingMode::Cnn,
                word_dim: 16,
                pos_dim: 4,
                filters: 8,
                widths: vec![2, 3],
                max_distance: 60,
                dropout: 0.5,
            },
            batch_size: 32,
            lr_rc_pre: 3e-3,
            lr_da_pre: 1e-2,
            lr_rc_co: 3e-3,
            lr_da_co: 3e-3,
            epochs_rc_pre: 30,
            epochs_da_pre: 6,
            epochs_co: 150,
            fn_ratio: 0.5,
            ..Self::default()
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed.unwrap_or(self.seed.wrapping_add(1))
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let value = value.trim();
        let e = &mut self.encoder;
        let s = &mut self.synth;
        match key {
            "mode" => self.mode = parse(key, value)?,
            "encoder" => e.mode = parse(key, value)?,
            "word_dim" => e.word_dim = parse(key, value)?,
            "pos_dim" => e.pos_dim = parse(key, value)?,
            "filters" => e.filters = parse(key, value)?,
            "widths" => {
                e.widths = value
                    .split(',')
                    .map(|w| parse(key, w.trim()))
                    .collect::<Result<_, _>>()?
            }
            "max_distance" => e.max_distance = parse(key, value)?,
            "dropout" => e.dropout = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr_rc_pre" => self.lr_rc_pre = parse(key, value)?,
            "lr_da_pre" => self.lr_da_pre = parse(key, value)?,
            "lr_rc_co" => self.lr_rc_co = parse(key, value)?,
            "lr_da_co" => self.lr_da_co = parse(key, value)?,
            "epochs_rc_pre" => self.epochs_rc_pre = parse(key, value)?,
            "epochs_da_pre" => self.epochs_da_pre = parse(key, value)?,
            "epochs_co" => self.epochs_co = parse(key, value)?,
            "fn_ratio" => self.fn_ratio = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "data_seed" => self.data_seed = optional(key, value)?,
            "noise_seed" => self.noise_seed = optional(key, value)?,
            "data_dir" => self.data_dir = optional(key, value)?,
            "word_vectors" => self.word_vectors = optional(key, value)?,
            "freeze_word_vectors" => self.freeze_word_vectors = parse(key, value)?,
            "synth.n_relations" => s.n_relations = parse(key, value)?,
            "synth.n_train" => s.n_train = parse(key, value)?,
            "synth.n_val" => s.n_val = parse(key, value)?,
            "synth.n_test" => s.n_test = parse(key, value)?,
            "synth.vocab_size" => s.vocab_size = parse(key, value)?,
            "synth.pattern_strength" => s.pattern_strength = parse(key, value)?,
            "synth.na_fraction" => s.na_fraction = parse(key, value)?,
            "synth.triggers_per_relation" => s.triggers_per_relation = parse(key, value)?,
            "synth.n_entities" => s.n_entities = parse(key, value)?,
            "synth.max_gap" => s.max_gap = parse(key, value)?,
            "synth.max_margin" => s.max_margin = parse(key, value)?,
            other => return Err(PipelineError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` text on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), PipelineError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field, one per line, in a form [`from_text`](Self::from_text)
    /// reads back to an equal config.
    pub fn to_text(&self) -> String {
        let e = &self.encoder;
        let s = &self.synth;
        let widths: Vec<String> = e.widths.iter().map(|w| w.to_string()).collect();
        let path = |p: &Option<PathBuf>| p.as_ref().map_or_else(String::new, |p| p.display().to_string());
        let rows: Vec<(&str, String)> = vec![
            ("mode", self.mode.to_string()),
            ("encoder", e.mode.to_string()),
            ("word_dim", e.word_dim.to_string()),
            ("pos_dim", e.pos_dim.to_string()),
            ("filters", e.filters.to_string()),
            ("widths", widths.join(",")),
            ("max_distance", e.max_distance.to_string()),
            ("dropout", e.dropout.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr_rc_pre", self.lr_rc_pre.to_string()),
            ("lr_da_pre", self.lr_da_pre.to_string()),
            ("lr_rc_co", self.lr_rc_co.to_string()),
            ("lr_da_co", self.lr_da_co.to_string()),
            ("epochs_rc_pre", self.epochs_rc_pre.to_string()),
            ("epochs_da_pre", self.epochs_da_pre.to_string()),
            ("epochs_co", self.epochs_co.to_string()),
            ("fn_ratio", self.fn_ratio.to_string()),
            ("seed", self.seed.to_string()),
            ("data_seed", show(&self.data_seed, "auto")),
            ("noise_seed", show(&self.noise_seed, "auto")),
            ("data_dir", path(&self.data_dir)),
            ("word_vectors", path(&self.word_vectors)),
            ("freeze_word_vectors", self.freeze_word_vectors.to_string()),
            ("synth.n_relations", s.n_relations.to_string()),
            ("synth.n_train", s.n_train.to_string()),
            ("synth.n_val", s.n_val.to_string()),
            ("synth.n_test", s.n_test.to_string()),
            ("synth.vocab_size", s.vocab_size.to_string()),
            ("synth.pattern_strength", s.pattern_strength.to_string()),
            ("synth.na_fraction", s.na_fraction.to_string()),
            ("synth.triggers_per_relation", s.triggers_per_relation.to_string()),
            ("synth.n_entities", s.n_entities.to_string()),
            ("synth.max_gap", s.max_gap.to_string()),
            ("synth.max_margin", s.max_margin.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.encoder.validate().map_err(PipelineError::Config)?;
        for (name, lr) in [
            ("lr_rc_pre", self.lr_rc_pre),
            ("lr_da_pre", self.lr_da_pre),
            ("lr_rc_co", self.lr_rc_co),
            ("lr_da_co", self.lr_da_co),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(0.0..=1.0).contains(&self.fn_ratio) {
            return bad(format!("fn_ratio {} outside [0, 1]", self.fn_ratio));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.data_dir.is_none() {
            self.synth.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }
}
