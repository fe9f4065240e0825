//! Sentence encoder: word and position embeddings, multi-width
//! convolution, max or piecewise-max pooling.
//!
//! The forward pass is `embed -> dropout -> conv per width -> pool ->
//! concatenate -> dropout`. Every trainable tensor lives in a caller-owned
//! [`ParamSet`] so an encoder, the layer on top of it and their optimizer
//! share one parameter container.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Instance};
use crate::nn::{self, DropoutMask, NnError, ParamId, Pooled};
use crate::{Matrix, ParamSet};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Scale of the uniform initialisation for embedding tables.
const EMBED_INIT: f64 = 0.05;

/// Whether a forward pass is stochastic (training, with dropout) or not.
pub enum Pass<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl Pass<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Pass::Train(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    Cnn,
    Pcnn,
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingMode::Cnn => "cnn",
            PoolingMode::Pcnn => "pcnn",
        })
    }
}

impl FromStr for PoolingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(PoolingMode::Cnn),
            "pcnn" => Ok(PoolingMode::Pcnn),
            other => Err(format!("unknown encoder mode {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub mode: PoolingMode,
    pub word_dim: usize,
    pub pos_dim: usize,
    /// Filters per width.
    pub filters: usize,
    pub widths: Vec<usize>,
    /// Relative distances are clipped to `[-max_distance, max_distance]`.
    pub max_distance: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            mode: PoolingMode::Cnn,
            word_dim: 300,
            pos_dim: 50,
            filters: 230,
            widths: vec![2, 3, 4, 5],
            max_distance: 60,
            dropout: 0.5,
        }
    }
}

impl EncoderConfig {
    /// Width of one embedded token, `d_w + 2 d_p`.
    pub fn embed_dim(&self) -> usize {
        self.word_dim + 2 * self.pos_dim
    }

    pub fn feature_dim(&self) -> usize {
        let per_width = match self.mode {
            PoolingMode::Cnn => self.filters,
            PoolingMode::Pcnn => 3 * self.filters,
        };
        per_width * self.widths.len()
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err("filter widths must be non-empty and positive".into());
        }
        if self.word_dim == 0 || self.filters == 0 {
            return Err("word_dim and filters must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Token-to-id map with reserved padding and unknown entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocab {
    /// `<pad>` and `<unk>` first, then `tokens` in order, duplicates dropped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [PAD.to_string(), UNK.to_string()]
            .into_iter()
            .chain(tokens.into_iter().map(Into::into))
        {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    /// Tokens of the given datasets in first-seen order.
    pub fn build<'a>(datasets: impl IntoIterator<Item = &'a Dataset>) -> Self {
        Self::from_tokens(
            datasets
                .into_iter()
                .flat_map(|d| d.instances.iter())
                .flat_map(|i| i.tokens.iter().cloned()),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// One token per line.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Self {
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()).map(str::to_string))
    }
}

/// Handles of the word and two position tables.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub word: ParamId,
    pub pos_head: ParamId,
    pub pos_tail: ParamId,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub max_distance: usize,
}

impl EmbeddingTable {
    /// Row of a position table for token `t` relative to `anchor`.
    pub fn position_row(&self, t: usize, anchor: usize) -> usize {
        let d = self.max_distance as i64;
        let rel = (t as i64 - anchor as i64).clamp(-d, d);
        (rel + d) as usize
    }
}

/// Token ids and position rows of one padded sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Lookup {
    pub word: Vec<usize>,
    pub head: Vec<usize>,
    pub tail: Vec<usize>,
}

/// Pooled sentence feature.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceFeature(pub Vec<f64>);

impl SentenceFeature {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

struct WidthTrace {
    width: usize,
    steps: usize,
    pooled: Pooled<f64>,
}

/// Everything the backward pass of [`Encoder::encode`] needs.
pub struct EncodeTrace {
    lookup: Lookup,
    embedded: Matrix,
    input_mask: DropoutMask<f64>,
    widths: Vec<WidthTrace>,
    output_mask: DropoutMask<f64>,
}

/// Placement of the two PCNN cuts in convolution-output coordinates for
/// filter width `width` on a sentence padded to `padded_len` tokens.
pub fn pcnn_cuts(inst: &Instance, width: usize, padded_len: usize) -> (usize, usize) {
    let steps = padded_len.saturating_sub(width) + 1;
    let lo = inst.head.start.min(inst.tail.start);
    let hi = inst.head.start.max(inst.tail.start);
    let cut1 = lo.min(steps);
    let cut2 = hi.min(steps).max(cut1);
    (cut1, cut2)
}

#[derive(Clone, Debug, PartialEq)]
struct FilterBank {
    width: usize,
    weights: ParamId,
    bias: ParamId,
}

/// CNN/PCNN sentence encoder bound to parameters in a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub table: EmbeddingTable,
    banks: Vec<FilterBank>,
}

impl Encoder {
    /// Registers freshly initialised parameters under `prefix` in `params`.
    pub fn new(
        config: EncoderConfig,
        vocab_size: usize,
        prefix: &str,
        params: &mut ParamSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        config.validate().map_err(|m| NnError::ShapeMismatch {
            op: "Encoder::new",
            expected: "valid encoder config".into(),
            got: m,
        })?;
        let vocab_size = vocab_size.max(2);
        let pos_rows = 2 * config.max_distance + 1;
        let mut word = Matrix::uniform(vocab_size, config.word_dim, EMBED_INIT, rng);
        word.row_mut(PAD_ID).iter_mut().for_each(|x| *x = 0.0);
        let table = EmbeddingTable {
            word: params.add(format!("{prefix}.word"), word),
            pos_head: params.add(
                format!("{prefix}.pos_head"),
                Matrix::uniform(pos_rows, config.pos_dim, EMBED_INIT, rng),
            ),
            pos_tail: params.add(
                format!("{prefix}.pos_tail"),
                Matrix::uniform(pos_rows, config.pos_dim, EMBED_INIT, rng),
            ),
            word_dim: config.word_dim,
            pos_dim: config.pos_dim,
            max_distance: config.max_distance,
        };
        let d_e = config.embed_dim();
        let banks = config
            .widths
            .iter()
            .map(|&f| {
                let bound = 1.0 / ((f * d_e) as f64).sqrt();
                FilterBank {
                    width: f,
                    weights: params.add(
                        format!("{prefix}.conv{f}.weight"),
                        Matrix::uniform(config.filters, f * d_e, bound, rng),
                    ),
                    bias: params.add(
                        format!("{prefix}.conv{f}.bias"),
                        Matrix::uniform(1, config.filters, bound, rng),
                    ),
                }
            })
            .collect();
        Ok(Self {
            config,
            table,
            banks,
        })
    }

    /// Sentence length after right-padding to the widest filter.
    pub fn padded_len(&self, inst: &Instance) -> usize {
        inst.tokens.len().max(self.config.max_width())
    }

    pub fn lookup(&self, inst: &Instance, vocab: &Vocab) -> Lookup {
        let len = self.padded_len(inst);
        let word = (0..len)
            .map(|t| inst.tokens.get(t).map_or(PAD_ID, |tok| vocab.id(tok)))
            .collect();
        let head = (0..len)
            .map(|t| self.table.position_row(t, inst.head.start))
            .collect();
        let tail = (0..len)
            .map(|t| self.table.position_row(t, inst.tail.start))
            .collect();
        Lookup { word, head, tail }
    }

    /// `V = [Vw | Vp1 | Vp2]`, one row per (padded) token.
    pub fn embed(&self, lookup: &Lookup, params: &ParamSet) -> Matrix {
        let (dw, dp) = (self.table.word_dim, self.table.pos_dim);
        let words = params.value(self.table.word);
        let heads = params.value(self.table.pos_head);
        let tails = params.value(self.table.pos_tail);
        let mut v = Matrix::zeros(lookup.word.len(), dw + 2 * dp);
        for t in 0..lookup.word.len() {
            let row = v.row_mut(t);
            row[..dw].copy_from_slice(words.row(lookup.word[t]));
            row[dw..dw + dp].copy_from_slice(heads.row(lookup.head[t]));
            row[dw + dp..].copy_from_slice(tails.row(lookup.tail[t]));
        }
        v
    }

    pub fn encode(
        &self,
        inst: &Instance,
        vocab: &Vocab,
        params: &ParamSet,
        pass: &mut Pass<'_>,
    ) -> Result<(SentenceFeature, EncodeTrace), NnError> {
        let lookup = self.lookup(inst, vocab);
        let embedded = self.embed(&lookup, params);
        let rate = self.config.dropout;
        let (conv_in, input_mask) = match pass {
            Pass::Train(rng) => nn::dropout(&embedded, rate, &mut **rng, true)?,
            Pass::Eval => (embedded.clone(), DropoutMask::identity()),
        };
        let padded = lookup.word.len();
        let mut pooled_all = Vec::with_capacity(self.config.feature_dim());
        let mut widths = Vec::with_capacity(self.banks.len());
        for bank in &self.banks {
            let conv = nn::conv_seq(
                &conv_in,
                params.value(bank.weights),
                params.value(bank.bias).data(),
                bank.width,
            )?;
            let pooled = match self.config.mode {
                PoolingMode::Cnn => nn::max_over_time(&conv)?,
                PoolingMode::Pcnn => {
                    let (c1, c2) = pcnn_cuts(inst, bank.width, padded);
                    nn::piecewise_max(&conv, c1, c2)?
                }
            };
            pooled_all.extend_from_slice(&pooled.values);
            widths.push(WidthTrace {
                width: bank.width,
                steps: conv.cols(),
                pooled,
            });
        }
        let pooled_all = Matrix::row_vector(pooled_all);
        let (feature, output_mask) = match pass {
            Pass::Train(rng) => nn::dropout(&pooled_all, rate, &mut **rng, true)?,
            Pass::Eval => (pooled_all, DropoutMask::identity()),
        };
        let trace = EncodeTrace {
            lookup,
            embedded: conv_in,
            input_mask,
            widths,
            output_mask,
        };
        Ok((SentenceFeature(feature.into_vec()), trace))
    }

    /// Accumulates parameter gradients for `d loss / d feature`.
    pub fn backward(
        &self,
        trace: &EncodeTrace,
        grad_feature: &[f64],
        params: &mut ParamSet,
    ) -> Result<(), NnError> {
        let grad = trace
            .output_mask
            .apply(&Matrix::row_vector(grad_feature.to_vec()));
        let mut offset = 0;
        let mut grad_embedded = Matrix::zeros(trace.embedded.rows(), trace.embedded.cols());
        for (bank, wt) in self.banks.iter().zip(&trace.widths) {
            let n = wt.pooled.values.len();
            let g_conv = wt.pooled.backward(
                &grad.data()[offset..offset + n],
                self.config.filters,
                wt.steps,
            )?;
            offset += n;
            let grads = nn::conv_seq_backward(
                &trace.embedded,
                params.value(bank.weights),
                wt.width,
                &g_conv,
            )?;
            params.accumulate(bank.weights, 1.0, &grads.bank)?;
            params.accumulate(bank.bias, 1.0, &Matrix::row_vector(grads.bias))?;
            grad_embedded.add_assign(&grads.input)?;
        }
        let grad_embedded = trace.input_mask.apply(&grad_embedded);
        let (dw, dp) = (self.table.word_dim, self.table.pos_dim);
        for t in 0..trace.lookup.word.len() {
            let g = grad_embedded.row(t);
            let w = trace.lookup.word[t];
            if w != PAD_ID {
                add_row(params.grad_mut(self.table.word), w, &g[..dw]);
            }
            add_row(params.grad_mut(self.table.pos_head), trace.lookup.head[t], &g[dw..dw + dp]);
            add_row(params.grad_mut(self.table.pos_tail), trace.lookup.tail[t], &g[dw + dp..]);
        }
        Ok(())
    }

    /// Overwrites word vectors from a text file (`token v1 .. v_dw` per
    /// line) for tokens present in `vocab`; returns how many were set.
    pub fn load_word_vectors<R: BufRead>(
        &self,
        reader: R,
        vocab: &Vocab,
        params: &mut ParamSet,
        freeze: bool,
    ) -> Result<usize, NnError> {
        let dw = self.table.word_dim;
        let mut hits = 0;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let vals: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| NnError::Checkpoint(format!("word vectors line {}: bad float", n + 1)))?;
            if vals.len() != dw {
                return Err(NnError::ShapeMismatch {
                    op: "load_word_vectors",
                    expected: format!("{dw} values"),
                    got: format!("{} on line {}", vals.len(), n + 1),
                });
            }
            let id = vocab.id(tok);
            if id == UNK_ID && tok != UNK || id == PAD_ID {
                continue;
            }
            params.value_mut(self.table.word).row_mut(id).copy_from_slice(&vals);
            hits += 1;
        }
        if freeze {
            params.set_trainable(self.table.word, false);
        }
        Ok(hits)
    }
}

fn add_row(m: &mut Matrix, row: usize, g: &[f64]) {
    for (a, &b) in m.row_mut(row).iter_mut().zip(g) {
        *a += b;
    }
}
