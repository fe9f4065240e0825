//! Forward and backward passes for the layer primitives.
//!
//! Every forward returns whatever the matching backward needs; nothing is
//! cached behind the caller's back.

use rand::Rng;

use super::{Matrix, NnError, Scalar};

/// Gradients of an affine map `x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineGrads<T> {
    pub x: Matrix<T>,
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

/// `x W + b` with `b` broadcast over the rows of `x`.
pub fn affine<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Result<Matrix<T>, NnError> {
    if b.len() != w.cols() {
        return Err(NnError::ShapeMismatch {
            op: "affine",
            expected: format!("bias of length {}", w.cols()),
            got: format!("length {}", b.len()),
        });
    }
    let mut out = x.matmul(w)?;
    for r in 0..out.rows() {
        for (o, &bias) in out.row_mut(r).iter_mut().zip(b) {
            *o += bias;
        }
    }
    Ok(out)
}

pub fn affine_backward<T: Scalar>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    grad_out: &Matrix<T>,
) -> Result<AffineGrads<T>, NnError> {
    if grad_out.shape() != (x.rows(), w.cols()) || x.cols() != w.rows() {
        return Err(NnError::ShapeMismatch {
            op: "affine_backward",
            expected: format!("grad {}x{}", x.rows(), w.cols()),
            got: format!("{}x{}", grad_out.rows(), grad_out.cols()),
        });
    }
    let gx = grad_out.matmul(&w.transpose())?;
    let gw = x.transpose().matmul(grad_out)?;
    let mut gb = vec![T::zero(); w.cols()];
    for r in 0..grad_out.rows() {
        for (g, &v) in gb.iter_mut().zip(grad_out.row(r)) {
            *g += v;
        }
    }
    Ok(AffineGrads { x: gx, w: gw, b: gb })
}

/// Gradients of a single-width convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Matrix<T>,
    pub bank: Matrix<T>,
    pub bias: Vec<T>,
}

fn check_conv_shapes<T: Scalar>(
    input: &Matrix<T>,
    bank: &Matrix<T>,
    bias: &[T],
    width: usize,
) -> Result<usize, NnError> {
    if width == 0 || bank.cols() != width * input.cols() {
        return Err(NnError::ShapeMismatch {
            op: "conv_seq",
            expected: format!("filter bank with {} columns (width {width})", width * input.cols()),
            got: format!("{}x{}", bank.rows(), bank.cols()),
        });
    }
    if bias.len() != bank.rows() {
        return Err(NnError::ShapeMismatch {
            op: "conv_seq",
            expected: format!("{} biases", bank.rows()),
            got: format!("{}", bias.len()),
        });
    }
    if input.rows() < width {
        return Err(NnError::SequenceTooShort {
            len: input.rows(),
            width,
        });
    }
    Ok(input.rows() - width + 1)
}

/// Valid-mode correlation of `input` (`L x d`) with a bank of `h` filters.
///
/// Row `i` of `bank` holds filter `A_i` flattened as `f x d` row-major, so
/// output entry `(i, t)` is the dot product of that row with input rows
/// `t..t+f` laid end to end, plus `bias[i]`. Output shape is `h x (L-f+1)`.
pub fn conv_seq<T: Scalar>(
    input: &Matrix<T>,
    bank: &Matrix<T>,
    bias: &[T],
    width: usize,
) -> Result<Matrix<T>, NnError> {
    let steps = check_conv_shapes(input, bank, bias, width)?;
    let d = input.cols();
    let mut out = Matrix::zeros(bank.rows(), steps);
    for t in 0..steps {
        let window = &input.data()[t * d..(t + width) * d];
        for i in 0..bank.rows() {
            let acc: T = bank
                .row(i)
                .iter()
                .zip(window)
                .fold(T::zero(), |s, (&a, &v)| s + a * v);
            out.set(i, t, acc + bias[i]);
        }
    }
    Ok(out)
}

pub fn conv_seq_backward<T: Scalar>(
    input: &Matrix<T>,
    bank: &Matrix<T>,
    width: usize,
    grad_out: &Matrix<T>,
) -> Result<ConvGrads<T>, NnError> {
    let zero_bias = vec![T::zero(); bank.rows()];
    let steps = check_conv_shapes(input, bank, &zero_bias, width)?;
    if grad_out.shape() != (bank.rows(), steps) {
        return Err(NnError::ShapeMismatch {
            op: "conv_seq_backward",
            expected: format!("grad {}x{steps}", bank.rows()),
            got: format!("{}x{}", grad_out.rows(), grad_out.cols()),
        });
    }
    let d = input.cols();
    let mut g_input = Matrix::zeros(input.rows(), d);
    let mut g_bank = Matrix::zeros(bank.rows(), bank.cols());
    let mut g_bias = vec![T::zero(); bank.rows()];
    for t in 0..steps {
        for i in 0..bank.rows() {
            let g = grad_out.get(i, t);
            if g == T::zero() {
                continue;
            }
            g_bias[i] += g;
            let window = &input.data()[t * d..(t + width) * d];
            for (gb, &v) in g_bank.row_mut(i).iter_mut().zip(window) {
                *gb += g * v;
            }
            let g_window = &mut g_input.data_mut()[t * d..(t + width) * d];
            for (gi, &a) in g_window.iter_mut().zip(bank.row(i)) {
                *gi += g * a;
            }
        }
    }
    Ok(ConvGrads {
        input: g_input,
        bank: g_bank,
        bias: g_bias,
    })
}

/// Output of a max-pooling pass plus the column each value came from.
///
/// `routes[k]` is `None` for outputs of an empty segment; those carry 0 and
/// receive no gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled<T> {
    pub values: Vec<T>,
    pub routes: Vec<Option<(usize, usize)>>,
}

impl<T: Scalar> Pooled<T> {
    /// Scatters `grad` (one entry per pooled value) back onto a
    /// `rows x cols` feature map.
    pub fn backward(&self, grad: &[T], rows: usize, cols: usize) -> Result<Matrix<T>, NnError> {
        if grad.len() != self.values.len() {
            return Err(NnError::ShapeMismatch {
                op: "pool_backward",
                expected: format!("{} gradients", self.values.len()),
                got: format!("{}", grad.len()),
            });
        }
        let mut out = Matrix::zeros(rows, cols);
        for (&g, route) in grad.iter().zip(&self.routes) {
            if let Some((r, c)) = *route {
                let cur = out.get(r, c);
                out.set(r, c, cur + g);
            }
        }
        Ok(out)
    }
}

/// Index of the maximum of `xs`; ties go to the lowest index.
fn argmax_range<T: Scalar>(xs: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some(b) if !(x > xs[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Row-wise maximum over all columns of `c` (`h x T`).
pub fn max_over_time<T: Scalar>(c: &Matrix<T>) -> Result<Pooled<T>, NnError> {
    if c.cols() == 0 {
        return Err(NnError::EmptyInput("max_over_time"));
    }
    let mut values = Vec::with_capacity(c.rows());
    let mut routes = Vec::with_capacity(c.rows());
    for r in 0..c.rows() {
        let row = c.row(r);
        let j = argmax_range(row).expect("non-empty row");
        values.push(row[j]);
        routes.push(Some((r, j)));
    }
    Ok(Pooled { values, routes })
}

/// Piecewise max pooling over column segments `[0,cut1)`, `[cut1,cut2)`,
/// `[cut2,T)`.
///
/// The output is segment-major: entries `s*h .. (s+1)*h` hold the maxima of
/// segment `s` for each of the `h` rows.
pub fn piecewise_max<T: Scalar>(
    c: &Matrix<T>,
    cut1: usize,
    cut2: usize,
) -> Result<Pooled<T>, NnError> {
    let t = c.cols();
    if !(cut1 <= cut2 && cut2 <= t) {
        return Err(NnError::CutOrder { cut1, cut2, len: t });
    }
    let h = c.rows();
    let bounds = [(0, cut1), (cut1, cut2), (cut2, t)];
    let mut values = Vec::with_capacity(3 * h);
    let mut routes = Vec::with_capacity(3 * h);
    for &(lo, hi) in &bounds {
        for r in 0..h {
            match argmax_range(&c.row(r)[lo..hi]) {
                Some(j) => {
                    values.push(c.get(r, lo + j));
                    routes.push(Some((r, lo + j)));
                }
                None => {
                    values.push(T::zero());
                    routes.push(None);
                }
            }
        }
    }
    Ok(Pooled { values, routes })
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Log-softmax via log-sum-exp.
pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

/// Cross-entropy of `softmax(logits)` against class `target`.
///
/// Returns the loss and its gradient with respect to the logits,
/// `softmax(logits) - onehot(target)`.
pub fn softmax_xent<T: Scalar>(logits: &[T], target: usize) -> Result<(T, Vec<T>), NnError> {
    if logits.len() < 2 || target >= logits.len() {
        return Err(NnError::InvalidTarget {
            target,
            classes: logits.len(),
        });
    }
    let loss = -log_softmax(logits)[target];
    let mut grad = softmax(logits);
    grad[target] -= T::one();
    Ok((loss.max(T::zero()), grad))
}

/// Per-entry scale applied by [`dropout`]; `None` means identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T>(Option<Vec<T>>);

impl<T: Scalar> DropoutMask<T> {
    pub fn identity() -> Self {
        Self(None)
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_none()
    }

    pub fn apply(&self, grad: &Matrix<T>) -> Matrix<T> {
        match &self.0 {
            None => grad.clone(),
            Some(scale) => {
                let data = grad.data().iter().zip(scale).map(|(&g, &s)| g * s).collect();
                Matrix::from_vec(grad.rows(), grad.cols(), data).expect("mask shape")
            }
        }
    }

    /// Fraction of entries that survived, 1 for the identity mask.
    pub fn keep_fraction(&self) -> f64 {
        match &self.0 {
            None => 1.0,
            Some(s) if s.is_empty() => 1.0,
            Some(s) => s.iter().filter(|&&x| x != T::zero()).count() as f64 / s.len() as f64,
        }
    }
}

/// Inverted dropout: in training mode each entry is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; otherwise identity.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    x: &Matrix<T>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Matrix<T>, DropoutMask<T>), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), DropoutMask::identity()));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mask = DropoutMask(Some(scale));
    Ok((mask.apply(x), mask))
}
