//! Central-difference gradient checking.

use super::{NnError, ParamSet, Scalar};

/// Absolute floor on the denominator of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    let floor = T::from_f64_lossy(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central-difference gradient of `f` at `point`.
pub fn numerical_gradient<T, F>(mut f: F, point: &[T], step: T) -> Result<Vec<T>, NnError>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let two = T::one() + T::one();
    let mut probe = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NnError::NonFinite("grad_check"));
        }
        grad.push((up - down) / (two * step));
    }
    Ok(grad)
}

/// Maximum elementwise relative error between `analytic` and the central
/// difference gradient of `f` at `point`.
pub fn grad_check<T, F>(f: F, point: &[T], analytic: &[T], step: T) -> Result<T, NnError>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    if analytic.len() != point.len() {
        return Err(NnError::ShapeMismatch {
            op: "grad_check",
            expected: format!("{} analytic entries", point.len()),
            got: format!("{}", analytic.len()),
        });
    }
    if analytic.iter().any(|a| !a.is_finite()) {
        return Err(NnError::NonFinite("grad_check"));
    }
    let numeric = numerical_gradient(f, point, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(T::zero(), T::max))
}

/// Checks the gradients currently accumulated in `params` against central
/// differences of `loss`, which is evaluated on perturbed copies of the set.
///
/// Only trainable parameters are probed. `stride` > 1 probes every
/// `stride`-th scalar of each parameter to bound the cost on large sets.
pub fn grad_check_params<T, F>(
    params: &ParamSet<T>,
    mut loss: F,
    step: T,
    stride: usize,
) -> Result<T, NnError>
where
    T: Scalar,
    F: FnMut(&ParamSet<T>) -> T,
{
    let two = T::one() + T::one();
    let stride = stride.max(1);
    let mut probe = params.clone();
    let mut worst = T::zero();
    for idx in 0..params.len() {
        let id = super::ParamId(idx);
        if !params.is_trainable(id) {
            continue;
        }
        let n = params.value(id).len();
        for k in (0..n).step_by(stride) {
            let orig = probe.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = orig + step;
            let up = loss(&probe);
            probe.value_mut(id).data_mut()[k] = orig - step;
            let down = loss(&probe);
            probe.value_mut(id).data_mut()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(NnError::NonFinite("grad_check_params"));
            }
            let numeric = (up - down) / (two * step);
            let analytic = params.grad(id).data()[k];
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let c = [0.5, -1.25, 2.0];
        let f = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() + 4.0;
        let err = grad_check(f, &[1.0, 2.0, 3.0], &c, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn planted_fault_is_detected() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let point = [1.3, -0.4];
        let corrupted = [2.0 * 1.3 * 1.1, 3.0 * 1.1];
        let err = grad_check(f, &point, &corrupted, 1e-5).unwrap();
        // 10% inflation gives |0.1 g| / (1.1 |g|).
        assert!((err - 0.1 / 1.1).abs() < 1e-6, "{err}");
    }

    #[test]
    fn non_finite_is_an_error() {
        let f = |x: &[f64]| x[0].ln();
        assert!(grad_check(f, &[0.0], &[1.0], 1e-5).is_err());
        assert!(grad_check(|x: &[f64]| x[0], &[0.0], &[f64::NAN], 1e-5).is_err());
    }
}
