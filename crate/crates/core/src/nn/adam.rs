use super::{Matrix, ParamSet, Scalar};

/// Adam moments and hyperparameters for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: u64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments shaped like `params`, with `beta1=0.9`, `beta2=0.999`,
    /// `eps=1e-8`.
    pub fn new(params: &ParamSet<T>, lr: T) -> Self {
        Self::with_betas(params, lr, T::from_f64_lossy(0.9), T::from_f64_lossy(0.999), T::from_f64_lossy(1e-8))
    }

    pub fn with_betas(params: &ParamSet<T>, lr: T, beta1: T, beta2: T, eps: T) -> Self {
        let zeros: Vec<Matrix<T>> = params
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, index: usize) -> &Matrix<T> {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Matrix<T> {
        &self.v[index]
    }
}

/// One bias-corrected Adam descent step over every trainable parameter,
/// then zeroes all gradients.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, state: &mut AdamState<T>) {
    assert_eq!(params.len(), state.m.len(), "optimizer built for another parameter set");
    state.t += 1;
    let t = state.t as i32;
    let one = T::one();
    let bc1 = one - state.beta1.powi(t);
    let bc2 = one - state.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let grad = p.grad.data();
        for (k, w) in p.value.data_mut().iter_mut().enumerate() {
            let g = grad[k];
            m[k] = state.beta1 * m[k] + (one - state.beta1) * g;
            v[k] = state.beta2 * v[k] + (one - state.beta2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    params.zero_grad();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(x: f64) -> (ParamSet<f64>, super::super::ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("p", Matrix::filled(1, 1, x));
        (ps, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut ps, id) = scalar_param(1.5);
        let mut st = AdamState::new(&ps, 0.1);
        adam_step(&mut ps, &mut st);
        assert_eq!(ps.value(id).get(0, 0), 1.5);
        assert!(st.second_moment(0).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let (mut ps, id) = scalar_param(2.0);
        let lr = 1e-3;
        let mut st = AdamState::new(&ps, lr);
        ps.grad_mut(id).set(0, 0, 0.37);
        adam_step(&mut ps, &mut st);
        let expected = 2.0 - lr * 0.37 / (0.37 + 1e-8);
        assert!((ps.value(id).get(0, 0) - expected).abs() < 1e-15);
        assert!((2.0 - ps.value(id).get(0, 0) - lr).abs() < 1e-10);
        assert_eq!(ps.grad(id).get(0, 0), 0.0, "gradients zeroed after step");
    }

    #[test]
    fn descends_convex_quadratic() {
        // f(p) = (p - 3)^2, simulated alongside the closed-form loss.
        let (mut ps, id) = scalar_param(0.0);
        let mut st = AdamState::new(&ps, 1e-3);
        let loss = |p: f64| (p - 3.0).powi(2);
        let mut prev = loss(0.0);
        for _ in 0..2 {
            let p = ps.value(id).get(0, 0);
            ps.grad_mut(id).set(0, 0, 2.0 * (p - 3.0));
            adam_step(&mut ps, &mut st);
            let cur = loss(ps.value(id).get(0, 0));
            assert!(cur < prev);
            prev = cur;
        }
        assert_eq!(st.steps(), 2);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let (mut ps, id) = scalar_param(1.0);
        ps.set_trainable(id, false);
        let mut st = AdamState::new(&ps, 0.1);
        ps.grad_mut(id).set(0, 0, 1.0);
        adam_step(&mut ps, &mut st);
        assert_eq!(ps.value(id).get(0, 0), 1.0);
    }
}
