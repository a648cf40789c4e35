use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment buffers, one pair per parameter, plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self { first: Vec::new(), second: Vec::new(), step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. Every parameter must carry a
/// gradient; the parameter list must keep the same order between calls.
pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::Contract(format!("parameter {i} has no gradient")));
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len() || state.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
        return Err(Error::Contract("optimizer state does not match the parameter list".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for ((param, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let grad = param.grad().expect("checked above").to_vec();
        for (((w, g), m), v) in param.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::from_values(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        p.set_grad(vec![0.0; 3]).unwrap();
        let mut st = AdamState::new();
        adam_step(&mut [&mut p], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.data(), before.data());
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Tensor::<f64>::zeros(&[2]).unwrap();
        p.set_grad(vec![3.0, -0.25]).unwrap();
        let cfg = AdamConfig { lr: 1e-2, ..Default::default() };
        adam_step(&mut [&mut p], &mut AdamState::new(), &cfg).unwrap();
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + ε).
        assert!((p.data()[0] + 1e-2).abs() < 1e-9);
        assert!((p.data()[1] - 1e-2).abs() < 1e-9);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut p = Tensor::<f64>::zeros(&[2]).unwrap();
        let err = adam_step(&mut [&mut p], &mut AdamState::new(), &AdamConfig::default());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn scalar_quadratic_decreases_monotonically() {
        let mut p = Tensor::scalar(3.0f64);
        let mut st = AdamState::new();
        let cfg = AdamConfig { lr: 1e-2, ..Default::default() };
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let x = p.data()[0];
            let loss = (x - 1.0) * (x - 1.0);
            assert!(loss < prev);
            prev = loss;
            p.set_grad(vec![2.0 * (x - 1.0)]).unwrap();
            adam_step(&mut [&mut p], &mut st, &cfg).unwrap();
        }
        assert_eq!(st.step(), 100);
    }
}
