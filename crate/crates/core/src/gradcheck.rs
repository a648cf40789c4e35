//! Central finite-difference oracle for the autodiff engine.
//!
//! The numerical side only evaluates forward values, so it stays
//! independent of every backward rule it is used to check.

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

/// Default central-difference step.
pub const STEP: f64 = 1e-5;

/// Norm-wise relative error `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, 1e-10)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-10)
}

/// Gradients of the scalar `f(inputs)` with respect to every input, from the tape.
pub fn analytic<F>(inputs: &[Tensor<f64>], f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input(&t.clone().with_requires_grad(true)))
        .collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect())
}

/// The same gradients by central differences of forward evaluations.
pub fn numeric<F>(inputs: &[Tensor<f64>], f: &F, step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut grad = Vec::with_capacity(inputs[k].len());
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            grad.push((plus - minus) / (2.0 * step));
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Largest per-input relative error between tape and finite-difference gradients.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let a = analytic(inputs, &f)?;
    let n = numeric(inputs, &f, STEP)?;
    Ok(a.iter().zip(&n).map(|(x, y)| relative_error(x, y)).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_have_zero_error() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!(relative_error(&[1.0, 0.0], &[0.0, 1.0]) > 1.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // sum(x) has gradient one; the oracle must agree.
        let x = Tensor::from_values(&[3], vec![0.3, -1.0, 2.0]).unwrap();
        let err = max_relative_error(&[x], |g, v| Ok(g.sum(v[0]))).unwrap();
        assert!(err < 1e-9);
    }
}
