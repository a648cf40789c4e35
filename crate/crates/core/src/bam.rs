//! Bi-dimensional aggregation: a global channel branch and a local spatial
//! branch whose outputs are summed by broadcasting into a gate on the input.
//!
//! ```text
//! x̂   = gelu(avgpool(X) · fc_c1)                (1, 1, C/r)
//! Xᶜ  = sigmoid(x̂ · fc_c2)                      (1, 1, C)
//! X̃   = gelu(X · fc_s1)                          (H, W, C/r)
//! Xˢ  = sigmoid(concat(X̃, broadcast(x̂)) · fc_s2)  (H, W, 1)
//! out = X ⊙ (Xᶜ ⊕ Xˢ)
//! ```
//!
//! The gate lies in `(0, 2)`, so `|out| < 2|X|` elementwise.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};
use crate::wsm::fan_in_uniform;

/// Default channel reduction ratio.
pub const REDUCTION: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct BamParams<P> {
    pub fc_c1: P,
    pub fc_c2: P,
    pub fc_s1: P,
    pub fc_s2: P,
    pub reduction: usize,
}

impl<P> BamParams<P> {
    pub fn named(&self) -> [(&'static str, &P); 4] {
        [("fc_c1", &self.fc_c1), ("fc_c2", &self.fc_c2), ("fc_s1", &self.fc_s1), ("fc_s2", &self.fc_s2)]
    }

    pub fn tensors_mut(&mut self) -> [&mut P; 4] {
        [&mut self.fc_c1, &mut self.fc_c2, &mut self.fc_s1, &mut self.fc_s2]
    }
}

impl<T: Scalar> BamParams<Tensor<T>> {
    pub fn init(dim: usize, reduction: usize, seed: u64) -> Result<Self> {
        if reduction == 0 || !dim.is_multiple_of(reduction) {
            return Err(Error::config(format!("width {dim} not divisible by reduction {reduction}")));
        }
        let reduced = dim / reduction;
        Ok(Self {
            fc_c1: fan_in_uniform(dim, reduced, seed)?,
            fc_c2: fan_in_uniform(reduced, dim, seed.wrapping_add(1))?,
            fc_s1: fan_in_uniform(dim, reduced, seed.wrapping_add(2))?,
            fc_s2: fan_in_uniform(2 * reduced, 1, seed.wrapping_add(3))?,
            reduction,
        })
    }

    /// All-zero weights; both branches then output exactly 0.5.
    pub fn zeros(dim: usize, reduction: usize) -> Result<Self> {
        let mut p = Self::init(dim, reduction, 0)?;
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.fc_c1.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.dim();
        if self.reduction == 0 || !c.is_multiple_of(self.reduction) {
            return Err(Error::config(format!("width {c} not divisible by reduction {}", self.reduction)));
        }
        let r = c / self.reduction;
        let expect = [[c, r], [r, c], [c, r], [2 * r, 1]];
        for ((name, t), e) in self.named().into_iter().zip(expect) {
            if t.shape() != e {
                return Err(Error::config(format!("{name} has shape {:?}, expected {e:?}", t.shape())));
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BamParams<Var> {
        BamParams {
            fc_c1: g.input(&self.fc_c1),
            fc_c2: g.input(&self.fc_c2),
            fc_s1: g.input(&self.fc_s1),
            fc_s2: g.input(&self.fc_s2),
            reduction: self.reduction,
        }
    }
}

/// Channel branch: returns `(Xᶜ, x̂)` with shapes `(..., 1, 1, C)` and `(..., 1, 1, C/r)`.
pub fn channel_aggregate<T: Scalar>(g: &mut Graph<T>, x: Var, p: &BamParams<Var>) -> Result<(Var, Var)> {
    let pooled = g.global_avg_pool(x)?;
    let hidden = g.linear(pooled, p.fc_c1, None)?;
    let x_hat = g.gelu(hidden);
    let logits = g.linear(x_hat, p.fc_c2, None)?;
    Ok((g.sigmoid(logits), x_hat))
}

/// Spatial branch: `(..., H, W, 1)` map from the input and the channel summary `x̂`.
pub fn spatial_aggregate<T: Scalar>(g: &mut Graph<T>, x: Var, x_hat: Var, p: &BamParams<Var>) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let reduced = g.shape(p.fc_s1)[1];
    if g.shape(x_hat).last() != Some(&reduced) {
        return Err(Error::shape(format!(
            "channel summary {:?} does not have {reduced} channels",
            g.shape(x_hat)
        )));
    }
    let hidden = g.linear(x, p.fc_s1, None)?;
    let local = g.gelu(hidden);
    let mut target = shape;
    *target.last_mut().unwrap() = reduced;
    let global = g.expand(x_hat, &target)?;
    let axis = target.len() - 1;
    let joined = g.concat(axis, &[local, global])?;
    let logits = g.linear(joined, p.fc_s2, None)?;
    Ok(g.sigmoid(logits))
}

/// Intermediate values of one [`bam_forward`] call.
#[derive(Clone, Copy, Debug)]
pub struct BamOutput {
    pub output: Var,
    /// `Xᶜ ⊕ Xˢ`, shape of the input.
    pub gate: Var,
    pub x_c: Var,
    pub x_s: Var,
}

pub fn bam_forward<T: Scalar>(g: &mut Graph<T>, x: Var, p: &BamParams<Var>) -> Result<BamOutput> {
    let (x_c, x_hat) = channel_aggregate(g, x, p)?;
    let x_s = spatial_aggregate(g, x, x_hat, p)?;
    let gate = g.add(x_c, x_s)?;
    let output = g.mul(x, gate)?;
    Ok(BamOutput { output, gate, x_c, x_s })
}

/// Graph-free forward pass.
pub fn bam_forward_value<T: Scalar>(x: &Tensor<T>, p: &BamParams<Tensor<T>>) -> Result<Tensor<T>> {
    p.validate()?;
    let mut g = Graph::new();
    let vx = g.input(x);
    let bound = p.bind(&mut g);
    let out = bam_forward(&mut g, vx, &bound)?;
    Ok(g.value(out.output).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_half_and_identity() {
        let p = BamParams::<Tensor<f64>>::zeros(8, 2).unwrap();
        let x = Tensor::uniform(&[4, 4, 8], -3.0, 3.0, 1).unwrap();
        let mut g = Graph::new();
        let vx = g.input(&x);
        let bp = p.bind(&mut g);
        let out = bam_forward(&mut g, vx, &bp).unwrap();
        assert!(g.value(out.x_c).data().iter().all(|&v| v == 0.5));
        assert!(g.value(out.x_s).data().iter().all(|&v| v == 0.5));
        assert_eq!(g.value(out.output).data(), x.data());
    }

    #[test]
    fn summary_width_mismatch_is_shape_error() {
        let p = BamParams::<Tensor<f64>>::init(8, 2, 1).unwrap();
        let mut g = Graph::new();
        let x = g.input(&Tensor::zeros(&[2, 2, 8]).unwrap());
        let bad = g.input(&Tensor::zeros(&[1, 1, 3]).unwrap());
        let bp = p.bind(&mut g);
        assert!(matches!(spatial_aggregate(&mut g, x, bad, &bp), Err(Error::Shape(_))));
    }

    #[test]
    fn reduction_must_divide_width() {
        assert!(matches!(BamParams::<Tensor<f64>>::init(9, 2, 0), Err(Error::Config(_))));
    }
}
