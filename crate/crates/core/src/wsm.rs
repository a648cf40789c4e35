//! Wavelet self-attention: queries come from every pixel of the input, keys
//! and values from its Haar-downsampled copy, and the inverse transform of
//! the downsampled features is fused back into the output projection.
//!
//! For an input `X: (H, W, C)`:
//!
//! 1. `X̃ = X · W_d` reduces channels to `C/4`.
//! 2. `X̂ = concat(LL, LH, HL, HH)` of `dwt(X̃)`, shape `(H/2, W/2, C)`.
//! 3. `Q = X · W_q` over `H·W` tokens; `[K | V] = X̂ · W_kv` over `H·W/4` tokens.
//! 4. `head_i = softmax(Q_i K_iᵀ / √D_h) V_i` for each of the `N_h` heads.
//! 5. `Xʳ = idwt(X̂)`, shape `(H, W, C/4)`.
//! 6. `out = concat(head_0 … head_{N_h−1}, Xʳ) · W_o`, back to `(H, W, C)`.
//!
//! All functions accept optional leading batch axes: `(..., H, W, C)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Learnable matrices of one wavelet self-attention module.
///
/// Generic over the handle type so the same layout serves stored tensors
/// (`WsmParams<Tensor<T>>`) and their bindings on a graph (`WsmParams<Var>`).
#[derive(Clone, Debug, PartialEq)]
pub struct WsmParams<P> {
    /// Channel reduction `C → C/4`.
    pub w_d: P,
    /// Query projection `C → C`, initialised to the identity.
    pub w_q: P,
    /// Fused key/value projection `C → 2C`.
    pub kv_conv: P,
    /// Output projection `C + C/4 → C` over heads and reconstructed channels.
    pub w_o: P,
    pub n_heads: usize,
}

fn check_dims(dim: usize, n_heads: usize) -> Result<()> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::config(format!("embedding width {dim} must be a positive multiple of 4")));
    }
    if n_heads == 0 || !dim.is_multiple_of(n_heads) {
        return Err(Error::config(format!("embedding width {dim} not divisible into {n_heads} heads")));
    }
    Ok(())
}

/// `uniform(−1/√fan_in, 1/√fan_in)` matrix of shape `[fan_in, fan_out]`.
pub(crate) fn fan_in_uniform<T: Scalar>(fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor<T>> {
    let bound = T::of(1.0 / (fan_in as f64).sqrt());
    Tensor::uniform(&[fan_in, fan_out], -bound, bound, seed)
}

impl<P> WsmParams<P> {
    pub fn named(&self) -> [(&'static str, &P); 4] {
        [("w_d", &self.w_d), ("w_q", &self.w_q), ("kv_conv", &self.kv_conv), ("w_o", &self.w_o)]
    }

    pub fn tensors_mut(&mut self) -> [&mut P; 4] {
        [&mut self.w_d, &mut self.w_q, &mut self.kv_conv, &mut self.w_o]
    }
}

impl<T: Scalar> WsmParams<Tensor<T>> {
    /// Fresh parameters; each matrix draws from its own seed derived from `seed`.
    pub fn init(dim: usize, n_heads: usize, seed: u64) -> Result<Self> {
        check_dims(dim, n_heads)?;
        let quarter = dim / 4;
        Ok(Self {
            w_d: fan_in_uniform(dim, quarter, seed)?,
            w_q: Tensor::eye(dim)?,
            kv_conv: fan_in_uniform(dim, 2 * dim, seed.wrapping_add(1))?,
            w_o: fan_in_uniform(dim + quarter, dim, seed.wrapping_add(2))?,
            n_heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn d_head(&self) -> usize {
        self.dim() / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.dim();
        check_dims(c, self.n_heads)?;
        let expect = [[c, c / 4], [c, c], [c, 2 * c], [c + c / 4, c]];
        for ((name, t), e) in self.named().into_iter().zip(expect) {
            if t.shape() != e {
                return Err(Error::config(format!("{name} has shape {:?}, expected {e:?}", t.shape())));
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph<T>) -> WsmParams<Var> {
        WsmParams {
            w_d: g.input(&self.w_d),
            w_q: g.input(&self.w_q),
            kv_conv: g.input(&self.kv_conv),
            w_o: g.input(&self.w_o),
            n_heads: self.n_heads,
        }
    }
}

/// Result of [`wave_attention`]: the module output and each head's
/// attention matrix of shape `(..., H·W, H·W/4)`.
#[derive(Clone, Debug)]
pub struct WaveAttention {
    pub output: Var,
    pub attention: Vec<Var>,
}

fn map_dims<T: Scalar>(g: &Graph<T>, x: Var) -> Result<(Vec<usize>, usize, usize, usize)> {
    let s = g.shape(x);
    if s.len() < 3 {
        return Err(Error::config(format!("feature map must be (..., H, W, C), got {s:?}")));
    }
    let r = s.len();
    Ok((s[..r - 3].to_vec(), s[r - 3], s[r - 2], s[r - 1]))
}

fn with_lead(lead: &[usize], tail: &[usize]) -> Vec<usize> {
    lead.iter().chain(tail).copied().collect()
}

/// Channel reduction by `w_d` followed by the Haar DWT, subbands stacked on
/// channels: `(..., H, W, C)` → `(..., H/2, W/2, C)`.
pub fn wavelet_downsample<T: Scalar>(g: &mut Graph<T>, x: Var, w_d: Var) -> Result<Var> {
    let (_, h, w, c) = map_dims(g, x)?;
    if c % 4 != 0 {
        return Err(Error::config(format!("channel count {c} not divisible by 4")));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::config(format!("spatial extent {h}x{w} must be even")));
    }
    if g.shape(w_d) != [c, c / 4] {
        return Err(Error::config(format!("w_d has shape {:?}, expected [{c}, {}]", g.shape(w_d), c / 4)));
    }
    let reduced = g.linear(x, w_d, None)?;
    g.dwt_haar(reduced)
}

pub fn wave_attention<T: Scalar>(g: &mut Graph<T>, x: Var, p: &WsmParams<Var>) -> Result<WaveAttention> {
    let (lead, h, w, c) = map_dims(g, x)?;
    check_dims(c, p.n_heads)?;
    let d_head = c / p.n_heads;
    let (tokens, kv_tokens) = (h * w, h * w / 4);

    let x_hat = wavelet_downsample(g, x, p.w_d)?;
    let flat = g.reshape(x, &with_lead(&lead, &[tokens, c]))?;
    let q = g.linear(flat, p.w_q, None)?;
    let hat_flat = g.reshape(x_hat, &with_lead(&lead, &[kv_tokens, c]))?;
    let kv = g.linear(hat_flat, p.kv_conv, None)?;
    let axis = lead.len() + 1;
    let k = g.slice(kv, axis, 0, c)?;
    let v = g.slice(kv, axis, c, c)?;
    if g.shape(k)[axis - 1] * 4 != g.shape(q)[axis - 1] {
        return Err(Error::shape("key/value tokens must be a quarter of the query tokens"));
    }

    let scale = T::one() / T::of(d_head as f64).sqrt();
    let mut parts = Vec::with_capacity(p.n_heads + 1);
    let mut attention = Vec::with_capacity(p.n_heads);
    for i in 0..p.n_heads {
        let qi = g.slice(q, axis, i * d_head, d_head)?;
        let ki = g.slice(k, axis, i * d_head, d_head)?;
        let vi = g.slice(v, axis, i * d_head, d_head)?;
        let kt = g.transpose_last(ki)?;
        let scores = g.matmul(qi, kt)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores);
        parts.push(g.matmul(attn, vi)?);
        attention.push(attn);
    }

    let recon = g.idwt_haar(x_hat)?;
    parts.push(g.reshape(recon, &with_lead(&lead, &[tokens, c / 4]))?);
    let fused = g.concat(axis, &parts)?;
    let out = g.linear(fused, p.w_o, None)?;
    let output = g.reshape(out, &with_lead(&lead, &[h, w, c]))?;
    Ok(WaveAttention { output, attention })
}

/// Graph-free forward pass for inference on one map or a batch.
pub fn wave_attention_forward<T: Scalar>(x: &Tensor<T>, p: &WsmParams<Tensor<T>>) -> Result<Tensor<T>> {
    p.validate()?;
    let mut g = Graph::new();
    let vx = g.input(x);
    let bound = p.bind(&mut g);
    let out = wave_attention(&mut g, vx, &bound)?;
    Ok(g.value(out.output).clone())
}
