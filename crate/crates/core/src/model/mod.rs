//! WBANet: a per-pixel lift of the two dates, a stack of wavelet
//! bi-dimensional aggregation blocks, spatial pooling and a two-way linear
//! classifier, trained on pre-classification pseudo-labels.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION, MAGIC};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bam::{bam_forward, BamParams, REDUCTION};
use crate::error::{Error, Result};
use crate::evalio::BinaryGrid;
use crate::preclass::{extract_patches, image_dims, sample_patches, DifferenceImage, Label, LabelMap, PatchBatch};
use crate::scalar::Scalar;
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::wsm::{fan_in_uniform, wave_attention, WsmParams};

pub const MAX_BLOCKS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub reduction: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub n_per_class: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            embed_dim: 32,
            n_heads: 4,
            n_blocks: 2,
            reduction: REDUCTION,
            lr: 1e-3,
            epochs: 30,
            batch_size: 64,
            seed: 0,
            n_per_class: 1000,
        }
    }
}

impl ModelConfig {
    pub fn chao_lake() -> Self {
        Self { n_blocks: 5, ..Self::default() }
    }

    pub fn sulzberger() -> Self {
        Self { n_blocks: 2, ..Self::default() }
    }

    pub fn yellow_river() -> Self {
        Self { n_blocks: 4, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.patch_size < 2 || !self.patch_size.is_multiple_of(2) {
            return fail(format!("patch size must be even and >= 2, got {}", self.patch_size));
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(4) {
            return fail(format!("embed_dim must be a positive multiple of 4, got {}", self.embed_dim));
        }
        if self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return fail(format!("embed_dim {} not divisible into {} heads", self.embed_dim, self.n_heads));
        }
        if !(1..=MAX_BLOCKS).contains(&self.n_blocks) {
            return fail(format!("n_blocks must be in 1..={MAX_BLOCKS}, got {}", self.n_blocks));
        }
        if self.reduction == 0 || !self.embed_dim.is_multiple_of(self.reduction) {
            return fail(format!("embed_dim {} not divisible by reduction {}", self.embed_dim, self.reduction));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.n_per_class == 0 {
            return fail("batch_size and n_per_class must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WbaBlockParams<P> {
    pub wsm: WsmParams<P>,
    pub bam: BamParams<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WbaNetParams<P> {
    /// Per-pixel lift `2 → C`.
    pub w_e: P,
    pub blocks: Vec<WbaBlockParams<P>>,
    /// Classifier `C → 2`.
    pub w_cls: P,
    pub b_cls: P,
}

impl<P> WbaNetParams<P> {
    /// Every parameter with a stable dotted name, in storage order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = vec![("embed.w_e".to_string(), &self.w_e)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.wsm.named().into_iter().map(|(n, p)| (format!("block{i}.wsm.{n}"), p)));
            out.extend(b.bam.named().into_iter().map(|(n, p)| (format!("block{i}.bam.{n}"), p)));
        }
        out.push(("head.w".to_string(), &self.w_cls));
        out.push(("head.b".to_string(), &self.b_cls));
        out
    }

    /// Mutable parameters in the order of [`WbaNetParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut P> {
        let mut out = vec![&mut self.w_e];
        for b in &mut self.blocks {
            out.extend(b.wsm.tensors_mut());
            out.extend(b.bam.tensors_mut());
        }
        out.push(&mut self.w_cls);
        out.push(&mut self.b_cls);
        out
    }
}

impl<T: Scalar> WbaNetParams<Tensor<T>> {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let seed = cfg.seed;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for i in 0..cfg.n_blocks as u64 {
            blocks.push(WbaBlockParams {
                wsm: WsmParams::init(c, cfg.n_heads, seed.wrapping_add(100 + 10 * i))?,
                bam: BamParams::init(c, cfg.reduction, seed.wrapping_add(105 + 10 * i))?,
            });
        }
        let mut p = Self {
            w_e: fan_in_uniform(2, c, seed.wrapping_add(1))?,
            blocks,
            w_cls: fan_in_uniform(c, 2, seed.wrapping_add(2))?,
            b_cls: Tensor::zeros(&[2])?,
        };
        for t in p.tensors_mut() {
            t.set_requires_grad(true);
        }
        Ok(p)
    }

    pub fn n_values(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph<T>) -> WbaNetParams<Var> {
        WbaNetParams {
            w_e: g.input(&self.w_e),
            blocks: self.blocks.iter().map(|b| WbaBlockParams { wsm: b.wsm.bind(g), bam: b.bam.bind(g) }).collect(),
            w_cls: g.input(&self.w_cls),
            b_cls: g.input(&self.b_cls),
        }
    }
}

impl WbaNetParams<Var> {
    /// Rebuild handles from a flat list in the order of [`WbaNetParams::named`].
    pub fn from_vars(n_heads: usize, reduction: usize, vars: &[Var]) -> Result<Self> {
        if vars.len() < 4 || !(vars.len() - 3).is_multiple_of(8) {
            return Err(Error::shape(format!("{} handles do not describe a network", vars.len())));
        }
        let blocks = vars[1..vars.len() - 2]
            .chunks(8)
            .map(|b| WbaBlockParams {
                wsm: WsmParams { w_d: b[0], w_q: b[1], kv_conv: b[2], w_o: b[3], n_heads },
                bam: BamParams { fc_c1: b[4], fc_c2: b[5], fc_s1: b[6], fc_s2: b[7], reduction },
            })
            .collect();
        Ok(Self { w_e: vars[0], blocks, w_cls: vars[vars.len() - 2], b_cls: vars[vars.len() - 1] })
    }
}

/// Per-pixel linear lift of the two temporal channels: `(..., 2)` → `(..., C)`.
pub fn embed<T: Scalar>(g: &mut Graph<T>, patch: Var, w_e: Var) -> Result<Var> {
    g.linear(patch, w_e, None)
}

/// `X₁ = X + wsm(X)`, `Y = X₁ + bam(X₁)`.
pub fn block_forward<T: Scalar>(g: &mut Graph<T>, x: Var, p: &WbaBlockParams<Var>) -> Result<Var> {
    let attn = wave_attention(g, x, &p.wsm)?;
    let x1 = g.add(x, attn.output)?;
    let agg = bam_forward(g, x1, &p.bam)?;
    g.add(x1, agg.output)
}

/// Logits `(n, 2)` for patches `(n, P, P, 2)`.
pub fn forward<T: Scalar>(g: &mut Graph<T>, patches: Var, p: &WbaNetParams<Var>) -> Result<Var> {
    let n = match g.shape(patches) {
        [n, _, _, 2] => *n,
        s => return Err(Error::shape(format!("patches must be (n, P, P, 2), got {s:?}"))),
    };
    let mut x = embed(g, patches, p.w_e)?;
    for b in &p.blocks {
        x = block_forward(g, x, b)?;
    }
    let pooled = g.global_avg_pool(x)?;
    let c = g.shape(pooled)[3];
    let flat = g.reshape(pooled, &[n, c])?;
    g.linear(flat, p.w_cls, Some(p.b_cls))
}

/// Graph-free logits.
pub fn logits<T: Scalar>(patches: &Tensor<T>, params: &WbaNetParams<Tensor<T>>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(patches.clone());
    let bound = params.bind(&mut g);
    let out = forward(&mut g, x, &bound)?;
    Ok(g.value(out).clone())
}

/// 1 where the changed logit is strictly larger.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    logits.data().chunks(2).map(|r| usize::from(r[1] > r[0])).collect()
}

/// Network input images: `ln(1 + I)` of both dates standardised by their
/// joint mean and standard deviation.
pub fn normalize_pair<T: Scalar>(i1: &Tensor<T>, i2: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if image_dims(i1)? != image_dims(i2)? {
        return Err(Error::Input(format!("image extents differ: {:?} vs {:?}", i1.shape(), i2.shape())));
    }
    let a = i1.map(|v| v.max(T::zero()).ln_1p());
    let b = i2.map(|v| v.max(T::zero()).ln_1p());
    let n = T::of((a.len() + b.len()) as f64);
    let mean = a.data().iter().chain(b.data()).copied().sum::<T>() / n;
    let var = a.data().iter().chain(b.data()).map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = if var > T::zero() { var.sqrt() } else { T::one() };
    Ok((a.map(|v| (v - mean) / std), b.map(|v| (v - mean) / std)))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean cross-entropy per epoch.
    pub loss: Vec<f64>,
    /// Training accuracy per epoch, in `[0, 1]`.
    pub accuracy: Vec<f64>,
    /// A pseudo-label class had fewer pixels than requested.
    pub short_sample: bool,
}

fn gather<T: Scalar>(batch: &PatchBatch<T>, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = batch.patches.shape();
    let per = s[1] * s[2] * s[3];
    let src = batch.patches.data();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&src[i * per..(i + 1) * per]);
    }
    let labels = idx.iter().map(|&i| batch.labels[i]).collect();
    Ok((Tensor::from_values(&[idx.len(), s[1], s[2], s[3]], data)?, labels))
}

/// Mini-batch Adam on a fixed patch batch, updating `params` in place.
pub fn fit<T: Scalar>(
    batch: &PatchBatch<T>,
    params: &mut WbaNetParams<Tensor<T>>,
    cfg: &ModelConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let n = batch.labels.len();
    if n == 0 {
        return Err(Error::Sampling("empty training batch".into()));
    }
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory { short_sample: batch.short, ..TrainHistory::default() };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let (x, y) = gather(batch, idx)?;
            let mut g = Graph::new();
            let vx = g.constant(x);
            let bound = params.bind(&mut g);
            let out = forward(&mut g, vx, &bound)?;
            let loss = g.cross_entropy(out, &y)?;
            loss_sum += g.value(loss).data()[0].as_f64() * idx.len() as f64;
            correct += argmax_rows(g.value(out)).iter().zip(&y).filter(|(a, b)| a == b).count();
            g.backward(loss)?;
            let vars = bound.named().into_iter().map(|(_, v)| *v).collect::<Vec<_>>();
            let mut tensors = params.tensors_mut();
            for (v, t) in vars.into_iter().zip(tensors.iter_mut()) {
                t.zero_grad();
                g.write_grad(v, t)?;
            }
            adam_step(&mut tensors, &mut state, &adam)?;
        }
        let loss = loss_sum / n as f64;
        if !loss.is_finite() {
            return Err(Error::Degenerate("training loss diverged".into()));
        }
        history.loss.push(loss);
        history.accuracy.push(correct as f64 / n as f64);
    }
    Ok(history)
}

/// Sample pseudo-labelled patches from a pair and train fresh parameters.
pub fn train<T: Scalar>(
    i1: &Tensor<T>,
    i2: &Tensor<T>,
    labels: &LabelMap,
    cfg: &ModelConfig,
) -> Result<(WbaNetParams<Tensor<T>>, TrainHistory)> {
    cfg.validate()?;
    let (a, b) = normalize_pair(i1, i2)?;
    let batch = sample_patches(&a, &b, labels, cfg.patch_size, cfg.n_per_class, cfg.seed.wrapping_add(4))?;
    let mut params = WbaNetParams::init(cfg)?;
    let history = fit(&batch, &mut params, cfg)?;
    Ok((params, history))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    PseudoConfident,
    Network,
    /// Resolved by a difference-image threshold instead of the network.
    Threshold,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChangeMap {
    pub map: BinaryGrid,
    pub provenance: Vec<Provenance>,
}

/// Patches classified per forward pass at inference.
const INFER_CHUNK: usize = 256;

/// Keep confident pseudo-labels and classify INTERMEDIATE pixels with the network.
pub fn predict_map<T: Scalar>(
    i1: &Tensor<T>,
    i2: &Tensor<T>,
    labels: &LabelMap,
    params: &WbaNetParams<Tensor<T>>,
    cfg: &ModelConfig,
) -> Result<ChangeMap> {
    let (h, w) = image_dims(i1)?;
    if (labels.height, labels.width) != (h, w) {
        return Err(Error::Input(format!("label map is {}x{}, images are {h}x{w}", labels.height, labels.width)));
    }
    let mut map = BinaryGrid::filled(h, w, false);
    let mut provenance = vec![Provenance::PseudoConfident; h * w];
    for (cell, &l) in map.cells.iter_mut().zip(&labels.labels) {
        *cell = l == Label::Changed;
    }
    let pending = labels.coords_of(Label::Intermediate);
    if pending.is_empty() {
        return Ok(ChangeMap { map, provenance });
    }
    let (a, b) = normalize_pair(i1, i2)?;
    for chunk in pending.chunks(INFER_CHUNK) {
        let patches = extract_patches(&a, &b, chunk, cfg.patch_size)?;
        let out = logits(&patches, params)?;
        for (&(r, c), cls) in chunk.iter().zip(argmax_rows(&out)) {
            map.cells[r * w + c] = cls == 1;
            provenance[r * w + c] = Provenance::Network;
        }
    }
    Ok(ChangeMap { map, provenance })
}

/// Network-free map: INTERMEDIATE pixels are CHANGED when their difference
/// value exceeds the midpoint between the largest UNCHANGED and the smallest
/// CHANGED value.
pub fn threshold_map<T: Scalar>(di: &DifferenceImage<T>, labels: &LabelMap) -> Result<ChangeMap> {
    let (h, w) = di.dims();
    if (labels.height, labels.width) != (h, w) {
        return Err(Error::Input(format!("label map is {}x{}, difference image is {h}x{w}", labels.height, labels.width)));
    }
    let values = di.values.data();
    let extreme = |label, pick: fn(T, T) -> T| {
        values.iter().zip(&labels.labels).filter(|(_, &l)| l == label).map(|(&v, _)| v).reduce(pick)
    };
    let threshold = match (extreme(Label::Unchanged, T::max), extreme(Label::Changed, T::min)) {
        (Some(u), Some(c)) => (u + c) / T::of(2.0),
        (Some(u), None) => u,
        (None, Some(c)) => c,
        (None, None) => T::zero(),
    };
    let mut map = BinaryGrid::filled(h, w, false);
    let mut provenance = vec![Provenance::PseudoConfident; h * w];
    for (i, &l) in labels.labels.iter().enumerate() {
        map.cells[i] = match l {
            Label::Changed => true,
            Label::Unchanged => false,
            Label::Intermediate => {
                provenance[i] = Provenance::Threshold;
                values[i] > threshold
            }
        };
    }
    Ok(ChangeMap { map, provenance })
}
