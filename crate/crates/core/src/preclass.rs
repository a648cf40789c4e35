//! Pre-classification: log-ratio difference image, hierarchical fuzzy
//! c-means labelling and training patch sampling.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(H, W)` of an `(H, W, 1)` single-channel image.
pub fn image_dims<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize)> {
    match img.shape() {
        [h, w, 1] => Ok((*h, *w)),
        s => Err(Error::Input(format!("expected a single-channel (H, W, 1) image, got {s:?}"))),
    }
}

fn same_extent<T: Scalar>(i1: &Tensor<T>, i2: &Tensor<T>) -> Result<(usize, usize)> {
    let a = image_dims(i1)?;
    let b = image_dims(i2)?;
    if a != b {
        return Err(Error::Input(format!("image extents differ: {a:?} vs {b:?}")));
    }
    Ok(a)
}

/// Non-negative per-pixel change magnitude, shape `(H, W, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceImage<T> {
    pub values: Tensor<T>,
}

impl<T: Scalar> DifferenceImage<T> {
    pub fn dims(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }
}

/// `|ln(i2 + 1) − ln(i1 + 1)|`.
pub fn log_ratio<T: Scalar>(i1: &Tensor<T>, i2: &Tensor<T>) -> Result<DifferenceImage<T>> {
    same_extent(i1, i2)?;
    let mut out = Vec::with_capacity(i1.len());
    for (&a, &b) in i1.data().iter().zip(i2.data()) {
        if !(a >= T::zero() && b >= T::zero()) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Input(format!("intensities must be finite and non-negative, got {a} and {b}")));
        }
        out.push((b.ln_1p() - a.ln_1p()).abs());
    }
    Ok(DifferenceImage { values: Tensor::from_values(i1.shape(), out)? })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FcmConfig {
    pub k: usize,
    pub m: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for FcmConfig {
    fn default() -> Self {
        Self { k: 2, m: 2.0, max_iter: 300, tol: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct FcmResult<T> {
    pub centers: Vec<T>,
    /// Row-major `n × k`.
    pub memberships: Vec<T>,
    /// Objective after every membership update.
    pub objective: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// All values were equal; everything sits in cluster 0.
    pub degenerate: bool,
}

impl<T: Scalar> FcmResult<T> {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Index of the largest membership of each point.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.memberships
            .chunks(self.k())
            .map(|row| {
                let mut best = 0;
                for (j, &u) in row.iter().enumerate() {
                    if u > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Rank of each cluster when centers are sorted ascending.
    pub fn center_ranks(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&a, &b| self.centers[a].partial_cmp(&self.centers[b]).unwrap().then(a.cmp(&b)));
        let mut rank = vec![0; self.k()];
        for (r, &j) in order.iter().enumerate() {
            rank[j] = r;
        }
        rank
    }
}

fn update_centers<T: Scalar>(x: &[T], u: &[T], k: usize, m: T, centers: &mut [T]) {
    let mut num = vec![T::zero(); k];
    let mut den = vec![T::zero(); k];
    for (&xi, row) in x.iter().zip(u.chunks(k)) {
        for j in 0..k {
            let w = row[j].powf(m);
            num[j] += w * xi;
            den[j] += w;
        }
    }
    for j in 0..k {
        if den[j] > T::zero() {
            centers[j] = num[j] / den[j];
        }
    }
}

/// Memberships for fixed centers; returns the objective at `(u, centers)`.
fn update_memberships<T: Scalar>(x: &[T], centers: &[T], m: T, u: &mut [T]) -> T {
    let k = centers.len();
    let power = T::of(2.0) / (m - T::one());
    let mut objective = T::zero();
    for (&xi, row) in x.iter().zip(u.chunks_mut(k)) {
        let zeros = centers.iter().filter(|&&c| xi == c).count();
        if zeros > 0 {
            let share = T::one() / T::of(zeros as f64);
            for (uj, &c) in row.iter_mut().zip(centers) {
                *uj = if xi == c { share } else { T::zero() };
            }
            continue;
        }
        // u_ij = 1 / Σ_l (d_ij / d_il)^(2/(m−1)), computed as inv_j / Σ inv_l.
        let mut total = T::zero();
        for (uj, &c) in row.iter_mut().zip(centers) {
            let inv = (xi - c).abs().powf(-power);
            *uj = inv;
            total += inv;
        }
        for (uj, &c) in row.iter_mut().zip(centers) {
            *uj /= total;
            let d = xi - c;
            objective += uj.powf(m) * d * d;
        }
    }
    objective
}

/// Standard fuzzy c-means on scalar data from seeded random memberships.
pub fn fcm<T: Scalar>(values: &[T], cfg: &FcmConfig) -> Result<FcmResult<T>> {
    let (n, k) = (values.len(), cfg.k);
    if k < 2 {
        return Err(Error::config(format!("fcm needs k >= 2, got {k}")));
    }
    if n <= k {
        return Err(Error::config(format!("fcm needs more points than clusters, got n={n}, k={k}")));
    }
    if !(cfg.m > 1.0) {
        return Err(Error::config(format!("fuzzifier must exceed 1, got {}", cfg.m)));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("fcm input contains non-finite values".into()));
    }
    if values.iter().all(|&v| v == values[0]) {
        let mut memberships = vec![T::zero(); n * k];
        memberships.iter_mut().step_by(k).for_each(|u| *u = T::one());
        return Ok(FcmResult {
            centers: vec![values[0]; k],
            memberships,
            objective: vec![T::zero()],
            iterations: 0,
            converged: true,
            degenerate: true,
        });
    }

    let m = T::of(cfg.m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut u = Vec::with_capacity(n * k);
    for _ in 0..n {
        let row: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = row.iter().sum();
        u.extend(row.into_iter().map(|v| T::of(v / s)));
    }

    let mut centers = vec![T::zero(); k];
    update_centers(values, &u, k, m, &mut centers);
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        objective.push(update_memberships(values, &centers, m, &mut u));
        let previous = centers.clone();
        update_centers(values, &u, k, m, &mut centers);
        let shift = previous.iter().zip(&centers).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max);
        if shift.as_f64() < cfg.tol {
            converged = true;
            break;
        }
    }
    // Final memberships agree with the returned centers.
    objective.push(update_memberships(values, &centers, m, &mut u));
    Ok(FcmResult { centers, memberships: u, objective, iterations, converged, degenerate: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Unchanged,
    Changed,
    Intermediate,
}

/// Three-way pixel labelling of an `H × W` grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<Label>,
    /// Set when the difference image was constant.
    pub degenerate: bool,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Input(format!("{} labels for a {height}x{width} grid", labels.len())));
        }
        Ok(Self { height, width, labels, degenerate: false })
    }

    pub fn get(&self, row: usize, col: usize) -> Label {
        self.labels[row * self.width + col]
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// `(row, col)` of every pixel carrying `label`, in raster order.
    pub fn coords_of(&self, label: Label) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HfcmConfig {
    pub m: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for HfcmConfig {
    fn default() -> Self {
        Self { m: 2.0, max_iter: 300, tol: 1e-6, seed: 0 }
    }
}

impl HfcmConfig {
    fn stage(&self, k: usize, seed_offset: u64) -> FcmConfig {
        FcmConfig { k, m: self.m, max_iter: self.max_iter, tol: self.tol, seed: self.seed.wrapping_add(seed_offset) }
    }
}

/// Hierarchical FCM partition of a difference image.
///
/// Stage 1 clusters all values into five groups ordered by center: the top
/// group is CHANGED, the bottom group UNCHANGED. The middle three are split
/// again into three groups; the lowest joins UNCHANGED and the other two are
/// INTERMEDIATE. A constant image yields all UNCHANGED with `degenerate` set.
pub fn hfcm_partition<T: Scalar>(di: &DifferenceImage<T>, cfg: &HfcmConfig) -> Result<LabelMap> {
    let (h, w) = di.dims();
    let values = di.values.data();
    let mut map = LabelMap::new(h, w, vec![Label::Unchanged; h * w])?;
    let stage1 = fcm(values, &cfg.stage(5, 0))?;
    if stage1.degenerate {
        map.degenerate = true;
        return Ok(map);
    }

    let rank = stage1.center_ranks();
    let mut middle = Vec::new();
    for (i, c) in stage1.hard_labels().into_iter().enumerate() {
        map.labels[i] = match rank[c] {
            0 => Label::Unchanged,
            4 => Label::Changed,
            _ => {
                middle.push(i);
                Label::Intermediate
            }
        };
    }

    let sub: Vec<T> = middle.iter().map(|&i| values[i]).collect();
    if sub.len() > 3 {
        let stage2 = fcm(&sub, &cfg.stage(3, 1))?;
        if !stage2.degenerate {
            let rank2 = stage2.center_ranks();
            for (&i, c) in middle.iter().zip(stage2.hard_labels()) {
                if rank2[c] == 0 {
                    map.labels[i] = Label::Unchanged;
                }
            }
        }
    }

    // Hard assignment can leave an extreme cluster empty; seed it with the extreme values.
    let (lo, hi) = values.iter().fold((values[0], values[0]), |(a, b), &v| (a.min(v), b.max(v)));
    if map.count(Label::Changed) == 0 {
        for (l, &v) in map.labels.iter_mut().zip(values) {
            if v == hi {
                *l = Label::Changed;
            }
        }
    }
    if map.count(Label::Unchanged) == 0 {
        for (l, &v) in map.labels.iter_mut().zip(values) {
            if v == lo {
                *l = Label::Unchanged;
            }
        }
    }
    Ok(map)
}

/// Labelled training patches, `(n, P, P, 2)` with the two dates on channels.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch<T> {
    pub patches: Tensor<T>,
    /// 1 for CHANGED, 0 for UNCHANGED.
    pub labels: Vec<usize>,
    pub coords: Vec<(usize, usize)>,
    /// A class had fewer than the requested pixels and was taken whole.
    pub short: bool,
}

/// Reflect an index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    if r < n as isize {
        r as usize
    } else {
        (period - r) as usize
    }
}

/// Extract reflect-padded `P × P` windows covering rows `r − P/2 .. r + P/2`.
pub fn extract_patches<T: Scalar>(
    i1: &Tensor<T>,
    i2: &Tensor<T>,
    coords: &[(usize, usize)],
    patch: usize,
) -> Result<Tensor<T>> {
    let (h, w) = same_extent(i1, i2)?;
    if patch == 0 || !patch.is_multiple_of(2) {
        return Err(Error::config(format!("patch size must be positive and even, got {patch}")));
    }
    if coords.is_empty() {
        return Err(Error::Sampling("no patch centers".into()));
    }
    let half = (patch / 2) as isize;
    let (a, b) = (i1.data(), i2.data());
    let mut out = Vec::with_capacity(coords.len() * patch * patch * 2);
    for &(r, c) in coords {
        if r >= h || c >= w {
            return Err(Error::Input(format!("patch center ({r}, {c}) outside {h}x{w}")));
        }
        for dr in -half..half {
            let rr = reflect(r as isize + dr, h);
            for dc in -half..half {
                let idx = rr * w + reflect(c as isize + dc, w);
                out.push(a[idx]);
                out.push(b[idx]);
            }
        }
    }
    Tensor::from_values(&[coords.len(), patch, patch, 2], out)
}

/// Seeded, class-balanced draw of CHANGED (label 1) and UNCHANGED (label 0)
/// centers. A class with fewer than `n_per_class` pixels is taken whole.
pub fn sample_patches<T: Scalar>(
    i1: &Tensor<T>,
    i2: &Tensor<T>,
    labels: &LabelMap,
    patch: usize,
    n_per_class: usize,
    seed: u64,
) -> Result<PatchBatch<T>> {
    let (h, w) = same_extent(i1, i2)?;
    if (labels.height, labels.width) != (h, w) {
        return Err(Error::Input(format!(
            "label map is {}x{}, images are {h}x{w}",
            labels.height, labels.width
        )));
    }
    if n_per_class == 0 {
        return Err(Error::config("n_per_class must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    let mut classes = Vec::new();
    let mut short = false;
    for (label, class) in [(Label::Changed, 1), (Label::Unchanged, 0)] {
        let pool = labels.coords_of(label);
        if pool.is_empty() {
            return Err(Error::Sampling(format!("no {label:?} pixels to sample")));
        }
        let take = n_per_class.min(pool.len());
        short |= take < n_per_class;
        for i in index::sample(&mut rng, pool.len(), take) {
            coords.push(pool[i]);
            classes.push(class);
        }
    }
    let patches = extract_patches(i1, i2, &coords, patch)?;
    Ok(PatchBatch { patches, labels: classes, coords, short })
}
