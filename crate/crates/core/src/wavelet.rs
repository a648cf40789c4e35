//! Single-level orthonormal 2-D Haar transform, applied per channel.
//!
//! Rows are filtered first with `f_L = (1/√2, 1/√2)` and `f_H = (1/√2, -1/√2)`,
//! then columns. Subband `X_AB` uses filter `A` along rows and `B` along
//! columns, so for a 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! LL = (a + b + c + d) / 2      HL = (a - b + c - d) / 2
//! LH = (a + b - c - d) / 2      HH = (a - b - c + d) / 2
//! ```
//!
//! The transform is orthonormal, so it preserves energy and its inverse is
//! its transpose. Inputs must have even height and width; there is no padding.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The four subbands of one `(H, W, C)` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet<T> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
    source_shape: [usize; 3],
}

impl<T: Scalar> SubbandSet<T> {
    /// Assembles a set from four `(h, w, c)` bands of one shape.
    pub fn new(ll: Tensor<T>, lh: Tensor<T>, hl: Tensor<T>, hh: Tensor<T>) -> Result<Self> {
        let s = ll.shape().to_vec();
        if s.len() != 3 {
            return Err(Error::shape(format!("subbands must be (h, w, c), got {s:?}")));
        }
        for band in [&lh, &hl, &hh] {
            if band.shape() != s.as_slice() {
                return Err(Error::shape(format!("subband shapes differ: {s:?} vs {:?}", band.shape())));
            }
        }
        Ok(Self { ll, lh, hl, hh, source_shape: [2 * s[0], 2 * s[1], s[2]] })
    }

    pub fn source_shape(&self) -> [usize; 3] {
        self.source_shape
    }

    pub fn bands(&self) -> [&Tensor<T>; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    pub fn energy(&self) -> T {
        self.bands().iter().map(|b| b.sum_squares()).sum()
    }
}

/// Forward transform of `x: (H, W, C)` with even `H`, `W`.
pub fn dwt2_haar<T: Scalar>(x: &Tensor<T>) -> Result<SubbandSet<T>> {
    if x.rank() != 3 {
        return Err(Error::shape(format!("dwt2_haar expects (H, W, C), got {:?}", x.shape())));
    }
    let (_, h, w, c) = packed_dims(x.shape(), false)?;
    let packed = haar_forward_packed(x.data(), 1, h, w, c);
    let (h2, w2) = (h / 2, w / 2);
    let mut bands: [Vec<T>; 4] = Default::default();
    for px in packed.chunks(4 * c) {
        for (band, chunk) in bands.iter_mut().zip(px.chunks(c)) {
            band.extend_from_slice(chunk);
        }
    }
    let [ll, lh, hl, hh] = bands.map(|b| Tensor::from_parts(vec![h2, w2, c], b));
    SubbandSet::new(ll, lh, hl, hh)
}

/// Exact inverse of [`dwt2_haar`].
pub fn idwt2_haar<T: Scalar>(s: &SubbandSet<T>) -> Result<Tensor<T>> {
    let shape = s.ll.shape();
    for band in s.bands() {
        if band.shape() != shape {
            return Err(Error::shape("inconsistent subband shapes"));
        }
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut packed = Vec::with_capacity(4 * h * w * c);
    for p in 0..h * w {
        for band in s.bands() {
            packed.extend_from_slice(&band.data()[p * c..(p + 1) * c]);
        }
    }
    let out = haar_inverse_packed(&packed, 1, h, w, c);
    Ok(Tensor::from_parts(vec![2 * h, 2 * w, c], out))
}

/// Interprets a `[..., H, W, C]` shape as `(outer, H, W, C)`.
///
/// With `packed` set the last axis holds four stacked subbands and the
/// returned `C` is a quarter of it; otherwise `H` and `W` must be even.
pub(crate) fn packed_dims(shape: &[usize], packed: bool) -> Result<(usize, usize, usize, usize)> {
    let r = shape.len();
    if r < 3 {
        return Err(Error::shape(format!("wavelet transform needs [..., H, W, C], got {shape:?}")));
    }
    let (h, w, c) = (shape[r - 3], shape[r - 2], shape[r - 1]);
    let outer = shape[..r - 3].iter().product();
    if packed {
        if c % 4 != 0 {
            return Err(Error::shape(format!("packed subband channels {c} not divisible by 4")));
        }
        Ok((outer, h, w, c / 4))
    } else {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("Haar DWT needs even H and W, got {h}x{w}")));
        }
        Ok((outer, h, w, c))
    }
}

/// `[outer, h, w, c]` → `[outer, h/2, w/2, 4c]` with channel blocks `LL | LH | HL | HH`.
pub(crate) fn haar_forward_packed<T: Scalar>(src: &[T], outer: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let half = T::of(0.5);
    let mut out = vec![T::zero(); outer * h * w * c];
    for o in 0..outer {
        let img = &src[o * h * w * c..(o + 1) * h * w * c];
        let dst = &mut out[o * h * w * c..(o + 1) * h * w * c];
        for i in 0..h2 {
            for j in 0..w2 {
                let top = (2 * i * w + 2 * j) * c;
                let bot = ((2 * i + 1) * w + 2 * j) * c;
                let base = (i * w2 + j) * 4 * c;
                for ch in 0..c {
                    let (a, b) = (img[top + ch], img[top + c + ch]);
                    let (cc, d) = (img[bot + ch], img[bot + c + ch]);
                    let (low_top, high_top) = (a + b, a - b);
                    let (low_bot, high_bot) = (cc + d, cc - d);
                    dst[base + ch] = half * (low_top + low_bot);
                    dst[base + c + ch] = half * (low_top - low_bot);
                    dst[base + 2 * c + ch] = half * (high_top + high_bot);
                    dst[base + 3 * c + ch] = half * (high_top - high_bot);
                }
            }
        }
    }
    out
}

/// `[outer, h, w, 4c]` → `[outer, 2h, 2w, c]`; inverse of [`haar_forward_packed`].
pub(crate) fn haar_inverse_packed<T: Scalar>(src: &[T], outer: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let (hf, wf) = (2 * h, 2 * w);
    let half = T::of(0.5);
    let mut out = vec![T::zero(); outer * hf * wf * c];
    for o in 0..outer {
        let bands = &src[o * h * w * 4 * c..(o + 1) * h * w * 4 * c];
        let dst = &mut out[o * hf * wf * c..(o + 1) * hf * wf * c];
        for i in 0..h {
            for j in 0..w {
                let base = (i * w + j) * 4 * c;
                let top = (2 * i * wf + 2 * j) * c;
                let bot = ((2 * i + 1) * wf + 2 * j) * c;
                for ch in 0..c {
                    let ll = bands[base + ch];
                    let lh = bands[base + c + ch];
                    let hl = bands[base + 2 * c + ch];
                    let hh = bands[base + 3 * c + ch];
                    dst[top + ch] = half * (ll + lh + hl + hh);
                    dst[top + c + ch] = half * (ll + lh - hl - hh);
                    dst[bot + ch] = half * (ll - lh + hl - hh);
                    dst[bot + c + ch] = half * (ll - lh - hl + hh);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, values: &[f64]) -> Tensor<f64> {
        Tensor::from_values(&[h, w, 1], values.to_vec()).unwrap()
    }

    #[test]
    fn constant_block_has_only_low_band() {
        let s = dwt2_haar(&image(2, 2, &[1.0; 4])).unwrap();
        assert_eq!(s.ll.data(), &[2.0]);
        assert_eq!(s.lh.data(), &[0.0]);
        assert_eq!(s.hl.data(), &[0.0]);
        assert_eq!(s.hh.data(), &[0.0]);
    }

    #[test]
    fn row_then_column_naming() {
        let s = dwt2_haar(&image(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(s.ll.data(), &[5.0]);
        assert_eq!(s.lh.data(), &[-2.0]);
        assert_eq!(s.hl.data(), &[-1.0]);
        assert_eq!(s.hh.data(), &[0.0]);
        assert_eq!(s.energy(), 30.0);
        assert_eq!(s.source_shape(), [2, 2, 1]);
    }

    #[test]
    fn inverse_of_pure_low_band_is_constant() {
        let band = |v| Tensor::from_values(&[1, 1, 1], vec![v]).unwrap();
        let s = SubbandSet::new(band(2.0), band(0.0), band(0.0), band(0.0)).unwrap();
        assert_eq!(idwt2_haar(&s).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn odd_sizes_are_rejected() {
        let x = Tensor::<f64>::zeros(&[3, 4, 1]).unwrap();
        assert!(matches!(dwt2_haar(&x), Err(Error::Shape(_))));
        let x = Tensor::<f64>::zeros(&[4, 5, 2]).unwrap();
        assert!(matches!(dwt2_haar(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn mismatched_subbands_are_rejected() {
        let a = Tensor::<f64>::zeros(&[2, 2, 1]).unwrap();
        let b = Tensor::<f64>::zeros(&[2, 3, 1]).unwrap();
        assert!(SubbandSet::new(a.clone(), a.clone(), b, a).is_err());
    }

    #[test]
    fn multichannel_round_trip() {
        let x = Tensor::<f64>::uniform(&[8, 8, 3], -1.0, 1.0, 11).unwrap();
        let back = idwt2_haar(&dwt2_haar(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-9);
    }
}
