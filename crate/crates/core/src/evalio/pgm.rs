//! Binary (P5) PGM with 8-bit samples.

use std::path::Path;

use super::metrics::BinaryGrid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.pos, message: message.into() }
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.fail(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Format { offset: start, message: format!("{what} out of range") })
    }
}

/// Parse a P5 image into an `(H, W, 1)` tensor of raw sample values.
pub fn parse_pgm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut h = Header { bytes, pos: 0 };
    if !bytes.starts_with(b"P5") {
        return Err(h.fail("missing P5 magic"));
    }
    h.pos = 2;
    let width = h.number("width")?;
    let height = h.number("height")?;
    h.skip_space();
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format { offset: maxval_at, message: format!("maxval {maxval} not in 1..=255") });
    }
    if width == 0 || height == 0 {
        return Err(h.fail("zero image extent"));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(h.fail("expected a whitespace byte after maxval")),
    }
    let need = width * height;
    let payload = &bytes[h.pos..];
    if payload.len() < need {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("truncated payload: {} of {need} bytes", payload.len()),
        });
    }
    let data = payload[..need].iter().map(|&b| T::of(b as f64)).collect();
    Tensor::from_values(&[height, width, 1], data)
}

pub fn read_pgm<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    parse_pgm(&std::fs::read(path)?)
}

/// Encode an `(H, W, 1)` tensor, rounding and clamping samples to `0..=maxval`.
pub fn encode_pgm<T: Scalar>(img: &Tensor<T>, maxval: u8) -> Result<Vec<u8>> {
    let (h, w) = match img.shape() {
        [h, w, 1] => (*h, *w),
        s => return Err(Error::Input(format!("expected an (H, W, 1) image, got {s:?}"))),
    };
    if maxval == 0 {
        return Err(Error::config("maxval must be positive"));
    }
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    let top = maxval as f64;
    out.extend(img.data().iter().map(|v| {
        let v = v.as_f64();
        if v.is_nan() {
            0
        } else {
            v.round().clamp(0.0, top) as u8
        }
    }));
    Ok(out)
}

pub fn write_pgm<T: Scalar>(path: impl AsRef<Path>, img: &Tensor<T>, maxval: u8) -> Result<()> {
    std::fs::write(path, encode_pgm(img, maxval)?)?;
    Ok(())
}

/// Binary map written as `{0, 255}`.
pub fn write_binary_pgm(path: impl AsRef<Path>, grid: &BinaryGrid) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    out.extend(grid.cells.iter().map(|&c| if c { 255u8 } else { 0 }));
    std::fs::write(path, out)?;
    Ok(())
}
