//! Synthetic co-registered SAR intensity pairs with a known change mask.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::metrics::BinaryGrid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Axis-aligned ellipse in pixel coordinates (pixel centers at integers).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_row: f64,
    pub center_col: f64,
    pub radius_row: f64,
    pub radius_col: f64,
}

impl Ellipse {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        let dr = (row as f64 - self.center_row) / self.radius_row;
        let dc = (col as f64 - self.center_col) / self.radius_col;
        dr * dr + dc * dc <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Number of looks; speckle is Gamma(L, 1/L).
    pub looks: f64,
    pub change: Ellipse,
    /// Reflectivity everywhere in date 1 and outside the ellipse in date 2.
    pub background: f64,
    /// Reflectivity inside the ellipse in date 2.
    pub changed: f64,
    pub seed: u64,
}

pub const DEFAULT_BACKGROUND: f64 = 12.0;
pub const DEFAULT_CHANGED: f64 = 100.0;
pub const DEFAULT_CHANGE_FRACTION: f64 = 0.05;
pub const DEFAULT_ASPECT: f64 = 1.5;

impl SynthConfig {
    /// Centered ellipse covering `fraction` of the frame, `aspect` times wider than tall.
    pub fn centered(height: usize, width: usize, looks: f64, fraction: f64, aspect: f64, seed: u64) -> Self {
        let area = fraction * (height * width) as f64;
        let radius_row = (area / (std::f64::consts::PI * aspect)).sqrt();
        Self {
            height,
            width,
            looks,
            change: Ellipse {
                center_row: (height as f64 - 1.0) / 2.0,
                center_col: (width as f64 - 1.0) / 2.0,
                radius_row,
                radius_col: aspect * radius_row,
            },
            background: DEFAULT_BACKGROUND,
            changed: DEFAULT_CHANGED,
            seed,
        }
    }

    pub fn square(size: usize, looks: f64, seed: u64) -> Self {
        Self::centered(size, size, looks, DEFAULT_CHANGE_FRACTION, DEFAULT_ASPECT, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::config(format!("frame {}x{} too small", self.height, self.width)));
        }
        if !(self.looks >= 1.0) || !self.looks.is_finite() {
            return Err(Error::config(format!("looks must be >= 1, got {}", self.looks)));
        }
        if !(self.background > 0.0 && self.changed > 0.0) {
            return Err(Error::config("reflectivity levels must be positive"));
        }
        let e = &self.change;
        if !(e.radius_row > 0.0 && e.radius_col > 0.0) {
            return Err(Error::config("ellipse radii must be positive"));
        }
        let inside = |c: f64, r: f64, n: usize| c - r >= 0.0 && c + r <= n as f64 - 1.0;
        if !inside(e.center_row, e.radius_row, self.height) || !inside(e.center_col, e.radius_col, self.width) {
            return Err(Error::config(format!(
                "change ellipse {e:?} does not fit inside the {}x{} frame",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn mask(&self) -> BinaryGrid {
        let cells = (0..self.height * self.width)
            .map(|i| self.change.contains(i / self.width, i % self.width))
            .collect();
        BinaryGrid { height: self.height, width: self.width, cells }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPair<T> {
    pub i1: Tensor<T>,
    pub i2: Tensor<T>,
    pub gt: BinaryGrid,
}

/// Two speckled intensity images, `(H, W, 1)` each, and the change mask.
pub fn synth_pair<T: Scalar>(cfg: &SynthConfig) -> Result<SynthPair<T>> {
    cfg.validate()?;
    let gt = cfg.mask();
    let speckle = Gamma::new(cfg.looks, 1.0 / cfg.looks).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.height * cfg.width;
    let i1: Vec<T> = (0..n).map(|_| T::of(cfg.background * speckle.sample(&mut rng))).collect();
    let i2: Vec<T> = gt
        .cells
        .iter()
        .map(|&c| T::of(if c { cfg.changed } else { cfg.background } * speckle.sample(&mut rng)))
        .collect();
    let shape = [cfg.height, cfg.width, 1];
    Ok(SynthPair { i1: Tensor::from_values(&shape, i1)?, i2: Tensor::from_values(&shape, i2)?, gt })
}
