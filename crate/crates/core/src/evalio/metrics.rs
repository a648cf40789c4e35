use serde::Serialize;

use crate::error::{Error, Result};

/// Row-major binary grid; `true` marks a changed pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryGrid {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::Input(format!("{} cells for a {height}x{width} grid", cells.len())));
        }
        Ok(Self { height, width, cells })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self { height, width, cells: vec![value; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn count_true(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(pred: &BinaryGrid, gt: &BinaryGrid) -> Result<Confusion> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::Input(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.cells.iter().zip(&gt.cells) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Serialises to `{"fp","fn","oe","pcc","kc","n"}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub oe: usize,
    pub pcc: f64,
    pub kc: f64,
    #[serde(rename = "n")]
    pub n_total: usize,
    /// Chance agreement was 1, so kappa is undefined and reported as 0.
    #[serde(skip)]
    pub kc_undefined: bool,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialise")
    }
}

pub fn metrics(c: &Confusion) -> Result<MetricsReport> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Input("no pixels to score".into()));
    }
    let n = total as f64;
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let pcc = 100.0 * (tp + tn) / n;
    let pre = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n);
    let (kc, kc_undefined) = if pre == 1.0 { (0.0, true) } else { (100.0 * (pcc / 100.0 - pre) / (1.0 - pre), false) };
    Ok(MetricsReport { fp: c.fp, fn_: c.fn_, oe: c.fp + c.fn_, pcc, kc, n_total: total, kc_undefined })
}
