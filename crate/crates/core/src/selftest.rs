//! Built-in invariant suites behind `wbanet selftest`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bam::{bam_forward, BamParams};
use crate::error::Result;
use crate::evalio::{metrics, Confusion};
use crate::gradcheck::max_relative_error;
use crate::model::{forward, ModelConfig, WbaNetParams};
use crate::tensor::{Graph, Tensor, Var};
use crate::wavelet::{dwt2_haar, idwt2_haar, SubbandSet};
use crate::wsm::{wave_attention, WsmParams};

pub const RECONSTRUCTION_TOL: f64 = 1e-9;
pub const OP_GRAD_TOL: f64 = 1e-4;
pub const MODEL_GRAD_TOL: f64 = 1e-3;
pub const ROW_SUM_TOL: f64 = 1e-9;
pub const METRIC_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<22} {:>7.2}s  {}", self.name, self.seconds, self.detail)
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> std::result::Result<String, String>) -> SuiteReport {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    SuiteReport { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

pub type Forward = dyn Fn(&Tensor<f64>) -> Result<SubbandSet<f64>>;
pub type Inverse = dyn Fn(&SubbandSet<f64>) -> Result<Tensor<f64>>;

/// Worst-case errors over `cases` random even shapes: `(forward-inverse,
/// inverse-forward, energy)`.
pub fn reconstruction_errors(cases: usize, seed: u64, fwd: &Forward, inv: &Inverse) -> Result<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut e1, mut e2, mut e3) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..cases as u64 {
        let h = 2 * rng.random_range(1..=16);
        let w = 2 * rng.random_range(1..=16);
        let c = rng.random_range(1..=8);
        let x = Tensor::uniform(&[h, w, c], -10.0, 10.0, seed ^ (case << 8))?;
        let s = fwd(&x)?;
        e1 = e1.max(inv(&s)?.max_abs_diff(&x));
        e3 = e3.max((s.energy() - x.sum_squares()).abs() / x.sum_squares().max(1.0));
        let band = |k: u64| Tensor::uniform(&[h / 2, w / 2, c], -10.0, 10.0, seed ^ (case << 8) ^ (k << 40));
        let sub = SubbandSet::new(band(1)?, band(2)?, band(3)?, band(4)?)?;
        let again = fwd(&inv(&sub)?)?;
        for (a, b) in again.bands().iter().zip(sub.bands()) {
            e2 = e2.max(a.max_abs_diff(b));
        }
    }
    Ok((e1, e2, e3))
}

pub fn reconstruction_suite(fwd: &Forward, inv: &Inverse) -> SuiteReport {
    timed("wavelet reconstruction", || {
        let (a, b, e) = reconstruction_errors(200, 17, fwd, inv).map_err(|e| e.to_string())?;
        let detail = format!("idwt(dwt) {a:.1e}, dwt(idwt) {b:.1e}, energy {e:.1e}");
        if a < RECONSTRUCTION_TOL && b < RECONSTRUCTION_TOL && e < RECONSTRUCTION_TOL {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

fn rand(shape: &[usize], seed: u64) -> Result<Tensor<f64>> {
    Tensor::uniform(shape, -1.0, 1.0, seed)
}

/// Relative gradient error of every differentiable op under one seed.
pub fn op_gradient_errors(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let s = |k: u64| seed.wrapping_mul(1000).wrapping_add(k);
    let mut out = Vec::new();
    let mut check = |name, inputs: Vec<Tensor<f64>>, f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>| -> Result<()> {
        // Weight the output by a fixed random tensor so every entry matters differently.
        let err = max_relative_error(&inputs, |g, v| {
            let y = f(g, v)?;
            let shape = g.shape(y).to_vec();
            let probe = g.constant(rand(&shape, 99)?);
            let p = g.mul(y, probe)?;
            Ok(g.sum(p))
        })?;
        out.push((name, err));
        Ok(())
    };
    check("matmul", vec![rand(&[2, 3, 4], s(1))?, rand(&[2, 4, 5], s(2))?], &|g, v| g.matmul(v[0], v[1]))?;
    check("transpose_last", vec![rand(&[2, 3, 4], s(3))?], &|g, v| g.transpose_last(v[0]))?;
    check("add", vec![rand(&[3, 4], s(4))?, rand(&[4], s(5))?], &|g, v| g.add(v[0], v[1]))?;
    check("mul", vec![rand(&[2, 1, 4], s(6))?, rand(&[3, 1], s(7))?], &|g, v| g.mul(v[0], v[1]))?;
    check("scale", vec![rand(&[5], s(8))?], &|g, v| Ok(g.scale(v[0], 0.7)))?;
    check("linear", vec![rand(&[2, 3, 4], s(9))?, rand(&[4, 5], s(10))?, rand(&[5], s(11))?], &|g, v| {
        g.linear(v[0], v[1], Some(v[2]))
    })?;
    check("gelu", vec![rand(&[6, 3], s(12))?.map(|x| 3.0 * x)], &|g, v| Ok(g.gelu(v[0])))?;
    check("sigmoid", vec![rand(&[6, 3], s(13))?.map(|x| 3.0 * x)], &|g, v| Ok(g.sigmoid(v[0])))?;
    check("softmax_rows", vec![rand(&[4, 5], s(14))?.map(|x| 2.0 * x)], &|g, v| Ok(g.softmax_rows(v[0])))?;
    check("global_avg_pool", vec![rand(&[2, 3, 4, 5], s(15))?], &|g, v| g.global_avg_pool(v[0]))?;
    check("concat", vec![rand(&[2, 3], s(16))?, rand(&[2, 2], s(17))?], &|g, v| g.concat(1, &[v[0], v[1]]))?;
    check("slice", vec![rand(&[3, 6], s(18))?], &|g, v| g.slice(v[0], 1, 2, 3))?;
    check("reshape", vec![rand(&[3, 4], s(19))?], &|g, v| g.reshape(v[0], &[2, 6]))?;
    check("expand", vec![rand(&[1, 1, 3], s(20))?], &|g, v| g.expand(v[0], &[2, 4, 3]))?;
    check("dwt_haar", vec![rand(&[4, 6, 3], s(21))?], &|g, v| g.dwt_haar(v[0]))?;
    check("idwt_haar", vec![rand(&[2, 3, 8], s(22))?], &|g, v| g.idwt_haar(v[0]))?;
    check("cross_entropy", vec![rand(&[4, 3], s(23))?.map(|x| 2.0 * x)], &|g, v| g.cross_entropy(v[0], &[0, 2, 1, 2]))?;

    let wsm = WsmParams::<Tensor<f64>>::init(8, 2, s(24))?;
    let mut w_q = wsm.w_q.clone();
    w_q.data_mut().iter_mut().zip(rand(&[64], s(25))?.data()).for_each(|(a, b)| *a += 0.3 * b);
    check(
        "wave_attention",
        vec![rand(&[4, 4, 8], s(26))?, wsm.w_d, w_q, wsm.kv_conv, wsm.w_o],
        &|g, v| {
            let p = WsmParams { w_d: v[1], w_q: v[2], kv_conv: v[3], w_o: v[4], n_heads: 2 };
            Ok(wave_attention(g, v[0], &p)?.output)
        },
    )?;
    let bam = BamParams::<Tensor<f64>>::init(4, 2, s(27))?;
    check(
        "bam",
        vec![rand(&[4, 4, 4], s(28))?, bam.fc_c1, bam.fc_c2, bam.fc_s1, bam.fc_s2],
        &|g, v| {
            let p = BamParams { fc_c1: v[1], fc_c2: v[2], fc_s1: v[3], fc_s2: v[4], reduction: 2 };
            Ok(bam_forward(g, v[0], &p)?.output)
        },
    )?;
    Ok(out)
}

/// Miniature network used for end-to-end gradient checks.
pub fn miniature_config(seed: u64) -> ModelConfig {
    ModelConfig { patch_size: 4, embed_dim: 8, n_heads: 2, n_blocks: 1, seed, ..ModelConfig::default() }
}

/// Relative error of the cross-entropy gradient with respect to every
/// parameter of the miniature network on a two-patch batch.
pub fn model_gradient_error(seed: u64) -> Result<f64> {
    let cfg = miniature_config(seed);
    let params = WbaNetParams::<Tensor<f64>>::init(&cfg)?;
    let patches = rand(&[2, 4, 4, 2], seed.wrapping_add(7))?.map(|x| 2.0 * x);
    let inputs: Vec<Tensor<f64>> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
    max_relative_error(&inputs, |g, v| {
        let p = WbaNetParams::from_vars(cfg.n_heads, cfg.reduction, v)?;
        let x = g.constant(patches.clone());
        let out = forward(g, x, &p)?;
        g.cross_entropy(out, &[0, 1])
    })
}

pub fn gradient_suite(seeds: &[u64]) -> SuiteReport {
    timed("gradient checks", || {
        let (mut worst_op, mut worst_name, mut worst_model) = (0.0f64, "", 0.0f64);
        for &seed in seeds {
            for (name, err) in op_gradient_errors(seed).map_err(|e| e.to_string())? {
                if err > worst_op {
                    (worst_op, worst_name) = (err, name);
                }
            }
            worst_model = worst_model.max(model_gradient_error(seed).map_err(|e| e.to_string())?);
        }
        let detail = format!("ops worst {worst_op:.1e} ({worst_name}), model worst {worst_model:.1e}");
        if worst_op < OP_GRAD_TOL && worst_model < MODEL_GRAD_TOL {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

pub fn attention_suite() -> SuiteReport {
    timed("attention structure", || {
        let e = |e: crate::Error| e.to_string();
        let p = WsmParams::<Tensor<f64>>::init(16, 4, 3).map_err(e)?;
        let mut g = Graph::new();
        let x = g.input(&rand(&[8, 8, 16], 4).map_err(e)?);
        let bound = p.bind(&mut g);
        let out = wave_attention(&mut g, x, &bound).map_err(e)?;
        let mut worst = 0.0f64;
        for a in &out.attention {
            if g.shape(*a) != [64, 16] {
                return Err(format!("attention shape {:?}", g.shape(*a)));
            }
            for row in g.value(*a).data().chunks(16) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        let detail = format!("4 heads of 64x16, worst row-sum error {worst:.1e}");
        if worst < ROW_SUM_TOL {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

pub fn metrics_suite() -> SuiteReport {
    timed("metric identities", || {
        let e = |e: crate::Error| e.to_string();
        let table = metrics(&Confusion { tp: 0, tn: 1, fp: 1092, fn_: 1373 }).map_err(e)?;
        let hand = metrics(&Confusion { tp: 40, tn: 40, fp: 10, fn_: 10 }).map_err(e)?;
        let perfect = metrics(&Confusion { tp: 5, tn: 95, fp: 0, fn_: 0 }).map_err(e)?;
        let ok = table.oe == 2465
            && (hand.pcc - 80.0).abs() < METRIC_TOL
            && (hand.kc - 60.0).abs() < METRIC_TOL
            && (perfect.pcc - 100.0).abs() < METRIC_TOL
            && (perfect.kc - 100.0).abs() < METRIC_TOL;
        let detail = format!("oe {}, kc {:.9}", table.oe, hand.kc);
        if ok {
            Ok(detail)
        } else {
            Err(detail)
        }
    })
}

/// Every suite with the production transforms.
pub fn run_all() -> Vec<SuiteReport> {
    vec![
        reconstruction_suite(&dwt2_haar, &idwt2_haar),
        gradient_suite(&[1, 2, 3]),
        attention_suite(),
        metrics_suite(),
    ]
}
