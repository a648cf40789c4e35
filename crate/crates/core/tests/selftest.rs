use wbanet::selftest::{reconstruction_suite, run_all};
use wbanet::tensor::Tensor;
use wbanet::wavelet::{dwt2_haar, idwt2_haar, SubbandSet};
use wbanet::Result;

/// Forward transform with the HH sign flipped.
fn flipped_dwt(x: &Tensor<f64>) -> Result<SubbandSet<f64>> {
    let mut s = dwt2_haar(x)?;
    s.hh = s.hh.map(|v| -v);
    Ok(s)
}

#[test]
fn suites_pass_on_the_real_transform() {
    for r in run_all() {
        assert!(r.passed, "{r}");
    }
}

#[test]
fn sign_bug_fails_reconstruction() {
    let report = reconstruction_suite(&flipped_dwt, &idwt2_haar);
    assert!(!report.passed, "{report}");
}
