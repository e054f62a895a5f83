mod common;

use navc_core::distortion::PixelNorm;

const TOL: f64 = 1e-3;

#[test]
fn pixel_norms_match_finite_differences() {
    assert!(common::gradients::pixel(PixelNorm::L2) <= TOL);
    assert!(common::gradients::pixel(PixelNorm::L1) <= TOL);
}

#[test]
fn perceptual_loss_matches_finite_differences() {
    let e = common::gradients::perceptual();
    assert!(e <= TOL, "{e}");
}

#[test]
fn composite_distortion_matches_finite_differences() {
    let e = common::gradients::composite();
    assert!(e <= TOL, "{e}");
}

#[test]
fn rate_matches_finite_differences() {
    let (t, p) = common::gradients::rate();
    assert!(t <= TOL && p <= TOL, "targets {t}, prior {p}");
}

#[test]
fn codec_round_trip_matches_finite_differences() {
    let (x, p) = common::gradients::codec_roundtrip();
    assert!(x <= TOL && p <= TOL, "input {x}, params {p}");
}

