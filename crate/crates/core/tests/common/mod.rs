#![allow(dead_code)]

use hardpix::grids::{DepthMap, Grid, SegLabelMap, SegProbMap};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Passes when the absolute error is below `floor` or the relative error is
/// below `rel`.
pub fn close(analytic: f64, numeric: f64, rel: f64, floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= floor || diff <= rel * analytic.abs().max(numeric.abs())
}

pub fn random_logits(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

pub fn random_labels(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    c: usize,
    ignore_rate: f64,
) -> SegLabelMap {
    let data = (0..h * w)
        .map(|_| {
            if rng.gen_bool(ignore_rate) {
                c as u16
            } else {
                rng.gen_range(0..c as u16)
            }
        })
        .collect();
    SegLabelMap::with_ignore(Grid::new(h, w, data).unwrap(), c).unwrap()
}

pub fn random_depth(rng: &mut ChaCha8Rng, h: usize, w: usize) -> DepthMap {
    DepthMap::new(
        Grid::new(
            h,
            w,
            (0..h * w).map(|_| rng.gen_range(1..=256) as f64).collect(),
        )
        .unwrap(),
    )
    .unwrap()
}

pub fn probs(h: usize, w: usize, c: usize, logits: &[f64]) -> SegProbMap {
    SegProbMap::from_logits(h, w, c, logits).unwrap()
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(x: &[f64], i: usize, step: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += step;
    let mut xm = x.to_vec();
    xm[i] -= step;
    (f(&xp) - f(&xm)) / (2.0 * step)
}
