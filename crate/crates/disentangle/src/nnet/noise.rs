//! Multiplicative dropout noise. Each element is kept (scaled by
//! `1/keep_prob`) with probability `keep_prob`, else zeroed.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Mat;

use super::NnetError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub keep_prob: f64,
}

impl NoiseSpec {
    pub fn new(keep_prob: f64) -> Result<Self, NnetError> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(NnetError::InvalidNoise(format!(
                "keep_prob must be in (0, 1], got {keep_prob}"
            )));
        }
        Ok(NoiseSpec { keep_prob })
    }
}

/// Apply the noise; `keep_prob = 1` is the identity map and consumes no
/// random draws.
pub fn apply_noise(h: &Mat, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> Mat {
    apply_noise_masked(h, spec, rng).0
}

/// As [`apply_noise`], additionally returning the scaled mask so the caller
/// can backpropagate through the noise exactly.
pub fn apply_noise_masked(h: &Mat, spec: &NoiseSpec, rng: &mut ChaCha8Rng) -> (Mat, Mat) {
    let p = spec.keep_prob;
    let mut mask = Mat::zeros(h.rows(), h.cols());
    if p >= 1.0 {
        for v in mask.data_mut() {
            *v = 1.0;
        }
        return (h.clone(), mask);
    }
    let scale = 1.0 / p;
    let mut out = h.clone();
    for (m, o) in mask.data_mut().iter_mut().zip(out.data_mut()) {
        let keep: f64 = rng.random();
        if keep < p {
            *m = scale;
            *o *= scale;
        } else {
            *m = 0.0;
            *o = 0.0;
        }
    }
    (out, mask)
}
