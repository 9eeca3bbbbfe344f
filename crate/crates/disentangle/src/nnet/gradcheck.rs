//! Central finite-difference verification of analytic gradients.
//!
//! The checker perturbs parameters one at a time by `±step` and compares the
//! difference quotient against the analytic gradient. ReLU networks are only
//! piecewise smooth, so an evaluation pair whose hidden on/off pattern differs
//! brackets a kink; those parameters are skipped and counted instead of
//! producing a bogus error.

use rand::RngExt;

use crate::rng;

use super::{Gradients, Network};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Check at most this many parameters per tensor (`None` = all).
    pub samples_per_tensor: Option<usize>,
    /// Seed for parameter subsampling.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, samples_per_tensor: None, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

enum Slot {
    Weight(usize),
    Bias(usize),
}

fn tensor_len(net: &Network, slot: &Slot) -> usize {
    match *slot {
        Slot::Weight(k) => net.weight(k).rows() * net.weight(k).cols(),
        Slot::Bias(k) => net.bias(k).len(),
    }
}

fn read(net: &Network, slot: &Slot, idx: usize) -> f64 {
    match *slot {
        Slot::Weight(k) => net.weight(k).data()[idx],
        Slot::Bias(k) => net.bias(k)[idx],
    }
}

fn write(net: &mut Network, slot: &Slot, idx: usize, v: f64) {
    match *slot {
        Slot::Weight(k) => net.weight_mut(k).data_mut()[idx] = v,
        Slot::Bias(k) => net.bias_mut(k)[idx] = v,
    }
}

fn grad_at(grads: &Gradients, slot: &Slot, idx: usize) -> f64 {
    match *slot {
        Slot::Weight(k) => grads.d_weights[k].data()[idx],
        Slot::Bias(k) => grads.d_biases[k][idx],
    }
}

/// Compare `analytic` against central differences of `loss` over a sample of
/// parameters. `loss` must be deterministic (noise disabled or reseeded) and
/// returns `(loss_value, relu_pattern_hash)`.
pub fn gradient_check(
    net: &Network,
    analytic: &Gradients,
    mut loss: impl FnMut(&Network) -> (f64, u64),
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    let h = cfg.step;
    let mut work = net.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped_kinks: 0 };

    let mut slots = Vec::new();
    for k in 0..net.n_layers() {
        slots.push(Slot::Weight(k));
        slots.push(Slot::Bias(k));
    }
    for (s, slot) in slots.iter().enumerate() {
        let len = tensor_len(net, slot);
        let indices: Vec<usize> = match cfg.samples_per_tensor {
            Some(cap) if len > cap => {
                let mut rng = rng::stream(cfg.seed, "gradcheck", s as u64);
                let mut picked = std::collections::HashSet::with_capacity(cap);
                while picked.len() < cap {
                    picked.insert(rng.random_range(0..len));
                }
                let mut v: Vec<usize> = picked.into_iter().collect();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for idx in indices {
            let orig = read(net, slot, idx);
            write(&mut work, slot, idx, orig + h);
            let (lp, pat_p) = loss(&work);
            write(&mut work, slot, idx, orig - h);
            let (lm, pat_m) = loss(&work);
            write(&mut work, slot, idx, orig);
            if pat_p != pat_m {
                report.skipped_kinks += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * h);
            let a = grad_at(analytic, slot, idx);
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
            }
            report.checked += 1;
        }
    }
    report
}
