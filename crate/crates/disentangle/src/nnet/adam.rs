//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::linalg::Mat;

use super::{Gradients, Network, NnetError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Optimizer state shaped like one network's parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    step_count: u64,
    m_weights: Vec<Mat>,
    v_weights: Vec<Mat>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, net: &Network) -> Self {
        let zeros_w: Vec<Mat> = (0..net.n_layers())
            .map(|k| Mat::zeros(net.weight(k).rows(), net.weight(k).cols()))
            .collect();
        let zeros_b: Vec<Vec<f64>> =
            (0..net.n_layers()).map(|k| vec![0.0; net.bias(k).len()]).collect();
        AdamState {
            cfg,
            step_count: 0,
            m_weights: zeros_w.clone(),
            v_weights: zeros_w,
            m_biases: zeros_b.clone(),
            v_biases: zeros_b,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// One bias-corrected Adam update of `net` from `grads`.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<(), NnetError> {
        if !grads.is_finite() {
            return Err(NnetError::NonFiniteGradient);
        }
        if grads.d_weights.len() != net.n_layers() {
            return Err(NnetError::ShapeMismatch("gradient/network layer count".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for k in 0..net.n_layers() {
            let w = net.weight_mut(k);
            let g = &grads.d_weights[k];
            let m = &mut self.m_weights[k];
            let v = &mut self.v_weights[k];
            for (((wv, &gv), mv), vv) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                *wv -= lr * (*mv / bc1) / ((*vv / bc2).sqrt() + epsilon);
            }
            let b = net.bias_mut(k);
            let gb = &grads.d_biases[k];
            let mb = &mut self.m_biases[k];
            let vb = &mut self.v_biases[k];
            for (((bv, &gv), mv), vv) in
                b.iter_mut().zip(gb).zip(mb.iter_mut()).zip(vb.iter_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                *bv -= lr * (*mv / bc1) / ((*vv / bc2).sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
