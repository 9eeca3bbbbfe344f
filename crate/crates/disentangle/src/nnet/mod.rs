//! Dense feedforward networks with just enough machinery for the trainers:
//! ReLU hidden layers, multiplicative dropout noise, softmax cross-entropy
//! and MSE losses, Adam, a finite-difference gradient checker, and a
//! versioned checkpoint format.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
mod noise;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_network, save_network, CheckpointMeta};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use loss::{l2_penalty, add_l2_gradient, loss_mse, loss_softmax_ce};
pub use noise::{apply_noise, apply_noise_masked, NoiseSpec};

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Mat;
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum NnetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {n_classes} classes")]
    BadLabel { label: usize, n_classes: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Layer widths plus the hidden activation and the L2 coefficient applied to
/// weights (not biases) during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub l2_coeff: f64,
}

impl NetworkSpec {
    pub fn relu(layer_dims: Vec<usize>) -> Self {
        NetworkSpec { layer_dims, hidden_activation: Activation::Relu, l2_coeff: 0.0 }
    }

    fn validate(&self) -> Result<(), NnetError> {
        if self.layer_dims.len() < 2 {
            return Err(NnetError::InvalidSpec("need at least input and output dims".into()));
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(NnetError::InvalidSpec("zero-width layer".into()));
        }
        if self.l2_coeff < 0.0 {
            return Err(NnetError::InvalidSpec("negative l2 coefficient".into()));
        }
        Ok(())
    }
}

/// A dense feedforward network. `weights[k]` has shape
/// `layer_dims[k+1] x layer_dims[k]`; the output layer is always linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    weights: Vec<Mat>,
    biases: Vec<Vec<f64>>,
}

impl Network {
    /// Glorot-uniform weights (`±sqrt(6/(fan_in+fan_out))`), zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self, NnetError> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for k in 0..spec.layer_dims.len() - 1 {
            let (fan_in, fan_out) = (spec.layer_dims[k], spec.layer_dims[k + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = rng::stream(seed, "layer-init", k as u64);
            let mut w = Mat::zeros(fan_out, fan_in);
            for v in w.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Network { spec, weights, biases })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, k: usize) -> &Mat {
        &self.weights[k]
    }

    pub fn weight_mut(&mut self, k: usize) -> &mut Mat {
        &mut self.weights[k]
    }

    pub fn bias(&self, k: usize) -> &[f64] {
        &self.biases[k]
    }

    pub fn bias_mut(&mut self, k: usize) -> &mut Vec<f64> {
        &mut self.biases[k]
    }

    pub fn params_finite(&self) -> bool {
        self.weights.iter().all(Mat::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn check_batch(&self, batch: &Mat) -> Result<(), NnetError> {
        if batch.cols() != self.input_dim() {
            return Err(NnetError::ShapeMismatch(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Deterministic forward pass. Returns the cache needed by [`Network::backward`]
    /// and the output batch.
    pub fn forward(&self, batch: &Mat) -> Result<(ForwardCache, Mat), NnetError> {
        self.forward_inner(batch, None)
    }

    /// Forward pass with multiplicative dropout applied to every hidden
    /// activation; the masks are cached so backward stays exact.
    pub fn forward_noisy(
        &self,
        batch: &Mat,
        noise: &NoiseSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<(ForwardCache, Mat), NnetError> {
        self.forward_inner(batch, Some((noise, rng)))
    }

    fn forward_inner(
        &self,
        batch: &Mat,
        mut noise: Option<(&NoiseSpec, &mut ChaCha8Rng)>,
    ) -> Result<(ForwardCache, Mat), NnetError> {
        self.check_batch(batch)?;
        let n_layers = self.n_layers();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n_layers),
            preacts: Vec::with_capacity(n_layers),
            masks: vec![None; n_layers],
        };
        let mut x = batch.clone();
        for k in 0..n_layers {
            let mut z = x.matmul_nt(&self.weights[k]);
            for i in 0..z.rows() {
                let row = z.row_mut(i);
                for (v, b) in row.iter_mut().zip(&self.biases[k]) {
                    *v += b;
                }
            }
            cache.inputs.push(x);
            let last = k == n_layers - 1;
            let mut a = if last {
                z.clone()
            } else {
                match self.spec.hidden_activation {
                    Activation::Relu => {
                        let mut a = z.clone();
                        for v in a.data_mut() {
                            if *v < 0.0 {
                                *v = 0.0;
                            }
                        }
                        a
                    }
                    Activation::None => z.clone(),
                }
            };
            if !last {
                if let Some((spec, rng)) = noise.as_mut() {
                    let (noisy, mask) = noise::apply_noise_masked(&a, spec, rng);
                    a = noisy;
                    cache.masks[k] = Some(mask);
                }
            }
            cache.preacts.push(z);
            x = a;
        }
        Ok((cache, x))
    }

    /// Backpropagate `upstream` (dLoss/dOutput) through the cached pass.
    /// Returns the parameter gradients and the gradient with respect to
    /// the input batch.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &Mat,
    ) -> Result<(Gradients, Mat), NnetError> {
        let n_layers = self.n_layers();
        if cache.inputs.len() != n_layers {
            return Err(NnetError::ShapeMismatch(
                "cache does not match network depth (stale cache?)".into(),
            ));
        }
        if upstream.cols() != self.output_dim() || upstream.rows() != cache.inputs[0].rows() {
            return Err(NnetError::ShapeMismatch(format!(
                "upstream is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.inputs[0].rows(),
                self.output_dim()
            )));
        }
        if cache.inputs[0].cols() != self.input_dim() {
            return Err(NnetError::ShapeMismatch("cache batch dim mismatch".into()));
        }

        let mut grads = Gradients::zeros_like(self);
        let mut d = upstream.clone();
        for k in (0..n_layers).rev() {
            grads.d_weights[k] = d.matmul_tn(&cache.inputs[k]);
            let db = &mut grads.d_biases[k];
            for i in 0..d.rows() {
                for (b, v) in db.iter_mut().zip(d.row(i)) {
                    *b += v;
                }
            }
            if k == 0 {
                d = d.matmul_nn(&self.weights[k]);
            } else {
                let mut dx = d.matmul_nn(&self.weights[k]);
                if let Some(mask) = &cache.masks[k - 1] {
                    dx.hadamard_assign(mask);
                }
                if self.spec.hidden_activation == Activation::Relu {
                    let z = &cache.preacts[k - 1];
                    for (v, &zv) in dx.data_mut().iter_mut().zip(z.data()) {
                        if zv <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                d = dx;
            }
        }
        Ok((grads, d))
    }
}

/// Activations captured by a forward pass; consumed by [`Network::backward`].
pub struct ForwardCache {
    inputs: Vec<Mat>,
    preacts: Vec<Mat>,
    masks: Vec<Option<Mat>>,
}

impl ForwardCache {
    /// Hash of the ReLU on/off pattern of the hidden layers. Two evaluations
    /// with different patterns bracket a kink, where finite differences are
    /// meaningless.
    pub fn relu_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for z in &self.preacts[..self.preacts.len().saturating_sub(1)] {
            for &v in z.data() {
                h ^= u64::from(v > 0.0);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Parameter-shaped gradient accumulators mirroring a [`Network`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub d_weights: Vec<Mat>,
    pub d_biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            d_weights: net.weights.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect(),
            d_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights.iter().all(Mat::is_finite)
            && self.d_biases.iter().flatten().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.d_weights {
            w.scale(s);
        }
        for b in &mut self.d_biases {
            for v in b {
                *v *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let w = self
            .d_weights
            .iter()
            .flat_map(|m| m.data().iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        self.d_biases
            .iter()
            .flatten()
            .fold(w, |acc, v| acc.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, stream};

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = stream(seed, "batch", 0);
        let mut m = Mat::zeros(rows, cols);
        for v in m.data_mut() {
            *v = standard_normal(&mut rng);
        }
        m
    }

    #[test]
    fn zero_network_maps_to_zero() {
        let mut net = Network::init(NetworkSpec::relu(vec![3, 4, 2]), 0).unwrap();
        for k in 0..net.n_layers() {
            net.weight_mut(k).scale(0.0);
        }
        let batch = random_batch(5, 3, 1);
        let (_, out) = net.forward(&batch).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = NetworkSpec {
            layer_dims: vec![3, 3],
            hidden_activation: Activation::None,
            l2_coeff: 0.0,
        };
        let mut net = Network::init(spec, 0).unwrap();
        let w = net.weight_mut(0);
        for i in 0..3 {
            for j in 0..3 {
                w.set(i, j, if i == j { 1.0 } else { 0.0 });
            }
        }
        let batch = random_batch(4, 3, 2);
        let (_, out) = net.forward(&batch).unwrap();
        assert_eq!(out, batch);
    }

    /// Straight-line re-implementation of the forward pass: per-sample loops,
    /// no matrix products. Oracle for the batched implementation.
    fn naive_forward(net: &Network, batch: &Mat) -> Mat {
        let mut out = Mat::zeros(batch.rows(), net.output_dim());
        for r in 0..batch.rows() {
            let mut x: Vec<f64> = batch.row(r).to_vec();
            for k in 0..net.n_layers() {
                let w = net.weight(k);
                let mut y = vec![0.0; w.rows()];
                for (i, yi) in y.iter_mut().enumerate() {
                    let mut s = net.bias(k)[i];
                    for (j, &xj) in x.iter().enumerate() {
                        s += w.get(i, j) * xj;
                    }
                    *yi = s;
                }
                if k + 1 < net.n_layers() && net.spec().hidden_activation == Activation::Relu {
                    for v in &mut y {
                        *v = v.max(0.0);
                    }
                }
                x = y;
            }
            out.row_mut(r).copy_from_slice(&x);
        }
        out
    }

    #[test]
    fn forward_matches_naive_reimplementation() {
        let net = Network::init(NetworkSpec::relu(vec![7, 11, 5, 3]), 42).unwrap();
        let batch = random_batch(6, 7, 3);
        let (_, out) = net.forward(&batch).unwrap();
        let naive = naive_forward(&net, &batch);
        assert!(out.max_abs_diff(&naive) < 1e-12);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::init(NetworkSpec::relu(vec![4, 8, 2]), 9).unwrap();
        let batch = random_batch(3, 4, 4);
        let (_, a) = net.forward(&batch).unwrap();
        let (_, b) = net.forward(&batch).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let a = Network::init(NetworkSpec::relu(vec![4, 8, 2]), 7).unwrap();
        let b = Network::init(NetworkSpec::relu(vec![4, 8, 2]), 7).unwrap();
        assert_eq!(a, b);
        let c = Network::init(NetworkSpec::relu(vec![4, 8, 2]), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = Network::init(NetworkSpec::relu(vec![4, 2]), 0).unwrap();
        let batch = random_batch(3, 5, 0);
        assert!(matches!(net.forward(&batch), Err(NnetError::ShapeMismatch(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Network::init(NetworkSpec::relu(vec![4, 6, 3]), 5).unwrap();
        let batch = random_batch(5, 4, 6);
        let (cache, out) = net.forward(&batch).unwrap();
        let upstream = Mat::zeros(out.rows(), out.cols());
        let (grads, dx) = net.backward(&cache, &upstream).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_weight_gradient_closed_form() {
        let spec = NetworkSpec {
            layer_dims: vec![3, 2],
            hidden_activation: Activation::None,
            l2_coeff: 0.0,
        };
        let net = Network::init(spec, 1).unwrap();
        let batch = random_batch(4, 3, 7);
        let (cache, _) = net.forward(&batch).unwrap();
        let upstream = random_batch(4, 2, 8);
        let (grads, _) = net.backward(&cache, &upstream).unwrap();
        // dW = G^T X
        let want = upstream.matmul_tn(&batch);
        assert!(grads.d_weights[0].max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let net3 = Network::init(NetworkSpec::relu(vec![4, 6, 3]), 5).unwrap();
        let net2 = Network::init(NetworkSpec::relu(vec![4, 3]), 5).unwrap();
        let batch = random_batch(2, 4, 1);
        let (cache3, out) = net3.forward(&batch).unwrap();
        assert!(net2.backward(&cache3, &out).is_err());
    }
}
