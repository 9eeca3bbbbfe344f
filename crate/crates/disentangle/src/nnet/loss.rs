//! Softmax cross-entropy and mean-squared-error losses with their exact
//! analytic gradients, plus the L2 weight penalty.

use crate::linalg::Mat;

use super::{Gradients, Network, NnetError};

/// Mean over the batch of `-log softmax(logits)[label]`, optionally plus
/// `0.5 * coeff * sum(W^2)` over the given network's weights. `dlogits` is
/// the exact gradient of the returned loss with respect to the logits.
pub fn loss_softmax_ce(
    logits: &Mat,
    labels: &[usize],
    l2: Option<(f64, &Network)>,
) -> Result<(f64, Mat), NnetError> {
    let (b, k) = (logits.rows(), logits.cols());
    if k < 2 {
        return Err(NnetError::InvalidSpec(format!("softmax needs at least 2 classes, got {k}")));
    }
    if labels.len() != b {
        return Err(NnetError::ShapeMismatch(format!(
            "{} labels for batch of {b}",
            labels.len()
        )));
    }
    let mut dlogits = Mat::zeros(b, k);
    let mut loss = 0.0;
    for i in 0..b {
        let label = labels[i];
        if label >= k {
            return Err(NnetError::BadLabel { label, n_classes: k });
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let drow = dlogits.row_mut(i);
        for (d, &z) in drow.iter_mut().zip(row) {
            let e = (z - max).exp();
            *d = e;
            sum += e;
        }
        loss += sum.ln() + max - row[label];
        let inv = 1.0 / (sum * b as f64);
        for d in drow.iter_mut() {
            *d *= inv;
        }
        drow[label] -= 1.0 / b as f64;
    }
    loss /= b as f64;
    if let Some((coeff, net)) = l2 {
        loss += l2_penalty(net, coeff);
    }
    Ok((loss, dlogits))
}

/// Mean squared componentwise error; `dpred = 2 (pred - target) / n_elements`.
pub fn loss_mse(pred: &Mat, target: &Mat) -> Result<(f64, Mat), NnetError> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(NnetError::ShapeMismatch(format!(
            "pred {}x{} vs target {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let n = (pred.rows() * pred.cols()) as f64;
    let mut dpred = Mat::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((d, &p), &t) in dpred.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let diff = p - t;
        loss += diff * diff;
        *d = 2.0 * diff / n;
    }
    Ok((loss / n, dpred))
}

/// `0.5 * coeff * sum(W^2)` over weights only; biases are not penalized.
pub fn l2_penalty(net: &Network, coeff: f64) -> f64 {
    if coeff == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for k in 0..net.n_layers() {
        for &w in net.weight(k).data() {
            sum += w * w;
        }
    }
    0.5 * coeff * sum
}

/// Add the gradient of [`l2_penalty`] (`coeff * W`) into `grads`.
pub fn add_l2_gradient(net: &Network, coeff: f64, grads: &mut Gradients) {
    if coeff == 0.0 {
        return;
    }
    for k in 0..net.n_layers() {
        let w = net.weight(k);
        let g = &mut grads.d_weights[k];
        for (gv, &wv) in g.data_mut().iter_mut().zip(w.data()) {
            *gv += coeff * wv;
        }
    }
}
