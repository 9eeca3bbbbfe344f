//! Verify the analytic gradients of every network shape the toolkit trains,
//! by central finite differences.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use disentangle::linalg::Mat;
use disentangle::nnet::{
    gradient_check, loss_mse, loss_softmax_ce, GradCheckConfig, Network, NetworkSpec,
};
use disentangle::rng::{standard_normal, stream};
use disentangle::uai::{UaiConfig, UaiModel};

fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = stream(seed, "gc-batch", 0);
    let mut m = Mat::zeros(rows, cols);
    for v in m.data_mut() {
        *v = standard_normal(&mut rng);
    }
    m
}

fn check_mse(name: &str, net: &Network, seed: u64) {
    let batch = random_mat(4, net.input_dim(), seed);
    let target = random_mat(4, net.output_dim(), seed + 1);
    let (cache, out) = net.forward(&batch).unwrap();
    let (_, dout) = loss_mse(&out, &target).unwrap();
    let (analytic, _) = net.backward(&cache, &dout).unwrap();
    let cfg = GradCheckConfig { samples_per_tensor: Some(150), seed, ..Default::default() };
    let report = gradient_check(
        net,
        &analytic,
        |n| {
            let (c, o) = n.forward(&batch).unwrap();
            (loss_mse(&o, &target).unwrap().0, c.relu_pattern())
        },
        &cfg,
    );
    println!(
        "{name:<22} max rel err {:.3e} ({} checked, {} kinks skipped) -> {}",
        report.max_rel_error,
        report.checked,
        report.skipped_kinks,
        if report.passes(1e-4) { "ok" } else { "FAIL" }
    );
}

fn check_ce(name: &str, net: &Network, seed: u64) {
    let batch = random_mat(4, net.input_dim(), seed);
    let labels: Vec<usize> = (0..4).map(|i| i % net.output_dim()).collect();
    let (cache, logits) = net.forward(&batch).unwrap();
    let (_, dlogits) = loss_softmax_ce(&logits, &labels, None).unwrap();
    let (analytic, _) = net.backward(&cache, &dlogits).unwrap();
    let cfg = GradCheckConfig { samples_per_tensor: Some(150), seed, ..Default::default() };
    let report = gradient_check(
        net,
        &analytic,
        |n| {
            let (c, o) = n.forward(&batch).unwrap();
            (loss_softmax_ce(&o, &labels, None).unwrap().0, c.relu_pattern())
        },
        &cfg,
    );
    println!(
        "{name:<22} max rel err {:.3e} ({} checked, {} kinks skipped) -> {}",
        report.max_rel_error,
        report.checked,
        report.skipped_kinks,
        if report.passes(1e-4) { "ok" } else { "FAIL" }
    );
}

fn main() {
    let model = UaiModel::build(UaiConfig::new(512, 50)).unwrap();
    check_ce("encoder+argmax-free", model.encoder(), 1);
    check_ce("speaker predictor", model.predictor(), 2);
    check_mse("decoder", model.decoder(), 3);
    check_mse("dis h2->h1", model.dis_h2_to_h1(), 4);
    check_mse("dis h1->h2", model.dis_h1_to_h2(), 5);

    // the default probe recipe: 4 dense+ReLU blocks and a linear head
    let probe = Network::init(NetworkSpec::relu(vec![512, 256, 256, 256, 256, 4]), 6).unwrap();
    check_ce("probe 4x256 relu", &probe, 7);
    let probe_small = Network::init(NetworkSpec::relu(vec![128, 256, 50]), 8).unwrap();
    check_ce("probe on h1", &probe_small, 9);
}
