//! Factor-prediction probes: train a classifier on frozen embeddings and
//! report how well each factor can be read out. Accuracy is the proxy for
//! how much of the factor the embedding encodes.

mod chi2;

pub use chi2::{build_contingency, chi_squared_independence, Chi2Result, ContingencyTable};

use serde::{Deserialize, Serialize};

use crate::dataio::{DataError, EmbeddingArchive, LabelTable, SplitSpec};
use crate::linalg::Mat;
use crate::nnet::{
    add_l2_gradient, loss_softmax_ce, AdamConfig, AdamState, Network, NetworkSpec, NnetError,
};
use crate::rng;

use rand::seq::SliceRandom;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("split has an empty {0} part")]
    EmptySplit(&'static str),
    #[error("factor {factor:?} has {got} class(es) in train, need at least 2")]
    TooFewClasses { factor: String, got: usize },
    #[error("invalid contingency table: {0}")]
    BadTable(String),
}

/// Classifier recipe: `hidden_layers` dense+ReLU blocks of `hidden_width`
/// then a linear head, trained with softmax cross-entropy, L2 on weights and
/// Adam, early-stopped on validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub l2_coeff: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Standardize inputs per dimension with train-split statistics.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden_layers: 4,
            hidden_width: 256,
            l2_coeff: 1e-4,
            lr: 0.0002,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            standardize: true,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    fn validate(&self) -> Result<(), ProbeError> {
        if self.hidden_width == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(ProbeError::InvalidConfig("zero width/batch/epochs".into()));
        }
        if !(self.lr > 0.0) {
            return Err(ProbeError::InvalidConfig("lr must be positive".into()));
        }
        if self.l2_coeff < 0.0 {
            return Err(ProbeError::InvalidConfig("negative l2".into()));
        }
        Ok(())
    }
}

/// A trained probe: the classifier plus everything needed to apply it
/// (class ordering and the optional input standardizer).
#[derive(Clone, Debug)]
pub struct ProbeModel {
    pub network: Network,
    pub classes: Vec<String>,
    pub normalizer: Option<(Vec<f64>, Vec<f64>)>, // (mean, std) per dimension
}

impl ProbeModel {
    fn standardize(&self, batch: &mut Mat) {
        if let Some((mean, std)) = &self.normalizer {
            for r in 0..batch.rows() {
                let row = batch.row_mut(r);
                for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
                    *v = (*v - m) / s;
                }
            }
        }
    }

    /// Class index predictions for a batch of raw (unstandardized) inputs.
    pub fn predict(&self, inputs: &Mat) -> Result<Vec<usize>, ProbeError> {
        let mut batch = inputs.clone();
        self.standardize(&mut batch);
        let (_, logits) = self.network.forward(&batch)?;
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub factor: String,
    pub n_classes: usize,
    pub classes: Vec<String>,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub test_accuracy: f64,
    pub epochs_ran: usize,
    pub stopped_early: bool,
    /// Row = true class, column = predicted class, ordered like `classes`.
    pub confusion: Vec<Vec<u64>>,
    /// Test classes that never occurred in train; their samples count as
    /// errors since the classifier cannot predict them.
    pub unseen_test_classes: Vec<String>,
}

impl ProbeReport {
    /// One TSV row `embedding<TAB>factor<TAB>n_test<TAB>accuracy` for
    /// assembling accuracy tables across embeddings and factors.
    pub fn tsv_row(&self, embedding_name: &str) -> String {
        format!(
            "{embedding_name}\t{}\t{}\t{:.4}",
            self.factor, self.test_size, self.test_accuracy
        )
    }
}

fn mean_ce_loss(net: &Network, inputs: &Mat, labels: &[usize]) -> Result<f64, ProbeError> {
    let mut total = 0.0;
    let mut count = 0usize;
    let chunk = 512;
    let mut r = 0;
    while r < inputs.rows() {
        let end = (r + chunk).min(inputs.rows());
        let mut batch = Mat::zeros(end - r, inputs.cols());
        for i in r..end {
            batch.row_mut(i - r).copy_from_slice(inputs.row(i));
        }
        let (_, logits) = net.forward(&batch)?;
        let (loss, _) = loss_softmax_ce(&logits, &labels[r..end], None)?;
        total += loss * (end - r) as f64;
        count += end - r;
        r = end;
    }
    Ok(total / count as f64)
}

/// Train a probe for `factor` on the train split, early-stopping on the
/// validation split, and report accuracy plus confusion on the test split.
pub fn train_probe(
    embeddings: &EmbeddingArchive,
    labels: &LabelTable,
    factor: &str,
    split: &SplitSpec,
    cfg: &ProbeConfig,
) -> Result<(ProbeModel, ProbeReport), ProbeError> {
    cfg.validate()?;
    if split.train_ids.is_empty() {
        return Err(ProbeError::EmptySplit("train"));
    }
    if split.val_ids.is_empty() {
        return Err(ProbeError::EmptySplit("val"));
    }
    if split.test_ids.is_empty() {
        return Err(ProbeError::EmptySplit("test"));
    }

    let classes = labels.classes(factor, Some(&split.train_ids))?;
    if classes.len() < 2 {
        return Err(ProbeError::TooFewClasses { factor: factor.to_string(), got: classes.len() });
    }
    let class_index =
        |label: &str| -> Option<usize> { classes.iter().position(|c| c == label) };

    let mut train_x = embeddings.gather(&split.train_ids)?;
    let mut val_x = embeddings.gather(&split.val_ids)?;
    let train_y: Vec<usize> = split
        .train_ids
        .iter()
        .map(|id| Ok(class_index(labels.label(id, factor)?).expect("train class")))
        .collect::<Result<_, ProbeError>>()?;
    let val_y: Vec<usize> = split
        .val_ids
        .iter()
        .map(|id| {
            // val classes unseen in train cannot be predicted; point the label
            // at class 0 so the loss stays defined (they are few and only
            // nudge early stopping)
            Ok(class_index(labels.label(id, factor)?).unwrap_or(0))
        })
        .collect::<Result<_, ProbeError>>()?;

    let normalizer = if cfg.standardize {
        let d = train_x.cols();
        let n = train_x.rows() as f64;
        let mut mean = vec![0.0; d];
        for r in 0..train_x.rows() {
            for (m, v) in mean.iter_mut().zip(train_x.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut std = vec![0.0; d];
        for r in 0..train_x.rows() {
            for ((s, v), m) in std.iter_mut().zip(train_x.row(r)).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        for s in &mut std {
            *s = (*s / n).sqrt();
        }
        // floor at a fraction of the mean std so near-constant dimensions do
        // not get amplified into noise
        let mean_std = std.iter().sum::<f64>() / d.max(1) as f64;
        let floor = (0.01 * mean_std).max(1e-8);
        for s in &mut std {
            *s = s.max(floor);
        }
        Some((mean, std))
    } else {
        None
    };
    if let Some((mean, std)) = &normalizer {
        for x in [&mut train_x, &mut val_x] {
            for r in 0..x.rows() {
                for ((v, m), s) in x.row_mut(r).iter_mut().zip(mean).zip(std) {
                    *v = (*v - m) / s;
                }
            }
        }
    }

    let mut dims = vec![embeddings.dim()];
    dims.extend(std::iter::repeat(cfg.hidden_width).take(cfg.hidden_layers));
    dims.push(classes.len());
    let spec = NetworkSpec {
        layer_dims: dims,
        hidden_activation: crate::nnet::Activation::Relu,
        l2_coeff: cfg.l2_coeff,
    };
    let mut net = Network::init(spec, rng::subseed(cfg.seed, "probe-init", 0))?;
    let mut opt = AdamState::new(AdamConfig::with_lr(cfg.lr), &net);

    let mut best_val = f64::INFINITY;
    let mut best_net = net.clone();
    let mut bad_epochs = 0usize;
    let mut epochs_ran = 0usize;
    let mut stopped_early = false;
    let n_train = train_x.rows();

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng::stream(cfg.seed, "probe-epoch", epoch as u64));
        let mut at = 0;
        while at < n_train {
            let end = (at + cfg.batch_size).min(n_train);
            let rows = &order[at..end];
            let mut batch = Mat::zeros(rows.len(), train_x.cols());
            let mut batch_y = Vec::with_capacity(rows.len());
            for (bi, &r) in rows.iter().enumerate() {
                batch.row_mut(bi).copy_from_slice(train_x.row(r));
                batch_y.push(train_y[r]);
            }
            let (cache, logits) = net.forward(&batch)?;
            let (_, dlogits) = loss_softmax_ce(&logits, &batch_y, None)?;
            let (mut grads, _) = net.backward(&cache, &dlogits)?;
            add_l2_gradient(&net, cfg.l2_coeff, &mut grads);
            opt.step(&mut net, &grads)?;
            at = end;
        }
        epochs_ran = epoch + 1;

        let val_loss = mean_ce_loss(&net, &val_x, &val_y)?;
        if val_loss < best_val {
            best_val = val_loss;
            best_net = net.clone();
            bad_epochs = 0;
        } else {
            // ties do not reset patience
            bad_epochs += 1;
            if bad_epochs > cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let model = ProbeModel { network: best_net, classes, normalizer };
    let mut report = evaluate_probe(&model, embeddings, labels, factor, &split.test_ids)?;
    report.train_size = split.train_ids.len();
    report.val_size = split.val_ids.len();
    report.epochs_ran = epochs_ran;
    report.stopped_early = stopped_early;
    Ok((model, report))
}

/// Accuracy and confusion of a trained probe over exactly `ids`.
/// Deterministic; `epochs_ran`/`stopped_early` are zeroed since nothing is
/// trained here.
pub fn evaluate_probe(
    model: &ProbeModel,
    embeddings: &EmbeddingArchive,
    labels: &LabelTable,
    factor: &str,
    ids: &[String],
) -> Result<ProbeReport, ProbeError> {
    if ids.is_empty() {
        return Err(ProbeError::EmptySplit("evaluation"));
    }
    // confusion rows cover model classes plus any class seen only here
    let mut all_classes = model.classes.clone();
    let mut unseen: Vec<String> = Vec::new();
    for id in ids {
        let label = labels.label(id, factor)?;
        if !all_classes.iter().any(|c| c == label) {
            all_classes.push(label.to_string());
            unseen.push(label.to_string());
        }
    }
    let sorted = {
        let mut s = all_classes.clone();
        s.sort();
        s
    };
    unseen.sort();
    let full_index = |label: &str| sorted.iter().position(|c| c == label).expect("class known");

    let x = embeddings.gather(ids)?;
    let predictions = model.predict(&x)?;
    let n = sorted.len();
    let mut confusion = vec![vec![0u64; n]; n];
    let mut correct = 0usize;
    for (i, id) in ids.iter().enumerate() {
        let true_label = labels.label(id, factor)?;
        let predicted_label = &model.classes[predictions[i]];
        let (ti, pi) = (full_index(true_label), full_index(predicted_label));
        confusion[ti][pi] += 1;
        if ti == pi {
            correct += 1;
        }
    }
    Ok(ProbeReport {
        factor: factor.to_string(),
        n_classes: n,
        classes: sorted,
        train_size: 0,
        val_size: 0,
        test_size: ids.len(),
        test_accuracy: correct as f64 / ids.len() as f64,
        epochs_ran: 0,
        stopped_early: false,
        confusion,
        unseen_test_classes: unseen,
    })
}
