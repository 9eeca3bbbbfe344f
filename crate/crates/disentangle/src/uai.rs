//! Adversarial invariance model: an encoder splits each input embedding into
//! a speaker code `h1` and a nuisance code `h2`. A predictor reads speakers
//! from `h1`; a decoder must rebuild the input from a dropout-corrupted `h1`
//! plus `h2`, which pushes all non-speaker content into `h2`; two adversarial
//! disentanglers try to regress each code from the other, and the encoder is
//! trained to defeat them. No nuisance labels are involved anywhere.
//!
//! Training alternates per minibatch: one step on the main networks
//! (encoder, predictor, decoder) against
//! `w_pred * CE + w_recon * MSE - w_adv * (adversary losses)`,
//! then `adv_steps_per_main` steps on the disentanglers alone minimizing
//! the same adversary losses. The two parameter groups own separate Adam
//! states.
//!
//! The adversary loss is the regression MSE divided by the per-batch
//! variance of the target code (normalizer treated as a constant). A plain
//! MSE lets the encoder win by inflating code scales without bound; the
//! normalized loss is scale-free — at the adversary's best response it
//! equals `1 - R^2` — so the minimax game has a bounded objective.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{DataError, EmbeddingArchive, LabelTable, SplitSpec};
use crate::linalg::Mat;
use crate::nnet::{
    add_l2_gradient, apply_noise_masked, load_network, loss_mse, loss_softmax_ce, save_network,
    AdamConfig, AdamState, CheckpointMeta, Network, NetworkSpec, NnetError, NoiseSpec,
};
use crate::rng;

use rand::seq::SliceRandom;
use rand::RngExt;

#[derive(Debug, thiserror::Error)]
pub enum UaiError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("speaker mismatch: {0}")]
    SpeakerMismatch(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UaiConfig {
    pub input_dim: usize,
    pub h1_dim: usize,
    pub h2_dim: usize,
    pub n_speakers: usize,
    pub encoder_hidden: Vec<usize>,
    pub predictor_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub disentangler_hidden: Vec<usize>,
    pub w_pred: f64,
    pub w_recon: f64,
    pub w_adv: f64,
    pub adv_steps_per_main: usize,
    /// Dropout keep probability for the noisy `h1` fed to the decoder.
    pub keep_prob: f64,
    /// L2 coefficient on the weights of encoder, predictor and decoder; the
    /// disentanglers are left unregularized so they stay sharp.
    pub l2_coeff: f64,
    pub lr: f64,
    /// Learning rate of the disentanglers. Keeping this above `lr` lets the
    /// adversaries track the moving codes, which the minimax formulation
    /// presumes; a lagging adversary hands the encoder free reward for
    /// churning its codes.
    pub adv_lr: f64,
    /// Batch size for the disentangler updates. Larger than `batch_size` so
    /// the adversaries fit population statistics instead of the spurious
    /// correlations of a small batch; 0 means same as `batch_size`.
    pub adv_batch_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl UaiConfig {
    /// Defaults for a given input dimension and speaker count, sized for
    /// corpora of a few thousand utterances: a 128-dim speaker code next to a
    /// small 4-dim residual code, all networks linear (hidden layers stay
    /// available through the config), heavy reconstruction weight so the
    /// residual code must soak up non-speaker structure, and a fast, larger-
    /// batch adversary so the disentanglers stay near their best response.
    pub fn new(input_dim: usize, n_speakers: usize) -> Self {
        UaiConfig {
            input_dim,
            h1_dim: 128,
            h2_dim: 4,
            n_speakers,
            encoder_hidden: vec![],
            predictor_hidden: vec![],
            decoder_hidden: vec![],
            disentangler_hidden: vec![],
            w_pred: 3.0,
            w_recon: 60.0,
            w_adv: 5.0,
            adv_steps_per_main: 5,
            keep_prob: 0.08,
            l2_coeff: 0.02,
            lr: 0.003,
            adv_lr: 0.02,
            adv_batch_size: 512,
            epochs: 30,
            batch_size: 32,
            seed: 7,
        }
    }

    fn validate(&self) -> Result<(), UaiError> {
        if self.input_dim == 0 || self.h1_dim == 0 || self.h2_dim == 0 {
            return Err(UaiError::InvalidConfig("zero dimension".into()));
        }
        if self.h1_dim + self.h2_dim > 4 * self.input_dim {
            return Err(UaiError::InvalidConfig(format!(
                "split width {} exceeds 4x input dim {}",
                self.h1_dim + self.h2_dim,
                self.input_dim
            )));
        }
        if self.n_speakers < 2 {
            return Err(UaiError::InvalidConfig("need at least 2 speakers".into()));
        }
        if self.w_pred < 0.0 || self.w_recon < 0.0 || self.w_adv < 0.0 {
            return Err(UaiError::InvalidConfig("negative loss weight".into()));
        }
        if self.adv_steps_per_main == 0 {
            return Err(UaiError::InvalidConfig("adv_steps_per_main must be >= 1".into()));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(UaiError::InvalidConfig("keep_prob must be in (0, 1]".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.adv_lr > 0.0) {
            return Err(UaiError::InvalidConfig("bad batch size or lr".into()));
        }
        if self.l2_coeff < 0.0 {
            return Err(UaiError::InvalidConfig("negative l2 coefficient".into()));
        }
        Ok(())
    }
}

/// The five networks plus per-group optimizer state.
pub struct UaiModel {
    cfg: UaiConfig,
    encoder: Network,
    predictor: Network,
    decoder: Network,
    dis_h2_to_h1: Network,
    dis_h1_to_h2: Network,
    opt_encoder: AdamState,
    opt_predictor: AdamState,
    opt_decoder: AdamState,
    opt_dis_h2_to_h1: AdamState,
    opt_dis_h1_to_h2: AdamState,
    /// Dense speaker-index mapping established by training.
    speakers: Vec<String>,
    epochs_completed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub main_loss: f64,
    pub pred_loss: f64,
    pub recon_loss: f64,
    pub adv_loss: f64,
    /// Speaker accuracy of `predictor(h1)` on the validation split, when the
    /// split is nonempty.
    pub val_speaker_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

struct MainStepStats {
    pred_loss: f64,
    recon_loss: f64,
    adv_loss: f64,
    main_loss: f64,
}

/// Per-dimension batch variance of a code matrix; used to normalize the
/// adversary MSE dimension by dimension. Treated as a constant during
/// backprop.
fn column_variances(code: &Mat) -> Vec<f64> {
    let (rows, cols) = (code.rows(), code.cols());
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for (m, v) in mean.iter_mut().zip(code.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0; cols];
    for r in 0..rows {
        for ((s, v), m) in var.iter_mut().zip(code.row(r)).zip(&mean) {
            let c = v - m;
            *s += c * c;
        }
    }
    for s in &mut var {
        *s /= rows as f64;
    }
    var
}

/// Squared prediction error of each target dimension normalized by that
/// dimension's detached batch variance, averaged over dimensions; equals
/// `mean_d (1 - R^2_d)` at the adversary's best response. The normalizer is
/// floored at 1e-4 of the mean variance — the same relative floor the probe
/// standardizer uses — so the encoder cannot hide residual structure in
/// dimensions the adversary would otherwise ignore, while collapsing a
/// dimension still cannot buy unbounded reward.
fn adversary_loss(pred: &Mat, target: &Mat) -> Result<(f64, Mat), NnetError> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(NnetError::ShapeMismatch(format!(
            "adversary pred {}x{} vs target {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let vars = column_variances(target);
    let mean_var = vars.iter().sum::<f64>() / vars.len().max(1) as f64;
    let floor = (1e-4 * mean_var).max(1e-12);
    let norms: Vec<f64> = vars.iter().map(|&v| v.max(floor) + 1e-12).collect();
    let n = (pred.rows() * pred.cols()) as f64;
    let mut dpred = Mat::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for r in 0..pred.rows() {
        let p = pred.row(r);
        let t = target.row(r);
        let d = dpred.row_mut(r);
        for j in 0..p.len() {
            let diff = p[j] - t[j];
            loss += diff * diff / norms[j];
            d[j] = 2.0 * diff / (norms[j] * n);
        }
    }
    Ok((loss / n, dpred))
}

impl UaiModel {
    /// Build all five networks with seeded initialization.
    pub fn build(cfg: UaiConfig) -> Result<Self, UaiError> {
        cfg.validate()?;
        let split = cfg.h1_dim + cfg.h2_dim;
        let mut enc_dims = vec![cfg.input_dim];
        enc_dims.extend(&cfg.encoder_hidden);
        enc_dims.push(split);
        let mut pred_dims = vec![cfg.h1_dim];
        pred_dims.extend(&cfg.predictor_hidden);
        pred_dims.push(cfg.n_speakers);
        let mut dec_dims = vec![split];
        dec_dims.extend(&cfg.decoder_hidden);
        dec_dims.push(cfg.input_dim);
        let mut d21_dims = vec![cfg.h2_dim];
        d21_dims.extend(&cfg.disentangler_hidden);
        d21_dims.push(cfg.h1_dim);
        let mut d12_dims = vec![cfg.h1_dim];
        d12_dims.extend(&cfg.disentangler_hidden);
        d12_dims.push(cfg.h2_dim);

        let encoder =
            Network::init(NetworkSpec::relu(enc_dims), rng::subseed(cfg.seed, "uai-encoder", 0))?;
        let predictor =
            Network::init(NetworkSpec::relu(pred_dims), rng::subseed(cfg.seed, "uai-predictor", 0))?;
        let decoder =
            Network::init(NetworkSpec::relu(dec_dims), rng::subseed(cfg.seed, "uai-decoder", 0))?;
        let dis_h2_to_h1 =
            Network::init(NetworkSpec::relu(d21_dims), rng::subseed(cfg.seed, "uai-dis21", 0))?;
        let dis_h1_to_h2 =
            Network::init(NetworkSpec::relu(d12_dims), rng::subseed(cfg.seed, "uai-dis12", 0))?;

        let adam = AdamConfig::with_lr(cfg.lr);
        let adam_adv = AdamConfig::with_lr(cfg.adv_lr);
        Ok(UaiModel {
            cfg,
            opt_encoder: AdamState::new(adam, &encoder),
            opt_predictor: AdamState::new(adam, &predictor),
            opt_decoder: AdamState::new(adam, &decoder),
            opt_dis_h2_to_h1: AdamState::new(adam_adv, &dis_h2_to_h1),
            opt_dis_h1_to_h2: AdamState::new(adam_adv, &dis_h1_to_h2),
            encoder,
            predictor,
            decoder,
            dis_h2_to_h1,
            dis_h1_to_h2,
            speakers: Vec::new(),
            epochs_completed: 0,
        })
    }

    pub fn config(&self) -> &UaiConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn predictor(&self) -> &Network {
        &self.predictor
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub fn dis_h2_to_h1(&self) -> &Network {
        &self.dis_h2_to_h1
    }

    pub fn dis_h1_to_h2(&self) -> &Network {
        &self.dis_h1_to_h2
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    fn encode(&self, batch: &Mat) -> Result<(Mat, Mat), UaiError> {
        let (_, h) = self.encoder.forward(batch)?;
        let (h1, h2) = h.split_cols(self.cfg.h1_dim);
        Ok((h1, h2))
    }

    /// One minimax main step: update encoder/predictor/decoder on
    /// `w_pred * CE + w_recon * MSE - w_adv * adversary MSEs`. The
    /// disentanglers are read but never written here.
    fn main_step(
        &mut self,
        batch: &Mat,
        speaker_targets: &[usize],
        noise_rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<MainStepStats, UaiError> {
        let cfg = self.cfg.clone();
        let noise = NoiseSpec::new(cfg.keep_prob)?;

        let (enc_cache, h) = self.encoder.forward(batch)?;
        let (h1, h2) = h.split_cols(cfg.h1_dim);

        let (pred_cache, logits) = self.predictor.forward(&h1)?;
        let (pred_loss, dlogits) = loss_softmax_ce(&logits, speaker_targets, None)?;

        let (noisy_h1, noise_mask) = apply_noise_masked(&h1, &noise, noise_rng);
        let dec_in = Mat::concat_cols(&noisy_h1, &h2);
        let (dec_cache, reconstruction) = self.decoder.forward(&dec_in)?;
        let (recon_loss, drecon) = loss_mse(&reconstruction, batch)?;

        let (a1_cache, h1_hat) = self.dis_h2_to_h1.forward(&h2)?;
        let (adv1_loss, dh1_hat) = adversary_loss(&h1_hat, &h1)?;
        let (a2_cache, h2_hat) = self.dis_h1_to_h2.forward(&h1)?;
        let (adv2_loss, dh2_hat) = adversary_loss(&h2_hat, &h2)?;

        let adv_loss = adv1_loss + adv2_loss;
        let main_loss = cfg.w_pred * pred_loss + cfg.w_recon * recon_loss - cfg.w_adv * adv_loss;

        // predictor path
        let (pred_grads, dh1_pred) =
            self.predictor.backward(&pred_cache, &dlogits.scaled(cfg.w_pred))?;
        // decoder path; the dropout mask routes the reconstruction gradient
        // back onto h1
        let (dec_grads, ddec_in) =
            self.decoder.backward(&dec_cache, &drecon.scaled(cfg.w_recon))?;
        let (mut dh1_dec, dh2_dec) = ddec_in.split_cols(cfg.h1_dim);
        dh1_dec.hadamard_assign(&noise_mask);

        // adversary terms enter the main objective negatively. With the
        // normalizer detached, dL/dtarget(h1) = -dL/dpred = -dh1_hat; dL/dh2
        // flows through the disentangler input gradient. Disentangler
        // parameter gradients are discarded.
        let (_, dh2_adv1) = self.dis_h2_to_h1.backward(&a1_cache, &dh1_hat)?;
        let (_, dh1_adv2) = self.dis_h1_to_h2.backward(&a2_cache, &dh2_hat)?;

        let mut dh1 = dh1_pred;
        dh1.add_assign(&dh1_dec);
        dh1.add_assign(&dh1_hat.scaled(cfg.w_adv)); // -w_adv * (-dh1_hat)
        dh1.add_assign(&dh1_adv2.scaled(-cfg.w_adv));
        let mut dh2 = dh2_dec;
        dh2.add_assign(&dh2_hat.scaled(cfg.w_adv));
        dh2.add_assign(&dh2_adv1.scaled(-cfg.w_adv));

        let dh = Mat::concat_cols(&dh1, &dh2);
        let (mut enc_grads, _) = self.encoder.backward(&enc_cache, &dh)?;

        let mut pred_grads = pred_grads;
        let mut dec_grads = dec_grads;
        add_l2_gradient(&self.encoder, cfg.l2_coeff, &mut enc_grads);
        add_l2_gradient(&self.predictor, cfg.l2_coeff, &mut pred_grads);
        add_l2_gradient(&self.decoder, cfg.l2_coeff, &mut dec_grads);

        self.opt_encoder.step(&mut self.encoder, &enc_grads)?;
        self.opt_predictor.step(&mut self.predictor, &pred_grads)?;
        self.opt_decoder.step(&mut self.decoder, &dec_grads)?;

        Ok(MainStepStats { pred_loss, recon_loss, adv_loss, main_loss })
    }

    /// `adv_steps_per_main` updates of the disentanglers against the frozen
    /// encoder; returns the mean adversarial objective (minimized as-is, the
    /// positive side of the minimax game).
    fn adversary_steps(&mut self, batch: &Mat) -> Result<f64, UaiError> {
        let (h1, h2) = self.encode(batch)?;
        let mut total = 0.0;
        for _ in 0..self.cfg.adv_steps_per_main {
            let (c1, h1_hat) = self.dis_h2_to_h1.forward(&h2)?;
            let (l1, d1) = adversary_loss(&h1_hat, &h1)?;
            let (g1, _) = self.dis_h2_to_h1.backward(&c1, &d1)?;
            self.opt_dis_h2_to_h1.step(&mut self.dis_h2_to_h1, &g1)?;

            let (c2, h2_hat) = self.dis_h1_to_h2.forward(&h1)?;
            let (l2, d2) = adversary_loss(&h2_hat, &h2)?;
            let (g2, _) = self.dis_h1_to_h2.backward(&c2, &d2)?;
            self.opt_dis_h1_to_h2.step(&mut self.dis_h1_to_h2, &g2)?;

            total += l1 + l2;
        }
        Ok(total / self.cfg.adv_steps_per_main as f64)
    }

    fn adversary_batch(
        &self,
        train_x: &Mat,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Mat {
        let want = self.cfg.adv_batch_size;
        if want == 0 || want >= train_x.rows() {
            return train_x.clone();
        }
        let mut batch = Mat::zeros(want, train_x.cols());
        for i in 0..want {
            let r = rng.random_range(0..train_x.rows());
            batch.row_mut(i).copy_from_slice(train_x.row(r));
        }
        batch
    }

    fn val_speaker_accuracy(
        &self,
        archive: &EmbeddingArchive,
        labels: &LabelTable,
        val_ids: &[String],
    ) -> Result<Option<f64>, UaiError> {
        if val_ids.is_empty() {
            return Ok(None);
        }
        let x = archive.gather(val_ids)?;
        let (h1, _) = self.encode(&x)?;
        let (_, logits) = self.predictor.forward(&h1)?;
        let mut correct = 0usize;
        for (i, id) in val_ids.iter().enumerate() {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if self.speakers[best] == labels.label(id, "speaker")? {
                correct += 1;
            }
        }
        Ok(Some(correct as f64 / val_ids.len() as f64))
    }

    /// Minimax training over the train split of `split`. Deterministic in the
    /// config seed. Returns one record per epoch.
    pub fn train(
        &mut self,
        archive: &EmbeddingArchive,
        labels: &LabelTable,
        split: &SplitSpec,
    ) -> Result<TrainLog, UaiError> {
        let cfg = self.cfg.clone();
        let mut speakers: Vec<String> = split
            .train_ids
            .iter()
            .map(|id| labels.label(id, "speaker").map(str::to_string))
            .collect::<Result<_, _>>()?;
        speakers.sort();
        speakers.dedup();
        if speakers.len() != cfg.n_speakers {
            return Err(UaiError::SpeakerMismatch(format!(
                "train split has {} speakers, model was built for {}",
                speakers.len(),
                cfg.n_speakers
            )));
        }
        self.speakers = speakers;
        let speaker_index: BTreeMap<&str, usize> =
            self.speakers.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

        let train_x = archive.gather(&split.train_ids)?;
        let train_y: Vec<usize> = split
            .train_ids
            .iter()
            .map(|id| {
                let label = labels.label(id, "speaker")?;
                speaker_index
                    .get(label)
                    .copied()
                    .ok_or_else(|| UaiError::SpeakerMismatch(format!("unknown speaker {label:?}")))
            })
            .collect::<Result<_, _>>()?;

        let mut log = TrainLog::default();
        let n = train_x.rows();
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::stream(cfg.seed, "uai-epoch", epoch as u64));
            let mut noise_rng = rng::stream(cfg.seed, "uai-noise", epoch as u64);
            let mut adv_rng = rng::stream(cfg.seed, "uai-adv-batch", epoch as u64);

            let mut sums = (0.0, 0.0, 0.0, 0.0);
            let mut batches = 0usize;
            let mut at = 0;
            while at < n {
                let end = (at + cfg.batch_size).min(n);
                let rows = &order[at..end];
                let mut batch = Mat::zeros(rows.len(), train_x.cols());
                let mut targets = Vec::with_capacity(rows.len());
                for (bi, &r) in rows.iter().enumerate() {
                    batch.row_mut(bi).copy_from_slice(train_x.row(r));
                    targets.push(train_y[r]);
                }
                let stats = self.main_step(&batch, &targets, &mut noise_rng)?;
                let adv_batch = self.adversary_batch(&train_x, &mut adv_rng);
                let adv = self.adversary_steps(&adv_batch)?;
                if !(stats.main_loss.is_finite() && adv.is_finite()) {
                    return Err(UaiError::NonFiniteLoss {
                        epoch,
                        detail: format!("main {}, adversarial {adv}", stats.main_loss),
                    });
                }
                sums.0 += stats.main_loss;
                sums.1 += stats.pred_loss;
                sums.2 += stats.recon_loss;
                sums.3 += stats.adv_loss;
                batches += 1;
                at = end;
            }
            let b = batches as f64;
            let record = EpochRecord {
                epoch,
                main_loss: sums.0 / b,
                pred_loss: sums.1 / b,
                recon_loss: sums.2 / b,
                adv_loss: sums.3 / b,
                val_speaker_accuracy: self.val_speaker_accuracy(archive, labels, &split.val_ids)?,
            };
            log.epochs.push(record);
            self.epochs_completed += 1;
        }
        Ok(log)
    }

    /// Split every archive entry into its `h1` and `h2` codes (noise
    /// disabled, order preserved).
    pub fn extract_embeddings(
        &self,
        archive: &EmbeddingArchive,
    ) -> Result<(EmbeddingArchive, EmbeddingArchive), UaiError> {
        if archive.dim() != self.cfg.input_dim {
            return Err(UaiError::InvalidConfig(format!(
                "archive dim {} does not match model input {}",
                archive.dim(),
                self.cfg.input_dim
            )));
        }
        let mut h1_archive = EmbeddingArchive::new(self.cfg.h1_dim);
        let mut h2_archive = EmbeddingArchive::new(self.cfg.h2_dim);
        let chunk = 512;
        let ids = archive.ids();
        let mut at = 0;
        while at < ids.len() {
            let end = (at + chunk).min(ids.len());
            let batch = archive.gather(&ids[at..end])?;
            let (h1, h2) = self.encode(&batch)?;
            for (i, id) in ids[at..end].iter().enumerate() {
                h1_archive.push(id, h1.row(i))?;
                h2_archive.push(id, h2.row(i))?;
            }
            at = end;
        }
        Ok((h1_archive, h2_archive))
    }

    /// Decode `[h1, h2]` back to the input space with noise disabled.
    pub fn reconstruct(&self, archive: &EmbeddingArchive) -> Result<EmbeddingArchive, UaiError> {
        if archive.dim() != self.cfg.input_dim {
            return Err(UaiError::InvalidConfig(format!(
                "archive dim {} does not match model input {}",
                archive.dim(),
                self.cfg.input_dim
            )));
        }
        let mut out = EmbeddingArchive::new(self.cfg.input_dim);
        let chunk = 512;
        let ids = archive.ids();
        let mut at = 0;
        while at < ids.len() {
            let end = (at + chunk).min(ids.len());
            let batch = archive.gather(&ids[at..end])?;
            let (h1, h2) = self.encode(&batch)?;
            let dec_in = Mat::concat_cols(&h1, &h2);
            let (_, reconstruction) = self.decoder.forward(&dec_in)?;
            for (i, id) in ids[at..end].iter().enumerate() {
                out.push(id, reconstruction.row(i))?;
            }
            at = end;
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Checkpointing: a directory of five NNET files plus a JSON manifest.

#[derive(Serialize, Deserialize)]
struct UaiManifest {
    format: String,
    config: UaiConfig,
    epochs_completed: usize,
    seed: u64,
    data_fingerprint: String,
    speakers: Vec<String>,
}

const NET_FILES: [&str; 5] =
    ["encoder.nnet", "predictor.nnet", "decoder.nnet", "dis_h2_to_h1.nnet", "dis_h1_to_h2.nnet"];

/// Write the model into `dir` (created if needed). Optimizer state is not
/// persisted; checkpoints are for extraction and scoring, not for resuming.
pub fn save_uai(model: &UaiModel, dir: &Path, data_fingerprint: &str) -> Result<(), UaiError> {
    fs::create_dir_all(dir)?;
    let manifest = UaiManifest {
        format: "UAI v1".to_string(),
        config: model.cfg.clone(),
        epochs_completed: model.epochs_completed,
        seed: model.cfg.seed,
        data_fingerprint: data_fingerprint.to_string(),
        speakers: model.speakers.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| UaiError::BadCheckpoint(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json + "\n")?;
    let meta = CheckpointMeta { step_count: model.epochs_completed as u64, seed: model.cfg.seed };
    let nets = [
        &model.encoder,
        &model.predictor,
        &model.decoder,
        &model.dis_h2_to_h1,
        &model.dis_h1_to_h2,
    ];
    for (name, net) in NET_FILES.iter().zip(nets) {
        save_network(net, &meta, &dir.join(name))?;
    }
    Ok(())
}

pub fn load_uai(dir: &Path) -> Result<UaiModel, UaiError> {
    let manifest: UaiManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| UaiError::BadCheckpoint(format!("manifest: {e}")))?;
    if manifest.format != "UAI v1" {
        return Err(UaiError::BadCheckpoint(format!("unsupported format {:?}", manifest.format)));
    }
    let mut model = UaiModel::build(manifest.config)?;
    let mut nets = Vec::new();
    for name in NET_FILES {
        let (net, _) = load_network(&dir.join(name))?;
        nets.push(net);
    }
    // wiring must match the freshly built shapes
    {
        let expected = [
            &model.encoder,
            &model.predictor,
            &model.decoder,
            &model.dis_h2_to_h1,
            &model.dis_h1_to_h2,
        ];
        for (loaded, built) in nets.iter().zip(expected) {
            if loaded.spec().layer_dims != built.spec().layer_dims {
                return Err(UaiError::BadCheckpoint("network shape does not match config".into()));
            }
        }
    }
    let mut it = nets.into_iter();
    model.encoder = it.next().unwrap();
    model.predictor = it.next().unwrap();
    model.decoder = it.next().unwrap();
    model.dis_h2_to_h1 = it.next().unwrap();
    model.dis_h1_to_h2 = it.next().unwrap();
    model.speakers = manifest.speakers;
    model.epochs_completed = manifest.epochs_completed;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::make_splits;
    use crate::synth::{generate_corpus, FactorSpec, GeneratorSpec};

    fn tiny_corpus(seed: u64) -> (EmbeddingArchive, LabelTable, SplitSpec) {
        let spec = GeneratorSpec {
            dim: 48,
            n_speakers: 6,
            utts_per_speaker: 10,
            nuisance_factors: vec![FactorSpec::new("noise", 3, 1.0)],
            speaker_strength: 1.0,
            noise_sigma: 0.2,
            confound: 0.0,
            seed,
        };
        let corpus = generate_corpus(&spec).unwrap();
        let ids = corpus.embeddings.ids().to_vec();
        let (split, _) =
            make_splits(&ids, (0.8, 0.1, 0.1), Some(("speaker", &corpus.labels)), seed).unwrap();
        (corpus.embeddings, corpus.labels, split)
    }

    fn tiny_cfg(seed: u64) -> UaiConfig {
        UaiConfig {
            encoder_hidden: vec![64],
            predictor_hidden: vec![32],
            decoder_hidden: vec![64],
            disentangler_hidden: vec![16],
            h1_dim: 8,
            h2_dim: 8,
            epochs: 2,
            batch_size: 16,
            seed,
            ..UaiConfig::new(48, 6)
        }
    }

    #[test]
    fn wiring_matches_config() {
        // default split keeps the 128-dim speaker code
        let cfg = UaiConfig::new(512, 50);
        assert_eq!(cfg.h1_dim, 128);
        let model = UaiModel::build(cfg.clone()).unwrap();
        assert_eq!(model.encoder().input_dim(), 512);
        assert_eq!(model.encoder().output_dim(), cfg.h1_dim + cfg.h2_dim);
        assert_eq!(model.predictor().input_dim(), 128);
        assert_eq!(model.predictor().output_dim(), 50);
        assert_eq!(model.decoder().input_dim(), cfg.h1_dim + cfg.h2_dim);
        assert_eq!(model.decoder().output_dim(), 512);
        assert_eq!(model.dis_h2_to_h1().input_dim(), cfg.h2_dim);
        assert_eq!(model.dis_h2_to_h1().output_dim(), 128);
        assert_eq!(model.dis_h1_to_h2().input_dim(), 128);
        assert_eq!(model.dis_h1_to_h2().output_dim(), cfg.h2_dim);

        // a 128+128 split wires a 256-wide decoder input
        let wide = UaiConfig { h2_dim: 128, ..UaiConfig::new(512, 50) };
        let model = UaiModel::build(wide).unwrap();
        assert_eq!(model.encoder().output_dim(), 256);
        assert_eq!(model.decoder().input_dim(), 256);
    }

    #[test]
    fn odd_split_dims_are_wired_through() {
        let cfg = UaiConfig {
            h1_dim: 2,
            h2_dim: 3,
            encoder_hidden: vec![8],
            predictor_hidden: vec![4],
            decoder_hidden: vec![8],
            disentangler_hidden: vec![4],
            ..UaiConfig::new(8, 3)
        };
        let model = UaiModel::build(cfg).unwrap();
        assert_eq!(model.encoder().output_dim(), 5);
        assert_eq!(model.predictor().input_dim(), 2);
        assert_eq!(model.dis_h2_to_h1().input_dim(), 3);
        assert_eq!(model.dis_h2_to_h1().output_dim(), 2);
        assert_eq!(model.dis_h1_to_h2().input_dim(), 2);
        assert_eq!(model.dis_h1_to_h2().output_dim(), 3);
    }

    #[test]
    fn build_is_deterministic() {
        let a = UaiModel::build(tiny_cfg(3)).unwrap();
        let b = UaiModel::build(tiny_cfg(3)).unwrap();
        assert_eq!(a.encoder(), b.encoder());
        assert_eq!(a.dis_h1_to_h2(), b.dis_h1_to_h2());
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let (archive, labels, split) = tiny_corpus(1);
        let mut cfg = tiny_cfg(1);
        cfg.epochs = 0;
        let mut model = UaiModel::build(cfg).unwrap();
        let before = model.encoder().clone();
        let log = model.train(&archive, &labels, &split).unwrap();
        assert!(log.epochs.is_empty());
        assert_eq!(model.encoder(), &before);
    }

    #[test]
    fn training_is_deterministic() {
        let (archive, labels, split) = tiny_corpus(2);
        let mut a = UaiModel::build(tiny_cfg(2)).unwrap();
        let log_a = a.train(&archive, &labels, &split).unwrap();
        let mut b = UaiModel::build(tiny_cfg(2)).unwrap();
        let log_b = b.train(&archive, &labels, &split).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(a.encoder(), b.encoder());
        assert_eq!(a.dis_h2_to_h1(), b.dis_h2_to_h1());
    }

    #[test]
    fn main_step_never_touches_disentanglers() {
        let (archive, labels, split) = tiny_corpus(3);
        let mut model = UaiModel::build(tiny_cfg(3)).unwrap();
        model.speakers = labels.classes("speaker", None).unwrap();
        let first: Vec<String> = split.train_ids[..8].to_vec();
        let batch = archive.gather(&first).unwrap();
        let targets: Vec<usize> = first
            .iter()
            .map(|id| {
                let s = labels.label(id, "speaker").unwrap();
                model.speakers.iter().position(|x| x == s).unwrap()
            })
            .collect();
        let d21_before = model.dis_h2_to_h1.clone();
        let d12_before = model.dis_h1_to_h2.clone();
        let enc_before = model.encoder.clone();
        let mut rng = rng::stream(0, "test-noise", 0);
        model.main_step(&batch, &targets, &mut rng).unwrap();
        assert_eq!(model.dis_h2_to_h1, d21_before);
        assert_eq!(model.dis_h1_to_h2, d12_before);
        assert_ne!(model.encoder, enc_before);
    }

    #[test]
    fn adversary_steps_never_touch_main_networks() {
        let (archive, _labels, split) = tiny_corpus(4);
        let mut model = UaiModel::build(tiny_cfg(4)).unwrap();
        let first: Vec<String> = split.train_ids[..8].to_vec();
        let batch = archive.gather(&first).unwrap();
        let enc_before = model.encoder.clone();
        let pred_before = model.predictor.clone();
        let dec_before = model.decoder.clone();
        let d21_before = model.dis_h2_to_h1.clone();
        model.adversary_steps(&batch).unwrap();
        assert_eq!(model.encoder, enc_before);
        assert_eq!(model.predictor, pred_before);
        assert_eq!(model.decoder, dec_before);
        assert_ne!(model.dis_h2_to_h1, d21_before);
    }

    #[test]
    fn minimax_signs_in_loss_bookkeeping() {
        // the adversary term must enter the main objective negatively and the
        // adversarial objective positively
        let (archive, labels, split) = tiny_corpus(5);
        let mut model = UaiModel::build(tiny_cfg(5)).unwrap();
        model.speakers = labels.classes("speaker", None).unwrap();
        let first: Vec<String> = split.train_ids[..8].to_vec();
        let batch = archive.gather(&first).unwrap();
        let targets: Vec<usize> = first
            .iter()
            .map(|id| {
                let s = labels.label(id, "speaker").unwrap();
                model.speakers.iter().position(|x| x == s).unwrap()
            })
            .collect();
        let mut rng = rng::stream(0, "test-noise", 1);
        let stats = model.main_step(&batch, &targets, &mut rng).unwrap();
        let cfg = model.config();
        let expect = cfg.w_pred * stats.pred_loss + cfg.w_recon * stats.recon_loss
            - cfg.w_adv * stats.adv_loss;
        assert!((stats.main_loss - expect).abs() < 1e-12);
        assert!(stats.adv_loss >= 0.0);
        let adv_obj = model.adversary_steps(&batch).unwrap();
        assert!(adv_obj >= 0.0);
    }

    #[test]
    fn non_adversarial_run_decreases_main_loss() {
        // with w_adv = 0 the main objective is a plain supervised loss and
        // should fall over the first epochs (moving-average comparison)
        let (archive, labels, split) = tiny_corpus(6);
        let mut cfg = tiny_cfg(6);
        cfg.w_adv = 0.0;
        cfg.epochs = 6;
        cfg.lr = 0.002;
        let mut model = UaiModel::build(cfg).unwrap();
        let log = model.train(&archive, &labels, &split).unwrap();
        let losses: Vec<f64> = log.epochs.iter().map(|e| e.main_loss).collect();
        let ma = |i: usize| (losses[i] + losses[i + 1]) / 2.0;
        for i in 0..4 {
            assert!(
                ma(i + 1) <= ma(i) * 1.02 + 1e-9,
                "moving average rose at {i}: {losses:?}"
            );
        }
    }

    #[test]
    fn extraction_shapes_order_and_determinism() {
        let (archive, labels, split) = tiny_corpus(7);
        let mut model = UaiModel::build(tiny_cfg(7)).unwrap();
        model.train(&archive, &labels, &split).unwrap();
        let (h1, h2) = model.extract_embeddings(&archive).unwrap();
        assert_eq!(h1.dim(), 8);
        assert_eq!(h2.dim(), 8);
        assert_eq!(h1.ids(), archive.ids());
        assert_eq!(h2.ids(), archive.ids());
        let (h1b, _) = model.extract_embeddings(&archive).unwrap();
        assert_eq!(h1, h1b);
    }

    #[test]
    fn extraction_of_empty_archive() {
        let model = UaiModel::build(tiny_cfg(8)).unwrap();
        let empty = EmbeddingArchive::new(48);
        let (h1, h2) = model.extract_embeddings(&empty).unwrap();
        assert_eq!((h1.len(), h2.len()), (0, 0));
        assert_eq!((h1.dim(), h2.dim()), (8, 8));
    }

    #[test]
    fn zeroed_decoder_reconstructs_zero() {
        let (archive, _, _) = tiny_corpus(9);
        let mut model = UaiModel::build(tiny_cfg(9)).unwrap();
        for k in 0..model.decoder.n_layers() {
            model.decoder.weight_mut(k).scale(0.0);
        }
        let out = model.reconstruct(&archive).unwrap();
        assert!(out.flat_data().iter().all(|&v| v == 0.0));
        assert_eq!(out.ids(), archive.ids());
    }

    #[test]
    fn trained_model_reconstructs_better_than_untrained() {
        // low observation noise so the reconstruction floor is far below the
        // input variance
        let spec = GeneratorSpec {
            dim: 48,
            n_speakers: 6,
            utts_per_speaker: 10,
            nuisance_factors: vec![FactorSpec::new("noise", 3, 1.0)],
            speaker_strength: 1.0,
            noise_sigma: 0.05,
            confound: 0.0,
            seed: 10,
        };
        let corpus = generate_corpus(&spec).unwrap();
        let ids = corpus.embeddings.ids().to_vec();
        let (split, _) =
            make_splits(&ids, (0.8, 0.1, 0.1), Some(("speaker", &corpus.labels)), 10).unwrap();
        let archive = corpus.embeddings;
        let mut cfg = tiny_cfg(10);
        cfg.epochs = 40;
        cfg.lr = 0.002;
        let untrained = UaiModel::build(cfg.clone()).unwrap();
        let mut trained = UaiModel::build(cfg).unwrap();
        trained.train(&archive, &corpus.labels, &split).unwrap();
        let mse_of = |model: &UaiModel| {
            let recon = model.reconstruct(&archive).unwrap();
            let mut sum = 0.0;
            let mut count = 0usize;
            for id in &split.train_ids {
                let a = recon.get(id).unwrap();
                let b = archive.get(id).unwrap();
                for (x, y) in a.iter().zip(b) {
                    sum += (x - y) * (x - y);
                    count += 1;
                }
            }
            sum / count as f64
        };
        let (before, after) = (mse_of(&untrained), mse_of(&trained));
        assert!(after * 2.0 <= before, "before {before}, after {after}");
    }

    #[test]
    fn checkpoint_round_trips() {
        let (archive, labels, split) = tiny_corpus(11);
        let mut model = UaiModel::build(tiny_cfg(11)).unwrap();
        model.train(&archive, &labels, &split).unwrap();
        let dir = std::env::temp_dir().join("disentangle-uai-ckpt");
        let _ = std::fs::remove_dir_all(&dir);
        save_uai(&model, &dir, "fnv1a64:0").unwrap();
        let loaded = load_uai(&dir).unwrap();
        assert_eq!(loaded.encoder(), model.encoder());
        assert_eq!(loaded.speakers(), model.speakers());
        assert_eq!(loaded.epochs_completed(), model.epochs_completed());
        let (h1a, _) = model.extract_embeddings(&archive).unwrap();
        let (h1b, _) = loaded.extract_embeddings(&archive).unwrap();
        assert_eq!(h1a, h1b);
    }
}
