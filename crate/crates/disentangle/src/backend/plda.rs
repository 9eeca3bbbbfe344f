//! Two-covariance PLDA: `x = mu + y + e` with speaker offset
//! `y ~ N(0, between_cov)` and residual `e ~ N(0, within_cov)`, fitted by EM.
//! Trials are scored with the closed-form same/different-speaker
//! log-likelihood ratio.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataio::{EmbeddingArchive, LabelTable, TrialList};
use crate::linalg::Mat;
use crate::rng;

use super::{BackendError, ScoreSet, ScoredTrial};

#[derive(Clone, Debug, PartialEq)]
pub struct PldaModel {
    pub mu: Vec<f64>,
    /// Speaker (between-class) covariance, symmetric PSD.
    pub between_cov: Mat,
    /// Residual (within-class) covariance, symmetric PD.
    pub within_cov: Mat,
}

pub struct PldaFit {
    pub model: PldaModel,
    /// Total-data log-likelihood before each EM iteration plus once after the
    /// last; non-decreasing.
    pub loglik: Vec<f64>,
}

fn to_dmatrix(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

fn to_mat(m: &DMatrix<f64>) -> Mat {
    let mut out = Mat::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.set(i, j, m[(i, j)]);
        }
    }
    out
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn cholesky_or_err(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>, BackendError> {
    m.clone()
        .cholesky()
        .ok_or_else(|| BackendError::DegenerateCovariance(what.to_string()))
}

fn ln_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

struct SpeakerStats {
    count: usize,
    sum: DVector<f64>,
    /// Sum of outer products of the speaker's centered vectors; refreshed
    /// whenever `mu` moves.
    scatter: DMatrix<f64>,
}

fn group_by_speaker(
    embeddings: &EmbeddingArchive,
    labels: &LabelTable,
) -> Result<BTreeMap<String, Vec<usize>>, BackendError> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, (id, _)) in embeddings.iter().enumerate() {
        groups
            .entry(labels.label(id, "speaker")?.to_string())
            .or_default()
            .push(i);
    }
    if groups.len() < 2 {
        return Err(BackendError::InsufficientData("need at least 2 speakers".into()));
    }
    if let Some((speaker, _)) = groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(BackendError::InsufficientData(format!(
            "speaker {speaker:?} has fewer than 2 utterances"
        )));
    }
    Ok(groups)
}

fn speaker_stats(
    embeddings: &EmbeddingArchive,
    groups: &BTreeMap<String, Vec<usize>>,
    mu: &DVector<f64>,
) -> Vec<SpeakerStats> {
    let d = embeddings.dim();
    groups
        .values()
        .map(|members| {
            let mut sum = DVector::<f64>::zeros(d);
            let mut scatter = DMatrix::<f64>::zeros(d, d);
            let mut z = DVector::<f64>::zeros(d);
            for &i in members {
                let v = embeddings.vector(i);
                for j in 0..d {
                    z[j] = v[j] - mu[j];
                }
                sum += &z;
                scatter.syger(1.0, &z, &z, 1.0);
            }
            for i in 0..d {
                for j in i + 1..d {
                    scatter[(i, j)] = scatter[(j, i)];
                }
            }
            SpeakerStats { count: members.len(), sum, scatter }
        })
        .collect()
}

/// Total-data log-likelihood of the two-covariance model, speaker by speaker.
fn log_likelihood(
    stats: &[SpeakerStats],
    within: &DMatrix<f64>,
    between: &DMatrix<f64>,
) -> Result<f64, BackendError> {
    let d = within.nrows() as f64;
    let w_chol = cholesky_or_err(within, "within covariance")?;
    let ln_det_w = ln_det(&w_chol);
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();

    let mut by_count: BTreeMap<usize, (Cholesky<f64, Dyn>, f64)> = BTreeMap::new();
    let mut total = 0.0;
    for s in stats {
        let n = s.count;
        let (t_chol, ln_det_t) = match by_count.get(&n) {
            Some(v) => (v.0.clone(), v.1),
            None => {
                let t = within + between * n as f64;
                let chol = cholesky_or_err(&t, "within + n*between")?;
                let ld = ln_det(&chol);
                by_count.insert(n, (chol.clone(), ld));
                (chol, ld)
            }
        };
        let nf = n as f64;
        let mean = &s.sum / nf;
        // contrast part: tr(W^-1 (S - n mean mean^T))
        let mut contrast = s.scatter.clone();
        contrast.syger(-nf, &mean, &mean, 1.0);
        for i in 0..contrast.nrows() {
            for j in i + 1..contrast.ncols() {
                contrast[(i, j)] = contrast[(j, i)];
            }
        }
        let tr = w_chol.solve(&contrast).trace();
        let t_quad = nf * (mean.dot(&t_chol.solve(&mean)));
        total += -0.5
            * ((nf - 1.0) * (d * ln_2pi + ln_det_w)
                + (d * ln_2pi + ln_det_t)
                + tr
                + t_quad);
    }
    Ok(total)
}

/// Fit by EM from scatter-based initialization; the returned trace holds the
/// log-likelihood before every iteration plus a final evaluation and must be
/// non-decreasing up to a small numerical slack.
pub fn fit_plda(
    embeddings: &EmbeddingArchive,
    labels: &LabelTable,
    em_iters: usize,
) -> Result<PldaFit, BackendError> {
    let d = embeddings.dim();
    let n = embeddings.len();
    let groups = group_by_speaker(embeddings, labels)?;

    // global mean
    let mut mu = DVector::<f64>::zeros(d);
    for (_, v) in embeddings.iter() {
        for j in 0..d {
            mu[j] += v[j];
        }
    }
    mu /= n as f64;

    // scatter initialization
    let mut within = DMatrix::<f64>::zeros(d, d);
    let mut between = DMatrix::<f64>::zeros(d, d);
    {
        let mut z = DVector::<f64>::zeros(d);
        for members in groups.values() {
            let mut cm = DVector::<f64>::zeros(d);
            for &i in members {
                let v = embeddings.vector(i);
                for j in 0..d {
                    cm[j] += v[j];
                }
            }
            cm /= members.len() as f64;
            for &i in members {
                let v = embeddings.vector(i);
                for j in 0..d {
                    z[j] = v[j] - cm[j];
                }
                within.syger(1.0, &z, &z, 1.0);
            }
            let diff = &cm - &mu;
            between.syger(members.len() as f64, &diff, &diff, 1.0);
        }
        within /= n as f64;
        between /= groups.len() as f64;
        for m in [&mut within, &mut between] {
            for i in 0..d {
                for j in i + 1..d {
                    m[(i, j)] = m[(j, i)];
                }
            }
        }
        // keep both strictly PD so the EM linear algebra stays solvable even
        // for degenerate generators
        let total_scale = (within.trace() + between.trace()).max(1e-300);
        let ridge = 1e-6 * total_scale / d as f64;
        for i in 0..d {
            within[(i, i)] += ridge;
            between[(i, i)] += ridge;
        }
    }

    let mut loglik = Vec::with_capacity(em_iters + 1);
    for _ in 0..em_iters {
        let stats = speaker_stats(embeddings, &groups, &mu);
        loglik.push(log_likelihood(&stats, &within, &between)?);

        let w_inv = cholesky_or_err(&within, "within covariance")?.inverse();
        let b_inv = cholesky_or_err(&between, "between covariance")?.inverse();

        // posterior covariance per distinct utterance count
        let mut post_cov: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
        for s in &stats {
            post_cov.entry(s.count).or_insert_with(|| {
                let lambda = &b_inv + &w_inv * s.count as f64;
                lambda
                    .clone()
                    .cholesky()
                    .map(|c| c.inverse())
                    .unwrap_or_else(|| lambda.try_inverse().expect("posterior precision"))
            });
        }

        let n_speakers = stats.len() as f64;
        let mut mu_new = DVector::<f64>::zeros(d);
        let mut b_new = DMatrix::<f64>::zeros(d, d);
        let mut y_hat_all = Vec::with_capacity(stats.len());
        for s in &stats {
            let sigma = &post_cov[&s.count];
            let y_hat = sigma * (&w_inv * &s.sum);
            b_new += sigma;
            b_new.syger(1.0, &y_hat, &y_hat, 1.0);
            // sum_j x_ij - n*y_hat, expressed via centered sums
            mu_new += &s.sum - &y_hat * s.count as f64;
            y_hat_all.push(y_hat);
        }
        // syger filled only the lower triangle of the y y^T part
        for i in 0..d {
            for j in i + 1..d {
                b_new[(i, j)] = b_new[(j, i)];
            }
        }
        mu_new = &mu + mu_new / n as f64;
        b_new /= n_speakers;

        // W update with the new mu: E[(x - mu' - y)(x - mu' - y)^T]
        let shift = &mu_new - &mu; // z'_ij = z_ij - shift
        let mut w_new = DMatrix::<f64>::zeros(d, d);
        for (s, y_hat) in stats.iter().zip(&y_hat_all) {
            let nf = s.count as f64;
            let r = y_hat + &shift; // per-utterance offset subtracted from z_ij
            // sum_j (z_ij - r)(z_ij - r)^T = S - sum r^T - r sum^T + n r r^T
            let mut acc = s.scatter.clone();
            acc -= &s.sum * r.transpose();
            acc -= &r * s.sum.transpose();
            acc.syger(nf, &r, &r, 1.0);
            for i in 0..d {
                for j in i + 1..d {
                    acc[(i, j)] = acc[(j, i)];
                }
            }
            w_new += acc;
            w_new += &post_cov[&s.count] * nf;
        }
        w_new /= n as f64;

        symmetrize(&mut b_new);
        symmetrize(&mut w_new);
        mu = mu_new;
        between = b_new;
        within = w_new;
    }
    let stats = speaker_stats(embeddings, &groups, &mu);
    loglik.push(log_likelihood(&stats, &within, &between)?);

    Ok(PldaFit {
        model: PldaModel {
            mu: mu.iter().cloned().collect(),
            between_cov: to_mat(&between),
            within_cov: to_mat(&within),
        },
        loglik,
    })
}

/// Precomputed quadratic form of the verification log-likelihood ratio
/// `log p(e, t | same speaker) - log p(e, t | different speakers)`:
/// `llr = 0.5 ze^T Q ze + 0.5 zt^T Q zt + ze^T P zt + const` with symmetric
/// `P` and `Q`, hence exactly symmetric in enroll and test.
pub struct PldaScorer {
    mu: Vec<f64>,
    q: Mat,
    p: Mat,
    constant: f64,
}

impl PldaScorer {
    pub fn new(model: &PldaModel) -> Result<Self, BackendError> {
        let d = model.mu.len();
        if model.between_cov.rows() != d || model.within_cov.rows() != d {
            return Err(BackendError::DimensionMismatch("covariance vs mean".into()));
        }
        let b = to_dmatrix(&model.between_cov);
        let w = to_dmatrix(&model.within_cov);
        let tot = &b + &w;
        let tot_chol = cholesky_or_err(&tot, "between + within")?;
        let tot_inv = tot_chol.inverse();
        // Schur complement of the same-speaker joint covariance
        let schur = &tot - &b * &tot_inv * &b;
        let schur_chol = cholesky_or_err(&schur, "total - B tot^-1 B")?;
        let f = schur_chol.inverse();
        let mut q = &tot_inv - &f;
        symmetrize(&mut q);
        let mut p = &f * &b * &tot_inv;
        symmetrize(&mut p);
        let constant = 0.5 * (ln_det(&tot_chol) - ln_det(&schur_chol));
        Ok(PldaScorer { mu: model.mu.clone(), q: to_mat(&q), p: to_mat(&p), constant })
    }

    fn quad(m: &Mat, a: &[f64], b: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..m.rows() {
            let row = m.row(i);
            let mut s = 0.0;
            for (r, bv) in row.iter().zip(b) {
                s += r * bv;
            }
            total += a[i] * s;
        }
        total
    }

    pub fn score_pair(&self, enroll: &[f64], test: &[f64]) -> f64 {
        let ze: Vec<f64> = enroll.iter().zip(&self.mu).map(|(x, m)| x - m).collect();
        let zt: Vec<f64> = test.iter().zip(&self.mu).map(|(x, m)| x - m).collect();
        0.5 * Self::quad(&self.q, &ze, &ze) + 0.5 * Self::quad(&self.q, &zt, &zt)
            + Self::quad(&self.p, &ze, &zt)
            + self.constant
    }
}

/// Score every trial against one embedding archive.
pub fn score_plda(
    model: &PldaModel,
    trials: &TrialList,
    embeddings: &EmbeddingArchive,
) -> Result<ScoreSet, BackendError> {
    if embeddings.dim() != model.mu.len() {
        return Err(BackendError::DimensionMismatch(format!(
            "archive dim {} vs model dim {}",
            embeddings.dim(),
            model.mu.len()
        )));
    }
    let scorer = PldaScorer::new(model)?;
    let mut out = ScoreSet::default();
    for t in &trials.trials {
        let e = embeddings
            .get(&t.enroll)
            .ok_or_else(|| crate::dataio::DataError::MissingId { id: t.enroll.clone() })?;
        let x = embeddings
            .get(&t.test)
            .ok_or_else(|| crate::dataio::DataError::MissingId { id: t.test.clone() })?;
        out.trials.push(ScoredTrial {
            enroll: t.enroll.clone(),
            test: t.test.clone(),
            is_target: t.is_target,
            score: scorer.score_pair(e, x),
        });
    }
    Ok(out)
}

/// Draw a corpus from a two-covariance model: one speaker offset per speaker,
/// one residual per utterance. The returned labels carry only `speaker`.
pub fn sample_plda_corpus(
    model: &PldaModel,
    n_speakers: usize,
    utts_per_speaker: usize,
    seed: u64,
) -> Result<(EmbeddingArchive, LabelTable), BackendError> {
    let d = model.mu.len();
    let b_chol = cholesky_or_err(&to_dmatrix(&model.between_cov), "between covariance")?;
    let w_chol = cholesky_or_err(&to_dmatrix(&model.within_cov), "within covariance")?;
    let lb = b_chol.l();
    let lw = w_chol.l();
    let mut archive = EmbeddingArchive::new(d);
    let mut labels = LabelTable::new(&["speaker".to_string()]).unwrap();
    let mut rng = rng::stream(seed, "plda-sample", 0);
    let draw = |l: &DMatrix<f64>, rng: &mut rand_chacha::ChaCha8Rng| -> DVector<f64> {
        let g = DVector::from_fn(d, |_, _| rng::standard_normal(rng));
        l * g
    };
    for s in 0..n_speakers {
        let y = draw(&lb, &mut rng);
        for u in 0..utts_per_speaker {
            let e = draw(&lw, &mut rng);
            let x: Vec<f64> =
                (0..d).map(|j| model.mu[j] + y[j] + e[j]).collect();
            let id = format!("s{s:04}-u{u:04}");
            archive.push(&id, &x)?;
            labels.push_row(&id, &[format!("s{s:04}")]).unwrap();
        }
    }
    Ok((archive, labels))
}
