//! Linear discriminant analysis via the generalized symmetric eigenproblem
//! `S_b v = lambda S_w v`, solved by Cholesky whitening of the within-class
//! scatter.

use nalgebra::{DMatrix, DVector};

use crate::dataio::{EmbeddingArchive, LabelTable};
use crate::linalg::Mat;

use super::BackendError;

/// Mean-centering projection fitted on speaker-labelled embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct LdaModel {
    pub mean: Vec<f64>,
    /// `d_out x D`, rows ordered by decreasing generalized eigenvalue, unit
    /// norm with a deterministic sign convention.
    pub projection: Mat,
}

struct Scatters {
    mean: DVector<f64>,
    within: DMatrix<f64>,
    between: DMatrix<f64>,
    n_classes: usize,
}

fn scatter_matrices(
    embeddings: &EmbeddingArchive,
    labels: &LabelTable,
) -> Result<Scatters, BackendError> {
    let d = embeddings.dim();
    let n = embeddings.len();
    if n == 0 {
        return Err(BackendError::InsufficientData("empty archive".into()));
    }
    let mut class_of = Vec::with_capacity(n);
    let mut classes: Vec<String> = Vec::new();
    for (id, _) in embeddings.iter() {
        let speaker = labels.label(id, "speaker")?;
        let idx = match classes.iter().position(|c| c == speaker) {
            Some(i) => i,
            None => {
                classes.push(speaker.to_string());
                classes.len() - 1
            }
        };
        class_of.push(idx);
    }
    let n_classes = classes.len();
    if n_classes < 2 {
        return Err(BackendError::InsufficientData("need at least 2 speakers".into()));
    }
    let mut counts = vec![0usize; n_classes];
    for &c in &class_of {
        counts[c] += 1;
    }
    if let Some(i) = counts.iter().position(|&c| c < 2) {
        return Err(BackendError::InsufficientData(format!(
            "speaker {:?} has fewer than 2 utterances",
            classes[i]
        )));
    }

    let mut mean = DVector::<f64>::zeros(d);
    let mut class_means = vec![DVector::<f64>::zeros(d); n_classes];
    for (i, (_, v)) in embeddings.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            mean[j] += x;
            class_means[class_of[i]][j] += x;
        }
    }
    mean /= n as f64;
    for (cm, &count) in class_means.iter_mut().zip(&counts) {
        *cm /= count as f64;
    }

    let mut within = DMatrix::<f64>::zeros(d, d);
    let mut centered = DVector::<f64>::zeros(d);
    for (i, (_, v)) in embeddings.iter().enumerate() {
        let cm = &class_means[class_of[i]];
        for j in 0..d {
            centered[j] = v[j] - cm[j];
        }
        within.syger(1.0, &centered, &centered, 1.0);
    }
    within /= n as f64;
    let mut between = DMatrix::<f64>::zeros(d, d);
    for (cm, &count) in class_means.iter().zip(&counts) {
        let diff = cm - &mean;
        between.syger(count as f64, &diff, &diff, 1.0);
    }
    between /= n as f64;
    // syger fills the lower triangle only
    for m in [&mut within, &mut between] {
        for i in 0..d {
            for j in i + 1..d {
                m[(i, j)] = m[(j, i)];
            }
        }
    }
    Ok(Scatters { mean, within, between, n_classes })
}

/// Fit an LDA projection to `d_out` dimensions; requires at least 2 speakers
/// with 2 utterances each and `d_out <= min(dim, n_speakers - 1)`. The
/// within-class scatter is ridged by `1e-6 * trace / D` before whitening.
pub fn fit_lda(
    embeddings: &EmbeddingArchive,
    labels: &LabelTable,
    d_out: usize,
) -> Result<LdaModel, BackendError> {
    let d = embeddings.dim();
    let s = scatter_matrices(embeddings, labels)?;
    if d_out == 0 || d_out > d.min(s.n_classes - 1) {
        return Err(BackendError::InsufficientData(format!(
            "d_out {} must be in 1..=min(dim {}, speakers-1 {})",
            d_out,
            d,
            s.n_classes - 1
        )));
    }
    let mut within = s.within.clone();
    let ridge = 1e-6 * within.trace() / d as f64;
    for i in 0..d {
        within[(i, i)] += ridge;
    }
    let chol = within
        .cholesky()
        .ok_or_else(|| BackendError::Singular("within-class scatter (after ridge)".into()))?;
    let l = chol.l();
    // M = L^-1 S_b L^-T, symmetric
    let t1 = l
        .solve_lower_triangular(&s.between)
        .ok_or_else(|| BackendError::Singular("triangular solve".into()))?;
    let mut m = l
        .solve_lower_triangular(&t1.transpose())
        .ok_or_else(|| BackendError::Singular("triangular solve".into()))?;
    // symmetrize against roundoff
    let mt = m.transpose();
    m = (&m + &mt) * 0.5;

    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let lt = l.transpose();
    let mut projection = Mat::zeros(d_out, d);
    for (row, &ei) in order[..d_out].iter().enumerate() {
        let u = eig.eigenvectors.column(ei).into_owned();
        let v = lt
            .solve_upper_triangular(&u)
            .ok_or_else(|| BackendError::Singular("back-substitution".into()))?;
        let norm = v.norm();
        if norm < 1e-300 {
            return Err(BackendError::Singular("zero eigenvector".into()));
        }
        // deterministic sign: largest-magnitude component positive
        let mut lead = 0;
        for i in 0..d {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            projection.set(row, i, sign * v[i] / norm);
        }
    }
    Ok(LdaModel { mean: s.mean.iter().cloned().collect(), projection })
}

/// Apply `projection * (x - mean)` to every entry; order preserved.
pub fn project_lda(
    model: &LdaModel,
    embeddings: &EmbeddingArchive,
) -> Result<EmbeddingArchive, BackendError> {
    if embeddings.dim() != model.mean.len() {
        return Err(BackendError::DimensionMismatch(format!(
            "archive dim {} vs model dim {}",
            embeddings.dim(),
            model.mean.len()
        )));
    }
    let d_out = model.projection.rows();
    let mut out = EmbeddingArchive::new(d_out);
    let mut centered = vec![0.0; model.mean.len()];
    for (id, v) in embeddings.iter() {
        for (c, (x, m)) in centered.iter_mut().zip(v.iter().zip(&model.mean)) {
            *c = x - m;
        }
        let projected: Vec<f64> = (0..d_out)
            .map(|r| {
                model
                    .projection
                    .row(r)
                    .iter()
                    .zip(&centered)
                    .map(|(p, c)| p * c)
                    .sum()
            })
            .collect();
        out.push(id, &projected).expect("ids unique");
    }
    Ok(out)
}

/// Fisher objective `tr((P S_w P^T)^-1 (P S_b P^T))` of a projection on
/// labelled data; invariant under invertible recombinations of the rows of
/// `P`, which makes it the right yardstick for comparing fitted projections.
pub fn fisher_objective(
    embeddings: &EmbeddingArchive,
    labels: &LabelTable,
    projection: &Mat,
) -> Result<f64, BackendError> {
    let s = scatter_matrices(embeddings, labels)?;
    let d = embeddings.dim();
    if projection.cols() != d {
        return Err(BackendError::DimensionMismatch(format!(
            "projection has {} columns, data dim is {d}",
            projection.cols()
        )));
    }
    let p = DMatrix::from_fn(projection.rows(), d, |i, j| projection.get(i, j));
    let pw = &p * &s.within * p.transpose();
    let pb = &p * &s.between * p.transpose();
    let inv = pw
        .try_inverse()
        .ok_or_else(|| BackendError::Singular("projected within-class scatter".into()))?;
    Ok((inv * pb).trace())
}
