//! Speaker-verification backend: LDA dimensionality reduction, a
//! two-covariance PLDA model trained by EM, trial scoring as a same/different
//! speaker log-likelihood ratio, and DET/EER metrics.

mod det;
mod lda;
mod plda;

pub use det::{compute_det, eer_delta, DetCurve, DetSummary};
pub use lda::{fisher_objective, fit_lda, project_lda, LdaModel};
pub use plda::{fit_plda, sample_plda_corpus, score_plda, PldaFit, PldaModel, PldaScorer};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::dataio::{DataError, EmbeddingArchive};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),
    #[error("invalid scores: {0}")]
    BadScores(String),
    #[error("{path}: line {line}: {detail}")]
    BadScoreLine { path: String, line: usize, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One scored trial.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTrial {
    pub enroll: String,
    pub test: String,
    pub is_target: bool,
    pub score: f64,
}

/// All trials of an evaluation with their scores attached.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub trials: Vec<ScoredTrial>,
}

impl ScoreSet {
    pub fn n_target(&self) -> usize {
        self.trials.iter().filter(|t| t.is_target).count()
    }

    pub fn n_nontarget(&self) -> usize {
        self.trials.len() - self.n_target()
    }

    pub fn target_scores(&self) -> Vec<f64> {
        self.trials.iter().filter(|t| t.is_target).map(|t| t.score).collect()
    }

    pub fn nontarget_scores(&self) -> Vec<f64> {
        self.trials.iter().filter(|t| !t.is_target).map(|t| t.score).collect()
    }
}

/// Score file: one line per trial, `<enroll> <test> <target|nontarget> <score>`.
pub fn save_scores(scores: &ScoreSet, path: &Path) -> Result<(), BackendError> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in &scores.trials {
        writeln!(
            w,
            "{} {} {} {}",
            t.enroll,
            t.test,
            if t.is_target { "target" } else { "nontarget" },
            t.score
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_scores(path: &Path) -> Result<ScoreSet, BackendError> {
    let path_str = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut set = ScoreSet::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| BackendError::BadScoreLine {
            path: path_str.clone(),
            line: i + 1,
            detail,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        }
        let is_target = match fields[2] {
            "target" => true,
            "nontarget" => false,
            other => return Err(err(format!("bad key {other:?}"))),
        };
        let score: f64 =
            fields[3].parse().map_err(|e| err(format!("bad score: {e}")))?;
        if !score.is_finite() {
            return Err(err("non-finite score".into()));
        }
        set.trials.push(ScoredTrial {
            enroll: fields[0].to_string(),
            test: fields[1].to_string(),
            is_target,
            score,
        });
    }
    Ok(set)
}

/// Project every vector onto the unit sphere. Optional preprocessing before
/// PLDA; vectors with near-zero norm are left unchanged.
pub fn length_normalize(archive: &EmbeddingArchive) -> EmbeddingArchive {
    let mut out = EmbeddingArchive::new(archive.dim());
    for (id, v) in archive.iter() {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            let scaled: Vec<f64> = v.iter().map(|x| x / norm).collect();
            out.push(id, &scaled).expect("ids unique");
        } else {
            out.push(id, v).expect("ids unique");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("disentangle-backend-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn score_file_round_trips() {
        let set = ScoreSet {
            trials: vec![
                ScoredTrial { enroll: "a".into(), test: "b".into(), is_target: true, score: 1.25 },
                ScoredTrial {
                    enroll: "a".into(),
                    test: "c".into(),
                    is_target: false,
                    score: -0.03125,
                },
            ],
        };
        let path = tmp("scores.txt");
        save_scores(&set, &path).unwrap();
        assert_eq!(load_scores(&path).unwrap(), set);
    }

    #[test]
    fn bad_score_line_reports_position() {
        let path = tmp("bad-scores.txt");
        std::fs::write(&path, "a b target 1.0\na c impostor 2.0\n").unwrap();
        match load_scores(&path).unwrap_err() {
            BackendError::BadScoreLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn length_normalization_yields_unit_norms() {
        let mut a = EmbeddingArchive::new(3);
        a.push("x", &[3.0, 0.0, 4.0]).unwrap();
        a.push("z", &[0.0, 0.0, 0.0]).unwrap();
        let n = length_normalize(&a);
        let v = n.get("x").unwrap();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(n.get("z").unwrap(), &[0.0, 0.0, 0.0]);
    }
}
