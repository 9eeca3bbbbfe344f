//! Detection error tradeoff: sweep a decision threshold over the observed
//! scores, record (false-positive rate, false-negative rate) operating
//! points, and read the equal error rate off the fpr = fnr crossing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendError, ScoreSet};

/// Monotone staircase of (fpr, fnr) points with the derived EER. Points run
/// from (0, 1) to (1, 0): fpr non-decreasing, fnr non-increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct DetCurve {
    pub points: Vec<(f64, f64)>,
    pub eer: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetSummary {
    pub eer: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// Accept-if-score-at-least-threshold convention; thresholds sweep the
/// observed score values from above the maximum down to below the minimum.
pub fn compute_det(scores: &ScoreSet) -> Result<DetCurve, BackendError> {
    let mut targets = scores.target_scores();
    let mut nontargets = scores.nontarget_scores();
    if targets.is_empty() || nontargets.is_empty() {
        return Err(BackendError::BadScores(
            "need at least one target and one nontarget trial".into(),
        ));
    }
    targets.sort_by(f64::total_cmp);
    nontargets.sort_by(f64::total_cmp);
    let (nt, nn) = (targets.len() as f64, nontargets.len() as f64);

    let mut thresholds: Vec<f64> = targets.iter().chain(nontargets.iter()).cloned().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut points = vec![(0.0, 1.0)];
    for &threshold in thresholds.iter().rev() {
        // accepted iff score >= threshold
        let below = |sorted: &[f64]| sorted.partition_point(|&s| s < threshold);
        let fnr = below(&targets) as f64 / nt;
        let fpr = (nontargets.len() - below(&nontargets)) as f64 / nn;
        if points.last() != Some(&(fpr, fnr)) {
            points.push((fpr, fnr));
        }
    }
    if points.last() != Some(&(1.0, 0.0)) {
        points.push((1.0, 0.0));
    }
    debug_assert!(points.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 <= w[0].1));

    let eer = crossing(&points);
    Ok(DetCurve { points, eer })
}

/// Linear interpolation of the fpr = fnr crossing along the staircase.
fn crossing(points: &[(f64, f64)]) -> f64 {
    for (i, &(fpr, fnr)) in points.iter().enumerate() {
        if fpr == fnr {
            return fpr;
        }
        if fnr < fpr {
            // the sign of fnr - fpr flipped between i-1 and i
            let (f1, m1) = points[i - 1];
            let (f2, m2) = (fpr, fnr);
            let denom = (f2 - f1) - (m2 - m1);
            if denom.abs() < 1e-300 {
                return (f1 + m1) / 2.0;
            }
            let t = (m1 - f1) / denom;
            return f1 + t * (f2 - f1);
        }
    }
    // fnr > fpr throughout can only happen before the final (1, 0) point,
    // so the loop always returns; keep a defined value anyway
    1.0
}

/// EER difference `a - b`, the absolute-improvement measure for comparing two
/// systems.
pub fn eer_delta(a: &DetCurve, b: &DetCurve) -> f64 {
    a.eer - b.eer
}

impl DetCurve {
    /// CSV with header `fpr,fnr`, one operating point per line.
    pub fn save_csv(&self, path: &Path) -> Result<(), BackendError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "fpr,fnr")?;
        for (fpr, fnr) in &self.points {
            writeln!(w, "{fpr},{fnr}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self, scores: &ScoreSet) -> DetSummary {
        DetSummary {
            eer: self.eer,
            n_target: scores.n_target(),
            n_nontarget: scores.n_nontarget(),
        }
    }
}
