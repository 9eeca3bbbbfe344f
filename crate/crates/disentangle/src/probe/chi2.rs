//! Pearson chi-squared test of independence on a contingency table.
//!
//! The p-value is the regularized upper incomplete gamma Q(dof/2, stat/2),
//! evaluated with the classic series / continued-fraction pair to ~1e-12 so
//! no external special-function library is needed.

use serde::{Deserialize, Serialize};

use crate::dataio::LabelTable;

use super::ProbeError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chi2Result {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub reject_at_alpha: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_classes: Vec<String>,
    pub col_classes: Vec<String>,
}

/// Lanczos approximation (g = 7, 9 terms), accurate to ~1e-15 for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        a += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x) by series expansion; valid and
/// fast for x < a + 1.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..1000 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * 1e-15 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by Lentz continued fraction;
/// valid and fast for x >= a + 1.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_q domain: a={a}, x={x}");
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        (1.0 - gamma_p_series(a, x)).clamp(0.0, 1.0)
    } else {
        gamma_q_cf(a, x).clamp(0.0, 1.0)
    }
}

/// Pearson chi-squared independence test on an R x C counts table.
/// Requires R, C >= 2 and strictly positive row and column sums.
pub fn chi_squared_independence(
    counts: &[Vec<u64>],
    alpha: f64,
) -> Result<Chi2Result, ProbeError> {
    let r = counts.len();
    let c = counts.first().map_or(0, Vec::len);
    if r < 2 || c < 2 {
        return Err(ProbeError::BadTable(format!("table is {r}x{c}, need at least 2x2")));
    }
    if counts.iter().any(|row| row.len() != c) {
        return Err(ProbeError::BadTable("ragged rows".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ProbeError::BadTable(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let row_sums: Vec<f64> = counts.iter().map(|row| row.iter().sum::<u64>() as f64).collect();
    let col_sums: Vec<f64> =
        (0..c).map(|j| counts.iter().map(|row| row[j]).sum::<u64>() as f64).collect();
    if let Some(i) = row_sums.iter().position(|&s| s == 0.0) {
        return Err(ProbeError::BadTable(format!("row {i} sums to zero")));
    }
    if let Some(j) = col_sums.iter().position(|&s| s == 0.0) {
        return Err(ProbeError::BadTable(format!("column {j} sums to zero")));
    }
    let total: f64 = row_sums.iter().sum();

    let mut statistic = 0.0;
    for i in 0..r {
        for j in 0..c {
            let expected = row_sums[i] * col_sums[j] / total;
            let diff = counts[i][j] as f64 - expected;
            statistic += diff * diff / expected;
        }
    }
    let dof = (r - 1) * (c - 1);
    let p_value = gamma_q(dof as f64 / 2.0, statistic / 2.0);
    Ok(Chi2Result { statistic, dof, p_value, alpha, reject_at_alpha: p_value < alpha })
}

/// Cross-tabulate two factors over `ids`; classes ordered lexicographically.
/// Degenerate (single-row/column) tables are returned as data; the test
/// itself rejects them.
pub fn build_contingency(
    labels: &LabelTable,
    factor_a: &str,
    factor_b: &str,
    ids: &[String],
) -> Result<ContingencyTable, ProbeError> {
    let row_classes = labels.classes(factor_a, Some(ids))?;
    let col_classes = labels.classes(factor_b, Some(ids))?;
    let mut counts = vec![vec![0u64; col_classes.len()]; row_classes.len()];
    for id in ids {
        let la = labels.label(id, factor_a)?;
        let lb = labels.label(id, factor_b)?;
        let i = row_classes.iter().position(|c| c == la).expect("class listed");
        let j = col_classes.iter().position(|c| c == lb).expect("class listed");
        counts[i][j] += 1;
    }
    Ok(ContingencyTable { counts, row_classes, col_classes })
}
