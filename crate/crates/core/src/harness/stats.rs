use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W−)`.
    pub statistic: f64,
    /// Exact two-sided p-value from the sign-flip distribution.
    pub p_value: f64,
}

/// Average ranks (1-based) of `values`.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Exact Wilcoxon signed-rank test on paired samples.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::InsufficientData(
            "every paired difference is zero; the test is undefined".into(),
        ));
    }
    let r = ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs.iter().zip(&r).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total: f64 = r.iter().sum();
    let w_minus = total - w_plus;

    // Ranks are multiples of 1/2; count sign assignments over doubled sums.
    let doubled: Vec<usize> = r.iter().map(|x| (x * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max_sum + 1];
    counts[0] = 1.0;
    for &d in &doubled {
        for s in (d..=max_sum).rev() {
            counts[s] += counts[s - d];
        }
    }
    let n_assign = 2f64.powi(diffs.len() as i32);
    let observed = (w_plus * 2.0).round() as usize;
    let lower: f64 = counts[..=observed].iter().sum::<f64>() / n_assign;
    let upper: f64 = counts[observed..].iter().sum::<f64>() / n_assign;
    Ok(WilcoxonResult {
        n: diffs.len(),
        w_plus,
        w_minus,
        statistic: w_plus.min(w_minus),
        p_value: (2.0 * lower.min(upper)).min(1.0),
    })
}
