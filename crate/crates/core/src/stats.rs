//! Small statistical toolkit for the evaluation protocol: paired t-tests on
//! per-subject metrics and seeded k-fold splits for cross-validation.

use crate::error::{Error, Result};
use crate::rng::rng_from;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    /// Two-sided p-value.
    pub p: f64,
}

/// Two-sided paired t-test. `a` and `b` are paired observations; the test is
/// on the mean of `a - b` with n-1 degrees of freedom.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "paired_ttest: sample sizes differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::config("paired_ttest: need at least two pairs".to_string()));
    }
    let d: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("paired_ttest: non-finite difference".to_string()));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let ss: f64 = d.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss == 0.0 {
        return Err(Error::numeric(
            "paired_ttest: differences are all identical (zero variance)".to_string(),
        ));
    }
    let sd = (ss / (n - 1) as f64).sqrt();
    let t = mean / (sd / (n as f64).sqrt());
    let df = n - 1;
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::numeric(format!("t-distribution(df = {df}): {e}")))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTestResult { t, df, p })
}

/// Seeded k-fold partition. Returns `(train_ids, val_ids)` per fold; folds
/// are disjoint, their union is the input, and sizes differ by at most one
/// (the first `n % k` folds take the extra member).
pub fn kfold_split(ids: &[String], k: usize, seed: u64) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    if k < 2 {
        return Err(Error::config(format!("kfold_split: k must be at least 2, got {k}")));
    }
    if k > ids.len() {
        return Err(Error::config(format!(
            "kfold_split: k = {k} exceeds {} subjects",
            ids.len()
        )));
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for id in ids {
            if !seen.insert(id) {
                return Err(Error::config(format!("kfold_split: duplicate id '{id}'")));
            }
        }
    }
    let mut order: Vec<&String> = ids.iter().collect();
    order.shuffle(&mut rng_from(seed));

    let n = ids.len();
    let base = n / k;
    let extra = n % k;
    let mut folds: Vec<Vec<String>> = Vec::with_capacity(k);
    let mut cursor = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[cursor..cursor + size].iter().map(|s| (*s).clone()).collect());
        cursor += size;
    }
    let out = (0..k)
        .map(|f| {
            let val = folds[f].clone();
            let train: Vec<String> = folds
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != f)
                .flat_map(|(_, ids)| ids.iter().cloned())
                .collect();
            (train, val)
        })
        .collect();
    Ok(out)
}
