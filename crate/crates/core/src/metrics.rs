//! Prediction error metrics.
//!
//! Pooled metrics run over every predicted coordinate of every trajectory.
//! R² uses `SS_tot` about the per-coordinate mean of the pooled ground truth.
//! Partial sums are combined in sorted order, so the pooled values do not
//! depend on the order of the trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const R2_CONVENTION: &str =
    "pooled over trajectories and time; SS_tot about the per-coordinate mean of the pooled ground truth";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    pub per_trajectory: Vec<Scores>,
}

impl Metrics {
    pub fn scores(&self) -> Scores {
        Scores {
            mse: self.mse,
            mae: self.mae,
            rmse: self.rmse,
            r2: self.r2,
        }
    }
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

fn r2(ss_res: f64, ss_tot: f64) -> f64 {
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Per-trajectory predictions against ground truth, each a sequence of state
/// vectors of equal shape.
pub fn compute_metrics(predicted: &[Vec<Vec<f64>>], truth: &[Vec<Vec<f64>>]) -> Result<Metrics> {
    check_dim("metrics trajectories", truth.len(), predicted.len())?;
    if truth.is_empty() || truth[0].is_empty() || truth[0][0].is_empty() {
        return Err(Error::invalid("metrics", "need at least one predicted value"));
    }
    let n = truth[0][0].len();
    for (p, t) in predicted.iter().zip(truth) {
        check_dim("metrics points", t.len(), p.len())?;
        for (a, b) in p.iter().zip(t) {
            check_dim("metrics state", n, b.len())?;
            check_dim("metrics state", n, a.len())?;
        }
    }

    let counts: Vec<usize> = truth.iter().map(|t| t.len() * n).collect();
    let total = counts.iter().sum::<usize>() as f64;
    let points = truth.iter().map(Vec::len).sum::<usize>() as f64;

    // per-coordinate pooled means
    let means: Vec<f64> = (0..n)
        .map(|i| sorted_sum(truth.iter().map(|t| t.iter().map(|v| v[i]).sum()).collect()) / points)
        .collect();

    let mut sq = Vec::with_capacity(truth.len());
    let mut abs = Vec::with_capacity(truth.len());
    let mut tot = Vec::with_capacity(truth.len());
    let mut per_trajectory = Vec::with_capacity(truth.len());
    for ((p, t), &count) in predicted.iter().zip(truth).zip(&counts) {
        let (mut s, mut a, mut d) = (0.0, 0.0, 0.0);
        let local: Vec<f64> = (0..n)
            .map(|i| t.iter().map(|v| v[i]).sum::<f64>() / t.len() as f64)
            .collect();
        let mut local_tot = 0.0;
        for (pv, tv) in p.iter().zip(t) {
            for i in 0..n {
                let e = pv[i] - tv[i];
                s += e * e;
                a += e.abs();
                d += (tv[i] - means[i]) * (tv[i] - means[i]);
                local_tot += (tv[i] - local[i]) * (tv[i] - local[i]);
            }
        }
        let mse = s / count as f64;
        per_trajectory.push(Scores {
            mse,
            mae: a / count as f64,
            rmse: mse.sqrt(),
            r2: r2(s, local_tot),
        });
        sq.push(s);
        abs.push(a);
        tot.push(d);
    }
    let ss_res = sorted_sum(sq);
    let mse = ss_res / total;
    Ok(Metrics {
        mse,
        mae: sorted_sum(abs) / total,
        rmse: mse.sqrt(),
        r2: r2(ss_res, sorted_sum(tot)),
        per_trajectory,
    })
}

/// Median of finite-or-infinite values; NaN entries are ignored.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}
