//! Cross-seed aggregation and the summary JSON written next to the traces.

use std::collections::BTreeMap;
use std::path::PathBuf;

use gradorder_core::metrics::ConvergenceReport;
use serde::{Deserialize, Serialize};

use crate::config::Mode;

/// Per-epoch min/median/max of one column across seeds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub min: Vec<f64>,
    pub median: Vec<f64>,
    pub max: Vec<f64>,
}

/// Median with the midpoint rule for even counts. Empty input gives NaN.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Column-wise band over equally long series. Series of other lengths are
/// cut to the shortest.
pub fn band(series: &[Vec<f64>]) -> Band {
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    let mut b = Band::default();
    for q in 0..len {
        let col: Vec<f64> = series.iter().map(|s| s[q]).collect();
        b.min.push(col.iter().copied().fold(f64::INFINITY, f64::min));
        b.max.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        b.median.push(median(&col));
    }
    b
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // Tied values share the average of their positions.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or fewer than two points are given.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged { epoch: usize },
    Failed { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub orderer: String,
    pub seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    /// Trace CSV, relative to the artifact directory.
    pub trace_file: Option<PathBuf>,
    pub ensemble_file: PathBuf,
    pub final_dist_to_opt: Option<f64>,
    pub final_order_error_2: Option<f64>,
    /// FL runs report the block order error here.
    pub final_order_error_inf: Option<f64>,
    pub min_grad_norm_sq: Option<f64>,
    /// Signed herding error of the configured balancer on the final centered
    /// gradients, relative to their largest ∞-norm (GraB family only).
    pub effective_c: Option<f64>,
    pub reports: Vec<ConvergenceReport>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdererSummary {
    pub orderer: String,
    pub runs: Vec<RunRecord>,
    /// Column name to per-epoch band over the non-diverged runs.
    pub epochs: BTreeMap<String, Band>,
    pub median_final_dist_to_opt: Option<f64>,
    pub median_final_order_error_inf: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub gamma: f64,
    pub gamma_rule: String,
    pub epochs: usize,
    pub n: usize,
    pub d: usize,
    pub x0: Vec<f64>,
    pub seeds: Vec<u64>,
    pub ensemble_seed: u64,
    pub resample_ensemble: bool,
    pub orderers: Vec<OrdererSummary>,
    /// Rank correlation of per-orderer median final order error (∞-norm)
    /// against median final distance to the optimum.
    pub spearman_order_error_vs_dist: Option<f64>,
    /// Deterministic recursion specs that failed somewhere, as
    /// `orderer/seed/spec`.
    pub deterministic_violations: Vec<String>,
}

impl Summary {
    pub fn orderer(&self, name: &str) -> Option<&OrdererSummary> {
        self.orderers.iter().find(|o| o.orderer == name)
    }

    pub fn total_runs(&self) -> usize {
        self.orderers.iter().map(|o| o.runs.len()).sum()
    }

    pub fn diverged_runs(&self) -> usize {
        self.orderers
            .iter()
            .flat_map(|o| &o.runs)
            .filter(|r| !r.is_ok())
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn single_series_band_collapses() {
        let b = band(&[vec![1.0, 2.0]]);
        assert_eq!(b.min, b.median);
        assert_eq!(b.max, b.median);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!(r > 0.9 && r < 1.0);
    }

    proptest! {
        #[test]
        fn band_is_ordered(series in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 5), 1..12)) {
            let b = band(&series);
            for q in 0..5 {
                prop_assert!(b.min[q] <= b.median[q] && b.median[q] <= b.max[q]);
            }
        }
    }
}
