//! Evaluation reports: Q-error summary statistics, join-order quality,
//! cost-improvement tables, bootstrap confidence intervals and config
//! hashing for provenance.

use crate::error::{Error, Result};
use crate::schema_gen::sub_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Median / max / mean summary of a Q-error sample.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct QErrorStats {
    pub median: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

impl QErrorStats {
    pub fn from_samples(samples: &[f64]) -> Result<QErrorStats> {
        if samples.is_empty() {
            return Err(Error::Domain("no samples".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Ok(QErrorStats {
            median,
            max: sorted[n - 1],
            mean: sorted.iter().sum::<f64>() / n as f64,
            count: n,
        })
    }
}

/// Full evaluation of a model on a labeled workload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub q_card: QErrorStats,
    pub q_cost: QErrorStats,
    pub mean_joeu: f64,
    pub legality_rate: f64,
    pub total_cost_model: f64,
    pub total_cost_greedy: f64,
    pub total_cost_optimal: f64,
    /// `(greedy − model) / greedy`.
    pub improvement_ratio: f64,
    /// `(greedy − optimal) / greedy`: the upper bound achievable.
    pub optimal_improvement_ratio: f64,
    pub queries: usize,
}

/// 95% bootstrap confidence interval for the mean of a sample.
pub fn bootstrap_mean_ci(samples: &[f64], iters: usize, seed: u64) -> Result<(f64, f64)> {
    if samples.is_empty() || iters == 0 {
        return Err(Error::Domain("empty bootstrap input".into()));
    }
    let mut rng = sub_rng(seed, &[40]);
    let n = samples.len();
    let mut means = Vec::with_capacity(iters);
    for _ in 0..iters {
        let s: f64 = (0..n).map(|_| samples[rng.random_range(0..n)]).sum();
        means.push(s / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let lo = means[(iters as f64 * 0.025) as usize];
    let hi = means[((iters as f64 * 0.975) as usize).min(iters - 1)];
    Ok((lo, hi))
}

/// Hex SHA-256 of raw config bytes, stamped onto reports.
pub fn config_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Human-readable table in "median & max & mean" column layout.
pub fn render_eval(report: &EvalReport, config_hash: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!("config: {config_hash}\n"));
    s.push_str(&format!("queries: {}\n\n", report.queries));
    s.push_str("metric          median        max       mean\n");
    for (name, q) in [("card q-error", &report.q_card), ("cost q-error", &report.q_cost)] {
        s.push_str(&format!(
            "{name:<14} {:>8.3} {:>10.3} {:>10.3}\n",
            q.median, q.max, q.mean
        ));
    }
    s.push_str(&format!("\nmean JOEU        {:.4}\n", report.mean_joeu));
    s.push_str(&format!("legality rate    {:.4}\n", report.legality_rate));
    s.push_str("\ncost (oracle model)      total    improvement\n");
    s.push_str(&format!(
        "model            {:>14.1}   {:>8.3}\n",
        report.total_cost_model, report.improvement_ratio
    ));
    s.push_str(&format!(
        "greedy baseline  {:>14.1}   {:>8.3}\n",
        report.total_cost_greedy, 0.0
    ));
    s.push_str(&format!(
        "optimal          {:>14.1}   {:>8.3}\n",
        report.total_cost_optimal, report.optimal_improvement_ratio
    ));
    s
}
