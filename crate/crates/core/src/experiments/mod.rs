//! Config-driven Monte Carlo experiments with CSV and JSON outputs.
//!
//! Every trial seed is derived from `(master seed, experiment id, n, trial)`,
//! trials run in parallel and are gathered in `(n, trial)` order, so outputs
//! are byte-identical across reruns unless wall times are recorded.

mod config;
mod output;
mod runner;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, ExperimentKind, MaxOrderRule, ModelSource, NGrid};
pub use output::{write_outputs, Manifest};
pub use runner::{
    run_dbar_pipeline_experiment, run_divergence_experiment, run_entropy_deviation_experiment, run_experiment,
    run_oracle_ratio_experiment,
};

/// One row of `trials.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub experiment: String,
    pub model: String,
    pub criterion: String,
    pub penalty: String,
    pub n: usize,
    pub trial: usize,
    pub k_hat: Option<usize>,
    pub score_min: Option<f64>,
    pub runtime_ms: u64,
    /// Kind-specific value: order ratio, maximal entropy deviation, or d̄.
    pub value: Option<f64>,
}

/// One row of `aggregates.csv`, for a `(criterion, n)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub experiment: String,
    pub criterion: String,
    pub penalty: String,
    pub n: usize,
    #[serde(flatten)]
    pub stats: CellStats,
    /// Oracle order, deviation threshold, or d̄ threshold.
    pub reference: Option<f64>,
    /// Theoretical probability bound at this `n`.
    pub theory: Option<f64>,
    pub flag: String,
}

/// Statistics computed from the trial rows of one cell only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub trials: usize,
    pub mean_k_hat: Option<f64>,
    pub sd_k_hat: Option<f64>,
    pub q05_k_hat: Option<usize>,
    pub median_k_hat: Option<usize>,
    pub q95_k_hat: Option<usize>,
    /// Fraction with `k̂` above the true order.
    pub prob_over: Option<f64>,
    /// Fraction with `k̂` below the true order.
    pub prob_under: Option<f64>,
    pub mean_value: Option<f64>,
    pub sd_value: Option<f64>,
    pub event_freq: Option<f64>,
}

/// Per-trial event counted in [`CellStats::event_freq`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventRule {
    None,
    /// `|value - 1| ≤ tol`.
    NearOne(f64),
    /// `value > threshold`.
    Exceeds(f64),
}

/// Least-squares fit of mean `k̂` against `log₂ n`, with a percentile
/// bootstrap interval from resampling trials within each `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub criterion: String,
    pub slope: f64,
    pub intercept: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub points: usize,
}

/// A `(criterion, n)` cell that produced no rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub criterion: String,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub id: String,
    pub kind: ExperimentKind,
    pub model: String,
    pub true_order: Option<usize>,
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
    pub slopes: Vec<SlopeFit>,
    pub skipped: Vec<SkippedCell>,
    pub notes: Vec<String>,
}

impl ExperimentResult {
    pub fn aggregate(&self, criterion: &str, n: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.criterion == criterion && a.n == n)
    }

    pub fn slope(&self, criterion: &str) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.criterion == criterion)
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Nearest-rank quantile of sorted values.
fn quantile(sorted: &[usize], p: f64) -> usize {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Statistics of one cell's rows, in row order.
pub fn summarize(records: &[TrialRecord], true_order: Option<usize>, event: EventRule) -> CellStats {
    let m = records.len();
    let ks: Vec<usize> = records.iter().filter_map(|r| r.k_hat).collect();
    let values: Vec<f64> = records.iter().filter_map(|r| r.value).collect();
    let mut stats = CellStats {
        trials: m,
        mean_k_hat: None,
        sd_k_hat: None,
        q05_k_hat: None,
        median_k_hat: None,
        q95_k_hat: None,
        prob_over: None,
        prob_under: None,
        mean_value: None,
        sd_value: None,
        event_freq: None,
    };
    if !ks.is_empty() {
        let kf: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
        let (mean, sd) = mean_sd(&kf);
        let mut sorted = ks.clone();
        sorted.sort_unstable();
        stats.mean_k_hat = Some(mean);
        stats.sd_k_hat = Some(sd);
        stats.q05_k_hat = Some(quantile(&sorted, 0.05));
        stats.median_k_hat = Some(quantile(&sorted, 0.5));
        stats.q95_k_hat = Some(quantile(&sorted, 0.95));
        if let Some(k0) = true_order {
            stats.prob_over = Some(ks.iter().filter(|&&k| k > k0).count() as f64 / ks.len() as f64);
            stats.prob_under = Some(ks.iter().filter(|&&k| k < k0).count() as f64 / ks.len() as f64);
        }
    }
    if !values.is_empty() {
        let (mean, sd) = mean_sd(&values);
        stats.mean_value = Some(mean);
        stats.sd_value = Some(sd);
        let hits = match event {
            EventRule::None => None,
            EventRule::NearOne(tol) => Some(values.iter().filter(|v| (*v - 1.0).abs() <= tol).count()),
            EventRule::Exceeds(t) => Some(values.iter().filter(|&&v| v > t).count()),
        };
        stats.event_freq = hits.map(|h| h as f64 / values.len() as f64);
    }
    stats
}

/// `(slope, intercept)` of the least-squares line through `(x, y)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Slope fit over cells `(log₂ n, k̂ values)` with a 95% percentile
/// bootstrap interval.
pub fn fit_slope(criterion: &str, cells: &[(f64, Vec<f64>)], resamples: usize, seed: u64) -> Option<SlopeFit> {
    if cells.len() < 2 || cells.iter().any(|c| c.1.is_empty()) {
        return None;
    }
    let xs: Vec<f64> = cells.iter().map(|c| c.0).collect();
    let means: Vec<f64> = cells.iter().map(|c| mean_sd(&c.1).0).collect();
    let (slope, intercept) = least_squares(&xs, &means);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot = Vec::with_capacity(resamples);
    let mut ys = vec![0.0; cells.len()];
    for _ in 0..resamples {
        for (y, (_, ks)) in ys.iter_mut().zip(cells) {
            *y = (0..ks.len()).map(|_| ks[rng.random_range(0..ks.len())]).sum::<f64>() / ks.len() as f64;
        }
        boot.push(least_squares(&xs, &ys).0);
    }
    boot.sort_by(f64::total_cmp);
    let (ci_lo, ci_hi) = if boot.is_empty() {
        (slope, slope)
    } else {
        let at = |p: f64| boot[((p * boot.len() as f64).ceil() as usize).clamp(1, boot.len()) - 1];
        (at(0.025), at(0.975))
    };
    Some(SlopeFit {
        criterion: criterion.to_string(),
        slope,
        intercept,
        ci_lo,
        ci_hi,
        points: cells.len(),
    })
}
