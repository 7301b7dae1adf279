use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ExperimentKind};
use super::{Aggregate, ExperimentResult, SkippedCell, SlopeFit};
use crate::error::{Error, Result};

/// `aggregates.csv` row; the csv writer cannot flatten nested structs.
#[derive(Serialize)]
struct AggregateRow<'a> {
    experiment: &'a str,
    criterion: &'a str,
    penalty: &'a str,
    n: usize,
    trials: usize,
    mean_k_hat: Option<f64>,
    sd_k_hat: Option<f64>,
    q05_k_hat: Option<usize>,
    median_k_hat: Option<usize>,
    q95_k_hat: Option<usize>,
    prob_over: Option<f64>,
    prob_under: Option<f64>,
    mean_value: Option<f64>,
    sd_value: Option<f64>,
    event_freq: Option<f64>,
    reference: Option<f64>,
    theory: Option<f64>,
    flag: &'a str,
}

impl<'a> From<&'a Aggregate> for AggregateRow<'a> {
    fn from(a: &'a Aggregate) -> Self {
        let s = &a.stats;
        AggregateRow {
            experiment: &a.experiment,
            criterion: &a.criterion,
            penalty: &a.penalty,
            n: a.n,
            trials: s.trials,
            mean_k_hat: s.mean_k_hat,
            sd_k_hat: s.sd_k_hat,
            q05_k_hat: s.q05_k_hat,
            median_k_hat: s.median_k_hat,
            q95_k_hat: s.q95_k_hat,
            prob_over: s.prob_over,
            prob_under: s.prob_under,
            mean_value: s.mean_value,
            sd_value: s.sd_value,
            event_freq: s.event_freq,
            reference: a.reference,
            theory: a.theory,
            flag: &a.flag,
        }
    }
}

#[derive(Serialize)]
struct PlotRow {
    x: f64,
    y: f64,
    y_lo: f64,
    y_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub package: String,
    pub version: String,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub kind: ExperimentKind,
    pub model: String,
    pub master_seed: u64,
    pub trials: usize,
    /// SHA-256 of the canonical JSON form of the config.
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub build: BuildInfo,
    /// SHA-256 per output file.
    pub files: BTreeMap<String, String>,
    pub skipped: Vec<SkippedCell>,
    pub slopes: Vec<SlopeFit>,
    pub notes: Vec<String>,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_stem(criterion: &str) -> String {
    criterion
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

/// Plot series per criterion: `x = log₂ n`, `y` the cell mean (order
/// estimate, ratio, event frequency or d̄) with a normal 95% band.
fn plot_rows(result: &ExperimentResult, criterion: &str) -> Vec<PlotRow> {
    result
        .aggregates
        .iter()
        .filter(|a| a.criterion == criterion)
        .filter_map(|a| {
            let s = &a.stats;
            let m = s.trials as f64;
            let (y, sd) = match result.kind {
                ExperimentKind::Divergence => (s.mean_k_hat?, s.sd_k_hat?),
                ExperimentKind::OracleRatio | ExperimentKind::DbarPipeline => (s.mean_value?, s.sd_value?),
                ExperimentKind::EntropyDeviation => {
                    let p = s.event_freq?;
                    (p, (p * (1.0 - p)).sqrt())
                }
            };
            let half = 1.96 * sd / m.sqrt();
            Some(PlotRow {
                x: (a.n as f64).log2(),
                y,
                y_lo: y - half,
                y_hi: y + half,
            })
        })
        .collect()
}

fn theory_rows(result: &ExperimentResult, criterion: &str) -> Vec<PlotRow> {
    result
        .aggregates
        .iter()
        .filter(|a| a.criterion == criterion)
        .filter_map(|a| {
            let y = a.theory?;
            Some(PlotRow {
                x: (a.n as f64).log2(),
                y,
                y_lo: a.reference.unwrap_or(y),
                y_hi: y,
            })
        })
        .collect()
}

/// Write `trials.csv`, `aggregates.csv`, `slopes.csv`, `plot_*.csv`,
/// `theory_*.csv` (when a theory column exists) and `manifest.json`.
pub fn write_outputs(result: &ExperimentResult, config: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        fs::write(dir.join(&name), &bytes)?;
        files.insert(name, sha256_hex(&bytes));
        Ok(())
    };
    put("trials.csv".into(), csv_bytes(&result.records)?)?;
    put("aggregates.csv".into(), csv_bytes(result.aggregates.iter().map(AggregateRow::from))?)?;
    put("slopes.csv".into(), csv_bytes(&result.slopes)?)?;
    let mut criteria: Vec<&str> = Vec::new();
    for a in &result.aggregates {
        if !criteria.contains(&a.criterion.as_str()) {
            criteria.push(&a.criterion);
        }
    }
    for c in criteria {
        let stem = file_stem(c);
        put(format!("plot_{stem}.csv"), csv_bytes(plot_rows(result, c))?)?;
        let theory = theory_rows(result, c);
        if !theory.is_empty() {
            put(format!("theory_{stem}.csv"), csv_bytes(theory)?)?;
        }
    }
    let canonical = serde_json::to_vec(config).map_err(|e| Error::Config(e.to_string()))?;
    let manifest = Manifest {
        experiment: result.id.clone(),
        kind: result.kind,
        model: result.model.clone(),
        master_seed: config.master_seed,
        trials: config.trials,
        config_sha256: sha256_hex(&canonical),
        config: config.clone(),
        build: BuildInfo {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
        files,
        skipped: result.skipped.clone(),
        slopes: result.slopes.clone(),
        notes: result.notes.clone(),
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}
