use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{DbarBoundInputs, GammaSpec};
use crate::criteria::{Criterion, DEFAULT_NML_BUDGET};
use crate::error::{Error, Result};
use crate::io::read_model_config;
use crate::processes::{ModelConfig, MonteCarloSettings};
use crate::types::PenaltySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Order estimates along an `n` grid, with a slope fit against `log₂ n`.
    Divergence,
    /// Estimated PML order over the oracle PML order.
    OracleRatio,
    /// Frequency of the uniform block-entropy deviation event.
    EntropyDeviation,
    /// d̄ between true and estimated block laws.
    DbarPipeline,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Divergence => "divergence",
            ExperimentKind::OracleRatio => "oracle_ratio",
            ExperimentKind::EntropyDeviation => "entropy_deviation",
            ExperimentKind::DbarPipeline => "dbar_pipeline",
        }
    }
}

/// A model given inline or as a path to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    File { file: PathBuf },
    Inline(ModelConfig),
}

/// Sample sizes: an explicit list or a range of powers of two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NGrid {
    Values(Vec<usize>),
    Log2 {
        log2_from: u32,
        log2_to: u32,
        #[serde(default = "one")]
        log2_step: u32,
    },
}

fn one() -> u32 {
    1
}

impl NGrid {
    pub fn values(&self) -> Vec<usize> {
        match self {
            NGrid::Values(v) => v.clone(),
            NGrid::Log2 {
                log2_from,
                log2_to,
                log2_step,
            } => (*log2_from..=*log2_to)
                .step_by((*log2_step).max(1) as usize)
                .map(|l| 1usize << l)
                .collect(),
        }
    }
}

/// Largest candidate order: fixed, or `⌈η log₂ n⌉`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxOrderRule {
    Fixed(usize),
    Eta(f64),
}

impl Default for MaxOrderRule {
    fn default() -> Self {
        MaxOrderRule::Eta(0.5)
    }
}

impl MaxOrderRule {
    pub fn bound(&self, n: usize) -> usize {
        let r = match *self {
            MaxOrderRule::Fixed(r) => r,
            MaxOrderRule::Eta(eta) => (eta * (n as f64).log2() - 1e-12).ceil().max(0.0) as usize,
        };
        r.min(n.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub kind: ExperimentKind,
    pub model: ModelSource,
    #[serde(default)]
    pub criteria: Vec<Criterion>,
    /// Each entry adds a PML criterion with that penalty.
    #[serde(default)]
    pub penalties: Vec<PenaltySpec>,
    pub n_grid: NGrid,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub max_order: MaxOrderRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Record wall time per trial; off by default so outputs are byte-stable.
    #[serde(default)]
    pub record_runtime: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default = "default_nml_budget")]
    pub nml_budget: u64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_resamples: usize,
    /// Oracle ratio: adds `pml:power:κ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Oracle ratio: tolerance on `|ratio - 1|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    /// Oracle ratio: orders of true `h_k` used by the oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_orders: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloSettings>,
    /// Entropy deviation: `ε`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// d̄ pipeline: block length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_len: Option<usize>,
    /// d̄ pipeline: compare the true model with itself.
    #[serde(default)]
    pub self_check: bool,
    /// d̄ pipeline: constants for the theory overlay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dbar_constants: Option<DbarBoundInputs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_upper: Option<GammaSpec>,
}

fn default_trials() -> usize {
    200
}

fn default_nml_budget() -> u64 {
    DEFAULT_NML_BUDGET
}

fn default_bootstrap() -> usize {
    1000
}

impl ExperimentConfig {
    /// Parse TOML (or JSON when the text starts with `{`).
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    /// Read a config file; relative model paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config = Self::parse(&fs::read_to_string(path)?)?;
        if let ModelSource::File { file } = &mut config.model {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Config("experiment id must be nonempty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let ns = self.n_grid.values();
        if ns.is_empty() {
            return Err(Error::Config("n grid is empty".into()));
        }
        if ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n grid must be strictly increasing".into()));
        }
        if ns[0] < 2 {
            return Err(Error::Config("n grid values must be at least 2".into()));
        }
        if let MaxOrderRule::Eta(eta) = self.max_order {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!("eta must be a nonnegative number, got {eta}")));
            }
        }
        for p in &self.penalties {
            p.validate()?;
        }
        match self.kind {
            ExperimentKind::OracleRatio => {
                if let Some(k) = self.kappa {
                    if !(k > 0.5 && k < 1.0) {
                        return Err(Error::Config(format!("kappa must lie in (1/2, 1), got {k}")));
                    }
                }
                if self.criteria().iter().any(|c| !matches!(c, Criterion::Pml(_))) {
                    return Err(Error::Config("oracle_ratio supports PML criteria only".into()));
                }
            }
            ExperimentKind::EntropyDeviation => match self.epsilon {
                Some(e) if e > 0.0 && e < 0.5 => {}
                other => return Err(Error::Config(format!("entropy_deviation needs 0 < epsilon < 1/2, got {other:?}"))),
            },
            ExperimentKind::DbarPipeline => {
                if self.block_len == Some(0) {
                    return Err(Error::Config("block_len must be at least 1".into()));
                }
                if self.criteria().iter().any(|c| !matches!(c, Criterion::Pml(_))) {
                    return Err(Error::Config("dbar_pipeline supports PML criteria only".into()));
                }
            }
            ExperimentKind::Divergence => {}
        }
        Ok(())
    }

    /// Configured criteria, then one PML per penalty (and `κ`); BIC when
    /// nothing is configured.
    pub fn criteria(&self) -> Vec<Criterion> {
        let mut out = self.criteria.clone();
        out.extend(self.penalties.iter().map(|&p| Criterion::Pml(p)));
        if let Some(k) = self.kappa {
            out.push(Criterion::Pml(PenaltySpec::Power(k)));
        }
        if out.is_empty() {
            out.push(Criterion::Pml(PenaltySpec::Bic));
        }
        let mut seen = Vec::new();
        out.retain(|c| {
            let fresh = !seen.contains(c);
            seen.push(*c);
            fresh
        });
        out
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        match &self.model {
            ModelSource::Inline(m) => Ok(m.clone()),
            ModelSource::File { file } => read_model_config(file),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_toml() {
        let text = r#"
            id = "bic"
            kind = "divergence"
            n_grid = { log2_from = 8, log2_to = 12, log2_step = 2 }
            max_order = { fixed = 6 }
            penalties = ["aic"]
            [model]
            type = "markov"
            alphabet_size = 2
            order = 1
            transition = [0.7, 0.3, 0.2, 0.8]
        "#;
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.n_grid.values(), vec![256, 1024, 4096]);
        assert_eq!(c.trials, 200);
        assert_eq!(c.max_order.bound(4096), 6);
        assert_eq!(c.criteria(), vec![Criterion::Pml(PenaltySpec::Aic)]);
        assert!(matches!(c.model, ModelSource::Inline(ModelConfig::Markov { .. })));
    }

    #[test]
    fn rejects_bad_configs() {
        let base = |extra: &str| {
            format!(
                "id = \"x\"\nkind = \"divergence\"\nn_grid = [16, 8]\n{extra}\n[model]\ntype = \"gmodel\"\ntheta0 = 0.3\nc = 0.2\nrho = 0.5\n"
            )
        };
        assert!(ExperimentConfig::parse(&base("")).is_err());
        let ok = base("").replace("[16, 8]", "[8, 16]");
        assert!(ExperimentConfig::parse(&ok).is_ok());
        assert!(ExperimentConfig::parse(&ok.replace("id = \"x\"", "id = \"x\"\ntrials = 0")).is_err());
        assert!(ExperimentConfig::parse(&ok.replace("id = \"x\"", "id = \"x\"\nbogus = 1")).is_err());
        let dev = ok.replace("divergence", "entropy_deviation");
        assert!(ExperimentConfig::parse(&dev).is_err());
    }

    #[test]
    fn eta_rule() {
        assert_eq!(MaxOrderRule::Eta(0.5).bound(1 << 10), 5);
        assert_eq!(MaxOrderRule::Eta(0.3).bound(1 << 10), 3);
        assert_eq!(MaxOrderRule::Fixed(12).bound(8), 7);
    }
}
