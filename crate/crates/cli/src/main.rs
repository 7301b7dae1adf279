//! `markov-order` command-line tool: order estimation, simulation, bound
//! evaluation, d̄ distances and config-driven experiments.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use markov_order::analysis::{evaluate_grid, BoundInputs, Theorem};
use markov_order::criteria::{criterion_trace, smallest_minimizer, DEFAULT_NML_BUDGET};
use markov_order::dbar::{block_distribution, dbar_exact, dbar_upper_greedy, DEFAULT_BLOCK_BUDGET, DEFAULT_DBAR_BUDGET};
use markov_order::experiments::{run_experiment, write_outputs, ExperimentConfig, MaxOrderRule};
use markov_order::io::{read_model, read_sample, write_sample};
use markov_order::processes::ProcessModel;
use markov_order::{Alphabet, Criterion, PenaltySpec};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "markov-order", version, about = "Markov order estimation for finite-alphabet processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Pml,
    Nml,
    Kt,
}

#[derive(Clone, Copy, ValueEnum)]
enum TheoremArg {
    T2,
    T6,
    T8,
    T10,
    Prop1,
}

#[derive(Clone, Copy, ValueEnum)]
enum DbarMode {
    Exact,
    Greedy,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the Markov order of a sample.
    Order {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long, value_enum, default_value = "pml")]
        criterion: CriterionArg,
        /// bic, aic, power:<κ> or const:<c> (PML only).
        #[arg(long, default_value = "bic")]
        penalty: PenaltySpec,
        /// Largest candidate order; defaults to ⌈½ log₂ n⌉.
        #[arg(long)]
        max_order: Option<usize>,
        /// Alphabet size; inferred from the sample when omitted.
        #[arg(long)]
        alphabet: Option<usize>,
        /// Print the full score table as CSV (k,score).
        #[arg(long)]
        trace: bool,
    },
    /// Sample a path from a model file.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the model's own burn-in rule.
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a probability bound over a grid of sample sizes.
    Bounds {
        #[arg(long, value_enum)]
        theorem: TheoremArg,
        /// TOML or JSON file of bound inputs.
        #[arg(long)]
        params: PathBuf,
        /// n=<start>:<stop>:<log-step>, with start and stop as integers or 2^e.
        #[arg(long)]
        grid: String,
    },
    /// d̄ distance between the n-block laws of two models.
    Dbar {
        #[arg(long, value_enum)]
        mode: DbarMode,
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a config-driven experiment and write its outputs.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Serialize)]
struct OrderReport {
    criterion: String,
    n: usize,
    max_order: usize,
    k_hat: usize,
    score: f64,
}

#[derive(Serialize)]
struct DbarReport {
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan_size: Option<usize>,
}

fn parse_size(s: &str) -> Result<f64> {
    let s = s.trim();
    match s.strip_prefix("2^") {
        Some(e) => Ok(e.parse::<f64>().with_context(|| format!("bad exponent in {s:?}"))?),
        None => {
            let n: f64 = s.parse().with_context(|| format!("bad sample size {s:?}"))?;
            if !(n >= 1.0) {
                bail!("sample size must be positive, got {s:?}");
            }
            Ok(n.log2())
        }
    }
}

/// `log₂ n` values of a `n=<start>:<stop>:<log-step>` grid.
fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let body = spec.strip_prefix("n=").unwrap_or(spec);
    let parts: Vec<&str> = body.split(':').collect();
    let [start, stop, step] = parts[..] else {
        bail!("grid must be n=<start>:<stop>:<log-step>, got {spec:?}");
    };
    let (lo, hi) = (parse_size(start)?, parse_size(stop)?);
    let step: f64 = step.parse().with_context(|| format!("bad log-step {step:?}"))?;
    if !(step > 0.0) || hi < lo {
        bail!("grid needs start ≤ stop and a positive log-step");
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| lo + i as f64 * step).collect())
}

fn read_bound_inputs(path: &Path) -> Result<BoundInputs> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let inputs = if text.trim_start().starts_with('{') {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    Ok(inputs)
}

fn cmd_order(
    out: &mut impl Write,
    sample: &Path,
    criterion: CriterionArg,
    penalty: PenaltySpec,
    max_order: Option<usize>,
    alphabet: Option<usize>,
    trace: bool,
) -> Result<()> {
    let alphabet = alphabet.map(Alphabet::new).transpose()?;
    let sample = read_sample(sample, alphabet).with_context(|| format!("reading {}", sample.display()))?;
    let criterion = match criterion {
        CriterionArg::Pml => Criterion::Pml(penalty),
        CriterionArg::Nml => Criterion::Nml,
        CriterionArg::Kt => Criterion::Kt,
    };
    let n = sample.len();
    let r = max_order.unwrap_or_else(|| MaxOrderRule::default().bound(n));
    let scores = criterion_trace(&sample, criterion, r, DEFAULT_NML_BUDGET)?;
    if trace {
        writeln!(out, "k,score")?;
        for (k, s) in scores.iter().enumerate() {
            writeln!(out, "{k},{s}")?;
        }
    } else {
        let k_hat = smallest_minimizer(&scores);
        let report = OrderReport {
            criterion: criterion.to_string(),
            n,
            max_order: scores.len() - 1,
            k_hat,
            score: scores[k_hat],
        };
        writeln!(out, "{}", serde_json::to_string(&report)?)?;
    }
    Ok(())
}

fn cmd_simulate(model: &Path, n: usize, seed: u64, burn_in: Option<usize>, out: &Path) -> Result<()> {
    let model = read_model(model).with_context(|| format!("reading {}", model.display()))?;
    let burn_in = burn_in.unwrap_or_else(|| model.default_burn_in(0));
    let sample = model.sample_path(n, seed, burn_in)?;
    write_sample(out, &sample)?;
    Ok(())
}

fn cmd_bounds(out: &mut impl Write, theorem: TheoremArg, params: &Path, grid: &str) -> Result<()> {
    let theorem = match theorem {
        TheoremArg::T2 => Theorem::T2,
        TheoremArg::T6 => Theorem::T6,
        TheoremArg::T8 => Theorem::T8,
        TheoremArg::T10 => Theorem::T10,
        TheoremArg::Prop1 => Theorem::Prop1,
    };
    let inputs = read_bound_inputs(params)?;
    let rows = evaluate_grid(theorem, &inputs, &parse_grid(grid)?)?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_dbar(out: &mut impl Write, mode: DbarMode, a: &Path, b: &Path, n: usize, trials: usize, seed: u64) -> Result<()> {
    let model_a = read_model(a).with_context(|| format!("reading {}", a.display()))?;
    let model_b = read_model(b).with_context(|| format!("reading {}", b.display()))?;
    let report = match mode {
        DbarMode::Exact => {
            let p = block_distribution(&model_a, n, DEFAULT_BLOCK_BUDGET)?;
            let q = block_distribution(&model_b, n, DEFAULT_BLOCK_BUDGET)?;
            let (value, plan) = dbar_exact(&p, &q, DEFAULT_DBAR_BUDGET)?;
            DbarReport {
                value,
                std_error: None,
                plan_size: Some(plan.joint.len()),
            }
        }
        DbarMode::Greedy => {
            let (value, se) = dbar_upper_greedy(&model_a, &model_b, n, trials, seed)?;
            DbarReport {
                value,
                std_error: Some(se),
                plan_size: None,
            }
        }
    };
    writeln!(out, "{}", serde_json::to_string(&report)?)?;
    Ok(())
}

fn cmd_experiment(out: &mut impl Write, config: &Path, out_dir: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config).with_context(|| format!("reading {}", config.display()))?;
    let result = run_experiment(&cfg)?;
    let manifest = write_outputs(&result, &cfg, out_dir)?;
    writeln!(
        out,
        "{}: {} trial rows, {} cells, {} skipped, outputs in {}",
        manifest.experiment,
        result.records.len(),
        result.aggregates.len(),
        manifest.skipped.len(),
        out_dir.display()
    )?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Order {
            sample,
            criterion,
            penalty,
            max_order,
            alphabet,
            trace,
        } => cmd_order(&mut out, &sample, criterion, penalty, max_order, alphabet, trace),
        Command::Simulate {
            model,
            n,
            seed,
            burn_in,
            out: path,
        } => cmd_simulate(&model, n, seed, burn_in, &path),
        Command::Bounds { theorem, params, grid } => cmd_bounds(&mut out, theorem, &params, &grid),
        Command::Dbar {
            mode,
            model_a,
            model_b,
            n,
            trials,
            seed,
        } => cmd_dbar(&mut out, mode, &model_a, &model_b, n, trials, seed),
        Command::Experiment { config, out_dir } => cmd_experiment(&mut out, &config, &out_dir),
    }
}
