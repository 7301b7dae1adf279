use std::time::Instant;

use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind};
use super::{fit_slope, summarize, Aggregate, EventRule, ExperimentResult, SkippedCell, SlopeFit, TrialRecord};
use crate::analysis::{bound_dbar, bound_entropy_deviation, oracle_pml_order_checked, GammaSpec};
use crate::counting::SampleCounts;
use crate::criteria::{criterion_trace, nml_log_normalizer, nml_trace_with_normalizers, smallest_minimizer, Criterion};
use crate::dbar::{block_distribution, dbar_exact, empirical_markov_estimator, DEFAULT_BLOCK_BUDGET, DEFAULT_DBAR_BUDGET};
use crate::error::{Error, Result};
use crate::processes::{MarkovChainModel, Model, ProcessModel, SequentialLaw};
use crate::types::{label_id, PenaltySpec, SeedSpec};

/// Run the experiment named by `config.kind`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    match config.kind {
        ExperimentKind::Divergence => run_divergence_experiment(config),
        ExperimentKind::OracleRatio => run_oracle_ratio_experiment(config),
        ExperimentKind::EntropyDeviation => run_entropy_deviation_experiment(config),
        ExperimentKind::DbarPipeline => run_dbar_pipeline_experiment(config),
    }
}

struct Setup {
    model: Model,
    label: String,
    ns: Vec<usize>,
    criteria: Vec<Criterion>,
}

fn setup(config: &ExperimentConfig) -> Result<Setup> {
    let mc = config.model_config()?;
    Ok(Setup {
        model: mc.build()?,
        label: mc.label(),
        ns: config.n_grid.values(),
        criteria: config.criteria(),
    })
}

fn trial_seed(config: &ExperimentConfig, n: usize, trial: usize) -> u64 {
    SeedSpec::new(config.master_seed).derive(&[label_id(&config.id), n as u64, trial as u64])
}

fn penalty_label(c: Criterion) -> String {
    match c {
        Criterion::Pml(p) => p.to_string(),
        _ => String::new(),
    }
}

fn burn_in(config: &ExperimentConfig, model: &Model, r: usize) -> usize {
    config.burn_in.unwrap_or_else(|| model.default_burn_in(r))
}

enum Scorer {
    Direct(Criterion),
    Nml(Vec<f64>),
}

/// Prepares a scorer for `(criterion, n, r)`; NML normalizers are computed once
/// per cell and capacity failures skip the cell.
fn scorer(config: &ExperimentConfig, model: &Model, c: Criterion, n: usize, r: usize) -> Result<Scorer> {
    match c {
        Criterion::Nml => {
            let alphabet = model.alphabet();
            let norms = (0..=r)
                .map(|k| nml_log_normalizer(alphabet, n, k, config.nml_budget))
                .collect::<Result<Vec<f64>>>()?;
            Ok(Scorer::Nml(norms))
        }
        other => Ok(Scorer::Direct(other)),
    }
}

fn estimate(sample: &crate::types::Sample, scorer: &Scorer, r: usize, budget: u64) -> Result<(usize, f64)> {
    let trace = match scorer {
        Scorer::Direct(c) => criterion_trace(sample, *c, r, budget)?,
        Scorer::Nml(norms) => nml_trace_with_normalizers(sample, norms)?,
    };
    let k = smallest_minimizer(&trace);
    Ok((k, trace[k]))
}

fn elapsed_ms(config: &ExperimentConfig, start: Instant) -> u64 {
    if config.record_runtime {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// Per-trial output for one criterion: `(k̂, min score, value, runtime)`.
type CellOutcome = Result<(Option<usize>, Option<f64>, Option<f64>, u64)>;

/// Runs all trials at one `n`. `per_trial` returns one outcome per active
/// criterion. Cells with any failed trial are dropped and reported.
fn run_cells<F>(
    config: &ExperimentConfig,
    setup: &Setup,
    n: usize,
    active: &[Criterion],
    per_trial: F,
    records: &mut Vec<TrialRecord>,
    skipped: &mut Vec<SkippedCell>,
) -> Result<Vec<bool>>
where
    F: Fn(usize, u64) -> Result<Vec<CellOutcome>> + Sync,
{
    let outcomes: Vec<Vec<CellOutcome>> = (0..config.trials)
        .into_par_iter()
        .map(|t| per_trial(t, trial_seed(config, n, t)))
        .collect::<Result<Vec<_>>>()?;
    let mut ok = vec![true; active.len()];
    for (ci, c) in active.iter().enumerate() {
        if let Some(Err(e)) = outcomes.iter().map(|o| &o[ci]).find(|o| o.is_err()) {
            ok[ci] = false;
            skipped.push(SkippedCell {
                criterion: c.to_string(),
                n,
                reason: e.to_string(),
            });
        }
    }
    for (t, row) in outcomes.into_iter().enumerate() {
        for (ci, outcome) in row.into_iter().enumerate() {
            if !ok[ci] {
                continue;
            }
            let (k_hat, score_min, value, runtime_ms) = outcome.expect("failed cells are dropped");
            records.push(TrialRecord {
                experiment: config.id.clone(),
                model: setup.label.clone(),
                criterion: active[ci].to_string(),
                penalty: penalty_label(active[ci]),
                n,
                trial: t,
                k_hat,
                score_min,
                runtime_ms,
                value,
            });
        }
    }
    Ok(ok)
}

/// Extra per-cell annotations for the aggregate rows.
#[derive(Default, Clone)]
struct CellInfo {
    reference: Option<f64>,
    theory: Option<f64>,
    flag: String,
    event: Option<EventRule>,
}

fn assemble(
    config: &ExperimentConfig,
    setup: &Setup,
    records: Vec<TrialRecord>,
    info: &dyn Fn(&str, usize) -> CellInfo,
    skipped: Vec<SkippedCell>,
    notes: Vec<String>,
) -> ExperimentResult {
    let true_order = setup.model.markov_order();
    let mut aggregates = Vec::new();
    let mut slopes: Vec<SlopeFit> = Vec::new();
    for c in &setup.criteria {
        let name = c.to_string();
        let mut cells = Vec::new();
        for &n in &setup.ns {
            let rows: Vec<TrialRecord> = records.iter().filter(|r| r.criterion == name && r.n == n).cloned().collect();
            if rows.is_empty() {
                continue;
            }
            let ci = info(&name, n);
            let stats = summarize(&rows, true_order, ci.event.unwrap_or(EventRule::None));
            let ks: Vec<f64> = rows.iter().filter_map(|r| r.k_hat.map(|k| k as f64)).collect();
            if !ks.is_empty() {
                cells.push(((n as f64).log2(), ks));
            }
            aggregates.push(Aggregate {
                experiment: config.id.clone(),
                criterion: name.clone(),
                penalty: penalty_label(*c),
                n,
                stats,
                reference: ci.reference,
                theory: ci.theory,
                flag: ci.flag,
            });
        }
        let seed = SeedSpec::new(config.master_seed).derive(&[label_id(&config.id), label_id("bootstrap"), label_id(&name)]);
        if let Some(fit) = fit_slope(&name, &cells, config.bootstrap_resamples, seed) {
            slopes.push(fit);
        }
    }
    ExperimentResult {
        id: config.id.clone(),
        kind: config.kind,
        model: setup.label.clone(),
        true_order,
        records,
        aggregates,
        slopes,
        skipped,
        notes,
    }
}

/// Order estimates for every criterion along the `n` grid, with the slope of
/// mean `k̂` against `log₂ n`.
pub fn run_divergence_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let s = setup(config)?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for &n in &s.ns {
        let r = config.max_order.bound(n);
        let mut active = Vec::new();
        let mut scorers = Vec::new();
        for &c in &s.criteria {
            match scorer(config, &s.model, c, n, r) {
                Ok(sc) => {
                    active.push(c);
                    scorers.push(sc);
                }
                Err(e) => skipped.push(SkippedCell {
                    criterion: c.to_string(),
                    n,
                    reason: e.to_string(),
                }),
            }
        }
        if active.is_empty() {
            continue;
        }
        let burn = burn_in(config, &s.model, r);
        run_cells(
            config,
            &s,
            n,
            &active,
            |_, seed| {
                let sample = s.model.sample_path(n, seed, burn)?;
                Ok(scorers
                    .iter()
                    .map(|sc| {
                        let start = Instant::now();
                        let (k, score) = estimate(&sample, sc, r, config.nml_budget)?;
                        Ok((Some(k), Some(score), None, elapsed_ms(config, start)))
                    })
                    .collect())
            },
            &mut records,
            &mut skipped,
        )?;
    }
    Ok(assemble(config, &s, records, &|_, _| CellInfo::default(), skipped, Vec::new()))
}

/// Orders of true `h_k` needed to certify the oracle at every `n` and
/// penalty: the first order whose penalty alone exceeds `n log|A|` plus the
/// order-0 penalty.
fn oracle_orders_needed(ns: &[usize], pens: &[PenaltySpec], a: usize) -> usize {
    let a1 = a as f64 - 1.0;
    let mut need = 1;
    for &n in ns {
        for pen in pens {
            let p = pen.eval(n as f64);
            let cap = n as f64 * (a as f64).log2() + a1 * p;
            let mut k = 1;
            while a1 * (a as f64).powi(k as i32) * p <= cap && k < 64 {
                k += 1;
            }
            need = need.max(k);
        }
    }
    need
}

/// `k̂_PML / k_PML,n` per trial, with the fraction within `[1-ξ, 1+ξ]`.
pub fn run_oracle_ratio_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let s = setup(config)?;
    let alphabet = s.model.alphabet();
    let pens: Vec<PenaltySpec> = s
        .criteria
        .iter()
        .map(|c| match c {
            Criterion::Pml(p) => Ok(*p),
            _ => Err(Error::Config("oracle_ratio supports PML criteria only".into())),
        })
        .collect::<Result<_>>()?;
    let xi = config.xi.unwrap_or(0.5);
    let mut notes = Vec::new();
    let orders = config.oracle_orders.unwrap_or_else(|| {
        let cap = match s.model {
            Model::GModel(_) => 24,
            _ => alphabet.max_code_depth().min(22),
        };
        oracle_orders_needed(&s.ns, &pens, alphabet.size()).min(cap)
    });
    let mc = config.monte_carlo.unwrap_or_default();
    let h = s.model.true_entropies(orders, &mc)?;
    if matches!(s.model, Model::GModel(_)) {
        notes.push(
            "g-model continuity rates decay geometrically, not superexponentially; the ratio check is an approximation"
                .to_string(),
        );
    }
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut oracle: Vec<(String, usize, f64, bool)> = Vec::new();
    for &n in &s.ns {
        let r = config.max_order.bound(n);
        let mut active = Vec::new();
        let mut oracle_k = Vec::new();
        for (&c, &pen) in s.criteria.iter().zip(&pens) {
            match oracle_pml_order_checked(&h, n, pen, alphabet) {
                Ok(o) => {
                    active.push(c);
                    oracle_k.push(o.k);
                    oracle.push((c.to_string(), n, o.k as f64, o.stable));
                }
                Err(e) => skipped.push(SkippedCell {
                    criterion: c.to_string(),
                    n,
                    reason: e.to_string(),
                }),
            }
        }
        if active.is_empty() {
            continue;
        }
        let burn = burn_in(config, &s.model, r);
        run_cells(
            config,
            &s,
            n,
            &active,
            |_, seed| {
                let sample = s.model.sample_path(n, seed, burn)?;
                Ok(active
                    .iter()
                    .zip(&oracle_k)
                    .map(|(&c, &ko)| {
                        let start = Instant::now();
                        let (k, score) = estimate(&sample, &Scorer::Direct(c), r, config.nml_budget)?;
                        let ratio = match (k, ko) {
                            (0, 0) => 1.0,
                            (_, 0) => f64::INFINITY,
                            _ => k as f64 / ko as f64,
                        };
                        Ok((Some(k), Some(score), Some(ratio), elapsed_ms(config, start)))
                    })
                    .collect())
            },
            &mut records,
            &mut skipped,
        )?;
    }
    let info = |c: &str, n: usize| {
        let o = oracle.iter().find(|o| o.0 == c && o.1 == n);
        CellInfo {
            reference: o.map(|o| o.2),
            theory: None,
            flag: match o {
                Some(o) if !o.3 => "unstable_oracle".into(),
                _ => String::new(),
            },
            event: Some(EventRule::NearOne(xi)),
        }
    };
    Ok(assemble(config, &s, records, &info, skipped, notes))
}

fn as_markov(model: &Model) -> Result<&MarkovChainModel> {
    match model {
        Model::Markov(m) => Ok(m),
        Model::Iid(m) => Ok(m.as_markov()),
        Model::GModel(_) => Err(Error::Config("entropy_deviation needs a model with exact block entropies".into())),
    }
}

/// Frequency of `max_{1≤k≤m} |Ĥ_k - H_k| > n^{-(1/2-ε)}` with the bound's
/// right-hand side as the theory column.
pub fn run_entropy_deviation_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let s = setup(config)?;
    let markov = as_markov(&s.model)?;
    let eps = config
        .epsilon
        .ok_or_else(|| Error::Config("entropy_deviation needs epsilon".into()))?;
    let alphabet = s.model.alphabet();
    let nn = s.model.nonnullness_constants();
    let names = ["entropy".to_string()];
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut cells: Vec<(usize, f64, f64, usize)> = Vec::new();
    for &n in &s.ns {
        let bound = bound_entropy_deviation(n as f64, eps, alphabet, nn.alpha0.value, nn.alpha.value)?;
        let m = bound.max_order;
        let truth: Vec<f64> = (1..=m).map(|k| markov.block_entropy(k)).collect::<Result<_>>()?;
        cells.push((n, bound.threshold, bound.rhs_block, m));
        let outcomes: Vec<Result<f64>> = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let sample = s.model.sample_path(n, trial_seed(config, n, t), 0)?;
                if m == 0 {
                    return Ok(0.0);
                }
                let counts = SampleCounts::build(&sample, m)?;
                let mut dev = 0.0f64;
                for (k, hk) in (1..=m).zip(&truth) {
                    dev = dev.max((counts.entropy(k)? - hk).abs());
                }
                Ok(dev)
            })
            .collect();
        match outcomes.into_iter().collect::<Result<Vec<f64>>>() {
            Ok(devs) => records.extend(devs.into_iter().enumerate().map(|(t, dev)| TrialRecord {
                experiment: config.id.clone(),
                model: s.label.clone(),
                criterion: names[0].clone(),
                penalty: String::new(),
                n,
                trial: t,
                k_hat: None,
                score_min: None,
                runtime_ms: 0,
                value: Some(dev),
            })),
            Err(e) => skipped.push(SkippedCell {
                criterion: names[0].clone(),
                n,
                reason: e.to_string(),
            }),
        }
    }
    let info = |_: &str, n: usize| {
        let c = cells.iter().find(|c| c.0 == n).expect("every n has a bound");
        let mut flags = Vec::new();
        if c.3 == 0 {
            flags.push("no_orders");
        }
        if c.2 >= 1.0 {
            flags.push("vacuous_bound");
        }
        CellInfo {
            reference: Some(c.1),
            theory: Some(c.2),
            flag: flags.join("+"),
            event: Some(EventRule::Exceeds(c.1)),
        }
    };
    let mut out = assemble_named(config, &s, records, &names, &info, skipped);
    out.notes.push(format!(
        "alpha0 = {} ({:?}), alpha = {} ({:?})",
        nn.alpha0.value, nn.alpha0.provenance, nn.alpha.value, nn.alpha.provenance
    ));
    Ok(out)
}

/// Like [`assemble`] for experiments whose rows are keyed by fixed names
/// rather than criteria.
fn assemble_named(
    config: &ExperimentConfig,
    s: &Setup,
    records: Vec<TrialRecord>,
    names: &[String],
    info: &dyn Fn(&str, usize) -> CellInfo,
    skipped: Vec<SkippedCell>,
) -> ExperimentResult {
    let mut aggregates = Vec::new();
    for name in names {
        for &n in &s.ns {
            let rows: Vec<TrialRecord> = records.iter().filter(|r| &r.criterion == name && r.n == n).cloned().collect();
            if rows.is_empty() {
                continue;
            }
            let ci = info(name, n);
            aggregates.push(Aggregate {
                experiment: config.id.clone(),
                criterion: name.clone(),
                penalty: String::new(),
                n,
                stats: summarize(&rows, None, ci.event.unwrap_or(EventRule::None)),
                reference: ci.reference,
                theory: ci.theory,
                flag: ci.flag,
            });
        }
    }
    ExperimentResult {
        id: config.id.clone(),
        kind: config.kind,
        model: s.label.clone(),
        true_order: s.model.markov_order(),
        records,
        aggregates,
        slopes: Vec::new(),
        skipped,
        notes: Vec::new(),
    }
}

/// d̄ between the true `b`-block law and that of the empirical Markov chain at
/// the bounded PML order.
pub fn run_dbar_pipeline_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let s = setup(config)?;
    let alphabet = s.model.alphabet();
    let b = config.block_len.unwrap_or(4);
    let truth = block_distribution(&s.model, b, DEFAULT_BLOCK_BUDGET)?;
    let mut notes = Vec::new();
    if truth.truncation_error() > 0.0 {
        notes.push(format!("true {b}-block law has L1 truncation error ≤ {:e}", truth.truncation_error()));
    }
    let mut pens = Vec::new();
    for c in &s.criteria {
        match c {
            Criterion::Pml(p) => pens.push(*p),
            _ => return Err(Error::Config("dbar_pipeline supports PML criteria only".into())),
        }
    }
    for (&n, pen) in s.ns.iter().flat_map(|n| pens.iter().map(move |p| (n, p))) {
        let need = 0.5 * (n as f64).log2();
        if pen.eval(n as f64) < need {
            return Err(Error::Hypothesis(format!("pen(n) ≥ ½ log n fails for {pen} at n = {n}")));
        }
    }
    let gamma = match &config.gamma_upper {
        Some(g) => Some(g.clone()),
        None if config.dbar_constants.is_some() => {
            let (upper, _) = s.model.continuity_rates(64)?;
            Some(GammaSpec::Values(upper.iter().map(|q| q.value).collect()))
        }
        None => None,
    };
    let mut overlay: Vec<(String, usize, Option<f64>, Option<f64>, String)> = Vec::new();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for &n in &s.ns {
        let r = config.max_order.bound(n);
        for (&c, &pen) in s.criteria.iter().zip(&pens) {
            let (reference, theory, flag) = match (&config.dbar_constants, &gamma) {
                (Some(consts), Some(g)) => match bound_dbar(consts, n as f64, pen, alphabet, |k| g.eval(k)) {
                    Ok(bd) => (Some(bd.threshold), Some(bd.probability), String::new()),
                    Err(e) => {
                        notes.push(format!("{c} at n = {n}: overlay unavailable: {e}"));
                        (None, None, "overlay_unavailable".to_string())
                    }
                },
                _ => (None, None, String::new()),
            };
            overlay.push((c.to_string(), n, reference, theory, flag));
        }
        let burn = burn_in(config, &s.model, r);
        run_cells(
            config,
            &s,
            n,
            &s.criteria,
            |_, seed| {
                let sample = s.model.sample_path(n, seed, burn)?;
                Ok(s.criteria
                    .iter()
                    .map(|&c| {
                        let start = Instant::now();
                        let (k, score) = estimate(&sample, &Scorer::Direct(c), r, config.nml_budget)?;
                        let d = if config.self_check {
                            dbar_exact(&truth, &truth, DEFAULT_DBAR_BUDGET)?.0
                        } else {
                            let fitted = empirical_markov_estimator(&sample, k)?;
                            let est = block_distribution(&fitted, b, DEFAULT_BLOCK_BUDGET)?;
                            dbar_exact(&truth, &est, DEFAULT_DBAR_BUDGET)?.0
                        };
                        Ok((Some(k), Some(score), Some(d), elapsed_ms(config, start)))
                    })
                    .collect())
            },
            &mut records,
            &mut skipped,
        )?;
    }
    let info = |c: &str, n: usize| {
        let o = overlay.iter().find(|o| o.0 == c && o.1 == n).expect("every cell has an overlay entry");
        CellInfo {
            reference: o.2,
            theory: o.3,
            flag: o.4.clone(),
            event: None,
        }
    };
    Ok(assemble(config, &s, records, &info, skipped, notes))
}
