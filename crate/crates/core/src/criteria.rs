//! Information criteria and the arg-min Markov order estimators.
//!
//! * PML: `(n-k) ĥ_k + (|A|-1)|A|^k pen(n)`.
//! * NML: `-log₂ ML_k + log₂ Σ(n,k)` with `Σ(n,k) = Σ_{x ∈ A^n} ML_k(x)`.
//! * KT: `-log₂ P_KT,k`, the add-½ sequential mixture code length with a
//!   uniform initial `k`-block.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::counting::{log_ml_dense, SampleCounts};
use crate::error::{Error, Result};
use crate::types::{decode, Alphabet, LogProb, PenaltySpec, Sample};

/// Two scores closer than this (in bits) are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Default cap on `|A|^n` for exhaustive NML normalizers.
pub const DEFAULT_NML_BUDGET: u64 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    Pml(PenaltySpec),
    Nml,
    Kt,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criterion::Pml(p) => write!(f, "pml:{p}"),
            Criterion::Nml => write!(f, "nml"),
            Criterion::Kt => write!(f, "kt"),
        }
    }
}

impl FromStr for Criterion {
    type Err = Error;

    /// Accepts `kt`, `nml`, `pml` (BIC), `bic`, `aic` and `pml:<penalty>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "kt" => Ok(Criterion::Kt),
            "nml" => Ok(Criterion::Nml),
            "pml" | "bic" => Ok(Criterion::Pml(PenaltySpec::Bic)),
            "aic" => Ok(Criterion::Pml(PenaltySpec::Aic)),
            _ => match s.strip_prefix("pml:") {
                Some(p) => Ok(Criterion::Pml(p.parse()?)),
                None => Err(Error::Parse(format!("unknown criterion {s:?}"))),
            },
        }
    }
}

impl Serialize for Criterion {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Criterion {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The chosen order together with the full criterion trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderEstimate {
    pub chosen_k: usize,
    /// `(k, score in bits)` for `k = 0..=bound_used`.
    pub scores: Vec<(usize, f64)>,
    pub bound_used: usize,
    pub criterion: Criterion,
}

impl OrderEstimate {
    pub fn min_score(&self) -> f64 {
        self.scores[self.chosen_k].1
    }
}

fn check_order(n: usize, k: usize) -> Result<()> {
    if k >= n {
        Err(Error::OrderOutOfRange {
            k,
            n,
            requirement: "0 ≤ k ≤ n-1",
        })
    } else {
        Ok(())
    }
}

fn penalty_weight(alphabet: Alphabet, k: usize) -> Result<f64> {
    // Counting needs the (k+1)-gram code in a u64.
    let max_k = alphabet.max_code_depth() - 1;
    match alphabet.checked_pow(k + 1) {
        Some(_) => Ok((alphabet.size() as f64 - 1.0) * alphabet.checked_pow(k).unwrap() as f64),
        None => Err(Error::OrderOverflow { k, max_k }),
    }
}

fn pml_from_counts(counts: &SampleCounts, k: usize, pen: PenaltySpec) -> Result<f64> {
    let n = counts.n() as f64;
    let weight = penalty_weight(counts.alphabet(), k)?;
    Ok(-counts.log_ml(k)?.bits() + weight * pen.eval(n))
}

/// `PML(k) = (n-k) ĥ_k + (|A|-1)|A|^k pen(n)`.
pub fn pml_score(sample: &Sample, k: usize, pen: PenaltySpec) -> Result<f64> {
    check_order(sample.len(), k)?;
    pen.validate()?;
    penalty_weight(sample.alphabet(), k)?;
    let counts = SampleCounts::build(sample, k + 1)?;
    pml_from_counts(&counts, k, pen)
}

enum KtCounter {
    Dense { joint: Vec<u32>, ctx: Vec<u32> },
    Hashed { joint: HashMap<u64, u32>, ctx: HashMap<u64, u32> },
}

impl KtCounter {
    fn new(ctx_cells: u64, a: u64, n: usize) -> Self {
        let joint_cells = ctx_cells * a;
        if joint_cells <= (1 << 16) || joint_cells <= 4 * n as u64 {
            KtCounter::Dense {
                joint: vec![0; joint_cells as usize],
                ctx: vec![0; ctx_cells as usize],
            }
        } else {
            KtCounter::Hashed {
                joint: HashMap::new(),
                ctx: HashMap::new(),
            }
        }
    }

    /// Return the counts before the update, then increment.
    #[inline]
    fn bump(&mut self, ctx: u64, joint: u64) -> (u32, u32) {
        match self {
            KtCounter::Dense { joint: j, ctx: c } => {
                let cj = &mut j[joint as usize];
                let cc = &mut c[ctx as usize];
                let out = (*cj, *cc);
                *cj += 1;
                *cc += 1;
                out
            }
            KtCounter::Hashed { joint: j, ctx: c } => {
                let cj = j.entry(joint).or_insert(0);
                let before_j = *cj;
                *cj += 1;
                let cc = c.entry(ctx).or_insert(0);
                let before_c = *cc;
                *cc += 1;
                (before_j, before_c)
            }
        }
    }
}

/// `log₂ P_KT,k` by the sequential add-½ recursion over positions `k+1..n`.
fn kt_log2_sequential(data: &[u8], alphabet: Alphabet, k: usize) -> Result<f64> {
    let n = data.len();
    let a = alphabet.size() as u64;
    let max_k = alphabet.max_code_depth() - 1;
    let ctx_cells = alphabet
        .checked_pow(k)
        .filter(|_| alphabet.checked_pow(k + 1).is_some())
        .ok_or(Error::OrderOverflow { k, max_k })?;
    let top = ctx_cells / a;
    let half_a = a as f64 / 2.0;
    let mut counter = KtCounter::new(ctx_cells, a, n);
    let mut acc = -(k as f64) * alphabet.log2_size();
    let mut ctx = 0u64;
    for (i, &x) in data.iter().enumerate() {
        if i >= k {
            let (cj, cc) = counter.bump(ctx, ctx * a + x as u64);
            acc += ((cj as f64 + 0.5) / (cc as f64 + half_a)).log2();
        }
        if k > 0 {
            if i >= k {
                ctx -= data[i - k] as u64 * top;
            }
            ctx = ctx * a + x as u64;
        }
    }
    Ok(acc)
}

/// `log₂ P_KT,k(x_1^n)`.
pub fn kt_log_prob(sample: &Sample, k: usize) -> Result<LogProb> {
    check_order(sample.len(), k)?;
    Ok(LogProb::new(kt_log2_sequential(sample.data(), sample.alphabet(), k)?))
}

/// `KT(k) = -log₂ P_KT,k(x_1^n)`.
pub fn kt_score(sample: &Sample, k: usize) -> Result<f64> {
    Ok(-kt_log_prob(sample, k)?.bits())
}

/// `log ML_k - log₂ P_KT,k`, always non-negative.
pub fn kt_ml_gap(sample: &Sample, k: usize) -> Result<f64> {
    let counts = SampleCounts::build(sample, k + 1)?;
    Ok(counts.log_ml(k)?.bits() - kt_log_prob(sample, k)?.bits())
}

/// Smallest `C` such that
/// `log ML_k - log P_KT,k ≤ C |A|^k + ((|A|-1)/2) |A|^k log₂(n / |A|^k)`
/// holds on every given `(sample, k)`. An empirical report, not a certified
/// constant.
pub fn fit_kt_constant<'a, I>(cases: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a Sample, usize)>,
{
    let mut worst = f64::NEG_INFINITY;
    for (sample, k) in cases {
        let a = sample.alphabet().size() as f64;
        let cells = a.powi(k as i32);
        let n = sample.len() as f64;
        let gap = kt_ml_gap(sample, k)?;
        let c = (gap - (a - 1.0) / 2.0 * cells * (n / cells).log2()) / cells;
        worst = worst.max(c);
    }
    Ok(worst)
}

/// `log₂ Σ(n, 0)`: sum over compositions `(n_a)` of
/// `multinomial(n; n_a) Π (n_a / n)^{n_a}`.
///
/// With `b_j = j^j e^{-j} / j!` the sum equals `[z^n] B(z)^{|A|} / b_n` where
/// `B(z) = Σ_j b_j z^j`. All `b_j` lie in `(0, 1]`, so the power series is
/// evaluated in plain double precision without overflow.
fn nml_log_normalizer_iid(a: usize, n: usize) -> f64 {
    // ln b_j via ln b_j - ln b_{j-1} = (j-1) ln(1 + 1/(j-1)) - 1.
    let mut ln_b = vec![0.0f64; n + 1];
    if n >= 1 {
        ln_b[1] = -1.0;
    }
    for j in 2..=n {
        let m = (j - 1) as f64;
        ln_b[j] = ln_b[j - 1] + m * (1.0 / m).ln_1p() - 1.0;
    }
    let b: Vec<f64> = ln_b.iter().map(|v| v.exp()).collect();
    // (a-1)-fold powers until the last multiplication, of which only [z^n] is needed.
    let mut poly = b.clone();
    for _ in 0..a.saturating_sub(2) {
        let mut next = vec![0.0; n + 1];
        for (i, &pi) in poly.iter().enumerate() {
            for (j, &bj) in b[..=n - i].iter().enumerate() {
                next[i + j] += pi * bj;
            }
        }
        poly = next;
    }
    let top: f64 = (0..=n).map(|i| poly[i] * b[n - i]).sum();
    top.log2() - ln_b[n] / std::f64::consts::LN_2
}

/// `log₂ Σ(n,k)` by summing `ML_k` over all `|A|^n` sequences.
pub fn nml_log_normalizer_enumerated(alphabet: Alphabet, n: usize, k: usize, budget: u64) -> Result<f64> {
    check_order(n, k)?;
    let total = alphabet
        .checked_pow(n)
        .filter(|&t| t <= budget)
        .ok_or(Error::Capacity {
            what: "exhaustive NML normalizer |A|^n",
            needed: (alphabet.size() as u128).saturating_pow(n as u32),
            budget: budget as u128,
            hint: "use the KT criterion (or k = 0, which has a closed form) for larger samples",
        })?;
    let a = alphabet.size();
    const CHUNK: u64 = 1 << 12;
    let chunks = total.div_ceil(CHUNK);
    // Fixed chunking keeps the floating-point summation order deterministic.
    let partial: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut buf = Vec::new();
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(total);
            (lo..hi)
                .map(|code| {
                    let x = decode(code, n, alphabet);
                    log_ml_dense(&x, a, k, &mut buf).exp2()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(partial.iter().sum::<f64>().log2())
}

/// `log₂ Σ(n,k)`. `k = 0` uses the closed form, `k = n-1` is `n log₂|A|`,
/// everything else is enumerated behind `budget`.
pub fn nml_log_normalizer(alphabet: Alphabet, n: usize, k: usize, budget: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    check_order(n, k)?;
    if k == n - 1 {
        // Every (n-1)-context occurs once, so ML_{n-1} ≡ 1.
        return Ok(n as f64 * alphabet.log2_size());
    }
    if k == 0 {
        return Ok(nml_log_normalizer_iid(alphabet.size(), n));
    }
    nml_log_normalizer_enumerated(alphabet, n, k, budget)
}

/// `NML(k) = (n-k) ĥ_k + log₂ Σ(n,k)`.
pub fn nml_score(sample: &Sample, k: usize, budget: u64) -> Result<f64> {
    check_order(sample.len(), k)?;
    let norm = nml_log_normalizer(sample.alphabet(), sample.len(), k, budget)?;
    let counts = SampleCounts::build(sample, k + 1)?;
    Ok(-counts.log_ml(k)?.bits() + norm)
}

/// Index of the smallest minimizer, treating scores within
/// [`TIE_TOLERANCE`] of the minimum as tied.
pub fn smallest_minimizer(scores: &[f64]) -> usize {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    scores
        .iter()
        .position(|&s| s <= min + TIE_TOLERANCE)
        .unwrap_or(0)
}

/// Criterion values for `k = 0..=r`.
pub fn criterion_trace(sample: &Sample, criterion: Criterion, r: usize, nml_budget: u64) -> Result<Vec<f64>> {
    let n = sample.len();
    if r >= n {
        return Err(Error::OrderOutOfRange {
            k: r,
            n,
            requirement: "bound r ≤ n-1",
        });
    }
    match criterion {
        Criterion::Pml(pen) => {
            pen.validate()?;
            penalty_weight(sample.alphabet(), r)?;
            let counts = SampleCounts::build(sample, r + 1)?;
            (0..=r).map(|k| pml_from_counts(&counts, k, pen)).collect()
        }
        Criterion::Kt => (0..=r)
            .map(|k| kt_log2_sequential(sample.data(), sample.alphabet(), k).map(|v| -v))
            .collect(),
        Criterion::Nml => {
            penalty_weight(sample.alphabet(), r)?;
            let counts = SampleCounts::build(sample, r + 1)?;
            (0..=r)
                .map(|k| {
                    let norm = nml_log_normalizer(sample.alphabet(), n, k, nml_budget)?;
                    Ok(-counts.log_ml(k)?.bits() + norm)
                })
                .collect()
        }
    }
}

/// NML trace for `k = 0..norms.len()` from precomputed `log Σ(n, k)`, for
/// callers scoring many samples of the same length.
pub fn nml_trace_with_normalizers(sample: &Sample, norms: &[f64]) -> Result<Vec<f64>> {
    let r = norms.len().checked_sub(1).ok_or(Error::EmptyWindow { depth: 0, window: 0 })?;
    check_order(sample.len(), r)?;
    penalty_weight(sample.alphabet(), r)?;
    let counts = SampleCounts::build(sample, r + 1)?;
    norms
        .iter()
        .enumerate()
        .map(|(k, norm)| Ok(-counts.log_ml(k)?.bits() + norm))
        .collect()
}

/// Arg-min of the criterion over `0 ≤ k ≤ r`, with the default NML budget.
pub fn estimate_order(sample: &Sample, criterion: Criterion, r: usize) -> Result<OrderEstimate> {
    estimate_order_with_budget(sample, criterion, r, DEFAULT_NML_BUDGET)
}

pub fn estimate_order_with_budget(
    sample: &Sample,
    criterion: Criterion,
    r: usize,
    nml_budget: u64,
) -> Result<OrderEstimate> {
    let trace = criterion_trace(sample, criterion, r, nml_budget)?;
    Ok(OrderEstimate {
        chosen_k: smallest_minimizer(&trace),
        scores: trace.into_iter().enumerate().collect(),
        bound_used: r,
        criterion,
    })
}
