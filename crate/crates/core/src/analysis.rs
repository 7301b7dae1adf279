//! Oracle order estimation, the `K_n` threshold, and evaluators for the
//! explicit probability bounds on order over- and underestimation, entropy
//! deviation, and d̄ error of the empirical Markov estimator.
//!
//! Bounds are evaluated as printed, constants included, and clamped to
//! `[0, 1]`. Logarithms are base 2 and `exp` is natural.

use std::collections::BTreeMap;
use std::f64::consts::{E, LOG2_E};

use serde::{Deserialize, Serialize};

use crate::criteria::{smallest_minimizer, Criterion};
use crate::error::{Error, Result};
use crate::processes::Quantity;
use crate::types::{Alphabet, PenaltySpec};

/// `e^{1/e}`.
fn e_pow_inv_e() -> f64 {
    E.powf(1.0 / E)
}

fn clamp01(p: f64) -> f64 {
    if p.is_nan() {
        1.0
    } else {
        p.clamp(0.0, 1.0)
    }
}

fn hypothesis(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Hypothesis(msg()))
    }
}

fn penalty_weight(alphabet: Alphabet, k: usize) -> f64 {
    (alphabet.size() as f64 - 1.0) * (alphabet.size() as f64).powi(k as i32)
}

/// `PML_{o,n}(k) = (n-k) h_k + (|A|-1)|A|^k pen(n)` for `k < min(|h|, n)`.
pub fn oracle_pml_scores(h: &[f64], n: usize, pen: PenaltySpec, alphabet: Alphabet) -> Vec<f64> {
    let p = pen.eval(n as f64);
    h.iter()
        .take(n)
        .enumerate()
        .map(|(k, &hk)| (n - k) as f64 * hk + penalty_weight(alphabet, k) * p)
        .collect()
}

/// Smallest minimizer of the oracle PML criterion over `0 ≤ k < n`.
///
/// Orders beyond the supplied `h` are excluded once the best score is below
/// their penalty alone, since `(n-k) h_k ≥ 0`; otherwise more `h` values are
/// requested.
pub fn oracle_pml_order(h: &[f64], n: usize, pen: PenaltySpec, alphabet: Alphabet) -> Result<usize> {
    pen.validate()?;
    if h.is_empty() {
        return Err(Error::Config("oracle order needs at least h_0".into()));
    }
    let scores = oracle_pml_scores(h, n, pen, alphabet);
    let k = smallest_minimizer(&scores);
    if scores.len() < n {
        let next_penalty = penalty_weight(alphabet, scores.len()) * pen.eval(n as f64);
        if scores[k] >= next_penalty {
            return Err(Error::Config(format!(
                "h_0..h_{} cannot certify the oracle minimum at n = {n}; supply more orders",
                h.len() - 1
            )));
        }
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleOrder {
    pub k: usize,
    /// Whether the arg-min survives moving `h_k` by ±3 standard errors in
    /// the least favourable direction.
    pub stable: bool,
}

/// [`oracle_pml_order`] on estimated `h` with the ±3σ stability check.
pub fn oracle_pml_order_checked(h: &[Quantity], n: usize, pen: PenaltySpec, alphabet: Alphabet) -> Result<OracleOrder> {
    let values: Vec<f64> = h.iter().map(|q| q.value).collect();
    let k = oracle_pml_order(&values, n, pen, alphabet)?;
    let p = pen.eval(n as f64);
    let score = |j: usize, shift: f64| (n - j) as f64 * (h[j].value + shift * h[j].std_error()) + penalty_weight(alphabet, j) * p;
    let worst_best = score(k, 3.0);
    let stable = (0..h.len().min(n)).filter(|&j| j != k).all(|j| {
        let rival = score(j, -3.0);
        if j < k {
            worst_best < rival
        } else {
            worst_best <= rival
        }
    });
    Ok(OracleOrder { k, stable })
}

/// `K_n(r, γ̄, f) = min{⌊r⌋, k ≥ 0 : γ̄(k) < f}`.
pub fn k_threshold(r_n: f64, gamma_upper: impl Fn(usize) -> f64, f_n: f64) -> usize {
    let cap = r_n.max(0.0).floor() as usize;
    (0..cap).find(|&k| gamma_upper(k) < f_n).unwrap_or(cap)
}

/// [`k_threshold`] over a finite `γ̄` sequence, extended by its last value.
pub fn k_threshold_seq(r_n: f64, gamma_upper: &[f64], f_n: f64) -> usize {
    let last = gamma_upper.last().copied().unwrap_or(0.0);
    k_threshold(r_n, |k| gamma_upper.get(k).copied().unwrap_or(last), f_n)
}

/// `min(1, 2^{λ₁ + 2 log n - λ₂ k})`.
pub fn bound_overshoot(n: f64, k: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    if !(lambda2 > 0.0) {
        return Err(Error::Domain { what: "λ₂ (> 0)", value: lambda2 });
    }
    Ok(clamp01((lambda1 + 2.0 * n.log2() - lambda2 * k).exp2()))
}

/// Non-null preset `(λ₁, λ₂) = (0, |log(1 - p_inf)|)`.
pub fn non_null_lambdas(p_inf: f64) -> Result<(f64, f64)> {
    if !(p_inf > 0.0 && p_inf < 1.0) {
        return Err(Error::Domain { what: "p_inf in (0,1)", value: p_inf });
    }
    Ok((0.0, (1.0 - p_inf).log2().abs()))
}

/// `lead · e^{1/e} · exp(-(7α₀ε³ / (denom·e(α+α₀))) n^{ε/2}/log n + (ε/4) log n)`.
fn deviation_rhs(lead: f64, denom: f64, n: f64, eps: f64, alpha0: f64, alpha: f64) -> f64 {
    let ln = n.log2();
    let expo = -(7.0 * alpha0 * eps.powi(3)) / (denom * E * (alpha + alpha0)) * n.powf(eps / 2.0) / ln + eps / 4.0 * ln;
    clamp01(lead * e_pow_inv_e() * expo.exp())
}

fn check_weak_nonnull(alpha0: f64, alpha: f64) -> Result<()> {
    if !(alpha0 > 0.0 && alpha0 <= 1.0) {
        return Err(Error::Domain { what: "α₀ in (0,1]", value: alpha0 });
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Domain { what: "α ≥ 0", value: alpha });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyDeviationBound {
    /// `n^{-(1/2 - ε)}`.
    pub threshold: f64,
    /// `⌊ε log n / (4 log|A|)⌋`.
    pub max_order: usize,
    /// Bound for `max_{1≤k≤m} |Ĥ_k - H_k|`.
    pub rhs_block: f64,
    /// Bound for `max_{0≤k≤m} |ĥ_k - h_k|`.
    pub rhs_conditional: f64,
}

/// Deviation threshold, order range, and both right-hand sides for the
/// uniform entropy deviation event.
pub fn bound_entropy_deviation(n: f64, eps: f64, alphabet: Alphabet, alpha0: f64, alpha: f64) -> Result<EntropyDeviationBound> {
    hypothesis(eps > 0.0 && eps < 0.5, || format!("0 < ε < 1/2 (got ε = {eps})"))?;
    check_weak_nonnull(alpha0, alpha)?;
    if !(n >= 2.0) {
        return Err(Error::Domain { what: "n ≥ 2", value: n });
    }
    Ok(EntropyDeviationBound {
        threshold: n.powf(-(0.5 - eps)),
        max_order: (eps * n.log2() / (4.0 * alphabet.log2_size()) + 1e-12).floor() as usize,
        rhs_block: deviation_rhs(6.0, 32.0, n, eps, alpha0, alpha),
        rhs_conditional: deviation_rhs(12.0, 256.0, n, eps, alpha0, alpha),
    })
}

/// Which family of underestimation bounds to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UndershootTheorem {
    /// Entropy gaps `h_k - H̄ ≤ δ 2^{-ζk}`.
    EntropyGap,
    /// Two-sided exponential continuity rates.
    ContinuityRates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UndershootBound {
    /// Entropy-gap family: the gap threshold `t_n` defining
    /// `k_n = min{k : h_k - H̄ < t_n}`. Continuity-rate family: `k_n` itself.
    pub threshold: f64,
    /// `k_n` when computable from the inputs.
    pub k_n: Option<f64>,
    /// Bound on `P(k̂ < k_n)` (entropy-gap family) or `P(k̂ ≤ k_n)`.
    pub probability: f64,
}

fn is_pml(criterion: Criterion) -> Option<PenaltySpec> {
    match criterion {
        Criterion::Pml(p) => Some(p),
        _ => None,
    }
}

/// Entropy-gap underestimation bound.
///
/// PML: `t_n = 4 max(√n, (|A|-1) pen(n)) / n^{1-ε}`, valid when
/// `4 log|A|/ζ ≤ ε < 1/2` and `n ≥ (δ 2^ζ)²`. NML/KT: `t_n = 4/n^{1/2-ε}`,
/// valid when `n ≥ max²{√24 log²e (|A|-1)², 2 C_KT, δ 2^ζ}`. When the gaps
/// `h_k - H̄` are supplied, `k_n` is the first order below `t_n`.
#[allow(clippy::too_many_arguments)]
pub fn bound_undershoot_entropy_gap(
    criterion: Criterion,
    n: f64,
    alphabet: Alphabet,
    delta: f64,
    zeta: f64,
    eps: f64,
    alpha0: f64,
    alpha: f64,
    c_kt: Option<f64>,
    entropy_gaps: Option<&[f64]>,
) -> Result<UndershootBound> {
    let la = alphabet.log2_size();
    let a1 = alphabet.size() as f64 - 1.0;
    check_weak_nonnull(alpha0, alpha)?;
    hypothesis(delta > 0.0 && zeta > 0.0, || "δ, ζ > 0".into())?;
    hypothesis(4.0 * la / zeta <= eps && eps < 0.5, || {
        format!("4 log|A|/ζ ≤ ε < 1/2 (4 log|A|/ζ = {}, ε = {eps})", 4.0 * la / zeta)
    })?;
    let base = delta * zeta.exp2();
    let threshold = match is_pml(criterion) {
        Some(pen) => {
            hypothesis(n >= base * base, || format!("n ≥ (δ 2^ζ)² = {}", base * base))?;
            4.0 * n.sqrt().max(a1 * pen.eval(n)) / n.powf(1.0 - eps)
        }
        None => {
            let c_kt = c_kt.ok_or(Error::MissingConstants(vec!["c_kt"]))?;
            let m = (24f64.sqrt() * LOG2_E * LOG2_E * a1 * a1).max(2.0 * c_kt).max(base);
            hypothesis(n >= m * m, || format!("n ≥ max²{{√24 log²e (|A|-1)², 2C_KT, δ2^ζ}} = {}", m * m))?;
            4.0 / n.powf(0.5 - eps)
        }
    };
    let k_n = entropy_gaps.map(|g| g.iter().position(|&x| x < threshold).map_or(f64::INFINITY, |k| k as f64));
    Ok(UndershootBound {
        threshold,
        k_n,
        probability: deviation_rhs(12.0, 256.0, n, eps, alpha0, alpha),
    })
}

/// Continuity-rate `k_n` formula without hypothesis checks:
/// `(1/(2ζ₂)) (2 log δ₂ - 3 + (1/2 - ε) log n - log max{1, (|A|-1) pen(n)/√n})`,
/// the last term present for PML only.
pub fn continuity_rate_k_n(criterion: Criterion, n: f64, alphabet: Alphabet, delta2: f64, zeta2: f64, eps: f64) -> f64 {
    let mut inner = 2.0 * delta2.log2() - 3.0 + (0.5 - eps) * n.log2();
    if let Some(pen) = is_pml(criterion) {
        let a1 = alphabet.size() as f64 - 1.0;
        inner -= (a1 * pen.eval(n) / n.sqrt()).max(1.0).log2();
    }
    inner / (2.0 * zeta2)
}

/// Continuity-rate underestimation bound for `γ̄(k) ≤ δ₁2^{-ζ₁k}`,
/// `γ̲(k) ≥ δ₂2^{-ζ₂k}`, `ζ₂ ≥ ζ₁`, with `6 log|A|/ζ₁ ≤ ε < 1/2`.
#[allow(clippy::too_many_arguments)]
pub fn bound_undershoot_continuity(
    criterion: Criterion,
    n: f64,
    alphabet: Alphabet,
    delta1: f64,
    zeta1: f64,
    delta2: f64,
    zeta2: f64,
    eps: f64,
    alpha0: f64,
    alpha: f64,
    c_kt: Option<f64>,
) -> Result<UndershootBound> {
    let la = alphabet.log2_size();
    let a1 = alphabet.size() as f64 - 1.0;
    check_weak_nonnull(alpha0, alpha)?;
    hypothesis(delta1 > 0.0 && delta2 > 0.0 && zeta1 > 0.0, || "δ₁, δ₂, ζ₁ > 0".into())?;
    hypothesis(zeta2 >= zeta1, || format!("ζ₂ ≥ ζ₁ (ζ₁ = {zeta1}, ζ₂ = {zeta2})"))?;
    hypothesis(6.0 * la / zeta1 <= eps && eps < 0.5, || {
        format!("6 log|A|/ζ₁ ≤ ε < 1/2 (6 log|A|/ζ₁ = {}, ε = {eps})", 6.0 * la / zeta1)
    })?;
    match is_pml(criterion) {
        Some(_) => {
            let need = 36.0 * delta1.powf(4.0 / 3.0) * (4.0 * zeta1 / 3.0).exp2() * la * la / (LOG2_E * LOG2_E);
            hypothesis(n >= need, || format!("n ≥ 36 δ₁^{{4/3}} 2^{{4ζ₁/3}} log²|A| / log²e = {need}"))?;
        }
        None => {
            let c_kt = c_kt.ok_or(Error::MissingConstants(vec!["c_kt"]))?;
            let third = 6.0 * delta1.powf(2.0 / 3.0) * (2.0 * zeta1 / 3.0).exp2() * la / LOG2_E;
            let m = (24f64.sqrt() * LOG2_E * LOG2_E * a1 * a1).max(2.0 * c_kt).max(third);
            hypothesis(n >= m * m, || format!("n ≥ max²{{√24 log²e (|A|-1)², 2C_KT, 6δ₁^{{2/3}}2^{{2ζ₁/3}} log|A|/log e}} = {}", m * m))?;
        }
    }
    let k_n = continuity_rate_k_n(criterion, n, alphabet, delta2, zeta2, eps);
    Ok(UndershootBound {
        threshold: k_n,
        k_n: Some(k_n),
        probability: deviation_rhs(12.0, 256.0, n, eps, alpha0, alpha),
    })
}

/// Truncation point for infinite products over `γ̄`.
const PRODUCT_TAIL: f64 = 1.0 / (1u64 << 60) as f64;
const PRODUCT_MAX_TERMS: usize = 1 << 20;

/// `β₁ = 1/Π_{j≥1}(1 - 2γ̄(j))` and
/// `β₂ = sup_{k≥1} 2|A| (1 - (1 - 2|A|γ̄(k))^k) / (k γ̄(k) Π_{j≥1}(1 - 2|A|γ̄(j))²)`.
///
/// Products stop once `2|A|γ̄(j) < 2^{-60}` (`γ̄` nonincreasing). A term with
/// `γ̄(k) = 0` takes its limit `4|A|²/Π²`.
pub fn beta_constants(gamma_upper: impl Fn(usize) -> f64, alphabet: Alphabet) -> Result<(f64, f64)> {
    let a = alphabet.size() as f64;
    let mut p1 = 1.0f64;
    let mut p2 = 1.0f64;
    let mut terms = Vec::new();
    let mut j = 1usize;
    loop {
        let g = gamma_upper(j);
        if !(g >= 0.0) {
            return Err(Error::Domain { what: "γ̄(j) ≥ 0", value: g });
        }
        if 2.0 * a * g >= 1.0 {
            return Err(Error::Hypothesis(format!(
                "β₂ needs 2|A|γ̄(j) < 1 for all j ≥ 1 (γ̄({j}) = {g})"
            )));
        }
        p1 *= 1.0 - 2.0 * g;
        p2 *= 1.0 - 2.0 * a * g;
        terms.push(g);
        if 2.0 * a * g < PRODUCT_TAIL {
            break;
        }
        j += 1;
        if j > PRODUCT_MAX_TERMS {
            return Err(Error::NonConvergence {
                iterations: PRODUCT_MAX_TERMS,
                residual: g,
            });
        }
    }
    // The k = 1 term equals the γ̄ → 0 limit 4|A|²/Π², so the sup is attained.
    let denom = p2 * p2;
    let mut beta2 = 0.0f64;
    for (i, &g) in terms.iter().enumerate() {
        let k = (i + 1) as f64;
        let ratio = if g == 0.0 {
            2.0 * a
        } else {
            -((-2.0 * a * g).ln_1p() * k).exp_m1() / (k * g)
        };
        beta2 = beta2.max(2.0 * a * ratio / denom);
    }
    Ok((1.0 / p1, beta2))
}

/// Everything the d̄ bound consumes. Missing entries are reported together.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbarBoundInputs {
    pub p_inf: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha0: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub k_theta: Option<f64>,
    pub c_kt: Option<f64>,
    /// The arbitrary constant `c > 0` in `K_n(η log n, γ̄, c·pen(n)/n)`.
    pub c: Option<f64>,
    pub eta: Option<f64>,
    pub mu: Option<f64>,
    /// The arbitrary sequence `h_n ∈ ℕ`, held constant.
    pub h_n: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DbarBound {
    pub g_n: f64,
    pub k_n: usize,
    /// `β₂/p_inf² · g_n + n^{-(1/2-μ)}`.
    pub threshold: f64,
    pub terms: [f64; 3],
    /// Sum of the three terms, clamped to `[0, 1]`.
    pub probability: f64,
}

/// d̄ error bound for the empirical Markov estimator with bounded PML order
/// `k̂_PML(X | η log n)`, including the sample-size condition on
/// `γ̄` and `k_θ`.
pub fn bound_dbar(
    inputs: &DbarBoundInputs,
    n: f64,
    pen: PenaltySpec,
    alphabet: Alphabet,
    gamma_upper: impl Fn(usize) -> f64,
) -> Result<DbarBound> {
    let mut missing = Vec::new();
    macro_rules! need {
        ($f:ident) => {
            match inputs.$f {
                Some(v) => v,
                None => {
                    missing.push(stringify!($f));
                    f64::NAN
                }
            }
        };
    }
    let p_inf = need!(p_inf);
    let alpha = need!(alpha);
    let alpha0 = need!(alpha0);
    let beta1 = need!(beta1);
    let beta2 = need!(beta2);
    let theta1 = need!(theta1);
    let theta2 = need!(theta2);
    let k_theta = need!(k_theta);
    let c_kt = need!(c_kt);
    let c = need!(c);
    let eta = need!(eta);
    let mu = need!(mu);
    let h = need!(h_n);
    if !missing.is_empty() {
        return Err(Error::MissingConstants(missing));
    }
    if !(p_inf > 0.0 && p_inf < 1.0) {
        return Err(Error::Domain { what: "p_inf in (0,1)", value: p_inf });
    }
    check_weak_nonnull(alpha0, alpha)?;
    hypothesis(theta1 >= 1.0 && theta2 > 1.0, || "θ₁ ≥ 1 and θ₂ > 1".into())?;
    hypothesis(eta > 0.0 && mu > 0.0 && c > 0.0, || "η, μ, c > 0".into())?;
    let pen_n = pen.eval(n);
    hypothesis(pen_n >= 0.5 * n.log2(), || "pen(n) ≥ ½ log n".into())?;

    let a = alphabet.size() as f64;
    let la = alphabet.log2_size();
    let log_n = n.log2();
    let l4 = (a.powi(4) / p_inf).log2();
    let k_cap = ((eta / theta2) * log_n).floor().max(0.0) as usize;

    let cond_target = (6.0 * n.sqrt().max((a - 1.0) * pen_n) / (p_inf * n.powf(1.0 - eta * l4))).powf(1.0 / (2.0 * theta1));
    let cond = (0..k_cap).find(|&k| gamma_upper(k) < cond_target).unwrap_or(k_cap);
    hypothesis(cond as f64 >= k_theta, || {
        format!("min{{⌊(η/θ₂) log n⌋, k : γ̄(k) < …}} = {cond} must be ≥ k_θ = {k_theta}")
    })?;

    let poly = (6.0 * (1.0f64).max((a - 1.0) * pen_n / n.sqrt()) / (p_inf * n.powf(0.5 - eta * l4))).powf(1.0 / (2.0 * theta1));
    let g_n = gamma_upper(k_cap).max(poly);
    let threshold = beta2 / (p_inf * p_inf) * g_n + n.powf(-(0.5 - mu));

    let k_n = k_threshold(eta * log_n, &gamma_upper, c * pen_n / n);
    let kh = k_n as f64 + h;
    let lp = p_inf.log2().abs();
    let b1 = (beta1 + 1.0).powi(2);

    let t1 = {
        let rate = p_inf * p_inf / (16.0 * E * a.powi(3) * (alpha + p_inf) * b1);
        let bracket = 4f64.powf(mu * log_n) - kh * lp * b1 / 2.0;
        let expo = -rate * (n - kh) / ((1.0 + kh) * n) * 4f64.powf(-kh * lp) * bracket;
        2.0 * e_pow_inv_e() * a.powf(kh + 2.0) * expo.exp()
    };
    let t2 = {
        let expo = -7.0 * alpha0 * la.powi(3) * eta.powi(3) / (4.0 * E * (alpha + alpha0)) * n.powf(2.0 * eta * la) / log_n
            + eta * la * log_n;
        12.0 * e_pow_inv_e() * expo.exp()
    };
    let t3 = {
        let w = a.powf(kh + 1.0);
        let bracket = 1.0 - 1.0 / a.powf(1.0 + h) - (log_n - kh * la) / (2.0 * pen_n);
        let expo = -(a - 1.0) * w * pen_n * bracket + c * pen_n * LOG2_E / p_inf + w * c_kt + (eta * log_n).log2();
        expo.exp()
    };
    Ok(DbarBound {
        g_n,
        k_n,
        threshold,
        terms: [t1, t2, t3],
        probability: clamp01(t1 + t2 + t3),
    })
}

/// Which bound a grid evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theorem {
    /// Overestimation, `2^{λ₁ + 2 log n - λ₂ k}`.
    T2,
    /// Uniform entropy deviation.
    T6,
    /// Continuity-rate underestimation.
    T8,
    /// d̄ error of the empirical Markov estimator.
    T10,
    /// Entropy-gap underestimation.
    Prop1,
}

impl std::str::FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t2" => Ok(Theorem::T2),
            "t6" => Ok(Theorem::T6),
            "t8" => Ok(Theorem::T8),
            "t10" => Ok(Theorem::T10),
            "prop1" => Ok(Theorem::Prop1),
            other => Err(Error::Parse(format!("unknown theorem {other:?}"))),
        }
    }
}

/// `γ̄` description for bound files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    /// `γ̄(k) = δ 2^{-ζk}`.
    Geometric { delta: f64, zeta: f64 },
    /// Explicit values; later orders take 0.
    Values(Vec<f64>),
}

impl GammaSpec {
    pub fn eval(&self, k: usize) -> f64 {
        match self {
            GammaSpec::Geometric { delta, zeta } => delta * (-zeta * k as f64).exp2(),
            GammaSpec::Values(v) => v.get(k).copied().unwrap_or(0.0),
        }
    }
}

/// Parameters for grid evaluation of any bound (the `bounds` file format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundInputs {
    pub alphabet_size: usize,
    pub criterion: Criterion,
    pub epsilon: Option<f64>,
    /// Order `k_n` for the overestimation bound.
    pub k: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub delta: Option<f64>,
    pub zeta: Option<f64>,
    pub delta1: Option<f64>,
    pub zeta1: Option<f64>,
    pub delta2: Option<f64>,
    pub zeta2: Option<f64>,
    pub gamma_upper: Option<GammaSpec>,
    /// Use `0 ≤ k ≤ m` conditional-entropy form (default) or the block form.
    pub block_entropy: bool,
    #[serde(flatten)]
    pub dbar: DbarBoundInputs,
    /// Free-form provenance notes per constant.
    pub provenance: BTreeMap<String, String>,
}

impl Default for BoundInputs {
    fn default() -> Self {
        BoundInputs {
            alphabet_size: 2,
            criterion: Criterion::Pml(PenaltySpec::Bic),
            epsilon: None,
            k: None,
            lambda1: None,
            lambda2: None,
            delta: None,
            zeta: None,
            delta1: None,
            zeta1: None,
            delta2: None,
            zeta2: None,
            gamma_upper: None,
            block_entropy: false,
            dbar: DbarBoundInputs::default(),
            provenance: BTreeMap::new(),
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub n: f64,
    pub threshold: f64,
    pub bound: f64,
}

fn require(v: Option<f64>, name: &'static str, missing: &mut Vec<&'static str>) -> f64 {
    v.unwrap_or_else(|| {
        missing.push(name);
        f64::NAN
    })
}

/// Evaluate one theorem at one sample size.
pub fn evaluate_bound(theorem: Theorem, inputs: &BoundInputs, n: f64) -> Result<BoundRow> {
    let alphabet = Alphabet::new(inputs.alphabet_size)?;
    let mut missing = Vec::new();
    let row = |threshold, bound| Ok(BoundRow { n, threshold, bound });
    match theorem {
        Theorem::T2 => {
            let k = require(inputs.k, "k", &mut missing);
            let (l1, l2) = match (inputs.lambda1, inputs.lambda2, inputs.dbar.p_inf) {
                (Some(a), Some(b), _) => (a, b),
                (None, None, Some(p)) => non_null_lambdas(p)?,
                _ => {
                    missing.push("lambda1, lambda2 (or p_inf)");
                    (f64::NAN, f64::NAN)
                }
            };
            if !missing.is_empty() {
                return Err(Error::MissingConstants(missing));
            }
            row(k, bound_overshoot(n, k, l1, l2)?)
        }
        Theorem::T6 => {
            let eps = require(inputs.epsilon, "epsilon", &mut missing);
            let a0 = require(inputs.dbar.alpha0, "alpha0", &mut missing);
            let a = require(inputs.dbar.alpha, "alpha", &mut missing);
            if !missing.is_empty() {
                return Err(Error::MissingConstants(missing));
            }
            let b = bound_entropy_deviation(n, eps, alphabet, a0, a)?;
            row(b.threshold, if inputs.block_entropy { b.rhs_block } else { b.rhs_conditional })
        }
        Theorem::Prop1 => {
            let eps = require(inputs.epsilon, "epsilon", &mut missing);
            let d = require(inputs.delta, "delta", &mut missing);
            let z = require(inputs.zeta, "zeta", &mut missing);
            let a0 = require(inputs.dbar.alpha0, "alpha0", &mut missing);
            let a = require(inputs.dbar.alpha, "alpha", &mut missing);
            if !missing.is_empty() {
                return Err(Error::MissingConstants(missing));
            }
            let b = bound_undershoot_entropy_gap(inputs.criterion, n, alphabet, d, z, eps, a0, a, inputs.dbar.c_kt, None)?;
            row(b.threshold, b.probability)
        }
        Theorem::T8 => {
            let eps = require(inputs.epsilon, "epsilon", &mut missing);
            let d1 = require(inputs.delta1, "delta1", &mut missing);
            let z1 = require(inputs.zeta1, "zeta1", &mut missing);
            let d2 = require(inputs.delta2, "delta2", &mut missing);
            let z2 = require(inputs.zeta2, "zeta2", &mut missing);
            let a0 = require(inputs.dbar.alpha0, "alpha0", &mut missing);
            let a = require(inputs.dbar.alpha, "alpha", &mut missing);
            if !missing.is_empty() {
                return Err(Error::MissingConstants(missing));
            }
            let b = bound_undershoot_continuity(inputs.criterion, n, alphabet, d1, z1, d2, z2, eps, a0, a, inputs.dbar.c_kt)?;
            row(b.threshold, b.probability)
        }
        Theorem::T10 => {
            let pen = match inputs.criterion {
                Criterion::Pml(p) => p,
                _ => return Err(Error::Config("the d̄ bound applies to PML order estimates only".into())),
            };
            let gamma = inputs
                .gamma_upper
                .clone()
                .ok_or(Error::MissingConstants(vec!["gamma_upper"]))?;
            let mut dbar = inputs.dbar.clone();
            if dbar.beta1.is_none() || dbar.beta2.is_none() {
                let (b1, b2) = beta_constants(|k| gamma.eval(k), alphabet)?;
                dbar.beta1.get_or_insert(b1);
                dbar.beta2.get_or_insert(b2);
            }
            let b = bound_dbar(&dbar, n, pen, alphabet, |k| gamma.eval(k))?;
            row(b.threshold, b.probability)
        }
    }
}

/// Evaluate a theorem over `n = 2^{start}, 2^{start+step}, …` up to `2^{stop}`.
pub fn evaluate_grid(theorem: Theorem, inputs: &BoundInputs, log2_ns: &[f64]) -> Result<Vec<BoundRow>> {
    log2_ns.iter().map(|&l| evaluate_bound(theorem, inputs, l.exp2())).collect()
}

/// First grid point where `bound < 1`, if any.
pub fn first_nonvacuous(rows: &[BoundRow]) -> Option<f64> {
    rows.iter().find(|r| r.bound < 1.0).map(|r| r.n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::{MarkovChainModel, MonteCarloSettings, ProcessModel};

    #[test]
    fn oracle_examples() {
        let a = Alphabet::BINARY;
        assert_eq!(oracle_pml_order(&[1.0; 12], 1 << 12, PenaltySpec::Bic, a).unwrap(), 0);
        assert_eq!(oracle_pml_order(&[0.9; 8], 100, PenaltySpec::Aic, a).unwrap(), 0);
        let m = MarkovChainModel::binary_order1([[0.7, 0.3], [0.2, 0.8]]).unwrap();
        let h: Vec<f64> = m
            .true_entropies(12, &MonteCarloSettings::default())
            .unwrap()
            .iter()
            .map(|q| q.value)
            .collect();
        let n = 1 << 14;
        assert_eq!(oracle_pml_order(&h, n, PenaltySpec::Bic, a).unwrap(), 1);
        // Hand values: k=0: n·0.970951 + 7, k=1: (n-1)·0.785673 + 14.
        let s = oracle_pml_scores(&h, n, PenaltySpec::Bic, a);
        assert!((s[0] - (n as f64 * h[0] + 7.0)).abs() < 1e-9);
        assert!((s[1] - ((n - 1) as f64 * h[1] + 14.0)).abs() < 1e-9);
    }

    #[test]
    fn oracle_needs_enough_orders() {
        // With a single order, k=0 must beat the k=1 penalty alone.
        assert!(oracle_pml_order(&[1.0], 1 << 10, PenaltySpec::Bic, Alphabet::BINARY).is_err());
        assert!(oracle_pml_order(&[0.0], 1 << 10, PenaltySpec::Bic, Alphabet::BINARY).is_ok());
    }

    #[test]
    fn oracle_stability_flags_close_calls() {
        let n = 1 << 10;
        let a = Alphabet::BINARY;
        let h = |se: f64| {
            let mut v = vec![Quantity::monte_carlo(0.5, se)];
            v.extend(vec![Quantity::monte_carlo(0.4, se); 11]);
            v
        };
        let tight = oracle_pml_order_checked(&h(1e-6), n, PenaltySpec::Aic, a).unwrap();
        assert_eq!(tight.k, 1);
        assert!(tight.stable);
        assert!(!oracle_pml_order_checked(&h(0.1), n, PenaltySpec::Aic, a).unwrap().stable);
    }

    #[test]
    fn k_threshold_examples() {
        let g = |k: usize| (-(k as f64)).exp2();
        assert_eq!(k_threshold(100.0, g, 0.1), 4);
        assert_eq!(k_threshold(100.0, |_| 0.0, 0.3), 0);
        assert_eq!(k_threshold(5.0, g, 1e-9), 5);
        assert_eq!(k_threshold_seq(5.9, &[1.0, 0.5], 0.1), 5);
    }

    #[test]
    fn overshoot_examples() {
        assert_eq!(bound_overshoot(4.0, 10.0, 0.0, 1.0).unwrap(), 0.015625);
        assert_eq!(bound_overshoot(4.0, 0.0, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(non_null_lambdas(0.5).unwrap(), (0.0, 1.0));
        assert!(bound_overshoot(4.0, 1.0, 0.0, 0.0).is_err());
        let mut last = 1.0;
        for k in 0..60 {
            let b = bound_overshoot(1024.0, k as f64, 0.0, 0.7).unwrap();
            assert!(b <= last);
            last = b;
        }
    }

    #[test]
    fn entropy_deviation_examples() {
        let b = bound_entropy_deviation(65536.0, 0.25, Alphabet::BINARY, 1.0, 0.0).unwrap();
        assert_eq!(b.max_order, 1);
        assert!((b.threshold - 1.0 / 16.0).abs() < 1e-15);
        assert!(bound_entropy_deviation(65536.0, 0.5, Alphabet::BINARY, 1.0, 0.0).is_err());
        // Vacuous at small n; nonvacuous at some finite grid point.
        assert_eq!(b.rhs_conditional, 1.0);
        let inputs = BoundInputs {
            epsilon: Some(0.25),
            dbar: DbarBoundInputs {
                alpha0: Some(1.0),
                alpha: Some(0.0),
                ..Default::default()
            },
            ..Default::default()
        };
        let grid: Vec<f64> = (10..=400).map(|l| l as f64).collect();
        let rows = evaluate_grid(Theorem::T6, &inputs, &grid).unwrap();
        let first = first_nonvacuous(&rows).expect("bound eventually informative");
        assert!(first > 65536.0);
    }

    #[test]
    fn undershoot_formula_example() {
        let k = continuity_rate_k_n(Criterion::Kt, 65536.0, Alphabet::BINARY, 1.0, 1.0, 0.25);
        assert!((k - 0.5).abs() < 1e-12);
        let err = bound_undershoot_continuity(
            Criterion::Kt, 65536.0, Alphabet::BINARY, 1.0, 1.0, 1.0, 1.0, 0.25, 1.0, 0.0, Some(1.0),
        )
        .unwrap_err();
        assert!(err.to_string().contains("6 log|A|/ζ₁ ≤ ε"));
    }

    #[test]
    fn undershoot_checked_paths() {
        let a = Alphabet::BINARY;
        let pml = Criterion::Pml(PenaltySpec::Bic);
        let n = 2f64.powi(40);
        let b = bound_undershoot_continuity(pml, n, a, 1.0, 15.0, 1.0, 15.0, 0.45, 1.0, 0.0, None).unwrap();
        assert_eq!(b.k_n, Some(b.threshold));
        let missing = bound_undershoot_continuity(Criterion::Kt, n, a, 1.0, 15.0, 1.0, 15.0, 0.45, 1.0, 0.0, None);
        assert!(matches!(missing, Err(Error::MissingConstants(_))));
        let g = bound_undershoot_entropy_gap(pml, n, a, 1.0, 20.0, 0.2, 1.0, 0.0, None, Some(&[0.5, 0.1, 0.0])).unwrap();
        let t = 4.0 * n.sqrt().max(0.5 * n.log2()) / n.powf(0.8);
        assert!((g.threshold - t).abs() < 1e-15);
        assert_eq!(g.k_n, Some(2.0));
        assert!(bound_undershoot_entropy_gap(pml, n, a, 1.0, 2.0, 0.2, 1.0, 0.0, None, None).is_err());
    }

    #[test]
    fn undershoot_probability_decreases_past_crossover() {
        let a = Alphabet::BINARY;
        let vals: Vec<f64> = (20..=200).step_by(5)
            .map(|l| {
                bound_undershoot_entropy_gap(Criterion::Pml(PenaltySpec::Bic), 2f64.powi(l), a, 1.0, 10.0, 0.4, 1.0, 0.0, None, None)
                    .unwrap()
                    .probability
            })
            .collect();
        assert!(vals.iter().any(|&v| v < 1.0));
        let mut seen_small = false;
        for w in vals.windows(2) {
            if w[0] < 1.0 {
                seen_small = true;
            }
            if seen_small {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn beta_constants_cases() {
        let a = Alphabet::BINARY;
        let (b1, b2) = beta_constants(|_| 0.0, a).unwrap();
        assert_eq!(b1, 1.0);
        assert_eq!(b2, 16.0);
        // Geometric rates: truncated product matches a long direct product.
        let g = |k: usize| 0.4 * 0.5f64.powi(k as i32);
        let (b1, b2) = beta_constants(g, a).unwrap();
        let direct: f64 = (1..200).map(|j| 1.0 - 2.0 * g(j)).product();
        assert!((b1 - 1.0 / direct).abs() < 1e-12);
        let p2: f64 = (1..200).map(|j| 1.0 - 4.0 * g(j)).product();
        assert!((b2 - 16.0 / (p2 * p2)).abs() / b2 < 1e-12);
        assert!(beta_constants(|_| 0.3, a).is_err());
    }

    #[test]
    fn dbar_bound_markov_case_reduces_to_polynomial_term() {
        let gamma = |k: usize| if k >= 1 { 0.0 } else { 0.6 };
        let inputs = DbarBoundInputs {
            p_inf: Some(0.2),
            alpha: Some(0.5),
            alpha0: Some(0.5),
            beta1: Some(1.0),
            beta2: Some(16.0),
            theta1: Some(1.0),
            theta2: Some(1.01),
            k_theta: Some(2.0),
            c_kt: Some(1.0),
            c: Some(1.0),
            eta: Some(0.02),
            mu: Some(0.1),
            h_n: Some(0.0),
        };
        let n = 2f64.powi(30);
        let inputs = DbarBoundInputs {
            eta: Some(0.05),
            k_theta: Some(3.0),
            ..inputs
        };
        // ⌊(η/θ₂) log n⌋ = 1 < k_θ = 3.
        let b = bound_dbar(&inputs, n, PenaltySpec::Bic, Alphabet::BINARY, gamma);
        assert!(matches!(b, Err(Error::Hypothesis(_))));
        let inputs = DbarBoundInputs { k_theta: Some(0.0), ..inputs };
        let b = bound_dbar(&inputs, n, PenaltySpec::Bic, Alphabet::BINARY, gamma).unwrap();
        let l4 = (16.0f64 / 0.2).log2();
        let poly = (6.0 * n.powf(-(0.5 - 0.05 * l4)) / 0.2).sqrt();
        assert!((b.g_n - poly).abs() / poly < 1e-12);
        assert!((b.threshold - (16.0 / 0.04 * poly + n.powf(-0.4))).abs() < 1e-9);
        assert!(b.probability >= 0.0 && b.probability <= 1.0);
        let missing = bound_dbar(&DbarBoundInputs::default(), n, PenaltySpec::Bic, Alphabet::BINARY, gamma);
        match missing {
            Err(Error::MissingConstants(v)) => assert_eq!(v.len(), 13),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bounds_file_parses() {
        let text = r#"
            alphabet_size = 2
            criterion = "kt"
            epsilon = 0.25
            alpha0 = 1.0
            alpha = 0.0
            [provenance]
            alpha0 = "exact, i.i.d. uniform"
        "#;
        let inputs: BoundInputs = toml::from_str(text).unwrap();
        assert_eq!(inputs.criterion, Criterion::Kt);
        let row = evaluate_bound(Theorem::T6, &inputs, 1024.0).unwrap();
        assert_eq!(row.bound, 1.0);
        assert!(evaluate_bound(Theorem::T2, &inputs, 1024.0).is_err());
        assert!(toml::from_str::<BoundInputs>("alphabet_size = 2\nepsilom = 0.25").is_err());
    }
}
