//! Per-letter Hamming distance and the d̄-distance between `n`-block laws.
//!
//! [`dbar_exact`] solves the coupling problem as a transportation problem on
//! the two supports and certifies optimality. [`dbar_upper_greedy`] averages
//! the cost of one sequential maximal coupling, which bounds d̄ from above.
//! [`empirical_markov_estimator`] builds the stationary order-`k` chain with
//! the empirical transition probabilities of a sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::counting::empirical_cond_prob;
use crate::error::{Error, Result};
use crate::processes::{MarkovChainModel, SequentialLaw, MAX_TRANSITION_CELLS};
use crate::transport;
use crate::types::{decode, encode, Alphabet, Sample, SeedSpec};

/// Default budget on `|A|^n` for [`block_distribution`].
pub const DEFAULT_BLOCK_BUDGET: u64 = 1 << 20;
/// Default budget on `|supp P|·|supp Q|` for [`dbar_exact`].
pub const DEFAULT_DBAR_BUDGET: u64 = 1 << 24;

/// `(1/n) Σ 1[x_i ≠ y_i]`.
pub fn hamming_per_letter(x: &[u8], y: &[u8]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(mismatches(x, y) as f64 / x.len() as f64)
}

fn mismatches(x: &[u8], y: &[u8]) -> usize {
    x.iter().zip(y).filter(|(a, b)| a != b).count()
}

/// Law of an `n`-block, dense over codes (first symbol most significant).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockDistribution {
    n: usize,
    alphabet: Alphabet,
    probs: Vec<f64>,
    /// L1 bound on the distance to the exact block law when it was built
    /// from approximate conditional laws.
    truncation_error: f64,
}

impl BlockDistribution {
    /// Validates nonnegativity and normalization within `1e-12`.
    pub fn new(n: usize, alphabet: Alphabet, probs: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let cells = alphabet.checked_pow(n).ok_or(Error::OrderOverflow {
            k: n,
            max_k: alphabet.max_code_depth(),
        })?;
        if probs.len() as u64 != cells {
            return Err(Error::LengthMismatch {
                left: probs.len(),
                right: cells as usize,
            });
        }
        if let Some(&p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::Domain {
                what: "block probability",
                value: p,
            });
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain {
                what: "block probabilities summing to 1",
                value: total,
            });
        }
        Ok(Self {
            n,
            alphabet,
            probs,
            truncation_error: 0.0,
        })
    }

    /// Point mass on `x`.
    pub fn point_mass(alphabet: Alphabet, x: &[u8]) -> Result<Self> {
        let sample = Sample::new(alphabet, x.to_vec())?;
        let cells = alphabet.checked_pow(x.len()).ok_or(Error::OrderOverflow {
            k: x.len(),
            max_k: alphabet.max_code_depth(),
        })?;
        let mut probs = vec![0.0; cells as usize];
        probs[encode(sample.data(), alphabet) as usize] = 1.0;
        Self::new(x.len(), alphabet, probs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    /// Masses indexed by block code.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, x: &[u8]) -> f64 {
        if x.len() != self.n {
            return 0.0;
        }
        self.probs[encode(x, self.alphabet) as usize]
    }

    pub fn truncation_error(&self) -> f64 {
        self.truncation_error
    }

    /// Codes with positive mass, ascending.
    pub fn support(&self) -> Vec<u64> {
        (0..self.probs.len() as u64).filter(|&c| self.probs[c as usize] > 0.0).collect()
    }

    /// Total-variation distance `½ Σ |P(x) - Q(x)|`.
    pub fn total_variation(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(0.5 * self.probs.iter().zip(&other.probs).map(|(p, q)| (p - q).abs()).sum::<f64>())
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.alphabet != other.alphabet {
            return Err(Error::LengthMismatch {
                left: self.alphabet.size(),
                right: other.alphabet.size(),
            });
        }
        if self.n != other.n {
            return Err(Error::LengthMismatch {
                left: self.n,
                right: other.n,
            });
        }
        Ok(())
    }
}

impl SequentialLaw for BlockDistribution {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    /// Chain-rule conditional of the block law. Prefixes of length `n` or
    /// more condition on their last `n - 1` symbols.
    fn next_law(&self, prefix: &[u8], out: &mut [f64]) {
        let a = self.alphabet.size();
        let prefix = &prefix[prefix.len().saturating_sub(self.n - 1)..];
        let group = a.pow((self.n - prefix.len() - 1) as u32);
        let lead = encode(prefix, self.alphabet) as usize;
        let mut total = 0.0;
        for (b, o) in out.iter_mut().enumerate() {
            let start = (lead * a + b) * group;
            *o = self.probs[start..start + group].iter().sum();
            total += *o;
        }
        if total > 0.0 {
            out.iter_mut().for_each(|o| *o /= total);
        } else {
            out.iter_mut().for_each(|o| *o = 1.0 / a as f64);
        }
    }
}

/// Exact `n`-block law of a model by the chain rule over all `|A|^n` strings.
/// For models with approximate conditional laws the summed per-step error
/// bound is recorded as the truncation error.
pub fn block_distribution<M: SequentialLaw + ?Sized>(model: &M, n: usize, budget: u64) -> Result<BlockDistribution> {
    let alphabet = model.alphabet();
    let a = alphabet.size();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let cells = alphabet.checked_pow(n).filter(|&c| c <= budget).ok_or(Error::Capacity {
        what: "block law |A|^n",
        needed: (a as u128).saturating_pow(n as u32),
        budget: budget as u128,
        hint: "use a shorter block length",
    })?;
    let mut probs = vec![0.0; cells as usize];
    let mut prefix = Vec::with_capacity(n);
    let mut laws = vec![0.0; a * n];
    fill(model, n, &mut prefix, 1.0, &mut laws, &mut probs, 0);
    let total: f64 = probs.iter().sum();
    if total > 0.0 && (total - 1.0).abs() > 1e-15 {
        probs.iter_mut().for_each(|p| *p /= total);
    }
    let mut out = BlockDistribution::new(n, alphabet, probs)?;
    out.truncation_error = (0..n).map(|t| model.law_error(t)).sum();
    Ok(out)
}

fn fill<M: SequentialLaw + ?Sized>(
    model: &M,
    n: usize,
    prefix: &mut Vec<u8>,
    mass: f64,
    laws: &mut [f64],
    probs: &mut [f64],
    code: usize,
) {
    let a = model.alphabet().size();
    let t = prefix.len();
    if t == n {
        probs[code] = mass;
        return;
    }
    let (law, rest) = laws.split_at_mut(a);
    model.next_law(prefix, law);
    for b in 0..a {
        let m = mass * law[b];
        if m == 0.0 {
            continue;
        }
        prefix.push(b as u8);
        fill(model, n, prefix, m, rest, probs, code * a + b);
        prefix.pop();
    }
}

/// An optimal coupling: `(x code, y code, mass)` triples and its expected
/// per-letter Hamming cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingPlan {
    pub n: usize,
    pub joint: Vec<(u64, u64, f64)>,
    pub cost: f64,
}

impl CouplingPlan {
    /// `Σ joint(x,y) d_n(x,y)` recomputed from the plan.
    pub fn recompute_cost(&self, alphabet: Alphabet) -> f64 {
        self.joint
            .iter()
            .map(|&(x, y, m)| m * mismatches(&decode(x, self.n, alphabet), &decode(y, self.n, alphabet)) as f64)
            .sum::<f64>()
            / self.n as f64
    }
}

/// `d̄(P, Q) = min over couplings of E d_n`, solved exactly on the supports.
///
/// The solver always runs on the pair in a canonical order, so the value is
/// bitwise symmetric; identical laws return the diagonal plan.
pub fn dbar_exact(p: &BlockDistribution, q: &BlockDistribution, budget: u64) -> Result<(f64, CouplingPlan)> {
    p.check_compatible(q)?;
    if p.probs == q.probs {
        let joint = p.support().into_iter().map(|c| (c, c, p.probs[c as usize])).collect();
        return Ok((0.0, CouplingPlan { n: p.n, joint, cost: 0.0 }));
    }
    let swapped = p.probs.iter().zip(&q.probs).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Greater);
    if swapped {
        let (value, mut plan) = dbar_exact_ordered(q, p, budget)?;
        plan.joint = plan.joint.into_iter().map(|(y, x, m)| (x, y, m)).collect();
        plan.joint.sort_by_key(|&(x, y, _)| (x, y));
        return Ok((value, plan));
    }
    dbar_exact_ordered(p, q, budget)
}

fn dbar_exact_ordered(p: &BlockDistribution, q: &BlockDistribution, budget: u64) -> Result<(f64, CouplingPlan)> {
    let sp = p.support();
    let sq = q.support();
    let needed = sp.len() as u128 * sq.len() as u128;
    if needed > budget as u128 {
        return Err(Error::Capacity {
            what: "d̄ support product |supp P|·|supp Q|",
            needed,
            budget: budget as u128,
            hint: "use dbar_upper_greedy for an upper-bound estimate",
        });
    }
    let n = p.n;
    let xs: Vec<Vec<u8>> = sp.iter().map(|&c| decode(c, n, p.alphabet)).collect();
    let ys: Vec<Vec<u8>> = sq.iter().map(|&c| decode(c, n, q.alphabet)).collect();
    let mut cost = Vec::with_capacity(sp.len() * sq.len());
    for x in &xs {
        for y in &ys {
            cost.push(mismatches(x, y) as i64);
        }
    }
    let supply: Vec<f64> = sp.iter().map(|&c| p.probs[c as usize]).collect();
    let demand: Vec<f64> = sq.iter().map(|&c| q.probs[c as usize]).collect();
    let sol = transport::solve(&supply, &demand, &cost)?;
    debug_assert!(sol.residual <= 1e-9);
    let value = (sol.cost / n as f64).clamp(0.0, 1.0);
    let joint = sol.flows.iter().map(|&(i, j, m)| (sp[i], sq[j], m)).collect();
    Ok((value, CouplingPlan { n, joint, cost: value }))
}

/// Mean and standard error of `d_n` under the sequential maximal coupling:
/// at every step one shared uniform draws the common symbol with probability
/// `Σ min(p, q)`, and otherwise draws the two symbols from the normalized
/// residuals.
pub fn dbar_upper_greedy<P, Q>(model_p: &P, model_q: &Q, n: usize, trials: usize, seed: u64) -> Result<(f64, f64)>
where
    P: SequentialLaw + Sync + ?Sized,
    Q: SequentialLaw + Sync + ?Sized,
{
    if model_p.alphabet() != model_q.alphabet() {
        return Err(Error::LengthMismatch {
            left: model_p.alphabet().size(),
            right: model_q.alphabet().size(),
        });
    }
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if trials == 0 {
        return Err(Error::Config("greedy d̄ needs at least one trial".into()));
    }
    let seeds = SeedSpec::new(seed);
    let costs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| coupled_cost(model_p, model_q, n, seeds.trial(t as u64)))
        .collect();
    let mean = costs.iter().sum::<f64>() / trials as f64;
    let std_error = if trials > 1 {
        let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        (var / trials as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, std_error))
}

fn coupled_cost<P, Q>(model_p: &P, model_q: &Q, n: usize, seed: u64) -> f64
where
    P: SequentialLaw + ?Sized,
    Q: SequentialLaw + ?Sized,
{
    let a = model_p.alphabet().size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut p = vec![0.0; a];
    let mut q = vec![0.0; a];
    let mut common = vec![0.0; a];
    let mut diff = 0usize;
    for _ in 0..n {
        model_p.next_law(&x, &mut p);
        model_q.next_law(&y, &mut q);
        let mut w = 0.0;
        for b in 0..a {
            common[b] = p[b].min(q[b]);
            w += common[b];
        }
        let u: f64 = rng.random();
        let (xb, yb) = if u < w || w >= 1.0 {
            let s = pick(&common, u.min(w * (1.0 - f64::EPSILON)));
            (s, s)
        } else {
            let v = (u - w) / (1.0 - w);
            let rp: Vec<f64> = (0..a).map(|b| (p[b] - common[b]) / (1.0 - w)).collect();
            let rq: Vec<f64> = (0..a).map(|b| (q[b] - common[b]) / (1.0 - w)).collect();
            (pick(&rp, v), pick(&rq, v))
        };
        diff += (xb != yb) as usize;
        x.push(xb);
        y.push(yb);
    }
    diff as f64 / n as f64
}

/// Inverse CDF of nonnegative weights at `u`; falls back to the last symbol
/// with positive weight.
fn pick(weights: &[f64], u: f64) -> u8 {
    let mut acc = 0.0;
    let mut last = 0;
    for (b, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = b;
            if u < acc {
                return b as u8;
            }
        }
    }
    last as u8
}

/// The stationary order-`k` chain with transition `P̂(b | a_1^k)`. Contexts
/// never seen in `x_1^{n-1}` get the uniform row; the initial law is the
/// power-iteration stationary law of the completed matrix. `k = 0` gives the
/// i.i.d. chain with the empirical symbol frequencies.
pub fn empirical_markov_estimator(sample: &Sample, k: usize) -> Result<MarkovChainModel> {
    let alphabet = sample.alphabet();
    let a = alphabet.size();
    let rows = alphabet
        .checked_pow(k)
        .filter(|r| r.saturating_mul(a as u64) <= MAX_TRANSITION_CELLS)
        .ok_or(Error::Capacity {
            what: "transition matrix |A|^(k+1)",
            needed: (a as u128).saturating_pow(k as u32 + 1),
            budget: MAX_TRANSITION_CELLS as u128,
            hint: "use a smaller order",
        })? as usize;
    let cond = empirical_cond_prob(sample, k)?;
    let mut transition = vec![f64::NAN; rows * a];
    let mut seen = vec![false; rows];
    for (&(ctx, b), &p) in &cond {
        let r = ctx as usize;
        if !seen[r] {
            transition[r * a..(r + 1) * a].iter_mut().for_each(|t| *t = 0.0);
            seen[r] = true;
        }
        transition[r * a + b as usize] = p;
    }
    for r in (0..rows).filter(|&r| !seen[r]) {
        transition[r * a..(r + 1) * a].iter_mut().for_each(|t| *t = 1.0 / a as f64);
    }
    // Re-normalize rows so rounding in the count ratios cannot fail validation.
    for row in transition.chunks_mut(a) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|t| *t /= s);
    }
    MarkovChainModel::new(alphabet, k, transition)
}

/// Draw a random distribution on `A^n` (uniform on the simplex), for tests
/// and benchmarks.
pub fn random_block_distribution(alphabet: Alphabet, n: usize, rng: &mut impl Rng) -> Result<BlockDistribution> {
    let cells = alphabet.checked_pow(n).ok_or(Error::OrderOverflow {
        k: n,
        max_k: alphabet.max_code_depth(),
    })? as usize;
    let mut w: Vec<f64> = (0..cells).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    let total: f64 = w.iter().sum();
    w[0] += 1.0 - total;
    w[0] = w[0].max(0.0);
    BlockDistribution::new(n, alphabet, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::{GeometricBinaryGModel, IidModel};

    fn bin(s: &str) -> Vec<u8> {
        s.bytes().map(|b| b - b'0').collect()
    }

    fn bernoulli(p: f64) -> BlockDistribution {
        BlockDistribution::new(1, Alphabet::BINARY, vec![1.0 - p, p]).unwrap()
    }

    #[test]
    fn hamming_examples() {
        assert_eq!(hamming_per_letter(&bin("0101"), &bin("0101")).unwrap(), 0.0);
        assert!((hamming_per_letter(&bin("000"), &bin("011")).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(hamming_per_letter(&bin("0110"), &bin("1001")).unwrap(), 1.0);
        assert!(matches!(hamming_per_letter(&bin("01"), &bin("011")), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn block_laws() {
        let iid = IidModel::uniform(Alphabet::BINARY);
        let b = block_distribution(&iid, 2, DEFAULT_BLOCK_BUDGET).unwrap();
        assert!(b.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let m = MarkovChainModel::binary_order1([[0.7, 0.3], [0.2, 0.8]]).unwrap();
        let b = block_distribution(&m, 2, DEFAULT_BLOCK_BUDGET).unwrap();
        assert!((b.prob(&[0, 0]) - 0.28).abs() < 1e-12);
        let b = block_distribution(&m, 8, DEFAULT_BLOCK_BUDGET).unwrap();
        assert!((b.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(block_distribution(&m, 21, DEFAULT_BLOCK_BUDGET).is_err());
    }

    #[test]
    fn gmodel_block_law_reports_truncation() {
        let g = GeometricBinaryGModel::new(0.3, 0.2, 0.5).unwrap();
        let b = block_distribution(&g, 4, DEFAULT_BLOCK_BUDGET).unwrap();
        assert!((b.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let expected: f64 = (0..4).map(|t| 2.0 * 0.2 * 0.5f64.powi(t + 1) / 0.5).sum();
        assert!((b.truncation_error() - expected).abs() < 1e-12);
    }

    #[test]
    fn block_law_conditionals_roundtrip() {
        let m = MarkovChainModel::binary_order1([[0.7, 0.3], [0.2, 0.8]]).unwrap();
        let b = block_distribution(&m, 3, DEFAULT_BLOCK_BUDGET).unwrap();
        let again = block_distribution(&b, 3, DEFAULT_BLOCK_BUDGET).unwrap();
        for (x, y) in b.probs().iter().zip(again.probs()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_examples() {
        let m = MarkovChainModel::binary_order1([[0.7, 0.3], [0.2, 0.8]]).unwrap();
        let p = block_distribution(&m, 3, DEFAULT_BLOCK_BUDGET).unwrap();
        let (d, plan) = dbar_exact(&p, &p, DEFAULT_DBAR_BUDGET).unwrap();
        assert!(d.abs() < 1e-15);
        assert!(plan.joint.iter().all(|&(x, y, _)| x == y));

        let x = BlockDistribution::point_mass(Alphabet::BINARY, &bin("000")).unwrap();
        let y = BlockDistribution::point_mass(Alphabet::BINARY, &bin("011")).unwrap();
        assert!((dbar_exact(&x, &y, DEFAULT_DBAR_BUDGET).unwrap().0 - 2.0 / 3.0).abs() < 1e-15);

        for (pp, qq) in [(0.1, 0.9), (0.3, 0.35), (0.5, 0.2)] {
            let (d, plan) = dbar_exact(&bernoulli(pp), &bernoulli(qq), DEFAULT_DBAR_BUDGET).unwrap();
            assert!((d - (pp - qq).abs()).abs() < 1e-12);
            assert!((plan.recompute_cost(Alphabet::BINARY) - d).abs() < 1e-12);
        }
        let q = block_distribution(&MarkovChainModel::binary_order1([[0.6, 0.4], [0.3, 0.7]]).unwrap(), 3, DEFAULT_BLOCK_BUDGET).unwrap();
        assert!(matches!(dbar_exact(&p, &q, 10), Err(Error::Capacity { .. })));
    }

    #[test]
    fn greedy_examples() {
        let m = MarkovChainModel::binary_order1([[0.7, 0.3], [0.2, 0.8]]).unwrap();
        let (mean, se) = dbar_upper_greedy(&m, &m, 50, 100, 7).unwrap();
        assert_eq!((mean, se), (0.0, 0.0));
        let (mean, se) = dbar_upper_greedy(&bernoulli(0.3), &bernoulli(0.6), 1, 4000, 7).unwrap();
        assert!((mean - 0.3).abs() <= 3.0 * se, "{mean} ± {se}");
        assert_eq!(
            dbar_upper_greedy(&bernoulli(0.3), &bernoulli(0.6), 1, 200, 9).unwrap(),
            dbar_upper_greedy(&bernoulli(0.3), &bernoulli(0.6), 1, 200, 9).unwrap()
        );
    }

    #[test]
    fn estimator_examples() {
        let s = Sample::from_str_symbols(Alphabet::BINARY, "0100").unwrap();
        let m = empirical_markov_estimator(&s, 1).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
        assert_eq!(m.row(1), &[1.0, 0.0]);
        assert!((m.stationary()[0] - 2.0 / 3.0).abs() < 1e-9);

        let s = Sample::from_str_symbols(Alphabet::BINARY, "0000").unwrap();
        let m = empirical_markov_estimator(&s, 1).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0]);
        assert_eq!(m.row(1), &[0.5, 0.5]);
        assert!((m.stationary()[0] - 1.0).abs() < 1e-9);

        let s = Sample::from_str_symbols(Alphabet::BINARY, "0111").unwrap();
        let m = empirical_markov_estimator(&s, 0).unwrap();
        assert_eq!(m.order(), 0);
        assert_eq!(m.row(0), &[0.25, 0.75]);
        assert!(empirical_markov_estimator(&s, 4).is_err());
    }
}
