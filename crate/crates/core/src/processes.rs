//! Generative process models with seeded sampling and their memory-decay
//! quantities (`h_k`, `H_k`, `γ̄(k)`, `γ̲(k)`, `α_k`, `α`, `α₀`, `p_inf`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{entropy_bits, Alphabet, Sample};

/// Largest supported number of transition cells `|A|^{k₀+1}`.
pub const MAX_TRANSITION_CELLS: u64 = 1 << 24;

const STATIONARY_MAX_ITER: usize = 1_000_000;
const STATIONARY_TOL: f64 = 1e-12;

/// How a reported quantity was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Exact,
    /// A certified upper or lower bound, as documented on the producing method.
    Bound,
    MonteCarlo { std_error: f64 },
    /// Provided by the caller.
    Supplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub provenance: Provenance,
}

impl Quantity {
    pub fn exact(value: f64) -> Self {
        Quantity { value, provenance: Provenance::Exact }
    }

    pub fn bound(value: f64) -> Self {
        Quantity { value, provenance: Provenance::Bound }
    }

    pub fn monte_carlo(value: f64, std_error: f64) -> Self {
        Quantity {
            value,
            provenance: Provenance::MonteCarlo { std_error },
        }
    }

    /// Monte Carlo standard error, 0 otherwise.
    pub fn std_error(&self) -> f64 {
        match self.provenance {
            Provenance::MonteCarlo { std_error } => std_error,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonNullness {
    pub alpha0: Quantity,
    pub alpha: Quantity,
    pub p_inf: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessQuantities {
    pub h: Vec<Quantity>,
    pub gamma_upper: Vec<Quantity>,
    pub gamma_lower: Option<Vec<Quantity>>,
    pub alpha0: Quantity,
    pub alpha: Quantity,
    pub p_inf: Quantity,
    pub warnings: Vec<String>,
}

/// Controls the simulation behind Monte Carlo quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloSettings {
    pub path_len: usize,
    pub batches: usize,
    pub seed: u64,
}

impl Default for MonteCarloSettings {
    fn default() -> Self {
        MonteCarloSettings {
            path_len: 1 << 22,
            batches: 32,
            seed: 0x5eed,
        }
    }
}

/// One-step conditional laws given a finite observed prefix.
pub trait SequentialLaw {
    fn alphabet(&self) -> Alphabet;

    /// `P(· | prefix)` for the stationary process, written into `out`
    /// (length `|A|`).
    fn next_law(&self, prefix: &[u8], out: &mut [f64]);

    /// Upper bound on `Σ_a |out(a) - P(a | prefix)|` for a prefix of this
    /// length; zero when `next_law` is exact.
    fn law_error(&self, _prefix_len: usize) -> f64 {
        0.0
    }
}

/// A stationary process model: sampling plus memory-decay quantities.
pub trait ProcessModel: SequentialLaw + Sync {
    fn sample_path(&self, n: usize, seed: u64, burn_in: usize) -> Result<Sample>;

    fn true_entropies(&self, k_max: usize, mc: &MonteCarloSettings) -> Result<Vec<Quantity>>;

    /// `(γ̄(k), γ̲(k))` for `k = 0..=k_max`.
    fn continuity_rates(&self, k_max: usize) -> Result<(Vec<Quantity>, Option<Vec<Quantity>>)>;

    fn nonnullness_constants(&self) -> NonNullness;

    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }

    fn quantities(&self, k_max: usize, mc: &MonteCarloSettings) -> Result<ProcessQuantities> {
        let h = self.true_entropies(k_max, mc)?;
        let (gamma_upper, gamma_lower) = self.continuity_rates(k_max)?;
        let nn = self.nonnullness_constants();
        Ok(ProcessQuantities {
            h,
            gamma_upper,
            gamma_lower,
            alpha0: nn.alpha0,
            alpha: nn.alpha,
            p_inf: nn.p_inf,
            warnings: self.warnings(),
        })
    }
}

#[inline]
fn sample_from_cdf(cdf: &[f64], u: f64) -> u8 {
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) as u8
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidModel(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidModel(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Stationary distribution of the `k₀`-block chain by power iteration on the
/// lazy chain `½(I + T)` from the uniform distribution.
///
/// The residual is `Σ_s |(πT)(s) - π(s)|`; the iteration stops below `1e-12`
/// and fails after `10^6` steps.
pub fn markov_stationary(alphabet: Alphabet, order: usize, transition: &[f64]) -> Result<Vec<f64>> {
    let a = alphabet.size();
    let states = alphabet
        .checked_pow(order)
        .filter(|s| s.saturating_mul(a as u64) <= MAX_TRANSITION_CELLS)
        .ok_or_else(|| Error::InvalidModel(format!("order {order} is too large")))? as usize;
    if transition.len() != states * a {
        return Err(Error::LengthMismatch {
            left: transition.len(),
            right: states * a,
        });
    }
    if order == 0 {
        return Ok(vec![1.0]);
    }
    let mut pi = vec![1.0 / states as f64; states];
    let mut next = vec![0.0; states];
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITER {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (s, &mass) in pi.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let base = (s * a) % states;
            for (b, &q) in transition[s * a..(s + 1) * a].iter().enumerate() {
                next[base + b] += mass * q;
            }
        }
        residual = next.iter().zip(&pi).map(|(x, y)| (x - y).abs()).sum();
        for (p, t) in pi.iter_mut().zip(&next) {
            *p = 0.5 * (*p + t);
        }
        if residual < STATIONARY_TOL {
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= total);
            return Ok(pi);
        }
    }
    Err(Error::NonConvergence {
        iterations: STATIONARY_MAX_ITER,
        residual,
    })
}

/// Markov chain of order `k₀` with transition `Q(a | a_1^{k₀})`, started from
/// its stationary `k₀`-block law.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChainModel {
    alphabet: Alphabet,
    order: usize,
    transition: Vec<f64>,
    cdf: Vec<f64>,
    stationary: Vec<f64>,
}

impl MarkovChainModel {
    /// `transition` is row-major: row `code(a_1^{k₀})`, column `a`.
    pub fn new(alphabet: Alphabet, order: usize, transition: Vec<f64>) -> Result<Self> {
        let a = alphabet.size();
        for (r, row) in transition.chunks(a).enumerate() {
            check_distribution(row, &format!("transition row {r}"))?;
        }
        let stationary = markov_stationary(alphabet, order, &transition)?;
        Ok(Self::assemble(alphabet, order, transition, stationary))
    }

    /// Build with a caller-supplied stationary law (validated for
    /// normalization only).
    pub fn with_stationary(alphabet: Alphabet, order: usize, transition: Vec<f64>, stationary: Vec<f64>) -> Result<Self> {
        let states = alphabet.checked_pow(order).unwrap_or(u64::MAX) as usize;
        if stationary.len() != states || transition.len() != states * alphabet.size() {
            return Err(Error::LengthMismatch {
                left: stationary.len(),
                right: states,
            });
        }
        check_distribution(&stationary, "stationary distribution")?;
        Ok(Self::assemble(alphabet, order, transition, stationary))
    }

    fn assemble(alphabet: Alphabet, order: usize, transition: Vec<f64>, stationary: Vec<f64>) -> Self {
        let a = alphabet.size();
        let mut cdf = Vec::with_capacity(transition.len());
        for row in transition.chunks(a) {
            let mut acc = 0.0;
            for &p in row {
                acc += p;
                cdf.push(acc);
            }
        }
        MarkovChainModel {
            alphabet,
            order,
            transition,
            cdf,
            stationary,
        }
    }

    /// Binary order-1 chain from its two rows.
    pub fn binary_order1(rows: [[f64; 2]; 2]) -> Result<Self> {
        Self::new(Alphabet::BINARY, 1, rows.iter().flatten().copied().collect())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn row(&self, context: u64) -> &[f64] {
        let a = self.alphabet.size();
        &self.transition[context as usize * a..(context as usize + 1) * a]
    }

    /// Stationary law of the `k₀`-block, indexed by block code.
    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    fn states(&self) -> usize {
        self.stationary.len()
    }

    /// Stationary law of `j`-blocks, indexed by code.
    pub fn block_marginal(&self, j: usize) -> Result<Vec<f64>> {
        let a = self.alphabet.size();
        let cells = self
            .alphabet
            .checked_pow(j)
            .filter(|&c| c <= MAX_TRANSITION_CELLS)
            .ok_or_else(|| Error::Capacity {
                what: "block marginal |A|^j",
                needed: (a as u128).saturating_pow(j as u32),
                budget: MAX_TRANSITION_CELLS as u128,
                hint: "request a shorter block",
            })? as usize;
        if j <= self.order {
            let group = self.states() / cells;
            return Ok(self.stationary.chunks(group).map(|c| c.iter().sum()).collect());
        }
        let mut m = self.stationary.clone();
        let states = self.states();
        for _ in self.order..j {
            let mut next = vec![0.0; m.len() * a];
            for (code, &mass) in m.iter().enumerate() {
                let row = self.row((code % states) as u64);
                for (b, &q) in row.iter().enumerate() {
                    next[code * a + b] = mass * q;
                }
            }
            m = next;
        }
        debug_assert_eq!(m.len(), cells);
        Ok(m)
    }

    /// Block entropy `H_k` (with `H_0 = 0`).
    pub fn block_entropy(&self, k: usize) -> Result<f64> {
        if k <= self.order {
            return Ok(entropy_bits(&self.block_marginal(k)?));
        }
        let h = self.stationary_cond_entropy();
        Ok(entropy_bits(&self.block_marginal(self.order)?) + (k - self.order) as f64 * h)
    }

    fn stationary_cond_entropy(&self) -> f64 {
        self.stationary
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, &p)| p * entropy_bits(self.row(s as u64)))
            .sum()
    }

    /// `P(a | context)` for `|context| = k < k₀` under the stationary law,
    /// given the `(k+1)`-block marginal. `None` for null contexts.
    fn short_conditional(&self, marg: &[f64], ctx: u64, out: &mut [f64]) -> bool {
        let a = self.alphabet.size();
        let base = ctx as usize * a;
        let total: f64 = marg[base..base + a].iter().sum();
        if total <= 0.0 {
            return false;
        }
        for (o, &m) in out.iter_mut().zip(&marg[base..base + a]) {
            *o = m / total;
        }
        true
    }

    /// Virtual `k₀`-context used for shift and continuity computations.
    fn context_of(&self, suffix: &[u8]) -> u64 {
        crate::types::encode(&suffix[suffix.len() - self.order..], self.alphabet)
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet.size()
    }
}

impl SequentialLaw for MarkovChainModel {
    fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    fn next_law(&self, prefix: &[u8], out: &mut [f64]) {
        if prefix.len() >= self.order {
            out.copy_from_slice(self.row(self.context_of(prefix)));
            return;
        }
        // Marginal of the first |prefix|+1 symbols of the stationary block.
        let a = self.alphabet.size();
        let j = prefix.len();
        let group = self.states() / a.pow(j as u32 + 1);
        let lead = crate::types::encode(prefix, self.alphabet) as usize;
        let mut total = 0.0;
        for (b, o) in out.iter_mut().enumerate() {
            let start = (lead * a + b) * group;
            *o = self.stationary[start..start + group].iter().sum();
            total += *o;
        }
        if total > 0.0 {
            out.iter_mut().for_each(|o| *o /= total);
        } else {
            out.iter_mut().for_each(|o| *o = 1.0 / a as f64);
        }
    }
}

impl ProcessModel for MarkovChainModel {
    /// Initial `k₀`-block from the stationary law, then exact transitions;
    /// `burn_in` is unused.
    fn sample_path(&self, n: usize, seed: u64, _burn_in: usize) -> Result<Sample> {
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = self.alphabet.size();
        let k0 = self.order;
        let states = self.states() as u64;
        let mut data = Vec::with_capacity(n.max(k0));
        if k0 > 0 {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut block = self.states() - 1;
            for (s, &p) in self.stationary.iter().enumerate() {
                acc += p;
                if u < acc {
                    block = s;
                    break;
                }
            }
            data.extend(crate::types::decode(block as u64, k0, self.alphabet));
        }
        let mut ctx = if k0 > 0 { self.context_of(&data) } else { 0 };
        while data.len() < n {
            let u: f64 = rng.random();
            let row = &self.cdf[ctx as usize * a..(ctx as usize + 1) * a];
            let x = sample_from_cdf(row, u);
            data.push(x);
            if k0 > 0 {
                ctx = (ctx * a as u64 + x as u64) % states;
            }
        }
        data.truncate(n);
        Sample::new(self.alphabet, data)
    }

    fn true_entropies(&self, k_max: usize, _mc: &MonteCarloSettings) -> Result<Vec<Quantity>> {
        let h_top = self.stationary_cond_entropy();
        let mut out = Vec::with_capacity(k_max + 1);
        let mut prev = 0.0;
        for k in 0..=k_max {
            if k >= self.order {
                out.push(Quantity::exact(h_top));
                continue;
            }
            let hk1 = entropy_bits(&self.block_marginal(k + 1)?);
            out.push(Quantity::exact((hk1 - prev).max(0.0)));
            prev = hk1;
        }
        Ok(out)
    }

    /// Exact rates over `k₀`-contexts of positive stationary mass.
    fn continuity_rates(&self, k_max: usize) -> Result<(Vec<Quantity>, Option<Vec<Quantity>>)> {
        let a = self.alphabet.size();
        let mut upper = Vec::with_capacity(k_max + 1);
        let mut lower = Vec::with_capacity(k_max + 1);
        let mut law = vec![0.0; a];
        for k in 0..=k_max {
            if k >= self.order {
                upper.push(Quantity::exact(0.0));
                lower.push(Quantity::exact(0.0));
                continue;
            }
            let marg = self.block_marginal(k + 1)?;
            let suffix_cells = a.pow(k as u32) as u64;
            let (mut hi, mut lo) = (0.0f64, f64::INFINITY);
            for (s, &p) in self.stationary.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let suffix = s as u64 % suffix_cells;
                if !self.short_conditional(&marg, suffix, &mut law) {
                    continue;
                }
                let d: f64 = law.iter().zip(self.row(s as u64)).map(|(x, y)| (x - y).abs()).sum();
                hi = hi.max(d);
                lo = lo.min(d);
            }
            upper.push(Quantity::exact(hi));
            lower.push(Quantity::exact(if lo.is_finite() { lo } else { 0.0 }));
        }
        Ok((upper, Some(lower)))
    }

    /// Exact constants over all transition rows.
    fn nonnullness_constants(&self) -> NonNullness {
        let a = self.alphabet.size();
        let p_inf = self.transition.iter().copied().fold(f64::INFINITY, f64::min);
        // α_k = min_y Σ_a min_{s : suffix y} Q(a|s), and α_k = 1 for k ≥ k₀.
        let mut alpha = 0.0;
        let mut alpha0 = 1.0;
        for k in 0..self.order {
            let suffix_cells = a.pow(k as u32);
            let mut mins = vec![f64::INFINITY; suffix_cells * a];
            for s in 0..self.states() {
                let y = s % suffix_cells;
                for (b, &q) in self.row(s as u64).iter().enumerate() {
                    let m = &mut mins[y * a + b];
                    *m = m.min(q);
                }
            }
            let alpha_k = mins.chunks(a).map(|c| c.iter().sum::<f64>()).fold(f64::INFINITY, f64::min);
            if k == 0 {
                alpha0 = alpha_k;
            }
            alpha += 1.0 - alpha_k;
        }
        NonNullness {
            alpha0: Quantity::exact(alpha0),
            alpha: Quantity::exact(alpha),
            p_inf: Quantity::exact(p_inf),
        }
    }

    fn warnings(&self) -> Vec<String> {
        if self.transition.iter().any(|&q| q == 0.0) {
            vec!["transition matrix has a zero entry: the chain is not non-null (p_inf = 0)".into()]
        } else {
            Vec::new()
        }
    }
}

/// I.i.d. process; a Markov chain of order 0.
#[derive(Debug, Clone, PartialEq)]
pub struct IidModel(MarkovChainModel);

impl IidModel {
    pub fn new(alphabet: Alphabet, probs: Vec<f64>) -> Result<Self> {
        Ok(IidModel(MarkovChainModel::new(alphabet, 0, probs)?))
    }

    pub fn uniform(alphabet: Alphabet) -> Self {
        let a = alphabet.size();
        IidModel::new(alphabet, vec![1.0 / a as f64; a]).expect("uniform law is valid")
    }

    pub fn probs(&self) -> &[f64] {
        self.0.transition()
    }

    pub fn as_markov(&self) -> &MarkovChainModel {
        &self.0
    }
}

impl SequentialLaw for IidModel {
    fn alphabet(&self) -> Alphabet {
        self.0.alphabet
    }

    fn next_law(&self, prefix: &[u8], out: &mut [f64]) {
        self.0.next_law(prefix, out)
    }
}

impl ProcessModel for IidModel {
    fn sample_path(&self, n: usize, seed: u64, burn_in: usize) -> Result<Sample> {
        self.0.sample_path(n, seed, burn_in)
    }

    fn true_entropies(&self, k_max: usize, mc: &MonteCarloSettings) -> Result<Vec<Quantity>> {
        self.0.true_entropies(k_max, mc)
    }

    fn continuity_rates(&self, k_max: usize) -> Result<(Vec<Quantity>, Option<Vec<Quantity>>)> {
        self.0.continuity_rates(k_max)
    }

    fn nonnullness_constants(&self) -> NonNullness {
        self.0.nonnullness_constants()
    }

    fn warnings(&self) -> Vec<String> {
        self.0.warnings()
    }
}

/// Binary chain with complete connections:
/// `P(1 | x_{-∞}^{-1}) = θ₀ + c Σ_{j≥1} ρ^j x_{-j}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricBinaryGModel {
    theta0: f64,
    c: f64,
    rho: f64,
}

/// Default burn-in for g-model paths: `64 k_max + 4096`.
pub fn default_burn_in(k_max: usize) -> usize {
    64 * k_max + 4096
}

impl GeometricBinaryGModel {
    pub fn new(theta0: f64, c: f64, rho: f64) -> Result<Self> {
        let ok = theta0 > 0.0 && theta0 < 1.0 && c > 0.0 && rho > 0.0 && rho < 1.0;
        if !ok || !(theta0 + c * rho / (1.0 - rho) < 1.0) {
            return Err(Error::InvalidModel(format!(
                "g-model needs 0<θ₀<1, c>0, 0<ρ<1 and θ₀ + cρ/(1-ρ) < 1 (got θ₀={theta0}, c={c}, ρ={rho})"
            )));
        }
        Ok(GeometricBinaryGModel { theta0, c, rho })
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `cρ/(1-ρ)`, the range of `P(1|·)` above `θ₀`.
    pub fn memory_mass(&self) -> f64 {
        self.c * self.rho / (1.0 - self.rho)
    }

    /// Stationary `P(X_0 = 1) = θ₀ / (1 - cρ/(1-ρ))`.
    pub fn stationary_mean(&self) -> f64 {
        self.theta0 / (1.0 - self.memory_mass())
    }

    /// Decay exponent `ζ₁ = log₂(1/ρ)` of the continuity-rate bound.
    pub fn zeta1(&self) -> f64 {
        -self.rho.log2()
    }

    /// Certified `γ̄(k) ≤ 2cρ^{k+1}/(1-ρ)`.
    pub fn gamma_upper_bound(&self, k: usize) -> f64 {
        2.0 * self.c * self.rho.powi(k as i32 + 1) / (1.0 - self.rho)
    }

    /// `1 - α_k = cρ^{k+1}/(1-ρ)` (exact).
    pub fn one_minus_alpha_k(&self, k: usize) -> f64 {
        self.c * self.rho.powi(k as i32 + 1) / (1.0 - self.rho)
    }

    /// Simulate the exact conditional law with `S_t = Σ_j ρ^j x_{t-j}`,
    /// calling `visit(t, x_t, P(1 | past))` for the last `n` steps.
    fn simulate(&self, n: usize, seed: u64, burn_in: usize, mut visit: impl FnMut(usize, u8, f64)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = 0.0f64;
        for t in 0..burn_in + n {
            let p1 = self.theta0 + self.c * s;
            let u: f64 = rng.random();
            let x = u8::from(u < p1);
            if t >= burn_in {
                visit(t - burn_in, x, p1);
            }
            s = self.rho * (s + x as f64);
        }
    }

    /// Monte Carlo `γ̲(k)`: the smallest observed
    /// `2 |P̂(1 | x_{-k}^{-1}) - P(1 | past)|` along a simulated path, where
    /// `P̂(1|u)` is the path average of the true conditional over visits to
    /// context `u`. Not a certified bound.
    pub fn gamma_lower_monte_carlo(&self, k_max: usize, mc: &MonteCarloSettings) -> Result<Vec<Quantity>> {
        let ctx = self.context_averages(k_max, mc)?;
        let mut out = Vec::with_capacity(k_max + 1);
        let mut lo = vec![f64::INFINITY; k_max + 1];
        let mask = |k: usize| (1u64 << k) - 1;
        let mut code = 0u64;
        self.simulate(mc.path_len, mc.seed, default_burn_in(k_max), |t, x, p1| {
            if t >= k_max {
                for (k, l) in lo.iter_mut().enumerate() {
                    let u = (code & mask(k)) as usize;
                    let (sum, cnt) = ctx.levels[k][u];
                    let d = 2.0 * (sum / cnt as f64 - p1).abs();
                    *l = l.min(d);
                }
            }
            code = (code << 1 | x as u64) & mask(k_max.max(1));
        });
        for l in lo {
            out.push(Quantity::monte_carlo(l, f64::NAN));
        }
        Ok(out)
    }

    fn context_averages(&self, k_max: usize, mc: &MonteCarloSettings) -> Result<ContextAverages> {
        if k_max > 24 {
            return Err(Error::Capacity {
                what: "g-model context averages 2^k_max",
                needed: 1u128 << k_max.min(127),
                budget: 1 << 24,
                hint: "use k_max ≤ 24",
            });
        }
        if mc.path_len <= k_max || mc.batches == 0 {
            return Err(Error::Config("Monte Carlo path must exceed k_max and use ≥ 1 batch".into()));
        }
        let batches = mc.batches;
        let usable = mc.path_len - k_max;
        let batch_len = usable / batches;
        let mut levels: Vec<Vec<(f64, u64)>> = (0..=k_max).map(|k| vec![(0.0, 0); 1 << k]).collect();
        let mut batch_levels: Vec<Vec<Vec<(f64, u64)>>> = vec![levels.clone(); batches];
        let full = (1u64 << k_max) - 1;
        let mut code = 0u64;
        self.simulate(mc.path_len, mc.seed, default_burn_in(k_max), |t, x, p1| {
            if t >= k_max {
                let b = ((t - k_max) / batch_len.max(1)).min(batches - 1);
                for k in 0..=k_max {
                    let u = (code & ((1u64 << k) - 1)) as usize;
                    let cell = &mut levels[k][u];
                    cell.0 += p1;
                    cell.1 += 1;
                    let bc = &mut batch_levels[b][k][u];
                    bc.0 += p1;
                    bc.1 += 1;
                }
            }
            code = (code << 1 | x as u64) & full;
        });
        Ok(ContextAverages { levels, batch_levels })
    }

    fn next_p1(&self, prefix: &[u8]) -> f64 {
        let mut s = 0.0;
        let mut w = self.rho;
        for &x in prefix.iter().rev() {
            s += w * x as f64;
            w *= self.rho;
        }
        // Unknown past beyond the prefix is filled with its stationary mean.
        s += w * self.stationary_mean() / (1.0 - self.rho);
        self.theta0 + self.c * s
    }
}

struct ContextAverages {
    /// Per order `k`, per context code: (Σ P(1|past), visits).
    levels: Vec<Vec<(f64, u64)>>,
    batch_levels: Vec<Vec<Vec<(f64, u64)>>>,
}

fn context_entropy(cells: &[(f64, u64)]) -> f64 {
    let total: u64 = cells.iter().map(|c| c.1).sum();
    if total == 0 {
        return f64::NAN;
    }
    cells
        .iter()
        .filter(|c| c.1 > 0)
        .map(|&(s, cnt)| cnt as f64 / total as f64 * crate::types::binary_entropy(s / cnt as f64))
        .sum()
}

impl SequentialLaw for GeometricBinaryGModel {
    fn alphabet(&self) -> Alphabet {
        Alphabet::BINARY
    }

    fn next_law(&self, prefix: &[u8], out: &mut [f64]) {
        let p1 = self.next_p1(prefix);
        out[0] = 1.0 - p1;
        out[1] = p1;
    }

    fn law_error(&self, prefix_len: usize) -> f64 {
        self.gamma_upper_bound(prefix_len)
    }
}

impl ProcessModel for GeometricBinaryGModel {
    /// Starts from the all-zero past and discards `burn_in` steps.
    fn sample_path(&self, n: usize, seed: u64, burn_in: usize) -> Result<Sample> {
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let mut data = Vec::with_capacity(n);
        self.simulate(n, seed, burn_in, |_, x, _| data.push(x));
        Sample::new(Alphabet::BINARY, data)
    }

    /// `h_k = Σ_u P(u) H₂(P(1|u))` with `P(1|u)` the path average of the true
    /// conditional over visits to `u`. All orders share the same visit set,
    /// so the estimates are nonincreasing in `k` exactly. Standard errors come
    /// from batch means.
    fn true_entropies(&self, k_max: usize, mc: &MonteCarloSettings) -> Result<Vec<Quantity>> {
        let ctx = self.context_averages(k_max, mc)?;
        let b = ctx.batch_levels.len() as f64;
        let mut out = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            let value = context_entropy(&ctx.levels[k]);
            let per_batch: Vec<f64> = ctx
                .batch_levels
                .iter()
                .map(|lv| context_entropy(&lv[k]))
                .filter(|v| v.is_finite())
                .collect();
            let m = per_batch.iter().sum::<f64>() / per_batch.len() as f64;
            let var = per_batch.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - 1.0).max(1.0);
            out.push(Quantity::monte_carlo(value, (var / b).sqrt()));
        }
        Ok(out)
    }

    /// `γ̄` is the certified bound; `γ̲` is left to
    /// [`GeometricBinaryGModel::gamma_lower_monte_carlo`].
    fn continuity_rates(&self, k_max: usize) -> Result<(Vec<Quantity>, Option<Vec<Quantity>>)> {
        let upper = (0..=k_max).map(|k| Quantity::bound(self.gamma_upper_bound(k))).collect();
        Ok((upper, None))
    }

    /// `α_k = 1 - cρ^{k+1}/(1-ρ)` for every context, so `α₀ = 1 - cρ/(1-ρ)`
    /// and `α = cρ/(1-ρ)²`; `p_inf = min(θ₀, 1-θ₀-cρ/(1-ρ))`. All exact.
    fn nonnullness_constants(&self) -> NonNullness {
        let m = self.memory_mass();
        NonNullness {
            alpha0: Quantity::exact(1.0 - m),
            alpha: Quantity::exact(m / (1.0 - self.rho)),
            p_inf: Quantity::exact(self.theta0.min(1.0 - self.theta0 - m)),
        }
    }
}

/// Non-null binary chains of exact orders 0 to 3, named `zoo-k`. Each row
/// set depends on the oldest context symbol, so the order is exact.
pub fn markov_zoo() -> Vec<(&'static str, MarkovChainModel)> {
    let rows = |p1: &[f64]| p1.iter().flat_map(|&p| [1.0 - p, p]).collect::<Vec<f64>>();
    let spec: [(&str, usize, &[f64]); 4] = [
        ("zoo-0", 0, &[0.7]),
        ("zoo-1", 1, &[0.3, 0.8]),
        ("zoo-2", 2, &[0.2, 0.6, 0.5, 0.85]),
        ("zoo-3", 3, &[0.1, 0.5, 0.35, 0.8, 0.6, 0.25, 0.7, 0.9]),
    ];
    spec.iter()
        .map(|&(name, k, p1)| (name, MarkovChainModel::new(Alphabet::BINARY, k, rows(p1)).expect("zoo rows are valid")))
        .collect()
}

/// Any supported model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Markov(MarkovChainModel),
    Iid(IidModel),
    GModel(GeometricBinaryGModel),
}

impl Model {
    /// Markov order, `None` for infinite memory.
    pub fn markov_order(&self) -> Option<usize> {
        match self {
            Model::Markov(m) => Some(m.order()),
            Model::Iid(_) => Some(0),
            Model::GModel(_) => None,
        }
    }

    /// Default burn-in for paths used with candidate orders up to `k_max`.
    pub fn default_burn_in(&self, k_max: usize) -> usize {
        match self {
            Model::GModel(_) => default_burn_in(k_max),
            _ => 0,
        }
    }

    fn inner(&self) -> &dyn ProcessModel {
        match self {
            Model::Markov(m) => m,
            Model::Iid(m) => m,
            Model::GModel(m) => m,
        }
    }
}

impl SequentialLaw for Model {
    fn alphabet(&self) -> Alphabet {
        self.inner().alphabet()
    }

    fn next_law(&self, prefix: &[u8], out: &mut [f64]) {
        self.inner().next_law(prefix, out)
    }

    fn law_error(&self, prefix_len: usize) -> f64 {
        self.inner().law_error(prefix_len)
    }
}

impl ProcessModel for Model {
    fn sample_path(&self, n: usize, seed: u64, burn_in: usize) -> Result<Sample> {
        self.inner().sample_path(n, seed, burn_in)
    }

    fn true_entropies(&self, k_max: usize, mc: &MonteCarloSettings) -> Result<Vec<Quantity>> {
        self.inner().true_entropies(k_max, mc)
    }

    fn continuity_rates(&self, k_max: usize) -> Result<(Vec<Quantity>, Option<Vec<Quantity>>)> {
        self.inner().continuity_rates(k_max)
    }

    fn nonnullness_constants(&self) -> NonNullness {
        self.inner().nonnullness_constants()
    }

    fn warnings(&self) -> Vec<String> {
        self.inner().warnings()
    }
}

impl From<MarkovChainModel> for Model {
    fn from(m: MarkovChainModel) -> Self {
        Model::Markov(m)
    }
}

impl From<IidModel> for Model {
    fn from(m: IidModel) -> Self {
        Model::Iid(m)
    }
}

impl From<GeometricBinaryGModel> for Model {
    fn from(m: GeometricBinaryGModel) -> Self {
        Model::GModel(m)
    }
}

/// Model file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Markov {
        alphabet_size: usize,
        order: usize,
        /// Row-major `|A|^order × |A|`.
        transition: Vec<f64>,
    },
    Iid {
        alphabet_size: usize,
        #[serde(alias = "transition")]
        probs: Vec<f64>,
    },
    Gmodel {
        theta0: f64,
        c: f64,
        rho: f64,
    },
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model> {
        match self {
            ModelConfig::Markov {
                alphabet_size,
                order,
                transition,
            } => Ok(Model::Markov(MarkovChainModel::new(
                Alphabet::new(*alphabet_size)?,
                *order,
                transition.clone(),
            )?)),
            ModelConfig::Iid { alphabet_size, probs } => Ok(Model::Iid(IidModel::new(
                Alphabet::new(*alphabet_size)?,
                probs.clone(),
            )?)),
            ModelConfig::Gmodel { theta0, c, rho } => Ok(Model::GModel(GeometricBinaryGModel::new(*theta0, *c, *rho)?)),
        }
    }

    /// Short human-readable label.
    pub fn label(&self) -> String {
        match self {
            ModelConfig::Markov { alphabet_size, order, .. } => format!("markov(a={alphabet_size},k={order})"),
            ModelConfig::Iid { alphabet_size, .. } => format!("iid(a={alphabet_size})"),
            ModelConfig::Gmodel { theta0, c, rho } => format!("gmodel(theta0={theta0},c={c},rho={rho})"),
        }
    }
}
