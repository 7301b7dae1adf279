//! Sliding-window string counts, empirical probabilities and entropies.
//!
//! `N_m(a_1^d)` is the number of positions `0 ≤ i ≤ m - d` with
//! `x_{i+1}..x_{i+d} = a_1^d`. The empirical conditional probability of order
//! `k ≥ 1` divides a count over the full window `x_1^n` by a context count
//! over the shortened window `x_1^{n-1}`; the two agree because every
//! occurrence of a context inside `x_1^{n-1}` is followed by exactly one
//! symbol.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{xlog2x_unchecked, Alphabet, LogProb, Sample};

/// Tables with at most this many cells (or at most a small multiple of the
/// window length) are stored densely.
const DENSE_LIMIT: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Dense(Vec<u64>),
    /// Sorted by code, zero counts omitted.
    Sparse(Vec<(u64, u64)>),
}

/// Occurrence counts of all depth-`d` strings in the window `x_1^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    depth: usize,
    window_len: usize,
    alphabet: Alphabet,
    repr: Repr,
}

impl CountTable {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    /// `N_m(code)`; zero for strings that do not occur.
    pub fn get(&self, code: u64) -> u64 {
        match &self.repr {
            Repr::Dense(v) => v.get(code as usize).copied().unwrap_or(0),
            Repr::Sparse(v) => v
                .binary_search_by_key(&code, |&(c, _)| c)
                .map(|i| v[i].1)
                .unwrap_or(0),
        }
    }

    /// Non-zero `(code, count)` pairs in ascending code order.
    pub fn iter(&self) -> Box<dyn Iterator<Item = (u64, u64)> + '_> {
        match &self.repr {
            Repr::Dense(v) => Box::new(
                v.iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(i, &c)| (i as u64, c)),
            ),
            Repr::Sparse(v) => Box::new(v.iter().copied()),
        }
    }

    /// `Σ N_m(a_1^d) = m - d + 1`.
    pub fn total(&self) -> u64 {
        self.iter().map(|(_, c)| c).sum()
    }

    /// Number of distinct strings that occur.
    pub fn distinct(&self) -> usize {
        self.iter().count()
    }

    pub fn to_map(&self) -> BTreeMap<u64, u64> {
        self.iter().collect()
    }

    /// Sum of counts over each context `code / |A|`, i.e. the depth-`(d-1)`
    /// context totals of this table, as `(context, total, children)` groups.
    fn groups(&self) -> Vec<(u64, u64, Vec<u64>)> {
        let a = self.alphabet.size() as u64;
        let mut out: Vec<(u64, u64, Vec<u64>)> = Vec::new();
        for (code, count) in self.iter() {
            let ctx = code / a;
            match out.last_mut() {
                Some((c, total, kids)) if *c == ctx => {
                    *total += count;
                    kids.push(count);
                }
                _ => out.push((ctx, count, vec![count])),
            }
        }
        out
    }
}

fn check_depth(alphabet: Alphabet, depth: usize) -> Result<u64> {
    alphabet.checked_pow(depth).ok_or(Error::OrderOverflow {
        k: depth,
        max_k: alphabet.max_code_depth(),
    })
}

fn use_dense(cells: u64, window: usize) -> bool {
    cells <= DENSE_LIMIT || cells <= 4 * window as u64
}

/// Per-depth accumulator used during the rolling pass.
enum Acc {
    Dense(Vec<u64>),
    Codes(Vec<u64>),
}

impl Acc {
    fn finish(self) -> Repr {
        match self {
            Acc::Dense(v) => Repr::Dense(v),
            Acc::Codes(mut codes) => {
                codes.sort_unstable();
                let mut out: Vec<(u64, u64)> = Vec::new();
                for c in codes {
                    match out.last_mut() {
                        Some((last, n)) if *last == c => *n += 1,
                        _ => out.push((c, 1)),
                    }
                }
                Repr::Sparse(out)
            }
        }
    }
}

/// Build tables for depths `1..=max_depth` over the window `x_1^m` in one
/// left-to-right pass with one rolling code per depth.
fn count_all_depths(sample: &Sample, max_depth: usize, window_len: usize) -> Result<Vec<CountTable>> {
    let alphabet = sample.alphabet();
    let a = alphabet.size() as u64;
    let data = &sample.data()[..window_len];
    let mut cells = Vec::with_capacity(max_depth);
    for d in 1..=max_depth {
        cells.push(check_depth(alphabet, d)?);
    }
    let mut accs: Vec<Acc> = cells
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let d = i + 1;
            if use_dense(c, window_len) {
                Acc::Dense(vec![0; c as usize])
            } else {
                Acc::Codes(Vec::with_capacity((window_len + 1).saturating_sub(d)))
            }
        })
        .collect();
    // codes[d-1] is the code of the depth-d window ending at the current position.
    let mut codes = vec![0u64; max_depth];
    for (i, &x) in data.iter().enumerate() {
        let x = x as u64;
        for d in 1..=max_depth {
            let prev = codes[d - 1];
            // Drop the symbol leaving the window, shift, append.
            let base = if i + 1 > d {
                let leaving = data[i - d] as u64;
                prev - leaving * (cells[d - 1] / a)
            } else {
                prev
            };
            let code = base * a + x;
            codes[d - 1] = code;
            if i + 1 >= d {
                match &mut accs[d - 1] {
                    Acc::Dense(v) => v[code as usize] += 1,
                    Acc::Codes(v) => v.push(code),
                }
            }
        }
    }
    Ok(accs
        .into_iter()
        .enumerate()
        .map(|(i, acc)| CountTable {
            depth: i + 1,
            window_len,
            alphabet,
            repr: acc.finish(),
        })
        .collect())
}

/// `N_m(a_1^d)` for every depth-`d` string occurring in `x_1^m`.
pub fn count_table(sample: &Sample, depth: usize, window_len: usize) -> Result<CountTable> {
    if depth == 0 {
        return Err(Error::OrderOutOfRange {
            k: depth,
            n: sample.len(),
            requirement: "depth ≥ 1",
        });
    }
    if window_len > sample.len() {
        return Err(Error::OrderOutOfRange {
            k: window_len,
            n: sample.len(),
            requirement: "window ≤ n",
        });
    }
    if depth > window_len {
        return Err(Error::EmptyWindow {
            depth,
            window: window_len,
        });
    }
    check_depth(sample.alphabet(), depth)?;
    // Only the requested depth is materialised; the shallower rolling codes are cheap.
    let alphabet = sample.alphabet();
    let cells = check_depth(alphabet, depth)?;
    let data = &sample.data()[..window_len];
    let mut acc = if use_dense(cells, window_len) {
        Acc::Dense(vec![0; cells as usize])
    } else {
        Acc::Codes(Vec::with_capacity(window_len - depth + 1))
    };
    let a = alphabet.size() as u64;
    let top = cells / a;
    let mut code = 0u64;
    for (i, &x) in data.iter().enumerate() {
        if i >= depth {
            code -= data[i - depth] as u64 * top;
        }
        code = code * a + x as u64;
        if i + 1 >= depth {
            match &mut acc {
                Acc::Dense(v) => v[code as usize] += 1,
                Acc::Codes(v) => v.push(code),
            }
        }
    }
    Ok(CountTable {
        depth,
        window_len,
        alphabet,
        repr: acc.finish(),
    })
}

/// Counts of a sample for all depths `1..=max_depth` over the full window,
/// together with what is needed to read counts over the window `x_1^{n-1}`.
///
/// Every estimator evaluates many candidate orders on the same sample, so
/// the tables are built once.
#[derive(Debug, Clone)]
pub struct SampleCounts {
    n: usize,
    alphabet: Alphabet,
    full: Vec<CountTable>,
    /// Code of the length-`d` suffix `x_{n-d+1}^n`, the one window that lies
    /// in `x_1^n` but not in `x_1^{n-1}`.
    suffix_codes: Vec<u64>,
}

impl SampleCounts {
    /// Tables for depths `1..=max_depth` (at most `n`).
    pub fn build(sample: &Sample, max_depth: usize) -> Result<Self> {
        let n = sample.len();
        let max_depth = max_depth.clamp(1, n);
        let full = count_all_depths(sample, max_depth, n)?;
        let alphabet = sample.alphabet();
        let suffix_codes = (1..=max_depth)
            .map(|d| crate::types::encode(&sample.data()[n - d..], alphabet))
            .collect();
        Ok(Self {
            n,
            alphabet,
            full,
            suffix_codes,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn max_depth(&self) -> usize {
        self.full.len()
    }

    /// Largest order `k` whose conditional quantities are available.
    pub fn max_order(&self) -> usize {
        (self.max_depth() - 1).min(self.n - 1)
    }

    /// `N_n` at depth `d`.
    pub fn table(&self, depth: usize) -> &CountTable {
        &self.full[depth - 1]
    }

    /// `N_{n-1}(code)` at depth `d`, i.e. counts over `x_1^{n-1}`.
    pub fn shortened_count(&self, depth: usize, code: u64) -> u64 {
        let c = self.full[depth - 1].get(code);
        c - u64::from(code == self.suffix_codes[depth - 1] && c > 0)
    }

    fn check_order(&self, k: usize) -> Result<()> {
        if k >= self.n {
            return Err(Error::OrderOutOfRange {
                k,
                n: self.n,
                requirement: "k ≤ n-1",
            });
        }
        if k + 1 > self.max_depth() {
            return Err(Error::OrderOutOfRange {
                k,
                n: self.n,
                requirement: "k+1 within the counted depths",
            });
        }
        Ok(())
    }

    /// `log₂ ML_k = Σ N_n(a_1^{k+1}) log₂ P̂(a_{k+1} | a_1^k)`, with context
    /// totals taken as the sums of their children.
    pub fn log_ml(&self, k: usize) -> Result<LogProb> {
        self.check_order(k)?;
        let mut acc = 0.0;
        for (_, total, kids) in self.table(k + 1).groups() {
            let t = total as f64;
            for c in kids {
                let c = c as f64;
                acc += c * (c / t).log2();
            }
        }
        Ok(LogProb::new(acc))
    }

    /// `ĥ_k = -Σ P̂(a_1^{k+1}) log₂ P̂(a_{k+1} | a_1^k)` with
    /// `P̂(a_1^{k+1}) = N_n(a_1^{k+1}) / (n - k)` and the conditional
    /// denominator read from the shortened window.
    pub fn cond_entropy(&self, k: usize) -> Result<f64> {
        self.check_order(k)?;
        let a = self.alphabet.size() as u64;
        let denom = (self.n - k) as f64;
        let mut acc = 0.0;
        for (code, count) in self.table(k + 1).iter() {
            let ctx_count = if k == 0 {
                self.n as u64
            } else {
                self.shortened_count(k, code / a)
            };
            let joint = count as f64 / denom;
            acc -= joint * (count as f64 / ctx_count as f64).log2();
        }
        Ok(acc.max(0.0))
    }

    /// `Ĥ_k = -Σ P̂(a_1^k) log₂ P̂(a_1^k)`.
    pub fn entropy(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.max_depth() {
            return Err(Error::OrderOutOfRange {
                k,
                n: self.n,
                requirement: "1 ≤ k ≤ counted depth",
            });
        }
        let denom = (self.n - k + 1) as f64;
        let h = -self
            .table(k)
            .iter()
            .map(|(_, c)| xlog2x_unchecked(c as f64 / denom))
            .sum::<f64>();
        Ok(h.max(0.0))
    }
}

/// `P̂(a_1^k) = N_n(a_1^k) / (n - k + 1)`, keyed by string code.
pub fn empirical_prob(sample: &Sample, k: usize) -> Result<BTreeMap<u64, f64>> {
    let n = sample.len();
    if k == 0 || k > n {
        return Err(Error::OrderOutOfRange {
            k,
            n,
            requirement: "1 ≤ k ≤ n",
        });
    }
    let table = count_table(sample, k, n)?;
    let denom = (n - k + 1) as f64;
    Ok(table.iter().map(|(c, m)| (c, m as f64 / denom)).collect())
}

/// `P̂(a_{k+1} | a_1^k)` keyed by `(context code, symbol)`; contexts that
/// never occur in `x_1^{n-1}` are absent. For `k = 0` the context is the empty
/// string (code 0) and the values are the symbol marginals.
pub fn empirical_cond_prob(sample: &Sample, k: usize) -> Result<BTreeMap<(u64, u8), f64>> {
    let n = sample.len();
    if k >= n {
        return Err(Error::OrderOutOfRange {
            k,
            n,
            requirement: "0 ≤ k ≤ n-1",
        });
    }
    let a = sample.alphabet().size() as u64;
    let joint = count_table(sample, k + 1, n)?;
    let contexts = if k == 0 {
        None
    } else {
        Some(count_table(sample, k, n - 1)?)
    };
    let mut out = BTreeMap::new();
    for (code, count) in joint.iter() {
        let ctx = code / a;
        let denom = match &contexts {
            None => n as u64,
            Some(t) => t.get(ctx),
        };
        if denom > 0 {
            out.insert((ctx, (code % a) as u8), count as f64 / denom as f64);
        }
    }
    Ok(out)
}

/// `Ĥ_k` in bits, `1 ≤ k ≤ n`.
pub fn empirical_entropy(sample: &Sample, k: usize) -> Result<f64> {
    let p = empirical_prob(sample, k)?;
    Ok((-p.values().map(|&v| xlog2x_unchecked(v)).sum::<f64>()).max(0.0))
}

/// `ĥ_k` in bits, `0 ≤ k ≤ n - 1`.
pub fn empirical_cond_entropy(sample: &Sample, k: usize) -> Result<f64> {
    let n = sample.len();
    if k >= n {
        return Err(Error::OrderOutOfRange {
            k,
            n,
            requirement: "0 ≤ k ≤ n-1",
        });
    }
    SampleCounts::build(sample, k + 1)?.cond_entropy(k)
}

/// `log₂ ML_k(x_1^n)`, `0 ≤ k ≤ n - 1`.
pub fn log_ml(sample: &Sample, k: usize) -> Result<LogProb> {
    let n = sample.len();
    if k >= n {
        return Err(Error::OrderOutOfRange {
            k,
            n,
            requirement: "0 ≤ k ≤ n-1",
        });
    }
    SampleCounts::build(sample, k + 1)?.log_ml(k)
}

/// `log₂ ML_k` straight from a symbol slice, reusing `buf` for the
/// `|A|^{k+1}` dense counts. Used by exhaustive enumeration.
pub(crate) fn log_ml_dense(data: &[u8], a: usize, k: usize, buf: &mut Vec<u32>) -> f64 {
    let cells = a.pow(k as u32 + 1);
    buf.clear();
    buf.resize(cells, 0);
    let mut code = 0usize;
    let top = cells / a;
    for (i, &x) in data.iter().enumerate() {
        if i > k {
            code -= data[i - k - 1] as usize * top;
        }
        code = code * a + x as usize;
        if i >= k {
            buf[code] += 1;
        }
    }
    let mut acc = 0.0;
    for ctx in buf.chunks_exact(a) {
        let total: u32 = ctx.iter().sum();
        if total == 0 {
            continue;
        }
        let t = total as f64;
        for &c in ctx {
            if c > 0 {
                let c = c as f64;
                acc += c * (c / t).log2();
            }
        }
    }
    acc
}
