//! Shared domain types.
//!
//! Conventions used throughout the crate:
//!
//! * every entropy, code length and criterion value is in bits (log base 2);
//! * `0 · log 0 = 0`;
//! * symbols are dense indices `0..|A|`, and a string `a_1..a_d` is keyed by
//!   its base-`|A|` code with `a_1` as the most significant digit, so that
//!   ascending codes enumerate strings in lexicographic order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A finite alphabet `{0, .., size - 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Alphabet {
    size: usize,
}

impl Alphabet {
    pub const BINARY: Alphabet = Alphabet { size: 2 };

    pub fn new(size: usize) -> Result<Self> {
        if (2..=256).contains(&size) {
            Ok(Self { size })
        } else {
            Err(Error::InvalidAlphabet(size))
        }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn log2_size(&self) -> f64 {
        (self.size as f64).log2()
    }

    /// `|A|^d`, or `None` on `u64` overflow.
    pub fn checked_pow(&self, d: usize) -> Option<u64> {
        let d = u32::try_from(d).ok()?;
        (self.size as u64).checked_pow(d)
    }

    /// Largest `d` with `|A|^d` representable in a `u64`.
    pub fn max_code_depth(&self) -> usize {
        let mut d = 0;
        while self.checked_pow(d + 1).is_some() {
            d += 1;
        }
        d
    }
}

impl TryFrom<usize> for Alphabet {
    type Error = Error;
    fn try_from(size: usize) -> Result<Self> {
        Alphabet::new(size)
    }
}

impl From<Alphabet> for usize {
    fn from(a: Alphabet) -> usize {
        a.size
    }
}

/// An observed realization `x_1..x_n` over an alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    alphabet: Alphabet,
    data: Vec<u8>,
}

impl Sample {
    pub fn new(alphabet: Alphabet, data: Vec<u8>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some((position, &s)) = data
            .iter()
            .enumerate()
            .find(|(_, &s)| s as usize >= alphabet.size())
        {
            return Err(Error::SymbolOutOfRange {
                symbol: s as usize,
                position,
                alphabet_size: alphabet.size(),
            });
        }
        Ok(Self { alphabet, data })
    }

    /// Convenience constructor for samples over the digits `0`..`9`, `a`..`z`.
    pub fn from_str_symbols(alphabet: Alphabet, text: &str) -> Result<Self> {
        let data = text
            .trim()
            .chars()
            .enumerate()
            .map(|(position, ch)| {
                symbol_from_char(ch).ok_or_else(|| {
                    Error::Parse(format!("invalid symbol {ch:?} at position {position}"))
                })
            })
            .collect::<Result<Vec<u8>>>()?;
        Sample::new(alphabet, data)
    }

    #[inline]
    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false: samples have at least one symbol.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Apply a symbol permutation, e.g. for relabeling-invariance checks.
    pub fn relabel(&self, permutation: &[u8]) -> Result<Sample> {
        if permutation.len() != self.alphabet.size() {
            return Err(Error::LengthMismatch {
                left: permutation.len(),
                right: self.alphabet.size(),
            });
        }
        Sample::new(
            self.alphabet,
            self.data.iter().map(|&s| permutation[s as usize]).collect(),
        )
    }
}

/// Map `0..9a..z` to `0..36`.
pub fn symbol_from_char(ch: char) -> Option<u8> {
    match ch {
        '0'..='9' => Some(ch as u8 - b'0'),
        'a'..='z' => Some(ch as u8 - b'a' + 10),
        _ => None,
    }
}

pub fn symbol_to_char(s: u8) -> Option<char> {
    match s {
        0..=9 => Some((b'0' + s) as char),
        10..=35 => Some((b'a' + s - 10) as char),
        _ => None,
    }
}

/// Penalty function `pen(n)` of the penalized maximum likelihood criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltySpec {
    /// `½ log₂ n`.
    Bic,
    /// `1`.
    Aic,
    /// `n^κ` with `κ ∈ (0, 1)`.
    Power(f64),
    /// A constant `c ≥ 0`.
    Constant(f64),
}

impl PenaltySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PenaltySpec::Power(kappa) if !(kappa > 0.0 && kappa < 1.0) => Err(Error::Domain {
                what: "power penalty exponent (0,1)",
                value: kappa,
            }),
            PenaltySpec::Constant(c) if !(c >= 0.0 && c.is_finite()) => Err(Error::Domain {
                what: "constant penalty",
                value: c,
            }),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, n: f64) -> f64 {
        match *self {
            PenaltySpec::Bic => 0.5 * n.log2(),
            PenaltySpec::Aic => 1.0,
            PenaltySpec::Power(kappa) => n.powf(kappa),
            PenaltySpec::Constant(c) => c,
        }
    }
}

impl fmt::Display for PenaltySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltySpec::Bic => write!(f, "bic"),
            PenaltySpec::Aic => write!(f, "aic"),
            PenaltySpec::Power(k) => write!(f, "power:{k}"),
            PenaltySpec::Constant(c) => write!(f, "const:{c}"),
        }
    }
}

impl FromStr for PenaltySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let parse_num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Parse(format!("invalid penalty parameter {v:?}")))
        };
        let spec = match s.split_once(':') {
            None if s == "bic" => PenaltySpec::Bic,
            None if s == "aic" => PenaltySpec::Aic,
            Some(("power", v)) => PenaltySpec::Power(parse_num(v)?),
            Some(("const", v)) => PenaltySpec::Constant(parse_num(v)?),
            _ => return Err(Error::Parse(format!("unknown penalty {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for PenaltySpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PenaltySpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A base-2 log-probability. `-∞` (probability zero) is a legal value and
/// propagates through products.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO_PROB: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    pub fn new(bits: f64) -> Self {
        LogProb(bits)
    }

    pub fn from_prob(p: f64) -> Self {
        LogProb(if p == 0.0 { f64::NEG_INFINITY } else { p.log2() })
    }

    #[inline]
    pub fn bits(self) -> f64 {
        self.0
    }

    pub fn is_zero_prob(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn prob(self) -> f64 {
        self.0.exp2()
    }
}

impl std::ops::Add for LogProb {
    type Output = LogProb;
    /// Log of a product.
    fn add(self, rhs: LogProb) -> LogProb {
        if self.is_zero_prob() || rhs.is_zero_prob() {
            LogProb::ZERO_PROB
        } else {
            LogProb(self.0 + rhs.0)
        }
    }
}

/// Master seed plus the derivation rule for per-task seeds.
///
/// A task seed is a SplitMix64 fold of the master seed with each path
/// component in order: `h ← mix(h ⊕ mix(component + φ))`, where `φ` is the
/// 64-bit golden ratio constant and `mix` the SplitMix64 finalizer. Task RNGs
/// are `ChaCha8Rng::seed_from_u64(task_seed)`, which is stable across
/// platforms and releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Seed for the task identified by `path` (e.g. `[experiment, n, trial]`).
    pub fn derive(&self, path: &[u64]) -> u64 {
        path.iter().fold(splitmix64(self.master_seed), |h, &c| {
            splitmix64(h ^ splitmix64(c.wrapping_add(GOLDEN)))
        })
    }

    /// Seed for trial `t` of a single-level experiment.
    pub fn trial(&self, t: u64) -> u64 {
        self.derive(&[t])
    }
}

/// Stable 64-bit id of a string label, for use as a seed path component.
pub fn label_id(label: &str) -> u64 {
    // FNV-1a; only needs to be stable, not strong.
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// `p · log₂ p` with `0 · log 0 = 0`.
pub fn xlog2x(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain {
            what: "xlog2x [0,1]",
            value: p,
        });
    }
    Ok(xlog2x_unchecked(p))
}

#[inline]
pub(crate) fn xlog2x_unchecked(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Shannon entropy in bits of a (sub)probability vector.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    -probs.iter().map(|&p| xlog2x_unchecked(p)).sum::<f64>()
}

/// Binary entropy `H₂(p)`.
pub fn binary_entropy(p: f64) -> f64 {
    -(xlog2x_unchecked(p) + xlog2x_unchecked(1.0 - p))
}

/// Base-`|A|` code of a string, first symbol most significant.
pub fn encode(symbols: &[u8], alphabet: Alphabet) -> u64 {
    let a = alphabet.size() as u64;
    symbols.iter().fold(0u64, |code, &s| code * a + s as u64)
}

/// Inverse of [`encode`] for strings of length `depth`.
pub fn decode(mut code: u64, depth: usize, alphabet: Alphabet) -> Vec<u8> {
    let a = alphabet.size() as u64;
    let mut out = vec![0u8; depth];
    for slot in out.iter_mut().rev() {
        *slot = (code % a) as u8;
        code /= a;
    }
    out
}
