//! Sample and model files.
//!
//! Samples are stored either as one line of characters from `0-9a-z`, or in a
//! binary layout: `|A|` and `n` as little-endian `u64`, then one byte per
//! symbol. Readers detect the binary layout by its header and exact length.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::processes::{Model, ModelConfig};
use crate::types::{symbol_from_char, symbol_to_char, Alphabet, Sample};

const HEADER_LEN: usize = 16;

fn parse_binary(bytes: &[u8]) -> Option<Result<Sample>> {
    if bytes.len() < HEADER_LEN {
        return None;
    }
    let a = u64::from_le_bytes(bytes[0..8].try_into().ok()?);
    let n = u64::from_le_bytes(bytes[8..16].try_into().ok()?);
    if !(2..=256).contains(&a) || (bytes.len() - HEADER_LEN) as u64 != n {
        return None;
    }
    let alphabet = Alphabet::new(a as usize).ok()?;
    Some(Sample::new(alphabet, bytes[HEADER_LEN..].to_vec()))
}

/// Parse the text layout. Without an explicit alphabet the size is the
/// largest symbol plus one, at least 2.
pub fn parse_text_sample(text: &str, alphabet: Option<Alphabet>) -> Result<Sample> {
    let line = text.trim();
    let mut data = Vec::with_capacity(line.len());
    for (i, ch) in line.chars().enumerate() {
        let s = symbol_from_char(ch).ok_or_else(|| Error::Parse(format!("invalid symbol {ch:?} at position {i}")))?;
        data.push(s);
    }
    let alphabet = match alphabet {
        Some(a) => a,
        None => Alphabet::new((data.iter().copied().max().unwrap_or(0) as usize + 1).max(2))?,
    };
    Sample::new(alphabet, data)
}

/// Read a sample in either layout.
pub fn read_sample(path: &Path, alphabet: Option<Alphabet>) -> Result<Sample> {
    let bytes = fs::read(path)?;
    if let Some(parsed) = parse_binary(&bytes) {
        let sample = parsed?;
        if let Some(a) = alphabet {
            if a != sample.alphabet() {
                return Err(Error::Parse(format!(
                    "file declares |A| = {} but {} was requested",
                    sample.alphabet().size(),
                    a.size()
                )));
            }
        }
        return Ok(sample);
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    parse_text_sample(&text, alphabet)
}

pub fn sample_to_text(sample: &Sample) -> Result<String> {
    let mut out = String::with_capacity(sample.len() + 1);
    for &s in sample.data() {
        out.push(symbol_to_char(s).ok_or_else(|| Error::Parse(format!("symbol {s} has no text form (|A| > 36)")))?);
    }
    out.push('\n');
    Ok(out)
}

pub fn sample_to_binary(sample: &Sample) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + sample.len());
    out.extend_from_slice(&(sample.alphabet().size() as u64).to_le_bytes());
    out.extend_from_slice(&(sample.len() as u64).to_le_bytes());
    out.extend_from_slice(sample.data());
    out
}

/// Text layout for `|A| ≤ 36`, binary otherwise.
pub fn write_sample(path: &Path, sample: &Sample) -> Result<()> {
    if sample.alphabet().size() <= 36 {
        fs::write(path, sample_to_text(sample)?)?;
    } else {
        fs::write(path, sample_to_binary(sample))?;
    }
    Ok(())
}

/// Parse a model description, JSON when it starts with `{`, TOML otherwise.
pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    } else {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn read_model_config(path: &Path) -> Result<ModelConfig> {
    parse_model_config(&fs::read_to_string(path)?)
}

pub fn read_model(path: &Path) -> Result<Model> {
    read_model_config(path)?.build()
}
