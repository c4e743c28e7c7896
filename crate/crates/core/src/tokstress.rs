//! Tokenizer-stress covariates from manifest token metadata.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::bundle::ItemRecord;
use crate::error::{Error, Result};
use crate::stats::{mean, sample_sd};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizerMetrics {
    /// Tokens per character.
    pub phi: f64,
    /// Entropy of the piece distribution within the item, natural log.
    pub h_frag: f64,
    pub h_frag_norm: f64,
    pub token_count: usize,
}

/// Metrics over the item's non-special tokens. Characters are Unicode
/// scalar values of the raw text, spaces included.
pub fn tokenizer_metrics(item: &ItemRecord) -> Result<TokenizerMetrics> {
    let pieces: Vec<&str> = item.tokens.iter().filter(|t| !t.special).map(|t| t.piece.as_str()).collect();
    if pieces.is_empty() {
        return Err(Error::Invalid(format!("item {} has no non-special tokens", item.item_id)));
    }
    if item.char_len == 0 {
        return Err(Error::Invalid(format!("item {} has zero characters", item.item_id)));
    }
    Ok(metrics_of(&pieces, item.char_len))
}

pub fn metrics_of(pieces: &[&str], char_len: usize) -> TokenizerMetrics {
    let n = pieces.len();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in pieces {
        *counts.entry(p).or_default() += 1;
    }
    let mut freqs: Vec<usize> = counts.into_values().collect();
    freqs.sort_unstable();
    let h_frag = freqs
        .iter()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0);
    TokenizerMetrics {
        phi: n as f64 / char_len as f64,
        h_frag,
        h_frag_norm: h_frag / n as f64,
        token_count: n,
    }
}

/// Tokenizer metrics of one item, tagged for joining.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItemStress {
    pub family: String,
    pub language: String,
    pub item_id: String,
    pub metrics: TokenizerMetrics,
}

/// Per-language spectral endpoint to join against.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LanguageEndpoint {
    pub family: String,
    pub language: String,
    /// Magnitude of the early-window Fiedler contrast.
    pub endpoint: f64,
    pub token_count_delta_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressRow {
    pub family: String,
    pub language: String,
    pub n_items: usize,
    pub phi_mean: f64,
    pub h_frag_norm_mean: f64,
    pub endpoint: f64,
    pub token_count_delta_mean: f64,
}

/// One row per (family, language) present in both inputs, sorted by key.
/// Keys present in only one input are all listed in the error.
pub fn stress_join(items: &[ItemStress], endpoints: &[LanguageEndpoint]) -> Result<Vec<StressRow>> {
    let mut grouped: BTreeMap<(&str, &str), Vec<&TokenizerMetrics>> = BTreeMap::new();
    for s in items {
        grouped.entry((&s.family, &s.language)).or_default().push(&s.metrics);
    }
    let mut ends: BTreeMap<(&str, &str), &LanguageEndpoint> = BTreeMap::new();
    for e in endpoints {
        if ends.insert((&e.family, &e.language), e).is_some() {
            return Err(Error::Invalid(format!("duplicate endpoint for {}/{}", e.family, e.language)));
        }
    }
    let keys: BTreeSet<(&str, &str)> = grouped.keys().chain(ends.keys()).copied().collect();
    let mut missing = Vec::new();
    let mut rows = Vec::new();
    for key in keys {
        match (grouped.get(&key), ends.get(&key)) {
            (Some(ms), Some(e)) => rows.push(StressRow {
                family: key.0.to_string(),
                language: key.1.to_string(),
                n_items: ms.len(),
                phi_mean: mean(&ms.iter().map(|m| m.phi).collect::<Vec<_>>()),
                h_frag_norm_mean: mean(&ms.iter().map(|m| m.h_frag_norm).collect::<Vec<_>>()),
                endpoint: e.endpoint,
                token_count_delta_mean: e.token_count_delta_mean,
            }),
            (Some(_), None) => missing.push(format!("{}/{} (no endpoint)", key.0, key.1)),
            (None, _) => missing.push(format!("{}/{} (no token metadata)", key.0, key.1)),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Invalid(format!("unmatched languages: {}", missing.join(", "))));
    }
    Ok(rows)
}

/// `(v − mean) / sd` with the sample SD.
pub fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::Degenerate("standardizing needs at least two values".into()));
    }
    let (m, sd) = (mean(values), sample_sd(values));
    if !(sd > 0.0) {
        return Err(Error::Degenerate("zero dispersion".into()));
    }
    Ok(values.iter().map(|v| (v - m) / sd).collect())
}
