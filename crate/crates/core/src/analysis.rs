//! Per-(item, layer) diagnostics over a capture bundle.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::{Bundle, ItemRecord};
use crate::error::{Error, Result};
use crate::graph::{attention_graph, AggregationScheme, LaplacianKind};
use crate::spectral::{layer_diagnostics, HferCutoff, LayerDiagnostics};

/// Everything that changes diagnostic values. Two tables may only be
/// contrasted when their fingerprints agree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub laplacian: LaplacianKind,
    pub aggregation: AggregationScheme,
    pub cutoff: HferCutoff,
    /// Layer indices (manifest numbering) to analyze; `None` means all.
    pub layers: Option<Vec<usize>>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            laplacian: LaplacianKind::RandomWalk,
            aggregation: AggregationScheme::default(),
            cutoff: HferCutoff::default(),
            layers: None,
        }
    }
}

impl AnalysisConfig {
    /// Short hex digest of the canonical configuration.
    pub fn fingerprint(&self) -> String {
        let layers = match &self.layers {
            None => "all".to_string(),
            Some(ls) => ls.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","),
        };
        let canonical = format!(
            "laplacian={};weighting={};exclude_special={};cutoff={};layers={}",
            self.laplacian,
            self.aggregation.weighting,
            self.aggregation.exclude_special,
            self.cutoff,
            layers
        );
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub layer: usize,
    pub diagnostics: LayerDiagnostics,
    /// Token indices removed as isolated after exclusion.
    pub dropped: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemDiagnostics {
    pub item_id: String,
    pub fingerprint: String,
    pub layers: Vec<LayerRow>,
}

impl ItemDiagnostics {
    pub fn layer(&self, layer: usize) -> Option<&LayerDiagnostics> {
        self.layers.iter().find(|r| r.layer == layer).map(|r| &r.diagnostics)
    }
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Diagnostics for one item at one storage position.
pub fn diagnose_layer(
    bundle: &Bundle,
    item: &ItemRecord,
    pos: usize,
    config: &AnalysisConfig,
) -> Result<LayerRow> {
    let layer = pos + bundle.manifest().layer_index_base;
    let run = || -> Result<LayerRow> {
        let heads = bundle.attention(item, pos)?.heads()?;
        let x = bundle.hidden(item, pos)?.to_matrix()?;
        let graph = attention_graph(&heads, &item.special_mask(), config.aggregation, config.laplacian)?;
        let x = select_rows(&x, graph.nodes());
        Ok(LayerRow {
            layer,
            diagnostics: layer_diagnostics(&graph, &x, config.cutoff)?,
            dropped: graph.dropped().to_vec(),
        })
    };
    run().map_err(|e| e.with_context(format!("item {} layer {layer}", item.item_id)))
}

fn positions(bundle: &Bundle, config: &AnalysisConfig) -> Result<Vec<usize>> {
    let m = bundle.manifest();
    match &config.layers {
        None => Ok((0..m.num_layers).collect()),
        Some(ls) => ls
            .iter()
            .map(|&l| {
                m.layer_position(l)
                    .ok_or_else(|| Error::Usage(format!("layer {l} not in bundle")))
            })
            .collect(),
    }
}

pub fn diagnose_item(bundle: &Bundle, item: &ItemRecord, config: &AnalysisConfig) -> Result<ItemDiagnostics> {
    let layers = positions(bundle, config)?
        .into_iter()
        .map(|p| diagnose_layer(bundle, item, p, config))
        .collect::<Result<_>>()?;
    Ok(ItemDiagnostics {
        item_id: item.item_id.clone(),
        fingerprint: config.fingerprint(),
        layers,
    })
}

/// Diagnoses the selected items (all when `items` is `None`) in parallel.
/// Output is ordered by item id, then layer, independent of scheduling.
pub fn diagnose_bundle(
    bundle: &Bundle,
    config: &AnalysisConfig,
    items: Option<&[&str]>,
) -> Result<Vec<ItemDiagnostics>> {
    let pos = positions(bundle, config)?;
    let selected: Vec<&ItemRecord> = bundle
        .manifest()
        .items
        .iter()
        .filter(|i| items.is_none_or(|ids| ids.contains(&i.item_id.as_str())))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..selected.len())
        .flat_map(|i| pos.iter().map(move |&p| (i, p)))
        .collect();
    let rows: Vec<LayerRow> = jobs
        .par_iter()
        .map(|&(i, p)| diagnose_layer(bundle, selected[i], p, config))
        .collect::<Result<_>>()?;
    let fingerprint = config.fingerprint();
    let mut out: Vec<ItemDiagnostics> = selected
        .iter()
        .enumerate()
        .map(|(i, item)| ItemDiagnostics {
            item_id: item.item_id.clone(),
            fingerprint: fingerprint.clone(),
            layers: rows[i * pos.len()..(i + 1) * pos.len()].to_vec(),
        })
        .collect();
    out.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    for d in &mut out {
        d.layers.sort_by_key(|r| r.layer);
    }
    Ok(out)
}
