//! Matched-condition contrasts: per-layer deltas between paired items and
//! their layer-window means.
//!
//! Deltas are always `condition_b − condition_a` (passive minus active by
//! convention). Windows use the manifest's layer numbering; the early window
//! is the 2nd through 5th transformer block regardless of base.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::analysis::ItemDiagnostics;
use crate::bundle::{BundleManifest, VoiceType};
use crate::error::{Error, Result};
use crate::spectral::LayerDiagnostics;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLabel {
    Early,
    Mid,
    Late,
    Overall,
    Custom,
}

impl WindowLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            WindowLabel::Early => "early",
            WindowLabel::Mid => "mid",
            WindowLabel::Late => "late",
            WindowLabel::Overall => "overall",
            WindowLabel::Custom => "custom",
        }
    }
}

/// Inclusive layer range in manifest numbering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerWindow {
    pub label: WindowLabel,
    pub lo: usize,
    pub hi: usize,
}

impl LayerWindow {
    pub fn new(label: WindowLabel, lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::Usage(format!("window {lo}:{hi} has lo > hi")));
        }
        Ok(LayerWindow { label, lo, hi })
    }

    pub fn custom(lo: usize, hi: usize) -> Result<Self> {
        LayerWindow::new(WindowLabel::Custom, lo, hi)
    }

    /// Blocks 2–5.
    pub fn early(base: usize) -> Self {
        LayerWindow { label: WindowLabel::Early, lo: base + 1, hi: base + 4 }
    }

    /// Blocks 6–10.
    pub fn mid(base: usize) -> Self {
        LayerWindow { label: WindowLabel::Mid, lo: base + 5, hi: base + 9 }
    }

    /// Block 11 to the last block; `None` for models with fewer than 11 blocks.
    pub fn late(base: usize, num_layers: usize) -> Option<Self> {
        let top = base + num_layers.checked_sub(1)?;
        (top >= base + 10).then_some(LayerWindow { label: WindowLabel::Late, lo: base + 10, hi: top })
    }

    pub fn overall(base: usize, num_layers: usize) -> Self {
        LayerWindow { label: WindowLabel::Overall, lo: base, hi: base + num_layers.saturating_sub(1) }
    }

    /// Parses `lo:hi`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (lo, hi) = spec
            .split_once(':')
            .ok_or_else(|| Error::Usage(format!("window {spec:?} is not lo:hi")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Usage(format!("window {spec:?} is not lo:hi")))
        };
        LayerWindow::custom(parse(lo)?, parse(hi)?)
    }

    pub fn name(&self) -> String {
        match self.label {
            WindowLabel::Custom => format!("{}-{}", self.lo, self.hi),
            l => l.as_str().to_string(),
        }
    }

    pub fn contains(&self, layer: usize) -> bool {
        (self.lo..=self.hi).contains(&layer)
    }
}

/// The default window set (early, mid, late) for a manifest. Windows that do
/// not fit the model are dropped and reported as warnings.
pub fn default_windows(manifest: &BundleManifest) -> (Vec<LayerWindow>, Vec<String>) {
    let base = manifest.layer_index_base;
    let top = base + manifest.num_layers.saturating_sub(1);
    let mut windows = Vec::new();
    let mut warnings = Vec::new();
    for w in [LayerWindow::early(base), LayerWindow::mid(base)] {
        if w.hi <= top {
            windows.push(w);
        } else if w.lo <= top {
            warnings.push(format!("{} window clamped to {}-{top}", w.name(), w.lo));
            windows.push(LayerWindow { hi: top, ..w });
        } else {
            warnings.push(format!("{} window empty for a {}-layer model", w.name(), manifest.num_layers));
        }
    }
    match LayerWindow::late(base, manifest.num_layers) {
        Some(w) => windows.push(w),
        None => warnings.push(format!("late window empty for a {}-layer model", manifest.num_layers)),
    }
    (windows, warnings)
}

/// Checks a window against the manifest's layer range.
pub fn check_window(w: &LayerWindow, manifest: &BundleManifest) -> Result<()> {
    let base = manifest.layer_index_base;
    let top = base + manifest.num_layers.saturating_sub(1);
    if w.lo < base || w.hi > top || manifest.num_layers == 0 {
        return Err(Error::Usage(format!(
            "window {}:{} outside layers {base}:{top}",
            w.lo, w.hi
        )));
    }
    Ok(())
}

/// The four diagnostics as one value, used for levels and deltas alike.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub energy: f64,
    pub entropy: f64,
    pub hfer: f64,
    pub fiedler: f64,
}

impl Quad {
    pub fn sub(&self, other: &Quad) -> Quad {
        Quad {
            energy: self.energy - other.energy,
            entropy: self.entropy - other.entropy,
            hfer: self.hfer - other.hfer,
            fiedler: self.fiedler - other.fiedler,
        }
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Energy => self.energy,
            Metric::Entropy => self.entropy,
            Metric::Hfer => self.hfer,
            Metric::Fiedler => self.fiedler,
        }
    }

    fn mean(values: &[Quad]) -> Quad {
        let n = values.len() as f64;
        let sum = |f: fn(&Quad) -> f64| values.iter().map(f).sum::<f64>() / n;
        Quad {
            energy: sum(|q| q.energy),
            entropy: sum(|q| q.entropy),
            hfer: sum(|q| q.hfer),
            fiedler: sum(|q| q.fiedler),
        }
    }
}

impl From<&LayerDiagnostics> for Quad {
    fn from(d: &LayerDiagnostics) -> Self {
        Quad {
            energy: d.energy,
            entropy: d.spectral_entropy,
            hfer: d.hfer,
            fiedler: d.fiedler,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Energy,
    Entropy,
    Hfer,
    Fiedler,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Energy, Metric::Entropy, Metric::Hfer, Metric::Fiedler];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Energy => "energy",
            Metric::Entropy => "entropy",
            Metric::Hfer => "hfer",
            Metric::Fiedler => "fiedler",
        }
    }
}

/// Two items matched on (language, paraphrase id).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemPair {
    pub language: String,
    pub paraphrase_id: u32,
    pub voice_type: VoiceType,
    pub item_a: String,
    pub item_b: String,
    /// `|N_b − N_a|`.
    pub token_count_delta: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Pairing {
    pub pairs: Vec<ItemPair>,
    /// Items of either condition without a partner.
    pub orphans: Vec<String>,
}

/// Matches condition-a items with condition-b items on (language,
/// paraphrase id). Languages keep manifest order; pairs within a language
/// are sorted by paraphrase id. With `condition_a == condition_b` every item
/// is paired with itself.
pub fn pair_items(manifest: &BundleManifest, condition_a: &str, condition_b: &str) -> Result<Pairing> {
    for c in [condition_a, condition_b] {
        if !manifest.items.iter().any(|i| i.condition == c) {
            return Err(Error::Pairing(format!("condition {c:?} not present in manifest")));
        }
    }
    let mut lang_order: Vec<&str> = Vec::new();
    let mut by_key: [BTreeMap<(usize, u32), usize>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for (idx, item) in manifest.items.iter().enumerate() {
        let lang = match lang_order.iter().position(|l| *l == item.language) {
            Some(p) => p,
            None => {
                lang_order.push(&item.language);
                lang_order.len() - 1
            }
        };
        for (side, cond) in [condition_a, condition_b].into_iter().enumerate() {
            if item.condition != cond || (side == 1 && condition_a == condition_b) {
                continue;
            }
            if by_key[side].insert((lang, item.paraphrase_id), idx).is_some() {
                return Err(Error::Pairing(format!(
                    "duplicate (language {}, paraphrase {}, condition {cond})",
                    item.language, item.paraphrase_id
                )));
            }
        }
    }
    if condition_a == condition_b {
        by_key[1] = by_key[0].clone();
    }

    let mut pairing = Pairing::default();
    for (key, &ia) in &by_key[0] {
        match by_key[1].get(key) {
            Some(&ib) => {
                let (a, b) = (&manifest.items[ia], &manifest.items[ib]);
                pairing.pairs.push(ItemPair {
                    language: a.language.clone(),
                    paraphrase_id: a.paraphrase_id,
                    voice_type: b.voice_type,
                    item_a: a.item_id.clone(),
                    item_b: b.item_id.clone(),
                    token_count_delta: a.num_tokens().abs_diff(b.num_tokens()),
                });
            }
            None => pairing.orphans.push(manifest.items[ia].item_id.clone()),
        }
    }
    for (key, &ib) in &by_key[1] {
        if !by_key[0].contains_key(key) {
            pairing.orphans.push(manifest.items[ib].item_id.clone());
        }
    }
    Ok(pairing)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExclusionReport {
    pub max_token_delta: Option<usize>,
    /// (language, excluded pair count), languages in input order.
    pub per_language: Vec<(String, usize)>,
    pub excluded: usize,
}

/// Keeps pairs whose token counts differ by at most `max_token_delta`
/// (`None` keeps everything).
pub fn length_control_filter(pairs: &[ItemPair], max_token_delta: Option<usize>) -> (Vec<ItemPair>, ExclusionReport) {
    let mut report = ExclusionReport { max_token_delta, ..Default::default() };
    let mut kept = Vec::new();
    for p in pairs {
        if !report.per_language.iter().any(|(l, _)| *l == p.language) {
            report.per_language.push((p.language.clone(), 0));
        }
        if max_token_delta.is_none_or(|m| p.token_count_delta <= m) {
            kept.push(p.clone());
        } else {
            report.excluded += 1;
            if let Some(e) = report.per_language.iter_mut().find(|(l, _)| *l == p.language) {
                e.1 += 1;
            }
        }
    }
    (kept, report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMean {
    pub window: LayerWindow,
    pub delta: Quad,
    /// Window means of each condition's levels.
    pub level_a: Quad,
    pub level_b: Quad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDelta {
    pub layer: usize,
    pub a: Quad,
    pub b: Quad,
    pub delta: Quad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedContrast {
    pub family: String,
    pub language: String,
    pub voice_type: VoiceType,
    pub paraphrase_id: u32,
    pub token_count_delta: usize,
    pub layers: Vec<LayerDelta>,
    pub windows: Vec<WindowMean>,
}

impl PairedContrast {
    pub fn window(&self, label: WindowLabel) -> Option<&WindowMean> {
        self.windows.iter().find(|w| w.window.label == label)
    }

    pub fn window_named(&self, name: &str) -> Option<&WindowMean> {
        self.windows.iter().find(|w| w.window.name() == name)
    }

    /// Mean per-layer delta over an arbitrary window.
    pub fn window_mean(&self, w: &LayerWindow) -> Result<WindowMean> {
        let rows: Vec<&LayerDelta> = self.layers.iter().filter(|l| w.contains(l.layer)).collect();
        if rows.is_empty() {
            return Err(Error::Usage(format!("window {}:{} selects no analyzed layer", w.lo, w.hi)));
        }
        let pick = |f: fn(&LayerDelta) -> Quad| Quad::mean(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        Ok(WindowMean {
            window: *w,
            delta: pick(|r| r.delta),
            level_a: pick(|r| r.a),
            level_b: pick(|r| r.b),
        })
    }
}

/// Per-layer `b − a` deltas and window means for one pair.
pub fn delta_per_layer(
    family: &str,
    pair: &ItemPair,
    diag_a: &ItemDiagnostics,
    diag_b: &ItemDiagnostics,
    windows: &[LayerWindow],
) -> Result<PairedContrast> {
    if diag_a.fingerprint != diag_b.fingerprint {
        return Err(Error::FingerprintMismatch {
            left: diag_a.fingerprint.clone(),
            right: diag_b.fingerprint.clone(),
        });
    }
    if diag_a.layers.len() != diag_b.layers.len() {
        return Err(Error::Invalid(format!(
            "items {} and {} have {} vs {} layers",
            diag_a.item_id,
            diag_b.item_id,
            diag_a.layers.len(),
            diag_b.layers.len()
        )));
    }
    let layers = diag_a
        .layers
        .iter()
        .zip(&diag_b.layers)
        .map(|(ra, rb)| {
            if ra.layer != rb.layer {
                return Err(Error::Invalid(format!("layer {} paired with layer {}", ra.layer, rb.layer)));
            }
            let (a, b) = (Quad::from(&ra.diagnostics), Quad::from(&rb.diagnostics));
            Ok(LayerDelta { layer: ra.layer, a, b, delta: b.sub(&a) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut contrast = PairedContrast {
        family: family.to_string(),
        language: pair.language.clone(),
        voice_type: pair.voice_type,
        paraphrase_id: pair.paraphrase_id,
        token_count_delta: pair.token_count_delta,
        layers,
        windows: Vec::new(),
    };
    contrast.windows = windows.iter().map(|w| contrast.window_mean(w)).collect::<Result<_>>()?;
    Ok(contrast)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Language,
    VoiceType,
    Family,
}

impl GroupBy {
    pub fn key(self, c: &PairedContrast) -> String {
        match self {
            GroupBy::Language => c.language.clone(),
            GroupBy::VoiceType => c.voice_type.to_string(),
            GroupBy::Family => c.family.clone(),
        }
    }
}

/// Paraphrase-level endpoints of one group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupEndpoints {
    pub key: String,
    pub family: String,
    pub voice_type: Option<VoiceType>,
    pub values: Vec<f64>,
    /// Window-mean levels of each condition, per paraphrase.
    pub level_a: Vec<f64>,
    pub level_b: Vec<f64>,
    pub token_count_delta: Vec<usize>,
}

impl GroupEndpoints {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Arithmetic mean, summed in sorted order so the result does not depend
    /// on input order.
    pub fn mean(&self) -> f64 {
        order_free_mean(&self.values)
    }
}

pub fn order_free_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Groups paraphrase-level window endpoints of one metric. Groups keep
/// first-appearance order; every key in `expected` must end up nonempty.
pub fn aggregate(
    contrasts: &[PairedContrast],
    group_by: GroupBy,
    window: &str,
    metric: Metric,
    expected: &[String],
) -> Result<Vec<GroupEndpoints>> {
    let mut order: Vec<String> = expected.to_vec();
    let mut groups: HashMap<String, GroupEndpoints> = HashMap::new();
    for c in contrasts {
        let key = group_by.key(c);
        let w = c
            .window_named(window)
            .ok_or_else(|| Error::Usage(format!("window {window} not computed")))?;
        if !order.contains(&key) {
            order.push(key.clone());
        }
        let g = groups.entry(key.clone()).or_insert_with(|| GroupEndpoints {
            key,
            family: c.family.clone(),
            voice_type: Some(c.voice_type),
            values: Vec::new(),
            level_a: Vec::new(),
            level_b: Vec::new(),
            token_count_delta: Vec::new(),
        });
        if g.voice_type != Some(c.voice_type) {
            g.voice_type = None;
        }
        g.values.push(w.delta.get(metric));
        g.level_a.push(w.level_a.get(metric));
        g.level_b.push(w.level_b.get(metric));
        g.token_count_delta.push(c.token_count_delta);
    }
    order
        .into_iter()
        .map(|k| groups.remove(&k).ok_or_else(|| Error::EmptyGroup(k)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::LayerRow;
    use crate::bundle::{ItemRecord, TokenRecord};
    use proptest::prelude::*;

    fn item(id: &str, lang: &str, cond: &str, pid: u32, n: usize) -> ItemRecord {
        ItemRecord {
            item_id: id.into(),
            language: lang.into(),
            voice_type: VoiceType::Periphrastic,
            condition: cond.into(),
            paraphrase_id: pid,
            text: "x y".into(),
            char_len: 3,
            tokens: (0..n).map(|k| TokenRecord::new("t", k as u32)).collect(),
            behavioral_nll: None,
            attention_files: vec![],
            hidden_files: vec![],
            embedding_file: None,
        }
    }

    fn manifest(items: Vec<ItemRecord>) -> BundleManifest {
        let mut m = BundleManifest::new("m", 12, 2, 4);
        m.items = items;
        m
    }

    fn diags(id: &str, fiedler: &[f64]) -> ItemDiagnostics {
        ItemDiagnostics {
            item_id: id.into(),
            fingerprint: "fp".into(),
            layers: fiedler
                .iter()
                .enumerate()
                .map(|(p, &f)| LayerRow {
                    layer: p + 1,
                    diagnostics: LayerDiagnostics {
                        energy: f * 3.0,
                        spectral_entropy: 1.0 - f,
                        hfer: f / 2.0,
                        fiedler: f,
                        cutoff_k: 1,
                        n: 4,
                    },
                    dropped: vec![],
                })
                .collect(),
        }
    }

    fn pair() -> ItemPair {
        ItemPair {
            language: "en".into(),
            paraphrase_id: 0,
            voice_type: VoiceType::Periphrastic,
            item_a: "a".into(),
            item_b: "b".into(),
            token_count_delta: 1,
        }
    }

    #[test]
    fn pairs_bijection_orphans_and_duplicates() {
        let mut items = Vec::new();
        for lang in ["en", "de"] {
            for p in 0..10 {
                items.push(item(&format!("{lang}-a{p}"), lang, "active", p, 5));
                if !(lang == "de" && p == 3) {
                    items.push(item(&format!("{lang}-p{p}"), lang, "passive", p, 6));
                }
            }
        }
        let m = manifest(items.clone());
        let pairing = pair_items(&m, "active", "passive").unwrap();
        assert_eq!(pairing.pairs.iter().filter(|p| p.language == "en").count(), 10);
        assert_eq!(pairing.pairs.iter().filter(|p| p.language == "de").count(), 9);
        assert_eq!(pairing.orphans, vec!["de-a3".to_string()]);
        assert_eq!(pairing.pairs[0].language, "en");
        assert_eq!(pairing.pairs[0].token_count_delta, 1);

        items.push(item("dup", "en", "passive", 4, 5));
        let err = pair_items(&manifest(items), "active", "passive").unwrap_err();
        assert!(err.to_string().contains("language en, paraphrase 4, condition passive"), "{err}");

        assert!(pair_items(&m, "active", "middle").is_err());
    }

    #[test]
    fn self_pairing() {
        let m = manifest(vec![item("a", "en", "active", 0, 4), item("b", "en", "active", 1, 4)]);
        let p = pair_items(&m, "active", "active").unwrap();
        assert_eq!(p.pairs.len(), 2);
        assert!(p.pairs.iter().all(|x| x.item_a == x.item_b));
    }

    #[test]
    fn windowed_delta_example() {
        let a = diags("a", &[0.9, 0.7, 0.7, 0.7, 0.7, 0.9]);
        let b = diags("b", &[0.9, 0.5, 0.5, 0.5, 0.5, 0.9]);
        let early = LayerWindow::early(1);
        let c = delta_per_layer("m", &pair(), &a, &b, &[early]).unwrap();
        let w = c.window(WindowLabel::Early).unwrap();
        assert!((w.delta.fiedler + 0.2).abs() < 1e-12);
        let per_layer: f64 = c.layers[1..5].iter().map(|l| l.delta.fiedler).sum::<f64>() / 4.0;
        assert_eq!(w.delta.fiedler, per_layer);
        for l in &c.layers {
            assert_eq!(l.delta.fiedler, l.b.fiedler - l.a.fiedler);
        }

        let same = delta_per_layer("m", &pair(), &a, &a, &[early]).unwrap();
        assert!(same.layers.iter().all(|l| l.delta == Quad::default()));
    }

    #[test]
    fn fingerprint_and_layer_mismatch() {
        let a = diags("a", &[0.1, 0.2]);
        let mut b = diags("b", &[0.1, 0.2]);
        b.fingerprint = "other".into();
        assert!(matches!(
            delta_per_layer("m", &pair(), &a, &b, &[]),
            Err(Error::FingerprintMismatch { .. })
        ));
        let b = diags("b", &[0.1, 0.2, 0.3]);
        assert!(delta_per_layer("m", &pair(), &a, &b, &[]).is_err());
    }

    #[test]
    fn length_filter() {
        let pairs: Vec<ItemPair> = (0..4)
            .map(|d| ItemPair { token_count_delta: d, paraphrase_id: d as u32, ..pair() })
            .collect();
        let (kept, rep) = length_control_filter(&pairs, Some(2));
        assert_eq!(kept.len(), 3);
        assert_eq!(rep.per_language, vec![("en".to_string(), 1)]);
        let (kept, _) = length_control_filter(&pairs, None);
        assert_eq!(kept, pairs);

        let (kept, _) = length_control_filter(&pairs[3..], Some(2));
        let contrasts: Vec<PairedContrast> = kept
            .iter()
            .map(|p| delta_per_layer("m", p, &diags("a", &[0.1]), &diags("b", &[0.2]), &[]).unwrap())
            .collect();
        assert!(matches!(
            aggregate(&contrasts, GroupBy::Language, "early", Metric::Fiedler, &["en".into()]),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn aggregate_means() {
        let early = LayerWindow::early(1);
        let mk = |lang: &str, v: f64| {
            let p = ItemPair { language: lang.into(), ..pair() };
            let a = diags("a", &[0.0; 5]);
            let b = diags("b", &[0.0, v, v, v, v]);
            delta_per_layer("m", &p, &a, &b, &[early]).unwrap()
        };
        let cs = vec![mk("en", -0.4), mk("de", 0.1), mk("en", -0.5)];
        let g = aggregate(&cs, GroupBy::Language, "early", Metric::Fiedler, &[]).unwrap();
        assert_eq!(g[0].key, "en");
        assert!((g[0].mean() + 0.45).abs() < 1e-12);
        assert_eq!(g[1].n(), 1);
        assert!((g[1].mean() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn default_windows_by_depth() {
        let (w, warn) = default_windows(&BundleManifest::new("m", 16, 1, 1));
        assert_eq!(w.iter().map(|w| (w.lo, w.hi)).collect::<Vec<_>>(), vec![(2, 5), (6, 10), (11, 16)]);
        assert!(warn.is_empty());
        let (w, warn) = default_windows(&BundleManifest::new("m", 8, 1, 1));
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].hi, 8);
        assert_eq!(warn.len(), 2);
        let mut m0 = BundleManifest::new("m", 12, 1, 1);
        m0.layer_index_base = 0;
        let (w, _) = default_windows(&m0);
        assert_eq!((w[0].lo, w[0].hi), (1, 4));
        assert!(LayerWindow::parse("3:6").is_ok());
        assert!(LayerWindow::parse("6:3").is_err());
        assert!(LayerWindow::parse("x").is_err());
    }

    proptest! {
        #[test]
        fn antisymmetry_and_additivity(fa in prop::collection::vec(0.0f64..2.0, 6), fb in prop::collection::vec(0.0f64..2.0, 6)) {
            let windows = [LayerWindow::early(1), LayerWindow::custom(2, 3).unwrap(), LayerWindow::custom(4, 5).unwrap()];
            let (a, b) = (diags("a", &fa), diags("b", &fb));
            let ab = delta_per_layer("m", &pair(), &a, &b, &windows).unwrap();
            let ba = delta_per_layer("m", &pair(), &b, &a, &windows).unwrap();
            for (x, y) in ab.layers.iter().zip(&ba.layers) {
                prop_assert_eq!(x.delta.fiedler, -y.delta.fiedler);
                prop_assert_eq!(x.delta.energy, -y.delta.energy);
            }
            for (x, y) in ab.windows.iter().zip(&ba.windows) {
                prop_assert_eq!(x.delta.fiedler, -y.delta.fiedler);
                prop_assert_eq!(x.delta.hfer, -y.delta.hfer);
            }
            let early = ab.windows[0].delta.fiedler;
            let halves = 0.5 * (ab.windows[1].delta.fiedler + ab.windows[2].delta.fiedler);
            prop_assert!((early - halves).abs() < 1e-12);
        }

        #[test]
        fn aggregate_is_order_invariant(vals in prop::collection::vec(-1.0f64..1.0, 1..12), seed in 0u64..1000) {
            let early = LayerWindow::early(1);
            let cs: Vec<PairedContrast> = vals.iter().map(|&v| {
                delta_per_layer("m", &pair(), &diags("a", &[0.0; 5]), &diags("b", &[0.0, v, v, v, v]), &[early]).unwrap()
            }).collect();
            let mut shuffled = cs.clone();
            let k = (seed as usize) % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let g1 = aggregate(&cs, GroupBy::Language, "early", Metric::Fiedler, &[]).unwrap();
            let g2 = aggregate(&shuffled, GroupBy::Language, "early", Metric::Fiedler, &[]).unwrap();
            prop_assert_eq!(g1[0].mean(), g2[0].mean());
        }
    }
}
