//! End-to-end analyses over bundles: contrasts with statistics, robustness
//! sweeps, ablation summaries, tokenizer stress, RCI and SHD.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::analysis::{diagnose_bundle, AnalysisConfig, ItemDiagnostics};
use crate::bundle::Bundle;
use crate::config::RunConfig;
use crate::contrast::{
    aggregate, check_window, default_windows, delta_per_layer, length_control_filter, order_free_mean,
    pair_items, GroupBy, LayerWindow, Metric, PairedContrast, Quad, WindowLabel,
};
use crate::error::{Error, Result};
use crate::graph::{AggregationScheme, HeadWeighting, LaplacianKind};
use crate::scores::{rci, shd_calibrate, shd_detect, zscore_cohort, Labeled, ShdCalibration, ZScoredDiagnostics};
use crate::spectral::HferCutoff;
use crate::stats::{summarize_family, GroupInput, StatsConfig, StatsSummary};
use crate::tokstress::{standardize, stress_join, tokenizer_metrics, ItemStress, LanguageEndpoint, StressRow, TokenizerMetrics};

/// Diagnostics of the selected items, keyed by item id.
fn diagnose_map(bundle: &Bundle, cfg: &AnalysisConfig, ids: &BTreeSet<String>) -> Result<BTreeMap<String, ItemDiagnostics>> {
    let ids: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
    Ok(diagnose_bundle(bundle, cfg, Some(&ids))?
        .into_iter()
        .map(|d| (d.item_id.clone(), d))
        .collect())
}

/// Windows for a bundle: the configured list, or the default set.
pub fn resolve_windows(bundle: &Bundle, cfg: &RunConfig) -> Result<(Vec<LayerWindow>, Vec<String>)> {
    if cfg.windows.is_empty() {
        return Ok(default_windows(bundle.manifest()));
    }
    for w in &cfg.windows {
        check_window(w, bundle.manifest())?;
    }
    Ok((cfg.windows.clone(), Vec::new()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRow {
    pub family: String,
    pub language: String,
    pub excluded_pairs: usize,
    pub max_token_delta: Option<usize>,
}

/// Paired contrasts of one bundle.
#[derive(Clone, Debug)]
pub struct FamilyContrasts {
    pub family: String,
    pub contrasts: Vec<PairedContrast>,
    pub windows: Vec<LayerWindow>,
    /// Languages with at least one pair before length control, manifest order.
    pub languages: Vec<String>,
    pub exclusions: Vec<ExclusionRow>,
    pub orphans: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn family_contrasts(
    family: &str,
    bundle: &Bundle,
    condition_a: &str,
    condition_b: &str,
    cfg: &RunConfig,
) -> Result<FamilyContrasts> {
    let (windows, mut warnings) = resolve_windows(bundle, cfg)?;
    let pairing = pair_items(bundle.manifest(), condition_a, condition_b)?;
    if pairing.pairs.is_empty() {
        return Err(Error::Pairing(format!("no pairs between {condition_a} and {condition_b}")));
    }
    if !pairing.orphans.is_empty() {
        warnings.push(format!("{} unpaired items: {}", pairing.orphans.len(), pairing.orphans.join(" ")));
    }
    let mut languages: Vec<String> = Vec::new();
    for p in &pairing.pairs {
        if !languages.contains(&p.language) {
            languages.push(p.language.clone());
        }
    }
    let (kept, report) = length_control_filter(&pairing.pairs, cfg.max_token_delta);
    let ids: BTreeSet<String> = kept.iter().flat_map(|p| [p.item_a.clone(), p.item_b.clone()]).collect();
    let diags = diagnose_map(bundle, &cfg.analysis, &ids)?;
    let contrasts = kept
        .iter()
        .map(|p| delta_per_layer(family, p, &diags[&p.item_a], &diags[&p.item_b], &windows))
        .collect::<Result<Vec<_>>>()?;
    Ok(FamilyContrasts {
        family: family.to_string(),
        contrasts,
        windows,
        languages,
        exclusions: report
            .per_language
            .iter()
            .map(|(l, n)| ExclusionRow {
                family: family.to_string(),
                language: l.clone(),
                excluded_pairs: *n,
                max_token_delta: cfg.max_token_delta,
            })
            .collect(),
        orphans: pairing.orphans,
        warnings,
    })
}

/// One summarized group. Mirrors [`StatsSummary`] plus its labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub family: String,
    pub language: String,
    pub voice_type: String,
    pub window: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_perm: f64,
    pub q_fdr: f64,
    pub significant: bool,
    pub g_trim: Option<f64>,
    pub delta_sym_pct: f64,
    pub epsilon: f64,
}

impl ReportRow {
    fn new(family: &str, language: &str, voice_type: &str, window: &str, metric: Metric, s: StatsSummary) -> Self {
        ReportRow {
            family: family.into(),
            language: language.into(),
            voice_type: voice_type.into(),
            window: window.into(),
            metric: metric.as_str().into(),
            n: s.n,
            mean: s.mean,
            ci_lo: s.ci_lo,
            ci_hi: s.ci_hi,
            p_perm: s.p_perm,
            q_fdr: s.q_fdr,
            significant: s.reject,
            g_trim: s.g_trim,
            delta_sym_pct: s.delta_sym_pct,
            epsilon: s.epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub family: String,
    pub language: String,
    pub layer: usize,
    pub metric: String,
    pub n: usize,
    pub mean_delta: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointRow {
    pub family: String,
    pub language: String,
    pub voice_type: String,
    pub paraphrase_id: u32,
    pub token_count_delta: usize,
    pub window: String,
    pub metric: String,
    pub delta: f64,
    pub level_a: f64,
    pub level_b: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ContrastOutput {
    pub languages: Vec<ReportRow>,
    pub voice_types: Vec<ReportRow>,
    pub families: Vec<ReportRow>,
    pub curves: Vec<CurveRow>,
    pub endpoints: Vec<EndpointRow>,
    pub exclusions: Vec<ExclusionRow>,
    pub warnings: Vec<String>,
    pub fingerprint: String,
}

struct LanguageMean {
    language: String,
    voice_type: String,
    delta: f64,
    level_a: f64,
    level_b: f64,
}

/// Statistics for one family, window and metric. FDR control runs over the
/// languages of the batch; voice-type and family rows use sign flips of
/// language-level means, FDR-controlled over the voice types.
pub fn summarize_contrasts(
    fc: &FamilyContrasts,
    window: &LayerWindow,
    metric: Metric,
    stats: &StatsConfig,
) -> Result<(Vec<ReportRow>, Vec<ReportRow>, ReportRow)> {
    let wname = window.name();
    let groups = aggregate(&fc.contrasts, GroupBy::Language, &wname, metric, &fc.languages)
        .map_err(|e| e.with_context(format!("family {} window {wname}", fc.family)))?;
    let inputs: Vec<GroupInput> = groups
        .iter()
        .map(|g| GroupInput {
            key: g.key.clone(),
            values: g.values.clone(),
            mean_a: order_free_mean(&g.level_a),
            mean_b: order_free_mean(&g.level_b),
        })
        .collect();
    let summaries = summarize_family(&inputs, stats)?;
    let lang_means: Vec<LanguageMean> = groups
        .iter()
        .zip(&inputs)
        .map(|(g, i)| LanguageMean {
            language: g.key.clone(),
            voice_type: g.voice_type.map(|v| v.to_string()).unwrap_or_else(|| "mixed".into()),
            delta: g.mean(),
            level_a: i.mean_a,
            level_b: i.mean_b,
        })
        .collect();
    let lang_rows: Vec<ReportRow> = summaries
        .into_iter()
        .zip(&lang_means)
        .map(|(s, l)| ReportRow::new(&fc.family, &l.language, &l.voice_type, &wname, metric, s))
        .collect();

    let mut voice_order: Vec<&str> = Vec::new();
    for l in &lang_means {
        if !voice_order.contains(&l.voice_type.as_str()) {
            voice_order.push(&l.voice_type);
        }
    }
    let pooled = |members: Vec<&LanguageMean>, key: &str| GroupInput {
        key: key.to_string(),
        values: members.iter().map(|l| l.delta).collect(),
        mean_a: order_free_mean(&members.iter().map(|l| l.level_a).collect::<Vec<_>>()),
        mean_b: order_free_mean(&members.iter().map(|l| l.level_b).collect::<Vec<_>>()),
    };
    let voice_inputs: Vec<GroupInput> = voice_order
        .iter()
        .map(|v| pooled(lang_means.iter().filter(|l| l.voice_type == *v).collect(), v))
        .collect();
    let voice_rows = summarize_family(&voice_inputs, stats)?
        .into_iter()
        .map(|s| {
            let key = s.key.clone();
            ReportRow::new(&fc.family, "", &key, &wname, metric, s)
        })
        .collect();
    let family_input = pooled(lang_means.iter().collect(), &fc.family);
    let family_row = summarize_family(&[family_input], stats)?
        .pop()
        .map(|s| ReportRow::new(&fc.family, "", "", &wname, metric, s))
        .expect("one group in, one row out");
    Ok((lang_rows, voice_rows, family_row))
}

fn curves(fc: &FamilyContrasts) -> Vec<CurveRow> {
    let mut out = Vec::new();
    for lang in &fc.languages {
        let members: Vec<&PairedContrast> = fc.contrasts.iter().filter(|c| &c.language == lang).collect();
        let Some(first) = members.first() else { continue };
        for (k, row) in first.layers.iter().enumerate() {
            for metric in Metric::ALL {
                let pick = |f: &dyn Fn(&PairedContrast) -> Quad| {
                    order_free_mean(&members.iter().map(|c| f(c).get(metric)).collect::<Vec<_>>())
                };
                out.push(CurveRow {
                    family: fc.family.clone(),
                    language: lang.clone(),
                    layer: row.layer,
                    metric: metric.as_str().into(),
                    n: members.len(),
                    mean_delta: pick(&|c| c.layers[k].delta),
                    mean_a: pick(&|c| c.layers[k].a),
                    mean_b: pick(&|c| c.layers[k].b),
                });
            }
        }
    }
    out
}

fn endpoints(fc: &FamilyContrasts) -> Vec<EndpointRow> {
    let mut out = Vec::new();
    for c in &fc.contrasts {
        for w in &c.windows {
            for metric in Metric::ALL {
                out.push(EndpointRow {
                    family: c.family.clone(),
                    language: c.language.clone(),
                    voice_type: c.voice_type.to_string(),
                    paraphrase_id: c.paraphrase_id,
                    token_count_delta: c.token_count_delta,
                    window: w.window.name(),
                    metric: metric.as_str().into(),
                    delta: w.delta.get(metric),
                    level_a: w.level_a.get(metric),
                    level_b: w.level_b.get(metric),
                });
            }
        }
    }
    out
}

/// Family name of a bundle: its model id.
pub fn family_name(bundle: &Bundle) -> String {
    bundle.manifest().model_id.clone()
}

/// The full contrast pipeline over one or more bundles (one per family).
pub fn contrast(bundles: &[Bundle], condition_a: &str, condition_b: &str, cfg: &RunConfig) -> Result<ContrastOutput> {
    let mut out = ContrastOutput { fingerprint: cfg.analysis.fingerprint(), ..Default::default() };
    let mut seen = BTreeSet::new();
    for bundle in bundles {
        let family = family_name(bundle);
        if !seen.insert(family.clone()) {
            return Err(Error::Usage(format!("two bundles share model id {family}")));
        }
        let fc = family_contrasts(&family, bundle, condition_a, condition_b, cfg)?;
        for w in &fc.windows {
            for metric in Metric::ALL {
                let (l, v, f) = summarize_contrasts(&fc, w, metric, &cfg.stats)?;
                out.languages.extend(l);
                out.voice_types.extend(v);
                out.families.push(f);
            }
        }
        out.curves.extend(curves(&fc));
        out.endpoints.extend(endpoints(&fc));
        out.exclusions.extend(fc.exclusions);
        out.warnings.extend(fc.warnings.into_iter().map(|w| format!("{family}: {w}")));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    HferCutoff,
    Theta,
    Laplacian,
    Aggregation,
    Window,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hfer_cutoff" | "hfer-cutoff" | "hfer" => Ok(SweepAxis::HferCutoff),
            "theta" => Ok(SweepAxis::Theta),
            "laplacian" => Ok(SweepAxis::Laplacian),
            "aggregation" | "agg" => Ok(SweepAxis::Aggregation),
            "window" => Ok(SweepAxis::Window),
            other => Err(Error::Usage(format!("unknown sweep axis {other:?}"))),
        }
    }
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::HferCutoff => "hfer_cutoff",
            SweepAxis::Theta => "theta",
            SweepAxis::Laplacian => "laplacian",
            SweepAxis::Aggregation => "aggregation",
            SweepAxis::Window => "window",
        }
    }

    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepAxis::HferCutoff => &["0.1", "0.15", "0.2", "0.25", "0.3", "0.4"],
            SweepAxis::Theta => &["0.1", "0.2", "0.5"],
            SweepAxis::Laplacian => &LaplacianKind::ALL_NAMES,
            SweepAxis::Aggregation => &["mass_weighted", "uniform", "mass_weighted+special", "uniform+special"],
            SweepAxis::Window => &["1:4", "2:5", "3:6"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// `base` with this axis set to `value`, plus the endpoint window.
    pub fn apply(self, base: &RunConfig, window: &LayerWindow, value: &str) -> Result<(RunConfig, LayerWindow)> {
        let mut cfg = base.clone();
        let mut w = *window;
        let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Usage(format!("{} value {v:?} is not a number", self.as_str())));
        let usage = |e: Error| Error::Usage(e.root().to_string());
        match self {
            SweepAxis::HferCutoff => {
                cfg.analysis.cutoff = match value.strip_prefix("k=").or_else(|| value.strip_prefix("K=")) {
                    Some(k) => HferCutoff::Index(k.parse().map_err(|_| Error::Usage(format!("bad cutoff {value:?}")))?),
                    None => {
                        let c = num(value.strip_prefix("c=").unwrap_or(value))?;
                        if !(c > 0.0 && c < 1.0) {
                            return Err(Error::Usage(format!("cutoff fraction {c} outside (0, 1)")));
                        }
                        HferCutoff::MassFraction(c)
                    }
                }
            }
            SweepAxis::Theta => cfg.analysis.laplacian = LaplacianKind::magnetic(num(value)?).map_err(usage)?,
            SweepAxis::Laplacian => {
                let theta = match base.analysis.laplacian {
                    LaplacianKind::Magnetic { theta } => theta,
                    _ => crate::graph::DEFAULT_THETA,
                };
                cfg.analysis.laplacian = LaplacianKind::parse(value, theta).map_err(usage)?;
            }
            SweepAxis::Aggregation => {
                let (name, keep) = match value.strip_suffix("+special") {
                    Some(n) => (n, true),
                    None => (value, false),
                };
                cfg.analysis.aggregation = AggregationScheme {
                    weighting: name.parse::<HeadWeighting>()?,
                    exclude_special: !keep,
                };
            }
            SweepAxis::Window => w = LayerWindow::parse(value)?,
        }
        cfg.windows = vec![w];
        Ok((cfg, w))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub family: String,
    pub language: String,
    pub window: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_perm: f64,
    pub q_fdr: f64,
    pub significant: bool,
    pub sign_agrees: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub axis: String,
    pub value: String,
    pub family: String,
    pub languages: usize,
    pub sign_agreement: f64,
    pub significant: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpreadRow {
    pub axis: String,
    pub family: String,
    pub language: String,
    pub min_mean: f64,
    pub max_mean: f64,
    pub spread: f64,
    pub sign_stable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummaryRow>,
    pub spread: Vec<SweepSpreadRow>,
    pub warnings: Vec<String>,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Re-runs one contrast per axis value. The base endpoint uses the first
/// configured window (early by default) and the configured metric.
pub fn sweep(
    bundle: &Bundle,
    condition_a: &str,
    condition_b: &str,
    base: &RunConfig,
    axis: SweepAxis,
    values: &[String],
) -> Result<SweepOutput> {
    let family = family_name(bundle);
    let (windows, warnings) = resolve_windows(bundle, base)?;
    let base_window = *windows
        .first()
        .ok_or_else(|| Error::Usage("no window available for the sweep endpoint".into()))?;
    let metric = base.metric;
    let run = |cfg: &RunConfig, w: &LayerWindow| -> Result<Vec<ReportRow>> {
        let mut cfg = cfg.clone();
        cfg.windows = vec![*w];
        let fc = family_contrasts(&family, bundle, condition_a, condition_b, &cfg)?;
        Ok(summarize_contrasts(&fc, w, metric, &cfg.stats)?.0)
    };
    let base_rows = run(base, &base_window)?;
    let base_sign: BTreeMap<&str, i8> = base_rows.iter().map(|r| (r.language.as_str(), sign(r.mean))).collect();

    let mut out = SweepOutput { warnings, ..Default::default() };
    let mut by_lang: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for value in values {
        let (cfg, w) = axis.apply(base, &base_window, value)?;
        check_window(&w, bundle.manifest())?;
        let rows = run(&cfg, &w)?;
        let mut agree = 0;
        let mut significant = Vec::new();
        for r in &rows {
            let agrees = base_sign.get(r.language.as_str()) == Some(&sign(r.mean));
            agree += agrees as usize;
            if r.significant {
                significant.push(r.language.clone());
            }
            by_lang.entry(r.language.clone()).or_default().push(r.mean);
            out.rows.push(SweepRow {
                axis: axis.as_str().into(),
                value: value.clone(),
                family: family.clone(),
                language: r.language.clone(),
                window: r.window.clone(),
                metric: r.metric.clone(),
                n: r.n,
                mean: r.mean,
                ci_lo: r.ci_lo,
                ci_hi: r.ci_hi,
                p_perm: r.p_perm,
                q_fdr: r.q_fdr,
                significant: r.significant,
                sign_agrees: agrees,
            });
        }
        out.summary.push(SweepSummaryRow {
            axis: axis.as_str().into(),
            value: value.clone(),
            family: family.clone(),
            languages: rows.len(),
            sign_agreement: agree as f64 / rows.len() as f64,
            significant: significant.join(";"),
        });
    }
    for r in &base_rows {
        let means = &by_lang[&r.language];
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.spread.push(SweepSpreadRow {
            axis: axis.as_str().into(),
            family: family.clone(),
            language: r.language.clone(),
            min_mean: lo,
            max_mean: hi,
            spread: hi - lo,
            sign_stable: means.iter().all(|m| sign(*m) == sign(r.mean)),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: String,
    pub family: String,
    pub metric: String,
    pub n_pairs: usize,
    pub early: Option<f64>,
    pub mid: Option<f64>,
    pub late: Option<f64>,
    pub overall: Option<f64>,
}

/// Windowed change of the paired contrast between a baseline bundle and each
/// ablated bundle: mean over pairs of `Δ_ablated − Δ_baseline`.
pub fn ablation_summary(
    baseline: &Bundle,
    ablated: &[Bundle],
    condition_a: &str,
    condition_b: &str,
    cfg: &RunConfig,
) -> Result<(Vec<AblationRow>, Vec<String>)> {
    let m = baseline.manifest();
    let (mut windows, warnings) = default_windows(m);
    windows.push(LayerWindow::overall(m.layer_index_base, m.num_layers));
    let mut cfg = cfg.clone();
    cfg.windows = windows.clone();
    cfg.max_token_delta = None;
    let family = family_name(baseline);
    let base = family_contrasts(&family, baseline, condition_a, condition_b, &cfg)?;
    let base_ids: BTreeSet<&str> = m.items.iter().map(|i| i.item_id.as_str()).collect();

    let mut rows = Vec::new();
    for (k, ab) in ablated.iter().enumerate() {
        let ab_ids: BTreeSet<&str> = ab.manifest().items.iter().map(|i| i.item_id.as_str()).collect();
        if ab_ids != base_ids {
            let missing: Vec<&str> = base_ids.symmetric_difference(&ab_ids).copied().collect();
            return Err(Error::Pairing(format!(
                "ablated bundle {} does not match the baseline items: {}",
                ab.root().display(),
                missing.join(" ")
            )));
        }
        if ab.manifest().num_layers != m.num_layers || ab.manifest().layer_index_base != m.layer_index_base {
            return Err(Error::Pairing(format!("ablated bundle {} has a different layer layout", ab.root().display())));
        }
        let abl = family_contrasts(&family, ab, condition_a, condition_b, &cfg)?;
        for (b, a) in base.contrasts.iter().zip(&abl.contrasts) {
            if (&b.language, b.paraphrase_id) != (&a.language, a.paraphrase_id) {
                return Err(Error::Pairing(format!(
                    "pair order differs between baseline and {} at {}/{}",
                    ab.root().display(),
                    b.language,
                    b.paraphrase_id
                )));
            }
        }
        let label = ab.manifest().ablation.clone().unwrap_or_else(|| format!("ablation-{}", k + 1));
        let mut row = AblationRow {
            ablation: label,
            family: family.clone(),
            metric: cfg.metric.as_str().into(),
            n_pairs: base.contrasts.len(),
            early: None,
            mid: None,
            late: None,
            overall: None,
        };
        for w in &windows {
            let diffs: Vec<f64> = base
                .contrasts
                .iter()
                .zip(&abl.contrasts)
                .map(|(b, a)| {
                    let get = |c: &PairedContrast| c.window(w.label).expect("window computed").delta.get(cfg.metric);
                    get(a) - get(b)
                })
                .collect();
            let v = Some(order_free_mean(&diffs));
            match w.label {
                WindowLabel::Early => row.early = v,
                WindowLabel::Mid => row.mid = v,
                WindowLabel::Late => row.late = v,
                WindowLabel::Overall => row.overall = v,
                WindowLabel::Custom => {}
            }
        }
        rows.push(row);
    }
    Ok((rows, warnings))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemStressRow {
    pub family: String,
    pub language: String,
    pub item_id: String,
    pub condition: String,
    pub token_count: usize,
    pub phi: f64,
    pub h_frag: f64,
    pub h_frag_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressTableRow {
    pub family: String,
    pub language: String,
    pub n_items: usize,
    pub phi_mean: f64,
    pub h_frag_norm_mean: f64,
    pub endpoint: f64,
    pub token_count_delta_mean: f64,
    pub phi_z: Option<f64>,
    pub h_frag_norm_z: Option<f64>,
}

impl From<&StressRow> for StressTableRow {
    fn from(r: &StressRow) -> Self {
        StressTableRow {
            family: r.family.clone(),
            language: r.language.clone(),
            n_items: r.n_items,
            phi_mean: r.phi_mean,
            h_frag_norm_mean: r.h_frag_norm_mean,
            endpoint: r.endpoint,
            token_count_delta_mean: r.token_count_delta_mean,
            phi_z: None,
            h_frag_norm_z: None,
        }
    }
}

/// Per-item tokenizer metrics and the per-language join against the
/// magnitude of the configured metric's contrast in the first window.
pub fn tokstress(
    bundles: &[Bundle],
    condition_a: &str,
    condition_b: &str,
    cfg: &RunConfig,
) -> Result<(Vec<ItemStressRow>, Vec<StressTableRow>)> {
    let mut items = Vec::new();
    let mut stress = Vec::new();
    let mut ends = Vec::new();
    for bundle in bundles {
        let family = family_name(bundle);
        for item in &bundle.manifest().items {
            let m: TokenizerMetrics = tokenizer_metrics(item)?;
            items.push(ItemStressRow {
                family: family.clone(),
                language: item.language.clone(),
                item_id: item.item_id.clone(),
                condition: item.condition.clone(),
                token_count: m.token_count,
                phi: m.phi,
                h_frag: m.h_frag,
                h_frag_norm: m.h_frag_norm,
            });
            stress.push(ItemStress {
                family: family.clone(),
                language: item.language.clone(),
                item_id: item.item_id.clone(),
                metrics: m,
            });
        }
        let fc = family_contrasts(&family, bundle, condition_a, condition_b, cfg)?;
        let w = fc.windows.first().ok_or_else(|| Error::Usage("no window available".into()))?;
        let groups = aggregate(&fc.contrasts, GroupBy::Language, &w.name(), cfg.metric, &fc.languages)?;
        for g in groups {
            let tcd: Vec<f64> = g.token_count_delta.iter().map(|&d| d as f64).collect();
            ends.push(LanguageEndpoint {
                family: family.clone(),
                language: g.key.clone(),
                endpoint: g.mean().abs(),
                token_count_delta_mean: order_free_mean(&tcd),
            });
        }
    }
    let joined = stress_join(&stress, &ends)?;
    let mut table: Vec<StressTableRow> = joined
        .iter()
        .map(StressTableRow::from)
        .collect();
    let families: BTreeSet<String> = joined.iter().map(|r| r.family.clone()).collect();
    for fam in families {
        let idx: Vec<usize> = (0..table.len()).filter(|&i| table[i].family == fam).collect();
        let phi: Vec<f64> = idx.iter().map(|&i| table[i].phi_mean).collect();
        let hf: Vec<f64> = idx.iter().map(|&i| table[i].h_frag_norm_mean).collect();
        if let Ok(z) = standardize(&phi) {
            for (&i, z) in idx.iter().zip(z) {
                table[i].phi_z = Some(z);
            }
        }
        if let Ok(z) = standardize(&hf) {
            for (&i, z) in idx.iter().zip(z) {
                table[i].h_frag_norm_z = Some(z);
            }
        }
    }
    Ok((items, table))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RciRow {
    pub strategy: String,
    pub n: usize,
    pub z_energy: f64,
    pub z_entropy: f64,
    pub z_hfer: f64,
    pub z_fiedler: f64,
    pub rci: f64,
}

/// Mean-over-window diagnostics per item, z-scored over every item of the
/// bundle, averaged per condition (strategy).
pub fn rci_table(bundle: &Bundle, cfg: &RunConfig, window: Option<&LayerWindow>) -> Result<Vec<RciRow>> {
    let m = bundle.manifest();
    let w = window.copied().unwrap_or_else(|| LayerWindow::overall(m.layer_index_base, m.num_layers));
    check_window(&w, m)?;
    let diags = diagnose_bundle(bundle, &cfg.analysis, None)?;
    let mut quads = Vec::new();
    let mut strategy = Vec::new();
    for d in &diags {
        let rows: Vec<Quad> = d
            .layers
            .iter()
            .filter(|r| w.contains(r.layer))
            .map(|r| Quad::from(&r.diagnostics))
            .collect();
        if rows.is_empty() {
            return Err(Error::Usage(format!("window {}:{} selects no analyzed layer", w.lo, w.hi)));
        }
        let mean = |f: fn(&Quad) -> f64| order_free_mean(&rows.iter().map(f).collect::<Vec<_>>());
        quads.push(Quad {
            energy: mean(|q| q.energy),
            entropy: mean(|q| q.entropy),
            hfer: mean(|q| q.hfer),
            fiedler: mean(|q| q.fiedler),
        });
        strategy.push(m.item(&d.item_id).expect("diagnosed item exists").condition.clone());
    }
    let z = zscore_cohort(&quads)?;
    let mut order: Vec<String> = Vec::new();
    for i in &m.items {
        if !order.contains(&i.condition) {
            order.push(i.condition.clone());
        }
    }
    Ok(order
        .into_iter()
        .map(|s| {
            let members: Vec<&ZScoredDiagnostics> = z.iter().zip(&strategy).filter(|(_, c)| **c == s).map(|(z, _)| z).collect();
            let mean = |f: fn(&ZScoredDiagnostics) -> f64| order_free_mean(&members.iter().map(|z| f(z)).collect::<Vec<_>>());
            let zm = ZScoredDiagnostics {
                z_energy: mean(|z| z.z_energy),
                z_entropy: mean(|z| z.z_entropy),
                z_hfer: mean(|z| z.z_hfer),
                z_fiedler: mean(|z| z.z_fiedler),
            };
            RciRow {
                strategy: s,
                n: members.len(),
                z_energy: zm.z_energy,
                z_entropy: zm.z_entropy,
                z_hfer: zm.z_hfer,
                z_fiedler: zm.z_fiedler,
                rci: rci(&zm),
            }
        })
        .collect())
}

/// RCI of precomputed z-rows.
pub fn rci_from_z(rows: &[(String, ZScoredDiagnostics)]) -> Vec<RciRow> {
    rows.iter()
        .map(|(s, z)| RciRow {
            strategy: s.clone(),
            n: 1,
            z_energy: z.z_energy,
            z_entropy: z.z_entropy,
            z_hfer: z.z_hfer,
            z_fiedler: z.z_fiedler,
            rci: rci(z),
        })
        .collect()
}

fn final_layer_config(bundle: &Bundle, cfg: &RunConfig) -> AnalysisConfig {
    let m = bundle.manifest();
    AnalysisConfig {
        layers: Some(vec![m.layer_index_base + m.num_layers - 1]),
        ..cfg.analysis.clone()
    }
}

/// Final-layer Fiedler value of every item, in item-id order.
pub fn final_fiedler(bundle: &Bundle, cfg: &RunConfig) -> Result<(Vec<(String, String, f64)>, String)> {
    if bundle.manifest().num_layers == 0 {
        return Err(Error::Manifest("bundle has no layers".into()));
    }
    let acfg = final_layer_config(bundle, cfg);
    let diags = diagnose_bundle(bundle, &acfg, None)?;
    let m = bundle.manifest();
    let rows = diags
        .into_iter()
        .map(|d| {
            let cond = m.item(&d.item_id).expect("diagnosed item exists").condition.clone();
            (d.item_id, cond, d.layers[0].diagnostics.fiedler)
        })
        .collect();
    Ok((rows, acfg.fingerprint()))
}

/// Calibrates on the items of `reference_condition`. With `tau = None`, the
/// threshold is tuned on items of `positive_condition` (labeled 1) against
/// the reference items (labeled 0).
pub fn shd_calibrate_bundle(
    bundle: &Bundle,
    cfg: &RunConfig,
    reference_condition: &str,
    tau: Option<f64>,
    positive_condition: Option<&str>,
) -> Result<ShdCalibration> {
    let (rows, fp) = final_fiedler(bundle, cfg)?;
    let reference: Vec<f64> = rows.iter().filter(|r| r.1 == reference_condition).map(|r| r.2).collect();
    if reference.is_empty() {
        return Err(Error::Usage(format!("no items of condition {reference_condition:?}")));
    }
    let tuning: Option<Vec<Labeled>> = positive_condition.map(|pos| {
        rows.iter()
            .filter(|r| r.1 == reference_condition || r.1 == pos)
            .map(|r| Labeled { f_last: r.2, hallucination: r.1 == pos })
            .collect()
    });
    shd_calibrate(&reference, tau, tuning.as_deref(), &fp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShdRow {
    pub item_id: String,
    pub condition: String,
    pub f_last: f64,
    pub z_fid: f64,
    pub flag: u8,
}

pub fn shd_detect_bundle(bundle: &Bundle, cfg: &RunConfig, calib: &ShdCalibration) -> Result<Vec<ShdRow>> {
    let (rows, fp) = final_fiedler(bundle, cfg)?;
    if !calib.fingerprint.is_empty() && calib.fingerprint != fp {
        return Err(Error::FingerprintMismatch { left: calib.fingerprint.clone(), right: fp });
    }
    Ok(rows
        .into_iter()
        .map(|(item_id, condition, f)| ShdRow {
            item_id,
            condition,
            f_last: f,
            z_fid: calib.z(f),
            flag: shd_detect(f, calib) as u8,
        })
        .collect())
}
