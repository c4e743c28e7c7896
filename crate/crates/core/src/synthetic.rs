//! Synthetic bundles with planted Fiedler values.
//!
//! Every head attends as `(1 − c)·[(1 − t)I + (t/N)J]` over the sentence
//! tokens plus mass `c` on a leading BOS token flagged special. After BOS
//! exclusion the normalized Laplacians have `λ₂ = t` exactly (up to f32
//! storage), the combinatorial one `(1 − c)·t`. Heads scale `t` by factors
//! averaging to one, which cancel under aggregation.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::bundle::{write_bundle, BundleManifest, ItemRecord, ItemTensors, Tensor, TokenRecord, VoiceType};
use crate::error::Result;

/// Shift added to `t` for one condition over an inclusive layer range.
#[derive(Clone, Debug, PartialEq)]
pub struct Effect {
    pub condition: String,
    /// `None` applies to every language.
    pub language: Option<String>,
    pub lo: usize,
    pub hi: usize,
    pub shift: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSpec {
    pub model_id: String,
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub languages: Vec<(String, VoiceType)>,
    pub paraphrases: u32,
    /// The first condition is the reference; the others add noise and effects.
    pub conditions: Vec<String>,
    pub effects: Vec<Effect>,
    /// Inclusive sentence-length range of the reference condition.
    pub tokens: (usize, usize),
    /// Other conditions get up to this many extra tokens.
    pub max_extra_tokens: usize,
    pub item_noise: f64,
    pub pair_noise: f64,
    pub sink_mass: f64,
    pub ablation: Option<String>,
    pub seed: u64,
}

pub const BENCHMARK_LANGUAGES: [(&str, VoiceType); 20] = [
    ("en", VoiceType::Periphrastic),
    ("de", VoiceType::Periphrastic),
    ("fr", VoiceType::Periphrastic),
    ("es", VoiceType::Periphrastic),
    ("ru", VoiceType::Periphrastic),
    ("hi", VoiceType::Periphrastic),
    ("zh", VoiceType::Particle),
    ("ja", VoiceType::Affixal),
    ("ko", VoiceType::Affixal),
    ("tr", VoiceType::Affixal),
    ("fi", VoiceType::Affixal),
    ("sw", VoiceType::Affixal),
    ("id", VoiceType::Affixal),
    ("ar", VoiceType::NonConcatenative),
    ("he", VoiceType::NonConcatenative),
    ("vi", VoiceType::Particle),
    ("th", VoiceType::Particle),
    ("yo", VoiceType::Analytic),
    ("ha", VoiceType::Analytic),
    ("ta", VoiceType::Affixal),
];

impl PlantedSpec {
    /// 20 languages × 10 paraphrases × {active, passive}, 12 layers. English
    /// passives have `λ₂` lowered by 0.4 on layers 2–5; every other
    /// language is null.
    pub fn voice_benchmark(seed: u64) -> Self {
        PlantedSpec {
            model_id: "synthetic-voice".into(),
            num_layers: 12,
            num_heads: 2,
            hidden_size: 8,
            languages: BENCHMARK_LANGUAGES.iter().map(|(l, v)| (l.to_string(), *v)).collect(),
            paraphrases: 10,
            conditions: vec!["active".into(), "passive".into()],
            effects: vec![Effect {
                condition: "passive".into(),
                language: Some("en".into()),
                lo: 2,
                hi: 5,
                shift: -0.4,
            }],
            tokens: (6, 10),
            max_extra_tokens: 2,
            item_noise: 0.04,
            pair_noise: 0.03,
            sink_mass: 0.1,
            ablation: None,
            seed,
        }
    }

    /// A minimal bundle: `languages` null languages, few layers.
    pub fn small(languages: usize, paraphrases: u32, num_layers: usize, seed: u64) -> Self {
        PlantedSpec {
            model_id: "synthetic-small".into(),
            num_layers,
            languages: BENCHMARK_LANGUAGES[..languages].iter().map(|(l, v)| (l.to_string(), *v)).collect(),
            paraphrases,
            effects: Vec::new(),
            ..PlantedSpec::voice_benchmark(seed)
        }
    }

    /// The same draws with an extra shift on one condition and an ablation label.
    pub fn ablated(&self, label: &str, effect: Effect) -> Self {
        let mut out = self.clone();
        out.effects.push(effect);
        out.ablation = Some(label.to_string());
        out
    }

    fn shift(&self, condition: &str, language: &str, layer: usize) -> f64 {
        self.effects
            .iter()
            .filter(|e| {
                e.condition == condition
                    && e.language.as_deref().is_none_or(|l| l == language)
                    && (e.lo..=e.hi).contains(&layer)
            })
            .map(|e| e.shift)
            .sum()
    }
}

/// A generated bundle with the planted `t` of each (item, layer).
pub struct Planted {
    pub manifest: BundleManifest,
    pub tensors: BTreeMap<String, ItemTensors>,
    pub truth: BTreeMap<String, Vec<f64>>,
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "su", "ten", "ra", "vo", "ne", "di", "pa", "gor", "u", "el", "sha", "bri", "o",
];

fn attention(n: usize, t: f64, sink: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n + 1, n + 1);
    a[(0, 0)] = 1.0;
    for i in 1..=n {
        a[(i, 0)] = sink;
        for j in 1..=n {
            let base = t / n as f64 + if i == j { 1.0 - t } else { 0.0 };
            a[(i, j)] = (1.0 - sink) * base;
        }
    }
    a
}

pub fn planted(spec: &PlantedSpec) -> Planted {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let item_noise = Normal::new(0.0, spec.item_noise).expect("noise sd");
    let pair_noise = Normal::new(0.0, spec.pair_noise).expect("noise sd");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let base = 1usize;

    let mut manifest = BundleManifest::new(&spec.model_id, spec.num_layers, spec.num_heads, spec.hidden_size);
    manifest.ablation = spec.ablation.clone();
    let mut tensors = BTreeMap::new();
    let mut truth = BTreeMap::new();

    let head_scales: Vec<f64> = (0..spec.num_heads)
        .map(|h| 1.0 + 0.1 * (h as f64 - (spec.num_heads as f64 - 1.0) / 2.0))
        .collect();

    for (lang, voice) in &spec.languages {
        for pid in 0..spec.paraphrases {
            let n0 = rng.random_range(spec.tokens.0..=spec.tokens.1);
            let t0: Vec<f64> = (0..spec.num_layers)
                .map(|p| 0.5 + 0.01 * p as f64 + item_noise.sample(&mut rng))
                .collect();
            for (ci, cond) in spec.conditions.iter().enumerate() {
                let extra = rng.random_range(0..=spec.max_extra_tokens);
                let n = if ci == 0 { n0 } else { n0 + extra };
                let noise: Vec<f64> = (0..spec.num_layers).map(|_| pair_noise.sample(&mut rng)).collect();
                let pieces: Vec<&str> = (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
                let hidden: Vec<DMatrix<f64>> = (0..spec.num_layers)
                    .map(|_| DMatrix::from_fn(n + 1, spec.hidden_size, |_, _| unit.sample(&mut rng)))
                    .collect();

                let ts: Vec<f64> = (0..spec.num_layers)
                    .map(|p| {
                        let jitter = if ci == 0 { 0.0 } else { noise[p] };
                        (t0[p] + jitter + spec.shift(cond, lang, p + base)).clamp(0.02, 0.98)
                    })
                    .collect();
                let attention: Vec<Tensor> = ts
                    .iter()
                    .map(|&t| {
                        let heads: Vec<DMatrix<f64>> = head_scales
                            .iter()
                            .map(|s| attention(n, t * s, spec.sink_mass))
                            .collect();
                        Tensor::from_heads(&heads).expect("uniform head shapes")
                    })
                    .collect();

                let item_id = format!("{lang}-{cond}-{pid:02}");
                let text = pieces.join(" ");
                let mut tokens = vec![TokenRecord::special("<s>", 1)];
                tokens.extend(pieces.iter().map(|p| {
                    let id = 2 + SYLLABLES.iter().position(|s| s == p).unwrap() as u32;
                    TokenRecord::new(*p, id)
                }));
                manifest.items.push(ItemRecord {
                    item_id: item_id.clone(),
                    language: lang.clone(),
                    voice_type: *voice,
                    condition: cond.clone(),
                    paraphrase_id: pid,
                    char_len: text.chars().count(),
                    text,
                    tokens,
                    behavioral_nll: None,
                    attention_files: Vec::new(),
                    hidden_files: Vec::new(),
                    embedding_file: None,
                });
                tensors.insert(
                    item_id.clone(),
                    ItemTensors {
                        attention,
                        hidden: hidden.iter().map(Tensor::from_matrix).collect(),
                        embedding: None,
                    },
                );
                truth.insert(item_id, ts);
            }
        }
    }
    Planted { manifest, tensors, truth }
}

/// Generates and writes a planted bundle.
pub fn write_planted(dir: &Path, spec: &PlantedSpec) -> Result<Planted> {
    let mut p = planted(spec);
    p.manifest = write_bundle(dir, &p.manifest, &p.tensors)?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{check_attention_rows, read_bundle, validate_bundle};
    use crate::graph::{attention_graph, AggregationScheme, LaplacianKind};
    use crate::spectral::fiedler;

    #[test]
    fn planted_fiedler_is_exact() {
        let spec = PlantedSpec::small(2, 2, 3, 7);
        let p = planted(&spec);
        for item in &p.manifest.items {
            for (pos, t) in p.tensors[&item.item_id].attention.iter().enumerate() {
                assert!(check_attention_rows(t).is_empty());
                let heads = t.heads().unwrap();
                let want = p.truth[&item.item_id][pos];
                for kind in [LaplacianKind::RandomWalk, LaplacianKind::Symmetric, LaplacianKind::DirectedRw] {
                    let g = attention_graph(&heads, &item.special_mask(), AggregationScheme::default(), kind).unwrap();
                    assert!((fiedler(&g).unwrap().value - want).abs() < 1e-5, "{kind}");
                }
                let g = attention_graph(&heads, &item.special_mask(), AggregationScheme::default(), LaplacianKind::Combinatorial).unwrap();
                assert!((fiedler(&g).unwrap().value - 0.9 * want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn ablation_reuses_draws() {
        let spec = PlantedSpec::small(1, 2, 6, 3);
        let abl = spec.ablated(
            "L2-H0",
            Effect { condition: "passive".into(), language: None, lo: 2, hi: 5, shift: 0.1 },
        );
        let (a, b) = (planted(&spec), planted(&abl));
        for (id, ta) in &a.truth {
            let tb = &b.truth[id];
            for (p, (x, y)) in ta.iter().zip(tb).enumerate() {
                let want = if id.contains("passive") && (1..=4).contains(&p) { 0.1 } else { 0.0 };
                assert!((y - x - want).abs() < 1e-12);
            }
        }
        assert_eq!(b.manifest.ablation.as_deref(), Some("L2-H0"));
    }

    #[test]
    fn written_bundle_validates() {
        let dir = tempfile::tempdir().unwrap();
        write_planted(dir.path(), &PlantedSpec::small(2, 2, 2, 1)).unwrap();
        assert!(validate_bundle(dir.path()).is_empty());
        assert_eq!(read_bundle(dir.path()).unwrap().manifest().items.len(), 8);
    }
}
