//! Capture bundles: the on-disk package that decouples model execution from
//! spectral analysis.
//!
//! A bundle is a directory holding `manifest.json` plus one binary tensor file
//! per (item, layer, kind) under `tensors/<item_id>/<layer>.<kind>.spct`.
//!
//! Tensor file layout, all little-endian and without padding:
//!
//! ```text
//! magic   4 bytes  "SPCT"
//! version u32      1
//! dtype   u32      0 = f32 little-endian (the only defined code)
//! ndim    u32
//! dims    ndim x u64
//! payload prod(dims) x f32, row-major
//! ```
//!
//! Attention tensors have shape `[H, N, N]` (post-softmax probabilities per
//! head); hidden-state tensors have shape `[N, d]` (post-block residual
//! stream). Tensors are loaded lazily and their shapes are rechecked against
//! the manifest on every access.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SPCT";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32_LE: u32 = 0;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Row sums of stored attention must be within this of 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;
/// Attention entries must lie in `[0, 1 + ENTRY_SLACK]`.
pub const ENTRY_SLACK: f64 = 1e-6;

const HEADER_FIXED: usize = 4 + 4 + 4 + 4;

/// A dense row-major f32 tensor as stored in a `.spct` file.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Stack square matrices into an `[H, N, N]` attention tensor.
    pub fn from_heads(heads: &[DMatrix<f64>]) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| Error::Invalid("no heads".into()))?;
        let n = first.nrows();
        let mut data = Vec::with_capacity(heads.len() * n * n);
        for (h, m) in heads.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Shape(format!(
                    "head {h} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            for i in 0..n {
                for j in 0..n {
                    data.push(m[(i, j)] as f32);
                }
            }
        }
        Tensor::new(vec![heads.len(), n, n], data)
    }

    /// A 2-D tensor from a matrix, row-major.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)] as f32);
            }
        }
        Tensor {
            dims: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    /// Splits an `[H, N, N]` tensor into per-head f64 matrices.
    pub fn heads(&self) -> Result<Vec<DMatrix<f64>>> {
        match self.dims[..] {
            [h, n, m] if n == m => Ok((0..h)
                .map(|k| {
                    let block = &self.data[k * n * n..(k + 1) * n * n];
                    DMatrix::from_row_iterator(n, n, block.iter().map(|&v| v as f64))
                })
                .collect()),
            _ => Err(Error::Shape(format!(
                "expected [H, N, N] attention, got {:?}",
                self.dims
            ))),
        }
    }

    /// Views a 2-D tensor as an f64 matrix.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.dims[..] {
            [r, c] => Ok(DMatrix::from_row_iterator(
                r,
                c,
                self.data.iter().map(|&v| v as f64),
            )),
            _ => Err(Error::Shape(format!(
                "expected 2-D tensor, got {:?}",
                self.dims
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(HEADER_FIXED + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&DTYPE_F32_LE.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_FIXED {
            return Err(Error::Format("truncated header".into()));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dtype = word(8);
        if dtype != DTYPE_F32_LE {
            return Err(Error::Format(format!("unsupported dtype {dtype}")));
        }
        let ndim = word(12) as usize;
        let dims_end = HEADER_FIXED + 8 * ndim;
        if bytes.len() < dims_end {
            return Err(Error::Format("truncated dims".into()));
        }
        let mut dims = Vec::with_capacity(ndim);
        let mut count: u64 = 1;
        for k in 0..ndim {
            let at = HEADER_FIXED + 8 * k;
            let d = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::Format("dims overflow".into()))?;
            dims.push(d as usize);
        }
        let payload = &bytes[dims_end..];
        if payload.len() as u64 != count.saturating_mul(4) {
            return Err(Error::Format(format!(
                "payload length mismatch: {} bytes for dims {dims:?}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Tensor::from_bytes(&bytes).map_err(|e| e.with_context(path.display().to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoiceType {
    Analytic,
    Periphrastic,
    Affixal,
    Particle,
    NonConcatenative,
    Other,
}

impl VoiceType {
    pub fn as_str(self) -> &'static str {
        match self {
            VoiceType::Analytic => "analytic",
            VoiceType::Periphrastic => "periphrastic",
            VoiceType::Affixal => "affixal",
            VoiceType::Particle => "particle",
            VoiceType::NonConcatenative => "non-concatenative",
            VoiceType::Other => "other",
        }
    }
}

impl std::fmt::Display for VoiceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub piece: String,
    pub id: u32,
    /// BOS/EOS and similar tokenizer constants.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub special: bool,
}

impl TokenRecord {
    pub fn new(piece: impl Into<String>, id: u32) -> Self {
        TokenRecord {
            piece: piece.into(),
            id,
            special: false,
        }
    }

    pub fn special(piece: impl Into<String>, id: u32) -> Self {
        TokenRecord {
            special: true,
            ..TokenRecord::new(piece, id)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: String,
    pub language: String,
    pub voice_type: VoiceType,
    pub condition: String,
    pub paraphrase_id: u32,
    pub text: String,
    pub char_len: usize,
    pub tokens: Vec<TokenRecord>,
    /// Negative mean log-likelihood of the sentence (lower is better).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavioral_nll: Option<f64>,
    /// Bundle-relative paths, one per layer; filled in by [`write_bundle`].
    #[serde(default)]
    pub attention_files: Vec<String>,
    #[serde(default)]
    pub hidden_files: Vec<String>,
    /// Embedding-layer output, when captured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_file: Option<String>,
}

impl ItemRecord {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    /// Mask of tokens flagged special in the manifest.
    pub fn special_mask(&self) -> Vec<bool> {
        self.tokens.iter().map(|t| t.special).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub model_id: String,
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    /// Index of the first transformer block (1 unless stated otherwise).
    #[serde(default = "default_layer_base")]
    pub layer_index_base: usize,
    /// Label of the head ablation applied during capture, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<String>,
    pub items: Vec<ItemRecord>,
}

fn default_layer_base() -> usize {
    1
}

impl BundleManifest {
    pub fn new(model_id: impl Into<String>, num_layers: usize, num_heads: usize, hidden_size: usize) -> Self {
        BundleManifest {
            model_id: model_id.into(),
            num_layers,
            num_heads,
            hidden_size,
            layer_index_base: 1,
            ablation: None,
            items: Vec::new(),
        }
    }

    /// Layer indices in manifest numbering, in storage order.
    pub fn layer_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_layers).map(move |p| p + self.layer_index_base)
    }

    /// Storage position of a layer index, if it exists.
    pub fn layer_position(&self, layer: usize) -> Option<usize> {
        layer
            .checked_sub(self.layer_index_base)
            .filter(|&p| p < self.num_layers)
    }

    pub fn item(&self, item_id: &str) -> Option<&ItemRecord> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// Checks the manifest-level invariants that need no tensor access.
    pub fn check(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for item in &self.items {
            let v = |rule, detail: String| Violation {
                item: Some(item.item_id.clone()),
                layer: None,
                rule,
                detail,
            };
            if !seen.insert(item.item_id.as_str()) {
                out.push(v(Rule::DuplicateItemId, "item_id appears more than once".into()));
            }
            if item.item_id.is_empty()
                || item.item_id.contains(['/', '\\'])
                || item.item_id == "."
                || item.item_id == ".."
            {
                out.push(v(Rule::BadItemId, format!("{:?} is not a valid directory name", item.item_id)));
            }
            if item.char_len == 0 {
                out.push(v(Rule::CharLen, "char_len must be positive".into()));
            }
            if item.tokens.len() < 2 {
                out.push(v(
                    Rule::TokenCount,
                    format!("{} tokens; at least 2 required", item.tokens.len()),
                ));
            }
            if let Some(nll) = item.behavioral_nll {
                if !nll.is_finite() {
                    out.push(v(Rule::NonFinite, "behavioral_nll is not finite".into()));
                }
            }
        }
        out
    }
}

/// Tensors for one item: one attention and one hidden-state tensor per layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ItemTensors {
    pub attention: Vec<Tensor>,
    pub hidden: Vec<Tensor>,
    pub embedding: Option<Tensor>,
}

fn tensor_rel_path(item_id: &str, layer: impl std::fmt::Display, kind: &str) -> String {
    format!("tensors/{item_id}/{layer}.{kind}.spct")
}

fn check_item_tensors(manifest: &BundleManifest, item: &ItemRecord, t: &ItemTensors) -> Result<()> {
    let n = item.num_tokens();
    let ctx = |msg: String| Error::Shape(format!("item {}: {msg}", item.item_id));
    if t.attention.len() != manifest.num_layers || t.hidden.len() != manifest.num_layers {
        return Err(ctx(format!(
            "{} attention / {} hidden tensors for {} layers",
            t.attention.len(),
            t.hidden.len(),
            manifest.num_layers
        )));
    }
    let attn_dims = [manifest.num_heads, n, n];
    let hidden_dims = [n, manifest.hidden_size];
    for (p, a) in t.attention.iter().enumerate() {
        if a.dims() != attn_dims {
            return Err(ctx(format!("layer position {p}: attention dims {:?}, expected {attn_dims:?}", a.dims())));
        }
    }
    for (p, h) in t.hidden.iter().chain(t.embedding.iter()).enumerate() {
        if h.dims() != hidden_dims {
            return Err(ctx(format!("position {p}: hidden dims {:?}, expected {hidden_dims:?}", h.dims())));
        }
    }
    Ok(())
}

/// Writes a bundle directory. All shapes are checked before anything touches
/// the filesystem. Returns the manifest as written (with file paths filled in).
pub fn write_bundle(
    dir: &Path,
    manifest: &BundleManifest,
    tensors: &BTreeMap<String, ItemTensors>,
) -> Result<BundleManifest> {
    if let Some(v) = manifest.check().into_iter().next() {
        return Err(Error::Manifest(v.to_string()));
    }
    let mut out = manifest.clone();
    for item in &mut out.items {
        let t = tensors
            .get(&item.item_id)
            .ok_or_else(|| Error::Shape(format!("no tensors for item {}", item.item_id)))?;
        check_item_tensors(manifest, item, t)?;
        item.attention_files = manifest
            .layer_indices()
            .map(|l| tensor_rel_path(&item.item_id, l, "attn"))
            .collect();
        item.hidden_files = manifest
            .layer_indices()
            .map(|l| tensor_rel_path(&item.item_id, l, "hidden"))
            .collect();
        item.embedding_file = t
            .embedding
            .as_ref()
            .map(|_| tensor_rel_path(&item.item_id, "embed", "hidden"));
    }

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for item in &out.items {
        let t = &tensors[&item.item_id];
        let item_dir = dir.join("tensors").join(&item.item_id);
        fs::create_dir_all(&item_dir).map_err(|e| Error::io(&item_dir, e))?;
        for (rel, tensor) in item.attention_files.iter().zip(&t.attention) {
            tensor.write(&dir.join(rel))?;
        }
        for (rel, tensor) in item.hidden_files.iter().zip(&t.hidden) {
            tensor.write(&dir.join(rel))?;
        }
        if let (Some(rel), Some(tensor)) = (&item.embedding_file, &t.embedding) {
            tensor.write(&dir.join(rel))?;
        }
    }
    let json = serde_json::to_string_pretty(&out)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

/// An opened bundle. Tensors are read from disk only when requested.
#[derive(Clone, Debug)]
pub struct Bundle {
    root: PathBuf,
    manifest: BundleManifest,
}

/// Opens a bundle directory and parses its manifest.
pub fn read_bundle(path: &Path) -> Result<Bundle> {
    let mpath = path.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Manifest(format!("{}: {e}", mpath.display())))?;
    Ok(Bundle {
        root: path.to_path_buf(),
        manifest,
    })
}

impl Bundle {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &BundleManifest {
        &self.manifest
    }

    fn load(&self, item: &ItemRecord, rel: Option<&String>, dims: &[usize], what: &str) -> Result<Tensor> {
        let rel = rel.ok_or_else(|| {
            Error::Manifest(format!("item {} has no {what} file", item.item_id))
        })?;
        let t = Tensor::read(&self.root.join(rel))?;
        if t.dims() != dims {
            return Err(Error::Shape(format!(
                "item {} {what} {rel}: dims {:?}, expected {dims:?}",
                item.item_id,
                t.dims()
            )));
        }
        Ok(t)
    }

    /// Attention `[H, N, N]` at storage position `pos` (0-based).
    pub fn attention(&self, item: &ItemRecord, pos: usize) -> Result<Tensor> {
        let n = item.num_tokens();
        self.load(
            item,
            item.attention_files.get(pos),
            &[self.manifest.num_heads, n, n],
            "attention",
        )
    }

    /// Hidden states `[N, d]` at storage position `pos` (0-based).
    pub fn hidden(&self, item: &ItemRecord, pos: usize) -> Result<Tensor> {
        self.load(
            item,
            item.hidden_files.get(pos),
            &[item.num_tokens(), self.manifest.hidden_size],
            "hidden",
        )
    }

    pub fn embedding(&self, item: &ItemRecord) -> Result<Tensor> {
        self.load(
            item,
            item.embedding_file.as_ref(),
            &[item.num_tokens(), self.manifest.hidden_size],
            "embedding",
        )
    }

    /// Loads every tensor of one item.
    pub fn item_tensors(&self, item: &ItemRecord) -> Result<ItemTensors> {
        let l = self.manifest.num_layers;
        Ok(ItemTensors {
            attention: (0..l).map(|p| self.attention(item, p)).collect::<Result<_>>()?,
            hidden: (0..l).map(|p| self.hidden(item, p)).collect::<Result<_>>()?,
            embedding: match item.embedding_file {
                Some(_) => Some(self.embedding(item)?),
                None => None,
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    ManifestUnreadable,
    DuplicateItemId,
    BadItemId,
    CharLen,
    TokenCount,
    NonFinite,
    LayerCount,
    MissingFile,
    BadTensor,
    Shape,
    RowNotStochastic,
    EntryOutOfRange,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::ManifestUnreadable => "manifest unreadable",
            Rule::DuplicateItemId => "duplicate item id",
            Rule::BadItemId => "bad item id",
            Rule::CharLen => "char_len not positive",
            Rule::TokenCount => "too few tokens",
            Rule::NonFinite => "non-finite value",
            Rule::LayerCount => "layer count mismatch",
            Rule::MissingFile => "missing file",
            Rule::BadTensor => "bad tensor file",
            Rule::Shape => "shape mismatch",
            Rule::RowNotStochastic => "row not stochastic",
            Rule::EntryOutOfRange => "entry out of range",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub item: Option<String>,
    /// Layer index in manifest numbering.
    pub layer: Option<usize>,
    pub rule: Rule,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.rule.as_str())?;
        if let Some(item) = &self.item {
            write!(f, " [item {item}")?;
            if let Some(l) = self.layer {
                write!(f, ", layer {l}")?;
            }
            write!(f, "]")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks stochasticity and range of every attention row.
pub fn check_attention_rows(t: &Tensor) -> Vec<(Rule, String)> {
    let mut out = Vec::new();
    let [h, n, _] = t.dims()[..] else {
        return vec![(Rule::Shape, format!("attention dims {:?}", t.dims()))];
    };
    let data = t.data();
    for head in 0..h {
        for i in 0..n {
            let row = &data[(head * n + i) * n..(head * n + i + 1) * n];
            let mut sum = 0.0f64;
            let mut bad_entry = None;
            for (j, &v) in row.iter().enumerate() {
                let v = v as f64;
                if !v.is_finite() || v < 0.0 || v > 1.0 + ENTRY_SLACK {
                    bad_entry.get_or_insert((j, v));
                }
                sum += v;
            }
            if let Some((j, v)) = bad_entry {
                out.push((Rule::EntryOutOfRange, format!("head {head} entry ({i},{j}) = {v}")));
            }
            if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
                out.push((Rule::RowNotStochastic, format!("head {head} row {i} sums to {sum}")));
            }
        }
    }
    out
}

/// Validates every manifest and tensor invariant. Never fails: problems are
/// returned as violations, each naming the item, layer and rule involved.
pub fn validate_bundle(path: &Path) -> ValidationReport {
    let bundle = match read_bundle(path) {
        Ok(b) => b,
        Err(e) => {
            return ValidationReport {
                violations: vec![Violation {
                    item: None,
                    layer: None,
                    rule: Rule::ManifestUnreadable,
                    detail: e.to_string(),
                }],
            }
        }
    };
    let m = bundle.manifest();
    let mut violations = m.check();
    for item in &m.items {
        let push = |out: &mut Vec<Violation>, layer: Option<usize>, rule: Rule, detail: String| {
            out.push(Violation {
                item: Some(item.item_id.clone()),
                layer,
                rule,
                detail,
            })
        };
        if item.attention_files.len() != m.num_layers || item.hidden_files.len() != m.num_layers {
            push(
                &mut violations,
                None,
                Rule::LayerCount,
                format!(
                    "{} attention / {} hidden files for {} layers",
                    item.attention_files.len(),
                    item.hidden_files.len(),
                    m.num_layers
                ),
            );
        }
        let classify = |e: &Error| match e.root() {
            Error::Io { .. } => Rule::MissingFile,
            Error::Shape(_) => Rule::Shape,
            _ => Rule::BadTensor,
        };
        for (pos, layer) in m.layer_indices().enumerate() {
            if pos < item.attention_files.len() {
                match bundle.attention(item, pos) {
                    Ok(t) => {
                        for (rule, detail) in check_attention_rows(&t) {
                            push(&mut violations, Some(layer), rule, detail);
                        }
                    }
                    Err(e) => push(&mut violations, Some(layer), classify(&e), e.to_string()),
                }
            }
            if pos < item.hidden_files.len() {
                match bundle.hidden(item, pos) {
                    Ok(t) => {
                        if t.data().iter().any(|v| !v.is_finite()) {
                            push(&mut violations, Some(layer), Rule::NonFinite, "hidden state".into());
                        }
                    }
                    Err(e) => push(&mut violations, Some(layer), classify(&e), e.to_string()),
                }
            }
        }
        if item.embedding_file.is_some() {
            if let Err(e) = bundle.embedding(item) {
                push(&mut violations, Some(0), classify(&e), e.to_string());
            }
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn softmax_rows(n: usize, seed: u64) -> DMatrix<f64> {
        let mut m = DMatrix::from_fn(n, n, |i, j| (((i * 7 + j * 3) as u64 + seed) % 5) as f64 + 1.0);
        for mut row in m.row_iter_mut() {
            let s: f64 = row.iter().sum();
            row /= s;
        }
        m
    }

    pub(crate) fn tiny_item(id: &str, n: usize) -> ItemRecord {
        ItemRecord {
            item_id: id.into(),
            language: "en".into(),
            voice_type: VoiceType::Periphrastic,
            condition: "active".into(),
            paraphrase_id: 0,
            text: "the cat sat".into(),
            char_len: 11,
            tokens: (0..n).map(|k| TokenRecord::new(format!("t{k}"), k as u32)).collect(),
            behavioral_nll: Some(2.5),
            attention_files: vec![],
            hidden_files: vec![],
            embedding_file: None,
        }
    }

    fn tiny_tensors(layers: usize, h: usize, n: usize, d: usize) -> ItemTensors {
        ItemTensors {
            attention: (0..layers)
                .map(|l| {
                    let heads: Vec<_> = (0..h).map(|k| softmax_rows(n, (l * h + k) as u64)).collect();
                    Tensor::from_heads(&heads).unwrap()
                })
                .collect(),
            hidden: (0..layers)
                .map(|l| Tensor::from_matrix(&DMatrix::from_fn(n, d, |i, j| (i + j + l) as f64 * 0.25)))
                .collect(),
            embedding: None,
        }
    }

    #[test]
    fn one_item_two_layers_writes_five_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = BundleManifest::new("toy", 2, 2, 4);
        m.items.push(tiny_item("a", 3));
        let tensors = BTreeMap::from([("a".to_string(), tiny_tensors(2, 2, 3, 4))]);
        let written = write_bundle(dir.path(), &m, &tensors).unwrap();

        let files: Vec<_> = walk(dir.path());
        assert_eq!(files.len(), 5, "{files:?}");

        let b = read_bundle(dir.path()).unwrap();
        assert_eq!(b.manifest(), &written);
        let item = &b.manifest().items[0];
        assert_eq!(b.item_tensors(item).unwrap(), tensors["a"]);
        assert!(validate_bundle(dir.path()).is_empty());
    }

    fn walk(p: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in fs::read_dir(p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path);
            }
        }
        out
    }

    #[test]
    fn empty_bundle_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let m = BundleManifest::new("toy", 3, 2, 4);
        write_bundle(dir.path(), &m, &BTreeMap::new()).unwrap();
        let b = read_bundle(dir.path()).unwrap();
        assert!(b.manifest().items.is_empty());
        assert!(validate_bundle(dir.path()).is_empty());
    }

    #[test]
    fn shape_mismatch_rejected_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("bundle");
        let mut m = BundleManifest::new("toy", 1, 2, 4);
        m.items.push(tiny_item("a", 5));
        let tensors = BTreeMap::from([("a".to_string(), tiny_tensors(1, 2, 4, 4))]);
        let err = write_bundle(&target, &m, &tensors).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
        assert!(!target.exists());
    }

    #[test]
    fn truncated_payload_and_bad_dtype() {
        let t = Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.25, 0.75]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(Tensor::from_bytes(&bytes).unwrap(), t);

        let err = Tensor::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"), "{err}");

        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = Tensor::from_bytes(&bad).unwrap_err();
        assert!(err.to_string().contains("unsupported dtype"), "{err}");

        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Tensor::from_bytes(&bad).unwrap_err().to_string().contains("bad magic"));
    }

    #[test]
    fn header_layout_is_little_endian_without_padding() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[0..4], b"SPCT");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[0, 0, 0, 0]);
        assert_eq!(&b[12..16], &[2, 0, 0, 0]);
        assert_eq!(&b[16..24], &1u64.to_le_bytes());
        assert_eq!(&b[24..32], &2u64.to_le_bytes());
        assert_eq!(&b[32..36], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 40);
    }

    #[test]
    fn row_violations_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = BundleManifest::new("toy", 1, 1, 2);
        m.items.push(tiny_item("a", 2));
        let attn = Tensor::new(vec![1, 2, 2], vec![0.5, 0.4, 1.01, -0.01]).unwrap();
        let hidden = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        let tensors = BTreeMap::from([(
            "a".to_string(),
            ItemTensors {
                attention: vec![attn],
                hidden: vec![hidden],
                embedding: None,
            },
        )]);
        write_bundle(dir.path(), &m, &tensors).unwrap();
        let report = validate_bundle(dir.path());
        let rules: Vec<_> = report.violations.iter().map(|v| v.rule).collect();
        assert_eq!(rules, vec![Rule::RowNotStochastic, Rule::EntryOutOfRange]);
        for v in &report.violations {
            assert_eq!(v.item.as_deref(), Some("a"));
            assert_eq!(v.layer, Some(1));
        }
    }

    #[test]
    fn lazy_access_ignores_other_items() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = BundleManifest::new("toy", 1, 1, 2);
        m.items.push(tiny_item("a", 3));
        m.items.push(tiny_item("b", 3));
        let tensors = BTreeMap::from([
            ("a".to_string(), tiny_tensors(1, 1, 3, 2)),
            ("b".to_string(), tiny_tensors(1, 1, 3, 2)),
        ]);
        write_bundle(dir.path(), &m, &tensors).unwrap();
        fs::remove_dir_all(dir.path().join("tensors/b")).unwrap();

        let bundle = read_bundle(dir.path()).unwrap();
        let a = bundle.manifest().item("a").unwrap();
        assert!(bundle.attention(a, 0).is_ok());
        let b = bundle.manifest().item("b").unwrap();
        assert!(matches!(bundle.attention(b, 0).unwrap_err(), Error::Io { .. }));
        let report = validate_bundle(dir.path());
        assert!(report.violations.iter().all(|v| v.item.as_deref() == Some("b")));
        assert!(report.violations.iter().any(|v| v.rule == Rule::MissingFile));
    }

    #[test]
    fn duplicate_ids_and_short_items_flagged() {
        let mut m = BundleManifest::new("toy", 1, 1, 2);
        m.items.push(tiny_item("a", 3));
        m.items.push(tiny_item("a", 1));
        let rules: Vec<_> = m.check().into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::DuplicateItemId));
        assert!(rules.contains(&Rule::TokenCount));
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let r = validate_bundle(dir.path());
        assert_eq!(r.violations[0].rule, Rule::ManifestUnreadable);
        assert!(matches!(read_bundle(dir.path()).unwrap_err(), Error::Io { .. }));
    }
}
