//! Writes a two-item bundle by hand, reads it back, validates it, then
//! breaks one attention file and validates again.
//!
//!     cargo run --example capture_bundle_roundtrip

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use spectraprobe::bundle::{
    read_bundle, validate_bundle, write_bundle, BundleManifest, ItemRecord, ItemTensors, Tensor, TokenRecord,
    VoiceType,
};

fn causal(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 })
}

fn item(id: &str, condition: &str, words: &[&str]) -> ItemRecord {
    let text = words.join(" ");
    let mut tokens = vec![TokenRecord::special("<s>", 1)];
    tokens.extend(words.iter().enumerate().map(|(i, w)| TokenRecord::new(*w, 10 + i as u32)));
    ItemRecord {
        item_id: id.into(),
        language: "en".into(),
        voice_type: VoiceType::Periphrastic,
        condition: condition.into(),
        paraphrase_id: 0,
        char_len: text.chars().count(),
        text,
        tokens,
        behavioral_nll: Some(2.4),
        attention_files: Vec::new(),
        hidden_files: Vec::new(),
        embedding_file: None,
    }
}

fn main() -> spectraprobe::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let (layers, heads, d) = (2, 2, 4);

    let mut manifest = BundleManifest::new("toy", layers, heads, d);
    manifest.items.push(item("en-active-00", "active", &["the", "cat", "chased", "mice"]));
    manifest.items.push(item("en-passive-00", "passive", &["mice", "were", "chased", "by", "the", "cat"]));

    let mut tensors = BTreeMap::new();
    for it in &manifest.items {
        let n = it.num_tokens();
        let a = Tensor::from_heads(&vec![causal(n); heads])?;
        let x = Tensor::from_matrix(&DMatrix::from_fn(n, d, |i, j| ((i * d + j) as f64).sin()));
        tensors.insert(
            it.item_id.clone(),
            ItemTensors { attention: vec![a; layers], hidden: vec![x; layers], embedding: None },
        );
    }
    let written = write_bundle(dir.path(), &manifest, &tensors)?;
    println!("attention files of {}: {:?}", written.items[1].item_id, written.items[1].attention_files);

    let bundle = read_bundle(dir.path())?;
    let back = bundle.attention(&bundle.manifest().items[1], 0)?;
    println!("read back attention dims {:?}", back.dims());
    println!("violations: {}", validate_bundle(dir.path()).violations.len());

    // Scale one head so its rows no longer sum to one.
    let path = dir.path().join(&written.items[0].attention_files[1]);
    let t = Tensor::read(&path)?;
    let broken: Vec<f32> = t.data().iter().map(|v| v * 1.5).collect();
    Tensor::new(t.dims().to_vec(), broken)?.write(&path)?;
    for v in validate_bundle(dir.path()).violations.iter().take(3) {
        println!("  {v}");
    }
    Ok(())
}
