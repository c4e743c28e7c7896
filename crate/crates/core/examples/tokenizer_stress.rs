//! Pieces per character and fragmentation entropy for a few tokenizations,
//! then the per-language join against the planted benchmark's contrasts and
//! their correlation.
//!
//!     cargo run --release --example tokenizer_stress

use spectraprobe::bundle::read_bundle;
use spectraprobe::config::RunConfig;
use spectraprobe::pipeline::tokstress;
use spectraprobe::stats::correlations;
use spectraprobe::synthetic::{write_planted, PlantedSpec};
use spectraprobe::tokstress::metrics_of;

fn main() -> spectraprobe::Result<()> {
    let samples: [(&str, &[&str]); 3] = [
        ("the cat was chased", &["the", " cat", " was", " chased"]),
        ("ológbò náà", &["ol", "ó", "g", "b", "ò", " n", "á", "à"]),
        ("kedi kovalandı", &["ked", "i", " kov", "al", "andı"]),
    ];
    for (text, pieces) in samples {
        let m = metrics_of(pieces, text.chars().count());
        println!("{text:<20} phi={:.3} H={:.3} H_norm={:.3}", m.phi, m.h_frag, m.h_frag_norm);
    }

    let dir = tempfile::tempdir().expect("temp dir");
    write_planted(dir.path(), &PlantedSpec::voice_benchmark(17))?;
    let bundle = read_bundle(dir.path())?;
    let cfg = RunConfig::default();
    let (_, table) = tokstress(&[bundle], "active", "passive", &cfg)?;

    println!("\n{:<4} {:>6} {:>8} {:>10}", "lang", "phi", "H_norm", "|delta|");
    for r in &table {
        println!("{:<4} {:>6.3} {:>8.3} {:>10.4}", r.language, r.phi_mean, r.h_frag_norm_mean, r.endpoint);
    }
    let phi: Vec<f64> = table.iter().map(|r| r.phi_mean).collect();
    let end: Vec<f64> = table.iter().map(|r| r.endpoint).collect();
    let c = correlations(&phi, &end, &cfg.stats)?;
    println!(
        "\nphi vs |delta|: pearson {:+.3} [{:+.3}, {:+.3}], spearman {:+.3}",
        c.pearson, c.pearson_ci.lo, c.pearson_ci.hi, c.spearman
    );
    Ok(())
}
