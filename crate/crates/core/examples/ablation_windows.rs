//! Head-ablation summary: a baseline bundle against two ablated captures of
//! the same items, reported as early/mid/late/overall window means of the
//! change in the paired contrast.
//!
//!     cargo run --release --example ablation_windows

use spectraprobe::bundle::read_bundle;
use spectraprobe::config::RunConfig;
use spectraprobe::pipeline::ablation_summary;
use spectraprobe::synthetic::{write_planted, Effect, PlantedSpec};

fn main() -> spectraprobe::Result<()> {
    let base = PlantedSpec::small(3, 4, 12, 2);
    let variants = [
        base.ablated("L2-L3 H0-7", Effect { condition: "passive".into(), language: None, lo: 2, hi: 3, shift: 0.08 }),
        base.ablated("L3-L4 H0-3", Effect { condition: "passive".into(), language: None, lo: 3, hi: 4, shift: -0.05 }),
    ];

    let root = tempfile::tempdir().expect("temp dir");
    write_planted(&root.path().join("baseline"), &base)?;
    let baseline = read_bundle(&root.path().join("baseline"))?;
    let mut ablated = Vec::new();
    for (k, spec) in variants.iter().enumerate() {
        let dir = root.path().join(format!("ablated-{k}"));
        write_planted(&dir, spec)?;
        ablated.push(read_bundle(&dir)?);
    }

    let (rows, warnings) = ablation_summary(&baseline, &ablated, "active", "passive", &RunConfig::default())?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let cell = |v: Option<f64>| v.map(|x| format!("{x:+.4}")).unwrap_or_else(|| "-".into());
    println!("{:<12} {:>8} {:>8} {:>8} {:>8}", "ablation", "early", "mid", "late", "overall");
    for r in rows {
        println!(
            "{:<12} {:>8} {:>8} {:>8} {:>8}",
            r.ablation,
            cell(r.early),
            cell(r.mid),
            cell(r.late),
            cell(r.overall)
        );
    }
    Ok(())
}
