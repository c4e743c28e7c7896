//! The reconfiguration change index from z-scored diagnostics, and the
//! Fiedler-based hallucination detector calibrated on a planted bundle whose
//! "hallucinated" items carry a raised final-layer Fiedler value.
//!
//!     cargo run --release --example reasoning_rci_and_shd

use spectraprobe::bundle::read_bundle;
use spectraprobe::config::RunConfig;
use spectraprobe::pipeline::{shd_calibrate_bundle, shd_detect_bundle};
use spectraprobe::scores::{rci, ZScoredDiagnostics};
use spectraprobe::synthetic::{Effect, PlantedSpec, write_planted};

fn main() -> spectraprobe::Result<()> {
    let strategies = [
        ("standard", 0.596, 0.127, -0.921, 1.286),
        ("cot", 0.790, 0.898, -0.744, 0.455),
        ("cod", -1.708, -1.664, 1.611, -1.429),
    ];
    for (name, z_energy, z_entropy, z_hfer, z_fiedler) in strategies {
        let z = ZScoredDiagnostics { z_energy, z_entropy, z_hfer, z_fiedler };
        println!("{name:<9} RCI {:+.3}", rci(&z));
    }

    let spec = PlantedSpec {
        model_id: "synthetic-shd".into(),
        conditions: vec!["grounded".into(), "hallucinated".into()],
        effects: vec![Effect { condition: "hallucinated".into(), language: None, lo: 6, hi: 6, shift: 0.15 }],
        ..PlantedSpec::small(4, 10, 6, 11)
    };
    let dir = tempfile::tempdir().expect("temp dir");
    write_planted(dir.path(), &spec)?;
    let bundle = read_bundle(dir.path())?;
    let cfg = RunConfig::default();

    let calib = shd_calibrate_bundle(&bundle, &cfg, "grounded", None, Some("hallucinated"))?;
    print!("\ncalibration:\n{}", calib.to_text());
    let rows = shd_detect_bundle(&bundle, &cfg, &calib)?;
    for cond in ["grounded", "hallucinated"] {
        let of: Vec<_> = rows.iter().filter(|r| r.condition == cond).collect();
        let flagged = of.iter().filter(|r| r.flag == 1).count();
        println!("{cond:<13} flagged {flagged}/{}", of.len());
    }
    Ok(())
}
