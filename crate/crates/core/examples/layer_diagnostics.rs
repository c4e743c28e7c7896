//! Energy, spectral entropy, HFER and the Fiedler value across the layers of
//! one planted item, then the same item under the HFER cutoff sweep.
//!
//!     cargo run --example layer_diagnostics

use spectraprobe::analysis::{diagnose_bundle, AnalysisConfig};
use spectraprobe::bundle::read_bundle;
use spectraprobe::spectral::HferCutoff;
use spectraprobe::synthetic::{write_planted, PlantedSpec};

fn main() -> spectraprobe::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let planted = write_planted(dir.path(), &PlantedSpec::small(1, 1, 6, 5))?;
    let bundle = read_bundle(dir.path())?;
    let id = "en-passive-00";

    let cfg = AnalysisConfig::default();
    let diags = diagnose_bundle(&bundle, &cfg, Some(&[id]))?;
    println!("item {id}, fingerprint {}", diags[0].fingerprint);
    println!("{:>5} {:>10} {:>8} {:>7} {:>9} {:>9}", "layer", "energy", "SE", "HFER", "lambda2", "planted");
    for (row, t) in diags[0].layers.iter().zip(&planted.truth[id]) {
        let d = &row.diagnostics;
        println!(
            "{:>5} {:>10.4} {:>8.4} {:>7.4} {:>9.6} {:>9.6}",
            row.layer, d.energy, d.spectral_entropy, d.hfer, d.fiedler, t
        );
    }

    println!("\nHFER at layer 1 by cutoff:");
    for c in [0.10, 0.15, 0.20, 0.25, 0.30, 0.40] {
        let cfg = AnalysisConfig { cutoff: HferCutoff::MassFraction(c), layers: Some(vec![1]), ..cfg.clone() };
        let d = diagnose_bundle(&bundle, &cfg, Some(&[id]))?;
        let l = &d[0].layers[0].diagnostics;
        println!("  c={c:.2}  K={:>2}  HFER={:.4}", l.cutoff_k, l.hfer);
    }
    Ok(())
}
