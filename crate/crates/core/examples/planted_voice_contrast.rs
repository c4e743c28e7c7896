//! Planted active/passive benchmark: 20 languages, only English passives
//! carry an early-layer drop in the Fiedler value. Runs the full contrast
//! pipeline and writes tables and charts.
//!
//!     cargo run --release --example planted_voice_contrast [out_dir]

use std::path::PathBuf;

use spectraprobe::bundle::read_bundle;
use spectraprobe::config::RunConfig;
use spectraprobe::pipeline::contrast;
use spectraprobe::report::{report, write_table};
use spectraprobe::synthetic::{write_planted, PlantedSpec};

fn main() -> spectraprobe::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = out.clone().unwrap_or_else(|| tmp.path().to_path_buf());

    let bundle_dir = root.join("bundle");
    write_planted(&bundle_dir, &PlantedSpec::voice_benchmark(17))?;
    let bundle = read_bundle(&bundle_dir)?;

    let cfg = RunConfig { output_dir: root.join("contrast"), ..RunConfig::default() };
    let result = contrast(&[bundle], "active", "passive", &cfg)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }

    println!("{:<4} {:>9} {:>20} {:>8} {:>8} {:>7}", "lang", "mean", "95% CI", "p", "q", "g_trim");
    for r in result.languages.iter().filter(|r| r.window == "early" && r.metric == "fiedler") {
        println!(
            "{:<4} {:>+9.4} [{:>+8.4}, {:>+8.4}] {:>8.4} {:>8.4} {:>7}{}",
            r.language,
            r.mean,
            r.ci_lo,
            r.ci_hi,
            r.p_perm,
            r.q_fdr,
            r.g_trim.map(|g| format!("{g:+.2}")).unwrap_or_else(|| "-".into()),
            if r.significant { " *" } else { "" }
        );
    }

    let fp = Some(result.fingerprint.as_str());
    write_table(&cfg.output_dir, "languages", fp, &result.languages)?;
    write_table(&cfg.output_dir, "voice_types", fp, &result.voice_types)?;
    write_table(&cfg.output_dir, "families", fp, &result.families)?;
    for path in report(&cfg.output_dir, &cfg.output_dir, "fiedler")? {
        if out.is_some() {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
