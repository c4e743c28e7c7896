//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::diagnose_bundle;
use crate::bundle::{read_bundle, validate_bundle, Bundle, Rule};
use crate::config::{RunConfig, Settings};
use crate::contrast::{LayerWindow, Metric};
use crate::error::{Error, Result};
use crate::pipeline::{self, SweepAxis};
use crate::report::{read_csv_columns, report, write_table};
use crate::scores::{ShdCalibration, ZScoredDiagnostics};
use crate::stats::{correlations, BootstrapKind};

pub const THREADS_ENV: &str = "SPECTRAPROBE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "spectraprobe", version, about = "Spectral diagnostics of attention-induced token graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct Common {
    /// Plain-text (TOML) config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// combinatorial, symmetric, random_walk, directed_rw or magnetic.
    #[arg(long, global = true)]
    laplacian: Option<String>,
    /// Head aggregation: mass_weighted or uniform.
    #[arg(long, global = true)]
    agg: Option<String>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    exclude_special: Option<bool>,
    /// Magnetic phase in (0, pi].
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// HFER energy-mass cutoff fraction.
    #[arg(long, global = true)]
    hfer_c: Option<f64>,
    /// HFER cutoff index.
    #[arg(long, global = true)]
    hfer_k: Option<usize>,
    /// Layer window lo:hi (repeatable).
    #[arg(long = "window", global = true)]
    windows: Vec<String>,
    #[arg(long, global = true)]
    boot: Option<usize>,
    #[arg(long, global = true, value_parser = parse_boot_kind)]
    boot_kind: Option<BootstrapKind>,
    #[arg(long, global = true)]
    perm: Option<usize>,
    #[arg(long, global = true)]
    fdr_q: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    max_token_delta: Option<usize>,
    /// energy, entropy, hfer or fiedler.
    #[arg(long, global = true, value_parser = parse_metric)]
    metric: Option<Metric>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn parse_boot_kind(s: &str) -> std::result::Result<BootstrapKind, String> {
    match s {
        "percentile" => Ok(BootstrapKind::Percentile),
        "bca" => Ok(BootstrapKind::Bca),
        _ => Err(format!("unknown bootstrap kind {s:?}")),
    }
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    Metric::ALL
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| format!("unknown metric {s:?}"))
}

#[derive(Args, Debug, Clone)]
struct Conditions {
    #[arg(long, default_value = "active")]
    cond_a: String,
    #[arg(long, default_value = "passive")]
    cond_b: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a bundle against every format invariant.
    Validate { bundle: PathBuf },
    /// Per-item, per-layer diagnostics.
    Diagnose {
        bundle: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Paired contrast with statistics; one bundle per model family.
    Contrast {
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        #[command(flatten)]
        conditions: Conditions,
        #[command(flatten)]
        common: Common,
    },
    /// Robustness of the contrast along one configuration axis.
    Sweep {
        bundle: PathBuf,
        /// hfer_cutoff, theta, laplacian, aggregation or window.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values (defaults per axis).
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[command(flatten)]
        conditions: Conditions,
        #[command(flatten)]
        common: Common,
    },
    /// Windowed change of the contrast under head ablation.
    AblationSummary {
        baseline: PathBuf,
        #[arg(required = true)]
        ablated: Vec<PathBuf>,
        #[command(flatten)]
        conditions: Conditions,
        #[command(flatten)]
        common: Common,
    },
    /// Tokenizer-stress covariates joined to contrast magnitudes.
    Tokstress {
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        #[command(flatten)]
        conditions: Conditions,
        #[command(flatten)]
        common: Common,
    },
    /// Pearson and Spearman correlation of two columns of a CSV table.
    Correlate {
        table: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        /// Column to split the table by (e.g. family).
        #[arg(long)]
        by: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Reconfiguration change index per condition (strategy).
    Rci {
        bundle: Option<PathBuf>,
        /// CSV with columns strategy,z_energy,z_entropy,z_hfer,z_fiedler.
        #[arg(long, conflicts_with = "bundle")]
        z_table: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Final-layer Fiedler hallucination detector.
    Shd {
        #[command(subcommand)]
        action: ShdAction,
    },
    /// SVG charts and a text summary from a contrast output directory.
    Report {
        analysis_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
enum ShdAction {
    Calibrate {
        bundle: PathBuf,
        /// Condition of the reference items.
        #[arg(long)]
        reference: String,
        #[arg(long, conflicts_with = "positive")]
        tau: Option<f64>,
        /// Condition labeled as hallucinated, for threshold tuning.
        #[arg(long)]
        positive: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    Detect {
        bundle: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn settings(&self) -> Settings {
        Settings {
            laplacian: self.laplacian.clone(),
            theta: self.theta,
            agg: self.agg.clone(),
            exclude_special: self.exclude_special,
            hfer_c: self.hfer_c,
            hfer_k: self.hfer_k,
            layers: None,
            windows: (!self.windows.is_empty()).then(|| self.windows.clone()),
            boot: self.boot,
            bootstrap_kind: self.boot_kind,
            perm: self.perm,
            fdr_q: self.fdr_q,
            winsor: None,
            trim: None,
            seed: self.seed,
            max_token_delta: self.max_token_delta,
            metric: self.metric,
            out: self.out.clone(),
        }
    }

    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        file.overridden_by(self.settings()).resolve()
    }
}

/// Opens a bundle, refusing ones with format violations.
fn open(path: &Path) -> Result<Bundle> {
    let bundle = read_bundle(path)?;
    let report = validate_bundle(path);
    if let Some(first) = report.violations.first() {
        return Err(Error::Invalid(format!(
            "{} fails validation ({} violations; first: {first})",
            path.display(),
            report.violations.len()
        )));
    }
    Ok(bundle)
}

fn open_all(paths: &[PathBuf]) -> Result<Vec<Bundle>> {
    paths.iter().map(|p| open(p)).collect()
}

struct Io<'a> {
    out: &'a mut (dyn Write + Send),
    err: &'a mut (dyn Write + Send),
}

impl Io<'_> {
    fn wrote(&mut self, paths: &[PathBuf]) {
        for p in paths {
            let _ = writeln!(self.out, "wrote {}", p.display());
        }
    }

    fn warn(&mut self, warnings: &[String]) {
        for w in warnings {
            let _ = writeln!(self.err, "warning: {w}");
        }
    }
}

fn run_validate(bundle: &Path, io: &mut Io) -> i32 {
    let report = validate_bundle(bundle);
    for v in &report.violations {
        let _ = writeln!(io.out, "{v}");
    }
    if report.violations.iter().any(|v| v.rule == Rule::ManifestUnreadable) {
        2
    } else if report.is_empty() {
        let _ = writeln!(io.out, "ok: {}", bundle.display());
        0
    } else {
        let _ = writeln!(io.err, "{} violations", report.violations.len());
        1
    }
}

#[derive(serde::Serialize)]
struct DiagnosticRow {
    item_id: String,
    layer: usize,
    n_nodes: usize,
    dropped: usize,
    energy: f64,
    spectral_entropy: f64,
    hfer: f64,
    cutoff_k: usize,
    fiedler: f64,
}

#[derive(serde::Serialize)]
struct CorrelationRow {
    group: String,
    x: String,
    y: String,
    n: usize,
    pearson: f64,
    spearman: f64,
    pearson_ci_lo: f64,
    pearson_ci_hi: f64,
}

fn column(headers: &[String], name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Usage(format!("{} has no column {name:?}", path.display())))
}

fn numbers(rows: &[&Vec<String>], col: usize, name: &str) -> Result<Vec<f64>> {
    rows.iter()
        .map(|r| {
            r[col]
                .parse::<f64>()
                .map_err(|_| Error::Invalid(format!("column {name}: {:?} is not a number", r[col])))
        })
        .collect()
}

fn dispatch(command: Command, io: &mut Io) -> Result<i32> {
    match command {
        Command::Validate { bundle } => Ok(run_validate(&bundle, io)),
        Command::Diagnose { bundle, common } => {
            let cfg = common.resolve()?;
            let b = open(&bundle)?;
            let diags = diagnose_bundle(&b, &cfg.analysis, None)?;
            let rows: Vec<DiagnosticRow> = diags
                .iter()
                .flat_map(|d| {
                    d.layers.iter().map(|r| DiagnosticRow {
                        item_id: d.item_id.clone(),
                        layer: r.layer,
                        n_nodes: r.diagnostics.n,
                        dropped: r.dropped.len(),
                        energy: r.diagnostics.energy,
                        spectral_entropy: r.diagnostics.spectral_entropy,
                        hfer: r.diagnostics.hfer,
                        cutoff_k: r.diagnostics.cutoff_k,
                        fiedler: r.diagnostics.fiedler,
                    })
                })
                .collect();
            let fp = cfg.analysis.fingerprint();
            io.wrote(&write_table(&cfg.output_dir, "diagnostics", Some(&fp), &rows)?);
            Ok(0)
        }
        Command::Contrast { bundles, conditions, common } => {
            let cfg = common.resolve()?;
            let bs = open_all(&bundles)?;
            let out = pipeline::contrast(&bs, &conditions.cond_a, &conditions.cond_b, &cfg)?;
            io.warn(&out.warnings);
            let fp = Some(out.fingerprint.as_str());
            let dir = &cfg.output_dir;
            let mut paths = write_table(dir, "languages", fp, &out.languages)?;
            paths.extend(write_table(dir, "voice_types", fp, &out.voice_types)?);
            paths.extend(write_table(dir, "families", fp, &out.families)?);
            paths.extend(write_table(dir, "curves", fp, &out.curves)?);
            paths.extend(write_table(dir, "endpoints", fp, &out.endpoints)?);
            paths.extend(write_table(dir, "exclusions", fp, &out.exclusions)?);
            io.wrote(&paths);
            Ok(0)
        }
        Command::Sweep { bundle, axis, values, conditions, common } => {
            let cfg = common.resolve()?;
            let axis: SweepAxis = axis.parse()?;
            let values = if values.is_empty() { axis.default_values() } else { values };
            let b = open(&bundle)?;
            let out = pipeline::sweep(&b, &conditions.cond_a, &conditions.cond_b, &cfg, axis, &values)?;
            io.warn(&out.warnings);
            let dir = &cfg.output_dir;
            let mut paths = write_table(dir, "sweep", None, &out.rows)?;
            paths.extend(write_table(dir, "sweep_summary", None, &out.summary)?);
            paths.extend(write_table(dir, "sweep_spread", None, &out.spread)?);
            io.wrote(&paths);
            Ok(0)
        }
        Command::AblationSummary { baseline, ablated, conditions, common } => {
            let cfg = common.resolve()?;
            let base = open(&baseline)?;
            let abl = open_all(&ablated)?;
            let (rows, warnings) = pipeline::ablation_summary(&base, &abl, &conditions.cond_a, &conditions.cond_b, &cfg)?;
            io.warn(&warnings);
            let fp = cfg.analysis.fingerprint();
            io.wrote(&write_table(&cfg.output_dir, "ablation_summary", Some(&fp), &rows)?);
            Ok(0)
        }
        Command::Tokstress { bundles, conditions, common } => {
            let cfg = common.resolve()?;
            let bs = open_all(&bundles)?;
            let (items, table) = pipeline::tokstress(&bs, &conditions.cond_a, &conditions.cond_b, &cfg)?;
            let mut paths = write_table(&cfg.output_dir, "tokstress_items", None, &items)?;
            paths.extend(write_table(&cfg.output_dir, "tokstress", Some(&cfg.analysis.fingerprint()), &table)?);
            io.wrote(&paths);
            Ok(0)
        }
        Command::Correlate { table, x, y, by, common } => {
            let cfg = common.resolve()?;
            let (headers, rows) = read_csv_columns(&table)?;
            let (cx, cy) = (column(&headers, &x, &table)?, column(&headers, &y, &table)?);
            let cb = by.as_ref().map(|b| column(&headers, b, &table)).transpose()?;
            let mut groups: Vec<String> = Vec::new();
            for r in &rows {
                let g = cb.map(|c| r[c].clone()).unwrap_or_default();
                if !groups.contains(&g) {
                    groups.push(g);
                }
            }
            let mut out = Vec::new();
            for g in groups {
                let members: Vec<&Vec<String>> = rows.iter().filter(|r| cb.map(|c| r[c] == g).unwrap_or(true)).collect();
                let c = correlations(&numbers(&members, cx, &x)?, &numbers(&members, cy, &y)?, &cfg.stats)
                    .map_err(|e| e.with_context(format!("group {g:?}")))?;
                out.push(CorrelationRow {
                    group: g,
                    x: x.clone(),
                    y: y.clone(),
                    n: c.n,
                    pearson: c.pearson,
                    spearman: c.spearman,
                    pearson_ci_lo: c.pearson_ci.lo,
                    pearson_ci_hi: c.pearson_ci.hi,
                });
            }
            io.wrote(&write_table(&cfg.output_dir, "correlations", None, &out)?);
            Ok(0)
        }
        Command::Rci { bundle, z_table, common } => {
            let cfg = common.resolve()?;
            let rows = match (bundle, z_table) {
                (_, Some(path)) => {
                    let (headers, rows) = read_csv_columns(&path)?;
                    let s = column(&headers, "strategy", &path)?;
                    let [e, n, h, f] = ["z_energy", "z_entropy", "z_hfer", "z_fiedler"];
                    let (e, n, h, f) = (
                        column(&headers, e, &path)?,
                        column(&headers, n, &path)?,
                        column(&headers, h, &path)?,
                        column(&headers, f, &path)?,
                    );
                    let refs: Vec<&Vec<String>> = rows.iter().collect();
                    let (ve, vn, vh, vf) = (
                        numbers(&refs, e, "z_energy")?,
                        numbers(&refs, n, "z_entropy")?,
                        numbers(&refs, h, "z_hfer")?,
                        numbers(&refs, f, "z_fiedler")?,
                    );
                    let z: Vec<(String, ZScoredDiagnostics)> = (0..rows.len())
                        .map(|i| {
                            (
                                rows[i][s].clone(),
                                ZScoredDiagnostics { z_energy: ve[i], z_entropy: vn[i], z_hfer: vh[i], z_fiedler: vf[i] },
                            )
                        })
                        .collect();
                    pipeline::rci_from_z(&z)
                }
                (Some(path), None) => {
                    let b = open(&path)?;
                    let w: Option<LayerWindow> = cfg.windows.first().copied();
                    pipeline::rci_table(&b, &cfg, w.as_ref())?
                }
                (None, None) => return Err(Error::Usage("rci needs a bundle or --z-table".into())),
            };
            for r in &rows {
                let _ = writeln!(io.out, "{}\t{:+.3}", r.strategy, r.rci);
            }
            io.wrote(&write_table(&cfg.output_dir, "rci", None, &rows)?);
            Ok(0)
        }
        Command::Shd { action: ShdAction::Calibrate { bundle, reference, tau, positive, common } } => {
            let cfg = common.resolve()?;
            let b = open(&bundle)?;
            let calib = pipeline::shd_calibrate_bundle(&b, &cfg, &reference, tau, positive.as_deref())?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
            let path = cfg.output_dir.join("shd_calibration.toml");
            calib.save(&path)?;
            io.wrote(&[path]);
            Ok(0)
        }
        Command::Shd { action: ShdAction::Detect { bundle, calibration, common } } => {
            let cfg = common.resolve()?;
            let calib = ShdCalibration::load(&calibration)?;
            let b = open(&bundle)?;
            let rows = pipeline::shd_detect_bundle(&b, &cfg, &calib)?;
            io.wrote(&write_table(&cfg.output_dir, "shd", Some(&calib.fingerprint), &rows)?);
            Ok(0)
        }
        Command::Report { analysis_dir, common } => {
            let cfg = common.resolve()?;
            let out = common.out.clone().unwrap_or_else(|| analysis_dir.clone());
            io.wrote(&report(&analysis_dir, &out, cfg.metric.as_str())?);
            Ok(0)
        }
    }
}

fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Runs the CLI with explicit arguments and output streams; returns the
/// process exit code.
pub fn run_with<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let mut io = Io { out, err };
    let result = thread_count().and_then(|threads| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
        pool.install(|| dispatch(cli.command, &mut io))
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Runs the CLI on the process arguments.
pub fn run() -> i32 {
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    run_with(std::env::args_os(), &mut out, &mut err)
}
