//! Table and figure output: versioned CSV, mirroring JSON, and SVG bar
//! charts with CI whiskers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::ReportRow;

pub const SCHEMA: &str = "spectraprobe-csv v1";

/// Rows are starred when their q-value is strictly below this.
pub const STAR_Q: f64 = 0.05;

#[derive(Serialize, Deserialize)]
struct JsonTable<R> {
    schema: String,
    table: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fingerprint: Option<String>,
    rows: R,
}

/// CSV text: one schema comment line, a header, then the rows.
pub fn to_csv<T: Serialize>(name: &str, fingerprint: Option<&str>, rows: &[T]) -> Result<String> {
    let mut out = format!("# {SCHEMA} table={name}");
    if let Some(fp) = fingerprint {
        write!(out, " fingerprint={fp}").unwrap();
    }
    out.push('\n');
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Invalid(format!("table {name}: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("table {name}: {e}")))?;
    out.push_str(std::str::from_utf8(&bytes).expect("csv output is UTF-8"));
    Ok(out)
}

pub fn to_json<T: Serialize>(name: &str, fingerprint: Option<&str>, rows: &[T]) -> Result<String> {
    let t = JsonTable {
        schema: SCHEMA.into(),
        table: name.into(),
        fingerprint: fingerprint.map(String::from),
        rows,
    };
    Ok(serde_json::to_string_pretty(&t).map_err(|e| Error::Invalid(e.to_string()))? + "\n")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<dir>/<name>.csv` and `<dir>/<name>.json`.
pub fn write_table<T: Serialize>(dir: &Path, name: &str, fingerprint: Option<&str>, rows: &[T]) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join(format!("{name}.csv"));
    let json_path = dir.join(format!("{name}.json"));
    write_file(&csv_path, &to_csv(name, fingerprint, rows)?)?;
    write_file(&json_path, &to_json(name, fingerprint, rows)?)?;
    Ok(vec![csv_path, json_path])
}

/// Reads the rows of `<dir>/<name>.json`.
pub fn read_table<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let path = dir.join(format!("{name}.json"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let t: JsonTable<Vec<T>> = serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    if t.schema != SCHEMA {
        return Err(Error::Manifest(format!("{}: schema {:?}, expected {SCHEMA:?}", path.display(), t.schema)));
    }
    Ok(t.rows)
}

/// Header and rows of a table written by [`write_table`], from either the
/// `.csv` or the `.json` file.
pub fn read_csv_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        return json_columns(path, &text);
    }
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r
        .headers()
        .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|r| r.iter().map(String::from).collect())
                .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
        })
        .collect::<Result<_>>()?;
    Ok((headers, rows))
}

fn json_columns(path: &Path, text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let bad = |e: String| Error::Usage(format!("{}: {e}", path.display()));
    let t: JsonTable<Vec<serde_json::Map<String, serde_json::Value>>> =
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let headers: Vec<String> = t.rows.first().map(|r| r.keys().cloned().collect()).unwrap_or_default();
    let rows = t
        .rows
        .iter()
        .map(|r| {
            headers
                .iter()
                .map(|h| match r.get(h) {
                    Some(serde_json::Value::String(s)) => Ok(s.clone()),
                    Some(serde_json::Value::Null) => Ok(String::new()),
                    Some(v) => Ok(v.to_string()),
                    None => Err(bad(format!("row without column {h:?}"))),
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((headers, rows))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bar {
    pub label: String,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub g_trim: Option<f64>,
    pub star: bool,
}

impl From<&ReportRow> for Bar {
    fn from(r: &ReportRow) -> Self {
        Bar {
            label: if r.language.is_empty() { r.voice_type.clone() } else { r.language.clone() },
            mean: r.mean,
            lo: r.ci_lo,
            hi: r.ci_hi,
            g_trim: r.g_trim,
            star: r.q_fdr < STAR_Q,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Bar chart of means with CI whiskers, `g_trim` above each bar and a star
/// for q < 0.05. Output depends only on the input.
pub fn bar_chart_svg(title: &str, y_label: &str, bars: &[Bar]) -> String {
    const LEFT: f64 = 70.0;
    const TOP: f64 = 50.0;
    const PLOT_H: f64 = 240.0;
    const SLOT: f64 = 46.0;
    let width = LEFT + 20.0 + SLOT * bars.len().max(1) as f64;
    let height = TOP + PLOT_H + 70.0;

    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let mut ymin = bars.iter().map(|b| finite(b.lo).min(finite(b.mean))).fold(0.0f64, f64::min);
    let mut ymax = bars.iter().map(|b| finite(b.hi).max(finite(b.mean))).fold(0.0f64, f64::max);
    if ymax - ymin < 1e-12 {
        ymin -= 1.0;
        ymax += 1.0;
    }
    let pad = 0.12 * (ymax - ymin);
    let (ymin, ymax) = (ymin - if ymin < 0.0 { pad } else { 0.0 }, ymax + pad);
    let y = |v: f64| TOP + PLOT_H * (ymax - finite(v)) / (ymax - ymin);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{:.1}" y="22" font-size="14" text-anchor="middle">{}</text>"#, width / 2.0, escape(title)).unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>"#,
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0,
        escape(y_label)
    )
    .unwrap();
    for k in 0..=4 {
        let v = ymin + (ymax - ymin) * k as f64 / 4.0;
        writeln!(
            s,
            r##"<line x1="{LEFT:.1}" y1="{0:.2}" x2="{1:.1}" y2="{0:.2}" stroke="#ddd"/><text x="{2:.1}" y="{3:.2}" text-anchor="end">{4:.3}</text>"##,
            y(v),
            width - 10.0,
            LEFT - 6.0,
            y(v) + 4.0,
            v
        )
        .unwrap();
    }
    writeln!(s, r##"<line x1="{LEFT:.1}" y1="{0:.2}" x2="{1:.1}" y2="{0:.2}" stroke="#000"/>"##, y(0.0), width - 10.0).unwrap();

    for (i, b) in bars.iter().enumerate() {
        let cx = LEFT + SLOT * (i as f64 + 0.5);
        let (y0, ym) = (y(0.0), y(b.mean));
        let fill = if b.mean < 0.0 { "#c0504d" } else { "#4f81bd" };
        writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            cx - SLOT * 0.3,
            y0.min(ym),
            SLOT * 0.6,
            (y0 - ym).abs()
        )
        .unwrap();
        let (ylo, yhi) = (y(b.lo), y(b.hi));
        writeln!(
            s,
            r##"<path d="M{cx:.2} {ylo:.2}V{yhi:.2}M{0:.2} {ylo:.2}H{1:.2}M{0:.2} {yhi:.2}H{1:.2}" stroke="#000" fill="none"/>"##,
            cx - 6.0,
            cx + 6.0
        )
        .unwrap();
        let top = ylo.min(yhi).min(ym) - 6.0;
        if let Some(g) = b.g_trim {
            writeln!(s, r#"<text x="{cx:.2}" y="{top:.2}" text-anchor="middle" font-size="9">{g:.2}</text>"#).unwrap();
        }
        if b.star {
            writeln!(s, r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-size="14">*</text>"#, top - 10.0).unwrap();
        }
        writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + PLOT_H + 18.0,
            escape(&b.label)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{LEFT:.1}" y="{:.1}" font-size="9">Bars: mean with 95% bootstrap CI. Numbers: g_trim. * BH-FDR q &lt; 0.05.</text>"#,
        height - 12.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

fn file_stem(parts: &[&str]) -> String {
    parts
        .iter()
        .map(|p| p.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect::<String>())
        .collect::<Vec<_>>()
        .join("_")
}

/// Charts and a text summary from a contrast output directory. Returns the
/// written paths in a fixed order.
pub fn report(analysis_dir: &Path, out_dir: &Path, metric: &str) -> Result<Vec<PathBuf>> {
    let languages: Vec<ReportRow> = read_table(analysis_dir, "languages")?;
    let voices: Vec<ReportRow> = read_table(analysis_dir, "voice_types")?;
    let families: Vec<ReportRow> = read_table(analysis_dir, "families").unwrap_or_default();
    let mut written = Vec::new();
    let mut summary = String::new();

    let mut keys: Vec<(String, String)> = Vec::new();
    for r in languages.iter().filter(|r| r.metric == metric) {
        let k = (r.family.clone(), r.window.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    if keys.is_empty() {
        return Err(Error::Usage(format!("no {metric} rows in {}", analysis_dir.display())));
    }
    for (family, window) in &keys {
        let select = |rows: &[ReportRow]| -> Vec<Bar> {
            rows.iter()
                .filter(|r| &r.family == family && &r.window == window && r.metric == metric)
                .map(Bar::from)
                .collect()
        };
        for (kind, rows) in [("languages", &languages), ("voice_types", &voices)] {
            let bars = select(rows);
            if bars.is_empty() {
                continue;
            }
            let title = format!("{family}: {window} window, delta {metric} by {}", kind.replace('_', " "));
            let path = out_dir.join(format!("{}.svg", file_stem(&[family, window, metric, kind])));
            write_file(&path, &bar_chart_svg(&title, &format!("delta {metric}"), &bars))?;
            written.push(path);
        }
        let lang: Vec<&ReportRow> = languages
            .iter()
            .filter(|r| &r.family == family && &r.window == window && r.metric == metric)
            .collect();
        let sig: Vec<String> = lang
            .iter()
            .filter(|r| r.q_fdr < STAR_Q)
            .map(|r| format!("{} ({:+.4}, q={:.4})", r.language, r.mean, r.q_fdr))
            .collect();
        writeln!(summary, "{family} / {window} / {metric}: {} languages", lang.len()).unwrap();
        if let Some(f) = families.iter().find(|r| &r.family == family && &r.window == window && r.metric == metric) {
            writeln!(summary, "  family mean {:+.4} [{:+.4}, {:+.4}], p={:.4}", f.mean, f.ci_lo, f.ci_hi, f.p_perm).unwrap();
        }
        writeln!(summary, "  q < {STAR_Q}: {}", if sig.is_empty() { "none".to_string() } else { sig.join(", ") }).unwrap();
    }
    let path = out_dir.join("summary.txt");
    write_file(&path, &summary)?;
    written.push(path);
    Ok(written)
}
