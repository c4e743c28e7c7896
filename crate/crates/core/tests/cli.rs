use std::fs;
use std::path::Path;

use spectraprobe::analysis::AnalysisConfig;
use spectraprobe::cli::run_with;
use spectraprobe::graph::LaplacianKind;
use spectraprobe::synthetic::{write_planted, PlantedSpec};

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["spectraprobe"];
    argv.extend_from_slice(args);
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn bundle(dir: &Path) -> String {
    let p = dir.join("bundle");
    write_planted(&p, &PlantedSpec::small(3, 4, 6, 21)).unwrap();
    p.display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    assert_eq!(run(&["validate", &b]).0, 0);
    assert_eq!(run(&["validate", &s(&dir.path().join("nope"))]).0, 2);

    let attn = fs::read_dir(dir.path().join("bundle/tensors/de-active-00")).unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with("attn.spct"))
        .unwrap();
    let mut bytes = fs::read(&attn).unwrap();
    let n = bytes.len();
    bytes.truncate(n - 4);
    fs::write(&attn, bytes).unwrap();
    let (code, out, _) = run(&["validate", &b]);
    assert_eq!(code, 1);
    assert!(out.contains("de-active-00"), "{out}");
    assert_eq!(run(&["contrast", &b, "--out", &s(&dir.path().join("c"))]).0, 1);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert_eq!(run(&["contrast", &b, "--hfer-c", "0.2", "--hfer-k", "3"]).0, 2);
    assert_eq!(run(&["contrast", &b, "--laplacian", "magnetic", "--theta", "9"]).0, 2);
    assert_eq!(run(&["contrast", &b, "--window", "5:2"]).0, 2);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "lapalcian = \"rw\"\n").unwrap();
    assert_eq!(run(&["diagnose", &b, "--config", &s(&cfg)]).0, 2);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn contrast_tables_mirror() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    let out = dir.path().join("c");
    let (code, _, err) = run(&["contrast", &b, "--boot", "200", "--perm", "200", "--out", &s(&out)]);
    assert_eq!(code, 0, "{err}");
    for name in ["languages", "voice_types", "families", "curves", "endpoints", "exclusions"] {
        let csv = fs::read_to_string(out.join(format!("{name}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with(&format!("# spectraprobe-csv v1 table={name}")));
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(format!("{name}.json"))).unwrap()).unwrap();
        let rows = json["rows"].as_array().unwrap();
        assert_eq!(rows.len(), lines.count(), "{name}");
        for r in rows {
            let keys: Vec<&str> = r.as_object().unwrap().keys().map(String::as_str).collect();
            let mut h = header.clone();
            h.sort();
            let mut k = keys.clone();
            k.sort();
            assert_eq!(h, k, "{name}");
        }
    }
    let (code, _, _) = run(&["report", &s(&out), "--out", &s(&dir.path().join("r"))]);
    assert_eq!(code, 0);
    assert!(dir.path().join("r/summary.txt").exists());
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "laplacian = \"combinatorial\"\nlayers = [1, 2]\n").unwrap();
    let fp = |kind| AnalysisConfig { laplacian: kind, layers: Some(vec![1, 2]), ..Default::default() }.fingerprint();

    let out = dir.path().join("d1");
    assert_eq!(run(&["diagnose", &b, "--config", &s(&cfg), "--out", &s(&out)]).0, 0);
    let text = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(text.lines().next().unwrap().ends_with(&fp(LaplacianKind::Combinatorial)));

    let out = dir.path().join("d2");
    assert_eq!(run(&["diagnose", &b, "--config", &s(&cfg), "--laplacian", "symmetric", "--out", &s(&out)]).0, 0);
    let text = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert!(text.lines().next().unwrap().ends_with(&fp(LaplacianKind::Symmetric)));
    assert_eq!(text.lines().count(), 2 + 24 * 2);
}

#[test]
fn degenerate_analysis_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.csv");
    fs::write(&t, "# spectraprobe-csv v1 table=t\nx,y\n1,2\n1,3\n1,4\n").unwrap();
    let (code, _, err) = run(&["correlate", &s(&t), "--x", "x", "--y", "y", "--out", &s(&dir.path().join("k"))]);
    assert_eq!(code, 1, "{err}");
    assert_eq!(run(&["correlate", &s(&t), "--x", "x", "--y", "nope"]).0, 2);
}

#[test]
fn commands_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    let o = |n: &str| s(&dir.path().join(n));
    let fast = ["--boot", "100", "--perm", "100"];
    let with = |mut v: Vec<String>| {
        v.extend(fast.iter().map(|x| x.to_string()));
        v
    };
    let go = |v: Vec<String>| {
        let refs: Vec<&str> = v.iter().map(String::as_str).collect();
        let (code, _, err) = run(&refs);
        assert_eq!(code, 0, "{v:?}: {err}");
    };
    go(with(vec!["sweep".into(), b.clone(), "--axis".into(), "hfer_cutoff".into(), "--out".into(), o("s")]));
    go(with(vec!["ablation-summary".into(), b.clone(), b.clone(), "--out".into(), o("a")]));
    go(with(vec!["tokstress".into(), b.clone(), "--out".into(), o("t")]));
    go(with(vec![
        "correlate".into(), format!("{}/tokstress.json", o("t")), "--x".into(), "phi_mean".into(),
        "--y".into(), "endpoint".into(), "--out".into(), o("k"),
    ]));
    go(vec!["rci".into(), b.clone(), "--out".into(), o("r")]);
    go(vec!["shd".into(), "calibrate".into(), b.clone(), "--reference".into(), "active".into(), "--tau".into(), "2".into(), "--out".into(), o("h")]);
    go(vec![
        "shd".into(), "detect".into(), b.clone(), "--calibration".into(), format!("{}/shd_calibration.toml", o("h")),
        "--out".into(), o("h2"),
    ]);
    // A calibration from another configuration is refused.
    let (code, _, _) = run(&[
        "shd", "detect", &b, "--calibration", &format!("{}/shd_calibration.toml", o("h")), "--laplacian", "symmetric",
    ]);
    assert_eq!(code, 1);
    let abl = fs::read_to_string(dir.path().join("a/ablation_summary.csv")).unwrap();
    // Six layers: no late window, the others show no change.
    let cells: Vec<&str> = abl.lines().nth(2).unwrap().split(',').skip(4).collect();
    assert_eq!(cells, ["0.0", "0.0", "", "0.0"]);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let b = bundle(dir.path());
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        std::env::set_var("SPECTRAPROBE_THREADS", threads);
        let out = dir.path().join(format!("c{threads}"));
        assert_eq!(run(&["contrast", &b, "--boot", "200", "--perm", "200", "--out", &s(&out)]).0, 0);
        outs.push(fs::read(out.join("languages.csv")).unwrap());
    }
    std::env::remove_var("SPECTRAPROBE_THREADS");
    assert_eq!(outs[0], outs[1]);
}
