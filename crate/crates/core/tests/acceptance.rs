//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use spectraprobe::bundle::read_bundle;
use spectraprobe::config::RunConfig;
use spectraprobe::graph::{build_laplacian, LaplacianKind, Operator};
use spectraprobe::pipeline::{contrast, sweep, ContrastOutput, SweepAxis};
use spectraprobe::report::{report, write_table};
use spectraprobe::scores::{rci, ZScoredDiagnostics};
use spectraprobe::spectral::{
    dirichlet_energy, fiedler, full_spectrum, hfer_at, layer_diagnostics, modal_energies, HferCutoff,
};
use spectraprobe::stats::{bh_fdr, bootstrap_ci, paired_permutation_test, StatsConfig};
use spectraprobe::synthetic::{write_planted, PlantedSpec};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(start: Instant, limit: Duration) -> Outcome {
    let t = start.elapsed();
    check(t < limit, format!("{:.2}s (limit {}s)", t.as_secs_f64(), limit.as_secs()))
}

/// Symmetric weights with a ring backbone (connected) and random chords.
fn random_graph(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let j = (i + 1) % n;
        let v = rng.random_range(0.1..1.0);
        w[(i, j)] = v;
        w[(j, i)] = v;
        for j in i + 2..n {
            if rng.random_bool(0.3) {
                let v = rng.random_range(0.0..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    w
}

fn random_signal(rng: &mut impl Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

fn closed_form() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for n in 3..=12 {
        let complete = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        let cycle = DMatrix::from_fn(n, n, |i, j| if (i + 1) % n == j || (j + 1) % n == i { 1.0 } else { 0.0 });
        let path = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 });
        let nf = n as f64;
        for (w, want) in [
            (complete, nf),
            (cycle, 2.0 - 2.0 * (2.0 * PI / nf).cos()),
            (path, 2.0 - 2.0 * (PI / nf).cos()),
        ] {
            let g = build_laplacian(&w, LaplacianKind::Combinatorial).map_err(|e| e.to_string())?;
            let got = fiedler(&g).map_err(|e| e.to_string())?.value;
            worst = worst.max((got - want).abs());
        }
    }
    let t = within(start, Duration::from_secs(1))?;
    check(worst < 1e-8, format!("max error {worst:.1e}, {t}"))
}

fn similarity() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(8..=128);
        let w = random_graph(&mut rng, n);
        let rw = fiedler(&build_laplacian(&w, LaplacianKind::RandomWalk).unwrap()).unwrap().value;
        let sym = fiedler(&build_laplacian(&w, LaplacianKind::Symmetric).unwrap()).unwrap().value;
        // Independent route: eigenvalues of the non-symmetric I - D^-1 W.
        let d: Vec<f64> = w.row_iter().map(|r| r.sum()).collect();
        let lrw = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - w[(i, j)] / d[i]);
        let mut ev: Vec<f64> = lrw.complex_eigenvalues().iter().map(|c| c.re).collect();
        ev.sort_by(f64::total_cmp);
        worst = worst.max((rw - sym).abs()).max((rw - ev[1]).abs());
    }
    check(worst < 1e-8, format!("max |rw - sym| or |rw - eig(I - D^-1 W)| = {worst:.1e}"))
}

fn magnetic() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut entry: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    for _ in 0..50 {
        let n = rng.random_range(4..=24);
        let w = random_graph(&mut rng, n);
        let comb = build_laplacian(&w, LaplacianKind::Combinatorial).unwrap().defining_matrix();
        let g = build_laplacian(&w, LaplacianKind::magnetic(1e-6).unwrap()).unwrap();
        let Operator::Hermitian { re, im } = g.operator() else { return Err("magnetic is not Hermitian".into()) };
        entry = entry.max((re - &comb).amax()).max(im.amax());

        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
        for theta in [0.1, 0.2, 0.5] {
            let g = build_laplacian(&a, LaplacianKind::magnetic(theta).unwrap()).unwrap();
            let ev = g.operator().real_symmetric().symmetric_eigenvalues();
            min_eig = min_eig.min(ev.min());
        }
    }
    check(
        entry < 1e-5 && min_eig >= -1e-10,
        format!("max entry gap at theta=1e-6 {entry:.1e}, min eigenvalue {min_eig:.1e}"),
    )
}

/// Symmetric doubly-stochastic matrix by alternating symmetric scaling.
fn doubly_stochastic(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.05..1.0));
    w = (&w + w.transpose()) * 0.5;
    for _ in 0..2000 {
        let s: DVector<f64> = DVector::from_iterator(n, w.row_iter().map(|r| 1.0 / f64::sqrt(r.sum())));
        w = DMatrix::from_fn(n, n, |i, j| w[(i, j)] * s[i] * s[j]);
    }
    (&w + w.transpose()) * 0.5
}

fn directed() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut row_err: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(4..=40);
        let a = doubly_stochastic(&mut rng, n);
        row_err = row_err.max(a.row_iter().map(|r| (r.sum() - 1.0_f64).abs()).fold(0.0, f64::max));
        let d = fiedler(&build_laplacian(&a, LaplacianKind::DirectedRw).unwrap()).unwrap().value;
        let r = fiedler(&build_laplacian(&a, LaplacianKind::RandomWalk).unwrap()).unwrap().value;
        worst = worst.max((d - r).abs());
    }
    check(worst < 1e-10, format!("max |directed_rw - random_walk| {worst:.1e} (row-sum error {row_err:.0e})"))
}

fn energy() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=16);
        let d = rng.random_range(1..=6);
        let w = random_graph(&mut rng, n);
        let x = random_signal(&mut rng, n, d);
        let g = build_laplacian(&w, LaplacianKind::Combinatorial).unwrap();
        let got = dirichlet_energy(&g, &x).unwrap();
        let mut brute = 0.0;
        for i in 0..n {
            for j in 0..n {
                brute += 0.5 * w[(i, j)] * (x.row(i) - x.row(j)).norm_squared();
            }
        }
        worst = worst.max((got - brute).abs() / brute.abs().max(1e-300));
    }
    check(worst < 1e-10, format!("max relative error {worst:.1e}"))
}

fn bounds() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    for case in 0..100 {
        let n = rng.random_range(3..=32);
        let w = random_graph(&mut rng, n);
        let kind = if case % 2 == 0 { LaplacianKind::Combinatorial } else { LaplacianKind::RandomWalk };
        let g = build_laplacian(&w, kind).unwrap();
        let x = random_signal(&mut rng, n, 4);
        let d = layer_diagnostics(&g, &x, HferCutoff::default()).unwrap();
        if !(d.spectral_entropy >= 0.0 && d.spectral_entropy <= (n as f64).ln() + 1e-12) {
            failures.push(format!("case {case}: SE {}", d.spectral_entropy));
        }
        if !(0.0..=1.0).contains(&d.hfer) {
            failures.push(format!("case {case}: HFER {}", d.hfer));
        }
        let e = modal_energies(&full_spectrum(&g).unwrap(), &x).unwrap();
        let tail: Vec<f64> = (1..n).map(|k| hfer_at(&e, k).unwrap()).collect();
        if tail.windows(2).any(|p| p[1] > p[0] + 1e-15) {
            failures.push(format!("case {case}: HFER increases in K"));
        }
        let c = DMatrix::from_element(n, 3, 1.7);
        let z = layer_diagnostics(&g, &c, HferCutoff::default()).unwrap();
        if z.energy.abs() > 1e-10 || z.spectral_entropy.abs() > 1e-8 || z.hfer.abs() > 1e-10 {
            failures.push(format!("case {case}: constant triple ({}, {}, {})", z.energy, z.spectral_entropy, z.hfer));
        }
    }
    check(failures.is_empty(), if failures.is_empty() { "100 graphs".into() } else { failures.join("; ") })
}

fn rci_rows() -> Outcome {
    let rows = [
        ("CoT", [0.790, 0.898, -0.744, 0.455], 1.307),
        ("Standard", [0.596, 0.127, -0.921, 1.286], 1.738),
        ("CoD", [-1.708, -1.664, 1.611, -1.429], -2.996),
    ];
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, [z_energy, z_entropy, z_hfer, z_fiedler], want) in rows {
        let got = rci(&ZScoredDiagnostics { z_energy, z_entropy, z_hfer, z_fiedler });
        ok &= (got - want).abs() <= 0.001;
        detail.push(format!("{name} {got:+.3}"));
    }
    check(ok, detail.join(", "))
}

fn bh_example() -> Outcome {
    let r = bh_fdr(&[0.01, 0.02, 0.04, 0.5], 0.05);
    let n = r.reject.iter().filter(|&&x| x).count();
    check(r.reject == [true, true, false, false], format!("{n} rejected, q = {:?}", r.q_values))
}

/// Kolmogorov-Smirnov p-value against U(0, 1), asymptotic series.
fn ks_uniform(mut p: Vec<f64>) -> (f64, f64) {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let d = p
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).max((i + 1) as f64 / n - v))
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let pv: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (d, pv.clamp(0.0, 1.0))
}

fn permutation() -> Outcome {
    let start = Instant::now();
    let exact = paired_permutation_test(&[0.3, 1.1, 0.7], 10_000, 0, 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let p: Vec<f64> = (0..200u64)
        .map(|k| {
            let deltas: Vec<f64> = (0..15).map(|_| rng.sample(StandardNormal)).collect();
            paired_permutation_test(&deltas, 2000, 99, k).unwrap()
        })
        .collect();
    let (d, pv) = ks_uniform(p);
    let t = within(start, Duration::from_secs(30))?;
    check(exact == 0.25 && pv > 0.01, format!("n=3 p={exact}, KS D={d:.3} p={pv:.3}, {t}"))
}

fn coverage() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let cfg = StatsConfig { seed: 8, ..StatsConfig::default() };
    let normal = rand_distr::Normal::new(1.5, 2.0).unwrap();
    let mut hits = 0;
    for trial in 0..500u64 {
        let x: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
        let ci = bootstrap_ci(&x, &cfg, trial).map_err(|e| e.to_string())?;
        if ci.lo <= 1.5 && 1.5 <= ci.hi {
            hits += 1;
        }
    }
    let rate = hits as f64 / 500.0;
    let t = within(start, Duration::from_secs(60))?;
    check((0.92..=0.98).contains(&rate), format!("coverage {:.1}%, {t}", 100.0 * rate))
}

fn early_fiedler(out: &ContrastOutput) -> Vec<(&str, f64, bool)> {
    out.languages
        .iter()
        .filter(|r| r.window == "early" && r.metric == "fiedler")
        .map(|r| (r.language.as_str(), r.mean, r.significant))
        .collect()
}

fn planted(root: &Path) -> Outcome {
    let start = Instant::now();
    let dir = root.join("planted");
    write_planted(&dir, &PlantedSpec::voice_benchmark(17)).map_err(|e| e.to_string())?;
    let bundle = read_bundle(&dir).map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let out = contrast(std::slice::from_ref(&bundle), "active", "passive", &cfg).map_err(|e| e.to_string())?;
    let rows = early_fiedler(&out);
    let en = rows.iter().find(|r| r.0 == "en").ok_or("no en row")?.1;
    let sig: Vec<&str> = rows.iter().filter(|r| r.2).map(|r| r.0).collect();

    let mut en_sweep = Vec::new();
    for (axis, values) in [
        (SweepAxis::Window, vec!["1:4".to_string(), "3:6".to_string()]),
        (SweepAxis::Laplacian, SweepAxis::Laplacian.default_values()),
    ] {
        let s = sweep(&bundle, "active", "passive", &cfg, axis, &values).map_err(|e| e.to_string())?;
        for r in s.rows.iter().filter(|r| r.language == "en") {
            en_sweep.push((format!("{}={}", r.axis, r.value), r.mean));
        }
    }
    let stable = !en_sweep.is_empty() && en_sweep.iter().all(|(_, m)| *m < 0.0);
    let t = within(start, Duration::from_secs(300))?;
    let worst = en_sweep.iter().map(|(_, m)| *m).fold(f64::NEG_INFINITY, f64::max);
    check(
        (-0.5..=-0.3).contains(&en) && sig == ["en"] && stable,
        format!(
            "EN {en:+.4}, significant {sig:?}, EN negative in {}/{} sweep cells (max {worst:+.4}), {t}",
            en_sweep.iter().filter(|(_, m)| *m < 0.0).count(),
            en_sweep.len()
        ),
    )
}

fn files_of(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism(root: &Path) -> Outcome {
    let dir = root.join("det-bundle");
    write_planted(&dir, &PlantedSpec::small(6, 6, 6, 4)).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for k in 0..2 {
        let bundle = read_bundle(&dir).map_err(|e| e.to_string())?;
        let out_dir = root.join(format!("det-{k}"));
        let out = contrast(&[bundle], "active", "passive", &RunConfig::default()).map_err(|e| e.to_string())?;
        let fp = Some(out.fingerprint.as_str());
        let go = || -> spectraprobe::Result<()> {
            write_table(&out_dir, "languages", fp, &out.languages)?;
            write_table(&out_dir, "voice_types", fp, &out.voice_types)?;
            write_table(&out_dir, "families", fp, &out.families)?;
            write_table(&out_dir, "curves", fp, &out.curves)?;
            report(&out_dir, &out_dir, "fiedler")?;
            Ok(())
        };
        go().map_err(|e| e.to_string())?;
        runs.push(files_of(&out_dir));
    }
    let kinds = |ext: &str| runs[0].iter().filter(|(n, _)| n.ends_with(ext)).count();
    let (csv, json, svg) = (kinds(".csv"), kinds(".json"), kinds(".svg"));
    check(
        runs[0] == runs[1] && csv > 0 && json > 0 && svg > 0,
        format!("{} files compared ({csv} csv, {json} json, {svg} svg)", runs[0].len()),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("closed-form lambda2 for K_n, C_n, P_n", Box::new(closed_form)),
        ("random_walk = symmetric lambda2 on 100 graphs", Box::new(similarity)),
        ("magnetic reduction and PSD", Box::new(magnetic)),
        ("directed_rw reduction on symmetric stochastic input", Box::new(directed)),
        ("energy matches pairwise sum on 200 instances", Box::new(energy)),
        ("diagnostic bounds on 100 graphs", Box::new(bounds)),
        ("RCI reference rows", Box::new(rci_rows)),
        ("BH worked example", Box::new(bh_example)),
        ("permutation exactness and null calibration", Box::new(permutation)),
        ("bootstrap percentile coverage", Box::new(coverage)),
        ("planted effect end to end", Box::new(move || planted(root))),
        ("byte-identical outputs across runs", Box::new(move || determinism(root))),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
