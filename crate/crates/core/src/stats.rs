//! Resampling statistics over endpoint collections.
//!
//! Every random draw comes from a ChaCha20 stream keyed by `seed ^ group`,
//! with a fixed sub-stream per procedure, so results for one group never
//! depend on which other groups were analyzed or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapKind {
    #[default]
    Percentile,
    Bca,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub bootstrap_resamples: usize,
    pub bootstrap_kind: BootstrapKind,
    pub permutation_shuffles: usize,
    pub fdr_q: f64,
    pub winsor_fraction: f64,
    pub trim_fraction: f64,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            bootstrap_resamples: 2000,
            bootstrap_kind: BootstrapKind::Percentile,
            permutation_shuffles: 10_000,
            fdr_q: 0.05,
            winsor_fraction: 0.01,
            trim_fraction: 0.20,
            seed: 0,
        }
    }
}

impl StatsConfig {
    /// BCa intervals from 1000 resamples.
    pub fn bca() -> Self {
        StatsConfig {
            bootstrap_resamples: 1000,
            bootstrap_kind: BootstrapKind::Bca,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        for (name, f) in [("winsor_fraction", self.winsor_fraction), ("trim_fraction", self.trim_fraction)] {
            if !(0.0..0.5).contains(&f) {
                return Err(Error::Usage(format!("{name} must lie in [0, 0.5), got {f}")));
            }
        }
        if !(self.fdr_q > 0.0 && self.fdr_q <= 1.0) {
            return Err(Error::Usage(format!("fdr_q must lie in (0, 1], got {}", self.fdr_q)));
        }
        if self.bootstrap_resamples == 0 || self.permutation_shuffles == 0 {
            return Err(Error::Usage("resample and shuffle counts must be at least 1".into()));
        }
        Ok(())
    }
}

const STREAM_BOOTSTRAP: u64 = 0;
const STREAM_PERMUTATION: u64 = 1;
const STREAM_CORRELATION: u64 = 2;

/// Generator for one (seed, group, procedure) triple.
pub fn stream_rng(seed: u64, group: u64, procedure: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ group);
    rng.set_stream(procedure);
    rng
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    quantile_sorted(&sorted(values), p)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Set when fewer than two values were available.
    pub degenerate: bool,
}

/// Means of `resamples` bootstrap resamples, in draw order.
pub fn bootstrap_means(values: &[f64], resamples: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = values.len();
    (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect()
}

/// Central percentile interval of a bootstrap distribution.
pub fn percentile_interval(dist: &[f64], level: f64) -> (f64, f64) {
    let s = sorted(dist);
    let alpha = (1.0 - level) / 2.0;
    (quantile_sorted(&s, alpha), quantile_sorted(&s, 1.0 - alpha))
}

fn bca_interval(values: &[f64], dist: &[f64], level: f64) -> (f64, f64) {
    let normal = Normal::standard();
    let b = dist.len() as f64;
    let theta = mean(values);
    let below = dist.iter().filter(|&&t| t < theta).count() as f64;
    let prop = (below / b).clamp(0.5 / b, 1.0 - 0.5 / b);
    let z0 = normal.inverse_cdf(prop);

    let n = values.len();
    let total: f64 = values.iter().sum();
    let jack: Vec<f64> = values.iter().map(|v| (total - v) / (n - 1) as f64).collect();
    let jbar = mean(&jack);
    let num: f64 = jack.iter().map(|j| (jbar - j).powi(3)).sum();
    let den: f64 = jack.iter().map(|j| (jbar - j).powi(2)).sum();
    let accel = if den > 0.0 { num / (6.0 * den.powf(1.5)) } else { 0.0 };

    let adjust = |q: f64| {
        let z = normal.inverse_cdf(q);
        normal.cdf(z0 + (z0 + z) / (1.0 - accel * (z0 + z)))
    };
    let alpha = (1.0 - level) / 2.0;
    let s = sorted(dist);
    (quantile_sorted(&s, adjust(alpha)), quantile_sorted(&s, adjust(1.0 - alpha)))
}

/// 95% bootstrap interval for the mean.
pub fn bootstrap_ci(values: &[f64], config: &StatsConfig, group: u64) -> Result<Interval> {
    bootstrap_ci_level(values, config, group, 0.95)
}

pub fn bootstrap_ci_level(values: &[f64], config: &StatsConfig, group: u64, level: f64) -> Result<Interval> {
    if values.is_empty() {
        return Err(Error::Invalid("bootstrap of an empty sample".into()));
    }
    if values.len() == 1 {
        return Ok(Interval { lo: values[0], hi: values[0], degenerate: true });
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok(Interval { lo: values[0], hi: values[0], degenerate: false });
    }
    let mut rng = stream_rng(config.seed, group, STREAM_BOOTSTRAP);
    let dist = bootstrap_means(values, config.bootstrap_resamples, &mut rng);
    let (lo, hi) = match config.bootstrap_kind {
        BootstrapKind::Percentile => percentile_interval(&dist, level),
        BootstrapKind::Bca => bca_interval(values, &dist, level),
    };
    Ok(Interval { lo, hi, degenerate: false })
}

fn abs_mean(values: &[f64], signs: impl Fn(usize) -> bool) -> f64 {
    let s: f64 = values
        .iter()
        .enumerate()
        .map(|(i, v)| if signs(i) { -v } else { *v })
        .sum();
    (s / values.len() as f64).abs()
}

fn at_least(stat: f64, observed: f64) -> bool {
    stat >= observed - 1e-12 * observed.abs()
}

/// Two-sided sign-flip test of a zero mean, statistic `|mean|`.
///
/// All `2ⁿ` sign patterns are enumerated when `2ⁿ ≤ shuffles`, giving
/// `p = #{|mean*| ≥ |mean|} / 2ⁿ`; otherwise
/// `p = (1 + #{|mean*| ≥ |mean|}) / (1 + shuffles)`.
pub fn paired_permutation_test(deltas: &[f64], shuffles: usize, seed: u64, group: u64) -> Result<f64> {
    let n = deltas.len();
    if n == 0 {
        return Err(Error::Invalid("permutation test of an empty sample".into()));
    }
    let observed = abs_mean(deltas, |_| false);
    if n < 63 && (1u64 << n) <= shuffles as u64 {
        let total = 1u64 << n;
        let count = (0..total)
            .filter(|&mask| at_least(abs_mean(deltas, |i| mask >> i & 1 == 1), observed))
            .count();
        return Ok(count as f64 / total as f64);
    }
    let mut rng = stream_rng(seed, group, STREAM_PERMUTATION);
    let mut flips = vec![false; n];
    let mut count = 0usize;
    for _ in 0..shuffles {
        for f in flips.iter_mut() {
            *f = rng.random::<bool>();
        }
        if at_least(abs_mean(deltas, |i| flips[i]), observed) {
            count += 1;
        }
    }
    Ok((1 + count) as f64 / (1 + shuffles) as f64)
}

/// Sign-flip test over language-level contrasts (one value per language).
pub fn signflip_group_test(contrasts: &[f64], shuffles: usize, seed: u64, group: u64) -> Result<f64> {
    paired_permutation_test(contrasts, shuffles, seed, group)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdrResult {
    pub reject: Vec<bool>,
    pub q_values: Vec<f64>,
}

/// Benjamini–Hochberg step-up at level `q`. Outputs follow input order.
pub fn bh_fdr(p_values: &[f64], q: f64) -> FdrResult {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));

    let mut cutoff = 0;
    for (rank, &i) in order.iter().enumerate() {
        if p_values[i] <= (rank + 1) as f64 * q / m as f64 {
            cutoff = rank + 1;
        }
    }
    let mut q_values = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(p_values[i] * m as f64 / (rank + 1) as f64);
        q_values[i] = running.min(1.0);
    }
    let mut reject = vec![false; m];
    for &i in &order[..cutoff] {
        reject[i] = true;
    }
    FdrResult { reject, q_values }
}

/// Values clamped to their `(w, 1 − w)` type-7 quantiles.
pub fn winsorize(values: &[f64], w: f64) -> Vec<f64> {
    let s = sorted(values);
    let (lo, hi) = (quantile_sorted(&s, w), quantile_sorted(&s, 1.0 - w));
    values.iter().map(|v| v.clamp(lo, hi)).collect()
}

/// Mean after dropping `⌊trim · n⌋` values from each end.
pub fn trimmed_mean(values: &[f64], trim: f64) -> f64 {
    let s = sorted(values);
    let k = (trim * s.len() as f64).floor() as usize;
    mean(&s[k..s.len() - k])
}

/// Trimmed mean of the winsorized deltas over their SD, times Hedges' J.
pub fn trimmed_hedges_g(deltas: &[f64], winsor_fraction: f64, trim_fraction: f64) -> Result<f64> {
    let n = deltas.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("effect size needs n >= 3, got {n}")));
    }
    let w = winsorize(deltas, winsor_fraction);
    let sd = sample_sd(&w);
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sd > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("dispersion: winsorized deltas are constant".into()));
    }
    let j = 1.0 - 3.0 / (4.0 * (n as f64 - 1.0) - 1.0);
    Ok(trimmed_mean(&w, trim_fraction) / sd * j)
}

/// Bounded percentage change `200 (b − a) / max(b + a, ε)`.
pub fn delta_sym(mean_b: f64, mean_a: f64, epsilon_floor: f64) -> f64 {
    200.0 * (mean_b - mean_a) / (mean_b + mean_a).max(epsilon_floor)
}

pub const EPSILON_ABSOLUTE: f64 = 1e-6;

/// Floor for [`delta_sym`]: the 5th percentile of `b + a` across a family's
/// languages, never below `1e-6`; `1e-6` itself with fewer than 3 languages.
pub fn epsilon_floor(sums: &[f64]) -> f64 {
    if sums.len() < 3 {
        EPSILON_ABSOLUTE
    } else {
        quantile(sums, 0.05).max(EPSILON_ABSOLUTE)
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub pearson: f64,
    pub spearman: f64,
    pub pearson_ci: Interval,
}

/// Pearson and Spearman coefficients with a paired-bootstrap 95% interval
/// for Pearson's r. Resamples with zero variance are redrawn.
pub fn correlations(x: &[f64], y: &[f64], config: &StatsConfig) -> Result<Correlation> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Shape(format!("correlation inputs have {} and {} values", n, y.len())));
    }
    if n < 3 {
        return Err(Error::Degenerate(format!("correlation needs n >= 3, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite correlation input".into()));
    }
    let r = pearson(x, y).ok_or_else(|| Error::Degenerate("zero variance in correlation input".into()))?;
    let rho = spearman(x, y).expect("nonzero variance implies distinct ranks");

    let mut rng = stream_rng(config.seed, 0, STREAM_CORRELATION);
    let mut dist = Vec::with_capacity(config.bootstrap_resamples);
    let mut attempts = 0usize;
    let (mut xs, mut ys) = (vec![0.0; n], vec![0.0; n]);
    while dist.len() < config.bootstrap_resamples && attempts < 50 * config.bootstrap_resamples {
        attempts += 1;
        for k in 0..n {
            let i = rng.random_range(0..n);
            xs[k] = x[i];
            ys[k] = y[i];
        }
        if let Some(rb) = pearson(&xs, &ys) {
            dist.push(rb);
        }
    }
    let (lo, hi) = percentile_interval(&dist, 0.95);
    Ok(Correlation {
        n,
        pearson: r,
        spearman: rho,
        pearson_ci: Interval { lo, hi, degenerate: false },
    })
}

/// One group's endpoints, ready for summarizing.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupInput {
    pub key: String,
    /// Paraphrase-level (or language-level) deltas.
    pub values: Vec<f64>,
    /// Group means of each condition's level, for [`delta_sym`].
    pub mean_a: f64,
    pub mean_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub key: String,
    pub n: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_perm: f64,
    pub q_fdr: f64,
    pub reject: bool,
    /// `None` when n < 3 or the deltas have no dispersion.
    pub g_trim: Option<f64>,
    pub delta_sym_pct: f64,
    pub epsilon: f64,
}

/// Summaries for one family batch: per-group intervals, tests and effect
/// sizes, with FDR control across the batch. Group `k` draws from stream
/// `seed ^ k`.
pub fn summarize_family(groups: &[GroupInput], config: &StatsConfig) -> Result<Vec<StatsSummary>> {
    config.check()?;
    let sums: Vec<f64> = groups.iter().map(|g| g.mean_a + g.mean_b).collect();
    let epsilon = epsilon_floor(&sums);
    let mut rows = groups
        .par_iter()
        .enumerate()
        .map(|(k, g)| -> Result<StatsSummary> {
            if g.values.is_empty() {
                return Err(Error::EmptyGroup(g.key.clone()));
            }
            let ci = bootstrap_ci(&g.values, config, k as u64)?;
            Ok(StatsSummary {
                key: g.key.clone(),
                n: g.values.len(),
                mean: crate::contrast::order_free_mean(&g.values),
                ci_lo: ci.lo,
                ci_hi: ci.hi,
                p_perm: paired_permutation_test(&g.values, config.permutation_shuffles, config.seed, k as u64)?,
                q_fdr: f64::NAN,
                reject: false,
                g_trim: trimmed_hedges_g(&g.values, config.winsor_fraction, config.trim_fraction).ok(),
                delta_sym_pct: delta_sym(g.mean_b, g.mean_a, epsilon),
                epsilon,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let p: Vec<f64> = rows.iter().map(|r| r.p_perm).collect();
    let fdr = bh_fdr(&p, config.fdr_q);
    for (row, (q, rej)) in rows.iter_mut().zip(fdr.q_values.iter().zip(&fdr.reject)) {
        row.q_fdr = *q;
        row.reject = *rej;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    /// Textbook two-pass formulas, written without shared helpers.
    fn oracle_g(d: &[f64], w: f64, t: f64) -> f64 {
        let n = d.len();
        let mut s = d.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| {
            let h = (n - 1) as f64 * p;
            let i = h as usize;
            if i + 1 >= n {
                s[n - 1]
            } else {
                s[i] * (1.0 - (h - i as f64)) + s[i + 1] * (h - i as f64)
            }
        };
        let (lo, hi) = (q(w), q(1.0 - w));
        let mut wz: Vec<f64> = d.iter().map(|&v| if v < lo { lo } else if v > hi { hi } else { v }).collect();
        let m = wz.iter().sum::<f64>() / n as f64;
        let var = wz.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
        wz.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = (t * n as f64) as usize;
        let kept = &wz[k..n - k];
        let tm = kept.iter().sum::<f64>() / kept.len() as f64;
        tm / var.sqrt() * (1.0 - 3.0 / (4.0 * n as f64 - 5.0))
    }

    #[test]
    fn permutation_small_exact() {
        assert_eq!(paired_permutation_test(&[1.0, 2.0, 3.0], 10_000, 0, 0).unwrap(), 0.25);
        assert_eq!(paired_permutation_test(&[0.0; 5], 10_000, 0, 0).unwrap(), 1.0);
        assert_eq!(signflip_group_test(&[0.7], 10_000, 0, 0).unwrap(), 1.0);
        assert_eq!(signflip_group_test(&[0.3, -0.3], 10_000, 0, 0).unwrap(), 1.0);
        let p = signflip_group_test(&[1.0, 1.2, 0.9, 1.1, 1.3, 0.8, 1.0, 1.05, 0.95, 1.15], 10_000, 0, 0).unwrap();
        assert!(p <= 2.0 / 1024.0 + 1.0 / 10_001.0);
        assert!(paired_permutation_test(&[], 10, 0, 0).is_err());
    }

    #[test]
    fn permutation_monte_carlo_range() {
        let d: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = paired_permutation_test(&d, 500, 3, 0).unwrap();
        assert!(p >= 1.0 / 501.0 && p <= 1.0);
        assert_eq!(p, paired_permutation_test(&d, 500, 3, 0).unwrap());
    }

    #[test]
    fn bh_examples() {
        let r = bh_fdr(&[0.01, 0.02, 0.04, 0.5], 0.05);
        assert_eq!(r.reject, vec![true, true, false, false]);
        let r = bh_fdr(&[1.0, 1.0, 1.0], 0.05);
        assert_eq!(r.reject, vec![false; 3]);
        assert_eq!(r.q_values, vec![1.0; 3]);
        let r = bh_fdr(&[0.03], 0.05);
        assert_eq!((r.reject[0], r.q_values[0]), (true, 0.03));
        let r = bh_fdr(&[0.5, 0.01, 0.04, 0.02], 0.05);
        assert_eq!(r.reject, vec![false, true, false, true]);
    }

    #[test]
    fn hedges_g() {
        assert_eq!(trimmed_hedges_g(&[-1.0, 1.0, -2.0, 2.0, -0.5, 0.5], 0.01, 0.2).unwrap(), 0.0);
        assert!(matches!(trimmed_hedges_g(&[0.4; 6], 0.01, 0.2), Err(Error::Degenerate(_))));
        let mut rng = stream_rng(9, 0, 0);
        for n in [3usize, 7, 10, 41] {
            let d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).map(|z: f64| z * 0.3 + 0.1).collect();
            let g = trimmed_hedges_g(&d, 0.01, 0.2).unwrap();
            assert!((g - oracle_g(&d, 0.01, 0.2)).abs() < 1e-10, "n={n}");
            let g = trimmed_hedges_g(&d, 0.1, 0.25).unwrap();
            assert!((g - oracle_g(&d, 0.1, 0.25)).abs() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn delta_sym_examples() {
        assert_eq!(delta_sym(0.2, 0.2, 1e-6), 0.0);
        assert!((delta_sym(0.3, 0.1, 1e-9) - 100.0).abs() < 1e-12);
        assert_eq!(delta_sym(1.0, 0.0, 1e-6), 200.0);
        assert_eq!(epsilon_floor(&[0.5, 0.6]), 1e-6);
        assert!((epsilon_floor(&[1.0, 2.0, 3.0, 4.0, 5.0]) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn correlation_examples() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = correlations(&x, &y, &StatsConfig::default()).unwrap();
        assert!((c.pearson - 1.0).abs() < 1e-12 && (c.spearman - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| (-v).exp()).collect();
        assert!((correlations(&x, &y, &StatsConfig::default()).unwrap().spearman + 1.0).abs() < 1e-12);
        assert!(correlations(&x, &[1.0; 10], &StatsConfig::default()).is_err());
        assert!(correlations(&x[..2], &x[..2], &StatsConfig::default()).is_err());
    }

    #[test]
    fn correlation_reference_dataset() {
        let x = [1.2, 2.4, 3.1, 4.8, 5.0, 6.3, 7.7, 8.1, 9.9, 10.4];
        let y = [2.0, 1.8, 3.5, 4.1, 6.2, 5.9, 8.0, 7.4, 9.1, 11.0];
        let n = 10.0;
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        // Ranks of y: 2 1 3 4 7 6 9 8 10 ... (no ties), so rho = 1 - 6 Σd² / (n(n²-1)).
        let ry = [2.0, 1.0, 3.0, 4.0, 6.0, 5.0, 8.0, 7.0, 9.0, 10.0];
        let d2: f64 = ry.iter().enumerate().map(|(i, r)| (r - (i + 1) as f64).powi(2)).sum();
        let rho = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
        let c = correlations(&x, &y, &StatsConfig::default()).unwrap();
        assert!((c.pearson - r).abs() < 1e-12);
        assert!((c.spearman - rho).abs() < 1e-12);
        assert!(c.pearson_ci.lo <= c.pearson && c.pearson <= c.pearson_ci.hi);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn bootstrap_edge_cases() {
        let cfg = StatsConfig::default();
        assert_eq!(bootstrap_ci(&[0.3; 5], &cfg, 0).unwrap(), Interval { lo: 0.3, hi: 0.3, degenerate: false });
        assert!(bootstrap_ci(&[0.3], &cfg, 0).unwrap().degenerate);
        assert!(bootstrap_ci(&[], &cfg, 0).is_err());
        let v: Vec<f64> = (0..30).map(|i| (i as f64).sqrt()).collect();
        let bca = bootstrap_ci(&v, &StatsConfig::bca(), 0).unwrap();
        let m = mean(&v);
        assert!(bca.lo < m && m < bca.hi);
    }

    #[test]
    fn summary_family() {
        let groups = vec![
            GroupInput { key: "en".into(), values: vec![-0.4, -0.35, -0.45, -0.38, -0.42, -0.41, -0.37, -0.39, -0.44, -0.36], mean_a: 0.9, mean_b: 0.5 },
            GroupInput { key: "de".into(), values: vec![0.01, -0.02, 0.03, -0.01, 0.0, 0.02, -0.03, 0.01, -0.01, 0.0], mean_a: 0.9, mean_b: 0.9 },
        ];
        let rows = summarize_family(&groups, &StatsConfig::default()).unwrap();
        assert!(rows[0].reject && !rows[1].reject);
        assert!(rows[0].ci_hi < 0.0);
        assert_eq!(rows, summarize_family(&groups, &StatsConfig::default()).unwrap());
        let one = summarize_family(&groups[1..], &StatsConfig::default()).unwrap();
        assert_eq!(one[0].p_perm, rows[1].p_perm);
    }

    proptest! {
        #[test]
        fn nesting_and_sign_equivariance(v in prop::collection::vec(-3.0f64..3.0, 3..25), seed in any::<u64>()) {
            let cfg = StatsConfig { seed, bootstrap_resamples: 400, permutation_shuffles: 300, ..Default::default() };
            let mut rng = stream_rng(seed, 0, 0);
            let dist = bootstrap_means(&v, 400, &mut rng);
            let (lo95, hi95) = percentile_interval(&dist, 0.95);
            let (lo90, hi90) = percentile_interval(&dist, 0.90);
            prop_assert!(lo95 <= lo90 && hi90 <= hi95);

            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let p = paired_permutation_test(&v, cfg.permutation_shuffles, seed, 0).unwrap();
            let pn = paired_permutation_test(&neg, cfg.permutation_shuffles, seed, 0).unwrap();
            prop_assert_eq!(p, pn);
            let ci = bootstrap_ci(&v, &cfg, 0).unwrap();
            let cin = bootstrap_ci(&neg, &cfg, 0).unwrap();
            prop_assert!((ci.lo + cin.hi).abs() < 1e-12 && (ci.hi + cin.lo).abs() < 1e-12);
            if let (Ok(g), Ok(gn)) = (trimmed_hedges_g(&v, 0.01, 0.2), trimmed_hedges_g(&neg, 0.01, 0.2)) {
                prop_assert!((g + gn).abs() < 1e-9 * g.abs().max(1.0));
            }
        }

        #[test]
        fn bh_q_monotone(p in prop::collection::vec(0.0f64..1.0, 1..30)) {
            let r = bh_fdr(&p, 0.05);
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            for w in idx.windows(2) {
                prop_assert!(r.q_values[w[0]] <= r.q_values[w[1]]);
            }
            for (i, &pi) in p.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(&r.q_values[i]));
                prop_assert!(r.q_values[i] >= pi * (1.0 - 1e-12));
                if (r.q_values[i] - 0.05).abs() > 1e-12 {
                    prop_assert_eq!(r.reject[i], r.q_values[i] <= 0.05);
                }
            }
        }

        #[test]
        fn exact_path_matches_definition(v in prop::collection::vec(-2.0f64..2.0, 1..9)) {
            let p = paired_permutation_test(&v, 1 << v.len(), 0, 0).unwrap();
            let p_big = paired_permutation_test(&v, 10_000, 1, 5).unwrap();
            prop_assert_eq!(p, p_big);
        }
    }
}
