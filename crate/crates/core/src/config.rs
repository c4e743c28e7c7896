//! Run configuration: defaults, a plain-text (TOML) config file, and
//! overrides from the command line.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::analysis::AnalysisConfig;
use crate::contrast::{LayerWindow, Metric};
use crate::error::{Error, Result};
use crate::graph::{HeadWeighting, LaplacianKind, DEFAULT_THETA};
use crate::spectral::HferCutoff;
use crate::stats::{BootstrapKind, StatsConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub analysis: AnalysisConfig,
    /// Empty means the default early/mid/late set.
    pub windows: Vec<LayerWindow>,
    pub stats: StatsConfig,
    pub max_token_delta: Option<usize>,
    /// Endpoint for sweeps and ablation summaries.
    pub metric: Metric,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            analysis: AnalysisConfig::default(),
            windows: Vec::new(),
            stats: StatsConfig::default(),
            max_token_delta: None,
            metric: Metric::Fiedler,
            output_dir: PathBuf::from("spectraprobe-out"),
        }
    }
}

/// Every setting is optional; unset keys keep their defaults. The same
/// struct carries command-line overrides.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub laplacian: Option<String>,
    pub theta: Option<f64>,
    pub agg: Option<String>,
    pub exclude_special: Option<bool>,
    pub hfer_c: Option<f64>,
    pub hfer_k: Option<usize>,
    pub layers: Option<Vec<usize>>,
    pub windows: Option<Vec<String>>,
    pub boot: Option<usize>,
    pub bootstrap_kind: Option<BootstrapKind>,
    pub perm: Option<usize>,
    pub fdr_q: Option<f64>,
    pub winsor: Option<f64>,
    pub trim: Option<f64>,
    pub seed: Option<u64>,
    pub max_token_delta: Option<usize>,
    pub metric: Option<Metric>,
    pub out: Option<PathBuf>,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Usage(format!("config file {}: {e}", path.display())))
    }

    /// `self` with every value set in `over` replaced.
    pub fn overridden_by(self, over: Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: over.$f.or(self.$f)),* } };
        }
        let hfer_pair = over.hfer_c.is_some() || over.hfer_k.is_some();
        let mut s = pick!(
            laplacian, theta, agg, exclude_special, hfer_c, hfer_k, layers, windows, boot,
            bootstrap_kind, perm, fdr_q, winsor, trim, seed, max_token_delta, metric, out
        );
        // A cutoff given on the command line replaces the file's cutoff mode.
        if hfer_pair {
            s.hfer_c = over.hfer_c;
            s.hfer_k = over.hfer_k;
        }
        s
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let usage = |e: Error| Error::Usage(e.root().to_string());
        let theta = self.theta.unwrap_or(DEFAULT_THETA);
        if let Some(name) = &self.laplacian {
            cfg.analysis.laplacian = LaplacianKind::parse(name, theta).map_err(usage)?;
        } else if self.theta.is_some() {
            cfg.analysis.laplacian = LaplacianKind::magnetic(theta).map_err(usage)?;
        }
        if let Some(a) = &self.agg {
            cfg.analysis.aggregation.weighting = a.parse::<HeadWeighting>()?;
        }
        if let Some(x) = self.exclude_special {
            cfg.analysis.aggregation.exclude_special = x;
        }
        cfg.analysis.cutoff = match (self.hfer_c, self.hfer_k) {
            (Some(_), Some(_)) => return Err(Error::Usage("set either hfer_c or hfer_k, not both".into())),
            (Some(c), None) if c > 0.0 && c < 1.0 => HferCutoff::MassFraction(c),
            (Some(c), None) => return Err(Error::Usage(format!("hfer_c must lie in (0, 1), got {c}"))),
            (None, Some(k)) if k >= 1 => HferCutoff::Index(k),
            (None, Some(_)) => return Err(Error::Usage("hfer_k must be at least 1".into())),
            (None, None) => HferCutoff::default(),
        };
        cfg.analysis.layers = self.layers.clone();
        if let Some(ws) = &self.windows {
            cfg.windows = ws.iter().map(|w| LayerWindow::parse(w)).collect::<Result<_>>()?;
        }
        let s = &mut cfg.stats;
        s.bootstrap_resamples = self.boot.unwrap_or(s.bootstrap_resamples);
        s.bootstrap_kind = self.bootstrap_kind.unwrap_or(s.bootstrap_kind);
        s.permutation_shuffles = self.perm.unwrap_or(s.permutation_shuffles);
        s.fdr_q = self.fdr_q.unwrap_or(s.fdr_q);
        s.winsor_fraction = self.winsor.unwrap_or(s.winsor_fraction);
        s.trim_fraction = self.trim.unwrap_or(s.trim_fraction);
        s.seed = self.seed.unwrap_or(s.seed);
        s.check()?;
        cfg.max_token_delta = self.max_token_delta;
        cfg.metric = self.metric.unwrap_or(cfg.metric);
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}
