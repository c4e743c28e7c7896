//! Composite scores: the reconfiguration change index and the final-layer
//! Fiedler hallucination detector.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrast::Quad;
use crate::error::{Error, Result};
use crate::stats::{mean, sample_sd};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZScoredDiagnostics {
    pub z_energy: f64,
    pub z_entropy: f64,
    pub z_hfer: f64,
    pub z_fiedler: f64,
}

/// `(z_entropy + z_fiedler) − (z_energy + z_hfer)`.
pub fn rci(z: &ZScoredDiagnostics) -> f64 {
    (z.z_entropy + z.z_fiedler) - (z.z_energy + z.z_hfer)
}

/// Standardizes each diagnostic column over the whole cohort (sample SD).
pub fn zscore_cohort(rows: &[Quad]) -> Result<Vec<ZScoredDiagnostics>> {
    if rows.len() < 2 {
        return Err(Error::Degenerate("z-scoring needs at least two rows".into()));
    }
    let column = |f: fn(&Quad) -> f64, name: &str| -> Result<Vec<f64>> {
        let v: Vec<f64> = rows.iter().map(f).collect();
        let (m, sd) = (mean(&v), sample_sd(&v));
        if !(sd > 0.0) {
            return Err(Error::Degenerate(format!("zero dispersion in {name}")));
        }
        Ok(v.iter().map(|x| (x - m) / sd).collect())
    };
    let e = column(|q| q.energy, "energy")?;
    let s = column(|q| q.entropy, "entropy")?;
    let h = column(|q| q.hfer, "hfer")?;
    let f = column(|q| q.fiedler, "fiedler")?;
    Ok((0..rows.len())
        .map(|i| ZScoredDiagnostics { z_energy: e[i], z_entropy: s[i], z_hfer: h[i], z_fiedler: f[i] })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShdCalibration {
    pub mu_fid: f64,
    pub sigma_fid: f64,
    pub tau_d: f64,
    /// Fingerprint of the analysis configuration the reference came from.
    #[serde(default)]
    pub fingerprint: String,
    /// Balanced accuracy on the tuning set, when tau was tuned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuned_balanced_accuracy: Option<f64>,
}

/// Labeled final-layer Fiedler value; `true` marks a hallucination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labeled {
    pub f_last: f64,
    pub hallucination: bool,
}

pub fn balanced_accuracy(z: &[f64], labels: &[bool], tau: f64) -> f64 {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&zi, &l) in z.iter().zip(labels) {
        let flag = zi > tau;
        if l {
            pos += 1;
            tp += flag as usize;
        } else {
            neg += 1;
            tn += (!flag) as usize;
        }
    }
    0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64)
}

/// Mean and sample SD of the reference values. The threshold is `tau` when
/// given, otherwise tuned on `tuning` for balanced accuracy over the grid of
/// observed z-values (ties go to the larger threshold).
pub fn shd_calibrate(
    reference: &[f64],
    tau: Option<f64>,
    tuning: Option<&[Labeled]>,
    fingerprint: &str,
) -> Result<ShdCalibration> {
    if reference.len() < 2 {
        return Err(Error::Degenerate("calibration needs at least two reference values".into()));
    }
    if reference.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite reference value".into()));
    }
    let (mu, sigma) = (mean(reference), sample_sd(reference));
    if !(sigma > 1e-12 * mu.abs().max(1.0)) {
        return Err(Error::Degenerate("zero dispersion in calibration reference".into()));
    }
    let (tau_d, acc) = match (tau, tuning) {
        (Some(t), _) => (t, None),
        (None, Some(set)) => {
            let z: Vec<f64> = set.iter().map(|s| (s.f_last - mu) / sigma).collect();
            let labels: Vec<bool> = set.iter().map(|s| s.hallucination).collect();
            if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
                return Err(Error::Degenerate("tuning set needs both labels".into()));
            }
            let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &t in &z {
                let ba = balanced_accuracy(&z, &labels, t);
                if ba > best.1 || (ba == best.1 && t > best.0) {
                    best = (t, ba);
                }
            }
            (best.0, Some(best.1))
        }
        (None, None) => return Err(Error::Usage("supply a threshold or a labeled tuning set".into())),
    };
    Ok(ShdCalibration {
        mu_fid: mu,
        sigma_fid: sigma,
        tau_d,
        fingerprint: fingerprint.to_string(),
        tuned_balanced_accuracy: acc,
    })
}

impl ShdCalibration {
    pub fn z(&self, f_last: f64) -> f64 {
        (f_last - self.mu_fid) / self.sigma_fid
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("calibration serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let c: ShdCalibration = toml::from_str(text).map_err(|e| Error::Usage(format!("calibration file: {e}")))?;
        if !(c.sigma_fid > 0.0) {
            return Err(Error::Invalid("calibration sigma_fid must be positive".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// `1` when `z_fid > tau_d`.
pub fn shd_detect(f_last: f64, calib: &ShdCalibration) -> bool {
    calib.z(f_last) > calib.tau_d
}
