//! Eigenstructure of token graphs and the four per-layer diagnostics:
//! Dirichlet energy, spectral entropy, high-frequency energy ratio (HFER) and
//! the Fiedler value `λ₂`.
//!
//! Conventions:
//! - Energy is `Tr(Xᵀ L X)`; for the combinatorial kind this equals
//!   `½ Σ_ij W_ij ‖x_i − x_j‖²`.
//! - Entropy uses the natural log, so it lies in `[0, ln N]`.
//! - For the random-walk kind the graph Fourier transform uses the basis of
//!   the similar symmetric operator applied to `D^{1/2} X`, so modal energies
//!   sum to `‖D^{1/2} X‖²`.
//! - Magnetic operators are diagonalized through their real `2N × 2N`
//!   embedding; the doubled spectrum is paired back to `N` eigenvalues.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigen::{default_start, dense_sorted, lanczos_smallest};
use crate::error::{Error, Result};
use crate::graph::{Operator, TokenGraph};

/// Eigenvalues paired from the magnetic embedding must agree to this.
pub const PAIRING_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    IterativeSmallest,
    DenseFull,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Graphs with at most this many nodes go straight to the dense path.
    pub dense_threshold: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iter: 10_000,
            dense_threshold: 64,
        }
    }
}

impl SolverOptions {
    /// Always take the iterative path (fallback to dense still applies on
    /// non-convergence).
    pub fn iterative() -> Self {
        SolverOptions {
            dense_threshold: 0,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Eigenbasis {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum EigenVector {
    Real(DVector<f64>),
    Complex(DVector<Complex64>),
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub basis: Option<Eigenbasis>,
    pub method: SolveMethod,
    /// Per-node factor applied to signals before projecting onto `basis`.
    pub signal_scale: Option<DVector<f64>>,
}

#[derive(Clone, Debug)]
pub struct FiedlerPair {
    pub value: f64,
    pub vector: EigenVector,
    pub residual: f64,
    pub method: SolveMethod,
}

/// Pairs the doubled spectrum of a Hermitian embedding and recovers an
/// orthonormal complex eigenbasis.
fn unembed(values: &[f64], vectors: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let n = values.len() / 2;
    for k in 0..n {
        let (a, b) = (values[2 * k], values[2 * k + 1]);
        if (a - b).abs() > PAIRING_TOLERANCE * a.abs().max(1.0) {
            return Err(Error::Invalid(format!(
                "embedded spectrum does not pair: {a} vs {b}"
            )));
        }
    }
    let mut out_vals: Vec<f64> = Vec::with_capacity(n);
    let mut out_vecs: Vec<DVector<Complex64>> = Vec::with_capacity(n);
    for c in 0..2 * n {
        if out_vecs.len() == n {
            break;
        }
        let col = vectors.column(c);
        let mut u = DVector::from_fn(n, |i, _| Complex64::new(col[i], col[n + i]));
        // Orthogonalize against accepted vectors of the same eigenvalue.
        for _ in 0..2 {
            for (v, &lam) in out_vecs.iter().zip(&out_vals) {
                if (lam - values[c]).abs() <= 1e-6 * values[c].abs().max(1.0) {
                    let coef = v.dotc(&u);
                    u -= v * coef;
                }
            }
        }
        let norm = u.norm();
        if norm > 0.5 {
            out_vecs.push(u / Complex64::new(norm, 0.0));
            out_vals.push(values[c]);
        }
    }
    if out_vecs.len() != n {
        return Err(Error::Invalid("could not recover complex eigenbasis".into()));
    }
    Ok((out_vals, DMatrix::from_columns(&out_vecs)))
}

/// Complete eigendecomposition of the graph's analyzed operator.
pub fn full_spectrum(graph: &TokenGraph) -> Result<Spectrum> {
    if graph.n() < 2 {
        return Err(Error::Invalid("spectrum needs at least 2 nodes".into()));
    }
    if graph.degrees().iter().any(|d| *d < 1e-300) {
        return Err(Error::Degenerate("spectrum: near-zero degree".into()));
    }
    let (eigenvalues, basis) = match graph.operator() {
        Operator::Real(m) => {
            let (vals, vecs) = dense_sorted(m)?;
            (vals, Eigenbasis::Real(vecs))
        }
        op @ Operator::Hermitian { .. } => {
            let (vals, vecs) = dense_sorted(&op.real_symmetric())?;
            let (vals, vecs) = unembed(&vals, &vecs)?;
            (vals, Eigenbasis::Complex(vecs))
        }
    };
    Ok(Spectrum {
        eigenvalues,
        basis: Some(basis),
        method: SolveMethod::DenseFull,
        signal_scale: graph.signal_scale(),
    })
}

fn dense_fiedler(graph: &TokenGraph) -> Result<FiedlerPair> {
    let spec = full_spectrum(graph)?;
    let value = spec.eigenvalues[1];
    let vector = match spec.basis.unwrap() {
        Eigenbasis::Real(u) => EigenVector::Real(u.column(1).into_owned()),
        Eigenbasis::Complex(u) => EigenVector::Complex(u.column(1).into_owned()),
    };
    let residual = operator_residual(graph.operator(), &vector, value);
    Ok(FiedlerPair {
        value,
        vector,
        residual,
        method: SolveMethod::DenseFull,
    })
}

fn operator_residual(op: &Operator, v: &EigenVector, lambda: f64) -> f64 {
    match (op, v) {
        (Operator::Real(m), EigenVector::Real(x)) => (m * x - x * lambda).norm(),
        (Operator::Hermitian { re, im }, EigenVector::Complex(x)) => {
            let xr = x.map(|c| c.re);
            let xi = x.map(|c| c.im);
            let yr = re * &xr - im * &xi - &xr * lambda;
            let yi = re * &xi + im * &xr - &xi * lambda;
            (yr.norm_squared() + yi.norm_squared()).sqrt()
        }
        _ => f64::NAN,
    }
}

/// Second-smallest eigenvalue of the graph operator and its eigenvector.
///
/// Graphs above `opts.dense_threshold` nodes use Lanczos on the operator with
/// its known nullspace deflated. Kinds without a known nullspace
/// (`directed_rw`, `magnetic`) first resolve the smallest eigenpair, deflate
/// it, then take the smallest remaining eigenvalue. Non-convergence falls
/// back to the dense path.
pub fn fiedler_with(graph: &TokenGraph, opts: SolverOptions) -> Result<FiedlerPair> {
    let n = graph.n();
    if n < 2 {
        return Err(Error::Invalid("fiedler value needs at least 2 nodes".into()));
    }
    if n <= opts.dense_threshold {
        return dense_fiedler(graph);
    }
    let op = graph.operator().real_symmetric();
    let dim = op.nrows();
    let start = default_start(dim);

    let mut deflate = Vec::new();
    match graph.nullspace() {
        Some(v) => deflate.push(v),
        None => {
            let first = lanczos_smallest(&op, &[], &start, opts.tol * 1e-4, opts.max_iter)?;
            if !first.converged {
                return dense_fiedler(graph);
            }
            if let Operator::Hermitian { .. } = graph.operator() {
                // Multiplication by i maps [a; b] to [−b; a] in the embedding.
                let v = &first.vector;
                let half = dim / 2;
                let partner = DVector::from_fn(dim, |i, _| if i < half { -v[half + i] } else { v[i - half] });
                deflate.push(v.clone());
                let mut p = partner;
                p.axpy(-v.dot(&p), v, 1.0);
                deflate.push(p.normalize());
            } else {
                deflate.push(first.vector);
            }
        }
    }
    let second = lanczos_smallest(&op, &deflate, &start, opts.tol, opts.max_iter)?;
    if !second.converged {
        return dense_fiedler(graph);
    }
    let vector = match graph.operator() {
        Operator::Real(_) => EigenVector::Real(second.vector),
        Operator::Hermitian { .. } => {
            let half = dim / 2;
            let v = &second.vector;
            EigenVector::Complex(DVector::from_fn(half, |i, _| Complex64::new(v[i], v[half + i])))
        }
    };
    Ok(FiedlerPair {
        value: second.value,
        vector,
        residual: second.residual,
        method: SolveMethod::IterativeSmallest,
    })
}

/// [`fiedler_with`] using the default solver settings (tolerance 1e-6,
/// at most 10⁴ iterations, dense below 65 nodes).
pub fn fiedler(graph: &TokenGraph) -> Result<FiedlerPair> {
    fiedler_with(graph, SolverOptions::default())
}

fn check_signal(graph_n: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != graph_n {
        return Err(Error::Shape(format!("signal has {} rows for {graph_n} nodes", x.nrows())));
    }
    Ok(())
}

fn scaled(scale: Option<&DVector<f64>>, x: &DMatrix<f64>) -> DMatrix<f64> {
    match scale {
        Some(s) => DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * s[i]),
        None => x.clone(),
    }
}

/// `Tr(Sᵀ L S)` where `S` is the signal after the graph's GFT scaling and `L`
/// the analyzed operator. Imaginary parts of Hermitian operators cancel for
/// real signals.
pub fn dirichlet_energy(graph: &TokenGraph, x: &DMatrix<f64>) -> Result<f64> {
    check_signal(graph.n(), x)?;
    let s = scaled(graph.signal_scale().as_ref(), x);
    let l = match graph.operator() {
        Operator::Real(m) => m,
        Operator::Hermitian { re, .. } => re,
    };
    Ok((s.transpose() * l * &s).trace())
}

/// Modal energies `e_m = ‖X̂_m‖²` in ascending-eigenvalue order.
pub fn modal_energies(spectrum: &Spectrum, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let basis = spectrum
        .basis
        .as_ref()
        .ok_or_else(|| Error::Invalid("spectrum has no eigenvectors".into()))?;
    check_signal(spectrum.eigenvalues.len(), x)?;
    let s = scaled(spectrum.signal_scale.as_ref(), x);
    Ok(match basis {
        Eigenbasis::Real(u) => {
            let coef = u.transpose() * s;
            coef.row_iter().map(|r| r.norm_squared()).collect()
        }
        Eigenbasis::Complex(u) => {
            let sc = s.map(|v| Complex64::new(v, 0.0));
            let coef = u.adjoint() * sc;
            coef.row_iter().map(|r| r.iter().map(|c| c.norm_sqr()).sum()).collect()
        }
    })
}

fn total_energy(e: &[f64]) -> Result<f64> {
    let total: f64 = e.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("signal: all modal energies are zero".into()));
    }
    Ok(total)
}

/// Shannon entropy (natural log) of the modal-energy distribution.
pub fn entropy_of_energies(e: &[f64]) -> Result<f64> {
    let total = total_energy(e)?;
    let h = -e
        .iter()
        .map(|v| v / total)
        .filter(|p| *p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    Ok(h.clamp(0.0, (e.len() as f64).ln()))
}

pub fn spectral_entropy(spectrum: &Spectrum, x: &DMatrix<f64>) -> Result<f64> {
    entropy_of_energies(&modal_energies(spectrum, x)?)
}

/// High-frequency cutoff for HFER.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum HferCutoff {
    /// Modes `1..=K` are low frequency.
    Index(usize),
    /// `K` is the smallest index whose cumulative modal energy reaches
    /// `(1 − c)` of the total.
    MassFraction(f64),
    /// As `MassFraction`, but accumulating eigenvalue magnitude instead of
    /// signal energy.
    EigenvalueMass(f64),
}

impl Default for HferCutoff {
    fn default() -> Self {
        HferCutoff::MassFraction(0.20)
    }
}

impl std::fmt::Display for HferCutoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HferCutoff::Index(k) => write!(f, "K={k}"),
            HferCutoff::MassFraction(c) => write!(f, "c={c}"),
            HferCutoff::EigenvalueMass(c) => write!(f, "eig-c={c}"),
        }
    }
}

fn cumulative_index(weights: &[f64], keep: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = keep * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if acc >= target {
            return i + 1;
        }
    }
    weights.len()
}

/// Resolves a cutoff to the number `K` of low-frequency modes.
pub fn resolve_cutoff(cutoff: HferCutoff, energies: &[f64], eigenvalues: &[f64]) -> Result<usize> {
    let n = energies.len();
    match cutoff {
        HferCutoff::Index(k) => {
            if k >= 1 && k < n {
                Ok(k)
            } else {
                Err(Error::Invalid(format!("HFER cutoff K={k} outside [1, {n})")))
            }
        }
        HferCutoff::MassFraction(c) | HferCutoff::EigenvalueMass(c) => {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::Invalid(format!("HFER mass fraction {c} outside (0, 1)")));
            }
            let k = if let HferCutoff::MassFraction(_) = cutoff {
                total_energy(energies)?;
                cumulative_index(energies, 1.0 - c)
            } else {
                let mags: Vec<f64> = eigenvalues.iter().map(|v| v.abs()).collect();
                if mags.iter().sum::<f64>() > 0.0 {
                    cumulative_index(&mags, 1.0 - c)
                } else {
                    n
                }
            };
            Ok(k.max(1))
        }
    }
}

/// Fraction of modal energy above the first `k` modes.
pub fn hfer_at(energies: &[f64], k: usize) -> Result<f64> {
    let total = total_energy(energies)?;
    let tail: f64 = energies.iter().skip(k).sum();
    Ok((tail / total).clamp(0.0, 1.0))
}

pub fn hfer(spectrum: &Spectrum, x: &DMatrix<f64>, cutoff: HferCutoff) -> Result<f64> {
    let e = modal_energies(spectrum, x)?;
    let k = resolve_cutoff(cutoff, &e, &spectrum.eigenvalues)?;
    hfer_at(&e, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub energy: f64,
    pub spectral_entropy: f64,
    pub hfer: f64,
    pub fiedler: f64,
    /// Resolved number of low-frequency modes.
    pub cutoff_k: usize,
    /// Node count after exclusions.
    pub n: usize,
}

/// Eigenvalues this close below zero are reported as zero.
const ZERO_CLAMP: f64 = 1e-10;

/// All four diagnostics from one dense spectrum. An all-zero signal is an
/// error, not a zero row.
pub fn layer_diagnostics(graph: &TokenGraph, x: &DMatrix<f64>, cutoff: HferCutoff) -> Result<LayerDiagnostics> {
    check_signal(graph.n(), x)?;
    let spectrum = full_spectrum(graph)?;
    let energies = modal_energies(&spectrum, x)?;
    let mut fiedler = spectrum.eigenvalues[1];
    if fiedler < 0.0 && fiedler > -ZERO_CLAMP {
        fiedler = 0.0;
    }
    let k = resolve_cutoff(cutoff, &energies, &spectrum.eigenvalues)?;
    Ok(LayerDiagnostics {
        energy: dirichlet_energy(graph, x)?,
        spectral_entropy: entropy_of_energies(&energies)?,
        hfer: hfer_at(&energies, k)?,
        fiedler,
        cutoff_k: k,
        n: graph.n(),
    })
}
