//! Attention-induced token graphs and their Laplacian operators.
//!
//! Per-head attention `A_h` (row-stochastic, `[N, N]`) is symmetrized to
//! `W_h = (A_h + A_hᵀ) / 2`, the heads are combined with convex weights, and
//! one of five operators is formed:
//!
//! | kind            | operator analyzed                                        |
//! |-----------------|----------------------------------------------------------|
//! | `combinatorial` | `L = D − W`                                              |
//! | `symmetric`     | `I − D^{-1/2} W D^{-1/2}`                                |
//! | `random_walk`   | `I − D^{-1} W`, analyzed through its similar form above  |
//! | `directed_rw`   | symmetric part of `I − D_out^{-1} A`                     |
//! | `magnetic`      | Hermitian `D_s − H_θ`, `H_θ = (A e^{iθ} + Aᵀ e^{-iθ}) / 2` |
//!
//! Directed kinds consume the head-aggregated attention `A` instead of `W`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Aggregated weights below this are set to zero.
pub const WEIGHT_FLOOR: f64 = 1e-12;
pub const DEFAULT_THETA: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadWeighting {
    Uniform,
    #[default]
    MassWeighted,
}

impl fmt::Display for HeadWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadWeighting::Uniform => "uniform",
            HeadWeighting::MassWeighted => "mass_weighted",
        })
    }
}

impl FromStr for HeadWeighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(HeadWeighting::Uniform),
            "mass_weighted" | "mass" => Ok(HeadWeighting::MassWeighted),
            other => Err(Error::Usage(format!("unknown aggregation {other:?}"))),
        }
    }
}

/// How heads are combined and whether special tokens are removed first.
///
/// Softmax rows sum to one, so every head has mass `N` until special tokens
/// are removed; mass weighting only differs from uniform with exclusion on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggregationScheme {
    pub weighting: HeadWeighting,
    pub exclude_special: bool,
}

impl Default for AggregationScheme {
    fn default() -> Self {
        AggregationScheme {
            weighting: HeadWeighting::MassWeighted,
            exclude_special: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LaplacianKind {
    Combinatorial,
    Symmetric,
    RandomWalk,
    DirectedRw,
    Magnetic { theta: f64 },
}

impl Default for LaplacianKind {
    fn default() -> Self {
        LaplacianKind::RandomWalk
    }
}

impl LaplacianKind {
    pub fn magnetic(theta: f64) -> Result<Self> {
        if theta > 0.0 && theta <= std::f64::consts::PI {
            Ok(LaplacianKind::Magnetic { theta })
        } else {
            Err(Error::Invalid(format!("magnetic phase {theta} outside (0, pi]")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LaplacianKind::Combinatorial => "combinatorial",
            LaplacianKind::Symmetric => "symmetric",
            LaplacianKind::RandomWalk => "random_walk",
            LaplacianKind::DirectedRw => "directed_rw",
            LaplacianKind::Magnetic { .. } => "magnetic",
        }
    }

    pub fn is_directed(&self) -> bool {
        matches!(self, LaplacianKind::DirectedRw | LaplacianKind::Magnetic { .. })
    }

    /// Parses a kind name; `theta` applies to `magnetic` only.
    pub fn parse(name: &str, theta: f64) -> Result<Self> {
        match name {
            "combinatorial" => Ok(LaplacianKind::Combinatorial),
            "symmetric" | "sym" => Ok(LaplacianKind::Symmetric),
            "random_walk" | "rw" => Ok(LaplacianKind::RandomWalk),
            "directed_rw" | "directed" => Ok(LaplacianKind::DirectedRw),
            "magnetic" => LaplacianKind::magnetic(theta),
            other => Err(Error::Usage(format!("unknown laplacian {other:?}"))),
        }
    }

    pub const ALL_NAMES: [&'static str; 5] =
        ["combinatorial", "symmetric", "random_walk", "directed_rw", "magnetic"];
}

impl fmt::Display for LaplacianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LaplacianKind::Magnetic { theta } => write!(f, "magnetic(theta={theta})"),
            other => f.write_str(other.name()),
        }
    }
}

/// The matrix whose eigenstructure is analyzed.
#[derive(Clone, Debug, PartialEq)]
pub enum Operator {
    Real(DMatrix<f64>),
    /// Hermitian operator split into real and imaginary parts.
    Hermitian { re: DMatrix<f64>, im: DMatrix<f64> },
}

impl Operator {
    pub fn dim(&self) -> usize {
        match self {
            Operator::Real(m) => m.nrows(),
            Operator::Hermitian { re, .. } => re.nrows(),
        }
    }

    /// Real symmetric form: the matrix itself, or `[[Re, −Im], [Im, Re]]`.
    pub fn real_symmetric(&self) -> DMatrix<f64> {
        match self {
            Operator::Real(m) => m.clone(),
            Operator::Hermitian { re, im } => {
                let n = re.nrows();
                let mut out = DMatrix::zeros(2 * n, 2 * n);
                out.view_mut((0, 0), (n, n)).copy_from(re);
                out.view_mut((n, n), (n, n)).copy_from(re);
                out.view_mut((0, n), (n, n)).copy_from(&(-im));
                out.view_mut((n, 0), (n, n)).copy_from(im);
                out
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TokenGraph {
    kind: LaplacianKind,
    weights: DMatrix<f64>,
    degrees: DVector<f64>,
    operator: Operator,
    nodes: Vec<usize>,
    excluded: Vec<usize>,
    dropped: Vec<usize>,
}

impl TokenGraph {
    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn kind(&self) -> LaplacianKind {
        self.kind
    }

    /// `W` for undirected kinds, the aggregated attention `A` for directed kinds.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn degrees(&self) -> &DVector<f64> {
        &self.degrees
    }

    pub fn operator(&self) -> &Operator {
        &self.operator
    }

    /// Original token index of every node.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Token indices removed as special tokens.
    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    /// Token indices removed because they were isolated after exclusion.
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// Unit vector spanning the known nullspace, when the kind has one.
    pub fn nullspace(&self) -> Option<DVector<f64>> {
        let n = self.n();
        match self.kind {
            LaplacianKind::Combinatorial => Some(DVector::from_element(n, 1.0 / (n as f64).sqrt())),
            LaplacianKind::Symmetric | LaplacianKind::RandomWalk => {
                Some(self.degrees.map(f64::sqrt).normalize())
            }
            _ => None,
        }
    }

    /// Per-node scale applied to signals before the graph Fourier transform
    /// (`D^{1/2}` for the random-walk kind, identity otherwise).
    pub fn signal_scale(&self) -> Option<DVector<f64>> {
        match self.kind {
            LaplacianKind::RandomWalk => Some(self.degrees.map(f64::sqrt)),
            _ => None,
        }
    }

    /// The operator as defined, before any symmetrization used for analysis:
    /// `I − D^{-1}W` for random walk and `I − D_out^{-1}A` for directed_rw.
    /// Magnetic returns the real part; use [`TokenGraph::operator`] for both parts.
    pub fn defining_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        match (&self.kind, &self.operator) {
            (LaplacianKind::RandomWalk | LaplacianKind::DirectedRw, _) => {
                let mut m = -self.weights.clone();
                for i in 0..n {
                    let d = self.degrees[i];
                    m.row_mut(i).scale_mut(1.0 / d);
                    m[(i, i)] += 1.0;
                }
                m
            }
            (_, Operator::Real(m)) => m.clone(),
            (_, Operator::Hermitian { re, .. }) => re.clone(),
        }
    }
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!("{what} is {}x{}, not square", m.nrows(), m.ncols())));
    }
    Ok(m.nrows())
}

/// `(A + Aᵀ) / 2`, with mirrored entries written from a single value so the
/// result is exactly symmetric.
pub fn symmetrize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_square(a, "attention")?;
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, i)] = a[(i, i)];
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Ok(w)
}

/// Convex head weights. Mass weighting uses `s_h = Σ_ij A_ij` of the heads as
/// given, so apply special-token exclusion first.
pub fn head_weights(heads: &[DMatrix<f64>], weighting: HeadWeighting) -> Result<Vec<f64>> {
    if heads.is_empty() {
        return Err(Error::Invalid("no attention heads".into()));
    }
    let h = heads.len();
    match weighting {
        HeadWeighting::Uniform => Ok(vec![1.0 / h as f64; h]),
        HeadWeighting::MassWeighted => {
            let masses: Vec<f64> = heads.iter().map(|m| m.sum()).collect();
            if let Some(bad) = masses.iter().find(|s| !(**s >= 0.0)) {
                return Err(Error::Invalid(format!("negative head mass {bad}")));
            }
            let total: f64 = masses.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Degenerate("head weights: total attention mass is zero".into()));
            }
            Ok(masses.iter().map(|s| s / total).collect())
        }
    }
}

/// `Σ_h α_h M_h` with weights from [`head_weights`]. Symmetrization keeps each
/// head's mass, so symmetrized and raw heads receive identical weights.
pub fn aggregate_heads(heads: &[DMatrix<f64>], weighting: HeadWeighting) -> Result<DMatrix<f64>> {
    let alpha = head_weights(heads, weighting)?;
    let n = check_square(&heads[0], "head 0")?;
    let mut out = DMatrix::zeros(n, n);
    for (k, (m, a)) in heads.iter().zip(&alpha).enumerate() {
        if m.shape() != (n, n) {
            return Err(Error::Shape(format!("head {k} is {:?}, expected ({n}, {n})", m.shape())));
        }
        out += m * *a;
    }
    out.apply(|v| {
        if v.abs() < WEIGHT_FLOOR {
            *v = 0.0
        }
    });
    Ok(out)
}

/// Keeps the listed rows/columns, in order.
pub fn select_nodes(m: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(keep.len(), keep.len(), |i, j| m[(keep[i], keep[j])])
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

/// Builds the requested operator. Undirected kinds take a symmetric
/// nonnegative `W`; directed kinds take the aggregated attention `A`.
pub fn build_laplacian(input: &DMatrix<f64>, kind: LaplacianKind) -> Result<TokenGraph> {
    let n = check_square(input, "weight matrix")?;
    if n < 2 {
        return Err(Error::Invalid(format!("graph needs at least 2 nodes, got {n}")));
    }
    if let Some(v) = input.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Invalid(format!("weight {v} is negative or not finite")));
    }
    if !kind.is_directed() && input != &input.transpose() {
        return Err(Error::Invalid("undirected Laplacian needs a symmetric weight matrix".into()));
    }
    if let LaplacianKind::Magnetic { theta } = kind {
        LaplacianKind::magnetic(theta)?;
    }

    // Symmetrized degree: W row sums, or (row + column) / 2 of A.
    let sym_degree = DVector::from_fn(n, |i, _| {
        0.5 * (input.row(i).sum() + input.column(i).sum())
    });
    if let Some(i) = sym_degree.iter().position(|d| *d <= 0.0) {
        return Err(Error::IsolatedNode { index: i });
    }

    let (degrees, operator) = match kind {
        LaplacianKind::Combinatorial => {
            let d = row_sums(input);
            let l = DMatrix::from_diagonal(&d) - input;
            (d, Operator::Real(l))
        }
        LaplacianKind::Symmetric | LaplacianKind::RandomWalk => {
            let d = row_sums(input);
            let inv_sqrt = d.map(|v| 1.0 / v.sqrt());
            let mut l = DMatrix::from_fn(n, n, |i, j| -input[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
            for i in 0..n {
                l[(i, i)] += 1.0;
            }
            (d, Operator::Real(l))
        }
        LaplacianKind::DirectedRw => {
            let d_out = row_sums(input);
            if let Some(i) = d_out.iter().position(|d| *d <= 0.0) {
                return Err(Error::IsolatedNode { index: i });
            }
            let mut l = DMatrix::from_fn(n, n, |i, j| {
                -0.5 * (input[(i, j)] / d_out[i] + input[(j, i)] / d_out[j])
            });
            for i in 0..n {
                l[(i, i)] += 1.0;
            }
            (d_out, Operator::Real(l))
        }
        LaplacianKind::Magnetic { theta } => {
            let (s, c) = theta.sin_cos();
            let mut re = DMatrix::from_fn(n, n, |i, j| -0.5 * (input[(i, j)] + input[(j, i)]) * c);
            let im = DMatrix::from_fn(n, n, |i, j| -0.5 * (input[(i, j)] - input[(j, i)]) * s);
            for i in 0..n {
                re[(i, i)] += sym_degree[i];
            }
            (sym_degree.clone(), Operator::Hermitian { re, im })
        }
    };

    Ok(TokenGraph {
        kind,
        weights: input.clone(),
        degrees,
        operator,
        nodes: (0..n).collect(),
        excluded: Vec::new(),
        dropped: Vec::new(),
    })
}

/// Full path from raw per-head attention to a token graph: special-token
/// exclusion, symmetrization (undirected kinds), head aggregation, isolated
/// node removal and operator construction.
///
/// Returns the graph; node provenance is available through
/// [`TokenGraph::nodes`], [`TokenGraph::excluded`] and [`TokenGraph::dropped`].
pub fn attention_graph(
    heads: &[DMatrix<f64>],
    special: &[bool],
    scheme: AggregationScheme,
    kind: LaplacianKind,
) -> Result<TokenGraph> {
    let first = heads
        .first()
        .ok_or_else(|| Error::Invalid("no attention heads".into()))?;
    let n = check_square(first, "head 0")?;
    if special.len() != n {
        return Err(Error::Shape(format!("{} token flags for {n} tokens", special.len())));
    }
    let (mut keep, excluded): (Vec<usize>, Vec<usize>) = if scheme.exclude_special {
        (0..n).partition(|&i| !special[i])
    } else {
        ((0..n).collect(), Vec::new())
    };

    let heads: Vec<DMatrix<f64>> = heads.iter().map(|h| select_nodes(h, &keep)).collect();
    let prepared = if kind.is_directed() {
        heads
    } else {
        heads.iter().map(symmetrize).collect::<Result<_>>()?
    };
    let mut agg = aggregate_heads(&prepared, scheme.weighting)?;

    let mut dropped = Vec::new();
    loop {
        let isolated: Vec<usize> = (0..agg.nrows())
            .filter(|&i| {
                let out = agg.row(i).sum();
                let into = agg.column(i).sum();
                out + into <= 0.0 || (kind == LaplacianKind::DirectedRw && out <= 0.0)
            })
            .collect();
        if isolated.is_empty() {
            break;
        }
        let local: Vec<usize> = (0..agg.nrows()).filter(|i| !isolated.contains(i)).collect();
        dropped.extend(isolated.iter().map(|&i| keep[i]));
        agg = select_nodes(&agg, &local);
        keep = local.iter().map(|&i| keep[i]).collect();
    }
    if keep.len() < 2 {
        return Err(Error::Degenerate(format!(
            "graph: {} nodes remain after exclusion and isolated-node removal",
            keep.len()
        )));
    }
    dropped.sort_unstable();

    let mut graph = build_laplacian(&agg, kind)?;
    graph.nodes = keep;
    graph.excluded = excluded;
    graph.dropped = dropped;
    Ok(graph)
}
