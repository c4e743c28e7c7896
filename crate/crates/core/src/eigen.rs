//! Symmetric eigensolvers: a Lanczos iteration for the smallest eigenpair
//! with explicit deflation, and a dense fallback.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LanczosOutcome {
    pub value: f64,
    pub vector: DVector<f64>,
    /// `‖A v − λ v‖` of the returned pair.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn orthogonalize(v: &mut DVector<f64>, against: &[DVector<f64>]) {
    // Two passes of classical Gram-Schmidt.
    for _ in 0..2 {
        for q in against {
            let c = q.dot(v);
            v.axpy(-c, q, 1.0);
        }
    }
}

/// Deterministic start vector with no special alignment to graph structure.
pub fn default_start(n: usize) -> DVector<f64> {
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    DVector::from_fn(n, |i, _| ((i + 1) as f64 * GOLDEN).fract() - 0.5 + 1.0 / (i + 2) as f64)
}

/// Smallest eigenpair of the symmetric `op` restricted to the orthogonal
/// complement of `deflate` (orthonormal vectors).
///
/// Lanczos with full reorthogonalization. Stops when the Ritz residual falls
/// below `tol · max(1, |θ|)`, when the Krylov space is exhausted, or after
/// `max_iter` steps.
pub fn lanczos_smallest(
    op: &DMatrix<f64>,
    deflate: &[DVector<f64>],
    start: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<LanczosOutcome> {
    let n = op.nrows();
    let space = n.saturating_sub(deflate.len());
    if space == 0 {
        return Err(Error::Invalid("deflation leaves an empty space".into()));
    }
    let scale = op.amax().max(f64::MIN_POSITIVE);

    let mut q = start.clone();
    orthogonalize(&mut q, deflate);
    let mut norm = q.norm();
    if norm < 1e-12 {
        // Start vector lies in the deflated space; fall back to unit vectors.
        for k in 0..n {
            q = DVector::zeros(n);
            q[k] = 1.0;
            orthogonalize(&mut q, deflate);
            norm = q.norm();
            if norm > 1e-6 {
                break;
            }
        }
    }
    q /= norm;

    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut best: Option<LanczosOutcome> = None;
    let limit = space.min(max_iter.max(1));

    for j in 0..limit {
        basis.push(q.clone());
        let mut w = op * &q;
        orthogonalize(&mut w, deflate);
        let a = q.dot(&w);
        alpha.push(a);
        orthogonalize(&mut w, &basis);
        orthogonalize(&mut w, deflate);
        let b = w.norm();

        let k = alpha.len();
        let t = DMatrix::from_fn(k, k, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c {
                beta[r]
            } else if c + 1 == r {
                beta[c]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        let (idx, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        let s = eig.eigenvectors.column(idx);
        let ritz_residual = b * s[k - 1].abs();
        let exhausted = b <= 1e-13 * scale || j + 1 == limit;

        if ritz_residual <= tol * theta.abs().max(1.0) || exhausted {
            let mut v = DVector::zeros(n);
            for (qi, si) in basis.iter().zip(s.iter()) {
                v.axpy(*si, qi, 1.0);
            }
            v.normalize_mut();
            let residual = (op * &v - &v * theta).norm();
            let out = LanczosOutcome {
                value: theta,
                vector: v,
                residual,
                iterations: j + 1,
                converged: residual <= tol * theta.abs().max(1.0) * 10.0
                    || (exhausted && k == space),
            };
            if out.converged || exhausted {
                return Ok(out);
            }
            best = Some(out);
        }
        beta.push(b);
        q = w / b;
    }
    Ok(best.expect("loop returns on exhaustion"))
}

/// Dense eigendecomposition with ascending eigenvalues.
pub fn dense_sorted(op: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = op.nrows();
    let eig = SymmetricEigen::try_new(op.clone(), 1e-15, 0).ok_or(Error::Convergence {
        residual: f64::NAN,
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, c| eig.eigenvectors[(i, order[c])]);
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_smallest_of_diagonal() {
        let op = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0, 5.0]));
        let r = lanczos_smallest(&op, &[], &default_start(4), 1e-10, 100).unwrap();
        assert!((r.value - 1.0).abs() < 1e-10);
        assert!(r.converged);
    }

    #[test]
    fn deflation_skips_known_vector() {
        let op = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0, 5.0]));
        let mut e1 = DVector::zeros(4);
        e1[1] = 1.0;
        let r = lanczos_smallest(&op, &[e1], &default_start(4), 1e-10, 100).unwrap();
        assert!((r.value - 2.0).abs() < 1e-10);
    }

    #[test]
    fn dense_is_sorted() {
        let op = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (v, u) = dense_sorted(&op).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14 && (v[1] - 3.0).abs() < 1e-14);
        assert!((u.transpose() * &u - DMatrix::identity(2, 2)).amax() < 1e-14);
    }
}
