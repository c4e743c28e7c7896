//! One attention pattern, five Laplacians. Prints the Fiedler value of each
//! and checks the random-walk and symmetric spectra coincide.
//!
//!     cargo run --example token_graph_laplacians

use nalgebra::DMatrix;
use spectraprobe::graph::{attention_graph, AggregationScheme, HeadWeighting, LaplacianKind};
use spectraprobe::spectral::{fiedler, full_spectrum};

fn softmax_rows(scores: DMatrix<f64>) -> DMatrix<f64> {
    let mut a = scores.map(f64::exp);
    for mut row in a.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    a
}

fn main() -> spectraprobe::Result<()> {
    let n = 8;
    let heads: Vec<DMatrix<f64>> = (0..3)
        .map(|h| softmax_rows(DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3 + h * 5) % 11) as f64 / 4.0)))
        .collect();
    let mut special = vec![false; n];
    special[0] = true;

    let kinds = [
        LaplacianKind::Combinatorial,
        LaplacianKind::Symmetric,
        LaplacianKind::RandomWalk,
        LaplacianKind::DirectedRw,
        LaplacianKind::magnetic(0.2)?,
    ];
    let scheme = AggregationScheme::default();
    for kind in kinds {
        let g = attention_graph(&heads, &special, scheme, kind)?;
        let f = fiedler(&g)?;
        println!("{:<14} nodes={} lambda2={:.6} ({:?})", kind.name(), g.n(), f.value, f.method);
    }

    let sym = full_spectrum(&attention_graph(&heads, &special, scheme, LaplacianKind::Symmetric)?)?;
    let rw = full_spectrum(&attention_graph(&heads, &special, scheme, LaplacianKind::RandomWalk)?)?;
    let gap = sym.eigenvalues.iter().zip(&rw.eigenvalues).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |sym - rw| eigenvalue gap: {gap:.2e}");

    let uniform = AggregationScheme { weighting: HeadWeighting::Uniform, exclude_special: false };
    let g = attention_graph(&heads, &special, uniform, LaplacianKind::RandomWalk)?;
    println!("uniform, BOS kept: nodes={} lambda2={:.6}", g.n(), fiedler(&g)?.value);
    Ok(())
}
