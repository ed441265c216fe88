use super::AttributedGraph;
use crate::linalg::SparseMatrixCSR;

/// `D^(-1/2) · M · D^(-1/2)` with `D` the row sums of `M`. Rows summing to zero stay zero.
pub fn symmetric_normalize(m: &SparseMatrixCSR) -> SparseMatrixCSR {
    let degree = m.row_sums();
    let mut triplets = Vec::with_capacity(m.nnz());
    for r in 0..m.rows() {
        for (c, v) in m.row(r) {
            let d = degree[r] * degree[c];
            if d > 0.0 {
                triplets.push((r, c, v / d.sqrt()));
            }
        }
    }
    SparseMatrixCSR::from_triplets(m.rows(), m.cols(), &triplets).expect("indices come from m")
}

/// Renormalized propagation matrix `D̃^(-1/2) (A + I) D̃^(-1/2)`, `d̃ = degree + 1`.
pub fn normalize_adjacency(g: &AttributedGraph) -> SparseMatrixCSR {
    let a = g.adjacency();
    let with_loops = a
        .linear_combination(1.0, &SparseMatrixCSR::identity(a.rows()), 1.0)
        .expect("square adjacency");
    symmetric_normalize(&with_loops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, edges: &[(usize, usize)]) -> AttributedGraph {
        AttributedGraph::from_edges(
            "t",
            DenseMatrix::zeros(n, 1),
            vec![0; n],
            1,
            (0..n).map(|i| i.to_string()).collect(),
            edges,
        )
        .unwrap()
        .0
    }

    /// Dense power iteration on `M²` (positive semidefinite, so it converges to `ρ(M)²`).
    fn spectral_radius_oracle(m: &DenseMatrix) -> f64 {
        let n = m.rows();
        let mut v = DenseMatrix::filled(n, 1, 1.0);
        v.data_mut()[0] += 0.37;
        let mut rho2 = 0.0;
        for _ in 0..2000 {
            let w = m.matmul(&m.matmul(&v).unwrap()).unwrap();
            let norm = w.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            let vnorm = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            rho2 = norm / vnorm;
            v = w.scale(1.0 / norm);
        }
        rho2.sqrt()
    }

    #[test]
    fn isolated_node() {
        let a = normalize_adjacency(&graph(1, &[]));
        assert_eq!(a.to_dense(), DenseMatrix::from_rows(&[[1.0]]).unwrap());
    }

    #[test]
    fn two_node_path() {
        let a = normalize_adjacency(&graph(2, &[(0, 1)]));
        assert_eq!(a.to_dense(), DenseMatrix::filled(2, 2, 0.5));
    }

    #[test]
    fn entries_follow_degree_formula() {
        let g = graph(4, &[(0, 1), (1, 2), (1, 3)]);
        let a = normalize_adjacency(&g);
        let deg = [2.0, 4.0, 2.0, 2.0];
        for i in 0..4 {
            for j in 0..4 {
                let aij = if i == j || g.adjacency().get(i, j) != 0.0 { 1.0 } else { 0.0 };
                let expect = aij / f64::sqrt(deg[i] * deg[j]);
                assert!((a.get(i, j) - expect).abs() < 1e-15);
            }
        }
        assert!(a.is_symmetric(0.0));
    }

    #[test]
    fn spectral_radius_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..8 {
            let n = rng.gen_range(2..=200);
            let p = rng.gen_range(0.0..0.2);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.gen::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            let a = normalize_adjacency(&graph(n, &edges));
            let rho = spectral_radius_oracle(&a.to_dense());
            assert!(rho <= 1.0 + 1e-9, "trial {trial}: rho = {rho}");
        }
    }
}
