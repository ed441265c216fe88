use rayon::prelude::*;

use super::dense::DenseMatrix;
use crate::error::{Error, Result};

const PARALLEL_WORK: usize = 1 << 15;

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing inside every row and no explicit
/// zeros are stored, so every row product sums in ascending column order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrixCSR {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrixCSR {
    /// Validates raw CSR arrays.
    pub fn try_new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 {
            return Err(Error::Contract(format!(
                "row_ptr has length {}, expected {}",
                row_ptr.len(),
                rows + 1
            )));
        }
        if row_ptr[0] != 0 || row_ptr[rows] != col_idx.len() || col_idx.len() != values.len() {
            return Err(Error::Contract(
                "row_ptr bounds disagree with col_idx/values lengths".into(),
            ));
        }
        for r in 0..rows {
            if row_ptr[r] > row_ptr[r + 1] {
                return Err(Error::Contract(format!("row_ptr decreases at row {r}")));
            }
            let cols_in_row = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cols_in_row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Contract(format!(
                    "column indices in row {r} are not strictly increasing"
                )));
            }
            if cols_in_row.last().is_some_and(|&c| c >= cols) {
                return Err(Error::Contract(format!("column index out of range in row {r}")));
            }
        }
        if values.contains(&0.0) {
            return Err(Error::Contract("explicit zero stored".into()));
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets in any order; duplicates are summed
    /// and entries that end up zero are dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Contract(format!(
                    "triplet ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            sorted.push((r, c, v));
        }
        // stable: duplicates are summed in input order
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut row_of = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_of.push(r);
                last = Some((r, c));
            }
        }
        let mut keep_cols = Vec::with_capacity(col_idx.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((r, c), v) in row_of.into_iter().zip(col_idx).zip(values) {
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx: keep_cols,
            values: keep_vals,
        })
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut row_ptr = Vec::with_capacity(m.rows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in m.row_iter() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: m.rows(),
            cols: m.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Range of storage positions belonging to row `r`.
    #[inline]
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }

    /// `(col, value)` pairs of row `r` in ascending column order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_range(r);
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    /// Value at `(r, c)`, zero when not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_range(r);
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    /// Same sparsity pattern with new values (zeros are not re-checked).
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // visiting rows in order keeps the new column indices sorted
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                let pos = next[c];
                col_idx[pos] = r;
                values[pos] = v;
                next[c] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// True when the matrix equals its transpose to within `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let t = self.transpose();
        if t.row_ptr != self.row_ptr || t.col_idx != self.col_idx {
            return false;
        }
        self.values
            .iter()
            .zip(&t.values)
            .all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Sparse × dense. Row `i` of the result sums `s[i,j] * d[j,:]` in ascending `j`,
    /// which is the order [`DenseMatrix::matmul`] uses on the densified operand.
    pub fn spmm(&self, d: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != d.rows() {
            return Err(Error::dims("spmm", self.shape(), d.shape()));
        }
        let m = d.cols();
        let mut out = DenseMatrix::zeros(self.rows, m);
        if m == 0 {
            return Ok(out);
        }
        let kernel = |(r, out_row): (usize, &mut [f64])| {
            for (c, v) in self.row(r) {
                for (o, &x) in out_row.iter_mut().zip(d.row(c)) {
                    *o += v * x;
                }
            }
        };
        if self.nnz() * m >= PARALLEL_WORK {
            out.data_mut().par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            out.data_mut().chunks_mut(m).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ · d`, scattered row by row without building the transpose.
    pub fn spmm_transposed(&self, d: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != d.rows() {
            return Err(Error::dims("spmm_transposed", (self.cols, self.rows), d.shape()));
        }
        let m = d.cols();
        let mut out = DenseMatrix::zeros(self.cols, m);
        for r in 0..self.rows {
            let src = d.row(r);
            for (c, v) in self.row(r) {
                for (o, &x) in out.row_mut(c).iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `diag(left) · self · diag(right)`.
    pub fn scale_rows_cols(&self, left: &[f64], right: &[f64]) -> Self {
        let mut values = self.values.clone();
        for r in 0..self.rows {
            for pos in self.row_range(r) {
                values[pos] *= left[r] * right[self.col_idx[pos]];
            }
        }
        self.with_values(values)
    }

    /// Entrywise `alpha * self + beta * other`, union of sparsity patterns.
    pub fn linear_combination(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::dims("sparse linear combination", self.shape(), other.shape()));
        }
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.rows {
            triplets.extend(self.row(r).map(|(c, v)| (r, c, alpha * v)));
            triplets.extend(other.row(r).map(|(c, v)| (r, c, beta * v)));
        }
        Self::from_triplets(self.rows, self.cols, &triplets)
    }

    /// Matrix with a unit value at every stored position plus the diagonal.
    pub fn closed_pattern(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz() + self.rows);
        for r in 0..self.rows {
            triplets.push((r, r, 1.0));
            triplets.extend(self.row(r).filter(|&(c, _)| c != r).map(|(c, _)| (r, c, 1.0)));
        }
        Self::from_triplets(self.rows, self.cols, &triplets).expect("indices come from a valid matrix")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(rows: usize, cols: usize, density: f64, rng: &mut ChaCha8Rng) -> SparseMatrixCSR {
        let mut triplets = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if rng.gen::<f64>() < density {
                    triplets.push((r, c, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        SparseMatrixCSR::from_triplets(rows, cols, &triplets).unwrap()
    }

    #[test]
    fn sparse_identity_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = DenseMatrix::uniform(4, 3, -1.0, 1.0, &mut rng);
        assert_eq!(SparseMatrixCSR::identity(4).spmm(&m).unwrap(), m);
    }

    #[test]
    fn random_product_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_sparse(50, 50, 0.1, &mut rng);
        let d = DenseMatrix::uniform(50, 8, -1.0, 1.0, &mut rng);
        // oracle: densify and use the textbook triple loop
        let dense = s.to_dense();
        let mut oracle = DenseMatrix::zeros(50, 8);
        for i in 0..50 {
            for j in 0..8 {
                let mut acc = 0.0;
                for k in 0..50 {
                    acc += dense.get(i, k) * d.get(k, j);
                }
                oracle.set(i, j, acc);
            }
        }
        assert!(s.spmm(&d).unwrap().max_abs_diff(&oracle) <= 1e-12);
    }

    #[test]
    fn empty_row_gives_zero_row() {
        let s = SparseMatrixCSR::from_triplets(3, 3, &[(0, 1, 2.0), (2, 0, 1.0)]).unwrap();
        let d = DenseMatrix::filled(3, 2, 1.5);
        let out = s.spmm(&d).unwrap();
        assert_eq!(out.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn spmm_shape_mismatch() {
        let s = SparseMatrixCSR::identity(3);
        assert!(matches!(
            s.spmm(&DenseMatrix::zeros(2, 2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let s = SparseMatrixCSR::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, -1.0), (1, 1, 2.0), (1, 1, 3.0)])
            .unwrap();
        assert_eq!(s.nnz(), 1);
        assert_eq!(s.get(1, 1), 5.0);
    }

    #[test]
    fn try_new_rejects_broken_invariants() {
        assert!(SparseMatrixCSR::try_new(2, 2, vec![0, 1, 2], vec![1, 0], vec![1.0, 1.0]).is_ok());
        assert!(SparseMatrixCSR::try_new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrixCSR::try_new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(SparseMatrixCSR::try_new(1, 2, vec![0, 1], vec![0], vec![0.0]).is_err());
        assert!(SparseMatrixCSR::try_new(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
    }

    #[test]
    fn transposed_product_matches_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_sparse(7, 5, 0.3, &mut rng);
        let d = DenseMatrix::uniform(7, 3, -1.0, 1.0, &mut rng);
        let a = s.spmm_transposed(&d).unwrap();
        let b = s.transpose().spmm(&d).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14);
        assert_eq!(s.transpose().transpose(), s);
    }

    proptest! {
        #[test]
        fn spmm_is_bitwise_dense_matmul(seed in 0u64..10_000, rows in 1usize..20, inner in 1usize..20, cols in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_sparse(rows, inner, 0.3, &mut rng);
            let d = DenseMatrix::uniform(inner, cols, -2.0, 2.0, &mut rng);
            let sparse = s.spmm(&d).unwrap();
            let dense = s.to_dense().matmul(&d).unwrap();
            prop_assert_eq!(sparse.data(), dense.data());
        }

        #[test]
        fn binary_round_trip_is_exact(seed in 0u64..10_000, rows in 0usize..12, cols in 0usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..rows * cols).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
            let m = DenseMatrix::new(rows, cols, data).unwrap();
            prop_assert_eq!(SparseMatrixCSR::from_dense(&m).to_dense(), m);
        }
    }
}
