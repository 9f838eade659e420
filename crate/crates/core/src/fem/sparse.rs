//! Symmetric sparse matrices and the two SPD solvers used by the scheme.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Compressed-row sparsity pattern with sorted column indices. Both
/// triangles are stored so matrix-vector products need no special casing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Pattern of a finite element matrix: every pair of dofs sharing a cell.
    pub fn from_cells(n: usize, cell_dofs: &[usize], dofs_per_cell: usize) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for cell in cell_dofs.chunks_exact(dofs_per_cell) {
            for &i in cell {
                rows[i].extend_from_slice(cell);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        SparsityPattern { n, row_ptr, col_idx }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Position of entry `(i, j)` in the value array.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&j).ok().map(|k| start + k)
    }
}

/// Symmetric matrix over a shared [`SparsityPattern`].
#[derive(Debug, Clone)]
pub struct SymSparseMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SymSparseMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        SymSparseMatrix { pattern, values }
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.find(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Row `i` as (column, value) pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.pattern.row_ptr[i], self.pattern.row_ptr[i + 1]);
        self.pattern.col_idx[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[k] * x[p.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let p = &self.pattern;
        let mut total = 0.0;
        for i in 0..self.dim() {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[k] * x[p.col_idx[k]];
            }
            total += x[i] * s;
        }
        total
    }

    /// `self + scale * other`; both must share one pattern.
    pub fn add_scaled(&self, scale: f64, other: &SymSparseMatrix) -> SymSparseMatrix {
        assert!(Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern);
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + scale * b).collect();
        SymSparseMatrix { pattern: Arc::clone(&self.pattern), values }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim()).all(|i| self.row(i).all(|(j, v)| self.get(j, i).to_bits() == v.to_bits()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// Solver selection for SPD systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Cholesky,
    Pcg,
}

/// Envelope (skyline) Cholesky factor `A = L Lᵀ`. Row `i` of `L` is stored
/// from its first structural nonzero column up to the diagonal.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl CholeskyFactor {
    pub fn new(a: &SymSparseMatrix) -> Result<Self> {
        let n = a.dim();
        let mut first = Vec::with_capacity(n);
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            let f = a.pattern.row(i).first().copied().unwrap_or(i).min(i);
            first.push(f);
            start.push(start[i] + i - f + 1);
        }
        let mut data = vec![0.0; start[n]];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    data[start[i] + j - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let ri = start[i];
            for j in fi..=i {
                let fj = first[j];
                let rj = start[j];
                let k0 = fi.max(fj);
                let mut s = data[ri + j - fi];
                for k in k0..j {
                    s -= data[ri + k - fi] * data[rj + k - fj];
                }
                if j < i {
                    data[ri + j - fi] = s / data[rj + j - fj];
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::LinearSolveFailed(format!("nonpositive pivot {s:e} at row {i}")));
                    }
                    data[ri + i - fi] = s.sqrt();
                }
            }
        }
        Ok(CholeskyFactor { first, start, data })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.first.len();
        let mut y = b.to_vec();
        for i in 0..n {
            let (fi, ri) = (self.first[i], self.start[i]);
            let mut s = y[i];
            for k in fi..i {
                s -= self.data[ri + k - fi] * y[k];
            }
            y[i] = s / self.data[ri + i - fi];
        }
        for i in (0..n).rev() {
            let (fi, ri) = (self.first[i], self.start[i]);
            y[i] /= self.data[ri + i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.data[ri + k - fi] * yi;
            }
        }
        y
    }
}

/// Jacobi-preconditioned conjugate gradients. Stops when
/// `‖r‖ ≤ rel_tol · ‖b‖`; returns the iterate and the iteration count.
pub fn pcg(a: &SymSparseMatrix, b: &[f64], x0: Option<&[f64]>, rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = a.dim();
    let diag = a.diagonal();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::LinearSolveFailed("nonpositive diagonal in PCG".into()));
    }
    let bnorm = norm2(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let ax = a.mul_vec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..=max_iter {
        let rn = norm2(&r);
        if !rn.is_finite() {
            break;
        }
        if rn <= rel_tol * bnorm {
            return Ok((x, it));
        }
        if it == max_iter {
            break;
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolveFailed("matrix not positive definite in PCG".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolveFailed(format!("PCG did not reach relative residual {rel_tol:e} in {max_iter} iterations")))
}

/// Solve `A x = b` with the requested method.
pub fn solve_spd(a: &SymSparseMatrix, b: &[f64], kind: SolverKind, rel_tol: f64) -> Result<Vec<f64>> {
    match kind {
        SolverKind::Cholesky => Ok(CholeskyFactor::new(a)?.solve(b)),
        SolverKind::Pcg => pcg(a, b, None, rel_tol, 10 * a.dim().max(1)).map(|(x, _)| x),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, d: f64, o: f64) -> SymSparseMatrix {
        let cells: Vec<usize> = (0..n - 1).flat_map(|i| [i, i + 1]).collect();
        let pattern = Arc::new(SparsityPattern::from_cells(n, &cells, 2));
        let mut m = SymSparseMatrix::zeros(Arc::clone(&pattern));
        for i in 0..n {
            for j in pattern.row(i).to_vec() {
                let k = pattern.find(i, j).unwrap();
                m.values_mut()[k] = if i == j { d } else { o };
            }
        }
        m
    }

    #[test]
    fn cholesky_and_pcg_agree() {
        let a = tridiag(50, 4.0, -1.0);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let x1 = solve_spd(&a, &b, SolverKind::Cholesky, 1e-12).unwrap();
        let x2 = solve_spd(&a, &b, SolverKind::Pcg, 1e-13).unwrap();
        let r = a.mul_vec(&x1);
        for i in 0..50 {
            assert!((r[i] - b[i]).abs() < 1e-13);
            assert!((x1[i] - x2[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = tridiag(5, 1.0, -2.0);
        assert!(matches!(CholeskyFactor::new(&a), Err(Error::LinearSolveFailed(_))));
    }

    #[test]
    fn pattern_lookup() {
        let a = tridiag(4, 2.0, -1.0);
        assert_eq!(a.get(1, 2), -1.0);
        assert_eq!(a.get(0, 3), 0.0);
        assert!(a.is_symmetric());
        assert_eq!(a.quadratic_form(&[1.0; 4]), 2.0);
    }
}
