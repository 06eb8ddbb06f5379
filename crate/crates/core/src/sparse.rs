//! Minimal compressed-sparse-column matrix used for operator assembly, plus a
//! direct-solver wrapper. Factorization is delegated to `faer`'s sparse LU;
//! one factorization serves any number of right-hand sides.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use num_complex::Complex64;

use crate::error::{CoreError, Result};

/// Complex CSC matrix with sorted, duplicate-free columns.
#[derive(Debug, Clone)]
pub struct CsMat {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl CsMat {
    /// Build an `n x n` matrix from unordered triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, Complex64)]) -> Self {
        let mut entries: Vec<(usize, usize, Complex64)> = triplets.to_vec();
        entries.sort_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<Complex64> = Vec::with_capacity(entries.len());
        for &(r, c, v) in &entries {
            debug_assert!(r < n && c < n);
            if let (Some(&last_r), true) = (row_idx.last(), col_ptr[c + 1] > col_ptr[c]) {
                if last_r == r {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            row_idx.push(r);
            values.push(v);
            col_ptr[c + 1] += 1;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        CsMat {
            n,
            col_ptr,
            row_idx,
            values,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of column `c` as `(row, value)` pairs.
    #[inline]
    pub fn col(&self, c: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        self.row_idx[range.clone()]
            .iter()
            .zip(&self.values[range])
            .map(|(&r, &v)| (r, v))
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let range = self.col_ptr[c]..self.col_ptr[c + 1];
        match self.row_idx[range.clone()].binary_search(&r) {
            Ok(k) => self.values[range.start + k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        y.fill(Complex64::new(0.0, 0.0));
        for c in 0..self.n {
            let xc = x[c];
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
    }

    /// Largest column absolute sum (the induced 1-norm).
    pub fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|c| {
                self.values[self.col_ptr[c]..self.col_ptr[c + 1]]
                    .iter()
                    .map(|v| v.norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Maximum entrywise asymmetry `|A - A^T|`; zero for symmetric matrices.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let d = (self.values[k] - self.get(c, r)).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// `A^H A` for a *symmetric* `A` (so rows equal columns), scaled by `scale`.
    ///
    /// Computed column by column: `(A^H A) e_j = A^H (A e_j)`, expanding the
    /// conjugated columns selected by the sparse intermediate vector.
    pub fn herm_normal_of_symmetric(&self, scale: f64) -> CsMat {
        debug_assert!(self.max_asymmetry() < 1e-12 * self.norm1().max(1.0));
        let n = self.n;
        let mut triplets: Vec<(usize, usize, Complex64)> = Vec::with_capacity(13 * n);
        let mut acc: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
        let mut touched: Vec<usize> = Vec::with_capacity(32);
        for j in 0..n {
            for (r, aj) in self.col(j) {
                // conj(column r) accumulates with weight a_rj
                for k in self.col_ptr[r]..self.col_ptr[r + 1] {
                    let i = self.row_idx[k];
                    if acc[i] == Complex64::new(0.0, 0.0) {
                        touched.push(i);
                    }
                    acc[i] += self.values[k].conj() * aj;
                }
            }
            for &i in &touched {
                triplets.push((i, j, acc[i] * scale));
                acc[i] = Complex64::new(0.0, 0.0);
            }
            touched.clear();
        }
        CsMat::from_triplets(n, &triplets)
    }

    /// Adds `d[k]` to every diagonal entry (entries must already exist).
    pub fn add_diagonal(&mut self, d: &[Complex64]) {
        debug_assert_eq!(d.len(), self.n);
        for c in 0..self.n {
            let range = self.col_ptr[c]..self.col_ptr[c + 1];
            match self.row_idx[range.clone()].binary_search(&c) {
                Ok(k) => self.values[range.start + k] += d[c],
                Err(_) => panic!("missing structural diagonal at {c}"),
            }
        }
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, c64>> {
        let mut trips: Vec<Triplet<usize, usize, c64>> = Vec::with_capacity(self.nnz());
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                trips.push(Triplet::new(self.row_idx[k], c, self.values[k]));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &trips)
            .map_err(|e| CoreError::FactorizationFailed(format!("matrix assembly: {e:?}")))
    }

    /// Sparse LU factorization of the matrix.
    pub fn factorize(&self) -> Result<SparseLu> {
        let mat = self.to_faer()?;
        let lu = mat
            .sp_lu()
            .map_err(|e| CoreError::FactorizationFailed(format!("{e:?}")))?;
        Ok(SparseLu { n: self.n, lu })
    }
}

/// Opaque direct factorization handle, reusable across right-hand sides.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, c64>,
}

impl SparseLu {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` for one right-hand side.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        self.solve_many(&[b.to_vec()]).pop().unwrap()
    }

    /// Solves against several right-hand sides with one backward/forward sweep
    /// batch.
    pub fn solve_many(&self, bs: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        let ncols = bs.len();
        let mut rhs = Mat::<c64>::zeros(self.n, ncols);
        for (c, b) in bs.iter().enumerate() {
            debug_assert_eq!(b.len(), self.n);
            for (r, &v) in b.iter().enumerate() {
                rhs[(r, c)] = v;
            }
        }
        let x = self.lu.solve(&rhs);
        (0..ncols)
            .map(|c| (0..self.n).map(|r| x[(r, c)]).collect())
            .collect()
    }
}
