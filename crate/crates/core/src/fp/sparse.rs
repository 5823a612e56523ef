//! Compressed sparse row storage and a thin wrapper over faer's sparse LU.

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseMatrix {
    /// Duplicates are summed; explicit zeros are kept so the pattern is stable.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        });
    }

    pub fn transpose(&self) -> Self {
        let t = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.n, t)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            vals: self.vals.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for (k, &c) in self.cols.iter().enumerate() {
            s[c] += self.vals[k];
        }
        s
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Smallest off-diagonal entry (0 when there are none).
    pub fn min_offdiag(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| self.row(i).filter(move |(j, _)| *j != i).map(|(_, v)| v))
            .fold(0.0, f64::min)
    }

    /// Factor `a I + b M`.
    pub fn factor_affine(&self, a: f64, b: f64) -> Result<Factored> {
        let mut t: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(self.nnz() + self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.push(Triplet::new(i, j, b * v));
            }
            t.push(Triplet::new(i, i, a));
        }
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &t)
            .map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        let lu = m.sp_lu().map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        Ok(Factored { n: self.n, lu })
    }
}

/// A factored sparse matrix.
pub struct Factored {
    n: usize,
    lu: Lu<usize, f64>,
}

impl Factored {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut m = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        self.solve_mat(&mut m)?;
        Ok(m.col_as_slice(0).to_vec())
    }

    /// Solve in place for every column.
    pub fn solve_mat(&self, rhs: &mut Mat<f64>) -> Result<()> {
        self.lu.solve_in_place_with_conj(Conj::No, rhs.as_mut());
        for j in 0..rhs.ncols() {
            if rhs.col_as_slice(j).iter().any(|v| !v.is_finite()) {
                return Err(Error::LinearSolve("non-finite solution".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_and_transpose() {
        let m = SparseMatrix::from_triplets(3, vec![(0, 1, 2.0), (2, 0, 1.0), (0, 1, 1.0), (1, 1, -4.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]), vec![3.0, -4.0, 1.0]);
        let t = m.transpose();
        assert_eq!(t.matvec(&[1.0, 0.0, 0.0]), vec![0.0, 3.0, 0.0]);
        assert_eq!(m.col_sums(), vec![1.0, -1.0, 0.0]);
        assert_eq!(m.min_offdiag(), 0.0);
    }

    #[test]
    fn factor_solves() {
        let m = SparseMatrix::from_triplets(2, vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]);
        let f = m.factor_affine(1.0, 1.0).unwrap();
        let x = f.solve(&[4.0, 5.0]).unwrap();
        // (I + M) x = rhs with I + M = [[3,1],[1,4]]
        assert!((3.0 * x[0] + x[1] - 4.0).abs() < 1e-12);
        assert!((x[0] + 4.0 * x[1] - 5.0).abs() < 1e-12);
    }
}
