//! Dense symmetric kernels: sample covariance, eigendecomposition,
//! leave-out inverses and the Moore-Penrose pseudo-inverse.
//!
//! Leave-out covariances keep the full-sample divisor `n`, i.e.
//! `S_j = n^-1 sum_{i != j} x_i x_i'`, so that every `gamma_n = p / n`
//! factor in the moment estimators lines up with the full-sample scaling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold below which a Sherman-Morrison denominator is treated
/// as ill-conditioned and the downdate falls back to direct inversion.
const DOWNDATE_REL_TOL: f64 = 1e-8;

/// Default relative rank tolerance for [`pseudo_inverse`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// An `n x d` data matrix; rows are observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "data matrix needs at least 2 rows, got {}",
                values.nrows()
            )));
        }
        if values.ncols() < 1 {
            return Err(Error::InvalidInput("data matrix has no columns".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::InvalidInput(format!(
                "non-finite entry at row {r}, column {c}"
            )));
        }
        Ok(Self { values })
    }

    /// Builds a matrix from row-major observations.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::InvalidInput(format!(
                "row {bad} has {} columns, expected {d}",
                rows[bad].len()
            )));
        }
        Self::new(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Observation `i` as a column vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// New matrix made of the given rows, in order (rows may repeat).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let d = self.d();
        Self::new(DMatrix::from_fn(idx.len(), d, |r, c| {
            self.values[(idx[r], c)]
        }))
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: DVector<f64>,
    /// Column `k` is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.eigenvectors
            * DMatrix::from_diagonal(&self.eigenvalues)
            * self.eigenvectors.transpose()
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `S = n^-1 X'X`, symmetrized exactly.
pub fn sample_covariance(x: &DataMatrix) -> DMatrix<f64> {
    let n = x.n() as f64;
    let mut s = x.values.tr_mul(&x.values) / n;
    symmetrize(&mut s);
    s
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn check_symmetric(s: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !s.is_square() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let scale = max_abs(s).max(1.0);
    let asym = max_abs(&(s - s.transpose()));
    if asym > tol * scale {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
///
/// Eigenvector signs are normalized so that the largest-magnitude entry of
/// each vector is positive, which makes the output a deterministic function
/// of the input.
pub fn sym_eigen(s: &DMatrix<f64>, tol: f64) -> Result<EigenDecomposition> {
    check_symmetric(s, tol)?;
    let d = s.nrows();
    let max_iter = 1000 * d.max(1);
    let mut sym = s.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, max_iter)
        .ok_or(Error::EigenNoConvergence {
            iterations: max_iter,
        })?;

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let eigenvalues = DVector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, v)| {
                if v.abs() > bv {
                    (i, v.abs())
                } else {
                    (bi, bv)
                }
            })
            .0;
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Sample eigenvalues of `S = n^-1 X'X`, descending.
pub fn sample_eigenvalues(x: &DataMatrix) -> Result<Vec<f64>> {
    let s = sample_covariance(x);
    Ok(sym_eigen(&s, 1e-10)?.eigenvalues.iter().copied().collect())
}

/// Inverse of a symmetric positive-definite matrix (Cholesky, LU fallback).
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        let mut inv = ch.inverse();
        symmetrize(&mut inv);
        return Ok(inv);
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix is not invertible".into()))
}

/// Moore-Penrose inverse of a symmetric PSD matrix; eigenvalues at or below
/// `rank_tol * lambda_max` are treated as zero.
pub fn pseudo_inverse(s: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(s, 1e-8)?;
    let d = s.nrows();
    let lambda_max = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let mut out = DMatrix::zeros(d, d);
    if lambda_max <= 0.0 {
        return Ok(out);
    }
    let cutoff = rank_tol * lambda_max;
    for k in 0..d {
        let lambda = eig.eigenvalues[k];
        if lambda > cutoff {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lambda;
        }
    }
    symmetrize(&mut out);
    Ok(out)
}

/// Leave-out inverses computed by rank-one downdates of one full inverse.
///
/// With `S^-1` in hand, removing observation `x` from `S` gives
/// `(S - x x'/n)^-1 = S^-1 + S^-1 x x' S^-1 / (n - x' S^-1 x)`.
#[derive(Debug, Clone)]
pub struct LeaveOut<'a> {
    x: &'a DataMatrix,
    s_inv: DMatrix<f64>,
}

impl<'a> LeaveOut<'a> {
    /// Requires `d < n - 1` so that every leave-one-out covariance is
    /// invertible; leave-two-out additionally needs `d < n - 2`.
    pub fn new(x: &'a DataMatrix) -> Result<Self> {
        if x.d() + 1 >= x.n() {
            return Err(Error::InvalidInput(format!(
                "leave-one-out inverse needs d < n - 1 (d = {}, n = {})",
                x.d(),
                x.n()
            )));
        }
        let s_inv = spd_inverse(&sample_covariance(x))?;
        Ok(Self { x, s_inv })
    }

    pub fn full_inverse(&self) -> &DMatrix<f64> {
        &self.s_inv
    }

    /// `S_j^-1`.
    pub fn leave_one_out(&self, j: usize) -> Result<DMatrix<f64>> {
        self.check_index(j)?;
        self.downdate(&self.s_inv, &[j], j)
    }

    /// `S_ij^-1`, obtained by downdating `x_i` then `x_j`.
    pub fn leave_two_out(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i == j {
            return Err(Error::InvalidInput(format!(
                "leave-two-out needs distinct indices, got {i} twice"
            )));
        }
        if self.x.d() + 2 >= self.x.n() {
            return Err(Error::InvalidInput(format!(
                "leave-two-out inverse needs d < n - 2 (d = {}, n = {})",
                self.x.d(),
                self.x.n()
            )));
        }
        let first = self.downdate(&self.s_inv, &[i], i)?;
        self.downdate(&first, &[i, j], j)
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.x.n() {
            return Err(Error::InvalidInput(format!(
                "observation index {j} out of range (n = {})",
                self.x.n()
            )));
        }
        Ok(())
    }

    /// Downdates `inv` (the inverse with every row of `removed` except
    /// `next` already excluded) by observation `next`.
    fn downdate(
        &self,
        inv: &DMatrix<f64>,
        removed: &[usize],
        next: usize,
    ) -> Result<DMatrix<f64>> {
        let n = self.x.n() as f64;
        let xj = self.x.row(next);
        let u = inv * &xj;
        let den = n - xj.dot(&u);
        if den.abs() < DOWNDATE_REL_TOL * n {
            return self.direct(removed);
        }
        let mut out = inv + (&u * u.transpose()) / den;
        symmetrize(&mut out);
        Ok(out)
    }

    fn direct(&self, removed: &[usize]) -> Result<DMatrix<f64>> {
        direct_leave_out_inverse(self.x, removed)
    }
}

/// `(n^-1 sum_{i not in removed} x_i x_i')^-1` by explicit factorization.
pub fn direct_leave_out_inverse(x: &DataMatrix, removed: &[usize]) -> Result<DMatrix<f64>> {
    let n = x.n() as f64;
    let d = x.d();
    let mut s = DMatrix::zeros(d, d);
    for i in (0..x.n()).filter(|i| !removed.contains(i)) {
        let xi = x.row(i);
        s += &xi * xi.transpose();
    }
    s /= n;
    spd_inverse(&s).map_err(|_| {
        Error::Singular(format!("leave-out covariance without rows {removed:?}"))
    })
}

/// Convenience wrapper for a single `S_j^-1`.
pub fn loo_inverse(x: &DataMatrix, j: usize) -> Result<DMatrix<f64>> {
    LeaveOut::new(x)?.leave_one_out(j)
}

/// Convenience wrapper for a single `S_ij^-1`.
pub fn lto_inverse(x: &DataMatrix, i: usize, j: usize) -> Result<DMatrix<f64>> {
    LeaveOut::new(x)?.leave_two_out(i, j)
}
