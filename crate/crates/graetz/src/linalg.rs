//! Small linear-algebra toolbox shared by the solver modules: CSR
//! matrices for assembly and matrix-vector products, wrappers around
//! `faer` sparse factorizations (including a grounded solver for the
//! consistently singular pure-Neumann/periodic Laplacian), and the dense
//! helpers used by the coefficient-space algebra.

use faer::prelude::*;
use faer::sparse::SparseColMat;
use faer::Side;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with `f64` entries. Duplicate triplets
/// are summed on construction.
#[derive(Debug, Clone)]
pub struct CsrMat {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMat {
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets.to_vec();
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            debug_assert!(r < n_rows && c < n_cols);
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for k in 0..n_rows {
            row_ptr[k + 1] += row_ptr[k];
        }
        let col_idx = merged.iter().map(|e| e.1).collect();
        let vals = merged.iter().map(|e| e.2).collect();
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    /// Bilinear form xᵀ A y.
    pub fn quad(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.n_rows {
            let mut row = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.vals[k] * y[self.col_idx[k]];
            }
            acc += x[r] * row;
        }
        acc
    }

    /// Column sums, i.e. Aᵀ·1 (= A·1 for symmetric matrices).
    pub fn row_sums(&self) -> Vec<f64> {
        let ones = vec![1.0; self.n_cols];
        self.matvec(&ones)
    }

    /// Largest |A_ij − A_ji| over stored entries (0 for exactly
    /// symmetric assembly).
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let v = self.vals[k];
                let mut vt = 0.0;
                for kk in self.row_ptr[c]..self.row_ptr[c + 1] {
                    if self.col_idx[kk] == r {
                        vt = self.vals[kk];
                        break;
                    }
                }
                worst = worst.max((v - vt).abs());
            }
        }
        worst
    }

    pub fn to_faer(&self) -> SparseColMat<usize, f64> {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                triplets.push((r, self.col_idx[k], self.vals[k]));
            }
        }
        SparseColMat::try_new_from_triplets(self.n_rows, self.n_cols, &triplets)
            .expect("CSR to faer conversion cannot fail on valid indices")
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] += self.vals[k];
            }
        }
        m
    }
}

/// Vector helpers over plain slices.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= alpha;
    }
}

pub fn col_from_slice(x: &[f64]) -> Mat<f64> {
    Mat::from_fn(x.len(), 1, |i, _| x[i])
}

pub fn col_to_vec(m: &Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

/// Direct solver for the lateral operator K = K_σ + R_a.
///
/// When the constants are controlled K is positive definite and a sparse
/// Cholesky factorization is used directly. Otherwise K is consistently
/// singular with nullspace `span{1}`: one vertex is grounded, the reduced
/// matrix factorized, and solutions are returned as the zero-mean
/// representative of the quotient (mean taken with the lumped area
/// weights). Loads must then have zero sum, which [`KSolver::solve`]
/// checks against `tol × ‖load‖₁`.
pub enum KSolver {
    Definite {
        llt: faer::sparse::linalg::solvers::Cholesky<usize, f64>,
    },
    Grounded {
        llt: faer::sparse::linalg::solvers::Cholesky<usize, f64>,
        ground: usize,
        /// lumped weights w_i = ∫ φ_i used for the zero-mean representative
        weights: Vec<f64>,
        total_weight: f64,
        n: usize,
    },
}

impl KSolver {
    /// Factorizes K (positive definite case).
    pub fn definite(k: &CsrMat) -> Result<Self> {
        let llt = k
            .to_faer()
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::LinearSolve(format!("Cholesky of K failed: {e:?}")))?;
        Ok(KSolver::Definite { llt })
    }

    /// Factorizes K with one grounded vertex (singular consistent case).
    pub fn grounded(k: &CsrMat, weights: Vec<f64>) -> Result<Self> {
        let n = k.n_rows;
        assert!(n > 1, "cannot ground a 1x1 system");
        let ground = n - 1;
        let mut triplets = Vec::with_capacity(k.nnz());
        for r in 0..n {
            if r == ground {
                continue;
            }
            for idx in k.row_ptr[r]..k.row_ptr[r + 1] {
                let c = k.col_idx[idx];
                if c != ground {
                    triplets.push((r, c, k.vals[idx]));
                }
            }
        }
        let reduced = SparseColMat::try_new_from_triplets(n - 1, n - 1, &triplets)
            .map_err(|e| Error::LinearSolve(format!("grounded K assembly failed: {e:?}")))?;
        let llt = reduced
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::LinearSolve(format!("Cholesky of grounded K failed: {e:?}")))?;
        let total_weight = weights.iter().sum();
        Ok(KSolver::Grounded {
            llt,
            ground,
            weights,
            total_weight,
            n,
        })
    }

    pub fn is_grounded(&self) -> bool {
        matches!(self, KSolver::Grounded { .. })
    }

    /// Solves K s = load. In the grounded case the load must have zero
    /// sum; the returned representative has zero weighted mean.
    pub fn solve(&self, load: &[f64]) -> Result<Vec<f64>> {
        match self {
            KSolver::Definite { llt } => {
                let b = col_from_slice(load);
                Ok(col_to_vec(&llt.solve(&b)))
            }
            KSolver::Grounded {
                llt,
                ground,
                weights,
                total_weight,
                n,
            } => {
                let sum: f64 = load.iter().sum();
                let scale_ref: f64 = load.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
                if sum.abs() > 1e-8 * scale_ref {
                    return Err(Error::LinearSolve(format!(
                        "singular K: load has nonzero sum {sum:.3e} (relative {:.3e})",
                        sum.abs() / scale_ref
                    )));
                }
                let mut b = Mat::zeros(n - 1, 1);
                for r in 0..*n {
                    if r < *ground {
                        b[(r, 0)] = load[r];
                    }
                }
                let x = llt.solve(&b);
                let mut s = vec![0.0; *n];
                for r in 0..n - 1 {
                    s[r] = x[(r, 0)];
                }
                // zero weighted mean representative
                let mean = dot(weights, &s) / total_weight;
                for v in &mut s {
                    *v -= mean;
                }
                Ok(s)
            }
        }
    }

    /// Removes the weighted mean (quotient representative). No-op for the
    /// definite case.
    pub fn zero_mean(&self, s: &mut [f64]) {
        if let KSolver::Grounded {
            weights,
            total_weight,
            ..
        } = self
        {
            let mean = dot(weights, s) / total_weight;
            for v in s {
                *v -= mean;
            }
        }
    }
}

/// Eigendecomposition of a dense symmetric matrix; returns eigenvalues in
/// ascending order with matching orthonormal columns.
pub fn sym_eigen(a: &Mat<f64>) -> (Vec<f64>, Mat<f64>) {
    let evd = a.selfadjoint_eigendecomposition(Side::Lower);
    let s = evd.s().column_vector();
    let n = a.nrows();
    let vals: Vec<f64> = (0..n).map(|i| s[i]).collect();
    let vecs = evd.u().to_owned();
    (vals, vecs)
}

/// Generalized symmetric-definite eigenproblem A x = μ B x with B
/// positive definite, solved densely via B^(−1/2): returns ascending
/// eigenvalues and the matching B-orthonormal eigenvectors (columns).
pub fn dense_generalized_sym_eigen(a: &Mat<f64>, b: &Mat<f64>) -> (Vec<f64>, Mat<f64>) {
    let n = a.nrows();
    let (bvals, bvecs) = sym_eigen(b);
    assert!(
        bvals[0] > 0.0,
        "B must be positive definite (min eig {})",
        bvals[0]
    );
    // B^(-1/2) = Q Λ^(-1/2) Qᵀ
    let mut bis = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += bvecs[(i, k)] * bvecs[(j, k)] / bvals[k].sqrt();
            }
            bis[(i, j)] = acc;
        }
    }
    let m = &bis * &(a * &bis);
    let (vals, y) = sym_eigen(&m);
    let x = &bis * &y;
    (vals, x)
}

/// Deterministic pseudo-random stream (splitmix64) for reproducible
/// starting vectors; not used for anything statistical.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [−1, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
    }
}

/// Spectral radius of a dense real matrix (largest |λ| over the complex
/// spectrum).
pub fn dense_spectral_radius(a: &Mat<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let eigs: Vec<faer::complex_native::c64> = a.eigenvalues();
    eigs.iter()
        .map(|z| (z.re * z.re + z.im * z.im).sqrt())
        .fold(0.0, f64::max)
}

/// Complex spectrum of a dense real matrix as `(re, im)` pairs.
pub fn dense_eigenvalues(a: &Mat<f64>) -> Vec<(f64, f64)> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let eigs: Vec<faer::complex_native::c64> = a.eigenvalues();
    eigs.iter().map(|z| (z.re, z.im)).collect()
}

/// Largest singular value of a dense real matrix.
pub fn dense_operator_norm(a: &Mat<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let svd = a.singular_values();
    svd.first().copied().unwrap_or(0.0)
}

/// Formats a float like C's `%.12e` (two-digit signed exponent), used for
/// byte-stable CSV output.
pub fn fmt_e(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{:.12e}", x);
    // "1.234567890123e5" → "1.234567890123e+05"
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("valid exponent");
    format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_sums_duplicates_and_multiplies() {
        let a = CsrMat::from_triplets(
            2,
            3,
            &[(0, 0, 1.0), (0, 0, 2.0), (1, 2, 4.0), (0, 1, -1.0)],
        );
        assert_eq!(a.nnz(), 3);
        let y = a.matvec(&[1.0, 2.0, 3.0]);
        assert_eq!(y, vec![1.0, 12.0]);
        assert_eq!(a.row_sums(), vec![2.0, 4.0]);
    }

    #[test]
    fn grounded_solver_zero_mean() {
        // 1D Neumann Laplacian on 4 nodes (singular, nullspace = constants)
        let k = CsrMat::from_triplets(
            4,
            4,
            &[
                (0, 0, 1.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (1, 2, -1.0),
                (2, 1, -1.0),
                (2, 2, 2.0),
                (2, 3, -1.0),
                (3, 2, -1.0),
                (3, 3, 1.0),
            ],
        );
        let solver = KSolver::grounded(&k, vec![1.0; 4]).unwrap();
        let load = vec![1.0, -1.0, 1.0, -1.0];
        let s = solver.solve(&load).unwrap();
        let r = k.matvec(&s);
        for (ri, li) in r.iter().zip(&load) {
            assert!((ri - li).abs() < 1e-12, "residual {ri} vs {li}");
        }
        assert!(s.iter().sum::<f64>().abs() < 1e-12);
        // inconsistent load rejected
        assert!(solver.solve(&[1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn fmt_e_matches_c_style() {
        assert_eq!(fmt_e(1.0), "1.000000000000e+00");
        assert_eq!(fmt_e(-0.015625), "-1.562500000000e-02");
        assert_eq!(fmt_e(3.5e10), "3.500000000000e+10");
        assert_eq!(fmt_e(0.0), "0.000000000000e+00");
    }

    #[test]
    fn dense_helpers() {
        let a = faer::mat![[0.0, -2.0], [2.0, 0.0]];
        assert!((dense_spectral_radius(&a) - 2.0).abs() < 1e-12);
        let eigs = dense_eigenvalues(&a);
        assert_eq!(eigs.len(), 2);
        assert!((dense_operator_norm(&a) - 2.0).abs() < 1e-12);
        let m = faer::mat![[2.0, 1.0], [1.0, 2.0]];
        let (vals, _) = sym_eigen(&m);
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
    }
}
