//! Finite-dimensional *-algebra core: complex n x n matrices under the
//! normalized trace state, functional calculus, and superoperators.
//!
//! Superoperator matrix forms use the column-stacking convention
//! vec(x)[i + n*j] = x[(i, j)], under which the sandwich map h -> x h y
//! has the tensor form transpose(y) (x) x.

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{Eig, Eigh, Inverse, UPLO};
use num_complex::Complex64;

use crate::error::{CoreError, Result};

pub type Matrix = Array2<Complex64>;

pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> Matrix {
    Array2::eye(n)
}

pub fn scalar(n: usize, v: Complex64) -> Matrix {
    Array2::eye(n) * v
}

pub fn adjoint(x: &Matrix) -> Matrix {
    x.t().mapv(|v| v.conj())
}

pub fn normalized_trace(x: &Matrix) -> Complex64 {
    x.diag().sum() / x.nrows() as f64
}

/// <x, y> = <x* y>, conjugate-linear in the first slot.
pub fn inner_product(x: &Matrix, y: &Matrix) -> Result<Complex64> {
    if x.nrows() != y.nrows() {
        return Err(CoreError::DimensionMismatch(x.nrows(), y.nrows()));
    }
    let n = x.nrows() as f64;
    Ok(x.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum::<Complex64>() / n)
}

/// Norm induced by the normalized trace, ||x||_2 = <x, x>^{1/2}.
pub fn norm_l2(x: &Matrix) -> f64 {
    (x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.nrows() as f64).sqrt()
}

pub fn norm_fro(x: &Matrix) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Operator (spectral) norm.
pub fn norm_op(x: &Matrix) -> f64 {
    // ||x||^2 = largest eigenvalue of x* x
    let g = adjoint(x).dot(x);
    match g.eigh(UPLO::Lower) {
        Ok((vals, _)) => vals.iter().fold(0.0f64, |a, &b| a.max(b)).max(0.0).sqrt(),
        Err(_) => norm_fro(x),
    }
}

pub fn real_part(x: &Matrix) -> Matrix {
    (x + &adjoint(x)) * c(0.5, 0.0)
}

pub fn imag_part(x: &Matrix) -> Matrix {
    (x - &adjoint(x)) * c(0.0, -0.5)
}

pub fn hermitian_defect(x: &Matrix) -> f64 {
    norm_fro(&(x - &adjoint(x)))
}

pub fn is_hermitian(x: &Matrix, tol: f64) -> bool {
    hermitian_defect(x) <= tol * (1.0 + norm_fro(x))
}

pub fn is_psd(x: &Matrix, tol: f64) -> bool {
    if !is_hermitian(x, 1e-8) {
        return false;
    }
    match hermitian_eigen(x) {
        Ok((vals, _)) => vals.iter().all(|&v| v >= -tol * (1.0 + vals[vals.len() - 1].abs())),
        Err(_) => false,
    }
}

pub fn finite(x: &Matrix) -> bool {
    x.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

/// Eigendecomposition of a Hermitian matrix, ascending eigenvalues.
pub fn hermitian_eigen(x: &Matrix) -> Result<(Array1<f64>, Matrix)> {
    let xh = (x + &adjoint(x)) * c(0.5, 0.0);
    xh.eigh(UPLO::Lower).map_err(|e| CoreError::Eig(e.to_string()))
}

/// Functional calculus U f(Lambda) U* for Hermitian x.
///
/// The input is symmetrized when its asymmetry stays below 1e-8 * ||x||
/// (fixed-point iterates accumulate tiny asymmetry); larger defects error.
pub fn hermitian_function(x: &Matrix, f: impl Fn(f64) -> f64) -> Result<Matrix> {
    let defect = hermitian_defect(x);
    let scale = norm_fro(x).max(1.0);
    if defect > 1e-8 * scale {
        return Err(CoreError::NotHermitian { defect, tol: 1e-8 * scale });
    }
    let (vals, vecs) = hermitian_eigen(x)?;
    let fv: Array1<Complex64> = vals.mapv(|v| c(f(v), 0.0));
    Ok(recompose(&fv, &vecs))
}

fn recompose(fvals: &Array1<Complex64>, vecs: &Matrix) -> Matrix {
    let mut scaled = vecs.clone();
    for (mut col, fv) in scaled.axis_iter_mut(Axis(1)).zip(fvals.iter()) {
        col.mapv_inplace(|v| v * fv);
    }
    scaled.dot(&adjoint(vecs))
}

pub fn matrix_sqrt(x: &Matrix) -> Result<Matrix> {
    hermitian_function(x, |t| if t > 0.0 { t.sqrt() } else { 0.0 })
}

pub fn matrix_inv_sqrt(x: &Matrix) -> Result<Matrix> {
    hermitian_function(x, |t| 1.0 / t.max(f64::MIN_POSITIVE).sqrt())
}

/// sign(x) for Hermitian x; errors when an eigenvalue sits within 1e-10 of 0,
/// since the sign is only defined away from degeneracy.
pub fn matrix_sign(x: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = hermitian_eigen(x)?;
    if let Some(&bad) = vals.iter().find(|v| v.abs() < 1e-10) {
        return Err(CoreError::SignDegenerate(bad));
    }
    let fv: Array1<Complex64> = vals.mapv(|v| c(v.signum(), 0.0));
    Ok(recompose(&fv, &vecs))
}

/// Spectral indicator 1_{(-inf, 0)}(x), eigenvalues within `zero_band` of 0 error.
pub fn negative_indicator(x: &Matrix, zero_band: f64) -> Result<Matrix> {
    let (vals, vecs) = hermitian_eigen(x)?;
    if let Some(&bad) = vals.iter().find(|v| v.abs() < zero_band) {
        return Err(CoreError::IndeterminateIndex(bad));
    }
    let fv: Array1<Complex64> = vals.mapv(|v| c(if v < 0.0 { 1.0 } else { 0.0 }, 0.0));
    Ok(recompose(&fv, &vecs))
}

pub fn min_eig_hermitian(x: &Matrix) -> Result<f64> {
    let (vals, _) = hermitian_eigen(x)?;
    Ok(vals[0])
}

/// Column-stacked vectorization, vec(x)[i + n*j] = x[(i,j)].
pub fn vec_col(x: &Matrix) -> Array1<Complex64> {
    let n = x.nrows();
    Array1::from_shape_fn(n * n, |k| x[(k % n, k / n)])
}

pub fn unvec_col(v: &Array1<Complex64>, n: usize) -> Matrix {
    Array2::from_shape_fn((n, n), |(i, j)| v[i + n * j])
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    Array2::from_shape_fn((ra * rb, ca * cb), |(i, j)| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

/// A linear map on n x n matrices stored as its n^2 x n^2 matrix form.
#[derive(Debug, Clone)]
pub struct SuperOperator {
    pub dim: usize,
    pub mat: Array2<Complex64>,
}

impl SuperOperator {
    pub fn from_matrix(dim: usize, mat: Array2<Complex64>) -> Self {
        assert_eq!(mat.nrows(), dim * dim);
        assert_eq!(mat.ncols(), dim * dim);
        SuperOperator { dim, mat }
    }

    pub fn identity(dim: usize) -> Self {
        SuperOperator { dim, mat: Array2::eye(dim * dim) }
    }

    /// Build the matrix form column by column from an action on matrices.
    pub fn from_apply(dim: usize, f: impl Fn(&Matrix) -> Matrix) -> Self {
        let n2 = dim * dim;
        let mut mat = Array2::zeros((n2, n2));
        for k in 0..n2 {
            let mut e = Array2::zeros((dim, dim));
            e[(k % dim, k / dim)] = ONE;
            let col = vec_col(&f(&e));
            mat.column_mut(k).assign(&col);
        }
        SuperOperator { dim, mat }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        unvec_col(&self.mat.dot(&vec_col(x)), self.dim)
    }

    /// Adjoint with respect to <x, y> = <x* y>; the trace weight cancels,
    /// leaving the conjugate transpose of the matrix form.
    pub fn adjoint(&self) -> SuperOperator {
        SuperOperator { dim: self.dim, mat: adjoint(&self.mat) }
    }

    pub fn compose(&self, other: &SuperOperator) -> SuperOperator {
        SuperOperator { dim: self.dim, mat: self.mat.dot(&other.mat) }
    }

    pub fn add(&self, other: &SuperOperator) -> SuperOperator {
        SuperOperator { dim: self.dim, mat: &self.mat + &other.mat }
    }

    pub fn sub(&self, other: &SuperOperator) -> SuperOperator {
        SuperOperator { dim: self.dim, mat: &self.mat - &other.mat }
    }

    pub fn scale(&self, v: Complex64) -> SuperOperator {
        SuperOperator { dim: self.dim, mat: self.mat.mapv(|x| x * v) }
    }

    pub fn norm_fro(&self) -> f64 {
        self.mat.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Sandwich map C_{x,y}[h] = x h y; matrix form transpose(y) (x) x.
pub fn sandwich(x: &Matrix, y: &Matrix) -> SuperOperator {
    let n = x.nrows();
    assert_eq!(y.nrows(), n, "sandwich factors must share dimension");
    SuperOperator { dim: n, mat: kron(&y.t().to_owned(), x) }
}

/// Conjugation C_v = C_{v,v}.
pub fn conjugation(v: &Matrix) -> SuperOperator {
    sandwich(v, v)
}

/// Full eigensystem of a superoperator with paired right/left eigenvectors.
///
/// Left eigenvectors come from the inverse of the right eigenvector matrix,
/// so that pairs are bi-orthogonal: <left_i, right_j> proportional to delta_ij.
pub struct EigenSystem {
    pub values: Vec<Complex64>,
    pub right: Vec<Matrix>,
    pub left: Vec<Matrix>,
    pub reconstruction_residual: f64,
}

pub fn superop_eigendata(t: &SuperOperator) -> Result<EigenSystem> {
    if !t.mat.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        return Err(CoreError::Eig("non-finite entries".into()));
    }
    let (vals, vecs) = t.mat.eig().map_err(|e| CoreError::Eig(e.to_string()))?;
    let vinv = vecs.inv().map_err(|e| CoreError::Eig(format!("degenerate eigenbasis: {e}")))?;
    let n = t.dim;
    let mut right = Vec::with_capacity(n * n);
    let mut left = Vec::with_capacity(n * n);
    for k in 0..n * n {
        right.push(unvec_col(&vecs.column(k).to_owned(), n));
        // rows of V^{-1} are the dual basis; left eigenvector of the k-th pair
        // is the conjugate of row k (so <left_k, .> acts as that row).
        let lrow: Array1<Complex64> = vinv.row(k).mapv(|v| v.conj());
        left.push(unvec_col(&lrow, n));
    }
    // residual of T V = V Lambda
    let tv = t.mat.dot(&vecs);
    let mut vl = vecs.clone();
    for (mut col, lam) in vl.axis_iter_mut(Axis(1)).zip(vals.iter()) {
        col.mapv_inplace(|v| v * lam);
    }
    let residual = (&tv - &vl).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
        / (1.0 + t.norm_fro());
    Ok(EigenSystem { values: vals.to_vec(), right, left, reconstruction_residual: residual })
}
