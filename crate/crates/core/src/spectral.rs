//! Derived spectral machinery at a point: balanced polar decomposition
//! m = q* u q, saturated self-energy F = C_{q,q*} S C_{q*,q}, stability
//! operator B = Id - C_m S and its isolated eigentriple.

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::solve::LUFactorized;
use ndarray_linalg::{FactorizeInto, Solve};
use num_complex::Complex64;

use crate::algebra::{
    adjoint, c, hermitian_eigen, identity, imag_part, inner_product, kron, min_eig_hermitian,
    norm_fro, norm_l2, normalized_trace, real_part, unvec_col, vec_col, Matrix, SuperOperator, I,
    ONE,
};
use crate::error::{CoreError, Result};
use crate::model::ModelSpec;

pub const BOUNDARY_SWITCH: f64 = 1e-6;
pub const ISOLATION_GATE: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct PolarData {
    pub m: Matrix,
    pub w: Matrix,
    pub q: Matrix,
    pub u: Matrix,
    /// sign(Re u); None when an eigenvalue of Re u degenerates to 0.
    pub s: Option<Matrix>,
    /// f_u = rho^{-1} Im u, finite down to the real axis.
    pub f_u: Matrix,
    pub rho: f64,
}

fn assemble(vals: &Array1<Complex64>, vecs: &Matrix) -> Matrix {
    let mut scaled = vecs.clone();
    for (mut col, v) in scaled.axis_iter_mut(Axis(1)).zip(vals.iter()) {
        col.mapv_inplace(|x| x * v);
    }
    scaled.dot(&adjoint(vecs))
}

/// Balanced polar decomposition. Away from the real axis it uses
/// w = (Im m)^{-1/2} (Re m) (Im m)^{-1/2} + i, q = |w|^{1/2} (Im m)^{1/2};
/// once <Im m> drops below the switch it is rewritten through
/// f_m = rho^{-1} Im m, which stays of order one at the boundary.
pub fn polar_decompose(m: &Matrix) -> Result<PolarData> {
    let h = imag_part(m);
    let g = real_part(m);
    let avg_im = normalized_trace(&h).re;
    if avg_im <= 0.0 {
        return Err(CoreError::NotPsd(avg_im));
    }
    let me = min_eig_hermitian(&h)?;
    if me < -1e-9 * (1.0 + avg_im) {
        return Err(CoreError::NotPsd(me));
    }
    let rho = avg_im / std::f64::consts::PI;
    let (h_vals, h_vecs) = hermitian_eigen(&h)?;

    if avg_im >= BOUNDARY_SWITCH {
        let his = assemble(&h_vals.mapv(|v| c(1.0 / v.max(1e-300).sqrt(), 0.0)), &h_vecs);
        let hs = assemble(&h_vals.mapv(|v| c(v.max(0.0).sqrt(), 0.0)), &h_vecs);
        let a = real_part(&his.dot(&g).dot(&his));
        let (d, v) = hermitian_eigen(&a)?;
        let w = &a + &(identity(m.nrows()) * I);
        let absw_sqrt = assemble(&d.mapv(|t| c((t * t + 1.0).powf(0.25), 0.0)), &v);
        let q = absw_sqrt.dot(&hs);
        let u = assemble(&d.mapv(|t| (c(t, 0.0) + I) / c((t * t + 1.0).sqrt(), 0.0)), &v);
        let f_u = assemble(&d.mapv(|t| c(1.0 / ((t * t + 1.0).sqrt() * rho), 0.0)), &v);
        let s = sign_from_eigs(&d, &v);
        Ok(PolarData { m: m.clone(), w, q, u, s, f_u, rho })
    } else {
        // f_m = rho^{-1} Im m ~ 1 at admissible boundary points; eigenvalues
        // clamped below to keep f_m^{-1/2} finite when the input is an
        // extrapolated limit with slightly defective small eigenvalues.
        let fm_vals = h_vals.mapv(|v| (v / rho).max(1e-8));
        let fm_s = assemble(&fm_vals.mapv(|v| c(v.sqrt(), 0.0)), &h_vecs);
        let fm_is = assemble(&fm_vals.mapv(|v| c(1.0 / v.sqrt(), 0.0)), &h_vecs);
        let gg = real_part(&fm_is.dot(&g).dot(&fm_is));
        let (d, v) = hermitian_eigen(&gg)?;
        let w = (&gg + &(identity(m.nrows()) * c(0.0, rho))) * c(1.0 / rho, 0.0);
        let q = assemble(&d.mapv(|t| c((rho * rho + t * t).powf(0.25), 0.0)), &v).dot(&fm_s);
        let u = assemble(
            &d.mapv(|t| (c(t, 0.0) + c(0.0, rho)) / c((rho * rho + t * t).sqrt(), 0.0)),
            &v,
        );
        let f_u = assemble(&d.mapv(|t| c(1.0 / (rho * rho + t * t).sqrt(), 0.0)), &v);
        let s = sign_from_eigs(&d, &v);
        Ok(PolarData { m: m.clone(), w, q, u, s, f_u, rho })
    }
}

fn sign_from_eigs(d: &Array1<f64>, v: &Matrix) -> Option<Matrix> {
    if d.iter().any(|t| t.abs() < 1e-10) {
        None
    } else {
        Some(assemble(&d.mapv(|t| c(t.signum(), 0.0)), v))
    }
}

#[derive(Debug, Clone)]
pub struct FData {
    pub f_op: SuperOperator,
    pub norm2f: f64,
    /// Perron-Frobenius eigenvector, PSD with ||f||_2 = 1.
    pub pf_vector: Matrix,
    /// Spectral gap of F/||F||_2 below 1.
    pub gap: f64,
}

/// Apply F = C_{q,q*} S C_{q*,q} without forming the matrix.
pub fn apply_f(spec: &ModelSpec, q: &Matrix, x: &Matrix) -> Matrix {
    let qs = adjoint(q);
    q.dot(&spec.apply_s(&qs.dot(x).dot(q))).dot(&qs)
}

pub fn f_matrix_form(spec: &ModelSpec, q: &Matrix) -> SuperOperator {
    let s_mat = spec.s_matrix_form().mat;
    let qs = adjoint(q);
    let left = kron(&q.mapv(|v| v.conj()), q); // C_{q,q*}
    let right = kron(&q.t().to_owned(), &qs); // C_{q*,q}
    SuperOperator::from_matrix(spec.dim, left.dot(&s_mat).dot(&right))
}

pub fn saturated_f(spec: &ModelSpec, polar: &PolarData) -> Result<FData> {
    let n = spec.dim;
    // power iteration from the identity: F is symmetric and positivity-
    // preserving, so this converges to the Perron-Frobenius pair
    let mut x = identity(n);
    x = &x / c(norm_l2(&x), 0.0);
    let mut lam = 0.0f64;
    for it in 0..100_000 {
        let y = apply_f(spec, &polar.q, &x);
        let ny = norm_l2(&y);
        if ny == 0.0 {
            return Err(CoreError::IterationStalled("F annihilated the PSD start".into()));
        }
        let next = inner_product(&x, &y)?.re;
        x = y / c(ny, 0.0);
        if it > 3 && (next - lam).abs() <= 1e-14 * next.max(1.0) {
            lam = next;
            break;
        }
        lam = next;
    }
    let norm2f = lam;
    // fix the PSD orientation
    if normalized_trace(&x).re < 0.0 {
        x = x.mapv(|v| -v);
    }
    let pf_vector = real_part(&x);
    // second eigenvalue by deflated power iteration on |F - lam P_f|
    let mut y = Array2::from_shape_fn((n, n), |(i, j)| c(((i * 7 + j * 3 + 1) % 5) as f64 - 2.0, ((i + 2 * j) % 3) as f64 - 1.0));
    let deflate = |v: &Matrix| -> Matrix {
        let coef = inner_product(&pf_vector, v).unwrap();
        v - &pf_vector.mapv(|t| t * coef)
    };
    y = deflate(&y);
    y = &y / c(norm_l2(&y).max(1e-300), 0.0);
    let mut lam2 = 0.0f64;
    for it in 0..100_000 {
        let fy = deflate(&apply_f(spec, &polar.q, &y));
        let ny = norm_l2(&fy);
        if ny <= 1e-300 {
            lam2 = 0.0;
            break;
        }
        let next = ny;
        y = fy / c(ny, 0.0);
        if it > 3 && (next - lam2).abs() <= 1e-12 * next.max(1.0) {
            lam2 = next;
            break;
        }
        lam2 = next;
    }
    let gap = if norm2f > 0.0 { (1.0 - lam2 / norm2f).max(0.0) } else { 0.0 };
    Ok(FData { f_op: f_matrix_form(spec, &polar.q), norm2f, pf_vector, gap })
}

#[derive(Debug, Clone)]
pub struct StabilityEigendata {
    pub b_op: SuperOperator,
    pub beta: Complex64,
    /// Right eigenvector, ||b||_2 = 1, <b> rotated to the positive real axis.
    pub b: Matrix,
    /// Left eigenvector, ||l||_2 = 1, scaled so <l, b> is real positive.
    pub l: Matrix,
    /// Modulus of the nearest other eigenvalue (isolation margin).
    pub second_modulus: f64,
    pub p_op: SuperOperator,
    pub q_op: SuperOperator,
}

pub(crate) struct IsolatedPair {
    pub value: Complex64,
    pub right: Array1<Complex64>,
    pub left: Array1<Complex64>,
    pub second_modulus: f64,
}

fn vnorm(v: &Array1<Complex64>) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn vdot(a: &Array1<Complex64>, b: &Array1<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Smallest-modulus eigenpair (right and left) of a dense superoperator
/// matrix plus the modulus of the next eigenvalue, via LU inverse iteration
/// with bi-orthogonal deflation.
pub(crate) fn isolated_small_eigenpair(t: &Array2<Complex64>) -> Result<IsolatedPair> {
    let n2 = t.nrows();
    let scale = t.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() / n2 as f64;
    let factor: LUFactorized<ndarray::OwnedRepr<Complex64>> = match t.clone().factorize_into() {
        Ok(f) => f,
        Err(_) => {
            // exactly singular: nudge off the kernel
            let shifted = t + &(Array2::<Complex64>::eye(n2) * c(1e-13 * scale.max(1e-300), 0.0));
            shifted.factorize_into().map_err(|e| CoreError::LinearSolve(e.to_string()))?
        }
    };
    let start = Array1::from_shape_fn(n2, |i| c(1.0 + (i % 3) as f64, 0.3 * ((i % 7) as f64 - 3.0)));
    let iterate = |mut x: Array1<Complex64>, herm: bool| -> Result<Array1<Complex64>> {
        x = &x / c(vnorm(&x), 0.0);
        let mut prev = x.clone();
        for it in 0..500 {
            let y = if herm { factor.solve_h(&x) } else { factor.solve(&x) }
                .map_err(|e| CoreError::LinearSolve(e.to_string()))?;
            let ny = vnorm(&y);
            if !ny.is_finite() || ny == 0.0 {
                return Err(CoreError::IterationStalled("inverse iteration blew up".into()));
            }
            // remove overall phase drift so the convergence test is meaningful
            let phase = vdot(&prev, &y);
            let ph = if phase.norm() > 0.0 { phase / phase.norm() } else { ONE };
            x = y.mapv(|v| v / (ph * ny));
            if it > 2 && vnorm(&(&x - &prev)) < 1e-13 {
                break;
            }
            prev = x.clone();
        }
        Ok(x)
    };
    let right = iterate(start.clone(), false)?;
    let left = iterate(start, true)?;
    let tr = t.dot(&right);
    let value = vdot(&right, &tr);

    // next eigenvalue modulus from inverse iteration deflated by the
    // bi-orthogonal rank-1 projector of the found pair
    let lr = vdot(&left, &right);
    if lr.norm() < 1e-12 {
        return Err(CoreError::IterationStalled("left/right eigenvectors nearly orthogonal".into()));
    }
    let deflate = |v: &Array1<Complex64>| -> Array1<Complex64> {
        let coef = vdot(&left, v) / lr;
        v - &right.mapv(|t| t * coef)
    };
    let mut x = deflate(&Array1::from_shape_fn(n2, |i| c(0.5 + (i % 5) as f64, (i % 2) as f64)));
    x = &x / c(vnorm(&x).max(1e-300), 0.0);
    let mut inv_mod = 0.0f64;
    for it in 0..500 {
        let y = deflate(&factor.solve(&x).map_err(|e| CoreError::LinearSolve(e.to_string()))?);
        let ny = vnorm(&y);
        if ny <= 1e-300 {
            inv_mod = 0.0;
            break;
        }
        if it > 2 && (ny - inv_mod).abs() <= 1e-10 * ny {
            inv_mod = ny;
            break;
        }
        inv_mod = ny;
        x = y / c(ny, 0.0);
    }
    let second_modulus = if inv_mod > 0.0 { 1.0 / inv_mod } else { f64::INFINITY };
    Ok(IsolatedPair { value, right, left, second_modulus })
}

pub fn b_matrix_form(spec: &ModelSpec, m: &Matrix) -> SuperOperator {
    let n = spec.dim;
    let s_mat = spec.s_matrix_form().mat;
    let mat = Array2::eye(n * n) - kron(&m.t().to_owned(), m).dot(&s_mat);
    SuperOperator::from_matrix(n, mat)
}

pub fn stability_eigendata(spec: &ModelSpec, m: &Matrix) -> Result<StabilityEigendata> {
    let n = spec.dim;
    let b_op = b_matrix_form(spec, m);
    let pair = isolated_small_eigenpair(&b_op.mat)?;
    let sep = pair.second_modulus - pair.value.norm();
    if n > 1 && sep < ISOLATION_GATE {
        return Err(CoreError::NotIsolated { sep, gate: ISOLATION_GATE });
    }
    let mut b = unvec_col(&pair.right, n);
    b = &b / c(norm_l2(&b), 0.0);
    // rotate so the trace sits on the positive real axis (b -> q* f_u q gauge)
    let tb = normalized_trace(&b);
    if tb.norm() > 1e-12 {
        b = b.mapv(|v| v * (tb.conj() / tb.norm()));
    }
    let mut l = unvec_col(&pair.left, n);
    l = &l / c(norm_l2(&l), 0.0);
    let lb = inner_product(&l, &b)?;
    if lb.norm() < 1e-12 {
        return Err(CoreError::IterationStalled("degenerate <l, b>".into()));
    }
    l = l.mapv(|v| v * (lb / lb.norm()));
    let lb = inner_product(&l, &b)?; // now real positive
    // rank-1 spectral projector P = b <l, .> / <l, b>
    let vb = vec_col(&b);
    let vl = vec_col(&l);
    let denom = c(n as f64, 0.0) * lb;
    let p_mat = Array2::from_shape_fn((n * n, n * n), |(i, j)| vb[i] * vl[j].conj() / denom);
    let q_mat = Array2::eye(n * n) - &p_mat;
    Ok(StabilityEigendata {
        b_op,
        beta: pair.value,
        b,
        l,
        second_modulus: pair.second_modulus,
        p_op: SuperOperator::from_matrix(n, p_mat),
        q_op: SuperOperator::from_matrix(n, q_mat),
    })
}

/// Samples PSD x and checks (Id - C_{m*,m} S)^{-1}[x] >= x >= 0 up to tol,
/// the positivity-preservation the boundary extension argument relies on.
pub fn verify_bstar_positivity(spec: &ModelSpec, m: &Matrix, samples: usize) -> Result<bool> {
    use rand::prelude::*;
    use rand_distr::StandardNormal;
    let n = spec.dim;
    let s_mat = spec.s_matrix_form().mat;
    let bstar = Array2::eye(n * n) - kron(&m.t().to_owned(), &adjoint(m)).dot(&s_mat);
    let factor = bstar.factorize_into().map_err(|e| CoreError::LinearSolve(e.to_string()))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xb5a7);
    for _ in 0..samples {
        let gmat = Array2::from_shape_fn((n, n), |_| {
            c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
        });
        let x = gmat.dot(&adjoint(&gmat));
        let y = unvec_col(
            &factor.solve(&vec_col(&x)).map_err(|e| CoreError::LinearSolve(e.to_string()))?,
            n,
        );
        let yh = (&y + &adjoint(&y)) * c(0.5, 0.0);
        let scale = 1.0 + norm_fro(&yh);
        if min_eig_hermitian(&yh)? < -1e-8 * scale {
            return Ok(false);
        }
        if min_eig_hermitian(&(&yh - &x))? < -1e-8 * scale {
            return Ok(false);
        }
    }
    Ok(true)
}
