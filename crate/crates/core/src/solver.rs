//! Fixed-point solver for the matrix Dyson equation
//! -m(z)^{-1} = z 1 - a + S[m(z)], Im m > 0, with boundary continuation.

use ndarray::Array2;
use ndarray_linalg::{FactorizeInto, Inverse, Solve};
use num_complex::Complex64;

use crate::algebra::{
    c, identity, imag_part, kron, min_eig_hermitian, norm_fro, normalized_trace, unvec_col,
    vec_col, Matrix, I,
};
use crate::error::{CoreError, Result};
use crate::model::ModelSpec;

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Residual tolerance on ||m (z 1 - a + S[m]) + 1||.
    pub tol: f64,
    pub max_iter: usize,
    /// Damping factor of the fixed point; halved on positivity loss.
    pub damping: f64,
    /// Newton polish once the residual is below 1e-4 (dense linear solve).
    pub newton: bool,
    /// Top of the eta ladder for boundary continuation.
    pub eta0: f64,
    /// Bottom of the eta ladder.
    pub eta_floor: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-11,
            max_iter: 200_000,
            damping: 0.5,
            newton: true,
            eta0: 0.25,
            eta_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub z: Complex64,
    pub m: Matrix,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn residual(spec: &ModelSpec, z: Complex64, m: &Matrix) -> f64 {
    let w = scalar_shift(spec, z, m);
    norm_fro(&(m.dot(&w) + &identity(spec.dim)))
}

/// z 1 - a + S[m]
fn scalar_shift(spec: &ModelSpec, z: Complex64, m: &Matrix) -> Matrix {
    let mut w = spec.apply_s(m);
    w = w - &spec.bare;
    for i in 0..spec.dim {
        w[(i, i)] += z;
    }
    w
}

/// S restricted to the diagonal subalgebra, for models where the bare matrix
/// is diagonal and S maps diagonal matrices to diagonal matrices; the Dyson
/// solution is then diagonal and the iteration runs on n-vectors.
struct DiagonalModel {
    a: Vec<Complex64>,
    /// n x n matrix of the map diag(d) -> diag(S_hat d).
    s_hat: Array2<Complex64>,
}

fn diagonal_model(spec: &ModelSpec) -> Option<DiagonalModel> {
    let n = spec.dim;
    let scale = norm_fro(&spec.bare).max(1.0);
    for i in 0..n {
        for j in 0..n {
            if i != j && spec.bare[(i, j)].norm() > 1e-14 * scale {
                return None;
            }
        }
    }
    let mut s_hat = Array2::zeros((n, n));
    for j in 0..n {
        let mut e = Matrix::zeros((n, n));
        e[(j, j)] = c(1.0, 0.0);
        let col = spec.apply_s(&e);
        let cs = norm_fro(&col).max(1.0);
        for p in 0..n {
            for q in 0..n {
                if p != q && col[(p, q)].norm() > 1e-13 * cs {
                    return None;
                }
            }
            s_hat[(p, j)] = col[(p, p)];
        }
    }
    let a = (0..n).map(|i| spec.bare[(i, i)]).collect();
    Some(DiagonalModel { a, s_hat })
}

fn diag_residual(dm: &DiagonalModel, z: Complex64, d: &ndarray::Array1<Complex64>) -> f64 {
    let sd = dm.s_hat.dot(d);
    d.iter()
        .zip(dm.a.iter())
        .zip(sd.iter())
        .map(|((&di, &ai), &si)| (di * (z - ai + si) + 1.0).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn solve_diagonal(
    spec: &ModelSpec,
    dm: &DiagonalModel,
    z: Complex64,
    opts: &SolveOptions,
    warm_start: Option<&Matrix>,
) -> Result<Solution> {
    use ndarray::Array1;
    let n = spec.dim;
    let init = I / (1.0 + z.norm());
    let mut d: Array1<Complex64> = match warm_start {
        Some(w) => Array1::from_iter((0..n).map(|i| w[(i, i)])),
        None => Array1::from_elem(n, init),
    };
    if d.iter().any(|v| v.im <= 0.0) {
        d.fill(init);
    }
    let mut gamma = opts.damping;
    let mut res = diag_residual(dm, z, &d);
    let mut iterations = 0usize;
    // the Newton solve is only n x n here, so the cadence can be much tighter
    // than in the dense path
    let mut next_newton = 50usize;
    while res > opts.tol && iterations < opts.max_iter {
        let w = {
            let sd = dm.s_hat.dot(&d);
            Array1::from_iter(
                dm.a.iter().zip(sd.iter()).map(|(&ai, &si)| z - ai + si),
            )
        };
        let candidate: Array1<Complex64> = d
            .iter()
            .zip(w.iter())
            .map(|(&di, &wi)| di * c(1.0 - gamma, 0.0) - c(gamma, 0.0) / wi)
            .collect();
        if candidate.iter().any(|v| v.im <= 0.0) {
            gamma *= 0.5;
            if gamma < 1e-4 {
                return Err(CoreError::PositivityLost(
                    candidate.iter().map(|v| v.im).fold(f64::INFINITY, f64::min),
                ));
            }
            iterations += 1;
            continue;
        }
        d = candidate;
        res = diag_residual(dm, z, &d);
        iterations += 1;
        if opts.newton && res > opts.tol && res < 1e-2 && iterations >= next_newton {
            if let Some(polished) = diag_newton_step(dm, z, &d) {
                let pres = diag_residual(dm, z, &polished);
                if pres < res && polished.iter().all(|v| v.im > 0.0) {
                    d = polished;
                    res = pres;
                }
            }
            next_newton = iterations + 50;
        }
    }
    if res > opts.tol {
        return Err(CoreError::NoConvergence { iterations, residual: res });
    }
    let m = Matrix::from_diag(&d);
    Ok(Solution { z, m, residual: res, iterations, converged: true })
}

/// Newton step on g_i(d) = d_i (z - a_i + (S_hat d)_i) + 1 = 0 with the
/// exact n x n Jacobian J_ij = delta_ij w_i + d_i S_hat_ij.
fn diag_newton_step(
    dm: &DiagonalModel,
    z: Complex64,
    d: &ndarray::Array1<Complex64>,
) -> Option<ndarray::Array1<Complex64>> {
    let n = d.len();
    let sd = dm.s_hat.dot(d);
    let mut jac = Array2::zeros((n, n));
    let mut g = ndarray::Array1::zeros(n);
    for i in 0..n {
        let wi = z - dm.a[i] + sd[i];
        g[i] = -(d[i] * wi + 1.0);
        for j in 0..n {
            jac[(i, j)] = d[i] * dm.s_hat[(i, j)];
        }
        jac[(i, i)] += wi;
    }
    let step = jac.solve(&g).ok()?;
    Some(d + &step)
}

pub fn solve_at(
    spec: &ModelSpec,
    z: Complex64,
    opts: &SolveOptions,
    warm_start: Option<&Matrix>,
) -> Result<Solution> {
    if z.im <= 0.0 {
        return Err(CoreError::RealSpectralParameter(z.re));
    }
    if let Some(dm) = diagonal_model(spec) {
        return solve_diagonal(spec, &dm, z, opts, warm_start);
    }
    let n = spec.dim;
    let mut m = match warm_start {
        Some(w) => w.clone(),
        None => identity(n) * (I / (1.0 + z.norm())),
    };
    // a warm start with non-positive imaginary part would trap the iteration
    if min_eig_hermitian(&imag_part(&m))? <= 0.0 {
        m = identity(n) * (I / (1.0 + z.norm()));
    }
    let mut gamma = opts.damping;
    let mut res = residual(spec, z, &m);
    let mut iterations = 0usize;
    let mut next_newton = 400usize;
    while res > opts.tol && iterations < opts.max_iter {
        let w = scalar_shift(spec, z, &m);
        let minv = w
            .inv()
            .map_err(|e| CoreError::LinearSolve(format!("z 1 - a + S[m] singular: {e}")))?;
        let candidate = &m * c(1.0 - gamma, 0.0) - &(minv * c(gamma, 0.0));
        let im_min = min_eig_hermitian(&imag_part(&candidate))?;
        if im_min <= 0.0 {
            gamma *= 0.5;
            if gamma < 1e-4 {
                return Err(CoreError::PositivityLost(im_min));
            }
            iterations += 1;
            continue;
        }
        m = candidate;
        res = residual(spec, z, &m);
        iterations += 1;
        // Newton rescue for slowly contracting points (edges, cusps at small
        // eta): only after the plain iteration has had a fair chance, so bulk
        // points never pay for the dense linear solve.
        if opts.newton && res > opts.tol && res < 1e-4 && iterations >= next_newton {
            if let Ok(polished) = newton_step(spec, z, &m) {
                let pres = residual(spec, z, &polished);
                if pres < res && min_eig_hermitian(&imag_part(&polished))? > 0.0 {
                    m = polished;
                    res = pres;
                }
            }
            next_newton = iterations + 400;
        }
    }
    if res > opts.tol {
        return Err(CoreError::NoConvergence { iterations, residual: res });
    }
    Ok(Solution { z, m, residual: res, iterations, converged: true })
}

/// One Newton step on G(m) = m + (z 1 - a + S[m])^{-1}:
/// solve (Id - C_{w^{-1}} S)[d] = -G(m) as a dense n^2 linear system.
fn newton_step(spec: &ModelSpec, z: Complex64, m: &Matrix) -> Result<Matrix> {
    let n = spec.dim;
    let w = scalar_shift(spec, z, m);
    let winv = w.inv().map_err(|e| CoreError::LinearSolve(e.to_string()))?;
    let g = m + &winv;
    let s_mat = spec.s_matrix_form().mat;
    let cw = kron(&winv.t().to_owned(), &winv);
    let jac = Array2::eye(n * n) - cw.dot(&s_mat);
    let rhs = vec_col(&g).mapv(|v| -v);
    let d = jac.solve(&rhs).map_err(|e| CoreError::LinearSolve(e.to_string()))?;
    Ok(m + &unvec_col(&d, n))
}

#[derive(Debug, Clone)]
pub struct BoundaryValue {
    /// Solution at the lowest ladder rung z = tau + i eta_floor.
    pub last: Solution,
    /// Richardson-extrapolated eta -> 0 limit.
    pub m_limit: Matrix,
    /// Distance between the last two extrapolants; large near edges.
    pub extrap_error: f64,
    /// Fitted local exponent of m(tau + i eta) - m(tau), clamped to [1/3, 1].
    pub exponent: f64,
    pub eta_eff: f64,
    /// Ladder solutions, top rung first (for reuse by grid scans).
    pub ladder: Vec<Solution>,
}

/// Solve along the decreasing ladder eta_k = eta0 2^{-k} with warm starts, and
/// Richardson-extrapolate to the real axis with a fitted local exponent.
pub fn boundary_value(
    spec: &ModelSpec,
    tau: f64,
    opts: &SolveOptions,
    warm_ladder: Option<&[Solution]>,
) -> Result<BoundaryValue> {
    let mut etas = Vec::new();
    let mut eta = opts.eta0;
    while eta >= opts.eta_floor * (1.0 - 1e-12) {
        etas.push(eta);
        eta *= 0.5;
    }
    let mut ladder: Vec<Solution> = Vec::with_capacity(etas.len());
    for (k, &eta_k) in etas.iter().enumerate() {
        let warm = ladder
            .last()
            .map(|s| &s.m)
            .or_else(|| warm_ladder.and_then(|w| w.get(k)).map(|s| &s.m));
        let sol = solve_at(spec, c(tau, eta_k), opts, warm)?;
        ladder.push(sol);
    }
    let kk = ladder.len();
    let (m_limit, extrap_error, exponent) = if kk >= 3 {
        let d1 = norm_fro(&(&ladder[kk - 2].m - &ladder[kk - 3].m));
        let d2 = norm_fro(&(&ladder[kk - 1].m - &ladder[kk - 2].m));
        // m(eta) ~ m0 + c eta^p  =>  successive differences shrink by 2^p
        let p = if d2 > 1e-14 && d1 > d2 {
            (d1 / d2).log2().clamp(1.0 / 3.0, 1.0)
        } else {
            1.0
        };
        let r = 0.5f64.powf(p);
        let extrap = |hi: &Matrix, lo: &Matrix| lo + &((lo - hi) * c(r / (1.0 - r), 0.0));
        let e_prev = extrap(&ladder[kk - 3].m, &ladder[kk - 2].m);
        let e_last = extrap(&ladder[kk - 2].m, &ladder[kk - 1].m);
        let err = norm_fro(&(&e_last - &e_prev));
        (e_last, err, p)
    } else {
        (ladder[kk - 1].m.clone(), f64::INFINITY, 1.0)
    };
    Ok(BoundaryValue {
        last: ladder[kk - 1].clone(),
        m_limit,
        extrap_error,
        exponent,
        eta_eff: etas[kk - 1],
        ladder,
    })
}

/// Warm-started solves over a sorted grid at fixed Im z = eta.
///
/// The grid is cut into fixed-size chunks; each chunk is warm-start chained
/// internally and independent of the others, so results do not depend on how
/// chunks are assigned to workers.
pub fn solve_grid(
    spec: &ModelSpec,
    taus: &[f64],
    eta: f64,
    opts: &SolveOptions,
) -> Vec<Result<Solution>> {
    use rayon::prelude::*;
    const CHUNK: usize = 64;
    let chunks: Vec<&[f64]> = taus.chunks(CHUNK).collect();
    chunks
        .par_iter()
        .flat_map_iter(|chunk| {
            let mut out = Vec::with_capacity(chunk.len());
            let mut warm: Option<Matrix> = None;
            for &tau in chunk.iter() {
                let r = solve_at(spec, c(tau, eta), opts, warm.as_ref());
                if let Ok(s) = &r {
                    warm = Some(s.m.clone());
                }
                out.push(r);
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct StabilityCheck {
    pub defect: f64,
    pub condition_estimate: f64,
}

/// Defect of the derivative identity (Id - C_m S)[dm/dz] = m^2, with dm/dz
/// from central finite differences of step h along the real direction.
pub fn stability_residual_check(spec: &ModelSpec, z: Complex64, h: f64) -> Result<StabilityCheck> {
    if z.im <= 0.0 {
        return Err(CoreError::RealSpectralParameter(z.re));
    }
    let opts = SolveOptions { tol: 1e-13, ..Default::default() };
    let m0 = solve_at(spec, z, &opts, None)?.m;
    let mp = solve_at(spec, z + c(h, 0.0), &opts, Some(&m0))?.m;
    let mm = solve_at(spec, z - c(h, 0.0), &opts, Some(&m0))?.m;
    let dm = (&mp - &mm) * c(1.0 / (2.0 * h), 0.0);
    let bdm = &dm - &m0.dot(&spec.apply_s(&dm)).dot(&m0);
    let defect = norm_fro(&(&bdm - &m0.dot(&m0)));
    // rough condition estimate of B = Id - C_m S via a few inverse iterations
    let n = spec.dim;
    let s_mat = spec.s_matrix_form().mat;
    let b_mat = Array2::eye(n * n) - kron(&m0.t().to_owned(), &m0).dot(&s_mat);
    let cond = match b_mat.clone().factorize_into() {
        Ok(lu) => {
            let mut x = vec_col(&identity(n));
            let mut mu = 0.0;
            for _ in 0..20 {
                let y = match lu.solve(&x) {
                    Ok(y) => y,
                    Err(_) => break,
                };
                let ny = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                if ny == 0.0 {
                    break;
                }
                mu = ny / x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                x = y.mapv(|v| v / c(ny, 0.0));
            }
            let bnorm = b_mat.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            mu * bnorm
        }
        Err(_) => f64::INFINITY,
    };
    Ok(StabilityCheck { defect, condition_estimate: cond })
}

/// Lipschitz ratio ||m_t - m_0|| / t for the perturbed bare matrix a + t d.
pub fn perturbation_ratio(
    spec: &ModelSpec,
    z: Complex64,
    direction: &Matrix,
    t: f64,
) -> Result<f64> {
    let opts = SolveOptions::default();
    let m0 = solve_at(spec, z, &opts, None)?.m;
    let perturbed = ModelSpec {
        dim: spec.dim,
        bare: &spec.bare + &(direction * c(t, 0.0)),
        self_energy: spec.self_energy.clone(),
    };
    let mt = solve_at(&perturbed, z, &opts, Some(&m0))?.m;
    Ok(norm_fro(&(&mt - &m0)) / t)
}

/// Trace of m; the solver invariant lim iy m(iy) -> -1 and Stieltjes bounds
/// are asserted against this in tests.
pub fn avg_m(sol: &Solution) -> Complex64 {
    normalized_trace(&sol.m)
}
