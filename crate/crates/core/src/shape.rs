//! Shape parameters sigma, psi, Gamma; universal shape functions and Cardano
//! roots; classification of small local minima of the density and the
//! quantitative local expansions around them.

use ndarray::Array2;
use ndarray_linalg::Solve;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::algebra::{c, inner_product, kron, unvec_col, vec_col, ONE};
use crate::density::{BandStructure, DensityProfile};
use crate::error::{CoreError, Result};
use crate::model::ModelSpec;
use crate::solver::{boundary_value, SolveOptions};
use crate::spectral::{
    f_matrix_form, isolated_small_eigenpair, polar_decompose, stability_eigendata,
    PolarData,
};

pub const KAPPA: f64 = std::f64::consts::PI;
/// |sigma| at or above this uses the regular-edge coefficient formula; gaps
/// saturate at Delta-hat ~ |sigma|^3 capped at 1, making 1 the natural scale.
pub const SIGMA_GATE: f64 = 1.0;
/// rho(tau0) below this counts as a vanishing minimum.
pub const RHO_ZERO_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeParams {
    pub sigma: f64,
    pub psi: f64,
    /// Gamma = sqrt(27) pi / (2 psi).
    pub gamma_big: f64,
    pub rho0: f64,
    /// <f_u^2>, needed by the cubic's subleading coefficients.
    pub avg_fu2: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SingularityKind {
    LeftEdge,
    RightEdge,
    Cusp,
    InternalMin,
    Ambiguous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub coefficient: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingularityReport {
    pub tau0: f64,
    pub kind: SingularityKind,
    /// Gap length for edges; 1 for extreme or large-gap edges.
    pub delta_gap: f64,
    /// rho(tau0)/Gamma^{1/3} for internal minima.
    pub rho_tilde: f64,
    pub params: ShapeParams,
    pub fit: Option<ExponentFit>,
}

/// sigma = <s f_u^3> and
/// psi = <s f_u^2, (Id + F)(Id - C_s F)^{-1} Q_{s,F} [s f_u^2]>,
/// evaluated from the extrapolated boundary data at tau0.
pub fn shape_params(spec: &ModelSpec, tau0: f64, opts: &SolveOptions) -> Result<ShapeParams> {
    let bv = boundary_value(spec, tau0, opts, None)?;
    let polar = polar_decompose(&bv.m_limit).or_else(|_| polar_decompose(&bv.last.m))?;
    shape_params_from_polar(spec, &polar)
}

pub fn shape_params_from_polar(spec: &ModelSpec, polar: &PolarData) -> Result<ShapeParams> {
    let n = spec.dim;
    let s = polar.s.as_ref().ok_or(CoreError::SignDegenerate(0.0))?;
    let fu = &polar.f_u;
    let fu2 = fu.dot(fu);
    let sfu2 = s.dot(&fu2);
    let sfu3 = sfu2.dot(fu);
    let sig = inner_product(&crate::algebra::identity(n), &sfu3)?;
    let avg_fu2 = inner_product(fu, fu)?.re;

    // psi vanishes identically in the one-dimensional (scalar) algebra:
    // the isolated direction spans everything and Q kills the argument.
    if n == 1 {
        return Ok(ShapeParams {
            sigma: sig.re,
            psi: 0.0,
            gamma_big: f64::INFINITY,
            rho0: polar.rho,
            avg_fu2,
            kappa: KAPPA,
        });
    }

    let f_op = f_matrix_form(spec, &polar.q);
    let cs = kron(&s.t().to_owned(), s); // C_s, s Hermitian
    let t_mat = Array2::eye(n * n) - cs.dot(&f_op.mat);
    let pair = isolated_small_eigenpair(&t_mat)?;
    let lr: Complex64 = pair
        .left
        .iter()
        .zip(pair.right.iter())
        .map(|(a, b)| a.conj() * b)
        .sum();
    // shift the isolated eigenvalue out of the way, solve on the complement
    let vr = &pair.right;
    let vl = &pair.left;
    let shifted = &t_mat
        + &Array2::from_shape_fn((n * n, n * n), |(i, j)| vr[i] * vl[j].conj() / lr);
    let x = vec_col(&sfu2);
    let px: Complex64 = vl.iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum::<Complex64>() / lr;
    let qx = &x - &vr.mapv(|v| v * px);
    let y = shifted.solve(&qx).map_err(|e| CoreError::LinearSolve(e.to_string()))?;
    // clean any residual component along the isolated direction
    let py: Complex64 = vl.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum::<Complex64>() / lr;
    let y = &y - &vr.mapv(|v| v * py);
    let ym = unvec_col(&y, n);
    let arg = &ym + &f_op.apply(&ym);
    let psi_c = inner_product(&sfu2, &arg)?;
    let psi = psi_c.re.max(0.0);
    Ok(ShapeParams {
        sigma: sig.re,
        psi,
        gamma_big: if psi > 0.0 { 27f64.sqrt() * KAPPA / (2.0 * psi) } else { f64::INFINITY },
        rho0: polar.rho,
        avg_fu2,
        kappa: KAPPA,
    })
}

// --- universal shape functions ----------------------------------------------

/// Edge shape function on lambda >= 0.
pub fn psi_edge(lambda: f64) -> f64 {
    assert!(lambda >= 0.0, "psi_edge requires lambda >= 0");
    let r = ((1.0 + lambda) * lambda).sqrt();
    let num = r;
    let a = 1.0 + 2.0 * lambda + 2.0 * r;
    let b = 1.0 + 2.0 * lambda - 2.0 * r;
    num / (a.powf(2.0 / 3.0) + b.powf(2.0 / 3.0) + 1.0)
}

/// Internal-minimum shape function, even in lambda.
pub fn psi_min(lambda: f64) -> f64 {
    let s = (1.0 + lambda * lambda).sqrt();
    let a = (s + lambda).cbrt();
    let b = (s - lambda).cbrt();
    s / (a * a + b * b - 1.0) - 1.0
}

// --- Cardano ------------------------------------------------------------------

fn cpow(base: Complex64, e: f64) -> Complex64 {
    base.powf(e)
}

/// Branch functions Phi_{+-} of the Cardano solution, per the three regions
/// of Re zeta with principal complex powers.
pub fn phi_pm(zeta: Complex64) -> (Complex64, Complex64) {
    let re = zeta.re;
    if re >= 1.0 {
        let r = (zeta * zeta - ONE).sqrt();
        (cpow(zeta + r, 1.0 / 3.0), cpow(zeta - r, 1.0 / 3.0))
    } else if re > -1.0 {
        let r = (ONE - zeta * zeta).sqrt() * Complex64::new(0.0, 1.0);
        (cpow(zeta + r, 1.0 / 3.0), cpow(zeta - r, 1.0 / 3.0))
    } else {
        let r = (zeta * zeta - ONE).sqrt();
        (-cpow(-zeta - r, 1.0 / 3.0), -cpow(-zeta + r, 1.0 / 3.0))
    }
}

/// The three roots of Omega^3 - 3 Omega + 2 zeta as (Omega_+, Omega_-, Omega_0).
pub fn cardano_roots(zeta: Complex64) -> (Complex64, Complex64, Complex64) {
    let (pp, pm) = phi_pm(zeta);
    let half_sum = (pp + pm) * c(0.5, 0.0);
    let half_diff = (pp - pm) * c(0.0, 3f64.sqrt() / 2.0);
    let plus = half_sum + half_diff;
    let minus = half_sum - half_diff;
    let zero = -(pp + pm);
    (plus, minus, zero)
}

/// Representation Omega-hat(lambda) = Phi_odd(lambda) + i sqrt(3) Phi_even(lambda)
/// with Phi(t) = (sqrt(1+t^2) + t)^{1/3}; Psi_min(lambda) =
/// Im[Omega-hat(lambda) - Omega-hat(0)] / sqrt(3).
pub fn omega_hat_min(lambda: f64) -> Complex64 {
    let phi = |t: f64| ((1.0 + t * t).sqrt() + t).cbrt();
    let even = 0.5 * (phi(lambda) + phi(-lambda));
    let odd = 0.5 * (phi(lambda) - phi(-lambda));
    c(odd, 3f64.sqrt() * even)
}

// --- classification -----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Log-log least squares of (rho - baseline) against |omega| on one side of
/// tau0, over window.0 <= |omega| <= window.1.
pub fn fit_local_exponent(
    profile: &DensityProfile,
    tau0: f64,
    side: Side,
    window: (f64, f64),
    baseline: f64,
) -> Result<ExponentFit> {
    let floor = 10.0 * crate::density::RHO_CLIP;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (&tau, &r) in profile.taus.iter().zip(profile.rho.iter()) {
        let omega = tau - tau0;
        let on_side = match side {
            Side::Left => omega < 0.0,
            Side::Right => omega > 0.0,
        };
        let v = r - baseline;
        if on_side && omega.abs() >= window.0 && omega.abs() <= window.1 && v > floor {
            pts.push((omega.abs().ln(), v.ln()));
        }
    }
    if pts.len() < 8 {
        return Err(CoreError::InvalidParameter(format!(
            "only {} usable points for the local-exponent fit",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    Ok(ExponentFit { exponent: slope, coefficient: intercept.exp(), r2 })
}

/// Classify a detected local minimum or band endpoint tau0.
pub fn classify(
    spec: &ModelSpec,
    profile: &DensityProfile,
    structure: &BandStructure,
    tau0: f64,
    opts: &SolveOptions,
) -> Result<SingularityReport> {
    let resolution = (profile.taus[profile.taus.len() - 1] - profile.taus[0])
        / (profile.taus.len() - 1) as f64;
    let near = |a: f64, b: f64| (a - b).abs() <= 2.0 * resolution;

    // band endpoint?
    let mut endpoint: Option<(SingularityKind, f64)> = None;
    for (bi, &(lo, hi)) in structure.bands.iter().enumerate() {
        if near(tau0, lo) {
            // gap below this band, if any
            let delta = if bi > 0 { (lo - structure.bands[bi - 1].1).min(1.0) } else { 1.0 };
            endpoint = Some((SingularityKind::LeftEdge, delta));
        } else if near(tau0, hi) {
            let delta = if bi + 1 < structure.bands.len() {
                (structure.bands[bi + 1].0 - hi).min(1.0)
            } else {
                1.0
            };
            endpoint = Some((SingularityKind::RightEdge, delta));
        }
    }

    // interior minima off the grid: the vertex of a quadratic fit can sit far
    // from the true minimizer where rho has a cube-root kink, so refine by
    // golden-section before reading off rho0 and sigma
    let tau0 = match endpoint {
        Some(_) => tau0,
        None => refine_minimum(spec, tau0 - 2.0 * resolution, tau0 + 2.0 * resolution, opts)?,
    };

    let params = shape_params(spec, tau0, opts)?;
    let rho0 = params.rho0;
    let (kind, delta_gap) = match endpoint {
        Some((k, d)) => (k, d),
        None => {
            if rho0 > RHO_ZERO_TOL {
                (SingularityKind::InternalMin, 0.0)
            } else if params.sigma.abs() <= 0.5 * SIGMA_GATE {
                (SingularityKind::Cusp, 0.0)
            } else if params.sigma.abs() >= SIGMA_GATE && rho0 <= 0.5 * RHO_ZERO_TOL {
                // an interior point where the density vanishes with sigma != 0
                // is an unresolved gap: report ambiguous
                (SingularityKind::Ambiguous, 0.0)
            } else {
                (SingularityKind::Ambiguous, 0.0)
            }
        }
    };
    let rho_tilde = if params.gamma_big.is_finite() && params.gamma_big > 0.0 {
        rho0 / params.gamma_big.cbrt()
    } else {
        0.0
    };

    // local exponent diagnostic on the rising side(s)
    let fit = match kind {
        SingularityKind::LeftEdge => {
            fit_local_exponent(profile, tau0, Side::Right, (resolution, 5e-2), 0.0).ok()
        }
        SingularityKind::RightEdge => {
            fit_local_exponent(profile, tau0, Side::Left, (resolution, 5e-2), 0.0).ok()
        }
        SingularityKind::Cusp => {
            fit_local_exponent(profile, tau0, Side::Right, (resolution, 2e-2), 0.0).ok()
        }
        _ => None,
    };

    Ok(SingularityReport { tau0, kind, delta_gap, rho_tilde, params, fit })
}

/// Golden-section minimization of the boundary density over [lo, hi].
pub fn refine_minimum(
    spec: &ModelSpec,
    lo: f64,
    hi: f64,
    opts: &SolveOptions,
) -> Result<f64> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = crate::density::density_at(spec, x1, opts)?;
    let mut f2 = crate::density::density_at(spec, x2, opts)?;
    while b - a > 1e-7 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = crate::density::density_at(spec, x1, opts)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = crate::density::density_at(spec, x2, opts)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Leading-order local density prediction at distance omega from tau0.
pub fn predict_density(report: &SingularityReport, omega: f64) -> f64 {
    let p = &report.params;
    match report.kind {
        SingularityKind::LeftEdge | SingularityKind::RightEdge => {
            let into_support = match report.kind {
                SingularityKind::LeftEdge => omega > 0.0,
                _ => omega < 0.0,
            };
            if !into_support {
                return 0.0;
            }
            if p.sigma.abs() >= SIGMA_GATE {
                // regular edge: rho(tau0 + omega) = sqrt(pi/|sigma|) |omega|^{1/2}
                (KAPPA / p.sigma.abs()).sqrt() * omega.abs().sqrt()
            } else {
                let delta = report.delta_gap.max(f64::MIN_POSITIVE);
                let psi_scaled = delta.cbrt() * psi_edge(omega.abs() / delta);
                (4.0 * p.gamma_big).cbrt() * psi_scaled
            }
        }
        SingularityKind::Cusp => p.gamma_big.cbrt() / 4f64.cbrt() * omega.abs().cbrt(),
        SingularityKind::InternalMin => {
            let rt = report.rho_tilde;
            if rt <= 0.0 {
                return p.rho0;
            }
            p.rho0 + p.gamma_big.cbrt() * rt * psi_min(omega / rt.powi(3))
        }
        SingularityKind::Ambiguous => f64::NAN,
    }
}

/// Evaluates the shape-analysis cubic at tau0 and offset omega; returns
/// (|mu3 Theta^3 + mu2 Theta^2 + mu1 Theta + pi omega|, |Theta|).
pub fn cubic_residual(spec: &ModelSpec, tau0: f64, omega: f64, opts: &SolveOptions) -> Result<(f64, f64)> {
    let bv0 = boundary_value(spec, tau0, opts, None)?;
    let m0 = &bv0.m_limit;
    let polar = polar_decompose(m0).or_else(|_| polar_decompose(&bv0.last.m))?;
    let params = shape_params_from_polar(spec, &polar)?;
    if omega == 0.0 {
        return Ok((0.0, 0.0));
    }
    let bv1 = boundary_value(spec, tau0 + omega, opts, None)?;
    let dm = &bv1.m_limit - m0;
    let theta = if spec.dim == 1 {
        dm[(0, 0)]
    } else {
        let eig = stability_eigendata(spec, m0)?;
        let lb = inner_product(&eig.l, &eig.b)?;
        inner_product(&eig.l, &dm)? / lb
    };
    let rho = params.rho0;
    let mu3 = c(params.psi, 0.0);
    let mu2 = c(params.sigma, 0.0)
        + c(0.0, rho * (3.0 * params.psi + params.sigma * params.sigma / params.avg_fu2.max(1e-300)));
    let mu1 = c(0.0, 2.0 * rho * params.sigma)
        - c(
            2.0 * rho * rho * (params.psi + params.sigma * params.sigma / params.avg_fu2.max(1e-300)),
            0.0,
        );
    let cubic = mu3 * theta * theta * theta + mu2 * theta * theta + mu1 * theta + c(KAPPA * omega, 0.0);
    Ok((cubic.norm(), theta.norm()))
}
