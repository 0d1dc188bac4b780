//! Band mass on the real axis outside the support:
//! rho((-inf, tau)) = <1_{(-inf,0)}(m(tau))> and quantization checks.

use serde::{Deserialize, Serialize};

use crate::algebra::{
    hermitian_defect, imag_part, negative_indicator, norm_fro, normalized_trace,
    real_part, Matrix,
};
use crate::density::{classify_point, trapezoid, BandStructure, DensityProfile, SupportClass};
use crate::error::{CoreError, Result};
use crate::model::ModelSpec;
use crate::solver::{boundary_value, SolveOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandMassReport {
    pub tau: f64,
    pub mass_left_formula: f64,
    pub mass_left_integral: f64,
    /// Frobenius asymmetry of the real-axis limit (should be tiny).
    pub hermitian_defect: f64,
    /// Residual of the real-axis Dyson equation at tau.
    pub dyson_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandMass {
    pub band: (f64, f64),
    pub mass: f64,
    pub n_mass: f64,
    pub quantization_defect: f64,
}

/// Hermitian real-axis limit of m at an exterior point.
pub fn real_axis_limit(spec: &ModelSpec, tau: f64, opts: &SolveOptions) -> Result<Matrix> {
    let d = classify_point(spec, tau, opts)?;
    if d.class == SupportClass::Inside {
        return Err(CoreError::InsideSupport(tau));
    }
    let bv = boundary_value(spec, tau, opts, None)?;
    // outside the support the limit is Hermitian; drop the residual
    // imaginary part of order eta
    Ok(real_part(&bv.m_limit))
}

pub fn band_mass_left(
    spec: &ModelSpec,
    tau: f64,
    profile: &DensityProfile,
    opts: &SolveOptions,
) -> Result<BandMassReport> {
    let bv = boundary_value(spec, tau, opts, None)?;
    let d = classify_point(spec, tau, opts)?;
    if d.class == SupportClass::Inside {
        return Err(CoreError::InsideSupport(tau));
    }
    let defect = norm_fro(&imag_part(&bv.m_limit));
    let m_real = real_part(&bv.m_limit);
    let indicator = negative_indicator(&m_real, 1e-8)?;
    let formula = normalized_trace(&indicator).re;
    // left-restricted trapezoid mass of the profile
    let mut taus = Vec::new();
    let mut rho = Vec::new();
    for (&t, &r) in profile.taus.iter().zip(profile.rho.iter()) {
        if t <= tau {
            taus.push(t);
            rho.push(r);
        }
    }
    let integral = trapezoid(&taus, &rho);
    let residual = crate::solver::residual(spec, crate::algebra::c(tau, 0.0), &m_real);
    Ok(BandMassReport {
        tau,
        mass_left_formula: formula,
        mass_left_integral: integral,
        hermitian_defect: hermitian_defect(&m_real).max(defect),
        dyson_residual: residual,
    })
}

/// Per-band masses from consecutive exterior evaluations at gap midpoints,
/// with the nearest-integer-multiple defect of n * mass.
pub fn band_masses(
    spec: &ModelSpec,
    structure: &BandStructure,
    profile: &DensityProfile,
    opts: &SolveOptions,
) -> Result<Vec<BandMass>> {
    let n = spec.dim as f64;
    let kb = structure.bands.len();
    if kb == 0 {
        return Ok(Vec::new());
    }
    // cumulative masses at the exterior evaluation points bracketing each band
    let mut cuts: Vec<f64> = Vec::with_capacity(kb + 1);
    cuts.push(structure.bands[0].0 - 0.5);
    for gap in &structure.gaps {
        let mid = 0.5 * (gap.0 + gap.1);
        // keep clear of band edges; the real-axis limit degrades there
        if mid - gap.0 < 0.02 {
            return Err(CoreError::InvalidParameter(format!(
                "gap {gap:?} too narrow for a safe midpoint evaluation"
            )));
        }
        cuts.push(mid);
    }
    cuts.push(structure.bands[kb - 1].1 + 0.5);
    let mut cumulative = Vec::with_capacity(cuts.len());
    for &tau in &cuts {
        cumulative.push(band_mass_left(spec, tau, profile, opts)?.mass_left_formula);
    }
    let mut out = Vec::with_capacity(kb);
    for i in 0..kb {
        let mass = cumulative[i + 1] - cumulative[i];
        let n_mass = n * mass;
        out.push(BandMass {
            band: structure.bands[i],
            mass,
            n_mass,
            quantization_defect: (n_mass - n_mass.round()).abs(),
        });
    }
    Ok(out)
}

/// Defect of cubic-order one-sided extrapolation of m to tau from
/// tau + h, tau + 2h, tau + 3h; scales as h^3 where m is analytic.
pub fn analytic_continuation_check(
    spec: &ModelSpec,
    tau: f64,
    h: f64,
    opts: &SolveOptions,
) -> Result<f64> {
    let m0 = real_axis_limit(spec, tau, opts)?;
    let m1 = real_axis_limit(spec, tau + h, opts)?;
    let m2 = real_axis_limit(spec, tau + 2.0 * h, opts)?;
    let m3 = real_axis_limit(spec, tau + 3.0 * h, opts)?;
    let three = crate::algebra::c(3.0, 0.0);
    let extrap = &(&m1 * three) - &(&m2 * three) + &m3;
    Ok(norm_fro(&(&m0 - &extrap)))
}

/// Sanity check helper: min |eigenvalue| of the real-axis limit.
pub fn min_abs_eig(m_real: &Matrix) -> Result<f64> {
    let (vals, _) = crate::algebra::hermitian_eigen(m_real)?;
    Ok(vals.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs())))
}
