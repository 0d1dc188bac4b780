//! Self-consistent density of states on a grid: support detection, bands,
//! gaps, and interior local minima.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{imag_part, norm_op, normalized_trace};
use crate::error::{CoreError, Result};
use crate::model::ModelSpec;
use crate::solver::{boundary_value, SolveOptions};

pub const RHO_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityProfile {
    pub taus: Vec<f64>,
    /// rho(tau) = <Im m(tau)>/pi from the extrapolated boundary value.
    pub rho: Vec<f64>,
    pub eta_used: Vec<f64>,
    pub support_mask: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandStructure {
    pub bands: Vec<(f64, f64)>,
    pub gaps: Vec<(f64, f64)>,
    /// Interior local minima (tau0, rho(tau0)) strictly inside a band.
    pub minima: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupportClass {
    Inside,
    Outside,
    Inconclusive,
}

#[derive(Debug, Clone, Copy)]
pub struct SupportDecision {
    pub class: SupportClass,
    /// Fitted eta -> 0 limit of eta / ||Im m(tau + i eta)||.
    pub ratio_limit: f64,
    /// Fitted log-log slope of the ratio; 1 inside, 0 outside.
    pub slope: f64,
}

pub fn density_at(spec: &ModelSpec, tau: f64, opts: &SolveOptions) -> Result<f64> {
    let bv = boundary_value(spec, tau, opts, None)?;
    Ok(clip(normalized_trace(&imag_part(&bv.m_limit)).re / std::f64::consts::PI))
}

fn clip(rho: f64) -> f64 {
    if rho < 0.0 {
        if rho < -RHO_CLIP {
            rho // genuinely negative values surface in the profile invariant
        } else {
            0.0
        }
    } else {
        rho
    }
}

/// Inside/outside decision from the trend of eta/||Im m|| down the ladder:
/// the ratio vanishes linearly in eta inside the support and has a positive
/// limit outside.
pub fn classify_point(spec: &ModelSpec, tau: f64, opts: &SolveOptions) -> Result<SupportDecision> {
    let bv = boundary_value(spec, tau, opts, None)?;
    Ok(decide_from_ladder(&bv.ladder.iter().map(|s| (s.z.im, norm_op(&imag_part(&s.m)))).collect::<Vec<_>>()))
}

pub(crate) fn decide_from_ladder(rungs: &[(f64, f64)]) -> SupportDecision {
    let k = rungs.len();
    let take = k.min(4);
    let tail = &rungs[k - take..];
    // least-squares slope of log ratio vs log eta over the lowest rungs
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .map(|&(eta, im_norm)| (eta.ln(), (eta / im_norm.max(1e-300)).ln()))
        .collect();
    let nm = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nm;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nm;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let (eta_last, im_last) = tail[take - 1];
    let ratio_limit = if slope > 0.5 { 0.0 } else { eta_last / im_last.max(1e-300) };
    let class = if slope >= 0.75 {
        SupportClass::Inside
    } else if slope <= 0.25 {
        SupportClass::Outside
    } else {
        SupportClass::Inconclusive
    };
    SupportDecision { class, ratio_limit, slope }
}

/// Scan the window with warm-started ladders; support mask per point.
///
/// The grid is cut into fixed-size chunks processed independently, so the
/// result is identical for any number of workers.
pub fn scan(spec: &ModelSpec, window: (f64, f64), points: usize, opts: &SolveOptions) -> Result<DensityProfile> {
    if points < 2 || !(window.1 > window.0) {
        return Err(CoreError::InvalidParameter(format!(
            "scan window {window:?} with {points} points is degenerate"
        )));
    }
    let taus: Vec<f64> = (0..points)
        .map(|i| window.0 + (window.1 - window.0) * i as f64 / (points - 1) as f64)
        .collect();
    const CHUNK: usize = 64;
    let results: Vec<Result<(f64, f64, bool)>> = taus
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let mut out = Vec::with_capacity(chunk.len());
            let mut warm: Option<Vec<crate::solver::Solution>> = None;
            for &tau in chunk {
                let r = boundary_value(spec, tau, opts, warm.as_deref());
                match r {
                    Ok(bv) => {
                        let rho = clip(normalized_trace(&imag_part(&bv.m_limit)).re / std::f64::consts::PI);
                        let rungs: Vec<(f64, f64)> = bv
                            .ladder
                            .iter()
                            .map(|s| (s.z.im, norm_op(&imag_part(&s.m))))
                            .collect();
                        let inside = decide_from_ladder(&rungs).class == SupportClass::Inside;
                        out.push(Ok((rho, bv.eta_eff, inside)));
                        warm = Some(bv.ladder);
                    }
                    Err(e) => out.push(Err(e)),
                }
            }
            out
        })
        .collect();
    let mut rho = Vec::with_capacity(points);
    let mut eta_used = Vec::with_capacity(points);
    let mut support_mask = Vec::with_capacity(points);
    for r in results {
        let (rh, eta, inside) = r?;
        rho.push(rh);
        eta_used.push(eta);
        support_mask.push(inside);
    }
    Ok(DensityProfile { taus, rho, eta_used, support_mask })
}

/// Maximal runs of inside-points, edges refined by bisection on
/// classify_point down to the grid resolution; interior minima with
/// quadratic sub-grid refinement.
pub fn band_structure(spec: &ModelSpec, profile: &DensityProfile, opts: &SolveOptions) -> Result<BandStructure> {
    let n = profile.taus.len();
    let resolution = (profile.taus[n - 1] - profile.taus[0]) / (n - 1) as f64;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..n {
        match (profile.support_mask[i], start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, n - 1));
    }
    // drop spurious single-point runs
    runs.retain(|&(s, e)| e > s);

    let refine = |mut lo: f64, mut hi: f64, inside_at_lo: bool| -> Result<f64> {
        // invariant: classification differs at lo and hi
        for _ in 0..12 {
            if hi - lo <= resolution * 0.05 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let d = classify_point(spec, mid, opts)?;
            let mid_inside = d.class == SupportClass::Inside;
            if mid_inside == inside_at_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    };

    let mut bands = Vec::new();
    for &(s, e) in &runs {
        let left = if s == 0 {
            profile.taus[0]
        } else {
            refine(profile.taus[s - 1], profile.taus[s], false)?
        };
        let right = if e == n - 1 {
            profile.taus[n - 1]
        } else {
            refine(profile.taus[e], profile.taus[e + 1], true)?
        };
        bands.push((left, right));
    }
    let gaps = bands.windows(2).map(|w| (w[0].1, w[1].0)).collect();

    // interior local minima of rho strictly inside a run
    let mut minima = Vec::new();
    for &(s, e) in &runs {
        for i in (s + 2)..=e.saturating_sub(2) {
            let (r0, r1, r2) = (profile.rho[i - 1], profile.rho[i], profile.rho[i + 1]);
            if r1 <= r0 && r1 <= r2 && (r1 < r0 || r1 < r2) {
                // quadratic vertex through the three points
                let h = resolution;
                let denom = r0 - 2.0 * r1 + r2;
                let (tau0, rho0) = if denom.abs() > 1e-14 {
                    let dx = 0.5 * h * (r0 - r2) / denom;
                    (profile.taus[i] + dx, (r1 - 0.125 * (r0 - r2) * (r0 - r2) / denom).max(0.0))
                } else {
                    (profile.taus[i], r1)
                };
                minima.push((tau0, rho0));
            }
        }
    }
    // deduplicate plateau detections closer than 2 grid steps
    minima.dedup_by(|a, b| (a.0 - b.0).abs() < 2.0 * resolution);
    Ok(BandStructure { bands, gaps, minima })
}

/// Trapezoid mass; errors if the window provably misses part of the support.
pub fn total_mass(spec: &ModelSpec, profile: &DensityProfile) -> Result<f64> {
    let (lo, hi) = spec.support_window()?;
    let (wlo, whi) = (profile.taus[0], *profile.taus.last().unwrap());
    if wlo > lo || whi < hi {
        return Err(CoreError::WindowTooSmall((wlo, whi), (lo, hi)));
    }
    Ok(trapezoid(&profile.taus, &profile.rho))
}

pub fn trapezoid(taus: &[f64], rho: &[f64]) -> f64 {
    taus.windows(2)
        .zip(rho.windows(2))
        .map(|(t, r)| 0.5 * (t[1] - t[0]) * (r[0] + r[1]))
        .sum()
}

/// rho interpolated linearly on the grid (helper for comparisons and fits).
pub fn interp_rho(profile: &DensityProfile, tau: f64) -> f64 {
    let taus = &profile.taus;
    if tau <= taus[0] {
        return profile.rho[0];
    }
    if tau >= *taus.last().unwrap() {
        return *profile.rho.last().unwrap();
    }
    let i = taus.partition_point(|&t| t <= tau).min(taus.len() - 1);
    let (t0, t1) = (taus[i - 1], taus[i]);
    let w = (tau - t0) / (t1 - t0);
    profile.rho[i - 1] * (1.0 - w) + profile.rho[i] * w
}
