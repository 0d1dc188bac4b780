//! Kronecker random matrix sampling, empirical spectral distributions, and
//! comparison against the self-consistent density.

use ndarray::Array2;
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{adjoint, c, kron, Matrix};
use crate::density::DensityProfile;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryLaw {
    ComplexGaussian,
    RealGaussian,
    Rademacher,
}

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub k: usize,
    pub n: usize,
    /// Hermitian K x K couplings of the Hermitian noise blocks.
    pub alphas: Vec<Matrix>,
    /// K x K couplings of the non-Hermitian noise blocks.
    pub betas: Vec<Matrix>,
    /// Symmetric nonnegative N x N variance profiles, one per alpha.
    pub s_profiles: Vec<Array2<f64>>,
    /// Nonnegative N x N variance profiles, one per beta.
    pub t_profiles: Vec<Array2<f64>>,
    /// Per-index K x K bare blocks; empty means A = 0.
    pub bare: Vec<Matrix>,
    pub law: EntryLaw,
    pub seed: u64,
}

impl EnsembleSpec {
    /// Wigner matrix: K = 1, one Hermitian block with flat unit profile.
    pub fn wigner(n: usize, seed: u64) -> Self {
        EnsembleSpec {
            k: 1,
            n,
            alphas: vec![Array2::eye(1)],
            betas: vec![],
            s_profiles: vec![Array2::ones((n, n))],
            t_profiles: vec![],
            bare: vec![],
            law: EntryLaw::ComplexGaussian,
            seed,
        }
    }

    /// The two-component scenario as a variance-profile Wigner ensemble:
    /// kernel alpha on same-block index pairs, 1 across blocks, first block
    /// of relative size delta.
    pub fn two_component(delta: f64, alpha: f64, n: usize, seed: u64) -> Self {
        let block = (delta * n as f64).round() as usize;
        let profile = Array2::from_shape_fn((n, n), |(i, j)| {
            if (i < block) == (j < block) {
                alpha
            } else {
                1.0
            }
        });
        EnsembleSpec {
            k: 1,
            n,
            alphas: vec![Array2::eye(1)],
            betas: vec![],
            s_profiles: vec![profile],
            t_profiles: vec![],
            bare: vec![],
            law: EntryLaw::ComplexGaussian,
            seed,
        }
    }
}

fn draw_entry(rng: &mut ChaCha8Rng, law: EntryLaw) -> Complex64 {
    match law {
        EntryLaw::ComplexGaussian => {
            // E|x|^2 = 1 split over both components
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            c(re / 2f64.sqrt(), im / 2f64.sqrt())
        }
        EntryLaw::RealGaussian => c(rng.sample(StandardNormal), 0.0),
        EntryLaw::Rademacher => c(if rng.gen::<bool>() { 1.0 } else { -1.0 }, 0.0),
    }
}

/// One draw of H = A + sum alpha_mu (x) X_mu + sum (beta_nu (x) Y_nu + h.c.),
/// Hermitian by construction, RNG stream derived from (seed, draw).
pub fn sample(ens: &EnsembleSpec, draw: u64) -> Matrix {
    let (k, n) = (ens.k, ens.n);
    let dim = k * n;
    let mut rng = ChaCha8Rng::seed_from_u64(ens.seed);
    rng.set_stream(draw);
    let mut h: Matrix = Array2::zeros((dim, dim));
    for (i, a) in ens.bare.iter().enumerate() {
        for p in 0..k {
            for q in 0..k {
                // A = sum_i a_i (x) E_ii lives on the (i,i) diagonal N-block;
                // our layout is index-major: entry ((i,p),(i,q))
                h[(i * k + p, i * k + q)] += a[(p, q)];
            }
        }
    }
    let scale = 1.0 / (n as f64).sqrt();
    for (mu, alpha) in ens.alphas.iter().enumerate() {
        let prof = &ens.s_profiles[mu];
        let mut x: Matrix = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let sd = prof[(i, j)].sqrt() * scale;
                if i == j {
                    let g: f64 = rng.sample(StandardNormal);
                    x[(i, i)] = c(g * sd, 0.0);
                } else {
                    let e = draw_entry(&mut rng, ens.law) * c(sd, 0.0);
                    x[(i, j)] = e;
                    x[(j, i)] = e.conj();
                }
            }
        }
        h = h + index_major_kron(alpha, &x, k, n);
    }
    for (nu, beta) in ens.betas.iter().enumerate() {
        let prof = &ens.t_profiles[nu];
        let mut y: Matrix = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                y[(i, j)] = draw_entry(&mut rng, ens.law) * c(prof[(i, j)].sqrt() * scale, 0.0);
            }
        }
        let term = index_major_kron(beta, &y, k, n);
        h = &h + &term + adjoint(&term);
    }
    h
}

/// kron with the N index major, matching the model module's block layout:
/// entry ((i,p),(j,q)) = coup[(p,q)] * noise[(i,j)].
fn index_major_kron(coup: &Matrix, noise: &Matrix, k: usize, _n: usize) -> Matrix {
    if k == 1 {
        return noise.mapv(|v| v * coup[(0, 0)]);
    }
    kron(noise, coup).to_owned()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Esd {
    pub eigenvalues: Vec<f64>,
    pub seed: u64,
    pub draw: u64,
}

pub fn esd(h: &Matrix, seed: u64, draw: u64) -> Result<Esd> {
    let (mut vals, _) = h
        .eigh(UPLO::Lower)
        .map_err(|e| CoreError::Eig(e.to_string()))?;
    let mut eigenvalues = vals.as_slice_mut().unwrap().to_vec();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(Esd { eigenvalues, seed, draw })
}

pub fn sample_esds(ens: &EnsembleSpec, draws: u64) -> Result<Vec<Esd>> {
    (0..draws)
        .into_par_iter()
        .map(|d| esd(&sample(ens, d), ens.seed, d))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub ks: f64,
    pub l1_hist: f64,
    pub bin_width: f64,
    pub n: usize,
    pub seed: u64,
}

/// Kolmogorov-Smirnov distance between the empirical CDF and the trapezoid
/// CDF of the profile, plus an L1 histogram distance.
pub fn compare(esd: &Esd, profile: &DensityProfile) -> Result<Comparison> {
    let lam = &esd.eigenvalues;
    let nev = lam.len();
    let (lo, hi) = (profile.taus[0], *profile.taus.last().unwrap());
    if lam[0] < lo - 0.5 || lam[nev - 1] > hi + 0.5 {
        return Err(CoreError::WindowTooSmall((lo, hi), (lam[0], lam[nev - 1])));
    }
    // cumulative trapezoid of rho, normalized to its own mass
    let mut cdf = Vec::with_capacity(profile.taus.len());
    let mut acc = 0.0;
    cdf.push(0.0);
    for i in 1..profile.taus.len() {
        acc += 0.5 * (profile.taus[i] - profile.taus[i - 1]) * (profile.rho[i] + profile.rho[i - 1]);
        cdf.push(acc);
    }
    let mass = acc.max(1e-300);
    let model_cdf = |t: f64| -> f64 {
        if t <= profile.taus[0] {
            return 0.0;
        }
        if t >= *profile.taus.last().unwrap() {
            return 1.0;
        }
        let i = profile.taus.partition_point(|&x| x <= t);
        let (t0, t1) = (profile.taus[i - 1], profile.taus[i]);
        let w = (t - t0) / (t1 - t0);
        (cdf[i - 1] * (1.0 - w) + cdf[i] * w) / mass
    };
    let mut ks = 0.0f64;
    for (i, &x) in lam.iter().enumerate() {
        let f = model_cdf(x);
        let lo_emp = i as f64 / nev as f64;
        let hi_emp = (i + 1) as f64 / nev as f64;
        ks = ks.max((f - lo_emp).abs()).max((f - hi_emp).abs());
    }
    // L1 histogram distance at a resolution-matched bin width
    let bins = 80usize;
    let bin_width = (hi - lo) / bins as f64;
    let mut l1 = 0.0;
    for b in 0..bins {
        let a = lo + b as f64 * bin_width;
        let z = a + bin_width;
        let emp = lam.iter().filter(|&&x| x >= a && x < z).count() as f64 / nev as f64;
        let model = model_cdf(z) - model_cdf(a);
        l1 += (emp - model).abs();
    }
    Ok(Comparison { ks, l1_hist: l1, bin_width, n: nev, seed: esd.seed })
}

/// Fraction of eigenvalues falling inside a given interval (gap occupancy).
pub fn mass_in(esd: &Esd, interval: (f64, f64)) -> f64 {
    esd.eigenvalues
        .iter()
        .filter(|&&x| x > interval.0 && x < interval.1)
        .count() as f64
        / esd.eigenvalues.len() as f64
}

/// Entrywise mean over draws (for checking E H = A).
pub fn mean_matrix(ens: &EnsembleSpec, draws: u64) -> Matrix {
    let dim = ens.k * ens.n;
    let mut acc: Matrix = Array2::zeros((dim, dim));
    for d in 0..draws {
        acc = acc + sample(ens, d);
    }
    acc.mapv(|v| v / c(draws as f64, 0.0))
}

