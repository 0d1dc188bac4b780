//! Constructors and validators for the data pair (a, S): the Hermitian bare
//! matrix and the positivity-preserving, symmetric self-energy.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    self, adjoint, c, hermitian_eigen, identity, inner_product, min_eig_hermitian, norm_l2, norm_op, normalized_trace, scalar, Matrix, SuperOperator,
};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone)]
pub enum SelfEnergy {
    /// S[x] = strength * <x> * 1 (Wigner type).
    Flat { strength: f64 },
    /// Arbitrary dense superoperator.
    Dense { op: SuperOperator },
    /// Two-component commutative model on weights (delta, 1-delta) with
    /// coupling matrix R_alpha = ((alpha*delta, 1-delta), (delta, alpha*(1-delta))),
    /// realized as an n x n block model acting on diagonal blocks.
    TwoComponent { delta: f64, alpha: f64, block: usize },
    /// Kronecker self-energy on C^{K x K} (x) functions of {1..N}:
    /// S[x]_i = sum_mu alpha_mu x^S_i alpha_mu + sum_nu (beta_nu x^T_i beta_nu*
    /// + beta_nu* x^Tt_i beta_nu), with the kernels averaging the diagonal
    /// K x K blocks of x.
    Kronecker {
        k: usize,
        n_idx: usize,
        alphas: Vec<Matrix>,
        betas: Vec<Matrix>,
        s_kernels: Vec<Array2<f64>>,
        t_kernels: Vec<Array2<f64>>,
    },
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub dim: usize,
    pub bare: Matrix,
    pub self_energy: SelfEnergy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatnessCertificate {
    pub c1: f64,
    pub c2: f64,
    pub method: String,
    pub samples: usize,
    pub worst_violator: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymmetryCertificate {
    pub pass: bool,
    pub worst_defect: f64,
}

impl SelfEnergy {
    pub fn apply(&self, x: &Matrix) -> Matrix {
        match self {
            SelfEnergy::Flat { strength } => {
                scalar(x.nrows(), normalized_trace(x) * c(*strength, 0.0))
            }
            SelfEnergy::Dense { op } => op.apply(x),
            SelfEnergy::TwoComponent { delta, alpha, block } => {
                two_component_apply(*delta, *alpha, *block, x)
            }
            SelfEnergy::Kronecker { k, n_idx, alphas, betas, s_kernels, t_kernels } => {
                kronecker_apply(*k, *n_idx, alphas, betas, s_kernels, t_kernels, x)
            }
        }
    }

    pub fn matrix_form(&self, dim: usize) -> SuperOperator {
        match self {
            SelfEnergy::Dense { op } => op.clone(),
            _ => SuperOperator::from_apply(dim, |x| self.apply(x)),
        }
    }

    /// Operator 2-norm of S, via power iteration on the symmetric map.
    pub fn norm(&self, dim: usize) -> f64 {
        match self {
            SelfEnergy::Flat { strength } => *strength,
            _ => {
                let mut x = identity(dim);
                let mut lam = 0.0;
                for _ in 0..500 {
                    let y = self.apply(&x);
                    let nl = norm_l2(&y);
                    if nl == 0.0 {
                        return 0.0;
                    }
                    let next = nl / norm_l2(&x);
                    x = y / c(nl, 0.0);
                    if (next - lam).abs() <= 1e-13 * next {
                        return next;
                    }
                    lam = next;
                }
                lam
            }
        }
    }
}

fn two_component_apply(delta: f64, alpha: f64, block: usize, x: &Matrix) -> Matrix {
    let n = x.nrows();
    debug_assert_eq!(block, (delta * n as f64).round() as usize);
    // S[x] = (1/n) diag(r_alpha diag(x)) with r_alpha(i,j) = alpha on same-block
    // pairs and 1 across blocks.
    let diag: Vec<Complex64> = x.diag().to_vec();
    let sum1: Complex64 = diag[..block].iter().sum();
    let sum2: Complex64 = diag[block..].iter().sum();
    let nf = c(n as f64, 0.0);
    let a = c(alpha, 0.0);
    let v1 = (a * sum1 + sum2) / nf;
    let v2 = (sum1 + a * sum2) / nf;
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        out[(i, i)] = if i < block { v1 } else { v2 };
    }
    out
}

fn kronecker_apply(
    k: usize,
    n_idx: usize,
    alphas: &[Matrix],
    betas: &[Matrix],
    s_kernels: &[Array2<f64>],
    t_kernels: &[Array2<f64>],
    x: &Matrix,
) -> Matrix {
    let dim = k * n_idx;
    debug_assert_eq!(x.nrows(), dim);
    // diagonal K x K blocks of x
    let blocks: Vec<Matrix> = (0..n_idx)
        .map(|i| {
            Array2::from_shape_fn((k, k), |(p, q)| x[(i * k + p, i * k + q)])
        })
        .collect();
    let mut out: Matrix = Array2::zeros((dim, dim));
    for i in 0..n_idx {
        let mut acc: Matrix = Array2::zeros((k, k));
        for (mu, a) in alphas.iter().enumerate() {
            let mut avg: Matrix = Array2::zeros((k, k));
            for j in 0..n_idx {
                let w = c(s_kernels[mu][(i, j)] / n_idx as f64, 0.0);
                avg = avg + blocks[j].mapv(|v| v * w);
            }
            acc = acc + a.dot(&avg).dot(a);
        }
        for (nu, b) in betas.iter().enumerate() {
            let mut avg: Matrix = Array2::zeros((k, k));
            for j in 0..n_idx {
                let w = c(t_kernels[nu][(i, j)] / n_idx as f64, 0.0);
                avg = avg + blocks[j].mapv(|v| v * w);
            }
            let bstar = adjoint(b);
            acc = acc + b.dot(&avg).dot(&bstar) + bstar.dot(&avg).dot(b);
        }
        for p in 0..k {
            for q in 0..k {
                out[(i * k + p, i * k + q)] = acc[(p, q)];
            }
        }
    }
    out
}

impl ModelSpec {
    pub fn new(bare: Matrix, self_energy: SelfEnergy) -> Result<Self> {
        let dim = bare.nrows();
        if !algebra::is_hermitian(&bare, 1e-10) {
            return Err(CoreError::NotHermitian {
                defect: algebra::hermitian_defect(&bare),
                tol: 1e-10,
            });
        }
        Ok(ModelSpec { dim, bare, self_energy })
    }

    pub fn flat_wigner(dim: usize) -> Self {
        ModelSpec { dim, bare: Array2::zeros((dim, dim)), self_energy: SelfEnergy::Flat { strength: 1.0 } }
    }

    pub fn apply_s(&self, x: &Matrix) -> Matrix {
        self.self_energy.apply(x)
    }

    pub fn s_matrix_form(&self) -> SuperOperator {
        self.self_energy.matrix_form(self.dim)
    }

    pub fn s_norm(&self) -> f64 {
        self.self_energy.norm(self.dim)
    }

    /// Window guaranteed to contain the support:
    /// spec(a) + [-2 ||S||^{1/2}, 2 ||S||^{1/2}].
    pub fn support_window(&self) -> Result<(f64, f64)> {
        let (vals, _) = hermitian_eigen(&self.bare)?;
        let r = 2.0 * self.s_norm().sqrt();
        Ok((vals[0] - r, vals[vals.len() - 1] + r))
    }
}

/// Two-component model of the worked example: weights (delta, 1-delta),
/// coupling alpha, zero bare matrix, realized on 2*n0 dimensions so the
/// small block has size delta*2*n0.
pub fn build_two_component(delta: f64, alpha: f64, n0: usize) -> Result<ModelSpec> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CoreError::InvalidParameter(format!("delta must be in (0,1), got {delta}")));
    }
    if alpha <= 0.0 {
        return Err(CoreError::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let n = 2 * n0;
    let block_f = delta * n as f64;
    let block = block_f.round() as usize;
    if (block_f - block as f64).abs() > 1e-9 || block == 0 || block >= n {
        return Err(CoreError::InvalidParameter(format!(
            "delta * 2 * n0 = {block_f} must be a positive integer below 2*n0"
        )));
    }
    Ok(ModelSpec {
        dim: n,
        bare: Array2::zeros((n, n)),
        self_energy: SelfEnergy::TwoComponent { delta, alpha, block },
    })
}

fn random_matrix(rng: &mut impl Rng, n: usize) -> Matrix {
    Array2::from_shape_fn((n, n), |_| {
        c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    })
}

fn random_psd(rng: &mut impl Rng, n: usize) -> Matrix {
    let g = random_matrix(rng, n);
    g.dot(&adjoint(&g))
}

/// Checks <x, S[y]> = <S[x], y> over sampled pairs.
pub fn certify_symmetry(s: &SuperOperator) -> SymmetryCertificate {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let n = s.dim;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = random_matrix(&mut rng, n);
        let y = random_matrix(&mut rng, n);
        let lhs = inner_product(&x, &s.apply(&y)).unwrap();
        let rhs = inner_product(&s.apply(&x), &y).unwrap();
        let scale = 1.0 + norm_l2(&x) * norm_l2(&y) * s.norm_fro();
        worst = worst.max((lhs - rhs).norm() / scale);
    }
    SymmetryCertificate { pass: worst <= 1e-10, worst_defect: worst }
}

/// For sampled PSD x, min eigenvalue of Hermitized S[x] must stay above
/// -1e-10 * ||S[x]||.
pub fn certify_positivity(s: &SuperOperator, samples: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0xabcd);
    let n = s.dim;
    (0..samples).all(|_| {
        let x = random_psd(&mut rng, n);
        let y = s.apply(&x);
        let yh = (&y + &adjoint(&y)) * c(0.5, 0.0);
        match min_eig_hermitian(&yh) {
            Ok(me) => me >= -1e-10 * (1.0 + norm_op(&y)),
            Err(_) => false,
        }
    })
}

/// Two-sided flatness bounds c1 <x> 1 <= S[x] <= c2 <x> 1 on the PSD cone.
pub fn flatness_bounds(spec: &ModelSpec) -> Result<FlatnessCertificate> {
    match &spec.self_energy {
        SelfEnergy::Flat { strength } => Ok(FlatnessCertificate {
            c1: *strength,
            c2: *strength,
            method: "exact".into(),
            samples: 0,
            worst_violator: 0.0,
        }),
        SelfEnergy::TwoComponent { alpha, .. } => {
            // S[x]_ii = (1/n) sum_j r(i,j) x_jj with entries of r in {alpha, 1};
            // min/max kernel entries bound S[x] against <x> 1 exactly.
            Ok(FlatnessCertificate {
                c1: alpha.min(1.0),
                c2: alpha.max(1.0),
                method: "exact".into(),
                samples: 0,
                worst_violator: 0.0,
            })
        }
        SelfEnergy::Kronecker { k, alphas, betas, s_kernels, t_kernels, .. } => {
            let kmin = s_kernels
                .iter()
                .chain(t_kernels.iter())
                .flat_map(|m| m.iter().cloned())
                .fold(f64::INFINITY, f64::min);
            let kmax = s_kernels
                .iter()
                .chain(t_kernels.iter())
                .flat_map(|m| m.iter().cloned())
                .fold(0.0f64, f64::max);
            let (inf_c, sup_c, samples) = kappa_congruence_range(*k, alphas, betas);
            Ok(FlatnessCertificate {
                c1: (kmin * inf_c).max(0.0),
                c2: kmax * sup_c,
                method: "sampled".into(),
                samples,
                worst_violator: kmin * inf_c,
            })
        }
        SelfEnergy::Dense { op } => {
            let mut rng = ChaCha8Rng::seed_from_u64(0xf1a7);
            let mut c1 = f64::INFINITY;
            let mut c2 = 0.0f64;
            let samples = 200;
            for _ in 0..samples {
                let x = random_psd(&mut rng, op.dim);
                let t = normalized_trace(&x).re;
                let y = op.apply(&x);
                let (vals, _) = hermitian_eigen(&y)?;
                c1 = c1.min(vals[0] / t);
                c2 = c2.max(vals[vals.len() - 1] / t);
            }
            Ok(FlatnessCertificate { c1, c2, method: "sampled".into(), samples, worst_violator: c1 })
        }
    }
}

/// inf and sup over sampled PSD kappa of the spectrum of
/// (1/tr kappa) (sum alpha kappa alpha + sum (beta kappa beta* + beta* kappa beta)).
fn kappa_congruence_range(k: usize, alphas: &[Matrix], betas: &[Matrix]) -> (f64, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xcafe);
    let samples = 400;
    let mut inf_c = f64::INFINITY;
    let mut sup_c = 0.0f64;
    for it in 0..samples {
        // include rank-1 extreme points: the infimum over the PSD cone is
        // attained on rank-1 kappa by convexity of min-eig in kappa direction
        let kap = if it % 2 == 0 {
            let v = Array1::from_shape_fn(k, |_| {
                c(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
            });
            Array2::from_shape_fn((k, k), |(i, j)| v[i] * v[j].conj())
        } else {
            random_psd(&mut rng, k)
        };
        let tr = kap.diag().sum().re;
        if tr <= 1e-12 {
            continue;
        }
        let mut acc: Matrix = Array2::zeros((k, k));
        for a in alphas {
            acc = acc + a.dot(&kap).dot(a);
        }
        for b in betas {
            let bs = adjoint(b);
            acc = acc + b.dot(&kap).dot(&bs) + bs.dot(&kap).dot(b);
        }
        if let Ok((vals, _)) = hermitian_eigen(&acc) {
            inf_c = inf_c.min(vals[0] / tr);
            sup_c = sup_c.max(vals[vals.len() - 1] / tr);
        }
    }
    (inf_c, sup_c, samples)
}

// --- JSON model definition -------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dim: usize,
    /// Row-major [re, im] pairs; omitted means a = 0.
    #[serde(default)]
    pub bare: Option<Vec<[f64; 2]>>,
    pub self_energy: SelfEnergyFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SelfEnergyFile {
    Flat { strength: f64 },
    Dense { matrix_form: Vec<[f64; 2]> },
    TwoComponent { delta: f64, alpha: f64, #[serde(default = "default_n0")] n0: usize },
    Kronecker {
        k: usize,
        n_idx: usize,
        alphas: Vec<Vec<[f64; 2]>>,
        #[serde(default)]
        betas: Vec<Vec<[f64; 2]>>,
        s_kernels: Vec<Vec<f64>>,
        #[serde(default)]
        t_kernels: Vec<Vec<f64>>,
    },
}

fn default_n0() -> usize {
    20
}

fn complex_rows(flat: &[[f64; 2]], n: usize) -> Result<Matrix> {
    if flat.len() != n * n {
        return Err(CoreError::InvalidParameter(format!(
            "expected {} complex entries, got {}",
            n * n,
            flat.len()
        )));
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| c(flat[i * n + j][0], flat[i * n + j][1])))
}

fn real_rows(rows: &[Vec<f64>], n: usize) -> Result<Array2<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(CoreError::InvalidParameter(format!("expected {n}x{n} kernel")));
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]))
}

impl ModelFile {
    pub fn build(&self) -> Result<ModelSpec> {
        let dim = self.dim;
        let bare = match &self.bare {
            Some(flat) => complex_rows(flat, dim)?,
            None => Array2::zeros((dim, dim)),
        };
        let self_energy = match &self.self_energy {
            SelfEnergyFile::Flat { strength } => {
                if *strength <= 0.0 {
                    return Err(CoreError::InvalidParameter("flat strength must be positive".into()));
                }
                SelfEnergy::Flat { strength: *strength }
            }
            SelfEnergyFile::Dense { matrix_form } => {
                if matrix_form.len() != dim * dim * dim * dim {
                    return Err(CoreError::InvalidParameter(
                        "dense self-energy needs dim^4 complex entries".into(),
                    ));
                }
                let n2 = dim * dim;
                let mat = Array2::from_shape_fn((n2, n2), |(i, j)| {
                    c(matrix_form[i * n2 + j][0], matrix_form[i * n2 + j][1])
                });
                SelfEnergy::Dense { op: SuperOperator::from_matrix(dim, mat) }
            }
            SelfEnergyFile::TwoComponent { delta, alpha, n0 } => {
                let spec = build_two_component(*delta, *alpha, *n0)?;
                if spec.dim != dim {
                    return Err(CoreError::InvalidParameter(format!(
                        "two_component with n0={n0} has dim {}, config says {dim}",
                        spec.dim
                    )));
                }
                spec.self_energy
            }
            SelfEnergyFile::Kronecker { k, n_idx, alphas, betas, s_kernels, t_kernels } => {
                if k * n_idx != dim {
                    return Err(CoreError::InvalidParameter("kronecker k * n_idx must equal dim".into()));
                }
                let alphas = alphas
                    .iter()
                    .map(|a| complex_rows(a, *k))
                    .collect::<Result<Vec<_>>>()?;
                for a in &alphas {
                    if !algebra::is_hermitian(a, 1e-10) {
                        return Err(CoreError::InvalidParameter("kronecker alpha must be Hermitian".into()));
                    }
                }
                let betas = betas.iter().map(|b| complex_rows(b, *k)).collect::<Result<Vec<_>>>()?;
                let parse_kernels = |ks: &[Vec<f64>]| -> Result<Vec<Array2<f64>>> {
                    ks.chunks(*n_idx)
                        .map(|rows| real_rows(rows, *n_idx))
                        .collect()
                };
                if s_kernels.len() % n_idx != 0 || t_kernels.len() % n_idx != 0 {
                    return Err(CoreError::InvalidParameter(
                        "kernels must be given as stacked n_idx x n_idx row blocks".into(),
                    ));
                }
                let s_kernels = parse_kernels(s_kernels)?;
                let t_kernels = parse_kernels(t_kernels)?;
                if alphas.len() != s_kernels.len() || betas.len() != t_kernels.len() {
                    return Err(CoreError::InvalidParameter(
                        "kronecker coupling/kernel counts must match".into(),
                    ));
                }
                for s in &s_kernels {
                    if (s - &s.t()).iter().any(|v| v.abs() > 1e-12) {
                        return Err(CoreError::InvalidParameter("s kernels must be symmetric".into()));
                    }
                }
                if s_kernels
                    .iter()
                    .chain(t_kernels.iter())
                    .any(|m| m.iter().any(|&v| v < 0.0))
                {
                    return Err(CoreError::InvalidParameter("kernels must be nonnegative".into()));
                }
                SelfEnergy::Kronecker {
                    k: *k,
                    n_idx: *n_idx,
                    alphas,
                    betas,
                    s_kernels,
                    t_kernels,
                }
            }
        };
        ModelSpec::new(bare, self_energy)
    }
}

/// RNG-free sanity wrapper used by construction paths: symmetry + positivity.
pub fn certify(spec: &ModelSpec) -> Result<SymmetryCertificate> {
    let s = spec.s_matrix_form();
    let sym = certify_symmetry(&s);
    if !certify_positivity(&s, 50) {
        return Err(CoreError::InvalidParameter("self-energy is not positivity-preserving".into()));
    }
    Ok(sym)
}

