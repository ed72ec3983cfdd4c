use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{NullVarianceSpec, SimulatedLaw};
use crate::error::{Error, Result};
use crate::linalg::{sym_eig, sym_eigenvalues, SymMatrix};
use crate::nulldist::estimate::build_omega_arch;
use crate::rng::{chunked_draws, SimRng};
use crate::stats::s_star_from_eigenvalues;

const CHUNK: usize = 256;

fn normal(rng: &mut SimRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Symmetric `T × T` matrix with `z_tt ~ N(0, η)` and `z_ts ~ N(0, q)`, all independent.
pub fn simulate_z_indep(t: usize, eta: f64, q: f64, rng: &mut SimRng) -> Result<SymMatrix> {
    if !(eta > 0.0 && q > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eta and q must be positive, got eta={eta}, q={q}"
        )));
    }
    let mut z = DMatrix::zeros(t, t);
    fill_indep(&mut z, eta.sqrt(), q.sqrt(), rng);
    Ok(SymMatrix::new(z).expect("finite by construction"))
}

fn fill_indep(z: &mut DMatrix<f64>, sd_diag: f64, sd_off: f64, rng: &mut SimRng) {
    let t = z.nrows();
    for j in 0..t {
        z[(j, j)] = sd_diag * normal(rng);
        for i in 0..j {
            let v = sd_off * normal(rng);
            z[(i, j)] = v;
            z[(j, i)] = v;
        }
    }
}

/// Gaussian symmetric matrices with a prescribed covariance of `vec(Z)`.
///
/// Only the upper-triangular entries are drawn; the covariance of `vec(Z)` is
/// assumed consistent with symmetry.
#[derive(Clone, Debug)]
pub struct VechSampler {
    dim: usize,
    pairs: Vec<(usize, usize)>,
    factor: DMatrix<f64>,
    /// Most negative eigenvalue clipped when forming the square root.
    pub clipped: f64,
}

impl VechSampler {
    pub fn new(omega: &DMatrix<f64>, dim: usize) -> Result<Self> {
        if omega.shape() != (dim * dim, dim * dim) {
            return Err(Error::invalid(format!(
                "covariance is {}x{}, expected {}x{}",
                omega.nrows(),
                omega.ncols(),
                dim * dim,
                dim * dim
            )));
        }
        if omega.iter().any(|x| !x.is_finite()) {
            return Err(Error::SimulationFailure("covariance has non-finite entries".into()));
        }
        let pairs: Vec<(usize, usize)> = (0..dim)
            .flat_map(|j| (0..=j).map(move |i| (i, j)))
            .collect();
        let p = pairs.len();
        let cov = DMatrix::from_fn(p, p, |a, b| {
            let (i, j) = pairs[a];
            let (r, s) = pairs[b];
            omega[(i + j * dim, r + s * dim)]
        });
        let eig = sym_eig(&SymMatrix::symmetrized(cov))?;
        let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
        let low = eig.values.last().copied().unwrap_or(0.0);
        if low < -1e-6 * top.max(f64::MIN_POSITIVE) {
            return Err(Error::SimulationFailure(format!(
                "covariance is not positive semi-definite (eigenvalue {low:e}, largest {top:e})"
            )));
        }
        if low < -1e-8 * top {
            log::warn!("clipping eigenvalue {low:e} of the simulation covariance to 0");
        }
        let mut factor = eig.vectors.clone();
        for (c, v) in eig.values.iter().enumerate() {
            let s = v.max(0.0).sqrt();
            factor.column_mut(c).scale_mut(s);
        }
        Ok(VechSampler {
            dim,
            pairs,
            factor,
            clipped: low.min(0.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn fill(&self, z: &mut DMatrix<f64>, u: &mut DVector<f64>, x: &mut DVector<f64>, rng: &mut SimRng) {
        for v in u.iter_mut() {
            *v = normal(rng);
        }
        x.gemv(1.0, &self.factor, u, 0.0);
        for (a, &(i, j)) in self.pairs.iter().enumerate() {
            z[(i, j)] = x[a];
            z[(j, i)] = x[a];
        }
    }

    /// One draw.
    pub fn sample(&self, rng: &mut SimRng) -> SymMatrix {
        let p = self.pairs.len();
        let mut z = DMatrix::zeros(self.dim, self.dim);
        let (mut u, mut x) = (DVector::zeros(p), DVector::zeros(p));
        self.fill(&mut z, &mut u, &mut x, rng);
        SymMatrix::symmetrized(z)
    }
}

enum Source {
    Indep { sd_diag: f64, sd_off: f64 },
    Vech(VechSampler),
}

/// Draws of the projected matrix `Z* = Q'ZQ` (or `Z̄*` directly).
struct ProjectedSampler {
    source: Source,
    q: Option<DMatrix<f64>>,
    t: usize,
    m: usize,
}

impl ProjectedSampler {
    fn new(spec: &NullVarianceSpec, t: usize, k: usize, q_hat: &DMatrix<f64>) -> Result<Self> {
        let m = t - k;
        let check_q = || -> Result<Option<DMatrix<f64>>> {
            if q_hat.shape() != (t, m) {
                return Err(Error::invalid(format!(
                    "complement basis is {}x{}, expected {t}x{m}",
                    q_hat.nrows(),
                    q_hat.ncols()
                )));
            }
            Ok(Some(q_hat.clone()))
        };
        match spec {
            NullVarianceSpec::IndepErrors { eta, q } => {
                if !(*eta > 0.0 && *q > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "eta and q must be positive, got eta={eta}, q={q}"
                    )));
                }
                Ok(ProjectedSampler {
                    source: Source::Indep {
                        sd_diag: eta.sqrt(),
                        sd_off: q.sqrt(),
                    },
                    q: check_q()?,
                    t,
                    m,
                })
            }
            NullVarianceSpec::ArchParam { theta } => {
                if theta.len() != t + 1 {
                    return Err(Error::InvalidParameter(format!(
                        "theta has length {}, expected T+1 = {}",
                        theta.len(),
                        t + 1
                    )));
                }
                let omega = build_omega_arch(theta)?;
                let q = check_q()?.expect("checked");
                // Covariance of the trace-removed Q'ZQ; the spacings do not see the trace.
                let x = crate::linalg::kron(&q, &q);
                let vec_i = DVector::from_fn(m * m, |r, _| if r % (m + 1) == 0 { 1.0 } else { 0.0 });
                let center = DMatrix::<f64>::identity(m * m, m * m) - &vec_i * vec_i.transpose() / m as f64;
                let projected = &center * x.tr_mul(&omega) * &x * &center;
                Ok(ProjectedSampler {
                    source: Source::Vech(VechSampler::new(&projected, m)?),
                    q: None,
                    t: m,
                    m,
                })
            }
            NullVarianceSpec::Nonparam { omega_bar } => Ok(ProjectedSampler {
                source: Source::Vech(VechSampler::new(omega_bar, m)?),
                q: None,
                t: m,
                m,
            }),
            other => Err(Error::invalid(format!(
                "{} variance cannot drive the spacing statistics",
                other.label()
            ))),
        }
    }

    /// Eigenvalues (descending) of `n_draws` projected matrices.
    fn eigen_draws(&self, rng: &mut SimRng, n_draws: usize) -> Vec<Vec<f64>> {
        let mut z = DMatrix::zeros(self.t, self.t);
        let mut zq = DMatrix::zeros(self.t, self.m);
        let mut zs = DMatrix::zeros(self.m, self.m);
        let p = self.t * (self.t + 1) / 2;
        let (mut u, mut x) = (DVector::zeros(p), DVector::zeros(p));
        (0..n_draws)
            .map(|_| {
                match &self.source {
                    Source::Indep { sd_diag, sd_off } => fill_indep(&mut z, *sd_diag, *sd_off, rng),
                    Source::Vech(s) => s.fill(&mut z, &mut u, &mut x, rng),
                }
                match &self.q {
                    Some(q) => {
                        zq.gemm(1.0, &z, q, 0.0);
                        zs.gemm_tr(1.0, q, &zq, 0.0);
                        sym_eigenvalues(&zs)
                    }
                    None => sym_eigenvalues(&z),
                }
            })
            .collect()
    }
}

/// Simulated null laws of the spacing statistics.
#[derive(Clone, Debug)]
pub struct SpacingLaws {
    /// `δ_1(Z*) − δ_{T−k}(Z*)`, the limit of `√n·S(k)`.
    pub s: SimulatedLaw,
    /// Max spacing ratio, present when `T − k ≥ 3`.
    pub s_star: Option<SimulatedLaw>,
    /// Per-draw consecutive spacings `δ_j − δ_{j+1}`, in draw order, when requested.
    pub spacings: Option<Vec<Vec<f64>>>,
}

/// Simulates the null laws of `√n·S(k)` and `S*(k)`.
///
/// `k_star` defaults to `T − 2`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_law_s(
    spec: &NullVarianceSpec,
    t: usize,
    k: usize,
    q_hat: &DMatrix<f64>,
    r: usize,
    seed: u64,
    k_star: Option<usize>,
    keep_spacings: bool,
) -> Result<SpacingLaws> {
    if t < 2 || k + 2 > t {
        return Err(Error::invalid(format!("need T - k >= 2, got T={t}, k={k}")));
    }
    if r == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    let m = t - k;
    let ratio_top = if m >= 3 {
        let ks = k_star.unwrap_or(t - 2);
        if ks < k + 1 || ks > t - 2 {
            return Err(Error::invalid(format!(
                "k* must satisfy k+1 <= k* <= T-2, got k*={ks}"
            )));
        }
        Some(ks - k)
    } else {
        None
    };
    let sampler = ProjectedSampler::new(spec, t, k, q_hat)?;
    let eigs = chunked_draws(r, CHUNK, seed, |rng, len| sampler.eigen_draws(rng, len));
    let s: Vec<f64> = eigs.iter().map(|e| e[0] - e[m - 1]).collect();
    let s_star = match ratio_top {
        Some(top) => Some(SimulatedLaw::from_draws(
            eigs.iter().map(|e| s_star_from_eigenvalues(e, 0, top)).collect(),
            seed,
        )?),
        None => None,
    };
    let spacings = keep_spacings.then(|| {
        eigs.iter()
            .map(|e| e.windows(2).map(|w| w[0] - w[1]).collect())
            .collect()
    });
    Ok(SpacingLaws {
        s: SimulatedLaw::from_draws(s, seed)?,
        s_star,
        spacings,
    })
}

/// Simulates the null law of `n·T(k)`, a weighted sum of independent `χ²` variables
/// divided by `T`.
pub fn simulate_law_t(
    spec: &NullVarianceSpec,
    t: usize,
    k: usize,
    kk: usize,
    r: usize,
    seed: u64,
) -> Result<SimulatedLaw> {
    if k >= t || k >= kk {
        return Err(Error::invalid(format!(
            "need k < T and k < K, got k={k}, T={t}, K={kk}"
        )));
    }
    let (weights, dof): (Vec<f64>, usize) = match spec {
        NullVarianceSpec::InstrHomo { weights, .. } => {
            let mut w = weights.clone();
            w.sort_by(|a, b| b.total_cmp(a));
            w.truncate(kk - k);
            (w, t - k)
        }
        NullVarianceSpec::InstrGeneral { lambda } => {
            let mut w: Vec<f64> = lambda.iter().map(|x| x.max(0.0)).collect();
            w.sort_by(|a, b| b.total_cmp(a));
            w.truncate((t - k) * (kk - k));
            (w, 1)
        }
        other => {
            return Err(Error::invalid(format!(
                "{} variance does not define the T(k) law",
                other.label()
            )))
        }
    };
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidParameter("weights must be non-negative".into()));
    }
    let inv_t = 1.0 / t as f64;
    let draws = chunked_draws(r, CHUNK, seed, |rng, len| {
        (0..len)
            .map(|_| {
                let mut acc = 0.0;
                for w in &weights {
                    let chi: f64 = (0..dof).map(|_| normal(rng).powi(2)).sum();
                    acc += w * chi;
                }
                acc * inv_t
            })
            .collect()
    });
    SimulatedLaw::from_draws(draws, seed)
}
