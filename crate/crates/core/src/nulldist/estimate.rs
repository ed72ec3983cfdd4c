use nalgebra::{DMatrix, DVector};

use super::{Estimated, NullVarianceSpec};
use crate::error::{Error, Result};
use crate::linalg::{kron, sym_eigenvalues, SymMatrix};
use crate::stats::{FactorFit, InstrumentFit, InstrumentPanel};

const CLIP_FLOOR: f64 = 1e-12;

/// `σ̂² = Σ_i Σ_t ε̂²_{i,t} / (n (T − k))`.
pub fn estimate_sigma2(fit: &FactorFit) -> f64 {
    let dof = (fit.n() * (fit.t() - fit.k)) as f64;
    fit.residuals.norm_squared() / dof
}

/// Coefficients of the two moment equations in `(η, q)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl MomentCoefficients {
    /// Built from the residual-maker `M` of a fit with `T − k = m`.
    pub fn from_projector(m_mat: &DMatrix<f64>, m: usize) -> Self {
        let t = m_mat.nrows();
        let a: f64 = (0..t).map(|i| m_mat[(i, i)].powi(2)).sum();
        let c: f64 = m_mat.iter().map(|x| x.powi(4)).sum();
        let m = m as f64;
        MomentCoefficients {
            a,
            b: 2.0 * (m - a) + m * m,
            c,
            d: 3.0 * a - 2.0 * c,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaQ {
    pub eta: f64,
    pub q: f64,
    pub coeffs: MomentCoefficients,
    pub m1: f64,
    pub m2: f64,
}

/// Method-of-moments `(η̂, q̂)` from the second and fourth residual moments.
pub fn estimate_eta_q(fit: &FactorFit) -> Result<Estimated<EtaQ>> {
    let m = fit.t() - fit.k;
    let coeffs = MomentCoefficients::from_projector(&fit.m_fhat, m);
    let det = coeffs.determinant();
    let scale = (coeffs.a * coeffs.d).abs().max((coeffs.b * coeffs.c).abs());
    if !(det.abs() > 1e-8 * scale) {
        return Err(Error::IdentificationFailure(format!(
            "moment system for (eta, q) is singular (det = {det:e})"
        )));
    }
    let n = fit.n() as f64;
    let (mut m1, mut m2) = (0.0, 0.0);
    for row in fit.residuals.row_iter() {
        let s2: f64 = row.iter().map(|e| e * e).sum();
        m1 += s2 * s2;
        m2 += row.iter().map(|e| e.powi(4)).sum::<f64>();
    }
    m1 /= n;
    m2 /= n;
    let MomentCoefficients { a, b, c, d } = coeffs;
    let mut eta = (d * m1 - b * m2) / det;
    let mut q = (a * m2 - c * m1) / det;
    let mut warnings = Vec::new();
    if !(eta > CLIP_FLOOR) {
        warnings.push(format!("eta estimate {eta:e} clipped to {CLIP_FLOOR:e}"));
        eta = CLIP_FLOOR;
    }
    if !(q > CLIP_FLOOR) {
        warnings.push(format!("q estimate {q:e} clipped to {CLIP_FLOOR:e}"));
        q = CLIP_FLOOR;
    }
    Ok(Estimated::new(
        EtaQ {
            eta,
            q,
            coeffs,
            m1,
            m2,
        },
        warnings,
    ))
}

type Triplets = Vec<(usize, usize, f64)>;

/// Basis matrices of `Ω(θ̃)` over `vec(Z)`, one per entry of
/// `θ̃ = (q, qψ(0), …, qψ(T−1))`.
fn arch_basis(t: usize) -> Vec<Triplets> {
    let idx = |i: usize, j: usize| i + j * t;
    let mut basis = vec![Vec::new(); t + 1];
    for a in 0..t {
        for b in 0..t {
            if a != b {
                basis[0].push((idx(a, b), idx(a, b), 1.0));
                basis[0].push((idx(a, b), idx(b, a), 1.0));
            }
        }
    }
    for a in 0..t {
        basis[1].push((idx(a, a), idx(a, a), 2.0));
    }
    for h in 1..t {
        let entry = &mut basis[h + 1];
        for a in 0..t - h {
            let b = a + h;
            entry.push((idx(a, a), idx(b, b), 2.0));
            entry.push((idx(b, b), idx(a, a), 2.0));
            for p in [idx(a, b), idx(b, a)] {
                for p2 in [idx(a, b), idx(b, a)] {
                    entry.push((p, p2, 2.0));
                }
            }
        }
    }
    basis
}

/// `Ω(θ̃)`, the `T² × T²` covariance of `vec(Z)` under the ARCH-type model.
pub fn build_omega_arch(theta: &[f64]) -> Result<DMatrix<f64>> {
    if theta.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "theta needs length T+1 >= 3, got {}",
            theta.len()
        )));
    }
    if theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("theta has non-finite entries".into()));
    }
    let t = theta.len() - 1;
    let q = theta[0];
    if !(2.0 * theta[1] > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "diagonal variance 2*theta[1] = {} is not positive",
            2.0 * theta[1]
        )));
    }
    for h in 1..t {
        let v = q + 2.0 * theta[h + 1];
        if !(v > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "off-diagonal variance at lag {h} is {v}, not positive"
            )));
        }
    }
    let mut omega = DMatrix::zeros(t * t, t * t);
    for (coef, trips) in theta.iter().zip(arch_basis(t)) {
        for (r, c, v) in trips {
            omega[(r, c)] += coef * v;
        }
    }
    Ok(omega)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThetaEstimate {
    /// `(q, qψ(0), …, qψ(T−1))`.
    pub theta: Vec<f64>,
    /// Rank of the normal-equation matrix.
    pub rank: usize,
}

impl ThetaEstimate {
    pub fn q(&self) -> f64 {
        self.theta[0]
    }

    /// `ψ̂(h) = θ̃_{h+2} / θ̃_1`.
    pub fn psi(&self) -> Vec<f64> {
        self.theta[1..].iter().map(|x| x / self.theta[0]).collect()
    }
}

/// Minimum-distance estimate of `θ̃` with identity weighting.
///
/// Whether the ARCH minimum-distance problem has at least as many distinct
/// moments as parameters at `(T, k)`.
pub fn arch_order_condition(t: usize, k: usize) -> bool {
    if k >= t {
        return false;
    }
    let half = (t - k) * (t - k + 1) / 2;
    2 * (t + 1) <= half * (half + 1)
}

/// The fourth-moment matrix depends on `θ̃` only through
/// `γ_h = q/2 + qψ(h)`, because `vec(I)vec(I)'` plus the `q` block equals half
/// the sum of the lag blocks. The criterion is therefore a linear
/// least-squares problem in `γ`, and `q` is pinned down by `ψ(T−1) = 0`.
/// The discarded direction only shifts `Z` by a multiple of the identity.
pub fn estimate_theta_md(fit: &FactorFit) -> Result<Estimated<ThetaEstimate>> {
    let t = fit.t();
    let m = t - fit.k;
    let p = t + 1;
    if !arch_order_condition(t, fit.k) {
        return Err(Error::IdentificationFailure(format!(
            "order condition fails: {p} parameters, T-k = {m}"
        )));
    }
    let lags = &arch_basis(t)[1..];
    let x = kron(&fit.q_hat, &fit.q_hat);

    let projected: Vec<DMatrix<f64>> = lags
        .iter()
        .map(|trips| {
            let mut y = DMatrix::<f64>::zeros(t * t, m * m);
            for &(r, c, v) in trips {
                for col in 0..m * m {
                    y[(r, col)] += v * x[(c, col)];
                }
            }
            x.tr_mul(&y)
        })
        .collect();
    let gram = DMatrix::from_fn(t, t, |a, b| projected[a].dot(&projected[b]));

    // b_h = (1/n) Σ_i w_i' B_h w_i with w_i = ẽ_i ⊗ ẽ_i, ẽ_i the projected residual.
    let proj = &fit.q_hat * fit.q_hat.transpose();
    let e = &fit.residuals * &proj;
    let mut rhs = DVector::<f64>::zeros(t);
    for row in e.row_iter() {
        let w = |q: usize| row[q % t] * row[q / t];
        for (h, trips) in lags.iter().enumerate() {
            rhs[h] += trips.iter().map(|&(r, c, v)| v * w(r) * w(c)).sum::<f64>();
        }
    }
    rhs /= fit.n() as f64;

    let svd = gram.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let rank = svd.rank(tol);
    let mut warnings = Vec::new();
    if rank < t {
        warnings.push(format!(
            "minimum-distance design has rank {rank} < {t}; using the minimum-norm solution"
        ));
    }
    let gamma = svd
        .solve(&rhs, tol)
        .map_err(|e| Error::IdentificationFailure(e.to_string()))?;

    let mut q = 2.0 * gamma[t - 1];
    if !(q > CLIP_FLOOR) {
        warnings.push(format!("q estimate {q:e} clipped to {CLIP_FLOOR:e}"));
        q = CLIP_FLOOR;
    }
    let mut theta = Vec::with_capacity(p);
    theta.push(q);
    theta.extend(gamma.iter().map(|g| g - 0.5 * q));
    theta[t] = 0.0;
    if !(theta[1] > CLIP_FLOOR) {
        warnings.push(format!("q*psi(0) estimate {:e} clipped", theta[1]));
        theta[1] = CLIP_FLOOR;
    }
    let floor = -0.5 * q + CLIP_FLOOR;
    for h in 1..t {
        if !(theta[h + 1] > floor) {
            warnings.push(format!("q*psi({h}) estimate {:e} clipped", theta[h + 1]));
            theta[h + 1] = floor;
        }
    }
    Ok(Estimated::new(ThetaEstimate { theta, rank }, warnings))
}

/// `Ω̄̂ = (1/n) Σ_i g_i g_i'` with `g_i = (Q̂'ε̂_i) ⊗ (Q̂'ε̂_i) − (ε̂_i'ε̂_i/(T−k)) vec(I)`.
pub fn estimate_omega_nonparam(fit: &FactorFit) -> Result<Estimated<DMatrix<f64>>> {
    let m = fit.t() - fit.k;
    let n = fit.n();
    let mut warnings = Vec::new();
    if n < m * m {
        warnings.push(format!(
            "n = {n} is below (T-k)^2 = {}; the covariance estimate may be singular",
            m * m
        ));
    }
    let u = &fit.residuals * &fit.q_hat;
    let mut g = DMatrix::<f64>::zeros(n, m * m);
    for i in 0..n {
        let ui = u.row(i);
        let ss: f64 = fit.residuals.row(i).iter().map(|v| v * v).sum();
        let tr = ss / m as f64;
        for b in 0..m {
            for a in 0..m {
                let mut v = ui[a] * ui[b];
                if a == b {
                    v -= tr;
                }
                g[(i, a + b * m)] = v;
            }
        }
    }
    let omega = g.tr_mul(&g) / n as f64;
    Ok(Estimated::new(SymMatrix::symmetrized(omega).into_inner(), warnings))
}

fn check_rows(iv: &InstrumentFit, instruments: &InstrumentPanel) -> Result<()> {
    if iv.factor_fit.n() != instruments.n() {
        return Err(Error::invalid(format!(
            "fit has {} assets, instruments have {}",
            iv.factor_fit.n(),
            instruments.n()
        )));
    }
    if instruments.n() < 2 {
        return Err(Error::invalid("need at least two assets"));
    }
    Ok(())
}

/// Eigenvalues of `Λ̂ = (M_F̂ ⊗ M_Γ̂) Σ̂_U (M_F̂ ⊗ M_Γ̂)`, top `(T−k)(K−k)` kept.
pub fn estimate_lambda_hat(
    iv: &InstrumentFit,
    instruments: &InstrumentPanel,
) -> Result<Estimated<NullVarianceSpec>> {
    check_rows(iv, instruments)?;
    let fit = &iv.factor_fit;
    let (t, kk, k) = (fit.t(), instruments.k(), iv.k);
    let m_gamma = &iv.pi_hat * iv.pi_hat.transpose();
    let mz = instruments.z() * &m_gamma;
    let e = &fit.residuals * &fit.m_fhat;
    let n = fit.n();
    let mut v = DMatrix::<f64>::zeros(n, t * kk);
    for i in 0..n {
        for a in 0..t {
            for b in 0..kk {
                v[(i, a * kk + b)] = e[(i, a)] * mz[(i, b)];
            }
        }
    }
    let lambda_full = sym_eigenvalues(&(v.tr_mul(&v) / n as f64));
    let keep = (t - k) * (kk - k);
    let mut warnings = Vec::new();
    let top = lambda_full.first().copied().unwrap_or(0.0).max(0.0);
    let min_kept = lambda_full[keep - 1];
    if min_kept < -1e-8 * top {
        warnings.push(format!("negative eigenvalue {min_kept:e} of Lambda clipped to 0"));
    }
    let lambda = lambda_full[..keep].iter().map(|x| x.max(0.0)).collect();
    Ok(Estimated::new(NullVarianceSpec::InstrGeneral { lambda }, warnings))
}

/// `σ̂²` and the eigenvalues of `σ̂² Π̂'Q̂_zz Π̂`.
pub fn estimate_instr_homo(
    iv: &InstrumentFit,
    instruments: &InstrumentPanel,
) -> Result<Estimated<NullVarianceSpec>> {
    check_rows(iv, instruments)?;
    let sigma2 = estimate_sigma2(&iv.factor_fit);
    let z = instruments.z();
    let qzz = z.tr_mul(z) / instruments.n() as f64;
    let inner = iv.pi_hat.tr_mul(&qzz) * &iv.pi_hat * sigma2;
    let weights = sym_eigenvalues(&SymMatrix::symmetrized(inner).into_inner())
        .into_iter()
        .map(|w| w.max(0.0))
        .collect();
    Ok(Estimated::new(NullVarianceSpec::InstrHomo { sigma2, weights }, Vec::new()))
}
