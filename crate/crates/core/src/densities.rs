//! Closed-form spacing laws of small Gaussian orthogonal ensembles and
//! local power curves of the spacing tests.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;
use crate::quad::adaptive_simpson_panels;
use crate::rng::{chunked_draws, SimRng};
use crate::stats::s_star_from_eigenvalues;

const QUAD_TOL: f64 = 1e-10;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `f₂(s) = (s/4) e^{−s²/8}`, the spacing density of GOE(2).
pub fn wigner_surmise_pdf(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    0.25 * s * (-s * s / 8.0).exp()
}

pub fn wigner_surmise_cdf(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    -(-s * s / 8.0).exp_m1()
}

/// Joint density of the two consecutive spacings of GOE(3).
pub fn goe3_joint_spacing_pdf(s1: f64, s2: f64) -> f64 {
    if s1 <= 0.0 || s2 <= 0.0 {
        return 0.0;
    }
    let c = 1.0 / (4.0 * (6.0 * std::f64::consts::PI).sqrt());
    c * (-(s1 * s1 + s2 * s2 + s1 * s2) / 6.0).exp() * s1 * s2 * (s1 + s2)
}

/// Density of `δ₁ − δ₃` for GOE(3).
pub fn goe3_total_spacing_pdf(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let pi = std::f64::consts::PI;
    let phi = 2.0 * normal_cdf(s / (2.0 * 3f64.sqrt())) - 1.0;
    let bracket = phi * (s * s / 4.0 - 3.0) + 3.0 * s / (6.0 * pi).sqrt() * (-s * s / 24.0).exp();
    0.25 * s * (-s * s / 8.0).exp() * bracket
}

pub fn goe3_total_spacing_cdf(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 40.0 {
        return 1.0;
    }
    let pieces = (s.ceil() as usize).max(1);
    adaptive_simpson_panels(goe3_total_spacing_pdf, 0.0, s, QUAD_TOL, pieces).min(1.0)
}

/// `g₃(r) = (27/8)(r + r²)/(1 + r + r²)^{5/2}`, density of the GOE(3) spacing ratio.
pub fn goe3_spacing_ratio_pdf(r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let d = 1.0 + r + r * r;
    27.0 / 8.0 * (r + r * r) / (d * d * d.sqrt())
}

pub fn goe3_spacing_ratio_cdf(r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if r.is_infinite() {
        return 1.0;
    }
    let d = 1.0 + r + r * r;
    0.5 + (-0.5 - 0.75 * r + 0.75 * r * r + 0.5 * r * r * r) / (d * d.sqrt())
}

/// Which spacing statistic a power curve refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingStatistic {
    S,
    /// Ratio statistic over the first `k* − k` spacing ratios.
    SStar { k_star_minus_k: usize },
}

/// Asymptotic local power as a function of `a = T c_{k+1}/√q`.
#[derive(Clone, Debug, Serialize)]
pub struct PowerCurve {
    pub grid: Vec<f64>,
    pub power: Vec<f64>,
    pub t_minus_k: usize,
    pub alpha: f64,
    pub r: usize,
    /// Null `(1 − α)` quantile the curve is computed against.
    pub critical_value: f64,
}

const POWER_CHUNK: usize = 512;

fn check_power_args(alpha: f64, a_grid: &[f64], r: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if r == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    if a_grid.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("a grid has non-finite values"));
    }
    Ok(())
}

/// `draws[i] = (null statistic, statistic at each grid point)`; power is the
/// share of draws above the null `(1 − α)` order statistic.
fn curve_from_draws(
    draws: Vec<(f64, Vec<f64>)>,
    a_grid: &[f64],
    t_minus_k: usize,
    alpha: f64,
) -> PowerCurve {
    let r = draws.len();
    let mut null: Vec<f64> = draws.iter().map(|d| d.0).collect();
    null.sort_by(f64::total_cmp);
    let idx = (((1.0 - alpha) * r as f64).ceil() as usize).clamp(1, r);
    let tau = null[idx - 1];
    let power = (0..a_grid.len())
        .map(|g| draws.iter().filter(|d| d.1[g] > tau).count() as f64 / r as f64)
        .collect();
    PowerCurve {
        grid: a_grid.to_vec(),
        power,
        t_minus_k,
        alpha,
        r,
        critical_value: tau,
    }
}

fn spacing_stat(eig: &[f64], statistic: SpacingStatistic) -> f64 {
    match statistic {
        SpacingStatistic::S => eig[0] - eig[eig.len() - 1],
        SpacingStatistic::SStar { k_star_minus_k } => s_star_from_eigenvalues(eig, 0, k_star_minus_k),
    }
}

/// Local power in the Gaussian case: the statistic of `a·e₁e₁' + Z` with
/// `Z ~ GOE(T − k)`, common random numbers across the grid.
pub fn local_power_gaussian(
    t_minus_k: usize,
    alpha: f64,
    a_grid: &[f64],
    r: usize,
    seed: u64,
    statistic: SpacingStatistic,
) -> Result<PowerCurve> {
    check_power_args(alpha, a_grid, r)?;
    let m = t_minus_k;
    if m < 2 {
        return Err(Error::invalid(format!("need T - k >= 2, got {m}")));
    }
    if let SpacingStatistic::SStar { k_star_minus_k } = statistic {
        if k_star_minus_k < 1 || k_star_minus_k + 2 > m {
            return Err(Error::invalid(format!(
                "ratio statistic needs 1 <= k*-k <= T-k-2, got k*-k = {k_star_minus_k}, T-k = {m}"
            )));
        }
    }
    let draws = chunked_draws(r, POWER_CHUNK, seed, |rng: &mut SimRng, len| {
        let mut z = DMatrix::<f64>::zeros(m, m);
        (0..len)
            .map(|_| {
                for j in 0..m {
                    z[(j, j)] = std::f64::consts::SQRT_2 * rng.sample::<f64, _>(StandardNormal);
                    for i in 0..j {
                        let v: f64 = rng.sample(StandardNormal);
                        z[(i, j)] = v;
                        z[(j, i)] = v;
                    }
                }
                let null = spacing_stat(&sym_eigenvalues(&z), statistic);
                let z00 = z[(0, 0)];
                let stats = a_grid
                    .iter()
                    .map(|&a| {
                        z[(0, 0)] = z00 + a;
                        spacing_stat(&sym_eigenvalues(&z), statistic)
                    })
                    .collect();
                z[(0, 0)] = z00;
                (null, stats)
            })
            .collect()
    });
    Ok(curve_from_draws(draws, a_grid, m, alpha))
}

/// Local power for `T − k = 2` with non-Gaussian errors, from the weighted sum
/// `d₁ χ²(1, μ₁) + d₂ χ²(1, μ₂)` with `d = (η*/2, 1)`,
/// `μ₁ = a²(1 − 2φ)²/(2η*)` and `μ₂ = a² φ(1 − φ)`.
pub fn local_power_nongaussian_t2(
    eta_star: f64,
    phi: f64,
    alpha: f64,
    a_grid: &[f64],
    r: usize,
    seed: u64,
) -> Result<PowerCurve> {
    if !(eta_star > 0.0) {
        return Err(Error::InvalidParameter(format!("eta* must be positive, got {eta_star}")));
    }
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidParameter(format!("phi must lie in [0,1], got {phi}")));
    }
    let d = [eta_star / 2.0, 1.0];
    let share = [(1.0 - 2.0 * phi).powi(2), 4.0 * phi * (1.0 - phi)];
    local_power_weighted_t2(d, share, alpha, a_grid, r, seed)
}

/// Power of `Σ_j d_j χ²(1, a² s_j/(4 d_j))` against its `a = 0` quantile.
pub fn local_power_weighted_t2(
    d: [f64; 2],
    share: [f64; 2],
    alpha: f64,
    a_grid: &[f64],
    r: usize,
    seed: u64,
) -> Result<PowerCurve> {
    check_power_args(alpha, a_grid, r)?;
    if d.iter().any(|x| !(*x > 0.0)) || share.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::InvalidParameter("weights must be positive".into()));
    }
    // shift of the j-th normal per unit of a
    let unit = [
        (share[0] / (4.0 * d[0])).sqrt(),
        (share[1] / (4.0 * d[1])).sqrt(),
    ];
    let draws = chunked_draws(r, POWER_CHUNK, seed, |rng: &mut SimRng, len| {
        (0..len)
            .map(|_| {
                let n1: f64 = rng.sample(StandardNormal);
                let n2: f64 = rng.sample(StandardNormal);
                let stat = |a: f64| {
                    d[0] * (n1 + a * unit[0]).powi(2) + d[1] * (n2 + a * unit[1]).powi(2)
                };
                (stat(0.0), a_grid.iter().map(|&a| stat(a)).collect())
            })
            .collect()
    });
    Ok(curve_from_draws(draws, a_grid, 2, alpha))
}

/// Weights of the `T − k = 2` local-alternative law for a given factor path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct T2Weights {
    pub sigma11: f64,
    pub sigma22: f64,
    pub sigma12: f64,
    pub lambda: [f64; 2],
    pub d: [f64; 2],
    pub mu: [f64; 2],
}

impl T2Weights {
    /// Share of `a²/4` carried by each component before division by `d_j`.
    pub fn shares(&self, a: f64) -> [f64; 2] {
        if a == 0.0 {
            return [1.0, 0.0];
        }
        let s = 4.0 / (a * a);
        [self.mu[0] * self.d[0] * s, self.mu[1] * self.d[1] * s]
    }
}

/// `d_j = 1 + (η* − 2) λ_j` and `μ_j` from the eigenstructure of the
/// covariance of `((Q_{t1}² − Q_{t2}²)/2, Q_{t1} Q_{t2})`.
pub fn general_t2_weights(q: &DMatrix<f64>, eta_star: f64, a: f64) -> Result<T2Weights> {
    if q.ncols() != 2 {
        return Err(Error::invalid(format!("Q must have two columns, got {}", q.ncols())));
    }
    let gram = q.tr_mul(q);
    if (gram - DMatrix::<f64>::identity(2, 2)).norm() > 1e-8 {
        return Err(Error::invalid("Q must have orthonormal columns"));
    }
    let (mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0);
    for row in q.row_iter() {
        let (x, y) = (row[0], row[1]);
        let diff = x * x - y * y;
        s11 += 0.25 * diff * diff;
        s22 += x * x * y * y;
        s12 += 0.5 * diff * x * y;
    }
    let rad = ((s11 - s22).powi(2) + 4.0 * s12 * s12).sqrt();
    let l1 = 0.5 * (s11 + s22 + rad);
    let l2 = l1 - rad;
    let denom = s12 * s12 + (l1 - s11).powi(2);
    let first = if denom > 1e-300 {
        s12 * s12 / denom
    } else if s11 >= s22 {
        1.0
    } else {
        0.0
    };
    let d = [1.0 + (eta_star - 2.0) * l1, 1.0 + (eta_star - 2.0) * l2];
    let a2 = a * a / 4.0;
    Ok(T2Weights {
        sigma11: s11,
        sigma22: s22,
        sigma12: s12,
        lambda: [l1, l2],
        d,
        mu: [a2 / d[0] * first, a2 / d[1] * (1.0 - first)],
    })
}
