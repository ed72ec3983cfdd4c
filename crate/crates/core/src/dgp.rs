//! Simulation designs for size and power experiments.
//!
//! All designs share `y_i = F β_i + ε_i` with `σ_i² ~ U[low, high]`. A
//! [`Design`] holds everything that stays fixed across repetitions (factor
//! path, loadings, error scales, ARCH parameters, instruments); each call to
//! [`Design::replicate`] draws fresh errors.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{orthonormalize_columns, sym_eig, SymMatrix};
use crate::quad::adaptive_simpson;
use crate::rng::SimRng;
use crate::stats::{InstrumentPanel, PanelData};

/// Design-specific parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpKind {
    /// Gaussian loadings and factors, `k` factors.
    Dgp1 {
        #[serde(default = "default_k")]
        k: usize,
    },
    /// Three factors, the third with loading variance `c n^{−κ}`; factor path normalised.
    Dgp2 { kappa: f64, c: f64 },
    /// As `Dgp2` with ARCH(1) errors, `α_i ~ U[arch_l, arch_u]`.
    Dgp3 {
        kappa: f64,
        c: f64,
        #[serde(default = "default_arch_l")]
        arch_l: f64,
        #[serde(default = "default_arch_u")]
        arch_u: f64,
        #[serde(default = "default_burn_in")]
        burn_in: usize,
    },
    /// Loadings `β_i = Γ'z_i + u_i` driven by `K` instruments.
    Dgp4 {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_instruments")]
        instruments: usize,
    },
}

fn default_k() -> usize {
    3
}
fn default_arch_l() -> f64 {
    0.1
}
fn default_arch_u() -> f64 {
    0.4
}
fn default_burn_in() -> usize {
    50
}
fn default_instruments() -> usize {
    10
}
fn default_sigma2_low() -> f64 {
    1.0
}
fn default_sigma2_high() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub t: usize,
    #[serde(flatten)]
    pub kind: DgpKind,
    #[serde(default = "default_sigma2_low")]
    pub sigma2_low: f64,
    #[serde(default = "default_sigma2_high")]
    pub sigma2_high: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DgpConfig {
    pub fn new(n: usize, t: usize, kind: DgpKind) -> Self {
        DgpConfig {
            n,
            t,
            kind,
            sigma2_low: 1.0,
            sigma2_high: 4.0,
            seed: 0,
        }
    }

    /// Number of factors in the design.
    pub fn factors(&self) -> usize {
        match self.kind {
            DgpKind::Dgp1 { k } | DgpKind::Dgp4 { k, .. } => k,
            DgpKind::Dgp2 { .. } | DgpKind::Dgp3 { .. } => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.t < 2 {
            return Err(Error::invalid(format!(
                "need n >= 2 and T >= 2, got n={}, T={}",
                self.n, self.t
            )));
        }
        if !(self.sigma2_low > 0.0 && self.sigma2_high >= self.sigma2_low) {
            return Err(Error::invalid("error variance bounds must satisfy 0 < low <= high"));
        }
        if self.factors() > self.t {
            return Err(Error::invalid(format!(
                "{} factors do not fit in T={}",
                self.factors(),
                self.t
            )));
        }
        match self.kind {
            DgpKind::Dgp2 { kappa, c } => check_strength(kappa, c),
            DgpKind::Dgp3 {
                kappa,
                c,
                arch_l,
                arch_u,
                ..
            } => {
                check_strength(kappa, c)?;
                check_arch_bounds(arch_l, arch_u).map_err(|e| Error::invalid(e.to_string()))
            }
            DgpKind::Dgp4 { k, instruments } if k > instruments => Err(Error::invalid(format!(
                "DGP4 needs k <= K, got k={k}, K={instruments}"
            ))),
            _ => Ok(()),
        }
    }

    fn normalises_path(&self) -> bool {
        matches!(self.kind, DgpKind::Dgp2 { .. } | DgpKind::Dgp3 { .. })
    }
}

fn check_strength(kappa: f64, c: f64) -> Result<()> {
    if !(kappa >= 0.0 && c > 0.0) {
        return Err(Error::invalid(format!(
            "need kappa >= 0 and c > 0, got kappa={kappa}, c={c}"
        )));
    }
    Ok(())
}

fn check_arch_bounds(l: f64, u: f64) -> Result<()> {
    if !(0.0 <= l && l < u) || u * u >= 1.0 / 3.0 {
        return Err(Error::InvalidParameter(format!(
            "ARCH bounds need 0 <= l < u and u^2 < 1/3, got l={l}, u={u}"
        )));
    }
    Ok(())
}

fn normal(rng: &mut SimRng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian(r: usize, c: usize, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// `T × k` factor path; normalised to `F'F/T = I_k` for designs 2 and 3.
pub fn draw_factor_path(config: &DgpConfig, rng: &mut SimRng) -> Result<DMatrix<f64>> {
    let (t, k) = (config.t, config.factors());
    if t < k {
        return Err(Error::invalid(format!("T={t} is smaller than k={k}")));
    }
    let f = gaussian(t, k, rng);
    if config.normalises_path() {
        Ok(orthonormalize_columns(&f)? * (t as f64).sqrt())
    } else {
        Ok(f)
    }
}

fn draw_loading_map(instruments: usize, k: usize, rng: &mut SimRng) -> Result<DMatrix<f64>> {
    let g = gaussian(instruments, k, rng);
    Ok(sym_eig(&SymMatrix::new(&g * g.transpose())?)?.leading_vectors(k))
}

/// What a Monte Carlo cell holds fixed across repetitions.
#[derive(Clone, Debug)]
pub struct FactorPath {
    pub f: DMatrix<f64>,
    /// `K × k` instrument loading map, design 4 only.
    pub gamma: Option<DMatrix<f64>>,
}

impl FactorPath {
    pub fn draw(config: &DgpConfig, rng: &mut SimRng) -> Result<Self> {
        config.validate()?;
        let f = draw_factor_path(config, rng)?;
        let gamma = match config.kind {
            DgpKind::Dgp4 { k, instruments } => Some(draw_loading_map(instruments, k, rng)?),
            _ => None,
        };
        Ok(FactorPath { f, gamma })
    }
}

/// One simulated panel.
#[derive(Clone, Debug)]
pub struct DgpDraw {
    pub panel: PanelData,
    pub instruments: Option<InstrumentPanel>,
    pub f_true: DMatrix<f64>,
    pub beta_true: DMatrix<f64>,
    pub sigma2_true: Vec<f64>,
}

/// The parts of a design that stay fixed across repetitions.
#[derive(Clone, Debug)]
pub struct Design {
    pub config: DgpConfig,
    pub f: DMatrix<f64>,
    /// `n × k`.
    pub beta: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    /// ARCH coefficients, design 3 only.
    pub alpha: Option<Vec<f64>>,
    /// Instruments and the `K × k` loading map, design 4 only.
    pub z: Option<DMatrix<f64>>,
    pub gamma: Option<DMatrix<f64>>,
    /// `F β'`, the `T × n` systematic part.
    signal: DMatrix<f64>,
}

impl Design {
    /// Draws loadings, error scales and (if not given) the factor path.
    pub fn draw(config: &DgpConfig, f_fixed: Option<&DMatrix<f64>>, rng: &mut SimRng) -> Result<Self> {
        Self::draw_inner(config, f_fixed, None, rng)
    }

    /// Draws loadings and error scales around a fixed factor path (and, for
    /// design 4, a fixed instrument loading map).
    pub fn draw_on_path(config: &DgpConfig, path: &FactorPath, rng: &mut SimRng) -> Result<Self> {
        Self::draw_inner(config, Some(&path.f), path.gamma.as_ref(), rng)
    }

    fn draw_inner(
        config: &DgpConfig,
        f_fixed: Option<&DMatrix<f64>>,
        gamma_fixed: Option<&DMatrix<f64>>,
        rng: &mut SimRng,
    ) -> Result<Self> {
        config.validate()?;
        let (n, t, k) = (config.n, config.t, config.factors());
        let f = match f_fixed {
            Some(f) => {
                if f.shape() != (t, k) {
                    return Err(Error::invalid(format!(
                        "fixed factor path is {}x{}, expected {t}x{k}",
                        f.nrows(),
                        f.ncols()
                    )));
                }
                f.clone()
            }
            None => draw_factor_path(config, rng)?,
        };
        let (mut z, mut gamma, mut alpha) = (None, None, None);
        let beta = match config.kind {
            DgpKind::Dgp1 { .. } => gaussian(n, k, rng),
            DgpKind::Dgp2 { kappa, c } | DgpKind::Dgp3 { kappa, c, .. } => {
                let mut b = gaussian(n, 3, rng);
                let sd3 = (c * (n as f64).powf(-kappa)).sqrt();
                b.column_mut(2).scale_mut(sd3);
                b
            }
            DgpKind::Dgp4 { instruments, .. } => {
                let gm = match gamma_fixed {
                    Some(g) if g.shape() == (instruments, k) => g.clone(),
                    Some(g) => {
                        return Err(Error::invalid(format!(
                            "fixed loading map is {}x{}, expected {instruments}x{k}",
                            g.nrows(),
                            g.ncols()
                        )))
                    }
                    None => draw_loading_map(instruments, k, rng)?,
                };
                let zi = gaussian(n, instruments, rng);
                let b = &zi * &gm + gaussian(n, k, rng);
                z = Some(zi);
                gamma = Some(gm);
                b
            }
        };
        let s2 = Uniform::new_inclusive(config.sigma2_low, config.sigma2_high)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let sigma2: Vec<f64> = (0..n).map(|_| rng.sample(s2)).collect();
        if let DgpKind::Dgp3 { arch_l, arch_u, .. } = config.kind {
            let a = Uniform::new(arch_l, arch_u).map_err(|e| Error::invalid(e.to_string()))?;
            alpha = Some((0..n).map(|_| rng.sample(a)).collect());
        }
        let signal = &f * beta.transpose();
        Ok(Design {
            config: config.clone(),
            f,
            beta,
            sigma2,
            alpha,
            z,
            gamma,
            signal,
        })
    }

    /// `n × T` errors for one repetition.
    pub fn draw_errors(&self, rng: &mut SimRng) -> DMatrix<f64> {
        let (n, t) = (self.config.n, self.config.t);
        let mut e = DMatrix::zeros(n, t);
        match (&self.config.kind, &self.alpha) {
            (DgpKind::Dgp3 { burn_in, .. }, Some(alpha)) => {
                for i in 0..n {
                    let (s2, a) = (self.sigma2[i], alpha[i]);
                    let c = s2 * (1.0 - a);
                    let mut prev = s2 * normal(rng).powi(2);
                    for step in 0..burn_in + t {
                        let eps = (c + a * prev).sqrt() * normal(rng);
                        prev = eps * eps;
                        if step >= *burn_in {
                            e[(i, step - burn_in)] = eps;
                        }
                    }
                }
            }
            _ => {
                for i in 0..n {
                    let sd = self.sigma2[i].sqrt();
                    for s in 0..t {
                        e[(i, s)] = sd * normal(rng);
                    }
                }
            }
        }
        e
    }

    /// A fresh panel with new errors and the fixed systematic part.
    pub fn replicate(&self, rng: &mut SimRng) -> Result<DgpDraw> {
        let y = self.draw_errors(rng) + self.signal.transpose();
        Ok(DgpDraw {
            panel: PanelData::new(y)?,
            instruments: self.z.clone().map(InstrumentPanel::new).transpose()?,
            f_true: self.f.clone(),
            beta_true: self.beta.clone(),
            sigma2_true: self.sigma2.clone(),
        })
    }
}

/// Draws a design (reusing `f_fixed` when given) and one panel from it.
pub fn generate(config: &DgpConfig, f_fixed: Option<&DMatrix<f64>>, rng: &mut SimRng) -> Result<DgpDraw> {
    Design::draw(config, f_fixed, rng)?.replicate(rng)
}

/// `ψ(h) = E[α^h/(1 − 3α²)]` for `α ~ U[l, u]`.
pub fn psi_moment(h: u32, l: f64, u: f64) -> Result<f64> {
    check_arch_bounds(l, u)?;
    let f = |a: f64| a.powi(h as i32) / (1.0 - 3.0 * a * a);
    Ok(adaptive_simpson(f, l, u, 1e-10 * (u - l)) / (u - l))
}

/// `E[σ⁴]` for `σ² ~ U[a, b]`.
pub fn uniform_fourth_moment(a: f64, b: f64) -> f64 {
    (a * a + a * b + b * b) / 3.0
}

/// True `θ̃ = (q, qψ(0), …, qψ(T−1))` of design 3.
pub fn arch_theta(config: &DgpConfig) -> Result<Vec<f64>> {
    let DgpKind::Dgp3 { arch_l, arch_u, .. } = config.kind else {
        return Err(Error::invalid("ARCH parameters exist only for design 3"));
    };
    let q = uniform_fourth_moment(config.sigma2_low, config.sigma2_high);
    let mut theta = vec![q];
    for h in 0..config.t {
        theta.push(q * psi_moment(h as u32, arch_l, arch_u)?);
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn dgp3(n: usize, t: usize) -> DgpConfig {
        DgpConfig::new(
            n,
            t,
            DgpKind::Dgp3 {
                kappa: 1.0,
                c: 1.0,
                arch_l: 0.1,
                arch_u: 0.4,
                burn_in: 50,
            },
        )
    }

    #[test]
    fn factor_path_normalisation() {
        let cfg = DgpConfig::new(10, 6, DgpKind::Dgp2 { kappa: 0.5, c: 1.0 });
        let mut g = rng::from_seed(1);
        let f = draw_factor_path(&cfg, &mut g).unwrap();
        let gram = f.tr_mul(&f) / 6.0;
        assert!((gram - DMatrix::<f64>::identity(3, 3)).norm() < 1e-10);
        let again = draw_factor_path(&cfg, &mut rng::from_seed(1)).unwrap();
        assert_eq!(f, again);

        let bad = DgpConfig::new(10, 2, DgpKind::Dgp1 { k: 3 });
        assert!(draw_factor_path(&bad, &mut g).is_err());
    }

    #[test]
    fn two_period_single_factor_has_norm_root_two() {
        let f = DMatrix::from_column_slice(2, 1, &[0.3, -1.2]);
        let norm = orthonormalize_columns(&f).unwrap() * 2f64.sqrt();
        assert!((norm.column(0).norm() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn arch_errors_are_stationary() {
        let cfg = dgp3(2, 3);
        let mut g = rng::from_seed(2);
        let mut design = Design::draw(&cfg, None, &mut g).unwrap();
        design.sigma2 = vec![2.0, 3.0];
        design.alpha = Some(vec![0.35, 0.1]);
        let reps = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..reps {
            let e = design.draw_errors(&mut g);
            for i in 0..2 {
                acc[i] += e[(i, 2)].powi(2);
            }
        }
        assert!((acc[0] / reps as f64 / 2.0 - 1.0).abs() < 0.03);
        assert!((acc[1] / reps as f64 / 3.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn arch_levels_uncorrelated_squares_correlated() {
        let cfg = dgp3(20_000, 6);
        let mut g = rng::from_seed(3);
        let design = Design::draw(&cfg, None, &mut g).unwrap();
        let e = design.draw_errors(&mut g);
        let n = 20_000.0;
        let lvl: f64 = e.row_iter().map(|r| r[2] * r[3]).sum::<f64>() / n;
        let m2: f64 = e.row_iter().map(|r| r[2] * r[2]).sum::<f64>() / n;
        let sq: f64 = e.row_iter().map(|r| r[2] * r[2] * r[3] * r[3]).sum::<f64>() / n;
        assert!(lvl.abs() < 0.1);
        // E[ε_t² ε_{t+1}²] exceeds the product of variances under ARCH
        assert!(sq > 1.1 * m2 * m2);
    }

    #[test]
    fn dgp2_strong_case_matches_dgp1_loadings() {
        let cfg2 = DgpConfig::new(30_000, 6, DgpKind::Dgp2 { kappa: 0.0, c: 1.0 });
        let mut g = rng::from_seed(4);
        let d = Design::draw(&cfg2, None, &mut g).unwrap();
        let cov = d.beta.tr_mul(&d.beta) / 30_000.0;
        assert!((cov - DMatrix::<f64>::identity(3, 3)).norm() < 0.05);
        let weak = DgpConfig::new(10_000, 6, DgpKind::Dgp2 { kappa: 0.5, c: 1.0 });
        let d = Design::draw(&weak, None, &mut g).unwrap();
        let v3 = d.beta.column(2).norm_squared() / 10_000.0;
        assert!((v3 * 100.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn dgp4_gamma_orthonormal() {
        let cfg = DgpConfig::new(200, 6, DgpKind::Dgp4 { k: 3, instruments: 10 });
        let mut g = rng::from_seed(5);
        let draw = Design::draw(&cfg, None, &mut g).unwrap();
        let gm = draw.gamma.as_ref().unwrap();
        assert!((gm.tr_mul(gm) - DMatrix::<f64>::identity(3, 3)).norm() < 1e-10);
        let rep = draw.replicate(&mut g).unwrap();
        assert_eq!(rep.instruments.unwrap().k(), 10);
    }

    #[test]
    fn population_noise_eigenvalues_dgp1() {
        let cfg = DgpConfig::new(100_000, 6, DgpKind::Dgp1 { k: 3 });
        let mut g = rng::from_seed(6);
        let d = generate(&cfg, None, &mut g).unwrap();
        let eig = d.panel.second_moment().eigenvalues();
        for v in &eig[3..] {
            assert!((v / 2.5 - 1.0).abs() < 0.02, "{v}");
        }
    }

    #[test]
    fn fixed_path_reuse_and_reproducibility() {
        let cfg = DgpConfig::new(50, 6, DgpKind::Dgp1 { k: 2 });
        let f = DMatrix::from_element(6, 2, 1.0);
        let a = generate(&cfg, Some(&f), &mut rng::from_seed(7)).unwrap();
        let b = generate(&cfg, Some(&f), &mut rng::from_seed(7)).unwrap();
        assert_eq!(a.panel, b.panel);
        assert_eq!(a.f_true, f);
        let wrong = DMatrix::from_element(5, 2, 1.0);
        assert!(generate(&cfg, Some(&wrong), &mut rng::from_seed(7)).is_err());
    }

    #[test]
    fn psi_examples() {
        let u = 0.4;
        let lim = psi_moment(0, u - 1e-6, u).unwrap();
        assert!((lim - 1.0 / (1.0 - 3.0 * u * u)).abs() < 1e-5);
        let vals: Vec<f64> = (0..8).map(|h| psi_moment(h, 0.1, 0.4).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        let anti = |a: f64| -(1.0 - 3.0 * a * a).ln() / 6.0;
        let exact = (anti(0.4) - anti(0.1)) / 0.3;
        assert!((vals[1] - exact).abs() < 1e-10);
        assert!(psi_moment(0, 0.1, 0.6).is_err());
        assert_eq!(uniform_fourth_moment(1.0, 4.0), 7.0);
    }

    #[test]
    fn config_round_trip() {
        let cfg = dgp3(500, 12);
        let text = toml::to_string(&cfg).unwrap();
        let back: DgpConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let parsed: DgpConfig = toml::from_str("n = 100\nt = 6\nkind = \"dgp2\"\nkappa = 0\nc = 1\n").unwrap();
        assert_eq!(parsed.kind, DgpKind::Dgp2 { kappa: 0.0, c: 1.0 });
        assert_eq!(parsed.sigma2_high, 4.0);
    }
}
