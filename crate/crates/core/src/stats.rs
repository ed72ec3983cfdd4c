//! Panel containers, factor fits and the eigenvalue test statistics.
//!
//! Everything is built on second moments (no time demeaning): `V̂_y =
//! (1/n) Σ_i y_i y_i'` for the return route, and `V̂_ξ = (1/T) Σ_t ξ̂_t ξ̂_t'`
//! with `ξ̂_t = (1/n) Σ_i z_i y_{i,t}` for the instrument route.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{complement_basis, orthonormalize_columns, sym_eig, SymMatrix};

/// Denominators below this make `S*` return `+∞`.
pub const RATIO_DENOMINATOR_FLOOR: f64 = 1e-14;

/// `n × T` panel, rows are assets and columns are periods.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelData {
    y: DMatrix<f64>,
}

impl PanelData {
    pub fn new(y: DMatrix<f64>) -> Result<Self> {
        let (n, t) = y.shape();
        if n < 2 || t < 2 {
            return Err(Error::invalid(format!("panel must be at least 2x2, got {n}x{t}")));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "panel has a non-finite entry at row {}, column {}",
                pos % n,
                pos / n
            )));
        }
        Ok(PanelData { y })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn t(&self) -> usize {
        self.y.ncols()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// `V̂_y = (1/n) Σ_i y_i y_i'`, a `T × T` matrix.
    pub fn second_moment(&self) -> SymMatrix {
        SymMatrix::symmetrized(self.y.tr_mul(&self.y) / self.n() as f64)
    }

    /// The sub-panel made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.iter().any(|&r| r >= self.n()) {
            return Err(Error::invalid("row index out of range"));
        }
        PanelData::new(self.y.select_rows(rows))
    }
}

/// `n × K` instruments aligned with the rows of a [`PanelData`].
#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentPanel {
    z: DMatrix<f64>,
}

impl InstrumentPanel {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.ncols() == 0 || z.nrows() == 0 {
            return Err(Error::invalid("instrument panel needs at least one row and column"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("instrument panel has non-finite entries"));
        }
        Ok(InstrumentPanel { z })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        InstrumentPanel::new(self.z.select_rows(rows))
    }
}

/// Estimated factor space for a tested number of factors `k`.
#[derive(Clone, Debug)]
pub struct FactorFit {
    pub k: usize,
    /// `T × k`, scaled so that `F̂'F̂/T = I_k`.
    pub f_hat: DMatrix<f64>,
    /// `M_F̂ = I − F̂F̂'/T`.
    pub m_fhat: DMatrix<f64>,
    /// `T × (T − k)` orthonormal basis of the complement of the factor space.
    pub q_hat: DMatrix<f64>,
    /// `n × T`, row `i` is `(M_F̂ y_i)'`.
    pub residuals: DMatrix<f64>,
}

impl FactorFit {
    pub fn n(&self) -> usize {
        self.residuals.nrows()
    }

    pub fn t(&self) -> usize {
        self.residuals.ncols()
    }

    /// Builds the fit from an orthonormal `T × k` basis of the factor space.
    pub fn from_basis(panel: &PanelData, basis: DMatrix<f64>) -> Result<Self> {
        let t = panel.t();
        let k = basis.ncols();
        if basis.nrows() != t || k >= t {
            return Err(Error::invalid(format!(
                "factor basis is {}x{}, panel has T={t}",
                basis.nrows(),
                k
            )));
        }
        let q_hat = if k == 0 {
            DMatrix::identity(t, t)
        } else {
            complement_basis(&basis)?
        };
        let m_fhat = DMatrix::<f64>::identity(t, t) - &basis * basis.transpose();
        let residuals = panel.y() * &m_fhat;
        Ok(FactorFit {
            k,
            f_hat: basis * (t as f64).sqrt(),
            m_fhat,
            q_hat,
            residuals,
        })
    }
}

/// Instrument-route fit: portfolio aggregates and their eigenstructure.
#[derive(Clone, Debug)]
pub struct InstrumentFit {
    pub k: usize,
    /// `T × K`, row `t` is `ξ̂_t'`.
    pub xi_hat: DMatrix<f64>,
    pub v_xi_hat: SymMatrix,
    /// `K × k`, top-`k` eigenvectors of `V̂_ξ`.
    pub gamma_hat: DMatrix<f64>,
    /// `K × (K − k)` complement of `Γ̂`.
    pub pi_hat: DMatrix<f64>,
    /// `T × k`, `Ξ̂ Γ̂` before normalisation.
    pub f_hat: DMatrix<f64>,
    /// Residual fit built from the orthonormalised column space of `Ξ̂ Γ̂`.
    pub factor_fit: FactorFit,
}

/// `Ξ̂ = Y'Z/n` (`T × K`) and `V̂_ξ = Ξ̂'Ξ̂/T` (`K × K`) on raw matrices.
pub fn portfolio_aggregates_raw(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, SymMatrix)> {
    if y.nrows() != z.nrows() {
        return Err(Error::invalid(format!(
            "panel has {} rows, instruments have {}",
            y.nrows(),
            z.nrows()
        )));
    }
    if y.nrows() == 0 || y.ncols() == 0 {
        return Err(Error::invalid("empty panel"));
    }
    let n = y.nrows() as f64;
    let xi = y.tr_mul(z) / n;
    let v = SymMatrix::symmetrized(xi.tr_mul(&xi) / y.ncols() as f64);
    Ok((xi, v))
}

pub fn portfolio_aggregates(
    panel: &PanelData,
    instruments: &InstrumentPanel,
) -> Result<(DMatrix<f64>, SymMatrix)> {
    portfolio_aggregates_raw(panel.y(), instruments.z())
}

/// `T(k) = Σ_{j>k} δ_j(V̂_ξ)`.
pub fn stat_t(v_xi_hat: &SymMatrix, k: usize) -> Result<f64> {
    let kk = v_xi_hat.dim();
    if k >= kk {
        return Err(Error::invalid(format!("T(k) needs k < K, got k={k}, K={kk}")));
    }
    let eig = v_xi_hat.eigenvalues();
    Ok(eig[k..].iter().sum::<f64>().max(0.0))
}

/// `S(k) = δ_{k+1}(V̂_y) − δ_T(V̂_y)`.
pub fn stat_s(v_y_hat: &SymMatrix, k: usize) -> Result<f64> {
    let t = v_y_hat.dim();
    if t < 2 || k > t - 2 {
        return Err(Error::invalid(format!("S(k) needs k <= T-2, got k={k}, T={t}")));
    }
    Ok(s_from_eigenvalues(&v_y_hat.eigenvalues(), k))
}

/// `S*(k)`: the largest ratio of consecutive eigenvalue spacings for
/// `j = k+1, …, k*`. Returns `+∞` when a denominator vanishes.
pub fn stat_s_star(v_y_hat: &SymMatrix, k: usize, k_star: usize) -> Result<f64> {
    let t = v_y_hat.dim();
    if k_star < k + 1 || t < 2 || k_star > t - 2 {
        return Err(Error::invalid(format!(
            "S*(k) needs k+1 <= k* <= T-2, got k={k}, k*={k_star}, T={t}"
        )));
    }
    Ok(s_star_from_eigenvalues(&v_y_hat.eigenvalues(), k, k_star))
}

/// `Δ_k = √n (δ_k − δ_{k+1})`.
pub fn stat_delta(v_y_hat: &SymMatrix, k: usize, n: usize) -> Result<f64> {
    let t = v_y_hat.dim();
    if k == 0 || k >= t {
        return Err(Error::invalid(format!("Δ_k needs 1 <= k <= T-1, got k={k}, T={t}")));
    }
    let eig = v_y_hat.eigenvalues();
    Ok(delta_from_eigenvalues(&eig, k, n))
}

/// `δ_{k+1} − δ_last` from descending eigenvalues.
pub fn s_from_eigenvalues(eig: &[f64], k: usize) -> f64 {
    (eig[k] - eig[eig.len() - 1]).max(0.0)
}

/// Max spacing ratio for 1-based `j = k+1..=k_star` over descending eigenvalues.
pub fn s_star_from_eigenvalues(eig: &[f64], k: usize, k_star: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for j in k..k_star {
        let num = eig[j] - eig[j + 1];
        let den = eig[j + 1] - eig[j + 2];
        if den < RATIO_DENOMINATOR_FLOOR {
            return f64::INFINITY;
        }
        best = best.max(num / den);
    }
    best
}

pub fn delta_from_eigenvalues(eig: &[f64], k: usize, n: usize) -> f64 {
    (n as f64).sqrt() * (eig[k - 1] - eig[k]).max(0.0)
}

/// PCA fit on `V̂_y`: `F̂ = √T ×` top-`k` eigenvectors, residuals `M_F̂ y_i`.
pub fn pca_fit(panel: &PanelData, k: usize) -> Result<FactorFit> {
    let t = panel.t();
    if k >= t {
        return Err(Error::invalid(format!("pca_fit needs k < T, got k={k}, T={t}")));
    }
    let eig = sym_eig(&panel.second_moment())?;
    FactorFit::from_basis(panel, eig.leading_vectors(k))
}

/// Instrument-route fit with `k` factors.
pub fn iv_fit(panel: &PanelData, instruments: &InstrumentPanel, k: usize) -> Result<InstrumentFit> {
    let kk = instruments.k();
    let t = panel.t();
    if panel.n() != instruments.n() {
        return Err(Error::invalid(format!(
            "panel has {} assets, instruments have {}",
            panel.n(),
            instruments.n()
        )));
    }
    if k >= kk || k >= t {
        return Err(Error::invalid(format!(
            "iv_fit needs k < K and k < T, got k={k}, K={kk}, T={t}"
        )));
    }
    let (xi_hat, v_xi_hat) = portfolio_aggregates(panel, instruments)?;
    let eig = sym_eig(&v_xi_hat)?;
    let gamma_hat = eig.leading_vectors(k);
    let pi_hat = if k == 0 {
        DMatrix::identity(kk, kk)
    } else {
        complement_basis(&gamma_hat)?
    };
    let f_hat = &xi_hat * &gamma_hat;
    let basis = if k == 0 {
        DMatrix::zeros(t, 0)
    } else {
        orthonormalize_columns(&f_hat)?
    };
    let factor_fit = FactorFit::from_basis(panel, basis)?;
    Ok(InstrumentFit {
        k,
        xi_hat,
        v_xi_hat,
        gamma_hat,
        pi_hat,
        f_hat,
        factor_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(r: usize, c: usize, g: &mut rng::SimRng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(g))
    }

    #[test]
    fn portfolio_examples() {
        let y = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let z = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let (xi, v) = portfolio_aggregates_raw(&y, &z).unwrap();
        assert_eq!(xi[(0, 0)], 5.5);
        assert_eq!(v.as_matrix()[(0, 0)], 30.25);

        let mut g = rng::from_seed(1);
        let panel = PanelData::new(gaussian(10, 4, &mut g)).unwrap();
        let ones = InstrumentPanel::new(DMatrix::from_element(10, 1, 1.0)).unwrap();
        let (xi, _) = portfolio_aggregates(&panel, &ones).unwrap();
        for t in 0..4 {
            let mean = panel.y().column(t).mean();
            assert!((xi[(t, 0)] - mean).abs() < 1e-14);
        }

        let zero = PanelData::new(DMatrix::zeros(3, 3)).unwrap();
        let inst = InstrumentPanel::new(gaussian(3, 2, &mut g)).unwrap();
        let (_, v) = portfolio_aggregates(&zero, &inst).unwrap();
        assert_eq!(v.as_matrix().norm(), 0.0);

        let short = InstrumentPanel::new(gaussian(2, 2, &mut g)).unwrap();
        assert!(portfolio_aggregates(&zero, &short).is_err());
    }

    #[test]
    fn stat_t_examples() {
        let v = SymMatrix::from_diagonal(&[3.0, 2.0, 1.0]);
        assert_eq!(stat_t(&v, 1).unwrap(), 3.0);
        assert_eq!(stat_t(&v, 2).unwrap(), 1.0);
        assert!(stat_t(&v, 3).is_err());
        let u = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let rank1 = SymMatrix::new(&u * u.transpose()).unwrap();
        assert!(stat_t(&rank1, 1).unwrap() < 1e-10);
    }

    #[test]
    fn stat_s_examples() {
        let v = SymMatrix::from_diagonal(&[5.0, 3.0, 2.0, 2.0]);
        assert_eq!(stat_s(&v, 1).unwrap(), 1.0);
        let sph = SymMatrix::identity(5).scale(2.5);
        for k in 0..=3 {
            assert_eq!(stat_s(&sph, k).unwrap(), 0.0);
        }
        assert!(stat_s(&sph, 4).is_err());
    }

    #[test]
    fn stat_s_star_examples() {
        let v = SymMatrix::from_diagonal(&[10.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert!((stat_s_star(&v, 1, 4).unwrap() - 1.0).abs() < 1e-12);
        let v = SymMatrix::from_diagonal(&[10.0, 9.0, 1.0, 0.9, 0.8]);
        assert!((stat_s_star(&v, 0, 2).unwrap() - 80.0).abs() < 1e-9);
        let sph = SymMatrix::identity(5);
        assert_eq!(stat_s_star(&sph, 0, 3).unwrap(), f64::INFINITY);
        assert!(stat_s_star(&sph, 2, 2).is_err());
        assert!(stat_s_star(&sph, 0, 4).is_err());
    }

    #[test]
    fn stat_delta_examples() {
        let v = SymMatrix::from_diagonal(&[4.0, 4.0, 1.0]);
        assert_eq!(stat_delta(&v, 1, 100).unwrap(), 0.0);
        let v = SymMatrix::from_diagonal(&[4.0, 1.0]);
        assert_eq!(stat_delta(&v, 1, 100).unwrap(), 30.0);
        assert!(stat_delta(&v, 0, 100).is_err());
        assert!(stat_delta(&v, 2, 100).is_err());
        let scaled = v.scale(3.0);
        assert_eq!(stat_delta(&scaled, 1, 100).unwrap(), 90.0);
    }

    #[test]
    fn pca_fit_k0_keeps_data() {
        let mut g = rng::from_seed(2);
        let panel = PanelData::new(gaussian(20, 5, &mut g)).unwrap();
        let fit = pca_fit(&panel, 0).unwrap();
        assert_eq!(&fit.residuals, panel.y());
        assert_eq!(fit.q_hat, DMatrix::<f64>::identity(5, 5));
        assert!(pca_fit(&panel, 5).is_err());
    }

    #[test]
    fn pca_fit_exact_one_factor() {
        let mut g = rng::from_seed(3);
        let f = gaussian(6, 1, &mut g);
        let b = gaussian(30, 1, &mut g);
        let panel = PanelData::new(&b * f.transpose()).unwrap();
        let fit = pca_fit(&panel, 1).unwrap();
        assert!(fit.residuals.norm() < 1e-8);
        // F̂ spans f
        let proj = &fit.m_fhat * &f;
        assert!(proj.norm() < 1e-8 * f.norm());
    }

    #[test]
    fn pca_fit_invariants() {
        let mut g = rng::from_seed(4);
        let panel = PanelData::new(gaussian(50, 7, &mut g)).unwrap();
        for k in 1..6 {
            let fit = pca_fit(&panel, k).unwrap();
            let ftf = fit.f_hat.tr_mul(&fit.f_hat) / 7.0;
            assert!((ftf - DMatrix::<f64>::identity(k, k)).norm() < 1e-7);
            assert!((fit.residuals.clone() * &fit.f_hat).norm() < 1e-8);
            let resid_mom = fit.residuals.tr_mul(&fit.residuals) / 50.0;
            let v = panel.second_moment();
            let expected = &fit.m_fhat * v.as_matrix() * &fit.m_fhat;
            assert!((resid_mom - expected).norm() < 1e-8);
            for i in 0..50 {
                let direct = &fit.m_fhat * panel.y().row(i).transpose();
                assert!((direct - fit.residuals.row(i).transpose()).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn iv_fit_exact_factorisation() {
        let mut g = rng::from_seed(5);
        let (n, t, kk, k) = (40, 6, 4, 2);
        let f = gaussian(t, k, &mut g);
        let beta = gaussian(n, k, &mut g);
        let z = gaussian(n, kk, &mut g);
        let panel = PanelData::new(&beta * f.transpose()).unwrap();
        let inst = InstrumentPanel::new(z).unwrap();
        let fit = iv_fit(&panel, &inst, k).unwrap();
        assert!(stat_t(&fit.v_xi_hat, k).unwrap() < 1e-10);
        assert!(fit.pi_hat.tr_mul(&fit.gamma_hat).norm() < 1e-8);
        let gg = fit.gamma_hat.tr_mul(&fit.gamma_hat);
        assert!((gg - DMatrix::<f64>::identity(k, k)).norm() < 1e-8);
        // the instrument factors span the true factor space, so residuals vanish
        assert!(fit.factor_fit.residuals.norm() < 1e-8);
    }

    #[test]
    fn iv_fit_scalar_instrument() {
        let mut g = rng::from_seed(6);
        let panel = PanelData::new(gaussian(10, 3, &mut g)).unwrap();
        let inst = InstrumentPanel::new(gaussian(10, 1, &mut g)).unwrap();
        let fit = iv_fit(&panel, &inst, 0).unwrap();
        assert_eq!(fit.pi_hat, DMatrix::from_element(1, 1, 1.0));
        assert!(iv_fit(&panel, &inst, 1).is_err());
    }

    fn arb_panel() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, Vec<usize>)> {
        (3usize..12, 3usize..7, 2usize..5).prop_flat_map(|(n, t, kk)| {
            (
                proptest::collection::vec(-3.0..3.0_f64, n * t),
                proptest::collection::vec(-3.0..3.0_f64, n * kk),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            )
                .prop_map(move |(y, z, p)| {
                    (DMatrix::from_vec(n, t, y), DMatrix::from_vec(n, kk, z), p)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn statistics_shift_and_permutation((y, z, perm) in arb_panel(), c in -5.0..5.0_f64) {
            let panel = PanelData::new(y).unwrap();
            let inst = InstrumentPanel::new(z).unwrap();
            let v = panel.second_moment();
            let t = panel.t();
            let shifted = v.shift(c);
            for k in 0..=t - 2 {
                let a = stat_s(&v, k).unwrap();
                let b = stat_s(&shifted, k).unwrap();
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs() + c.abs()));
                // telescope identity
                let eig = v.eigenvalues();
                let tele: f64 = (k..t - 1).map(|j| eig[j] - eig[j + 1]).sum();
                prop_assert!((a - tele).abs() <= 1e-10 * (1.0 + a.abs()));
            }

            let pp = panel.select_rows(&perm).unwrap();
            let pi = inst.select_rows(&perm).unwrap();
            let vp = pp.second_moment();
            for k in 0..=t - 2 {
                prop_assert!((stat_s(&v, k).unwrap() - stat_s(&vp, k).unwrap()).abs() <= 1e-10);
            }
            for k in 1..t {
                let a = stat_delta(&v, k, panel.n()).unwrap();
                let b = stat_delta(&vp, k, panel.n()).unwrap();
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a));
            }
            let (_, vx) = portfolio_aggregates(&panel, &inst).unwrap();
            let (_, vxp) = portfolio_aggregates(&pp, &pi).unwrap();
            let mut prev = f64::INFINITY;
            for k in 0..inst.k() {
                let a = stat_t(&vx, k).unwrap();
                prop_assert!((a - stat_t(&vxp, k).unwrap()).abs() <= 1e-10 * (1.0 + a));
                prop_assert!(a <= prev + 1e-12);
                prop_assert!(a >= 0.0);
                prev = a;
            }
        }
    }
}
