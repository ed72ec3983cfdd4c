//! Perturbation expansions for the eigenvalues of `A + Ψ` where `A` is a
//! symmetric matrix of reduced rank and `Ψ` is a small symmetric perturbation.
//!
//! With `A = U D U'` of rank `k` and `Q` an orthonormal basis of the null
//! space of `A`, the `K − k` eigenvalues of `A + Ψ` near zero are
//!
//! ```text
//! δ_j(Q'ΨQ − Q'ΨU D⁻¹ U'ΨQ) + O(‖D⁻¹‖² K⁴ ‖Ψ‖³)      (second order)
//! δ_j(Q'ΨQ)                  + O(‖Ψ‖²)                 (first order)
//! ```
//!
//! and the non-zero eigenvalues and their eigenvectors move by
//! `U_j'ΨU_j` and `Σ_{ℓ≠j} (λ_j − λ_ℓ)⁻¹ P_ℓ Ψ U_j` to first order, with
//! `λ_0 = 0` and `P_0 = QQ'`. All norms are Frobenius norms.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{complement_basis, sym_eigenvalues, SymMatrix};

/// A symmetric `K × K` matrix of rank `k` held in factored form.
#[derive(Clone, Debug)]
pub struct LowRankSym {
    values: Vec<f64>,
    u: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl LowRankSym {
    /// `values` are the non-zero eigenvalues, `u` the matching orthonormal
    /// eigenvectors. The null-space basis is built with [`complement_basis`].
    pub fn new(values: Vec<f64>, u: DMatrix<f64>) -> Result<Self> {
        let q = if u.ncols() == 0 {
            DMatrix::identity(u.nrows(), u.nrows())
        } else {
            complement_basis(&u)?
        };
        Self::with_null_basis(values, u, q)
    }

    /// Same as [`LowRankSym::new`] with a caller-supplied null-space basis.
    pub fn with_null_basis(values: Vec<f64>, u: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let dim = u.nrows();
        let k = u.ncols();
        if values.len() != k {
            return Err(Error::invalid(format!(
                "{} eigenvalues for {} eigenvectors",
                values.len(),
                k
            )));
        }
        if q.nrows() != dim || q.ncols() + k != dim {
            return Err(Error::invalid(format!(
                "null basis is {}x{}, expected {}x{}",
                q.nrows(),
                q.ncols(),
                dim,
                dim - k
            )));
        }
        let ortho = |m: &DMatrix<f64>| {
            let c = m.ncols();
            (m.tr_mul(m) - DMatrix::<f64>::identity(c, c)).norm()
        };
        if ortho(&u) > 1e-8 || ortho(&q) > 1e-8 || u.tr_mul(&q).norm() > 1e-8 {
            return Err(Error::invalid("U and Q must be orthonormal and mutually orthogonal"));
        }
        if values.iter().any(|v| v.abs() < 1e-10) {
            return Err(Error::invalid("non-zero eigenvalues must exceed 1e-10 in magnitude"));
        }
        for i in 0..k {
            for j in i + 1..k {
                if (values[i] - values[j]).abs() < 1e-10 {
                    return Err(Error::invalid("non-zero eigenvalues must be distinct"));
                }
            }
        }
        // keep D sorted descending with U permuted accordingly
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let values_sorted = order.iter().map(|&i| values[i]).collect();
        let mut u_sorted = DMatrix::zeros(dim, k);
        for (dst, &src) in order.iter().enumerate() {
            u_sorted.set_column(dst, &u.column(src));
        }
        Ok(LowRankSym {
            values: values_sorted,
            u: u_sorted,
            q,
        })
    }

    /// Keeps the `rank` eigenvalues of largest magnitude of `a`.
    pub fn from_matrix(a: &SymMatrix, rank: usize) -> Result<Self> {
        let eig = crate::linalg::sym_eig(a)?;
        let mut idx: Vec<usize> = (0..eig.dim()).collect();
        idx.sort_by(|&x, &y| eig.values[y].abs().total_cmp(&eig.values[x].abs()));
        let keep = &idx[..rank.min(idx.len())];
        let values = keep.iter().map(|&i| eig.values[i]).collect();
        let mut u = DMatrix::zeros(a.dim(), keep.len());
        for (c, &i) in keep.iter().enumerate() {
            u.set_column(c, &eig.vectors.column(i));
        }
        Self::new(values, u)
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn null_basis(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `U diag(D) U'`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.values));
        &self.u * d * self.u.transpose()
    }

    /// `‖D⁻¹‖_F = sqrt(Σ_j λ_j⁻²)`.
    pub fn inverse_norm(&self) -> f64 {
        self.values.iter().map(|v| v.powi(-2)).sum::<f64>().sqrt()
    }

    /// Largest `‖Ψ‖` covered by the uniform second-order bound.
    pub fn perturbation_bound(&self) -> f64 {
        1.0 / (3.0 * self.inverse_norm() * ((self.dim() + 1) as f64).powf(1.5))
    }

    /// `ρ_j = Σ_{ℓ≠j} |λ_j − λ_ℓ|⁻¹` with `λ_0 = 0`; `j` is 1-based.
    pub fn rho(&self, j: usize) -> f64 {
        let lj = self.values[j - 1];
        let mut r = 1.0 / lj.abs();
        for (l, v) in self.values.iter().enumerate() {
            if l != j - 1 {
                r += 1.0 / (lj - v).abs();
            }
        }
        r
    }

    fn check_psi(&self, psi: &SymMatrix) -> Result<()> {
        if psi.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "perturbation is {0}x{0}, matrix is {1}x{1}",
                psi.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SmallEigApprox {
    /// Approximations of the `K − k` small eigenvalues, descending.
    pub values: Vec<f64>,
    /// `false` when `‖Ψ‖` exceeds [`LowRankSym::perturbation_bound`].
    pub within_bound: bool,
}

/// Second-order approximation of the `K − k` eigenvalues of `A + Ψ` near zero.
pub fn small_eig_second_order(a: &LowRankSym, psi: &SymMatrix) -> Result<SmallEigApprox> {
    a.check_psi(psi)?;
    let p = psi.as_matrix();
    let qpq = a.q.tr_mul(&(p * &a.q));
    let upq = a.u.tr_mul(&(p * &a.q));
    let dinv = DMatrix::from_diagonal(&DVector::from_iterator(
        a.rank(),
        a.values.iter().map(|v| 1.0 / v),
    ));
    let correction = upq.tr_mul(&(dinv * &upq));
    let m = qpq - correction;
    let within_bound = p.norm() <= a.perturbation_bound();
    if !within_bound {
        log::warn!(
            "perturbation norm {:.3e} exceeds the second-order bound {:.3e}",
            p.norm(),
            a.perturbation_bound()
        );
    }
    Ok(SmallEigApprox {
        values: sym_eigenvalues(&SymMatrix::symmetrized(m).into_inner()),
        within_bound,
    })
}

/// First-order approximation `δ_j(Q'ΨQ)`.
pub fn small_eig_first_order(a: &LowRankSym, psi: &SymMatrix) -> Result<SmallEigApprox> {
    a.check_psi(psi)?;
    let p = psi.as_matrix();
    let qpq = a.q.tr_mul(&(p * &a.q));
    Ok(SmallEigApprox {
        values: sym_eigenvalues(&SymMatrix::symmetrized(qpq).into_inner()),
        within_bound: p.norm() <= a.perturbation_bound(),
    })
}

#[derive(Clone, Debug)]
pub struct LargeEigApprox {
    pub value: f64,
    /// Unit-norm first-order eigenvector.
    pub vector: DVector<f64>,
    /// `false` when `‖Ψ‖` is not small against the eigenvalue gaps around `λ_j`.
    pub within_gap: bool,
}

/// First-order expansion of the `j`-th (1-based) non-zero eigenvalue and its
/// eigenvector.
pub fn large_eig_eigvec_first_order(
    a: &LowRankSym,
    psi: &SymMatrix,
    j: usize,
) -> Result<LargeEigApprox> {
    a.check_psi(psi)?;
    let k = a.rank();
    if j == 0 || j > k {
        return Err(Error::invalid(format!("eigen index {j} outside 1..={k}")));
    }
    let p = psi.as_matrix();
    let uj = a.u.column(j - 1).into_owned();
    let lj = a.values[j - 1];
    let puj = p * &uj;
    let value = lj + uj.dot(&puj);

    let mut vector = uj.clone();
    // ℓ = 0: null space, λ_0 = 0
    let null_part = &a.q * a.q.tr_mul(&puj);
    vector.axpy(1.0 / lj, &null_part, 1.0);
    let mut min_gap = lj.abs();
    for (l, &ll) in a.values.iter().enumerate() {
        if l == j - 1 {
            continue;
        }
        let ul = a.u.column(l);
        vector.axpy(ul.dot(&puj) / (lj - ll), &ul, 1.0);
        min_gap = min_gap.min((lj - ll).abs());
    }
    let within_gap = p.norm() < 0.5 * min_gap;
    if !within_gap {
        log::warn!(
            "perturbation norm {:.3e} is not small against eigenvalue gap {:.3e}",
            p.norm(),
            min_gap
        );
    }
    let norm = vector.norm();
    Ok(LargeEigApprox {
        value,
        vector: vector / norm,
        within_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eig;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn gaussian(r: usize, c: usize, g: &mut rng::SimRng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(g))
    }

    fn random_orthogonal(dim: usize, g: &mut rng::SimRng) -> DMatrix<f64> {
        gaussian(dim, dim, g).qr().q()
    }

    fn random_instance(dim: usize, k: usize, g: &mut rng::SimRng) -> (LowRankSym, SymMatrix) {
        let o = random_orthogonal(dim, g);
        let u = o.columns(0, k).into_owned();
        // distinct values spread over [1, 3]
        let values: Vec<f64> = (0..k)
            .map(|i| 1.0 + 2.0 * (i as f64 + Uniform::new(0.2, 0.8).unwrap().sample(g)) / k as f64)
            .collect();
        let a = LowRankSym::new(values, u).unwrap();
        let p = gaussian(dim, dim, g);
        let psi = SymMatrix::new(&p + p.transpose()).unwrap();
        let norm = psi.as_matrix().norm();
        (a, psi.scale(1.0 / norm))
    }

    fn exact_small(a: &LowRankSym, psi: &SymMatrix) -> Vec<f64> {
        let m = SymMatrix::new(a.matrix() + psi.as_matrix()).unwrap();
        m.eigenvalues()[a.rank()..].to_vec()
    }

    #[test]
    fn zero_perturbation() {
        let a = LowRankSym::new(vec![2.0], DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]))
            .unwrap();
        let psi = SymMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        let s = small_eig_second_order(&a, &psi).unwrap();
        assert!(s.values.iter().all(|v| v.abs() < 1e-15));
        let f = small_eig_first_order(&a, &psi).unwrap();
        assert!(f.values.iter().all(|v| v.abs() < 1e-15));
        let l = large_eig_eigvec_first_order(&a, &psi, 1).unwrap();
        assert_eq!(l.value, 2.0);
        assert!((l.vector - a.eigenvectors().column(0)).norm() < 1e-15);
    }

    #[test]
    fn two_by_two_second_order() {
        let a = LowRankSym::new(vec![1.0], DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        for eps in [1e-1, 1e-2, 1e-3] {
            let psi = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, eps, eps, 0.0])).unwrap();
            let approx = small_eig_second_order(&a, &psi).unwrap().values[0];
            assert!((approx + eps * eps).abs() < 1e-15);
            let exact = (1.0 - (1.0 + 4.0 * eps * eps).sqrt()) / 2.0;
            assert!((approx - exact).abs() <= 2.0 * eps.powi(4));
        }
    }

    #[test]
    fn identity_perturbation_first_order() {
        let a = LowRankSym::new(vec![1.0], DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]))
            .unwrap();
        let eps = 1e-3;
        let psi = SymMatrix::identity(3).scale(eps);
        let f = small_eig_first_order(&a, &psi).unwrap();
        assert!(f.values.iter().all(|v| (v - eps).abs() < 1e-15));
    }

    #[test]
    fn two_by_two_eigenvector() {
        let a = LowRankSym::new(vec![2.0], DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let eps = 1e-3;
        let psi = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, eps, eps, 0.0])).unwrap();
        let l = large_eig_eigvec_first_order(&a, &psi, 1).unwrap();
        assert_eq!(l.value, 2.0);
        let expected = DVector::from_column_slice(&[1.0, eps / 2.0]).normalize();
        assert!((l.vector - expected).norm() < 1e-15);
        assert!(large_eig_eigvec_first_order(&a, &psi, 2).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let a = LowRankSym::new(vec![1.0], DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let psi = SymMatrix::identity(3);
        assert!(small_eig_second_order(&a, &psi).is_err());
        assert!(small_eig_first_order(&a, &psi).is_err());
    }

    #[test]
    fn invalid_factorisations() {
        let u = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(LowRankSym::new(vec![1.0, 1.0], u.clone()).is_err());
        assert!(LowRankSym::new(vec![1.0, 0.0], u.clone()).is_err());
        assert!(LowRankSym::new(vec![1.0], u).is_err());
    }

    #[test]
    fn precondition_flag() {
        let a = LowRankSym::new(vec![1.0], DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let big = SymMatrix::identity(2);
        assert!(!small_eig_second_order(&a, &big).unwrap().within_bound);
        let small = SymMatrix::identity(2).scale(1e-3);
        assert!(small_eig_second_order(&a, &small).unwrap().within_bound);
    }

    #[test]
    fn rotation_of_null_basis_leaves_output_unchanged() {
        let mut g = rng::from_seed(11);
        for _ in 0..20 {
            let (a, psi) = random_instance(6, 2, &mut g);
            let psi = psi.scale(1e-2);
            let r = random_orthogonal(4, &mut g);
            let rotated = LowRankSym::with_null_basis(
                a.values().to_vec(),
                a.eigenvectors().clone(),
                a.null_basis() * r,
            )
            .unwrap();
            let x = small_eig_second_order(&a, &psi).unwrap().values;
            let y = small_eig_second_order(&rotated, &psi).unwrap().values;
            for (p, q) in x.iter().zip(&y) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn halving_ratios() {
        let mut g = rng::from_seed(5);
        for _ in 0..10 {
            let (a, psi) = random_instance(5, 2, &mut g);
            let h = 1e-3;
            let e = |s: f64, second: bool| -> Vec<f64> {
                let p = psi.scale(s);
                let approx = if second {
                    small_eig_second_order(&a, &p).unwrap().values
                } else {
                    small_eig_first_order(&a, &p).unwrap().values
                };
                exact_small(&a, &p)
                    .iter()
                    .zip(&approx)
                    .map(|(x, y)| (x - y).abs())
                    .collect()
            };
            let (e1, e2) = (e(h, true), e(h / 2.0, true));
            for (x, y) in e1.iter().zip(&e2) {
                let ratio = x / y;
                assert!((6.0..=10.0).contains(&ratio), "second-order ratio {ratio}");
            }
            let (e1, e2) = (e(h, false), e(h / 2.0, false));
            for (x, y) in e1.iter().zip(&e2) {
                let ratio = x / y;
                assert!((3.0..=5.0).contains(&ratio), "first-order ratio {ratio}");
            }
        }
    }

    #[test]
    fn large_eigenvalue_error_is_quadratic() {
        let mut g = rng::from_seed(17);
        for _ in 0..10 {
            let (a, psi) = random_instance(5, 3, &mut g);
            for j in 1..=3 {
                let err = |s: f64| {
                    let p = psi.scale(s);
                    let exact = sym_eig(&SymMatrix::new(a.matrix() + p.as_matrix()).unwrap())
                        .unwrap()
                        .values[j - 1];
                    (large_eig_eigvec_first_order(&a, &p, j).unwrap().value - exact).abs()
                };
                let ratio = err(1e-3) / err(5e-4);
                assert!((3.0..=5.0).contains(&ratio), "value ratio {ratio}");
            }
        }
    }

    #[test]
    fn eigenvector_error_is_quadratic() {
        let mut g = rng::from_seed(23);
        for _ in 0..10 {
            let (a, psi) = random_instance(5, 2, &mut g);
            let err = |s: f64| {
                let p = psi.scale(s);
                let e = sym_eig(&SymMatrix::new(a.matrix() + p.as_matrix()).unwrap()).unwrap();
                let mut exact = e.vectors.column(0).into_owned();
                let approx = large_eig_eigvec_first_order(&a, &p, 1).unwrap().vector;
                if exact.dot(&approx) < 0.0 {
                    exact.neg_mut();
                }
                (approx - exact).norm()
            };
            let ratio = err(1e-3) / err(5e-4);
            assert!((3.0..=5.0).contains(&ratio), "vector ratio {ratio}");
        }
    }

    #[test]
    fn weilandt_hoffmann() {
        let mut g = rng::from_seed(3);
        for _ in 0..30 {
            let (a, psi) = random_instance(6, 3, &mut g);
            let psi = psi.scale(0.5);
            let before = SymMatrix::new(a.matrix()).unwrap().eigenvalues();
            let after = SymMatrix::new(a.matrix() + psi.as_matrix()).unwrap().eigenvalues();
            let ss: f64 = before.iter().zip(&after).map(|(x, y)| (x - y).powi(2)).sum();
            assert!(ss <= psi.as_matrix().norm_squared() + 1e-12);
        }
    }
}
