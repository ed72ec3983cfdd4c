//! Dense linear algebra shared by the rest of the crate.
//!
//! Conventions used throughout:
//!
//! - eigenvalues are returned in non-increasing order (`δ_1 ≥ δ_2 ≥ …`), with
//!   ties kept in the order produced by a stable sort;
//! - each eigenvector is signed so that its entry of largest magnitude is
//!   positive (first such entry on ties);
//! - `vec` stacks columns, so `vec(A)[i + j·T] = A[i, j]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetry is restored on construction, so downstream code may assume it.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Builds a symmetric matrix as `(S + S')/2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        Ok(Self::symmetrized(m))
    }

    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues only, in non-increasing order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.0)
    }

    pub fn scale(&self, c: f64) -> Self {
        SymMatrix(&self.0 * c)
    }

    /// `S + c·I`.
    pub fn shift(&self, c: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += c;
        }
        SymMatrix(m)
    }
}

#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: Vec<f64>,
    /// Column `j` is paired with `values[j]`.
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V diag(values) V'`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.values));
        &self.vectors * d * self.vectors.transpose()
    }

    /// The first `k` eigenvectors as a `dim × k` matrix.
    pub fn leading_vectors(&self, k: usize) -> DMatrix<f64> {
        self.vectors.columns(0, k).into_owned()
    }
}

/// Full symmetric eigendecomposition with ordering and sign conventions.
pub fn sym_eig(s: &SymMatrix) -> Result<SymEig> {
    let m = s.as_matrix();
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("sym_eig: non-finite input"));
    }
    let d = m.nrows();
    if d == 0 {
        return Ok(SymEig {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    // stable: equal eigenvalues keep solver order
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok(SymEig { values, vectors })
}

/// Eigenvalues of a symmetric matrix in non-increasing order.
///
/// Skips the eigenvector accumulation, which matters in the simulation loops.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = match m.nrows() {
        0 => Vec::new(),
        1 => vec![m[(0, 0)]],
        2 => {
            let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            let mid = 0.5 * (a + c);
            let rad = (0.5 * (a - c)).hypot(b);
            vec![mid + rad, mid - rad]
        }
        _ => m.clone().symmetric_eigenvalues().iter().copied().collect(),
    };
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Signs a vector so that its largest-magnitude entry is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let max = v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let tol = 1e-12 * max;
    if let Some(first) = v.iter().find(|x| x.abs() >= max - tol) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
}

/// `(1/rows) Σ_r x_r x_r'` over the rows of `x`.
///
/// The caller picks the orientation: rows are the averaging dimension.
pub fn second_moment(x: &DMatrix<f64>) -> Result<SymMatrix> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::invalid("second_moment: empty input"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("second_moment: non-finite input"));
    }
    let m = x.tr_mul(x) / x.nrows() as f64;
    Ok(SymMatrix::symmetrized(m))
}

/// Orthonormal basis of the orthogonal complement of the column space of `b`.
///
/// Gram–Schmidt over the columns of `M_B = I − BB'`, in order, skipping any
/// column whose residual norm falls below `1e-8`. Each resulting column obeys
/// the eigenvector sign convention.
pub fn complement_basis(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let t = b.nrows();
    let k = b.ncols();
    if k >= t {
        return Err(Error::invalid(format!(
            "complement_basis: need k < T, got k={k}, T={t}"
        )));
    }
    let gram = b.tr_mul(b);
    let gram_err = (&gram - DMatrix::<f64>::identity(k, k)).norm();
    if gram_err > 1e-8 {
        return Err(Error::invalid(format!(
            "complement_basis: input columns not orthonormal (|B'B - I| = {gram_err:.3e})"
        )));
    }
    let m = DMatrix::<f64>::identity(t, t) - b * b.transpose();
    let target = t - k;
    let mut q = DMatrix::<f64>::zeros(t, target);
    let mut found = 0;
    for j in 0..t {
        if found == target {
            break;
        }
        let mut v = m.column(j).into_owned();
        // two passes against B and the accepted columns
        for _ in 0..2 {
            for c in 0..k {
                let bc = b.column(c);
                let p = bc.dot(&v);
                v.axpy(-p, &bc, 1.0);
            }
            for c in 0..found {
                let qc = q.column(c);
                let p = qc.dot(&v);
                v.axpy(-p, &qc, 1.0);
            }
        }
        let norm = v.norm();
        if norm < 1e-8 {
            continue;
        }
        v /= norm;
        fix_sign(&mut v);
        q.set_column(found, &v);
        found += 1;
    }
    if found < target {
        return Err(Error::DegenerateProjector(format!(
            "found {found} independent columns, need {target}"
        )));
    }
    Ok(q)
}

/// A basis, its orthogonal complement and the residual projector `I − BB'`.
#[derive(Clone, Debug)]
pub struct ProjectorPair {
    pub basis: DMatrix<f64>,
    pub complement: DMatrix<f64>,
    pub projector: DMatrix<f64>,
}

impl ProjectorPair {
    /// `basis` must have orthonormal columns. A `T × 0` basis is allowed and
    /// yields `M = I`, complement `I`.
    pub fn from_basis(basis: DMatrix<f64>) -> Result<Self> {
        let t = basis.nrows();
        let complement = if basis.ncols() == 0 {
            DMatrix::identity(t, t)
        } else {
            complement_basis(&basis)?
        };
        let projector = DMatrix::<f64>::identity(t, t) - &basis * basis.transpose();
        Ok(ProjectorPair {
            basis,
            complement,
            projector,
        })
    }
}

/// Thin orthonormal basis of the column space of `x` (columns assumed independent).
pub fn orthonormalize_columns(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t, k) = x.shape();
    let mut q = DMatrix::<f64>::zeros(t, k);
    for j in 0..k {
        let mut v = x.column(j).into_owned();
        for _ in 0..2 {
            for c in 0..j {
                let qc = q.column(c);
                let p = qc.dot(&v);
                v.axpy(-p, &qc, 1.0);
            }
        }
        let norm = v.norm();
        let scale = x.column(j).norm().max(1.0);
        if norm < 1e-12 * scale {
            return Err(Error::DegenerateProjector(format!(
                "column {j} is linearly dependent on the previous ones"
            )));
        }
        q.set_column(j, &(v / norm));
    }
    Ok(q)
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// The `T² × T²` 0/1 matrix with `K_T vec(A) = vec(A')`.
pub fn commutation_matrix(t: usize) -> DMatrix<f64> {
    let n = t * t;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..t {
        for j in 0..t {
            k[(i + j * t, j + i * t)] = 1.0;
        }
    }
    k
}

/// Column-stacking `vec`.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`] for a square `dim × dim` matrix.
pub fn unvec(v: &[f64], dim: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(dim, dim, v)
}
