//! Dense spectral linear algebra on reference Jacobians.
//!
//! A [`SpectralDecomposition`] is an SVD `J = U diag(lambda) V^T` with the
//! singular values in descending order and a deterministic sign convention
//! (first nonzero entry of each left vector positive). Splitting the
//! spectrum at a cutoff `alpha` yields an [`InfoNuisanceSplit`]: the
//! information space is the span of the left singular vectors whose
//! singular value is at or above the cutoff, the nuisance space is its
//! orthogonal complement. Ties at `lambda_s == alpha` land in the
//! information space.

use nalgebra::{DMatrix, DVector, DVectorView, MatrixView};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cutoff {alpha} exceeds top singular value {top}")]
    CutoffTooLarge { alpha: f64, top: f64 },
    #[error("cutoff must be nonnegative, got {0}")]
    InvalidCutoff(f64),
    #[error("stopping-time parameter must satisfy gamma >= 1, got {0}")]
    InvalidGamma(f64),
    #[error("information space is empty (rank 0)")]
    EmptyInformationSpace,
    #[error("cutoff alpha = 0 with a nonempty nuisance contribution")]
    ZeroCutoff,
    #[error("matrix is not symmetric positive semi-definite (eigenvalue {0})")]
    NotPsd(f64),
    #[error("matrix is not symmetric (max asymmetry {0})")]
    NotSymmetric(f64),
    #[error("columns are not orthonormal (max deviation {0})")]
    NotOrthonormal(f64),
    #[error("svd failed to converge")]
    SvdFailed,
}

/// Largest singular value of a dense matrix.
///
/// Computed as the square root of the top eigenvalue of the smaller Gram
/// matrix, which is much cheaper than a full SVD for very wide or very
/// tall inputs.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    let eig = gram.symmetric_eigenvalues();
    eig.iter().fold(0.0f64, |m, &v| m.max(v)).max(0.0).sqrt()
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn symmetric_operator_norm(a: &DMatrix<f64>) -> f64 {
    let eig = a.symmetric_eigenvalues();
    eig.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// SVD of a reference Jacobian, `J = U diag(lambda) V^T`.
///
/// The source matrix is zero-padded on the right when it has fewer columns
/// than rows, so the stored right factor always has at least as many rows
/// as the left factor and `U` is a full orthonormal basis of the output
/// space.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// m x m orthonormal, columns are left singular vectors.
    left_vectors: DMatrix<f64>,
    /// Length m, descending, nonnegative.
    singular_values: DVector<f64>,
    /// p x m with orthonormal columns (p >= m after padding).
    right_vectors: DMatrix<f64>,
}

/// Compute the spectral decomposition of `j` (m x p, padded to p >= m).
///
/// Singular values come out descending and each left vector has its first
/// nonzero entry positive, so repeated runs produce identical bases.
pub fn svd(j: &DMatrix<f64>) -> Result<SpectralDecomposition, SpectralError> {
    if j.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::NonFinite);
    }
    let m = j.nrows();
    let padded;
    let source = if j.ncols() < m {
        let mut p = DMatrix::zeros(m, m);
        p.view_mut((0, 0), (m, j.ncols())).copy_from(j);
        padded = p;
        &padded
    } else {
        j
    };
    let p = source.ncols();

    let svd = nalgebra::SVD::try_new(source.clone(), true, true, f64::EPSILON * 16.0, 0)
        .ok_or(SpectralError::SvdFailed)?;
    let u = svd.u.ok_or(SpectralError::SvdFailed)?;
    let v_t = svd.v_t.ok_or(SpectralError::SvdFailed)?;
    let sigma = svd.singular_values;

    // Sort descending; nalgebra does not guarantee an order.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());

    let mut left = DMatrix::zeros(m, m);
    let mut right = DMatrix::zeros(p, m);
    let mut values = DVector::zeros(m);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = sigma[src].max(0.0);
        let mut ucol = u.column(src).clone_owned();
        let mut vcol = v_t.row(src).transpose();
        if let Some(first) = ucol.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                ucol.neg_mut();
                vcol.neg_mut();
            }
        }
        left.column_mut(dst).copy_from(&ucol);
        right.column_mut(dst).copy_from(&vcol);
    }

    Ok(SpectralDecomposition {
        left_vectors: left,
        singular_values: values,
        right_vectors: right,
    })
}

impl SpectralDecomposition {
    /// Output-space dimension m.
    pub fn output_dim(&self) -> usize {
        self.left_vectors.nrows()
    }

    /// Parameter-space dimension p (after padding).
    pub fn param_dim(&self) -> usize {
        self.right_vectors.nrows()
    }

    pub fn left_vectors(&self) -> &DMatrix<f64> {
        &self.left_vectors
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right_vectors
    }

    /// Top singular value.
    pub fn top_singular_value(&self) -> f64 {
        if self.singular_values.is_empty() {
            0.0
        } else {
            self.singular_values[0]
        }
    }

    /// Smallest singular value.
    pub fn min_singular_value(&self) -> f64 {
        self.singular_values
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Coefficients of `v` in the left singular basis, `a = U^T v`.
    pub fn left_coefficients(&self, v: &DVector<f64>) -> Result<DVector<f64>, SpectralError> {
        if v.len() != self.output_dim() {
            return Err(SpectralError::DimensionMismatch {
                expected: self.output_dim(),
                got: v.len(),
            });
        }
        Ok(self.left_vectors.tr_mul(v))
    }

    /// Reconstruct the (padded) source matrix from the factors.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.left_vectors
            * DMatrix::from_diagonal(&self.singular_values)
            * self.right_vectors.transpose()
    }

    /// Apply the full Moore–Penrose pseudoinverse, `J^dagger v`.
    ///
    /// Singular values below `1e-12 * lambda_1` are treated as zero.
    pub fn pinv_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>, SpectralError> {
        let a = self.left_coefficients(v)?;
        let tol = 1e-12 * self.top_singular_value();
        let mut out = DVector::zeros(self.param_dim());
        for s in 0..self.output_dim() {
            let lam = self.singular_values[s];
            if lam > tol {
                out += self.right_vectors.column(s) * (a[s] / lam);
            }
        }
        Ok(out)
    }
}

/// Which side of the spectrum split to project onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subspace {
    Information,
    Nuisance,
}

/// A cutoff-indexed split of a spectral decomposition into information and
/// nuisance subspaces, with the truncated operator on the information side.
#[derive(Debug, Clone)]
pub struct InfoNuisanceSplit {
    cutoff: f64,
    rank: usize,
    parent: Arc<SpectralDecomposition>,
}

/// Split the spectrum of `decomp` at cutoff `alpha`.
///
/// The rank is the number of singular values at or above `alpha`; ties are
/// counted into the information space.
pub fn split_at_cutoff(
    decomp: &Arc<SpectralDecomposition>,
    alpha: f64,
) -> Result<InfoNuisanceSplit, SpectralError> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(SpectralError::InvalidCutoff(alpha));
    }
    let top = decomp.top_singular_value();
    if alpha > top {
        return Err(SpectralError::CutoffTooLarge { alpha, top });
    }
    let rank = decomp.singular_values.iter().filter(|&&l| l >= alpha).count();
    Ok(InfoNuisanceSplit {
        cutoff: alpha,
        rank,
        parent: Arc::clone(decomp),
    })
}

impl InfoNuisanceSplit {
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Number of singular values at or above the cutoff.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn parent(&self) -> &Arc<SpectralDecomposition> {
        &self.parent
    }

    pub fn output_dim(&self) -> usize {
        self.parent.output_dim()
    }

    /// Basis of the information space (columns of U with lambda >= alpha).
    pub fn info_basis(&self) -> MatrixView<'_, f64, nalgebra::Dyn, nalgebra::Dyn> {
        self.parent
            .left_vectors
            .view((0, 0), (self.parent.output_dim(), self.rank))
    }

    /// Basis of the nuisance space (remaining columns of U).
    pub fn nuisance_basis(&self) -> MatrixView<'_, f64, nalgebra::Dyn, nalgebra::Dyn> {
        let m = self.parent.output_dim();
        self.parent.left_vectors.view((0, self.rank), (m, m - self.rank))
    }

    /// Information-side singular values.
    pub fn info_singulars(&self) -> DVectorView<'_, f64> {
        self.parent.singular_values.rows(0, self.rank)
    }

    /// Information-side right singular vectors.
    pub fn info_right(&self) -> MatrixView<'_, f64, nalgebra::Dyn, nalgebra::Dyn> {
        self.parent
            .right_vectors
            .view((0, 0), (self.parent.param_dim(), self.rank))
    }

    /// Project `v` onto the chosen subspace.
    pub fn project(
        &self,
        v: &DVector<f64>,
        which: Subspace,
    ) -> Result<DVector<f64>, SpectralError> {
        if v.len() != self.output_dim() {
            return Err(SpectralError::DimensionMismatch {
                expected: self.output_dim(),
                got: v.len(),
            });
        }
        let basis = match which {
            Subspace::Information => self.info_basis(),
            Subspace::Nuisance => self.nuisance_basis(),
        };
        Ok(basis * (basis.transpose() * v))
    }

    /// Norm of the projection of `v` onto the chosen subspace.
    pub fn projection_norm(&self, v: &DVector<f64>, which: Subspace) -> Result<f64, SpectralError> {
        if v.len() != self.output_dim() {
            return Err(SpectralError::DimensionMismatch {
                expected: self.output_dim(),
                got: v.len(),
            });
        }
        let basis = match which {
            Subspace::Information => self.info_basis(),
            Subspace::Nuisance => self.nuisance_basis(),
        };
        Ok((basis.transpose() * v).norm())
    }

    /// Apply the pseudoinverse of the truncated operator,
    /// `J_I^dagger v = V_I Lambda_I^{-1} U_I^T v`.
    ///
    /// Information-side singular values that are numerically zero (possible
    /// only at cutoff zero) follow pseudoinverse semantics and contribute
    /// nothing.
    pub fn truncated_pinv_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>, SpectralError> {
        if self.rank == 0 {
            return Err(SpectralError::EmptyInformationSpace);
        }
        if v.len() != self.output_dim() {
            return Err(SpectralError::DimensionMismatch {
                expected: self.output_dim(),
                got: v.len(),
            });
        }
        let tol = 1e-12 * self.parent.top_singular_value();
        let mut out = DVector::zeros(self.parent.param_dim());
        for s in 0..self.rank {
            let lam = self.parent.singular_values[s];
            if lam > tol {
                let a = self.parent.left_vectors.column(s).dot(v);
                out += self.parent.right_vectors.column(s) * (a / lam);
            }
        }
        Ok(out)
    }

    /// Norm of `J_I^dagger v` without materializing the parameter-space
    /// vector.
    pub fn truncated_pinv_norm(&self, v: &DVector<f64>) -> Result<f64, SpectralError> {
        if self.rank == 0 {
            return Err(SpectralError::EmptyInformationSpace);
        }
        if v.len() != self.output_dim() {
            return Err(SpectralError::DimensionMismatch {
                expected: self.output_dim(),
                got: v.len(),
            });
        }
        let tol = 1e-12 * self.parent.top_singular_value();
        let mut acc = 0.0;
        for s in 0..self.rank {
            let lam = self.parent.singular_values[s];
            if lam > tol {
                let a = self.parent.left_vectors.column(s).dot(v);
                acc += (a / lam) * (a / lam);
            }
        }
        Ok(acc.sqrt())
    }

    /// The truncated operator `J_I` as a dense matrix.
    pub fn truncated_matrix(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.parent.output_dim(), self.parent.param_dim());
        for s in 0..self.rank {
            let lam = self.parent.singular_values[s];
            let u = self.parent.left_vectors.column(s);
            let vt = self.parent.right_vectors.column(s).transpose();
            out += (u * vt) * lam;
        }
        out
    }

    /// Early stopping value: the scalar summary
    /// `B = sqrt( sum_{s<=r} (alpha^2/lambda_s^2) a_s^2
    ///          + Gamma^2 sum_{s>r} (lambda_s^2/alpha^2) a_s^2 )`
    /// with `a_s = <u_s, r0>`.
    ///
    /// Information-side terms with `lambda_s = 0` (cutoff zero) contribute
    /// nothing; nuisance terms with `lambda_s = 0` contribute nothing.
    pub fn early_stopping_value(
        &self,
        r0: &DVector<f64>,
        gamma: f64,
    ) -> Result<f64, SpectralError> {
        if gamma < 1.0 || !gamma.is_finite() {
            return Err(SpectralError::InvalidGamma(gamma));
        }
        if r0.len() != self.output_dim() {
            return Err(SpectralError::DimensionMismatch {
                expected: self.output_dim(),
                got: r0.len(),
            });
        }
        let m = self.output_dim();
        let alpha = self.cutoff;
        if alpha == 0.0 && self.rank < m {
            return Err(SpectralError::ZeroCutoff);
        }
        let a = self.parent.left_coefficients(r0)?;
        let mut acc = 0.0;
        for s in 0..m {
            let lam = self.parent.singular_values[s];
            if s < self.rank {
                if lam > 0.0 {
                    let ratio = alpha / lam;
                    acc += ratio * ratio * a[s] * a[s];
                }
            } else if lam > 0.0 {
                let ratio = lam / alpha;
                acc += gamma * gamma * ratio * ratio * a[s] * a[s];
            }
        }
        Ok(acc.sqrt())
    }

    /// Early stopping distance `D = B / alpha`.
    pub fn early_stopping_distance(
        &self,
        r0: &DVector<f64>,
        gamma: f64,
    ) -> Result<f64, SpectralError> {
        if self.cutoff == 0.0 {
            return Err(SpectralError::ZeroCutoff);
        }
        Ok(self.early_stopping_value(r0, gamma)? / self.cutoff)
    }
}

/// Spectral decomposition of the PSD square root of a Gram matrix
/// `G = J J^T`: left vectors and singular values match those of `J`
/// itself, so splits, projections, and pseudoinverse norms built on it
/// agree with the ones from `svd(J)` while avoiding the wide SVD. The
/// right factor equals the left one (the source is `G^{1/2}`), so
/// parameter-space vectors from this decomposition live in the output
/// space, not in `J`'s row space.
pub fn gram_sqrt_decomposition(gram: &DMatrix<f64>) -> Result<SpectralDecomposition, SpectralError> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(SpectralError::DimensionMismatch {
            expected: n,
            got: gram.ncols(),
        });
    }
    if gram.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::NonFinite);
    }
    let sym = (gram + gram.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let floor = -1e-8 * lam_max.max(1e-300);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut left = DMatrix::zeros(n, n);
    let mut values = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        let e = eig.eigenvalues[src];
        if e < floor {
            return Err(SpectralError::NotPsd(e));
        }
        values[dst] = e.max(0.0).sqrt();
        let mut col = eig.eigenvectors.column(src).clone_owned();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        left.column_mut(dst).copy_from(&col);
    }
    Ok(SpectralDecomposition {
        right_vectors: left.clone(),
        left_vectors: left,
        singular_values: values,
    })
}

/// Symmetric PSD square root, `A^{1/2} = sum sqrt(lambda_i) u_i u_i^T`.
///
/// Eigenvalues in `[-tol, 0)` are clamped to zero, where
/// `tol = 1e-10 * max(1, |lambda|_max)`; anything more negative is
/// rejected. Asymmetry beyond `1e-10 * max(1, |A|_max)` is rejected.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>, SpectralError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(SpectralError::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::NonFinite);
    }
    let max_abs = a.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let sym_tol = 1e-10 * max_abs.max(1.0);
    let asym = (a - a.transpose()).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if asym > sym_tol {
        return Err(SpectralError::NotSymmetric(asym));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let eig_tol = 1e-10 * lam_max.max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -eig_tol {
            return Err(SpectralError::NotPsd(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    let half = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok((&half + half.transpose()) * 0.5)
}

/// Operator-norm distance between the orthogonal projectors onto the
/// column spans of `u1` and `u2`, `|U1 U1^T - U2 U2^T|`.
pub fn projector_distance(u1: &DMatrix<f64>, u2: &DMatrix<f64>) -> Result<f64, SpectralError> {
    if u1.nrows() != u2.nrows() {
        return Err(SpectralError::DimensionMismatch {
            expected: u1.nrows(),
            got: u2.nrows(),
        });
    }
    for u in [u1, u2] {
        let gram = u.transpose() * u;
        let dev = (&gram - DMatrix::identity(gram.nrows(), gram.ncols()))
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        if dev > 1e-8 {
            return Err(SpectralError::NotOrthonormal(dev));
        }
    }
    let diff = u1 * u1.transpose() - u2 * u2.transpose();
    Ok(symmetric_operator_norm(&diff))
}
