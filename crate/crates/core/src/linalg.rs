//! Small dense linear-algebra helpers on top of `nalgebra`.

use alloc::format;
use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// A closed loop is considered stable when its spectral radius is below
/// `1 - STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "spectral radius of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    match m.nrows() {
        0 => Ok(0.0),
        1 => Ok(m[(0, 0)].abs()),
        2 => Ok(spectral_radius_2x2(m)),
        _ => {
            let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::EigenFailure)?;
            let rho = schur
                .complex_eigenvalues()
                .iter()
                .map(|z| libm::hypot(z.re, z.im))
                .fold(0.0, f64::max);
            Ok(rho)
        }
    }
}

fn spectral_radius_2x2(m: &Mat) -> f64 {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let half_tr = 0.5 * (a + d);
    let det = a * d - b * c;
    let disc = half_tr * half_tr - det;
    if disc >= 0.0 {
        let s = libm::sqrt(disc);
        libm::fabs(half_tr + s).max(libm::fabs(half_tr - s))
    } else {
        // complex pair with modulus sqrt(det)
        libm::sqrt(det.max(0.0))
    }
}

/// `true` when `rho < 1 - STABILITY_MARGIN`.
pub fn is_stable_radius(rho: f64) -> bool {
    rho < 1.0 - STABILITY_MARGIN
}

/// Spectral (operator 2-) norm.
pub fn opnorm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.ncols() == 1 || m.nrows() == 1 {
        return m.norm();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |acc: f64, v| acc.max(*v))
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Column-stacking vectorization.
pub fn vec_cols(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_cols`]: fill an `nrows`-row matrix column by column.
pub fn unvec_cols(v: &[f64], nrows: usize, ncols: usize) -> Result<Mat> {
    if v.len() != nrows * ncols {
        return Err(Error::Dimension(format!(
            "cannot reshape {} entries into {}x{}",
            v.len(),
            nrows,
            ncols
        )));
    }
    Ok(Mat::from_column_slice(nrows, ncols, v))
}

/// Eigenvalues of a symmetric matrix (after symmetrization), ascending.
pub fn sym_eigenvalues(m: &Mat) -> alloc::vec::Vec<f64> {
    let mut ev: alloc::vec::Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_sym_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

/// Checks `m = mᵀ` and `λ_min(m) ≥ floor` within `tol`.
pub(crate) fn check_symmetric_bound(
    m: &Mat,
    name: &'static str,
    property: &'static str,
    strict: bool,
    tol: f64,
) -> Result<()> {
    if !is_symmetric(m, tol) {
        return Err(Error::InvalidMatrix { name, property });
    }
    let lmin = min_sym_eigenvalue(m);
    let ok = if strict { lmin > tol } else { lmin >= -tol };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidMatrix { name, property })
    }
}

/// A square factor `L` with `L Lᵀ = m` for a symmetric PSD matrix.
///
/// Cholesky is used when it succeeds; otherwise the factor comes from the
/// eigendecomposition with negative eigenvalues clipped to zero.
pub fn psd_factor(m: &Mat) -> Mat {
    if let Some(chol) = m.clone().cholesky() {
        return chol.l();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut v = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = libm::sqrt(lambda.max(0.0));
        v.column_mut(j).scale_mut(s);
    }
    v
}

/// Symmetric PSD square root `m^{1/2}` via eigendecomposition.
pub fn sym_sqrt(m: &Mat) -> Mat {
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    &eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose()
}
