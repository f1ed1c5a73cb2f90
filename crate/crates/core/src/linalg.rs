//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative eigenvalue floor used when repairing covariance matrices.
pub const PSD_FLOOR: f64 = 1e-12;

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Symmetrizes `m` and clips eigenvalues below `PSD_FLOOR * trace`.
pub fn repair_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let trace = sym.trace().abs();
    let floor = PSD_FLOOR * trace;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Largest eigenvalue modulus of the companion matrix of a lag-stacked
/// coefficient block `beta` (N x N*p).
pub fn spectral_radius(beta: &DMatrix<f64>) -> f64 {
    let companion = companion_matrix(beta);
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn companion_matrix(beta: &DMatrix<f64>) -> DMatrix<f64> {
    let n = beta.nrows();
    let k = beta.ncols();
    let mut c = DMatrix::zeros(k, k);
    c.view_mut((0, 0), (n, k)).copy_from(beta);
    for i in n..k {
        c[(i, i - n)] = 1.0;
    }
    c
}

/// Multivariate least squares `y ≈ x * coef`.
#[derive(Debug, Clone)]
pub(crate) struct LeastSquares {
    /// k x m coefficients (one column per dependent variable).
    pub coef: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
    /// (X'X)^{-1}
    pub xtx_inv: DMatrix<f64>,
}

/// Reciprocal condition threshold below which a cross-product matrix is
/// treated as singular.
const RCOND_MIN: f64 = 1e-13;

pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<LeastSquares> {
    if x.nrows() < x.ncols() || x.ncols() == 0 {
        return None;
    }
    let xtx = x.transpose() * x;
    let xtx_inv = invert_spd(&xtx)?;
    let coef = &xtx_inv * (x.transpose() * y);
    let residuals = y - x * &coef;
    Some(LeastSquares {
        coef,
        residuals,
        xtx_inv,
    })
}

/// Inverse of a symmetric positive definite matrix, `None` when it is
/// numerically singular.
pub(crate) fn invert_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let scale = a.diagonal().max();
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot < RCOND_MIN * scale {
        return None;
    }
    Some(chol.inverse())
}

/// Solves a square system, `None` when singular.
pub(crate) fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.amax();
    if !(scale > 0.0) {
        return None;
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let min_pivot = (0..a.nrows()).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if min_pivot < 1e-12 * scale {
        return None;
    }
    lu.solve(b)
}

/// Numeric rank of `x` from its singular values.
pub(crate) fn numeric_rank(x: &DMatrix<f64>) -> usize {
    let sv = x.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON * 16.0;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Serde adapter storing a matrix as a list of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".to_string());
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}
