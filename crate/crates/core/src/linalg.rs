//! Small dense symmetric linear algebra: cyclic Jacobi eigensolver and PSD square roots.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Absolute tolerance (scaled by `max(1, max|a_ij|)`) for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Eigenvalues above `-PSD_TOL * max(1, max|λ|)` are clamped to zero.
pub const PSD_TOL: f64 = 1e-10;

/// Eigenpairs of a symmetric matrix, eigenvalues in non-increasing order and
/// eigenvectors stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymmetricEigen {
    /// `O · diag(values) · Oᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        &scaled * self.vectors.transpose()
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Fails unless `m` is square and symmetric within [`SYMMETRY_TOL`].
pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "matrix",
            reason: "entries must be finite".into(),
        });
    }
    let n = m.nrows();
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * max_abs(m).max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Eigenvalues come back in non-increasing order. Each eigenvector is signed so that its
/// entry of largest magnitude (lowest index on ties) is non-negative. At most
/// `100 · n²` sweeps are attempted.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> Result<SymmetricEigen> {
    check_symmetric(m)?;
    let n = m.nrows();
    // Work on the symmetrized matrix so that round-off asymmetry never accumulates.
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let max_sweeps = 100 * n * n;
    let frob = a.norm();

    let mut converged = false;
    for _ in 0..max_sweeps.max(1) {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= f64::EPSILON * frob {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    let new_p = c * akp - s * akq;
                    let new_q = s * akp + c * akq;
                    a[(k, p)] = new_p;
                    a[(p, k)] = new_p;
                    a[(k, q)] = new_q;
                    a[(q, k)] = new_q;
                }
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigenNoConvergence { sweeps: max_sweeps });
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the lowest original index first among equal eigenvalues.
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src).into_owned();
        let mut lead = 0;
        for k in 1..n {
            if col[k].abs() > col[lead].abs() {
                lead = k;
            }
        }
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Clamps round-off negatives to zero, rejecting genuinely indefinite spectra.
pub fn clamp_psd_values(values: &mut [f64]) -> Result<()> {
    let scale = values.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_TOL * scale {
                return Err(Error::NotPositiveSemidefinite { eigenvalue: *v });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Principal square root of a symmetric positive-semidefinite matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut eig = symmetric_eigen_desc(m)?;
    clamp_psd_values(&mut eig.values)?;
    for v in eig.values.iter_mut() {
        *v = v.sqrt();
    }
    Ok(eig.reconstruct())
}
