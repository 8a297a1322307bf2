//! Centered Gaussian models and the Fréchet (Wasserstein-2) distance between them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, clamp_psd_values, symmetric_eigen_desc};
use crate::schedule::{check_time, NoiseSchedule};

/// Whether a spectrum holds population variances or sample estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flavor {
    True,
    Estimated,
}

/// Per-component variances sorted in non-increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    variances: Vec<f64>,
    flavor: Flavor,
}

/// Result of [`Spectrum::sorted`]: the sorted spectrum and where each entry came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedSpectrum {
    pub spectrum: Spectrum,
    /// `permutation[i]` is the original index of sorted entry `i`.
    pub permutation: Vec<usize>,
    /// `true` when the input was already in non-increasing order.
    pub was_ordered: bool,
}

fn validate_entries(variances: &[f64]) -> Result<()> {
    if variances.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    for (index, &value) in variances.iter().enumerate() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::InvalidVariance { index, value });
        }
    }
    Ok(())
}

impl Spectrum {
    /// Accepts an already sorted list; unsorted input is rejected.
    pub fn new(variances: Vec<f64>, flavor: Flavor) -> Result<Self> {
        validate_entries(&variances)?;
        if let Some(i) = variances.windows(2).position(|w| w[0] < w[1]) {
            return Err(Error::UnsortedSpectrum { index: i + 1 });
        }
        Ok(Self { variances, flavor })
    }

    /// Sorts the input in non-increasing order (stable) and records the permutation.
    pub fn sorted(variances: Vec<f64>, flavor: Flavor) -> Result<SortedSpectrum> {
        validate_entries(&variances)?;
        let mut permutation: Vec<usize> = (0..variances.len()).collect();
        permutation.sort_by(|&i, &j| variances[j].total_cmp(&variances[i]));
        let was_ordered = permutation.iter().enumerate().all(|(i, &p)| i == p);
        let sorted = permutation.iter().map(|&p| variances[p]).collect();
        Ok(SortedSpectrum {
            spectrum: Self {
                variances: sorted,
                flavor,
            },
            permutation,
            was_ordered,
        })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    /// Standard deviations `σ_d`.
    pub fn std_devs(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.sqrt()).collect()
    }

    /// Whether two adjacent entries are equal.
    pub fn has_ties(&self) -> bool {
        self.variances.windows(2).any(|w| w[0] == w[1])
    }

    pub fn with_flavor(mut self, flavor: Flavor) -> Self {
        self.flavor = flavor;
        self
    }

    /// Applies `permutation` (as produced by [`Spectrum::sorted`]) to a raw list.
    pub fn permute(values: &[f64], permutation: &[usize]) -> Vec<f64> {
        permutation.iter().map(|&p| values[p]).collect()
    }
}

/// A centered Gaussian `N(0, Σ)` together with `Σ = O diag(λ) Oᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    covariance: DMatrix<f64>,
    eigenvectors: DMatrix<f64>,
    eigenvalues: Spectrum,
}

impl GaussianModel {
    /// Decomposes a PSD covariance matrix.
    pub fn from_covariance(covariance: DMatrix<f64>) -> Result<Self> {
        eigh_desc(&covariance)
    }

    /// Diagonal model `diag(spectrum)` with `O = I`.
    pub fn diagonal(spectrum: &Spectrum) -> Self {
        let d = spectrum.dim();
        let covariance = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum.variances()));
        Self {
            covariance,
            eigenvectors: DMatrix::identity(d, d),
            eigenvalues: spectrum.clone(),
        }
    }

    /// Rotated model `O diag(spectrum) Oᵀ` for a given orthogonal `O`.
    pub fn rotated(spectrum: &Spectrum, basis: DMatrix<f64>) -> Result<Self> {
        let d = spectrum.dim();
        if basis.nrows() != d || basis.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: basis.nrows(),
            });
        }
        let ortho = basis.transpose() * &basis - DMatrix::<f64>::identity(d, d);
        if ortho.norm() > 1e-9 {
            return Err(Error::InvalidParameter {
                name: "basis",
                reason: "matrix is not orthogonal".into(),
            });
        }
        let covariance = linalg::SymmetricEigen {
            values: spectrum.variances().to_vec(),
            vectors: basis.clone(),
        }
        .reconstruct();
        Ok(Self {
            covariance: (&covariance + covariance.transpose()) * 0.5,
            eigenvectors: basis,
            eigenvalues: spectrum.clone(),
        })
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &Spectrum {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.dim()
    }

    pub fn with_flavor(mut self, flavor: Flavor) -> Self {
        self.eigenvalues.flavor = flavor;
        self
    }
}

/// Eigendecomposition of a symmetric PSD matrix into a [`GaussianModel`].
///
/// Eigenvalues are non-increasing; each eigenvector's largest-magnitude entry is
/// non-negative (lowest index on ties).
pub fn eigh_desc(m: &DMatrix<f64>) -> Result<GaussianModel> {
    let mut eig = symmetric_eigen_desc(m)?;
    clamp_psd_values(&mut eig.values)?;
    let eigenvalues = Spectrum::new(eig.values, Flavor::True)?;
    Ok(GaussianModel {
        covariance: (m + m.transpose()) * 0.5,
        eigenvectors: eig.vectors,
        eigenvalues,
    })
}

fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    let mut eig = symmetric_eigen_desc(m)?;
    clamp_psd_values(&mut eig.values)
}

/// Squared Fréchet distance between `N(0, s1)` and `N(0, s2)`:
/// `tr(s1 + s2 - 2 (s2^{1/2} s1 s2^{1/2})^{1/2})`.
pub fn frechet_sq_general(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    if s1.shape() != s2.shape() {
        return Err(Error::DimensionMismatch {
            expected: s1.nrows(),
            found: s2.nrows(),
        });
    }
    check_psd(s1)?;
    let root2 = linalg::sqrt_psd(s2)?;
    let inner = &root2 * s1 * &root2;
    let inner = (&inner + inner.transpose()) * 0.5;
    let mut eig = symmetric_eigen_desc(&inner)?;
    clamp_psd_values(&mut eig.values)?;
    let cross: f64 = eig.values.iter().map(|v| v.sqrt()).sum();
    Ok((s1.trace() + s2.trace() - 2.0 * cross).max(0.0))
}

/// Squared Fréchet distance with means: `‖μ1 - μ2‖² + frechet_sq_general(s1, s2)`.
pub fn frechet_sq_with_means(
    mu1: &DVector<f64>,
    s1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> Result<f64> {
    if mu1.len() != s1.nrows() || mu2.len() != s2.nrows() {
        return Err(Error::DimensionMismatch {
            expected: s1.nrows(),
            found: mu1.len(),
        });
    }
    Ok((mu1 - mu2).norm_squared() + frechet_sq_general(s1, s2)?)
}

/// Commuting (diagonal) case: `Σᵢ (√vᵢ - √wᵢ)²`.
pub fn frechet_sq_diag(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            found: w.len(),
        });
    }
    let mut total = 0.0;
    for (index, (&a, &b)) in v.iter().zip(w).enumerate() {
        for value in [a, b] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidVariance { index, value });
            }
        }
        let diff = a.sqrt() - b.sqrt();
        total += diff * diff;
    }
    Ok(total)
}

/// Covariance spectrum of `P_dᵀ P_d X_t` at forward time `t`: the first `d` components are
/// `a_t² + b_t² σ²`, the rest are zero. Equivalently the backward process at time `T - t`.
pub fn diffused_cov_diag<S: NoiseSchedule + ?Sized>(
    schedule: &S,
    t: f64,
    spectrum: &Spectrum,
    d: usize,
) -> Result<Spectrum> {
    let dim = spectrum.dim();
    if d == 0 || d > dim {
        return Err(Error::DimensionOutOfRange { d, max: dim });
    }
    check_time(schedule.horizon(), t)?;
    let (a2, b2) = (schedule.a2(t), schedule.b2(t));
    let variances = spectrum
        .variances()
        .iter()
        .enumerate()
        .map(|(j, &s2)| if j < d { a2 + b2 * s2 } else { 0.0 })
        .collect();
    Ok(Spectrum {
        variances,
        flavor: spectrum.flavor(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::make_ou_schedule;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    fn psd_from(entries: &[f64], n: usize) -> DMatrix<f64> {
        let b = DMatrix::from_row_slice(n, n, entries);
        &b * b.transpose()
    }

    fn orthogonal_from(entries: &[f64], n: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, entries).qr().q()
    }

    /// Independent route: nalgebra eigensolver, and the identity
    /// `tr((s2^{1/2} s1 s2^{1/2})^{1/2}) = Σ sqrt(eig(s1 s2))`.
    fn frechet_reference(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> f64 {
        let e2 = s2.clone().symmetric_eigen();
        let sqrt_vals = e2.eigenvalues.map(|v| v.max(0.0).sqrt());
        let root2 = &e2.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * e2.eigenvectors.transpose();
        let inner = &root2 * s1 * &root2;
        let inner = (&inner + inner.transpose()) * 0.5;
        let cross: f64 = inner.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
        s1.trace() + s2.trace() - 2.0 * cross
    }

    #[test]
    fn spectrum_ordering() {
        assert!(Spectrum::new(vec![3.0, 2.0, 2.0, 0.0], Flavor::True).is_ok());
        assert_eq!(
            Spectrum::new(vec![1.0, 2.0], Flavor::True),
            Err(Error::UnsortedSpectrum { index: 1 })
        );
        assert_eq!(Spectrum::new(vec![], Flavor::True), Err(Error::EmptySpectrum));
        assert!(Spectrum::new(vec![1.0, -0.1], Flavor::True).is_err());
        let s = Spectrum::sorted(vec![0.5, 2.0, 1.0], Flavor::Estimated).unwrap();
        assert_eq!(s.spectrum.variances(), &[2.0, 1.0, 0.5]);
        assert_eq!(s.permutation, vec![1, 2, 0]);
        assert!(!s.was_ordered);
        assert!(Spectrum::sorted(vec![2.0, 1.0], Flavor::True).unwrap().was_ordered);
    }

    #[test]
    fn frechet_trivial_values() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!(frechet_sq_general(&i3, &i3).unwrap().abs() < 1e-14);
        let i2 = DMatrix::<f64>::identity(2, 2);
        let d = frechet_sq_general(&i2, &(&i2 * 4.0)).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
        assert_eq!(frechet_sq_diag(&[1.0], &[4.0]).unwrap(), 1.0);
        assert_eq!(frechet_sq_diag(&[0.3, 2.0], &[0.3, 2.0]).unwrap(), 0.0);
        assert!(frechet_sq_diag(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn frechet_with_means_adds_mean_term() {
        let s = DMatrix::<f64>::identity(2, 2);
        let mu1 = DVector::from_vec(vec![1.0, 0.0]);
        let mu2 = DVector::from_vec(vec![0.0, 2.0]);
        assert!((frechet_sq_with_means(&mu1, &s, &mu2, &s).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_rejects_bad_input() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 0.0, 1.0]);
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(frechet_sq_general(&bad, &i2), Err(Error::NotSymmetric { .. })));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            frechet_sq_general(&indefinite, &i2),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        assert!(matches!(
            frechet_sq_general(&i2, &indefinite),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        assert!(frechet_sq_general(&i2, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn frechet_random_4x4_matches_reference() {
        let s1 = psd_from(&[0.3, -1.2, 0.5, 0.9, 1.1, 0.2, -0.7, 0.4, -0.5, 0.8, 1.3, -0.1, 0.6, 0.0, -0.9, 1.0], 4);
        let s2 = psd_from(&[1.4, 0.1, -0.3, 0.2, -0.6, 0.9, 0.5, -1.1, 0.7, 0.3, 0.2, 0.8, -0.2, 1.2, -0.4, 0.5], 4);
        let got = frechet_sq_general(&s1, &s2).unwrap();
        let reference = frechet_reference(&s1, &s2);
        assert!((got - reference).abs() < 1e-9, "{got} vs {reference}");
        assert!(got > 0.0);
    }

    #[test]
    fn diffused_covariance_examples() {
        let s = make_ou_schedule(2.0).unwrap();
        let spec = Spectrum::new(vec![2.0, 0.5, 0.1], Flavor::True).unwrap();
        let at0 = diffused_cov_diag(&s, 0.0, &spec, 3).unwrap();
        assert_eq!(at0.variances(), spec.variances());
        let two = Spectrum::new(vec![0.5, 0.2], Flavor::True).unwrap();
        let mid = diffused_cov_diag(&s, 2f64.ln() / 2.0, &two, 1).unwrap();
        assert!((mid.variances()[0] - 0.75).abs() < 1e-15);
        assert_eq!(mid.variances()[1], 0.0);
        let long = make_ou_schedule(40.0).unwrap();
        let far = diffused_cov_diag(&long, 40.0, &spec, 3).unwrap();
        assert!(far.variances().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(diffused_cov_diag(&s, 0.5, &spec, 0).is_err());
        assert!(diffused_cov_diag(&s, 0.5, &spec, 4).is_err());
        assert!(diffused_cov_diag(&s, 2.5, &spec, 1).is_err());
    }

    #[test]
    fn eigh_desc_examples() {
        let m = eigh_desc(&diag(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(m.eigenvalues().variances(), &[3.0, 2.0, 1.0]);
        let id = eigh_desc(&DMatrix::identity(5, 5)).unwrap();
        assert_eq!(id.eigenvectors(), &DMatrix::<f64>::identity(5, 5));
        let round_off = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-16]);
        assert!(eigh_desc(&round_off).is_ok());
    }

    proptest! {
        #[test]
        fn frechet_metric_properties(a in prop::collection::vec(-1.5f64..1.5, 9), b in prop::collection::vec(-1.5f64..1.5, 9)) {
            let s1 = psd_from(&a, 3);
            let s2 = psd_from(&b, 3);
            let d12 = frechet_sq_general(&s1, &s2).unwrap();
            let d21 = frechet_sq_general(&s2, &s1).unwrap();
            prop_assert!(d12 >= 0.0);
            prop_assert!((d12 - d21).abs() <= 1e-9 * (1.0 + s1.trace() + s2.trace()));
            prop_assert!(frechet_sq_general(&s1, &s1).unwrap() <= 1e-9 * (1.0 + s1.trace()));
            prop_assert!((d12 - frechet_reference(&s1, &s2)).abs() <= 1e-9 * (1.0 + s1.trace() + s2.trace()));
        }

        #[test]
        fn diag_agrees_with_general(v in prop::collection::vec(0.0f64..5.0, 6), w in prop::collection::vec(0.0f64..5.0, 6)) {
            let general = frechet_sq_general(&diag(&v), &diag(&w)).unwrap();
            let fast = frechet_sq_diag(&v, &w).unwrap();
            prop_assert!((general - fast).abs() <= 1e-9);
        }

        #[test]
        fn rotation_invariance(a in prop::collection::vec(-1.5f64..1.5, 16), b in prop::collection::vec(-1.5f64..1.5, 16), q in prop::collection::vec(-1.0f64..1.0, 16)) {
            let s1 = psd_from(&a, 4);
            let s2 = psd_from(&b, 4);
            let rot = orthogonal_from(&q, 4);
            let r1 = &rot * &s1 * rot.transpose();
            let r2 = &rot * &s2 * rot.transpose();
            let r1 = (&r1 + r1.transpose()) * 0.5;
            let r2 = (&r2 + r2.transpose()) * 0.5;
            let base = frechet_sq_general(&s1, &s2).unwrap();
            let rotated = frechet_sq_general(&r1, &r2).unwrap();
            prop_assert!((base - rotated).abs() <= 1e-8 * (1.0 + base));
        }

        #[test]
        fn eigh_reconstructs(a in prop::collection::vec(-2.0f64..2.0, 25)) {
            let m = psd_from(&a, 5);
            let model = eigh_desc(&m).unwrap();
            let rebuilt = linalg::SymmetricEigen {
                values: model.eigenvalues().variances().to_vec(),
                vectors: model.eigenvectors().clone(),
            }.reconstruct();
            prop_assert!((rebuilt - &m).norm() <= 1e-9 * m.norm().max(1.0));
            let ortho = model.eigenvectors().transpose() * model.eigenvectors() - DMatrix::<f64>::identity(5, 5);
            prop_assert!(ortho.norm() <= 1e-9);
        }

        #[test]
        fn diffusion_moves_toward_one(s2 in 0.0f64..4.0, t1 in 0.0f64..1.9, dt in 1e-3f64..0.1) {
            let s = make_ou_schedule(2.0).unwrap();
            let spec = Spectrum::new(vec![s2], Flavor::True).unwrap();
            let v1 = diffused_cov_diag(&s, t1, &spec, 1).unwrap().variances()[0];
            let v2 = diffused_cov_diag(&s, (t1 + dt).min(2.0), &spec, 1).unwrap().variances()[0];
            if s2 < 1.0 {
                prop_assert!(v1 <= v2 && v2 <= 1.0);
            } else {
                prop_assert!(v1 >= v2 && v2 >= 1.0);
            }
        }
    }
}
