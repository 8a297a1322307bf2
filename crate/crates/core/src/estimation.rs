//! Sampling from centered Gaussians, moment estimators, and concentration-bound helpers.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::gauss::{eigh_desc, Flavor, GaussianModel, SortedSpectrum, Spectrum};
use crate::rng::NormalStream;

const ROW_CHUNK: usize = 1024;

/// An `n × D` sample with one draw per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: DMatrix<f64>,
    seed: u64,
}

impl SampleSet {
    /// Wraps external data; `seed` is recorded as 0.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        Self::with_seed(data, 0)
    }

    fn with_seed(data: DMatrix<f64>, seed: u64) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::DegenerateSample {
                n: data.nrows(),
                dim: data.ncols(),
            });
        }
        Ok(Self { data, seed })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// The first `d` columns.
    pub fn leading_columns(&self, d: usize) -> Result<Self> {
        if d == 0 || d > self.dim() {
            return Err(Error::DimensionOutOfRange { d, max: self.dim() });
        }
        Self::with_seed(self.data.columns(0, d).into_owned(), self.seed)
    }

    /// Writes the sample as CSV with header `x1,...,xD`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((1..=self.dim()).map(|j| format!("x{j}")))?;
        for i in 0..self.n() {
            w.write_record(self.data.row(i).iter().map(|&v| fmt_f64(v)))?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    /// Reads a CSV written by [`SampleSet::write_csv`] (or any numeric CSV with a header row).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let dim = r.headers()?.len();
        let mut values = Vec::new();
        let mut n = 0;
        for record in r.records() {
            let record = record?;
            if record.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: record.len(),
                });
            }
            for field in record.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Csv(format!("not a number: {field:?}")))?;
                values.push(v);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::DegenerateSample { n, dim });
        }
        Self::from_matrix(DMatrix::from_row_slice(n, dim, &values))
    }
}

/// Draws `n` rows `O Λ^{1/2} z`, where row `i` uses the normal stream cell `(seed, i, 0)`.
pub fn sample_gaussian(model: &GaussianModel, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::DegenerateSample { n, dim: model.dim() });
    }
    let dim = model.dim();
    let stream = NormalStream::new(seed);
    let mut factor = model.eigenvectors().clone();
    for (j, v) in model.eigenvalues().variances().iter().enumerate() {
        factor.column_mut(j).scale_mut(v.sqrt());
    }
    let mut rows = vec![0.0; n * dim];
    rows.par_chunks_mut(ROW_CHUNK * dim)
        .enumerate()
        .for_each(|(chunk, block)| {
            let mut z = vec![0.0; dim];
            for (k, row) in block.chunks_mut(dim).enumerate() {
                let i = (chunk * ROW_CHUNK + k) as u64;
                stream.fill_normal(i, 0, &mut z);
                for (r, out) in row.iter_mut().enumerate() {
                    *out = (0..dim).map(|c| factor[(r, c)] * z[c]).sum();
                }
            }
        });
    SampleSet::with_seed(DMatrix::from_row_slice(n, dim, &rows), seed)
}

/// Per-component mean of squares `(1/n) Σ_i X_id²`, sorted non-increasingly.
pub fn empirical_variances(s: &SampleSet) -> SortedSpectrum {
    let n = s.n() as f64;
    let raw: Vec<f64> = s
        .data
        .column_iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>() / n)
        .collect();
    Spectrum::sorted(raw, Flavor::Estimated).expect("mean of squares is a valid spectrum")
}

/// `(1/n) XᵀX`, accumulated entrywise so a leading block never depends on later columns.
pub fn empirical_covariance_matrix(s: &SampleSet) -> DMatrix<f64> {
    let (n, dim) = (s.n(), s.dim());
    let mut cov = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..=i {
            let ci = s.data.column(i);
            let cj = s.data.column(j);
            let v = (0..n).map(|k| ci[k] * cj[k]).sum::<f64>() / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Empirical covariance, eigendecomposed.
pub fn empirical_covariance(s: &SampleSet) -> Result<GaussianModel> {
    Ok(eigh_desc(&empirical_covariance_matrix(s))?.with_flavor(Flavor::Estimated))
}

/// Sample mean (used only for diagnostics; all models here are centered).
pub fn sample_mean(s: &SampleSet) -> DVector<f64> {
    s.data.row_mean().transpose()
}

/// `ε_u = (8 C / 3) (√((D+u)/n) + (D+u)/n)`.
pub fn epsilon_u(n: usize, dim: usize, u: f64, c_univ: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "sample size must be at least 1".into(),
        });
    }
    if !(u.is_finite() && u >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "u",
            reason: format!("tail parameter must be finite and non-negative, got {u}"),
        });
    }
    if !(c_univ.is_finite() && c_univ > 0.0) {
        return Err(Error::InvalidParameter {
            name: "Cuniv",
            reason: format!("constant must be positive, got {c_univ}"),
        });
    }
    let r = (dim as f64 + u) / n as f64;
    Ok(8.0 * c_univ / 3.0 * (r.sqrt() + r))
}

/// `S(Σ) = Σ_d max(σ_d, σ_d²)`.
pub fn s_of_sigma(spec: &Spectrum) -> f64 {
    spec.variances().iter().map(|&v| v.sqrt().max(v)).sum()
}

/// `2 exp(-ε² n / (4 (ε + 1)))`: probability bound for a relative χ² deviation above `ε`.
pub fn chi2_deviation_bound(n: usize, eps: f64) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParameter {
            name: "eps",
            reason: format!("relative error must be positive, got {eps}"),
        });
    }
    Ok(2.0 * (-eps * eps * n as f64 / (4.0 * (eps + 1.0))).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_model(v: &[f64]) -> GaussianModel {
        GaussianModel::diagonal(&Spectrum::new(v.to_vec(), Flavor::True).unwrap())
    }

    #[test]
    fn zero_covariance_gives_zero_rows() {
        let s = sample_gaussian(&diag_model(&[0.0, 0.0]), 10, 3).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        assert!(sample_gaussian(&diag_model(&[1.0]), 0, 3).is_err());
    }

    #[test]
    fn same_seed_same_sample() {
        let m = diag_model(&[2.0, 1.0, 0.5]);
        let a = sample_gaussian(&m, 3000, 9).unwrap();
        let b = sample_gaussian(&m, 3000, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_gaussian(&m, 3000, 10).unwrap());
        // Larger samples extend smaller ones.
        let c = sample_gaussian(&m, 5000, 9).unwrap();
        assert_eq!(c.data().rows(0, 3000), a.data().rows(0, 3000));
    }

    #[test]
    fn empirical_variances_single_row() {
        let s = SampleSet::from_matrix(DMatrix::from_row_slice(1, 2, &[3.0, -1.0])).unwrap();
        let v = empirical_variances(&s);
        assert_eq!(v.spectrum.variances(), &[9.0, 1.0]);
        assert!(v.was_ordered);
        assert_eq!(v.spectrum.flavor(), Flavor::Estimated);
        let swapped = SampleSet::from_matrix(DMatrix::from_row_slice(1, 2, &[1.0, 3.0])).unwrap();
        let w = empirical_variances(&swapped);
        assert!(!w.was_ordered);
        assert_eq!(w.permutation, vec![1, 0]);
    }

    #[test]
    fn covariance_of_single_and_duplicated_rows() {
        let x = [1.0, -2.0, 0.5];
        let one = SampleSet::from_matrix(DMatrix::from_row_slice(1, 3, &x)).unwrap();
        let c1 = empirical_covariance_matrix(&one);
        let v = DVector::from_column_slice(&x);
        assert_eq!(c1, &v * v.transpose());
        let dup = SampleSet::from_matrix(DMatrix::from_row_slice(2, 3, &[x, x].concat())).unwrap();
        assert_eq!(empirical_covariance_matrix(&dup), c1);
        let m = empirical_covariance(&one).unwrap();
        assert!((m.eigenvalues().variances()[0] - 5.25).abs() < 1e-12);
    }

    #[test]
    fn epsilon_u_values() {
        // At n = 1e12 the bound is 1e-5 only up to D + u ≈ 14; it is 1.2e-5 at 20.
        assert!(epsilon_u(1_000_000_000_000, 10, 0.0, 1.0).unwrap() <= 1e-5);
        assert!(epsilon_u(1_000_000_000_000, 10, 10.0, 1.0).unwrap() <= 1.2e-5);
        assert!((epsilon_u(12, 10, 2.0, 1.0).unwrap() - 16.0 / 3.0).abs() < 1e-14);
        let r: f64 = (10.0 + 40f64.ln()) / 10_000.0;
        let expected = 8.0 / 3.0 * (r.sqrt() + r);
        let got = epsilon_u(10_000, 10, 40f64.ln(), 1.0).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.1023).abs() < 1e-4);
        assert!(epsilon_u(0, 1, 0.0, 1.0).is_err());
        assert!(epsilon_u(1, 1, -1.0, 1.0).is_err());
        assert!(epsilon_u(1, 1, 0.0, 0.0).is_err());
    }

    #[test]
    fn s_of_sigma_values() {
        let ones = Spectrum::new(vec![1.0; 4], Flavor::True).unwrap();
        assert_eq!(s_of_sigma(&ones), 4.0);
        let two = Spectrum::new(vec![4.0, 0.25], Flavor::True).unwrap();
        assert_eq!(s_of_sigma(&two), 4.5);
        let tiny = Spectrum::new(vec![1e-10, 4e-10], Flavor::True);
        assert!(tiny.is_err());
        let tiny = Spectrum::new(vec![4e-10, 1e-10], Flavor::True).unwrap();
        assert!((s_of_sigma(&tiny) - 3e-5).abs() < 1e-15);
    }

    #[test]
    fn chi2_bound_values() {
        assert!((chi2_deviation_bound(8, 1.0).unwrap() - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(chi2_deviation_bound(usize::MAX, 0.5).unwrap(), 0.0);
        let v = chi2_deviation_bound(10_000, 0.1).unwrap();
        assert!((v - 2.0 * (-100.0f64 / 4.4).exp()).abs() < 1e-22);
        assert!((v - 2.7e-10).abs() < 0.05e-10);
        assert!(chi2_deviation_bound(10, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = diag_model(&[3.0, 1e-7, 0.0]);
        let s = sample_gaussian(&m, 50, 4).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,x3\n"));
        let back = SampleSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.data(), s.data());
        assert_eq!(back.seed(), 0);
    }
}
