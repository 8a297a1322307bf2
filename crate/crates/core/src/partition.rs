//! Time partitions of the backward process into intervals where a given latent dimension
//! is Fréchet-optimal, the monotonicity test for the distance curve, and the optimal
//! early-stopping offset for low-rank data.
//!
//! Times here are *backward* times `t ∈ [0, T]`: the backward process at time `t` has the
//! marginal of the forward process at `T - t`, so its noise level is `a²_{T-t}`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::gauss::Spectrum;
use crate::schedule::{check_time, NoiseSchedule};

/// Bisection tolerance in `a²`-space.
pub const ROOT_TOL: f64 = 1e-12;

/// Which family of boundaries a partition holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PartitionVariant {
    /// `t_d` from the true variances.
    Exact,
    /// `t̂_d` from true and estimated variances.
    Plugin,
    /// `T̂_d(u)`: start of the high-probability optimality interval of dimension `d`.
    RobustLower,
    /// `t̂_d(u)`: end of the high-probability optimality interval of dimension `d - 1`.
    RobustUpper,
}

impl PartitionVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Plugin => "plugin",
            Self::RobustLower => "robust-lower",
            Self::RobustUpper => "robust-upper",
        }
    }
}

/// Boundaries `t_1 = 0 ≤ t_2 ≤ … ≤ t_D ≤ t_{D+1} = T` (non-decreasing when `well_ordered`).
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition {
    boundaries: Vec<f64>,
    variant: PartitionVariant,
    u: Option<f64>,
    has_ties: bool,
    well_ordered: bool,
}

impl TimePartition {
    /// All `D + 1` boundaries; `boundaries()[d - 1]` is `t_d`.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// `t_d` for `d ∈ 1..=D+1`.
    pub fn boundary(&self, d: usize) -> f64 {
        self.boundaries[d - 1]
    }

    pub fn dim(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.boundaries[self.boundaries.len() - 1]
    }

    pub fn variant(&self) -> PartitionVariant {
        self.variant
    }

    pub fn u(&self) -> Option<f64> {
        self.u
    }

    /// Equal adjacent variances: some intervals are empty and the optimum is not unique.
    pub fn has_ties(&self) -> bool {
        self.has_ties
    }

    /// Whether the boundaries are non-decreasing.
    pub fn well_ordered(&self) -> bool {
        self.well_ordered
    }

    /// Writes `d,boundary_time,boundary_logsnr,variant,u` rows for every boundary.
    pub fn write_csv_rows<S, W>(&self, schedule: &S, w: &mut csv::Writer<W>) -> Result<()>
    where
        S: NoiseSchedule + ?Sized,
        W: Write,
    {
        let horizon = self.horizon();
        for (i, &t) in self.boundaries.iter().enumerate() {
            let forward = (horizon - t).max(0.0);
            let lam = if forward == 0.0 {
                f64::INFINITY
            } else {
                schedule.log_snr(forward)?
            };
            w.write_record([
                (i + 1).to_string(),
                fmt_f64(t),
                fmt_f64(lam),
                self.variant.as_str().to_string(),
                self.u.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
        Ok(())
    }
}

/// Header matching [`TimePartition::write_csv_rows`].
pub const PARTITION_CSV_HEADER: [&str; 5] = ["d", "boundary_time", "boundary_logsnr", "variant", "u"];

/// `num / (den)_+` with the conventions used for all boundary arguments: a non-positive
/// denominator yields `+∞`, `0` or `-∞` according to the sign of the numerator.
pub fn ratio_plus(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else if num < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

/// Backward time `T - ā⁻²(x)`.
fn boundary_from_a2<S: NoiseSchedule + ?Sized>(s: &S, x: f64) -> f64 {
    let horizon = s.horizon();
    (horizon - s.inv_a2(x)).clamp(0.0, horizon)
}

fn is_non_decreasing(b: &[f64]) -> bool {
    b.windows(2).all(|w| w[0] <= w[1])
}

fn assemble(
    horizon: f64,
    inner: impl Iterator<Item = f64>,
    variant: PartitionVariant,
    u: Option<f64>,
    has_ties: bool,
) -> TimePartition {
    let mut boundaries = vec![0.0];
    boundaries.extend(inner);
    boundaries.push(horizon);
    let well_ordered = is_non_decreasing(&boundaries);
    TimePartition {
        boundaries,
        variant,
        u,
        has_ties,
        well_ordered,
    }
}

fn check_same_dim(a: &Spectrum, b: &Spectrum) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// `t_d = T - ā⁻²(3σ_d² / (1 - σ_d²)_+)` for `d ≥ 2`, with `t_1 = 0`, `t_{D+1} = T`.
pub fn exact_partition<S: NoiseSchedule + ?Sized>(s: &S, spec: &Spectrum) -> TimePartition {
    let inner = spec.variances()[1..]
        .iter()
        .map(|&v| boundary_from_a2(s, ratio_plus(3.0 * v, 1.0 - v)));
    assemble(s.horizon(), inner, PartitionVariant::Exact, None, spec.has_ties())
}

/// `t̂_d = T - ā⁻²((4σ_d² - σ̂_d²) / (1 - σ̂_d²)_+)` for `d ≥ 2`.
pub fn plugin_partition<S: NoiseSchedule + ?Sized>(
    s: &S,
    true_spec: &Spectrum,
    est_spec: &Spectrum,
) -> Result<TimePartition> {
    check_same_dim(true_spec, est_spec)?;
    let inner = true_spec.variances()[1..]
        .iter()
        .zip(&est_spec.variances()[1..])
        .map(|(&v, &vh)| boundary_from_a2(s, ratio_plus(4.0 * v - vh, 1.0 - vh)));
    Ok(assemble(
        s.horizon(),
        inner,
        PartitionVariant::Plugin,
        None,
        true_spec.has_ties() || est_spec.has_ties(),
    ))
}

/// Value of the monotonicity sum and its verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monotonicity {
    pub sum: f64,
    /// `sum ≥ 0`: the projected distance is non-increasing in backward time.
    pub non_increasing: bool,
}

fn ratio_term(sigma: f64, sigma_hat: f64, index: usize) -> Result<f64> {
    if sigma_hat == 0.0 {
        if sigma == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::UndefinedRatio { index });
    }
    Ok(sigma / sigma_hat)
}

/// `Σ_{d' ≤ d} (1 - σ_{d'}/σ̂_{d'}) (1 - σ̂_{d'}²)`. A component with `σ = σ̂ = 0`
/// contributes `1`.
pub fn monotonicity_condition(
    true_spec: &Spectrum,
    est_spec: &Spectrum,
    d: usize,
) -> Result<Monotonicity> {
    check_same_dim(true_spec, est_spec)?;
    if d == 0 || d > true_spec.dim() {
        return Err(Error::DimensionOutOfRange {
            d,
            max: true_spec.dim(),
        });
    }
    let mut sum = 0.0;
    for j in 0..d {
        let vh = est_spec.variances()[j];
        let r = ratio_term(true_spec.variances()[j].sqrt(), vh.sqrt(), j + 1)?;
        sum += (1.0 - r) * (1.0 - vh);
    }
    Ok(Monotonicity {
        sum,
        non_increasing: sum >= 0.0,
    })
}

/// Optimal early-stopping offset `δ̂` for the projected backward process of dimension `d0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stopping {
    /// Forward time `δ̂`; stopping the backward process at `T - δ̂` minimizes the distance.
    pub delta: f64,
    /// Noise level `a²_δ̂` at the optimum.
    pub root_a2: f64,
    /// Derivative at `a_T²` is still negative, so `δ̂` was clamped to `T`.
    pub clamped: bool,
}

/// Root of `g(x) = Σ_{d' ≤ d0} (1 - σ_{d'}/√(σ̂_{d'}² + (1 - σ̂_{d'}²) x)) (1 - σ̂_{d'}²)` on
/// `[0, a_T²]`, mapped through `ā⁻²`. `sigma` holds the true standard deviations of the
/// first `d0` components (the rest of `est_spec` is ignored).
pub fn optimal_stopping_delta_general<S: NoiseSchedule + ?Sized>(
    s: &S,
    sigma: &[f64],
    est_spec: &Spectrum,
    d0: usize,
) -> Result<Stopping> {
    if d0 == 0 || d0 > est_spec.dim() {
        return Err(Error::DimensionOutOfRange {
            d: d0,
            max: est_spec.dim(),
        });
    }
    if sigma.len() != d0 {
        return Err(Error::DimensionMismatch {
            expected: d0,
            found: sigma.len(),
        });
    }
    for (index, &v) in sigma.iter().enumerate() {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidVariance {
                index,
                value: v,
            });
        }
    }
    let est = &est_spec.variances()[..d0];
    let mut g0 = 0.0;
    for (j, (&sg, &vh)) in sigma.iter().zip(est).enumerate() {
        g0 += (1.0 - ratio_term(sg, vh.sqrt(), j + 1)?) * (1.0 - vh);
    }
    if g0 >= 0.0 {
        return Ok(Stopping {
            delta: 0.0,
            root_a2: 0.0,
            clamped: false,
        });
    }
    let g = |x: f64| -> f64 {
        sigma
            .iter()
            .zip(est)
            .map(|(&sg, &vh)| {
                let v = vh + (1.0 - vh) * x;
                let r = if v > 0.0 { sg / v.sqrt() } else { 0.0 };
                (1.0 - r) * (1.0 - vh)
            })
            .sum()
    };
    let horizon = s.horizon();
    let a2_max = s.a2(horizon);
    if g(a2_max) < 0.0 {
        return Ok(Stopping {
            delta: horizon,
            root_a2: a2_max,
            clamped: true,
        });
    }
    let (mut lo, mut hi) = (0.0, a2_max);
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    Ok(Stopping {
        delta: s.inv_a2(root),
        root_a2: root,
        clamped: false,
    })
}

/// Isotropic case: true variance `σ²` on the first `d0` components, zero afterwards.
pub fn optimal_stopping_delta<S: NoiseSchedule + ?Sized>(
    s: &S,
    sigma: f64,
    est_spec: &Spectrum,
    d0: usize,
) -> Result<Stopping> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParameter {
            name: "sigma",
            reason: format!("must be positive, got {sigma}"),
        });
    }
    optimal_stopping_delta_general(s, &vec![sigma; d0.min(est_spec.dim())], est_spec, d0)
}

/// The pair of robust partitions `(T̂_d(u), t̂_d(u))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustPartitions {
    pub lower: TimePartition,
    pub upper: TimePartition,
    /// `0 = T̂_1 < t̂_2 < T̂_2 < … < t̂_D < T̂_D < T`.
    pub interleaved: bool,
}

/// Robust boundaries around the estimated spectrum for concentration radius `eps_u`.
///
/// `s_sigma` is `S(Σ)`, computed by the caller from whichever spectrum it trusts.
pub fn robust_partition<S: NoiseSchedule + ?Sized>(
    s: &S,
    est_spec: &Spectrum,
    s_sigma: f64,
    eps_u: f64,
    u: Option<f64>,
) -> Result<RobustPartitions> {
    if !(s_sigma.is_finite() && s_sigma >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "S",
            reason: format!("must be finite and non-negative, got {s_sigma}"),
        });
    }
    if !(eps_u.is_finite() && eps_u >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "eps_u",
            reason: format!("must be finite and non-negative, got {eps_u}"),
        });
    }
    let shift = 4.0 * s_sigma * eps_u;
    let est = est_spec.variances();
    for (j, &vh) in est.iter().enumerate() {
        if vh > 0.0 && vh - shift < 0.0 {
            return Err(Error::EpsilonTooLarge { index: j + 1 });
        }
    }
    let arg = |vh: f64, signed_shift: f64| -> f64 {
        let r = vh + signed_shift;
        let root = if vh > 0.0 { 2.0 * vh.sqrt() * r.max(0.0).sqrt() } else { 0.0 };
        ratio_plus(r + root, 1.0 - vh)
    };
    let lower_inner: Vec<f64> = est[1..]
        .iter()
        .map(|&vh| boundary_from_a2(s, arg(vh, -shift)))
        .collect();
    let upper_inner: Vec<f64> = est[1..]
        .iter()
        .map(|&vh| boundary_from_a2(s, arg(vh, shift)))
        .collect();
    let horizon = s.horizon();
    let ties = est_spec.has_ties();
    let lower = assemble(horizon, lower_inner.iter().copied(), PartitionVariant::RobustLower, u, ties);
    let upper = assemble(horizon, upper_inner.iter().copied(), PartitionVariant::RobustUpper, u, ties);

    let mut chain = vec![0.0];
    for (&t_up, &t_low) in upper_inner.iter().zip(&lower_inner) {
        chain.push(t_up);
        chain.push(t_low);
    }
    chain.push(horizon);
    let interleaved = chain.windows(2).all(|w| w[0] < w[1]);
    Ok(RobustPartitions {
        lower,
        upper,
        interleaved,
    })
}

/// The dimension owning backward time `t`: the largest `d` with `t_d ≤ t`.
///
/// For a well-ordered partition this is the `d` with `t ∈ [t_d, t_{d+1})`, and `D` at `t = T`.
pub fn optimal_dim_at(part: &TimePartition, t: f64) -> Result<usize> {
    check_time(part.horizon(), t)?;
    let d = (1..=part.dim()).rev().find(|&d| part.boundary(d) <= t).unwrap_or(1);
    Ok(d)
}

fn projected_frechet_sq_ab(
    true_spec: &Spectrum,
    est_spec: &Spectrum,
    d: usize,
    a2: f64,
    b2: f64,
) -> Result<f64> {
    check_same_dim(true_spec, est_spec)?;
    if d == 0 || d > true_spec.dim() {
        return Err(Error::DimensionOutOfRange {
            d,
            max: true_spec.dim(),
        });
    }
    let mut total = 0.0;
    for (j, (&v, &vh)) in true_spec.variances().iter().zip(est_spec.variances()).enumerate() {
        if j < d {
            let diff = (a2 + b2 * vh).sqrt() - v.sqrt();
            total += diff * diff;
        } else {
            total += v;
        }
    }
    Ok(total)
}

/// `d_F²` between `N(0, diag(σ²))` and the `d`-dimensional projected diffusion at noise
/// level `a2` (driven by the estimated spectrum).
pub fn projected_frechet_sq_at_a2(
    true_spec: &Spectrum,
    est_spec: &Spectrum,
    d: usize,
    a2: f64,
) -> Result<f64> {
    projected_frechet_sq_ab(true_spec, est_spec, d, a2, 1.0 - a2)
}

/// `d_F²(P_dᵀ P_d X̂_t, X_0)` at backward time `t`.
pub fn projected_frechet_sq<S: NoiseSchedule + ?Sized>(
    s: &S,
    true_spec: &Spectrum,
    est_spec: &Spectrum,
    d: usize,
    t: f64,
) -> Result<f64> {
    check_time(s.horizon(), t)?;
    let forward = s.horizon() - t;
    projected_frechet_sq_ab(true_spec, est_spec, d, s.a2(forward), s.b2(forward))
}

/// Exhaustive argmin over `d` of the closed-form distance at backward time `t`
/// (smallest `d` on ties), together with the full table of distances.
pub fn brute_force_optimal_dim<S: NoiseSchedule + ?Sized>(
    s: &S,
    true_spec: &Spectrum,
    est_spec: &Spectrum,
    t: f64,
) -> Result<(usize, Vec<f64>)> {
    let table = (1..=true_spec.dim())
        .map(|d| projected_frechet_sq(s, true_spec, est_spec, d, t))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, &v) in table.iter().enumerate() {
        if v < table[best] {
            best = i;
        }
    }
    Ok((best + 1, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::Flavor;
    use crate::schedule::make_ou_schedule;
    use proptest::prelude::*;

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec(), Flavor::True).unwrap()
    }

    fn est(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec(), Flavor::Estimated).unwrap()
    }

    #[test]
    fn division_convention() {
        assert_eq!(ratio_plus(1.0, 0.0), f64::INFINITY);
        assert_eq!(ratio_plus(0.0, -1.0), 0.0);
        assert_eq!(ratio_plus(-1.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(ratio_plus(1.0, 2.0), 0.5);
    }

    #[test]
    fn exact_partition_examples() {
        let s = make_ou_schedule(2.0).unwrap();
        let p = exact_partition(&s, &spec(&[1.0, 0.25, 0.1, 0.0]));
        assert_eq!(p.boundary(1), 0.0);
        assert_eq!(p.boundary(2), 0.0);
        let expected = 2.0 - 0.5 * 1.5f64.ln();
        assert!((p.boundary(3) - expected).abs() < 1e-14);
        assert!((p.boundary(3) - 1.7973).abs() < 1e-4);
        assert_eq!(p.boundary(4), 2.0);
        assert_eq!(p.boundary(5), 2.0);
        assert!(p.well_ordered());
        assert!(!p.has_ties());
        assert!(exact_partition(&s, &spec(&[0.5, 0.5])).has_ties());
    }

    #[test]
    fn plugin_partition_examples() {
        let s = make_ou_schedule(2.0).unwrap();
        let p = plugin_partition(&s, &spec(&[0.5, 0.3]), &est(&[0.5, 0.3])).unwrap();
        assert_eq!(p.boundary(2), 0.0);
        let p = plugin_partition(&s, &spec(&[1.0, 0.0]), &est(&[1.0, 0.0])).unwrap();
        assert_eq!(p.boundary(2), 2.0);
        let p = plugin_partition(&s, &spec(&[1.0, 0.1]), &est(&[1.0, 0.12])).unwrap();
        let expected = 2.0 + 0.5 * (-0.28f64 / 0.88).ln_1p();
        assert!((p.boundary(2) - expected).abs() < 1e-14);
        // 4σ² < σ̂² puts the boundary at T.
        let p = plugin_partition(&s, &spec(&[1.0, 0.01]), &est(&[1.0, 0.2])).unwrap();
        assert_eq!(p.boundary(2), 2.0);
        assert!(plugin_partition(&s, &spec(&[1.0]), &est(&[1.0, 0.2])).is_err());
    }

    #[test]
    fn monotonicity_examples() {
        let m = monotonicity_condition(&spec(&[0.3, 0.1]), &est(&[0.3, 0.1]), 2).unwrap();
        assert_eq!(m.sum, 0.0);
        assert!(m.non_increasing);
        let m = monotonicity_condition(&spec(&[0.25]), &est(&[0.2]), 1).unwrap();
        let expected = (1.0 - 0.5 / 0.2f64.sqrt()) * 0.8;
        assert!((m.sum - expected).abs() < 1e-15);
        assert!((m.sum + 0.0944).abs() < 1e-4);
        assert!(!m.non_increasing);
        let m = monotonicity_condition(&spec(&[0.3, 0.0, 0.0]), &est(&[0.3, 0.0, 0.0]), 3).unwrap();
        assert_eq!(m.sum, 2.0);
        assert_eq!(
            monotonicity_condition(&spec(&[0.3, 0.1]), &est(&[0.3, 0.0]), 2),
            Err(Error::UndefinedRatio { index: 2 })
        );
        assert!(monotonicity_condition(&spec(&[0.3, 0.1]), &est(&[0.3, 0.0]), 1).is_ok());
        assert!(monotonicity_condition(&spec(&[0.3]), &est(&[0.3]), 2).is_err());
    }

    #[test]
    fn stopping_examples() {
        let s = make_ou_schedule(2.0).unwrap();
        let r = optimal_stopping_delta(&s, 0.5, &est(&[0.25, 0.25, 0.0]), 2).unwrap();
        assert_eq!(r.delta, 0.0);
        let r = optimal_stopping_delta(&s, 0.5, &est(&[0.2]), 1).unwrap();
        assert!((r.root_a2 - 0.0625).abs() < 1e-11);
        let expected = -0.5 * (-0.0625f64).ln_1p();
        assert!((r.delta - expected).abs() < 1e-11);
        assert!((r.delta - 0.03227).abs() < 1e-5);
        assert!(!r.clamped);
        // Tiny horizon: the minimum lies past a_T².
        let short = make_ou_schedule(0.001).unwrap();
        let r = optimal_stopping_delta(&short, 0.5, &est(&[0.2]), 1).unwrap();
        assert!(r.clamped);
        assert_eq!(r.delta, 0.001);
        assert!(optimal_stopping_delta(&s, 0.0, &est(&[0.2]), 1).is_err());
        assert!(optimal_stopping_delta(&s, 0.5, &est(&[0.2]), 2).is_err());
    }

    #[test]
    fn robust_examples() {
        let s = make_ou_schedule(2.0).unwrap();
        let e = est(&[0.9, 0.5, 0.05]);
        let r = robust_partition(&s, &e, 3.0, 0.0, None).unwrap();
        assert_eq!(r.lower.variant(), PartitionVariant::RobustLower);
        assert_eq!(r.lower.boundaries(), r.upper.boundaries());
        let oracle = exact_partition(&s, &spec(e.variances()));
        for (a, b) in r.lower.boundaries().iter().zip(oracle.boundaries()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(!r.interleaved);

        let e = est(&[0.9, 0.5]);
        let r = robust_partition(&s, &e, 3.0, 0.01, Some(1.0)).unwrap();
        let lower_arg = (0.5 - 0.12 + 2.0 * 0.5f64.sqrt() * 0.38f64.sqrt()) / 0.5;
        let upper_arg = (0.5 + 0.12 + 2.0 * 0.5f64.sqrt() * 0.62f64.sqrt()) / 0.5;
        assert!((r.lower.boundary(2) - (2.0 - s.inv_a2(lower_arg))).abs() < 1e-14);
        assert!((r.upper.boundary(2) - (2.0 - s.inv_a2(upper_arg))).abs() < 1e-14);
        assert_eq!(r.lower.u(), Some(1.0));

        // σ̂ ≥ 1 sends both boundaries to 0.
        let r = robust_partition(&s, &est(&[2.0, 1.5]), 3.0, 0.01, None).unwrap();
        assert_eq!(r.lower.boundary(2), 0.0);
        assert_eq!(r.upper.boundary(2), 0.0);

        assert_eq!(
            robust_partition(&s, &est(&[0.9, 0.01]), 3.0, 0.01, None),
            Err(Error::EpsilonTooLarge { index: 2 })
        );
        let r = robust_partition(&s, &est(&[0.9, 0.5, 0.0]), 1.0, 0.001, None).unwrap();
        assert_eq!(r.lower.boundary(3), 2.0);
        assert!(r.upper.boundary(3) < 2.0);
    }

    #[test]
    fn interleaving_for_small_eps() {
        let s = make_ou_schedule(2.0).unwrap();
        let e = est(&[0.5, 0.2, 0.05, 0.01]);
        let r = robust_partition(&s, &e, 1.5, 1e-4, None).unwrap();
        assert!(r.interleaved);
        assert!(r.lower.well_ordered() && r.upper.well_ordered());
    }

    #[test]
    fn optimal_dim_examples() {
        let s = make_ou_schedule(2.0).unwrap();
        let sp = spec(&[0.5, 0.1, 0.01]);
        let p = exact_partition(&s, &sp);
        assert_eq!(optimal_dim_at(&p, 0.0).unwrap(), 1);
        assert_eq!(optimal_dim_at(&p, 2.0).unwrap(), 3);
        assert_eq!(optimal_dim_at(&p, 2.0 - 1e-12).unwrap(), 3);
        assert!(optimal_dim_at(&p, 2.1).is_err());
        // Several zero boundaries: the last of them owns t = 0.
        let p = exact_partition(&s, &spec(&[2.0, 0.5, 0.3, 0.01]));
        assert_eq!(optimal_dim_at(&p, 0.0).unwrap(), 3);
        let (bf, _) = brute_force_optimal_dim(&s, &spec(&[2.0, 0.5, 0.3, 0.01]), &spec(&[2.0, 0.5, 0.3, 0.01]), 0.0).unwrap();
        assert_eq!(bf, 3);
    }

    #[test]
    fn partition_csv() {
        let s = make_ou_schedule(2.0).unwrap();
        let p = exact_partition(&s, &spec(&[0.5, 0.1]));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(PARTITION_CSV_HEADER).unwrap();
        p.write_csv_rows(&s, &mut w).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "d,boundary_time,boundary_logsnr,variant,u");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("3,2,inf,exact,"));
    }

    fn spectrum_strategy(max_dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(1e-4f64..1.5, 1..=max_dim).prop_map(|mut v| {
            v.sort_by(|a, b| b.total_cmp(a));
            v
        })
    }

    proptest! {
        #[test]
        fn crossover_identity(v in spectrum_strategy(6)) {
            let s = make_ou_schedule(2.0).unwrap();
            let sp = spec(&v);
            let p = exact_partition(&s, &sp);
            for k in 0..1000 {
                let t = 2.0 * k as f64 / 999.0;
                for d in 2..=sp.dim() {
                    let delta = projected_frechet_sq(&s, &sp, &sp, d, t).unwrap()
                        - projected_frechet_sq(&s, &sp, &sp, d - 1, t).unwrap();
                    let x = s.a2(2.0 - t);
                    let xb = s.a2(2.0 - p.boundary(d));
                    if (x - xb).abs() > 1e-9 {
                        prop_assert_eq!(delta <= 0.0, t >= p.boundary(d), "d = {}, t = {}", d, t);
                    }
                }
            }
        }

        #[test]
        fn convex_in_a2(v in spectrum_strategy(5), noise in prop::collection::vec(0.5f64..1.5, 5)) {
            let sp = spec(&v);
            let mut vh: Vec<f64> = v.iter().zip(&noise).map(|(a, b)| a * b).collect();
            vh.sort_by(|a, b| b.total_cmp(a));
            let e = est(&vh);
            for d in 1..=sp.dim() {
                let f: Vec<f64> = (0..=400)
                    .map(|k| projected_frechet_sq_at_a2(&sp, &e, d, k as f64 / 400.0).unwrap())
                    .collect();
                for w in f.windows(3) {
                    prop_assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-12);
                }
            }
        }

        #[test]
        fn stopping_minimizes_curve(sigma2 in 0.01f64..0.24, ratios in prop::collection::vec(0.3f64..1.9, 1..4)) {
            let s = make_ou_schedule(2.0).unwrap();
            let d0 = ratios.len();
            let mut vh: Vec<f64> = ratios.iter().map(|r| r * sigma2).collect();
            vh.sort_by(|a, b| b.total_cmp(a));
            let e = est(&vh);
            let r = optimal_stopping_delta(&s, sigma2.sqrt(), &e, d0).unwrap();
            let sp = spec(&vec![sigma2; d0]);
            let best = projected_frechet_sq(&s, &sp, &e, d0, 2.0 - r.delta).unwrap();
            for k in 0..=2000 {
                let t = 2.0 * k as f64 / 2000.0;
                prop_assert!(best <= projected_frechet_sq(&s, &sp, &e, d0, t).unwrap() + 1e-12);
            }
        }

        #[test]
        fn robust_zero_eps_matches_exact(v in spectrum_strategy(6), sig in 0.1f64..10.0) {
            let s = make_ou_schedule(2.0).unwrap();
            let e = est(&v);
            let r = robust_partition(&s, &e, sig, 0.0, None).unwrap();
            let oracle = exact_partition(&s, &spec(&v));
            for ((a, b), c) in r.lower.boundaries().iter().zip(r.upper.boundaries()).zip(oracle.boundaries()) {
                prop_assert!((a - c).abs() <= 1e-10);
                prop_assert!((b - c).abs() <= 1e-10);
            }
        }
    }
}
