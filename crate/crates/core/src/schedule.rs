//! Variance-preserving noise schedules.
//!
//! A schedule is described by the signal-retention factor `b_t² = exp(-2∫₀ᵗ w_s² ds)`
//! and its complement `a_t² = 1 - b_t²`, on a finite horizon `[0, T]`. All times
//! here are *forward* diffusion times unless stated otherwise.

use crate::error::{Error, Result};

/// A variance-preserving schedule on `[0, T]`.
///
/// Implementors must guarantee `a2(0) = 0`, `a2` strictly increasing, and `a2(T) < 1`.
pub trait NoiseSchedule: Send + Sync {
    /// Final diffusion time `T`.
    fn horizon(&self) -> f64;

    /// Noise variance `a_t²`.
    fn a2(&self, t: f64) -> f64;

    /// Signal variance factor `b_t² = 1 - a_t²`.
    fn b2(&self, t: f64) -> f64 {
        1.0 - self.a2(t)
    }

    /// Squared rate `w_t²` driving the forward SDE `dX = -w² X dt + sqrt(2 w²) dW`.
    fn w2(&self, t: f64) -> f64;

    /// Whether this is the Ornstein-Uhlenbeck schedule (`w ≡ 1`).
    fn is_ou(&self) -> bool {
        false
    }

    /// Extended inverse of `a²`: `0` below zero, `T` above `a_T²` (including `+∞`).
    ///
    /// The default implementation bisects in time until the bracket collapses to
    /// machine precision.
    fn inv_a2(&self, x: f64) -> f64 {
        let horizon = self.horizon();
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= 0.0 {
            return 0.0;
        }
        if x >= self.a2(horizon) {
            return horizon;
        }
        let (mut lo, mut hi) = (0.0, horizon);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.a2(mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `ln(b_t² / a_t²)`, singular at `t = 0`.
    fn log_snr(&self, t: f64) -> Result<f64> {
        check_time(self.horizon(), t)?;
        if t == 0.0 {
            return Err(Error::SingularLogSnr);
        }
        Ok((self.b2(t) / self.a2(t)).ln())
    }

    /// Forward time whose log-SNR equals `lambda`, clamped to `[0, T]`.
    fn time_at_log_snr(&self, lambda: f64) -> f64 {
        // a² = 1 / (1 + e^λ)
        self.inv_a2(1.0 / (1.0 + lambda.exp()))
    }
}

pub(crate) fn check_time(horizon: f64, t: f64) -> Result<()> {
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::TimeOutOfRange { t, horizon });
    }
    Ok(())
}

/// The Ornstein-Uhlenbeck schedule: `w ≡ 1`, `a_t² = 1 - e^{-2t}`, `b_t² = e^{-2t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuSchedule {
    horizon: f64,
}

impl OuSchedule {
    pub fn new(horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "T",
                reason: format!("final time must be positive and finite, got {horizon}"),
            });
        }
        Ok(Self { horizon })
    }
}

/// Builds the Ornstein-Uhlenbeck schedule on `[0, horizon]`.
pub fn make_ou_schedule(horizon: f64) -> Result<OuSchedule> {
    OuSchedule::new(horizon)
}

impl NoiseSchedule for OuSchedule {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn a2(&self, t: f64) -> f64 {
        -(-2.0 * t).exp_m1()
    }

    fn b2(&self, t: f64) -> f64 {
        (-2.0 * t).exp()
    }

    fn w2(&self, _t: f64) -> f64 {
        1.0
    }

    fn is_ou(&self) -> bool {
        true
    }

    fn inv_a2(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= 0.0 {
            return 0.0;
        }
        if x >= self.a2(self.horizon) {
            return self.horizon;
        }
        (-0.5 * (-x).ln_1p()).clamp(0.0, self.horizon)
    }

    fn log_snr(&self, t: f64) -> Result<f64> {
        check_time(self.horizon, t)?;
        if t == 0.0 {
            return Err(Error::SingularLogSnr);
        }
        Ok(-(2.0 * t).exp_m1().ln())
    }

    fn time_at_log_snr(&self, lambda: f64) -> f64 {
        (0.5 * (-lambda).exp().ln_1p()).clamp(0.0, self.horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `w_t² = 2t`, so `b_t² = exp(-2t²)`; exercises the bisection inverse.
    struct QuadraticRate {
        horizon: f64,
    }

    impl NoiseSchedule for QuadraticRate {
        fn horizon(&self) -> f64 {
            self.horizon
        }
        fn a2(&self, t: f64) -> f64 {
            -(-2.0 * t * t).exp_m1()
        }
        fn w2(&self, t: f64) -> f64 {
            2.0 * t
        }
    }

    #[test]
    fn ou_values() {
        let s = make_ou_schedule(2.0).unwrap();
        assert_eq!(s.a2(0.0), 0.0);
        assert!((s.a2(2f64.ln() / 2.0) - 0.5).abs() < 1e-15);
        let expected = 1.0 - (-4.0f64).exp();
        assert!((s.a2(2.0) - expected).abs() < 1e-15);
        assert!((s.a2(2.0) - 0.981_684_361_1).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_horizon() {
        assert!(make_ou_schedule(0.0).is_err());
        assert!(make_ou_schedule(-1.0).is_err());
        assert!(make_ou_schedule(f64::NAN).is_err());
    }

    #[test]
    fn inverse_clamps() {
        let s = make_ou_schedule(2.0).unwrap();
        assert_eq!(s.inv_a2(-1.0), 0.0);
        assert_eq!(s.inv_a2(f64::INFINITY), 2.0);
        assert_eq!(s.inv_a2(0.99), 2.0);
        assert!((s.inv_a2(0.5) - 2f64.ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn log_snr_values() {
        let s = make_ou_schedule(2.0).unwrap();
        assert!(s.log_snr(2f64.ln() / 2.0).unwrap().abs() < 1e-14);
        assert_eq!(s.log_snr(0.0), Err(Error::SingularLogSnr));
        let e4 = (-4.0f64).exp();
        let expected = (e4 / (1.0 - e4)).ln();
        assert!((s.log_snr(2.0).unwrap() - expected).abs() < 1e-12);
        assert!((s.log_snr(2.0).unwrap() + 3.981_5).abs() < 1e-4);
        assert!(s.log_snr(1e-12).unwrap() > 20.0);
        assert!(s.log_snr(2.5).is_err());
    }

    #[test]
    fn log_snr_inverse() {
        let s = make_ou_schedule(2.0).unwrap();
        for &t in &[1e-4, 0.1, 0.7, 1.9] {
            let lam = s.log_snr(t).unwrap();
            assert!((s.time_at_log_snr(lam) - t).abs() < 1e-12);
        }
    }

    #[test]
    fn generic_bisection_inverse() {
        let s = QuadraticRate { horizon: 1.5 };
        for i in 0..=100 {
            let t = 1.5 * i as f64 / 100.0;
            assert!((s.inv_a2(s.a2(t)) - t).abs() < 1e-10, "t = {t}");
        }
        assert_eq!(s.inv_a2(-0.1), 0.0);
        assert_eq!(s.inv_a2(f64::INFINITY), 1.5);
        let lam = s.log_snr(0.8).unwrap();
        assert!((s.time_at_log_snr(lam) - 0.8).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn variance_preserving(t in 0.0f64..=2.0) {
            let s = make_ou_schedule(2.0).unwrap();
            prop_assert!((s.a2(t) + s.b2(t) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn round_trip(t in 0.0f64..=2.0) {
            let s = make_ou_schedule(2.0).unwrap();
            prop_assert!((s.inv_a2(s.a2(t)) - t).abs() <= 1e-10);
        }

        #[test]
        fn a2_monotone(t1 in 0.0f64..2.0, gap in 1e-9f64..1.0) {
            let s = make_ou_schedule(3.0).unwrap();
            prop_assert!(s.a2(t1) < s.a2(t1 + gap));
        }

        #[test]
        fn inverse_non_decreasing(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let s = make_ou_schedule(2.0).unwrap();
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(s.inv_a2(lo) <= s.inv_a2(hi));
            prop_assert!(s.inv_a2(hi) <= s.inv_a2(f64::INFINITY));
        }
    }
}
