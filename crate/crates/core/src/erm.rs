//! Score matching over the capped diagonal class: the minimizer `m̂_d(t)`, the time at
//! which the cap starts binding, the terminal variance of the resulting backward process
//! (closed form and ODE), and the choice of latent dimension it induces.
//!
//! The backward process here starts from `N(0, I)` and runs for the full horizon.

use std::io::Write;

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::gauss::Spectrum;
use crate::schedule::{check_time, NoiseSchedule};

/// Steps used when the ODE stands in for the closed form on non-OU schedules.
pub const DEFAULT_ODE_STEPS: usize = 10_000;

/// Sup-norm cap `C > 1` on the diagonal score weights, or no cap at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cap {
    Finite(f64),
    Unbounded,
}

impl Cap {
    pub fn new(c: f64) -> Result<Self> {
        if c == f64::INFINITY {
            return Ok(Self::Unbounded);
        }
        if !(c.is_finite() && c > 1.0) {
            return Err(Error::InvalidParameter {
                name: "C",
                reason: format!("cap must exceed 1, got {c}"),
            });
        }
        Ok(Self::Finite(c))
    }

    /// `C`, with `+∞` for [`Cap::Unbounded`].
    pub fn value(self) -> f64 {
        match self {
            Self::Finite(c) => c,
            Self::Unbounded => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Cap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Finite(c) => f.write_str(&fmt_f64(*c)),
            Self::Unbounded => f.write_str("inf"),
        }
    }
}

/// Backward time `t'` after which the cap binds: the solution of
/// `C = 1/(a²_{T-t'} + b²_{T-t'} σ̂²)` when `C < 1/σ̂²`, else `T`.
pub fn t_prime<S: NoiseSchedule + ?Sized>(cap: Cap, sigma_hat_sq: f64, s: &S) -> f64 {
    let horizon = s.horizon();
    match cap {
        Cap::Finite(c) if c * sigma_hat_sq < 1.0 => {
            let x = (1.0 / c - sigma_hat_sq) / (1.0 - sigma_hat_sq);
            (horizon - s.inv_a2(x)).clamp(0.0, horizon)
        }
        _ => horizon,
    }
}

/// The empirical-risk minimizer over the capped class for a fixed estimated spectrum.
#[derive(Debug, Clone)]
pub struct ConstrainedScore<S: NoiseSchedule> {
    cap: Cap,
    est_spec: Spectrum,
    schedule: S,
    t_prime: Vec<f64>,
}

impl<S: NoiseSchedule> ConstrainedScore<S> {
    pub fn new(schedule: S, est_spec: Spectrum, cap: Cap) -> Self {
        let t_prime = est_spec
            .variances()
            .iter()
            .map(|&v| t_prime(cap, v, &schedule))
            .collect();
        Self {
            cap,
            est_spec,
            schedule,
            t_prime,
        }
    }

    pub fn cap(&self) -> Cap {
        self.cap
    }

    pub fn est_spec(&self) -> &Spectrum {
        &self.est_spec
    }

    pub fn schedule(&self) -> &S {
        &self.schedule
    }

    pub fn horizon(&self) -> f64 {
        self.schedule.horizon()
    }

    pub fn dim(&self) -> usize {
        self.est_spec.dim()
    }

    /// `t'_d` for every component.
    pub fn t_primes(&self) -> &[f64] {
        &self.t_prime
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d == 0 || d > self.dim() {
            return Err(Error::DimensionOutOfRange { d, max: self.dim() });
        }
        Ok(())
    }

    fn m_hat_unchecked(&self, d: usize, t: f64) -> f64 {
        let vh = self.est_spec.variances()[d - 1];
        let m = 1.0 / (self.schedule.a2(t) + self.schedule.b2(t) * vh);
        m.min(self.cap.value())
    }

    /// `m̂_d(t) = min(C, 1/(a_t² + b_t² σ̂_d²))` at forward time `t`.
    pub fn m_hat(&self, d: usize, t: f64) -> Result<f64> {
        self.check_dim(d)?;
        check_time(self.horizon(), t)?;
        Ok(self.m_hat_unchecked(d, t))
    }

    /// `V_{T,dd}` in closed form (OU only).
    pub fn terminal_variance_closed(&self, d: usize) -> Result<f64> {
        self.check_dim(d)?;
        if !self.schedule.is_ou() {
            return Err(Error::UnsupportedSchedule(
                "closed-form terminal variance requires the Ornstein-Uhlenbeck schedule",
            ));
        }
        let horizon = self.horizon();
        let vh = self.est_spec.variances()[d - 1];
        let k = 1.0 - vh;
        let e2t = (-2.0 * horizon).exp();
        let tp = self.t_prime[d - 1];
        if tp >= horizon {
            let num = 1.0 - 2.0 * k * e2t + k * e2t * e2t;
            let den = 1.0 - 2.0 * k * e2t + k * k * e2t * e2t;
            return Ok(vh * num / den);
        }
        let c = self.cap.value();
        let span = horizon - tp;
        let decay = ((2.0 - 4.0 * c) * span).exp();
        let first = -((2.0 - 4.0 * c) * span).exp_m1() / (2.0 * c - 1.0);
        let denom = 1.0 - k * e2t;
        let ratio = (1.0 - k * (-2.0 * span).exp()) / denom;
        let tail = (1.0 - 2.0 * k * e2t + k * (-2.0 * (horizon + tp)).exp()) / denom;
        Ok(first + decay * ratio * tail)
    }

    /// RK4 path of `dV/dt = 2w²(1 - 2m̂_d(T-t))V + 2w²`, `V_0 = 1`, in backward time, with
    /// `t'_d` as a grid breakpoint. Returns `(t, V_t)` at every grid node.
    pub fn variance_path(&self, d: usize, steps: usize) -> Result<Vec<(f64, f64)>> {
        self.check_dim(d)?;
        if steps == 0 {
            return Err(Error::InvalidParameter {
                name: "steps",
                reason: "need at least one step".into(),
            });
        }
        let horizon = self.horizon();
        let tp = self.t_prime[d - 1];
        let segments: Vec<(f64, f64, usize)> = if tp > 0.0 && tp < horizon {
            let first = ((steps as f64 * tp / horizon).round() as usize).clamp(1, steps.max(2) - 1);
            vec![(0.0, tp, first), (tp, horizon, steps.max(2) - first)]
        } else {
            vec![(0.0, horizon, steps)]
        };
        let rhs = |t: f64, v: f64| -> f64 {
            let forward = (horizon - t).clamp(0.0, horizon);
            let w2 = self.schedule.w2(forward);
            2.0 * w2 * (1.0 - 2.0 * self.m_hat_unchecked(d, forward)) * v + 2.0 * w2
        };
        let mut path = Vec::with_capacity(steps + 1);
        let mut v = 1.0;
        path.push((0.0, v));
        for (start, end, n) in segments {
            let h = (end - start) / n as f64;
            for i in 0..n {
                let t = start + i as f64 * h;
                let k1 = rhs(t, v);
                let k2 = rhs(t + 0.5 * h, v + 0.5 * h * k1);
                let k3 = rhs(t + 0.5 * h, v + 0.5 * h * k2);
                let k4 = rhs(t + h, v + h * k3);
                v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                let t_next = if i + 1 == n { end } else { start + (i + 1) as f64 * h };
                path.push((t_next, v));
            }
        }
        Ok(path)
    }

    /// `V_{T,dd}` by RK4 with `steps` fixed steps.
    pub fn variance_ode_numeric(&self, d: usize, steps: usize) -> Result<f64> {
        Ok(self.variance_path(d, steps)?.last().expect("non-empty path").1)
    }

    /// Closed form on OU, ODE with [`DEFAULT_ODE_STEPS`] otherwise.
    pub fn terminal_variance(&self, d: usize) -> Result<f64> {
        if self.schedule.is_ou() {
            self.terminal_variance_closed(d)
        } else {
            self.variance_ode_numeric(d, DEFAULT_ODE_STEPS)
        }
    }
}

/// `d₁ = max{d : 1/C ≤ σ̂_d²}` (1 if empty) and `d₂ = min{d : 1/(2C-1) ≥ 4σ_d²}` (D if empty).
pub fn d1_d2(true_spec: &Spectrum, est_spec: &Spectrum, cap: Cap) -> Result<(usize, usize)> {
    if true_spec.dim() != est_spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: true_spec.dim(),
            found: est_spec.dim(),
        });
    }
    let (inv_c, inv_2c1) = match cap {
        Cap::Finite(c) => (1.0 / c, 1.0 / (2.0 * c - 1.0)),
        Cap::Unbounded => (0.0, 0.0),
    };
    let d1 = est_spec
        .variances()
        .iter()
        .rposition(|&vh| inv_c <= vh)
        .map_or(1, |i| i + 1);
    let d2 = true_spec
        .variances()
        .iter()
        .position(|&v| inv_2c1 >= 4.0 * v)
        .map_or(true_spec.dim(), |i| i + 1);
    Ok((d1, d2))
}

/// Outcome of the exhaustive search over projection dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DminSearch {
    /// Smallest minimizer of the terminal distance.
    pub d_min: usize,
    /// `V_{T,dd}` for every component.
    pub terminal_variances: Vec<f64>,
    /// `frechet_sq[d - 1]` is `d_F²(P_dᵀ P_d X̃_T, X_0)`.
    pub frechet_sq: Vec<f64>,
}

/// Header matching [`DminSearch::write_csv_rows`].
pub const DMIN_CSV_HEADER: [&str; 5] = ["C", "d", "sqrt_v", "sigma", "frechet_sq"];

impl DminSearch {
    /// One row per `d`: `C, d, √V_{T,dd}, σ_d, d_F²(P_d)`.
    pub fn write_csv_rows<W: Write>(
        &self,
        cap: Cap,
        true_spec: &Spectrum,
        w: &mut csv::Writer<W>,
    ) -> Result<()> {
        for (i, (v, f)) in self.terminal_variances.iter().zip(&self.frechet_sq).enumerate() {
            w.write_record([
                cap.to_string(),
                (i + 1).to_string(),
                fmt_f64(v.sqrt()),
                fmt_f64(true_spec.variances()[i].sqrt()),
                fmt_f64(*f),
            ])?;
        }
        Ok(())
    }
}

/// Evaluates `d_F² = Σ_{j≤d} (√V_{T,jj} - σ_j)² + Σ_{j>d} σ_j²` for every `d`.
pub fn d_min_search<S: NoiseSchedule>(
    cs: &ConstrainedScore<S>,
    true_spec: &Spectrum,
) -> Result<DminSearch> {
    if true_spec.dim() != cs.dim() {
        return Err(Error::DimensionMismatch {
            expected: cs.dim(),
            found: true_spec.dim(),
        });
    }
    let terminal_variances = (1..=cs.dim())
        .map(|d| cs.terminal_variance(d))
        .collect::<Result<Vec<_>>>()?;
    let sigma2 = true_spec.variances();
    let tail_total: f64 = sigma2.iter().sum();
    let mut frechet_sq = Vec::with_capacity(cs.dim());
    let mut head = 0.0;
    let mut tail = tail_total;
    for (v, &s2) in terminal_variances.iter().zip(sigma2) {
        let diff = v.sqrt() - s2.sqrt();
        head += diff * diff;
        tail -= s2;
        frechet_sq.push(head + tail.max(0.0));
    }
    let mut best = 0;
    for (i, &f) in frechet_sq.iter().enumerate() {
        if f < frechet_sq[best] {
            best = i;
        }
    }
    Ok(DminSearch {
        d_min: best + 1,
        terminal_variances,
        frechet_sq,
    })
}
