//! Monte-Carlo simulation of the forward diffusion and of the projected backward
//! diffusions driven by exact, plug-in or capped linear scores.
//!
//! Integration is Euler-Maruyama on a fixed grid `t_k = k T / K`, refined so that every
//! snapshot time and the stop time are grid nodes. Trajectory `i` draws its noise for grid
//! interval `k` from stream cell `(seed, i, k + 1)`; cell `(seed, i, 0)` is the initial
//! draw. Work is split into fixed chunks of trajectories and partial sums are combined
//! in chunk order, so results do not depend on the number of threads.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::erm::Cap;
use crate::error::{Error, Result};
use crate::estimation::{empirical_covariance_matrix, SampleSet};
use crate::format::fmt_f64;
use crate::gauss::{frechet_sq_general, GaussianModel, Spectrum};
use crate::rng::NormalStream;
use crate::schedule::NoiseSchedule;

const CHUNK: usize = 1024;
/// Grid nodes closer than this (relative to `T`) are merged.
const MESH_MERGE_TOL: f64 = 1e-12;
/// RK4 steps per unit time for analytic snapshot variances without a closed form.
const ANALYTIC_RK4_DENSITY: f64 = 20_000.0;

/// Which linear score drives the backward process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreKind {
    /// `-(a² + b² σ²)⁻¹ x` with the true spectrum.
    Exact,
    /// `-(a² + b² σ̂²)⁻¹ x` with the estimated spectrum.
    Plugin,
    /// `-min(C, (a² + b² σ̂²)⁻¹) x`.
    Capped(Cap),
}

/// Basis in which the first `d` coordinates are kept.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    /// Coordinate axes (`P_d`).
    Axis,
    /// Columns of an orthogonal matrix (`O P_dᵀ`).
    Eigen(DMatrix<f64>),
}

/// Law of the backward process at time 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitLaw {
    /// `N(0, a_T² I + b_T² diag(s²))` for the spectrum `s` driving the score.
    Matched,
    /// `N(0, I)`.
    StandardGaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number `K` of uniform grid steps on `[0, T]`.
    pub steps: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub score: ScoreKind,
    pub projection_dim: usize,
    pub basis: Basis,
    /// Backward time at which integration stops.
    pub stop_time: f64,
    pub init: InitLaw,
    /// Sample the exact Gaussian transition instead of an Euler-Maruyama step
    /// (OU with exact or plug-in score only).
    pub exact_transitions: bool,
    /// Times at which second moments are recorded (backward times for the backward pass,
    /// forward times for the forward pass).
    pub snapshot_times: Vec<f64>,
}

impl SimConfig {
    /// Plug-in score on the coordinate axes, matched initial law, Euler-Maruyama.
    pub fn new(steps: usize, trajectories: usize, seed: u64, projection_dim: usize, stop_time: f64) -> Self {
        Self {
            steps,
            trajectories,
            seed,
            score: ScoreKind::Plugin,
            projection_dim,
            basis: Basis::Axis,
            stop_time,
            init: InitLaw::Matched,
            exact_transitions: false,
            snapshot_times: Vec::new(),
        }
    }

    fn validate(&self, horizon: f64, dim: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter {
                name: "steps",
                reason: "need at least one step".into(),
            });
        }
        if self.trajectories == 0 {
            return Err(Error::InvalidParameter {
                name: "trajectories",
                reason: "need at least one trajectory".into(),
            });
        }
        if self.projection_dim == 0 || self.projection_dim > dim {
            return Err(Error::DimensionOutOfRange {
                d: self.projection_dim,
                max: dim,
            });
        }
        if !(0.0..=horizon).contains(&self.stop_time) {
            return Err(Error::TimeOutOfRange {
                t: self.stop_time,
                horizon,
            });
        }
        for &t in &self.snapshot_times {
            if !(0.0..=horizon).contains(&t) {
                return Err(Error::TimeOutOfRange { t, horizon });
            }
        }
        if let Basis::Eigen(o) = &self.basis {
            if o.nrows() != dim || o.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: o.nrows(),
                });
            }
        }
        Ok(())
    }
}

/// Second moments of the simulated state at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    /// `(1/N) Σ_i y_i y_iᵀ` in the simulated (latent or ambient) coordinates.
    pub second_moment: DMatrix<f64>,
    /// Continuous-time variance of each coordinate.
    pub analytic_variance: Vec<f64>,
    pub trajectories: usize,
}

impl Snapshot {
    pub fn empirical_variances(&self) -> Vec<f64> {
        self.second_moment.diagonal().iter().copied().collect()
    }

    /// Standard error `√(2/N) v` of a Gaussian second-moment estimate.
    pub fn stderr(&self) -> Vec<f64> {
        let f = (2.0 / self.trajectories as f64).sqrt();
        self.analytic_variance.iter().map(|v| f * v).collect()
    }

    /// Covariance mapped to ambient coordinates through a `D × d` embedding.
    pub fn ambient_covariance(&self, embedding: &DMatrix<f64>) -> DMatrix<f64> {
        let c = embedding * &self.second_moment * embedding.transpose();
        (&c + c.transpose()) * 0.5
    }
}

/// Output of a simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    /// Final states in ambient coordinates.
    pub samples: SampleSet,
    pub snapshots: Vec<Snapshot>,
    /// `D × d` map from simulated to ambient coordinates.
    pub embedding: DMatrix<f64>,
}

/// Header matching [`write_snapshot_csv`].
pub const SNAPSHOT_CSV_HEADER: [&str; 5] = ["t", "component", "empirical_variance", "analytic_variance", "stderr"];

/// One row per (snapshot, coordinate).
pub fn write_snapshot_rows<W: Write>(snapshots: &[Snapshot], w: &mut csv::Writer<W>) -> Result<()> {
    for snap in snapshots {
        let emp = snap.empirical_variances();
        let se = snap.stderr();
        for j in 0..emp.len() {
            w.write_record([
                fmt_f64(snap.t),
                (j + 1).to_string(),
                fmt_f64(emp[j]),
                fmt_f64(snap.analytic_variance[j]),
                fmt_f64(se[j]),
            ])?;
        }
    }
    Ok(())
}

/// Writes a complete snapshot CSV including the header.
pub fn write_snapshot_csv<W: Write>(snapshots: &[Snapshot], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SNAPSHOT_CSV_HEADER)?;
    write_snapshot_rows(snapshots, &mut w)?;
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

/// `d_F²` between a Gaussian fitted to the samples (second moments, zero mean) and `target`.
pub fn empirical_frechet(samples: &SampleSet, target: &GaussianModel) -> Result<f64> {
    if samples.n() <= samples.dim() {
        return Err(Error::DegenerateSample {
            n: samples.n(),
            dim: samples.dim(),
        });
    }
    frechet_sq_general(&empirical_covariance_matrix(samples), target.covariance())
}

/// Grid nodes `k T / K` up to `stop`, plus `extra` times, sorted and merged.
fn build_mesh(horizon: f64, steps: usize, stop: f64, extra: &[f64]) -> Vec<f64> {
    let h = horizon / steps as f64;
    let mut nodes: Vec<f64> = (0..=steps)
        .map(|k| if k == steps { horizon } else { k as f64 * h })
        .filter(|&t| t <= stop)
        .collect();
    nodes.push(stop);
    nodes.extend(extra.iter().copied().filter(|&t| t <= stop));
    nodes.sort_by(f64::total_cmp);
    let tol = MESH_MERGE_TOL * horizon;
    let mut merged: Vec<f64> = Vec::with_capacity(nodes.len());
    for t in nodes {
        match merged.last() {
            Some(&last) if t - last <= tol => {}
            _ => merged.push(t),
        }
    }
    merged
}

/// Index of the mesh node matching each snapshot time.
fn snapshot_nodes(mesh: &[f64], times: &[f64], horizon: f64) -> Vec<usize> {
    let tol = MESH_MERGE_TOL * horizon;
    times
        .iter()
        .map(|&t| {
            mesh.iter()
                .position(|&m| (m - t).abs() <= tol)
                .unwrap_or(mesh.len() - 1)
        })
        .collect()
}

/// Per-interval linear update `y ← a_j y + b_j z` for each coordinate.
struct Stepper {
    a: Vec<f64>,
    b: Vec<f64>,
    dim: usize,
}

impl Stepper {
    fn intervals(&self) -> usize {
        self.a.len() / self.dim
    }
}

/// Runs `trajectories` independent linear recursions and gathers snapshots and final states.
fn run_linear<F>(
    trajectories: usize,
    seed: u64,
    stepper: &Stepper,
    init: F,
    snap_nodes: &[usize],
) -> (Vec<f64>, Vec<DMatrix<f64>>)
where
    F: Fn(u64, &NormalStream, &mut [f64]) + Sync,
{
    let dim = stepper.dim;
    let stream = NormalStream::new(seed);
    let n_int = stepper.intervals();
    let mut finals = vec![0.0; trajectories * dim];
    let partials: Vec<Vec<DMatrix<f64>>> = finals
        .par_chunks_mut(CHUNK * dim)
        .enumerate()
        .map(|(chunk, out)| {
            let first = chunk * CHUNK;
            let count = out.len() / dim;
            let mut state = vec![0.0; count * dim];
            for (k, row) in state.chunks_mut(dim).enumerate() {
                init((first + k) as u64, &stream, row);
            }
            let mut moments = vec![DMatrix::<f64>::zeros(dim, dim); snap_nodes.len()];
            let mut z = vec![0.0; dim];
            let accumulate = |node: usize, state: &[f64], moments: &mut Vec<DMatrix<f64>>| {
                for (s, &sn) in snap_nodes.iter().enumerate() {
                    if sn == node {
                        let m = &mut moments[s];
                        for row in state.chunks(dim) {
                            for i in 0..dim {
                                for j in 0..=i {
                                    m[(i, j)] += row[i] * row[j];
                                }
                            }
                        }
                    }
                }
            };
            accumulate(0, &state, &mut moments);
            for interval in 0..n_int {
                let a = &stepper.a[interval * dim..(interval + 1) * dim];
                let b = &stepper.b[interval * dim..(interval + 1) * dim];
                for (k, row) in state.chunks_mut(dim).enumerate() {
                    stream.fill_normal((first + k) as u64, interval as u32 + 1, &mut z);
                    for j in 0..dim {
                        row[j] = a[j] * row[j] + b[j] * z[j];
                    }
                }
                accumulate(interval + 1, &state, &mut moments);
            }
            out.copy_from_slice(&state);
            moments
        })
        .collect();
    let mut totals = vec![DMatrix::<f64>::zeros(dim, dim); snap_nodes.len()];
    for chunk in partials {
        for (t, p) in totals.iter_mut().zip(chunk) {
            *t += p;
        }
    }
    for m in totals.iter_mut() {
        for i in 0..dim {
            for j in 0..i {
                m[(j, i)] = m[(i, j)];
            }
        }
        *m /= trajectories as f64;
    }
    (finals, totals)
}

/// Forward SDE `dX = -w² X dt + √(2w²) dW` on `[0, T]` in ambient coordinates.
///
/// `cfg.snapshot_times` are forward times; `score`, `basis`, `projection_dim`,
/// `stop_time` and `init` are ignored. Analytic variances are conditional on `init`:
/// `a_t² + b_t² (1/N) Σ_i x_{0,i}²`.
pub fn simulate_forward<S: NoiseSchedule + ?Sized>(
    cfg: &SimConfig,
    schedule: &S,
    init: &SampleSet,
) -> Result<SimRun> {
    let horizon = schedule.horizon();
    let dim = init.dim();
    let checked = SimConfig {
        projection_dim: dim,
        stop_time: horizon,
        trajectories: init.n(),
        ..cfg.clone()
    };
    checked.validate(horizon, dim)?;
    let mesh = build_mesh(horizon, cfg.steps, horizon, &cfg.snapshot_times);
    let mut a = Vec::with_capacity((mesh.len() - 1) * dim);
    let mut b = Vec::with_capacity((mesh.len() - 1) * dim);
    for w in mesh.windows(2) {
        let h = w[1] - w[0];
        let w2 = schedule.w2(w[0]);
        for _ in 0..dim {
            a.push(1.0 - w2 * h);
            b.push((2.0 * w2 * h).sqrt());
        }
    }
    let stepper = Stepper { a, b, dim };
    let snap_nodes = snapshot_nodes(&mesh, &cfg.snapshot_times, horizon);
    let data = init.data();
    let (finals, moments) = run_linear(
        init.n(),
        cfg.seed,
        &stepper,
        |i, _, row| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = data[(i as usize, j)];
            }
        },
        &snap_nodes,
    );
    let n = init.n() as f64;
    let init_moments: Vec<f64> = data
        .column_iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>() / n)
        .collect();
    let snapshots = cfg
        .snapshot_times
        .iter()
        .zip(moments)
        .map(|(&t, second_moment)| Snapshot {
            t,
            second_moment,
            analytic_variance: init_moments
                .iter()
                .map(|m0| schedule.a2(t) + schedule.b2(t) * m0)
                .collect(),
            trajectories: init.n(),
        })
        .collect();
    Ok(SimRun {
        samples: SampleSet::from_matrix(DMatrix::from_row_slice(init.n(), dim, &finals))?,
        snapshots,
        embedding: DMatrix::identity(dim, dim),
    })
}

/// Score weight `m(τ)` at forward time `τ` for a component with variance `s2`.
fn score_weight<S: NoiseSchedule + ?Sized>(schedule: &S, kind: ScoreKind, s2: f64, tau: f64) -> f64 {
    let m = 1.0 / (schedule.a2(tau) + schedule.b2(tau) * s2);
    match kind {
        ScoreKind::Capped(cap) => m.min(cap.value()),
        _ => m,
    }
}

/// Continuous-time variance at backward time `t` of one latent coordinate.
fn analytic_backward_variance<S: NoiseSchedule + ?Sized>(
    schedule: &S,
    kind: ScoreKind,
    init: InitLaw,
    s2: f64,
    t: f64,
) -> f64 {
    let horizon = schedule.horizon();
    let marginal = |tau: f64| schedule.a2(tau) + schedule.b2(tau) * s2;
    let uncapped = !matches!(kind, ScoreKind::Capped(_));
    if uncapped && init == InitLaw::Matched {
        return marginal(horizon - t);
    }
    if uncapped && schedule.is_ou() {
        // Deviation from the marginal decays with the propagator e^{-t} v(T-t)/v(T).
        let (v_end, v_start) = (marginal(horizon - t), marginal(horizon));
        let phi = (-t).exp() * v_end / v_start;
        return v_end + (1.0 - v_start) * phi * phi;
    }
    let v0 = match init {
        InitLaw::Matched => marginal(horizon),
        InitLaw::StandardGaussian => 1.0,
    };
    let mut breaks = vec![0.0];
    if let ScoreKind::Capped(cap) = kind {
        let tp = crate::erm::t_prime(cap, s2, schedule);
        if tp > 0.0 && tp < t {
            breaks.push(tp);
        }
    }
    breaks.push(t);
    let rhs = |tb: f64, v: f64| {
        let tau = (horizon - tb).clamp(0.0, horizon);
        let w2 = schedule.w2(tau);
        2.0 * w2 * (1.0 - 2.0 * score_weight(schedule, kind, s2, tau)) * v + 2.0 * w2
    };
    let mut v = v0;
    for seg in breaks.windows(2) {
        let len = seg[1] - seg[0];
        if len <= 0.0 {
            continue;
        }
        let n = ((len * ANALYTIC_RK4_DENSITY).ceil() as usize).max(1);
        let h = len / n as f64;
        for i in 0..n {
            let tb = seg[0] + i as f64 * h;
            let k1 = rhs(tb, v);
            let k2 = rhs(tb + 0.5 * h, v + 0.5 * h * k1);
            let k3 = rhs(tb + 0.5 * h, v + 0.5 * h * k2);
            let k4 = rhs(tb + h, v + h * k3);
            v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    v
}

/// Projected backward SDE `dY = w²(Y + 2 s(Y, T-t)) dt + √(2w²) dW` in `d` latent
/// coordinates, stopped at `cfg.stop_time` and embedded into `ℝᴰ`.
///
/// The score uses `true_spec` for [`ScoreKind::Exact`] and `est_spec` otherwise.
/// Snapshot variances are reported in latent coordinates.
pub fn simulate_backward<S: NoiseSchedule + ?Sized>(
    cfg: &SimConfig,
    schedule: &S,
    true_spec: &Spectrum,
    est_spec: &Spectrum,
) -> Result<SimRun> {
    let horizon = schedule.horizon();
    let dim = true_spec.dim();
    if est_spec.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: est_spec.dim(),
        });
    }
    cfg.validate(horizon, dim)?;
    if let ScoreKind::Capped(_) = cfg.score {
        if !schedule.is_ou() {
            return Err(Error::UnsupportedSchedule(
                "the capped score is defined for the Ornstein-Uhlenbeck schedule only",
            ));
        }
        if cfg.init != InitLaw::StandardGaussian {
            return Err(Error::InvalidParameter {
                name: "init",
                reason: "the capped score requires a standard Gaussian start".into(),
            });
        }
        if cfg.exact_transitions {
            return Err(Error::InvalidParameter {
                name: "exact_transitions",
                reason: "exact transitions are available for exact and plug-in scores only".into(),
            });
        }
    }
    if cfg.exact_transitions && !schedule.is_ou() {
        return Err(Error::UnsupportedSchedule(
            "exact transitions require the Ornstein-Uhlenbeck schedule",
        ));
    }
    let d = cfg.projection_dim;
    let driving = match cfg.score {
        ScoreKind::Exact => true_spec,
        _ => est_spec,
    };
    let s2: Vec<f64> = driving.variances()[..d].to_vec();
    let mesh = build_mesh(horizon, cfg.steps, cfg.stop_time, &cfg.snapshot_times);

    let mut a = Vec::with_capacity((mesh.len() - 1) * d);
    let mut b = Vec::with_capacity((mesh.len() - 1) * d);
    for w in mesh.windows(2) {
        let h = w[1] - w[0];
        let (tau0, tau1) = (horizon - w[0], (horizon - w[1]).max(0.0));
        for &v in &s2 {
            if cfg.exact_transitions {
                let v0 = schedule.a2(tau0) + schedule.b2(tau0) * v;
                let v1 = schedule.a2(tau1) + schedule.b2(tau1) * v;
                let phi = (-h).exp() * v1 / v0;
                a.push(phi);
                b.push((v1 - phi * phi * v0).max(0.0).sqrt());
            } else {
                let w2 = schedule.w2(tau0);
                let m = score_weight(schedule, cfg.score, v, tau0);
                a.push(1.0 + h * w2 * (1.0 - 2.0 * m));
                b.push((2.0 * w2 * h).sqrt());
            }
        }
    }
    let stepper = Stepper { a, b, dim: d };
    let snap_nodes = snapshot_nodes(&mesh, &cfg.snapshot_times, horizon);
    let init_scale: Vec<f64> = s2
        .iter()
        .map(|&v| match cfg.init {
            InitLaw::Matched => (schedule.a2(horizon) + schedule.b2(horizon) * v).sqrt(),
            InitLaw::StandardGaussian => 1.0,
        })
        .collect();
    let (finals, moments) = run_linear(
        cfg.trajectories,
        cfg.seed,
        &stepper,
        |i, stream, row| {
            stream.fill_normal(i, 0, row);
            for (r, sc) in row.iter_mut().zip(&init_scale) {
                *r *= sc;
            }
        },
        &snap_nodes,
    );

    let embedding = match &cfg.basis {
        Basis::Axis => {
            let mut e = DMatrix::zeros(dim, d);
            for j in 0..d {
                e[(j, j)] = 1.0;
            }
            e
        }
        Basis::Eigen(o) => o.columns(0, d).into_owned(),
    };
    let latent = DMatrix::from_row_slice(cfg.trajectories, d, &finals);
    let ambient = latent * embedding.transpose();
    let snapshots = cfg
        .snapshot_times
        .iter()
        .zip(moments)
        .map(|(&t, second_moment)| Snapshot {
            t,
            second_moment,
            analytic_variance: s2
                .iter()
                .map(|&v| analytic_backward_variance(schedule, cfg.score, cfg.init, v, t))
                .collect(),
            trajectories: cfg.trajectories,
        })
        .collect();
    Ok(SimRun {
        samples: SampleSet::from_matrix(ambient)?,
        snapshots,
        embedding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erm::ConstrainedScore;
    use crate::gauss::Flavor;
    use crate::schedule::make_ou_schedule;

    struct Frozen;

    impl NoiseSchedule for Frozen {
        fn horizon(&self) -> f64 {
            1.0
        }
        fn a2(&self, t: f64) -> f64 {
            1e-3 * t
        }
        fn w2(&self, _t: f64) -> f64 {
            0.0
        }
    }

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec(), Flavor::True).unwrap()
    }

    #[test]
    fn mesh_contains_snapshots_and_stop() {
        let mesh = build_mesh(2.0, 4, 1.3, &[0.7, 0.5, 1.9]);
        assert_eq!(mesh, vec![0.0, 0.5, 0.7, 1.0, 1.3]);
        let mesh = build_mesh(2.0, 4, 2.0, &[]);
        assert_eq!(mesh, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn frozen_forward_is_identity() {
        let init = SampleSet::from_matrix(DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, 0.0, 7.0])).unwrap();
        let cfg = SimConfig::new(10, 3, 1, 2, 1.0);
        let run = simulate_forward(&cfg, &Frozen, &init).unwrap();
        assert_eq!(run.samples.data(), init.data());
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let s = make_ou_schedule(2.0).unwrap();
        let sp = spec(&[1.0, 0.5, 0.2]);
        let mut cfg = SimConfig::new(50, 3000, 7, 3, 1.9);
        cfg.snapshot_times = vec![0.5, 1.0];
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_backward(&cfg, &s, &sp, &sp).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one, run(3));
    }

    #[test]
    fn config_errors() {
        let s = make_ou_schedule(2.0).unwrap();
        let sp = spec(&[1.0, 0.5]);
        let mut cfg = SimConfig::new(10, 10, 1, 2, 2.5);
        assert!(matches!(simulate_backward(&cfg, &s, &sp, &sp), Err(Error::TimeOutOfRange { .. })));
        cfg.stop_time = 2.0;
        cfg.score = ScoreKind::Capped(Cap::Finite(3.0));
        assert!(simulate_backward(&cfg, &s, &sp, &sp).is_err());
        cfg.init = InitLaw::StandardGaussian;
        assert!(simulate_backward(&cfg, &s, &sp, &sp).is_ok());
        cfg.exact_transitions = true;
        assert!(simulate_backward(&cfg, &s, &sp, &sp).is_err());
        cfg.projection_dim = 3;
        assert!(simulate_backward(&cfg, &s, &sp, &sp).is_err());
    }

    #[test]
    fn eigen_basis_embeds_through_columns() {
        let s = make_ou_schedule(1.0).unwrap();
        let sp = spec(&[1.0, 0.5]);
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let o = DMatrix::from_row_slice(2, 2, &[c, -c, c, c]);
        let mut cfg = SimConfig::new(20, 100, 3, 1, 1.0);
        let axis = simulate_backward(&cfg, &s, &sp, &sp).unwrap();
        cfg.basis = Basis::Eigen(o);
        let rotated = simulate_backward(&cfg, &s, &sp, &sp).unwrap();
        for i in 0..100 {
            let y = axis.samples.data()[(i, 0)];
            assert!((rotated.samples.data()[(i, 0)] - c * y).abs() < 1e-15);
            assert!((rotated.samples.data()[(i, 1)] - c * y).abs() < 1e-15);
            assert_eq!(axis.samples.data()[(i, 1)], 0.0);
        }
    }

    #[test]
    fn analytic_variance_paths_agree() {
        let s = make_ou_schedule(2.0).unwrap();
        for &v in &[0.05, 0.7, 2.0] {
            for &t in &[0.3, 1.0, 2.0] {
                let closed = analytic_backward_variance(&s, ScoreKind::Plugin, InitLaw::StandardGaussian, v, t);
                // Route through the RK4 branch by treating the uncapped score as a huge cap.
                let ode = analytic_backward_variance(&s, ScoreKind::Capped(Cap::Finite(1e12)), InitLaw::StandardGaussian, v, t);
                assert!((closed - ode).abs() < 1e-8, "v={v} t={t}: {closed} vs {ode}");
            }
        }
        let cs = ConstrainedScore::new(s, Spectrum::new(vec![0.02], Flavor::Estimated).unwrap(), Cap::Finite(6.0));
        let closed = cs.terminal_variance_closed(1).unwrap();
        let ode = analytic_backward_variance(&s, ScoreKind::Capped(Cap::Finite(6.0)), InitLaw::StandardGaussian, 0.02, 2.0);
        assert!((closed - ode).abs() < 1e-9);
    }

    #[test]
    fn exact_transitions_match_marginals() {
        let s = make_ou_schedule(2.0).unwrap();
        let sp = spec(&[1.5, 0.3, 0.01]);
        let mut cfg = SimConfig::new(20, 40_000, 11, 3, 2.0);
        cfg.exact_transitions = true;
        cfg.snapshot_times = vec![1.0, 2.0];
        let run = simulate_backward(&cfg, &s, &sp, &sp).unwrap();
        for snap in &run.snapshots {
            for ((e, a), se) in snap.empirical_variances().iter().zip(&snap.analytic_variance).zip(snap.stderr()) {
                assert!((e - a).abs() < 5.0 * se, "t={} {e} vs {a}", snap.t);
            }
        }
    }

    #[test]
    fn empirical_frechet_examples() {
        let target = GaussianModel::diagonal(&spec(&[2.0, 1.0, 0.5]));
        let zeros = SampleSet::from_matrix(DMatrix::zeros(10, 3)).unwrap();
        assert!((empirical_frechet(&zeros, &target).unwrap() - 3.5).abs() < 1e-12);
        let few = SampleSet::from_matrix(DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(empirical_frechet(&few, &target), Err(Error::DegenerateSample { .. })));
    }

    #[test]
    fn snapshot_csv_layout() {
        let snap = Snapshot {
            t: 0.5,
            second_moment: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.25]),
            analytic_variance: vec![1.0, 0.25],
            trajectories: 200,
        };
        let mut buf = Vec::new();
        write_snapshot_csv(&[snap], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,component,empirical_variance,analytic_variance,stderr");
        assert_eq!(lines[1], "0.5,1,1,1,0.1");
        assert_eq!(lines[2], "0.5,2,0.25,0.25,0.025");
    }
}
