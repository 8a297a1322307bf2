//! Experiment drivers behind the command-line tool. Each run writes CSV files (headed by
//! the resolved config as `# key = value` comments) and JSON summaries into the output
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, GridKind, Mode, SFrom, SimInit, SimScore};
use crate::erm::{d1_d2, d_min_search, Cap, ConstrainedScore, DMIN_CSV_HEADER};
use crate::error::Error;
use crate::estimation::{empirical_variances, epsilon_u, s_of_sigma, sample_gaussian};
use crate::format::fmt_f64;
use crate::gauss::{frechet_sq_general, Flavor, GaussianModel, Spectrum};
use crate::partition::{
    brute_force_optimal_dim, exact_partition, monotonicity_condition, optimal_dim_at,
    optimal_stopping_delta_general, plugin_partition, projected_frechet_sq, robust_partition,
    TimePartition, PARTITION_CSV_HEADER,
};
use crate::schedule::{make_ou_schedule, NoiseSchedule, OuSchedule};
use crate::sim::{
    empirical_frechet, simulate_backward, write_snapshot_rows, InitLaw, ScoreKind, SimConfig,
    SNAPSHOT_CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("numeric failure: {0}")]
    Numeric(#[from] Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// Process exit status: 2 for config errors, 3 for numeric failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numeric(_) => 3,
            Self::Io { .. } => 1,
        }
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;

/// Files written by a run and any warnings raised on the way.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Spectra and schedule resolved from a config.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub schedule: OuSchedule,
    pub true_spec: Spectrum,
    pub est_spec: Spectrum,
    /// `"oracle"`, `"given"` or `"sampled"`.
    pub est_source: &'static str,
    pub warnings: Vec<String>,
}

impl Inputs {
    pub fn resolve(cfg: &ExperimentConfig) -> RunResult<Self> {
        cfg.validate()?;
        let schedule = make_ou_schedule(cfg.horizon)?;
        let true_spec = cfg.true_spectrum()?;
        let mut warnings = Vec::new();
        let (est_spec, est_source) = if cfg.oracle {
            (true_spec.clone().with_flavor(Flavor::Estimated), "oracle")
        } else if let Some(v) = &cfg.estimated_variances {
            (Spectrum::new(v.clone(), Flavor::Estimated)?, "given")
        } else if let Some(n) = cfg.n {
            let model = GaussianModel::diagonal(&true_spec);
            let samples = sample_gaussian(&model, n, cfg.spectrum_seed)?;
            let sorted = empirical_variances(&samples);
            let tv = true_spec.variances();
            let misaligned = sorted
                .permutation
                .iter()
                .enumerate()
                .any(|(i, &p)| tv[i] != tv[p]);
            if misaligned {
                warnings.push(format!(
                    "estimated variances are not in the order of the true ones (sorted order {:?}); \
                     components are paired by rank",
                    sorted.permutation.iter().map(|p| p + 1).collect::<Vec<_>>()
                ));
            }
            (sorted.spectrum, "sampled")
        } else {
            (true_spec.clone().with_flavor(Flavor::Estimated), "oracle")
        };
        Ok(Self {
            schedule,
            true_spec,
            est_spec,
            est_source,
            warnings,
        })
    }

    pub fn dim(&self) -> usize {
        self.true_spec.dim()
    }
}

/// Backward times of the evaluation grid, increasing.
///
/// `time`: uniform on `[0, T]`. `logsnr`: uniform in the log-SNR of the forward time
/// between `T` and `10⁻⁴ T`, so the last point is `T (1 - 10⁻⁴)`.
pub fn time_grid<S: NoiseSchedule + ?Sized>(s: &S, points: usize, kind: GridKind) -> crate::Result<Vec<f64>> {
    let horizon = s.horizon();
    let last = points - 1;
    match kind {
        GridKind::Time => Ok((0..points)
            .map(|i| if i == last { horizon } else { horizon * i as f64 / last as f64 })
            .collect()),
        GridKind::LogSnr => {
            let small = horizon * 1e-4;
            let (lo, hi) = (s.log_snr(horizon)?, s.log_snr(small)?);
            Ok((0..points)
                .map(|i| match i {
                    0 => 0.0,
                    _ if i == last => horizon - small,
                    _ => {
                        let lam = lo + (hi - lo) * i as f64 / last as f64;
                        (horizon - s.time_at_log_snr(lam)).clamp(0.0, horizon)
                    }
                })
                .collect())
        }
    }
}

/// Log-SNR of the forward time `T - t`, `+∞` at `t = T`.
fn backward_log_snr<S: NoiseSchedule + ?Sized>(s: &S, t: f64) -> crate::Result<f64> {
    let forward = (s.horizon() - t).max(0.0);
    if forward == 0.0 {
        Ok(f64::INFINITY)
    } else {
        s.log_snr(forward)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> RunResult<()> {
    fs::write(path, bytes).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Output sink for one run: creates the directory and records written paths.
struct Sink<'a> {
    dir: PathBuf,
    cfg: &'a ExperimentConfig,
    report: RunReport,
}

impl<'a> Sink<'a> {
    fn new(cfg: &'a ExperimentConfig, warnings: Vec<String>) -> RunResult<Self> {
        let dir = PathBuf::from(&cfg.outputs);
        fs::create_dir_all(&dir).map_err(|source| RunError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            dir,
            cfg,
            report: RunReport {
                files: Vec::new(),
                warnings,
            },
        })
    }

    fn csv<F>(&mut self, name: &str, header: &[String], body: F) -> RunResult<()>
    where
        F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> crate::Result<()>,
    {
        let mut buf = self.cfg.header_comment().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header).map_err(Error::from)?;
            body(&mut w)?;
            w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        }
        self.write(name, &buf)
    }

    fn json(&mut self, name: &str, mut value: Value) -> RunResult<()> {
        if let Value::Object(map) = &mut value {
            map.insert("warnings".into(), json!(self.report.warnings));
            map.insert("config".into(), json!(self.cfg.echo_lines()));
        }
        let mut text = serde_json::to_string_pretty(&value).expect("JSON values serialize");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> RunResult<()> {
        let path = self.dir.join(name);
        write_file(&path, bytes)?;
        self.report.files.push(path);
        Ok(())
    }
}

fn headers(fixed: &[&str]) -> Vec<String> {
    fixed.iter().map(|s| s.to_string()).collect()
}

fn indexed(prefix: &str, dim: usize) -> impl Iterator<Item = String> + '_ {
    (1..=dim).map(move |d| format!("{prefix}{d}"))
}

/// Closed-form distances on the grid, for every projection dimension.
struct CurveTable {
    times: Vec<f64>,
    log_snr: Vec<f64>,
    /// `values[i][d - 1]` at `times[i]`.
    values: Vec<Vec<f64>>,
    argmin: Vec<usize>,
    partition_dim: Vec<usize>,
}

fn curve_table(inputs: &Inputs, times: Vec<f64>, part: &TimePartition) -> RunResult<CurveTable> {
    let s = &inputs.schedule;
    let mut table = CurveTable {
        log_snr: Vec::with_capacity(times.len()),
        values: Vec::with_capacity(times.len()),
        argmin: Vec::with_capacity(times.len()),
        partition_dim: Vec::with_capacity(times.len()),
        times: Vec::new(),
    };
    for &t in &times {
        let (d, row) = brute_force_optimal_dim(s, &inputs.true_spec, &inputs.est_spec, t)?;
        table.log_snr.push(backward_log_snr(s, t)?);
        table.values.push(row);
        table.argmin.push(d);
        table.partition_dim.push(optimal_dim_at(part, t)?);
    }
    table.times = times;
    Ok(table)
}

fn sim_score(cfg: &ExperimentConfig) -> RunResult<ScoreKind> {
    Ok(match cfg.sim.score {
        SimScore::Exact => ScoreKind::Exact,
        SimScore::Plugin => ScoreKind::Plugin,
        SimScore::Capped => ScoreKind::Capped(cfg.sim.cap.ok_or_else(|| ConfigError::Missing {
            key: "sim.C".into(),
        })?),
    })
}

fn sim_init(cfg: &ExperimentConfig) -> InitLaw {
    match cfg.sim.init {
        SimInit::Matched => InitLaw::Matched,
        SimInit::Standard => InitLaw::StandardGaussian,
    }
}

/// Monte-Carlo distance for every `d` at every time, from one `D`-dimensional run: the
/// first `d` latent coordinates of that run are exactly the `d`-dimensional run.
fn mc_curve(cfg: &ExperimentConfig, inputs: &Inputs, times: &[f64]) -> RunResult<Vec<Vec<f64>>> {
    let dim = inputs.dim();
    let stop = times.iter().copied().fold(0.0, f64::max);
    let mut sc = SimConfig::new(cfg.sim.steps, cfg.sim.trajectories, cfg.sim.seed, dim, stop);
    sc.score = sim_score(cfg)?;
    sc.init = sim_init(cfg);
    sc.exact_transitions = cfg.sim.exact;
    sc.snapshot_times = times.to_vec();
    let run = simulate_backward(&sc, &inputs.schedule, &inputs.true_spec, &inputs.est_spec)?;
    let target = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(
        inputs.true_spec.variances(),
    ));
    let mut out = Vec::with_capacity(times.len());
    for snap in &run.snapshots {
        let mut row = Vec::with_capacity(dim);
        for d in 1..=dim {
            let mut cov = DMatrix::zeros(dim, dim);
            cov.view_mut((0, 0), (d, d))
                .copy_from(&snap.second_moment.view((0, 0), (d, d)));
            row.push(frechet_sq_general(&cov, &target)?);
        }
        out.push(row);
    }
    Ok(out)
}

fn write_curve_csv(
    sink: &mut Sink,
    name: &str,
    table: &CurveTable,
    mc: Option<&[Vec<f64>]>,
) -> RunResult<()> {
    let dim = table.values.first().map_or(0, Vec::len);
    let mut header = headers(&["t", "logsnr"]);
    header.extend(indexed("frechet_sq_d", dim));
    header.extend(headers(&["argmin_d", "partition_d"]));
    if mc.is_some() {
        header.extend(indexed("mc_frechet_sq_d", dim));
    }
    sink.csv(name, &header, |w| {
        for i in 0..table.times.len() {
            let mut rec = vec![fmt_f64(table.times[i]), fmt_f64(table.log_snr[i])];
            rec.extend(table.values[i].iter().map(|&v| fmt_f64(v)));
            rec.push(table.argmin[i].to_string());
            rec.push(table.partition_dim[i].to_string());
            if let Some(mc) = mc {
                rec.extend(mc[i].iter().map(|&v| fmt_f64(v)));
            }
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

fn partition_warnings(parts: &[&TimePartition], warnings: &mut Vec<String>) {
    for p in parts {
        if !p.well_ordered() {
            warnings.push(format!("{} partition boundaries are not monotone", p.variant().as_str()));
        }
    }
}

/// `curve.csv`: `t, logsnr, frechet_sq_d1..D, argmin_d, partition_d[, mc_frechet_sq_d1..D]`.
pub fn run_curve(cfg: &ExperimentConfig) -> RunResult<RunReport> {
    let inputs = Inputs::resolve(cfg)?;
    let mut warnings = inputs.warnings.clone();
    let part = plugin_partition(&inputs.schedule, &inputs.true_spec, &inputs.est_spec)?;
    partition_warnings(&[&part], &mut warnings);
    let times = time_grid(&inputs.schedule, cfg.t_points, cfg.grid)?;
    let table = curve_table(&inputs, times, &part)?;
    let mc = if cfg.simulate {
        Some(mc_curve(cfg, &inputs, &table.times)?)
    } else {
        None
    };
    let mut sink = Sink::new(cfg, warnings)?;
    write_curve_csv(&mut sink, "curve.csv", &table, mc.as_deref())?;
    Ok(sink.report)
}

fn write_partitions(
    sink: &mut Sink,
    name: &str,
    schedule: &OuSchedule,
    parts: &[&TimePartition],
) -> RunResult<()> {
    sink.csv(name, &headers(&PARTITION_CSV_HEADER), |w| {
        for p in parts {
            p.write_csv_rows(schedule, w)?;
        }
        Ok(())
    })
}

fn boundaries_json(p: &TimePartition) -> Value {
    json!({
        "variant": p.variant().as_str(),
        "boundaries": p.boundaries(),
        "well_ordered": p.well_ordered(),
        "has_ties": p.has_ties(),
    })
}

/// `partition.csv` (exact, plug-in and, when `ε_u` is available, both robust partitions)
/// and `partition.json`.
pub fn run_partition(cfg: &ExperimentConfig) -> RunResult<RunReport> {
    let inputs = Inputs::resolve(cfg)?;
    let s = &inputs.schedule;
    let mut warnings = inputs.warnings.clone();
    let exact = exact_partition(s, &inputs.true_spec);
    let plugin = plugin_partition(s, &inputs.true_spec, &inputs.est_spec)?;
    let s_sigma = match cfg.s_from {
        SFrom::True => s_of_sigma(&inputs.true_spec),
        SFrom::Estimated => s_of_sigma(&inputs.est_spec),
    };
    let eps = match (cfg.eps_u, cfg.robust_n.or(cfg.n)) {
        (Some(e), _) => Some(e),
        (None, Some(n)) => Some(epsilon_u(n, inputs.dim(), cfg.robust_u, cfg.cuniv)?),
        (None, None) => None,
    };
    let robust = match eps {
        Some(e) => match robust_partition(s, &inputs.est_spec, s_sigma, e, Some(cfg.robust_u)) {
            Ok(r) => Ok(Some(r)),
            Err(Error::EpsilonTooLarge { index }) => Err(format!(
                "eps_u too large: the lower shift makes component {index} negative"
            )),
            Err(e) => return Err(e.into()),
        },
        None => Err("no sample size (spectrum.n or robust.n) or robust.eps_u given".to_string()),
    };
    let mut parts = vec![&exact, &plugin];
    if let Ok(Some(r)) = &robust {
        parts.push(&r.lower);
        parts.push(&r.upper);
    }
    partition_warnings(&parts, &mut warnings);
    let summary = json!({
        "dim": inputs.dim(),
        "horizon": cfg.horizon,
        "estimate": inputs.est_source,
        "estimated_variances": inputs.est_spec.variances(),
        "partitions": parts.iter().map(|p| boundaries_json(p)).collect::<Vec<_>>(),
        "robust": {
            "u": cfg.robust_u,
            "eps_u": eps,
            "S": s_sigma,
            "s_from": cfg.s_from.to_string(),
            "interleaved": robust.as_ref().ok().and_then(|r| r.as_ref()).map(|r| r.interleaved),
            "error": robust.as_ref().err(),
        },
    });
    let mut sink = Sink::new(cfg, warnings)?;
    write_partitions(&mut sink, "partition.csv", s, &parts)?;
    sink.json("partition.json", summary)?;
    Ok(sink.report)
}

fn default_d0(cfg: &ExperimentConfig, true_spec: &Spectrum) -> usize {
    cfg.d0
        .unwrap_or_else(|| true_spec.variances().iter().filter(|&&v| v > 0.0).count().max(1))
}

/// Optimal stopping summary for dimension `d0`.
fn stopping_json(inputs: &Inputs, d0: usize) -> RunResult<Value> {
    let sigma: Vec<f64> = inputs.true_spec.std_devs()[..d0].to_vec();
    let stop = optimal_stopping_delta_general(&inputs.schedule, &sigma, &inputs.est_spec, d0)?;
    let mono = monotonicity_condition(&inputs.true_spec, &inputs.est_spec, d0)?;
    let horizon = inputs.schedule.horizon();
    let t_stop = horizon - stop.delta;
    Ok(json!({
        "d0": d0,
        "delta": stop.delta,
        "stop_time": t_stop,
        "root_a2": stop.root_a2,
        "clamped": stop.clamped,
        "monotonicity_sum": mono.sum,
        "non_increasing": mono.non_increasing,
        "frechet_sq_at_stop": projected_frechet_sq(&inputs.schedule, &inputs.true_spec, &inputs.est_spec, d0, t_stop)?,
        "frechet_sq_at_T": projected_frechet_sq(&inputs.schedule, &inputs.true_spec, &inputs.est_spec, d0, horizon)?,
    }))
}

/// `stopping.csv` (`t, logsnr, frechet_sq[, mc_frechet_sq]` at dimension `d0`) and
/// `stopping.json`.
pub fn run_stopping(cfg: &ExperimentConfig) -> RunResult<RunReport> {
    let inputs = Inputs::resolve(cfg)?;
    let s = &inputs.schedule;
    let d0 = default_d0(cfg, &inputs.true_spec);
    let mut summary = stopping_json(&inputs, d0)?;
    let times = time_grid(s, cfg.t_points, cfg.grid)?;
    let values = times
        .iter()
        .map(|&t| projected_frechet_sq(s, &inputs.true_spec, &inputs.est_spec, d0, t))
        .collect::<crate::Result<Vec<_>>>()?;
    let best = (0..values.len()).fold(0, |b, i| if values[i] < values[b] { i } else { b });
    summary["grid_argmin_time"] = json!(times[best]);
    summary["grid_min_frechet_sq"] = json!(values[best]);
    let mc = if cfg.simulate {
        Some(mc_curve(cfg, &inputs, &times)?)
    } else {
        None
    };
    let mut sink = Sink::new(cfg, inputs.warnings.clone())?;
    let mut header = headers(&["t", "logsnr", "frechet_sq"]);
    if mc.is_some() {
        header.push("mc_frechet_sq".into());
    }
    sink.csv("stopping.csv", &header, |w| {
        for (i, &t) in times.iter().enumerate() {
            let mut rec = vec![fmt_f64(t), fmt_f64(backward_log_snr(s, t)?), fmt_f64(values[i])];
            if let Some(mc) = &mc {
                rec.push(fmt_f64(mc[i][d0 - 1]));
            }
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    sink.json("stopping.json", summary)?;
    Ok(sink.report)
}

/// Terminal latent variances of a capped-score run, or `None` when the Euler-Maruyama
/// recursion is unstable for this cap and step size.
fn mc_terminal_variances(cfg: &ExperimentConfig, inputs: &Inputs, cap: Cap) -> RunResult<Option<Vec<f64>>> {
    let horizon = inputs.schedule.horizon();
    let h = horizon / cfg.sim.steps as f64;
    let worst = 1.0 + h * (1.0 - 2.0 * cap.value());
    if cap != Cap::Unbounded && worst.abs() >= 1.0 {
        return Ok(None);
    }
    let dim = inputs.dim();
    let mut sc = SimConfig::new(cfg.sim.steps, cfg.sim.trajectories, cfg.sim.seed, dim, horizon);
    sc.score = ScoreKind::Capped(cap);
    sc.init = InitLaw::StandardGaussian;
    sc.snapshot_times = vec![horizon];
    let run = simulate_backward(&sc, &inputs.schedule, &inputs.true_spec, &inputs.est_spec)?;
    Ok(Some(run.snapshots[0].empirical_variances()))
}

/// `erm.csv` (per cap and dimension: `C, d, sqrt_v, sigma, frechet_sq[, mc_sqrt_v]`) and
/// `erm_summary.csv` (`C, d1, d2, d_min, bracketed`).
pub fn run_erm(cfg: &ExperimentConfig) -> RunResult<RunReport> {
    let inputs = Inputs::resolve(cfg)?;
    let mut warnings = inputs.warnings.clone();
    let mut results = Vec::with_capacity(cfg.caps.len());
    for &cap in &cfg.caps {
        let cs = ConstrainedScore::new(inputs.schedule, inputs.est_spec.clone(), cap);
        let search = d_min_search(&cs, &inputs.true_spec)?;
        let (d1, d2) = d1_d2(&inputs.true_spec, &inputs.est_spec, cap)?;
        let mc = if cfg.simulate {
            let v = mc_terminal_variances(cfg, &inputs, cap)?;
            if v.is_none() {
                warnings.push(format!(
                    "C = {cap}: Euler-Maruyama is unstable at {} steps; Monte-Carlo column left empty",
                    cfg.sim.steps
                ));
            }
            v
        } else {
            None
        };
        results.push((cap, search, d1, d2, mc));
    }
    let mut sink = Sink::new(cfg, warnings)?;
    let mut header = headers(&DMIN_CSV_HEADER);
    if cfg.simulate {
        header.push("mc_sqrt_v".into());
    }
    sink.csv("erm.csv", &header, |w| {
        for (cap, search, _, _, mc) in &results {
            if !cfg.simulate {
                search.write_csv_rows(*cap, &inputs.true_spec, w)?;
                continue;
            }
            for (j, (v, f)) in search.terminal_variances.iter().zip(&search.frechet_sq).enumerate() {
                w.write_record([
                    cap.to_string(),
                    (j + 1).to_string(),
                    fmt_f64(v.sqrt()),
                    fmt_f64(inputs.true_spec.variances()[j].sqrt()),
                    fmt_f64(*f),
                    mc.as_ref().map(|m| fmt_f64(m[j].sqrt())).unwrap_or_default(),
                ])?;
            }
        }
        Ok(())
    })?;
    sink.csv("erm_summary.csv", &headers(&["C", "d1", "d2", "d_min", "bracketed"]), |w| {
        for (cap, search, d1, d2, _) in &results {
            w.write_record([
                cap.to_string(),
                d1.to_string(),
                d2.to_string(),
                search.d_min.to_string(),
                (d1 <= &search.d_min && search.d_min <= *d2).to_string(),
            ])?;
        }
        Ok(())
    })?;
    Ok(sink.report)
}

/// `snapshots.csv` (`t, component, empirical_variance, analytic_variance, stderr`, latent
/// coordinates) and `simulate.json` with the empirical and closed-form distances at the
/// stop time.
pub fn run_simulate(cfg: &ExperimentConfig) -> RunResult<RunReport> {
    let inputs = Inputs::resolve(cfg)?;
    let horizon = inputs.schedule.horizon();
    let d = cfg.sim.d.unwrap_or(inputs.dim());
    let stop = cfg.sim.stop.unwrap_or(horizon);
    let mut sc = SimConfig::new(cfg.sim.steps, cfg.sim.trajectories, cfg.sim.seed, d, stop);
    sc.score = sim_score(cfg)?;
    sc.init = sim_init(cfg);
    sc.exact_transitions = cfg.sim.exact;
    sc.snapshot_times = cfg.sim.snapshots.iter().copied().filter(|&t| t < stop).collect();
    sc.snapshot_times.push(stop);
    let run = simulate_backward(&sc, &inputs.schedule, &inputs.true_spec, &inputs.est_spec)?;
    let target = GaussianModel::diagonal(&inputs.true_spec);
    let last = run.snapshots.last().expect("stop snapshot");
    let sigma2 = inputs.true_spec.variances();
    let closed: f64 = (0..inputs.dim())
        .map(|j| {
            if j < d {
                let diff = last.analytic_variance[j].sqrt() - sigma2[j].sqrt();
                diff * diff
            } else {
                sigma2[j]
            }
        })
        .sum();
    let empirical = if run.samples.n() > run.samples.dim() {
        Some(empirical_frechet(&run.samples, &target)?)
    } else {
        None
    };
    let summary = json!({
        "d": d,
        "stop_time": stop,
        "score": cfg.sim.score.to_string(),
        "init": cfg.sim.init.to_string(),
        "trajectories": cfg.sim.trajectories,
        "steps": cfg.sim.steps,
        "seed": cfg.sim.seed,
        "empirical_frechet_sq": empirical,
        "closed_form_frechet_sq": closed,
        "relative_difference": empirical.map(|e| (e - closed).abs() / closed.max(f64::MIN_POSITIVE)),
    });
    let mut sink = Sink::new(cfg, inputs.warnings.clone())?;
    sink.csv("snapshots.csv", &headers(&SNAPSHOT_CSV_HEADER), |w| {
        write_snapshot_rows(&run.snapshots, w)
    })?;
    sink.json("simulate.json", summary)?;
    Ok(sink.report)
}

/// Which `fig3` preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Left => "left",
            Self::Right => "right",
        }
    }
}

/// Covariance diagonal of each `fig3` preset.
pub fn fig3_variances(side: Side) -> Vec<f64> {
    match side {
        Side::Left => {
            let mut v: Vec<f64> = (0..7).map(|k| 0.6f64.powi(k)).collect();
            v.extend([1e-10, 1e-10]);
            v
        }
        Side::Right => vec![10.0, 0.2, 0.2, 0.2, 0.0, 0.0],
    }
}

/// `fig3` defaults: variances estimated from 1000 samples (seed 1), `T = 2`, a
/// 1000-point log-SNR grid and 1000 simulation steps.
pub fn fig3_preset(side: Side) -> ExperimentConfig {
    ExperimentConfig {
        horizon: 2.0,
        true_variances: Some(fig3_variances(side)),
        n: Some(1000),
        spectrum_seed: 1,
        t_points: 1000,
        grid: GridKind::LogSnr,
        mode: Some(match side {
            Side::Left => Mode::Fig3Left,
            Side::Right => Mode::Fig3Right,
        }),
        d0: match side {
            Side::Left => None,
            Side::Right => Some(4),
        },
        ..ExperimentConfig::default()
    }
}

/// `fig3_<side>_curve.csv` (columns as in [`run_curve`]), `fig3_<side>_partition.csv`
/// (exact and plug-in boundaries) and `fig3_<side>_summary.json` with the global grid
/// minimizer `(t*, d*)` and, on the right, the optimal stopping offset.
pub fn run_fig3(cfg: &ExperimentConfig, side: Side) -> RunResult<RunReport> {
    let inputs = Inputs::resolve(cfg)?;
    let s = &inputs.schedule;
    let mut warnings = inputs.warnings.clone();
    let exact = exact_partition(s, &inputs.true_spec);
    let plugin = plugin_partition(s, &inputs.true_spec, &inputs.est_spec)?;
    partition_warnings(&[&exact, &plugin], &mut warnings);
    let times = time_grid(s, cfg.t_points, cfg.grid)?;
    let table = curve_table(&inputs, times, &plugin)?;
    let mut best = (0, 0);
    for (i, row) in table.values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v < table.values[best.0][best.1] {
                best = (i, j);
            }
        }
    }
    let disagreements = table
        .argmin
        .iter()
        .zip(&table.partition_dim)
        .filter(|(a, b)| a != b)
        .count();
    let mut summary = json!({
        "side": side.as_str(),
        "estimate": inputs.est_source,
        "estimated_variances": inputs.est_spec.variances(),
        "t_star": table.times[best.0],
        "d_star": best.1 + 1,
        "frechet_sq_min": table.values[best.0][best.1],
        "grid_points": table.times.len(),
        "argmin_partition_disagreements": disagreements,
        "partitions": [boundaries_json(&exact), boundaries_json(&plugin)],
    });
    if side == Side::Right {
        let d0 = default_d0(cfg, &inputs.true_spec);
        summary["stopping"] = stopping_json(&inputs, d0)?;
    }
    let mc = if cfg.simulate {
        Some(mc_curve(cfg, &inputs, &table.times)?)
    } else {
        None
    };
    let prefix = format!("fig3_{}", side.as_str());
    let mut sink = Sink::new(cfg, warnings)?;
    write_curve_csv(&mut sink, &format!("{prefix}_curve.csv"), &table, mc.as_deref())?;
    write_partitions(&mut sink, &format!("{prefix}_partition.csv"), s, &[&exact, &plugin])?;
    sink.json(&format!("{prefix}_summary.json"), summary)?;
    Ok(sink.report)
}

/// Dispatches on `cfg.mode`.
pub fn run(cfg: &ExperimentConfig) -> RunResult<RunReport> {
    match cfg.mode {
        Some(Mode::Curve) => run_curve(cfg),
        Some(Mode::Partition) => run_partition(cfg),
        Some(Mode::Stopping) => run_stopping(cfg),
        Some(Mode::Erm) => run_erm(cfg),
        Some(Mode::Simulate) => run_simulate(cfg),
        Some(Mode::Fig3Left) => run_fig3(cfg, Side::Left),
        Some(Mode::Fig3Right) => run_fig3(cfg, Side::Right),
        None => Err(ConfigError::Missing { key: "mode".into() }.into()),
    }
}
