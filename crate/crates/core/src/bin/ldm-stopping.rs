use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ldm_stopping::config::{ExperimentConfig, Mode};
use ldm_stopping::experiments::{fig3_preset, run, RunError, Side};

/// Early stopping and latent-dimension selection for linear latent diffusion models.
///
/// Every CSV starts with the resolved configuration as `# key = value` comment lines;
/// feeding those lines back through --config reproduces the run byte for byte.
#[derive(Debug, Parser)]
#[command(name = "ldm-stopping", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Config file with `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `outputs`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// Seed for both the variance estimate and the simulation.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Add Monte-Carlo columns.
    #[arg(long, global = true)]
    simulate: bool,
    /// Simulation grid steps on [0, T].
    #[arg(long, global = true, value_name = "K")]
    steps: Option<usize>,
    /// Simulated trajectories.
    #[arg(long, global = true, value_name = "N")]
    trajectories: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form distance curves for every projection dimension.
    ///
    /// curve.csv: t, logsnr, frechet_sq_d1..frechet_sq_dD, argmin_d, partition_d
    /// [, mc_frechet_sq_d1..mc_frechet_sq_dD with --simulate]. `t` is backward time,
    /// `logsnr` that of forward time T - t, `argmin_d` the brute-force best dimension and
    /// `partition_d` the dimension predicted by the plug-in partition.
    Curve,
    /// Exact, plug-in and robust time partitions.
    ///
    /// partition.csv: d, boundary_time, boundary_logsnr, variant, u. One row per boundary
    /// t_1..t_{D+1} per variant (exact, plugin, robust-lower, robust-upper).
    /// partition.json: boundaries, eps_u, S and the interleaving flag.
    Partition,
    /// Optimal early-stopping offset for the low-rank dimension d0.
    ///
    /// stopping.csv: t, logsnr, frechet_sq [, mc_frechet_sq]. stopping.json: delta,
    /// stop time T - delta, monotonicity sum and the grid minimizer.
    Stopping,
    /// Capped score matching: terminal variances and the selected dimension per cap C.
    ///
    /// erm.csv: C, d, sqrt_v, sigma, frechet_sq [, mc_sqrt_v].
    /// erm_summary.csv: C, d1, d2, d_min, bracketed.
    Erm,
    /// Monte-Carlo backward simulation.
    ///
    /// snapshots.csv: t, component, empirical_variance, analytic_variance, stderr.
    /// simulate.json: empirical and closed-form distances at the stop time.
    Simulate,
    /// Two preset diagonal configurations (T = 2, 1000 samples, log-SNR grid).
    ///
    /// fig3_<side>_curve.csv: columns as for `curve`. fig3_<side>_partition.csv: exact
    /// and plug-in boundaries. fig3_<side>_summary.json: global minimizer (t_star, d_star)
    /// and, on the right, the optimal stopping offset.
    Fig3 {
        #[arg(long, value_enum)]
        side: SideArg,
        /// Use the true variances instead of estimating them.
        #[arg(long)]
        oracle: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SideArg {
    Left,
    Right,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, RunError> {
    let (mut cfg, mode) = match &cli.command {
        Command::Fig3 { side, .. } => {
            let side = match side {
                SideArg::Left => Side::Left,
                SideArg::Right => Side::Right,
            };
            let cfg = fig3_preset(side);
            let mode = cfg.mode;
            (cfg, mode.expect("preset sets the mode"))
        }
        Command::Curve => (ExperimentConfig::default(), Mode::Curve),
        Command::Partition => (ExperimentConfig::default(), Mode::Partition),
        Command::Stopping => (ExperimentConfig::default(), Mode::Stopping),
        Command::Erm => (ExperimentConfig::default(), Mode::Erm),
        Command::Simulate => (ExperimentConfig::default(), Mode::Simulate),
    };
    let g = &cli.global;
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.clone(),
            source,
        })?;
        cfg.apply_str(&text)?;
    }
    cfg.mode = Some(mode);
    if let Command::Fig3 { oracle: true, .. } = cli.command {
        cfg.oracle = true;
    }
    if let Some(out) = &g.out {
        cfg.outputs = out.clone();
    }
    if let Some(seed) = g.seed {
        cfg.spectrum_seed = seed;
        cfg.sim.seed = seed;
    }
    if g.simulate {
        cfg.simulate = true;
    }
    if let Some(k) = g.steps {
        cfg.sim.steps = k;
    }
    if let Some(n) = g.trajectories {
        cfg.sim.trajectories = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = load(&cli).and_then(|cfg| run(&cfg));
    match outcome {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for f in &report.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
