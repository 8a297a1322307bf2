//! Experiment configuration: a line-oriented `key = value` format with dotted keys.
//!
//! ```text
//! # comment
//! schedule.T = 2
//! spectrum.true = 1.5, 0.8, 0.4, 0.2
//! spectrum.n = 1000
//! erm.C = 2, 8, inf
//! ```
//!
//! Lists are comma separated. Later sources override earlier ones (preset, then file, then
//! command-line flags), but a key may appear only once per source.
//! [`ExperimentConfig::echo_lines`] prints every resolved key in a fixed order; parsing the
//! echo yields an equal config.

use std::fmt;

use thiserror::Error;

use crate::erm::Cap;
use crate::format::fmt_f64;
use crate::gauss::{Flavor, Spectrum};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given more than once")]
    Duplicate { line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required key `{key}`")]
    Missing { key: String },
}

fn invalid(key: &str, value: impl fmt::Display, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

/// Keyword-valued settings.
trait Keyword: Sized + Copy + 'static {
    const ALL: &'static [Self];
    fn keyword(self) -> &'static str;

    fn parse_keyword(key: &str, s: &str) -> Result<Self, ConfigError> {
        Self::ALL.iter().copied().find(|k| k.keyword() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.keyword()).collect();
            invalid(key, s, format!("expected one of {}", names.join(", ")))
        })
    }
}

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $kw:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl Keyword for $name {
            const ALL: &'static [Self] = &[$(Self::$variant),+];
            fn keyword(self) -> &'static str {
                match self { $(Self::$variant => $kw),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.keyword())
            }
        }
    };
}

keyword_enum!(ScheduleKind { Ou => "ou" });
keyword_enum!(
    /// Spacing of the backward-time grid.
    GridKind { Time => "time", LogSnr => "logsnr" }
);
keyword_enum!(Mode {
    Curve => "curve",
    Partition => "partition",
    Stopping => "stopping",
    Erm => "erm",
    Simulate => "simulate",
    Fig3Left => "fig3-left",
    Fig3Right => "fig3-right",
});
keyword_enum!(
    /// Spectrum used for `S(Σ)` in the robust partitions.
    SFrom { True => "true", Estimated => "estimated" }
);
keyword_enum!(SimScore { Exact => "exact", Plugin => "plugin", Capped => "capped" });
keyword_enum!(SimInit { Matched => "matched", Standard => "standard" });

/// Monte-Carlo settings (`sim.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub steps: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub score: SimScore,
    /// Cap for [`SimScore::Capped`].
    pub cap: Option<Cap>,
    /// Projection dimension; `D` when unset.
    pub d: Option<usize>,
    /// Backward stop time; `T` when unset.
    pub stop: Option<f64>,
    pub init: SimInit,
    pub exact: bool,
    pub snapshots: Vec<f64>,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            steps: 1000,
            trajectories: 10_000,
            seed: 1,
            score: SimScore::Plugin,
            cap: None,
            d: None,
            stop: None,
            init: SimInit::Matched,
            exact: false,
            snapshots: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub schedule: ScheduleKind,
    pub horizon: f64,
    /// True variances, non-increasing.
    pub true_variances: Option<Vec<f64>>,
    /// Estimated variances given directly.
    pub estimated_variances: Option<Vec<f64>>,
    /// Sample size for estimating the variances from `N(0, diag(σ²))`.
    pub n: Option<usize>,
    pub spectrum_seed: u64,
    /// Use the true variances as estimates.
    pub oracle: bool,
    pub t_points: usize,
    pub grid: GridKind,
    pub mode: Option<Mode>,
    pub outputs: String,
    pub caps: Vec<Cap>,
    pub robust_u: f64,
    pub cuniv: f64,
    /// Sample size entering `ε_u`; `spectrum.n` when unset.
    pub robust_n: Option<usize>,
    /// Overrides the computed `ε_u`.
    pub eps_u: Option<f64>,
    pub s_from: SFrom,
    /// Low-rank dimension for the stopping offset; number of positive true variances when unset.
    pub d0: Option<usize>,
    pub sim: SimSettings,
    /// Add Monte-Carlo columns to curve-type outputs.
    pub simulate: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::Ou,
            horizon: 2.0,
            true_variances: None,
            estimated_variances: None,
            n: None,
            spectrum_seed: 1,
            oracle: false,
            t_points: 1000,
            grid: GridKind::Time,
            mode: None,
            outputs: "out".to_string(),
            caps: [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0]
                .into_iter()
                .map(Cap::Finite)
                .collect(),
            robust_u: 1.0,
            cuniv: 1.0,
            robust_n: None,
            eps_u: None,
            s_from: SFrom::True,
            d0: None,
            sim: SimSettings::default(),
            simulate: false,
        }
    }
}

fn parse_f64(key: &str, s: &str) -> Result<f64, ConfigError> {
    let x: f64 = s.parse().map_err(|_| invalid(key, s, "not a number"))?;
    if x.is_nan() {
        return Err(invalid(key, s, "not a number"));
    }
    Ok(x)
}

fn parse_finite(key: &str, s: &str) -> Result<f64, ConfigError> {
    let x = parse_f64(key, s)?;
    if !x.is_finite() {
        return Err(invalid(key, s, "must be finite"));
    }
    Ok(x)
}

fn parse_usize(key: &str, s: &str) -> Result<usize, ConfigError> {
    s.parse().map_err(|_| invalid(key, s, "not a non-negative integer"))
}

fn parse_u64(key: &str, s: &str) -> Result<u64, ConfigError> {
    s.parse().map_err(|_| invalid(key, s, "not a non-negative integer"))
}

fn parse_bool(key: &str, s: &str) -> Result<bool, ConfigError> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, s, "expected true or false")),
    }
}

fn split_list(s: &str) -> Vec<&str> {
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .unwrap_or(s)
        .trim();
    if inner.is_empty() {
        return Vec::new();
    }
    inner.split(',').map(str::trim).collect()
}

fn parse_f64_list(key: &str, s: &str) -> Result<Vec<f64>, ConfigError> {
    split_list(s).into_iter().map(|x| parse_finite(key, x)).collect()
}

fn parse_cap(key: &str, s: &str) -> Result<Cap, ConfigError> {
    let c = parse_f64(key, s)?;
    Cap::new(c).map_err(|_| invalid(key, s, "cap must exceed 1 (or be inf)"))
}

fn join_f64(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parses a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text`. Unknown and repeated keys are rejected.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                reason: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    reason: "empty key".into(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            match self.set(key, value) {
                Err(None) => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
                Err(Some(e)) => return Err(e),
                Ok(()) => {}
            }
        }
        Ok(())
    }

    /// Sets one key. `Err(None)` means the key is unknown.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), Option<ConfigError>> {
        match key {
            "schedule.kind" => self.schedule = ScheduleKind::parse_keyword(key, v)?,
            "schedule.T" => self.horizon = parse_finite(key, v)?,
            "spectrum.true" => self.true_variances = Some(parse_f64_list(key, v)?),
            "spectrum.estimated" => self.estimated_variances = Some(parse_f64_list(key, v)?),
            "spectrum.n" => self.n = Some(parse_usize(key, v)?),
            "spectrum.seed" => self.spectrum_seed = parse_u64(key, v)?,
            "spectrum.oracle" => self.oracle = parse_bool(key, v)?,
            "grid.t_points" => self.t_points = parse_usize(key, v)?,
            "grid.parameterization" => self.grid = GridKind::parse_keyword(key, v)?,
            "mode" => self.mode = Some(Mode::parse_keyword(key, v)?),
            "outputs" => {
                if v.is_empty() {
                    return Err(Some(invalid(key, v, "empty path")));
                }
                self.outputs = v.to_string();
            }
            "erm.C" => {
                self.caps = split_list(v)
                    .into_iter()
                    .map(|c| parse_cap(key, c))
                    .collect::<Result<_, _>>()?
            }
            "robust.u" => self.robust_u = parse_finite(key, v)?,
            "robust.cuniv" => self.cuniv = parse_finite(key, v)?,
            "robust.n" => self.robust_n = Some(parse_usize(key, v)?),
            "robust.eps_u" => self.eps_u = Some(parse_finite(key, v)?),
            "robust.s_from" => self.s_from = SFrom::parse_keyword(key, v)?,
            "stopping.d0" => self.d0 = Some(parse_usize(key, v)?),
            "sim.steps" => self.sim.steps = parse_usize(key, v)?,
            "sim.trajectories" => self.sim.trajectories = parse_usize(key, v)?,
            "sim.seed" => self.sim.seed = parse_u64(key, v)?,
            "sim.score" => self.sim.score = SimScore::parse_keyword(key, v)?,
            "sim.C" => self.sim.cap = Some(parse_cap(key, v)?),
            "sim.d" => self.sim.d = Some(parse_usize(key, v)?),
            "sim.stop" => self.sim.stop = Some(parse_finite(key, v)?),
            "sim.init" => self.sim.init = SimInit::parse_keyword(key, v)?,
            "sim.exact" => self.sim.exact = parse_bool(key, v)?,
            "sim.snapshots" => self.sim.snapshots = parse_f64_list(key, v)?,
            "simulate" => self.simulate = parse_bool(key, v)?,
            _ => return Err(None),
        }
        Ok(())
    }

    /// Every resolved key as `key = value`, in a fixed order. Unset optional keys are omitted.
    pub fn echo_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: String| out.push(format!("{k} = {v}"));
        push("schedule.kind", self.schedule.to_string());
        push("schedule.T", fmt_f64(self.horizon));
        if let Some(v) = &self.true_variances {
            push("spectrum.true", join_f64(v));
        }
        if let Some(v) = &self.estimated_variances {
            push("spectrum.estimated", join_f64(v));
        }
        if let Some(n) = self.n {
            push("spectrum.n", n.to_string());
        }
        push("spectrum.seed", self.spectrum_seed.to_string());
        push("spectrum.oracle", self.oracle.to_string());
        push("grid.t_points", self.t_points.to_string());
        push("grid.parameterization", self.grid.to_string());
        if let Some(m) = self.mode {
            push("mode", m.to_string());
        }
        push("outputs", self.outputs.clone());
        push(
            "erm.C",
            self.caps.iter().map(Cap::to_string).collect::<Vec<_>>().join(", "),
        );
        push("robust.u", fmt_f64(self.robust_u));
        push("robust.cuniv", fmt_f64(self.cuniv));
        if let Some(n) = self.robust_n {
            push("robust.n", n.to_string());
        }
        if let Some(e) = self.eps_u {
            push("robust.eps_u", fmt_f64(e));
        }
        push("robust.s_from", self.s_from.to_string());
        if let Some(d0) = self.d0 {
            push("stopping.d0", d0.to_string());
        }
        push("sim.steps", self.sim.steps.to_string());
        push("sim.trajectories", self.sim.trajectories.to_string());
        push("sim.seed", self.sim.seed.to_string());
        push("sim.score", self.sim.score.to_string());
        if let Some(c) = self.sim.cap {
            push("sim.C", c.to_string());
        }
        if let Some(d) = self.sim.d {
            push("sim.d", d.to_string());
        }
        if let Some(t) = self.sim.stop {
            push("sim.stop", fmt_f64(t));
        }
        push("sim.init", self.sim.init.to_string());
        push("sim.exact", self.sim.exact.to_string());
        push("sim.snapshots", join_f64(&self.sim.snapshots));
        push("simulate", self.simulate.to_string());
        out
    }

    /// The echo as a comment block (`# key = value` per line).
    pub fn header_comment(&self) -> String {
        self.echo_lines()
            .iter()
            .map(|l| format!("# {l}\n"))
            .collect()
    }

    /// Recovers a config from the leading `# key = value` block of an output file.
    pub fn from_header(text: &str) -> Result<Self, ConfigError> {
        let body: String = text
            .lines()
            .map_while(|l| l.strip_prefix("# "))
            .map(|l| format!("{l}\n"))
            .collect();
        Self::parse(&body)
    }

    /// The true spectrum, or an error naming the missing or offending key.
    pub fn true_spectrum(&self) -> Result<Spectrum, ConfigError> {
        let v = self.true_variances.as_ref().ok_or_else(|| ConfigError::Missing {
            key: "spectrum.true".into(),
        })?;
        spectrum_from("spectrum.true", v, Flavor::True)
    }

    /// Checks ranges and cross-key consistency.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon <= 0.0 {
            return Err(invalid("schedule.T", fmt_f64(self.horizon), "must be positive"));
        }
        let dim = self.true_spectrum()?.dim();
        if let Some(est) = &self.estimated_variances {
            spectrum_from("spectrum.estimated", est, Flavor::Estimated)?;
            if est.len() != dim {
                return Err(invalid(
                    "spectrum.estimated",
                    join_f64(est),
                    format!("expected {dim} values to match spectrum.true"),
                ));
            }
        }
        if let Some(n) = self.n {
            if n < 2 {
                return Err(invalid("spectrum.n", n, "need at least 2 samples"));
            }
        }
        if self.t_points < 2 {
            return Err(invalid("grid.t_points", self.t_points, "need at least 2 points"));
        }
        if self.caps.is_empty() {
            return Err(invalid("erm.C", "", "need at least one cap"));
        }
        if self.robust_u < 0.0 {
            return Err(invalid("robust.u", fmt_f64(self.robust_u), "must be non-negative"));
        }
        if self.cuniv <= 0.0 {
            return Err(invalid("robust.cuniv", fmt_f64(self.cuniv), "must be positive"));
        }
        if self.robust_n == Some(0) {
            return Err(invalid("robust.n", 0, "must be positive"));
        }
        if let Some(e) = self.eps_u {
            if e < 0.0 {
                return Err(invalid("robust.eps_u", fmt_f64(e), "must be non-negative"));
            }
        }
        if let Some(d0) = self.d0 {
            if d0 == 0 || d0 > dim {
                return Err(invalid("stopping.d0", d0, format!("must lie in 1..={dim}")));
            }
        }
        let sim = &self.sim;
        if sim.steps == 0 {
            return Err(invalid("sim.steps", 0, "must be positive"));
        }
        if sim.trajectories < 2 {
            return Err(invalid("sim.trajectories", sim.trajectories, "need at least 2"));
        }
        if let Some(d) = sim.d {
            if d == 0 || d > dim {
                return Err(invalid("sim.d", d, format!("must lie in 1..={dim}")));
            }
        }
        if let Some(t) = sim.stop {
            if !(0.0..=self.horizon).contains(&t) {
                return Err(invalid("sim.stop", fmt_f64(t), "must lie in [0, schedule.T]"));
            }
        }
        for &t in &sim.snapshots {
            if !(0.0..=self.horizon).contains(&t) {
                return Err(invalid("sim.snapshots", fmt_f64(t), "must lie in [0, schedule.T]"));
            }
        }
        if sim.score == SimScore::Capped {
            if sim.cap.is_none() {
                return Err(ConfigError::Missing { key: "sim.C".into() });
            }
            if sim.init != SimInit::Standard {
                return Err(invalid("sim.init", sim.init, "the capped score starts from standard"));
            }
            if sim.exact {
                return Err(invalid("sim.exact", true, "not available for the capped score"));
            }
        }
        Ok(())
    }
}

fn spectrum_from(key: &str, v: &[f64], flavor: Flavor) -> Result<Spectrum, ConfigError> {
    Spectrum::new(v.to_vec(), flavor).map_err(|e| invalid(key, join_f64(v), e.to_string()))
}
