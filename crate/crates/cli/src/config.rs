//! Run configuration: one TOML file with `[source]`, `[task]` and `[output]` blocks.

use std::fmt;
use std::path::{Path, PathBuf};

use fbrd::spectrum::{CovarianceModel, EigenMethod, SourceSpec, SpectrumOptions};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Spectrum,
    Waterfill,
    Rate,
    Limit,
    Approx,
    Converse,
    Achievability,
    SimulateCodec,
    Aep,
    Sweep,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Spectrum,
        Command::Waterfill,
        Command::Rate,
        Command::Limit,
        Command::Approx,
        Command::Converse,
        Command::Achievability,
        Command::SimulateCodec,
        Command::Aep,
        Command::Sweep,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Waterfill => "waterfill",
            Command::Rate => "rate",
            Command::Limit => "limit",
            Command::Approx => "approx",
            Command::Converse => "converse",
            Command::Achievability => "achievability",
            Command::SimulateCodec => "simulate-codec",
            Command::Aep => "aep",
            Command::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    #[default]
    Nats,
    Bits,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Optional; must match the subcommand when given.
    pub command: Option<Command>,
    pub n: Option<usize>,
    pub n_list: Option<Vec<usize>>,
    pub d: Option<f64>,
    pub d_grid: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub epsilon_list: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub trials: Option<u64>,
    pub m: Option<u64>,
    pub m_list: Option<Vec<u64>>,
    pub design_d: Option<f64>,
    pub covariance: Option<CovarianceModel>,
    pub eigen_method: Option<EigenMethod>,
    pub max_n: Option<usize>,
    pub kappa0: Option<f64>,
    pub kappa1: Option<f64>,
    pub k_prime: Option<f64>,
    /// Constants for the explicit achievability formula.
    pub c0: Option<f64>,
    pub c: Option<f64>,
    pub k: Option<f64>,
    pub berry_esseen: Option<f64>,
    /// Candidate AEP constants.
    pub candidate_c0: Option<f64>,
    pub candidate_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub units: Units,
    /// Fill the `wall_ms` column; off by default so reruns are byte-identical.
    #[serde(default)]
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source: SourceSpec,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A field-level configuration problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(field: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        field: field.to_string(),
        message: message.into(),
    })
}

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_TRIALS: u64 = 100_000;
pub const DEFAULT_SEED: u64 = 1;

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError {
            field: String::new(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            field: String::new(),
            message: format!("{}: {e}", path.display()),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn spectrum_options(&self) -> SpectrumOptions {
        let d = SpectrumOptions::default();
        SpectrumOptions {
            covariance: self.task.covariance.unwrap_or(d.covariance),
            method: self.task.eigen_method.unwrap_or(d.method),
            max_n: self.task.max_n.unwrap_or(d.max_n),
        }
    }

    /// Fill defaults, collapse scalars into lists and range-check everything the command uses.
    pub fn resolve(mut self, command: Command) -> Result<Self, ConfigError> {
        if let Some(c) = self.task.command {
            if c != command {
                return bad(
                    "task.command",
                    format!("config is for `{c}` but `{command}` was requested"),
                );
            }
        }
        if let Err(e) = self.source.validate() {
            return bad("source", e.to_string());
        }
        let t = &mut self.task;
        t.command = Some(command);
        let opts = SpectrumOptions::default();
        t.covariance.get_or_insert(opts.covariance);
        t.eigen_method.get_or_insert(opts.method);
        let max_n = *t.max_n.get_or_insert(opts.max_n);

        merge(&mut t.n, &mut t.n_list, "task.n")?;
        merge(&mut t.d, &mut t.d_grid, "task.d")?;
        merge(&mut t.epsilon, &mut t.epsilon_list, "task.epsilon")?;
        merge(&mut t.m, &mut t.m_list, "task.m")?;

        use Command::*;
        let needs_n = !matches!(command, Limit);
        let needs_d = !matches!(command, Spectrum);
        let needs_eps = matches!(command, Approx | Converse | Achievability | Sweep);
        if needs_n {
            let Some(ns) = &t.n_list else {
                return bad("task.n", "required (n or n_list)");
            };
            for &n in ns {
                if n == 0 || n > max_n {
                    return bad("task.n_list", format!("blocklength {n} outside [1, {max_n}]"));
                }
            }
            if matches!(command, Sweep | Aep) && ns.windows(2).any(|w| w[0] >= w[1]) {
                return bad("task.n_list", "must be strictly increasing");
            }
            if matches!(command, Sweep) && (ns.len() < 3 || ns[0] < 2) {
                return bad("task.n_list", "sweep needs at least 3 blocklengths, all at least 2");
            }
        } else if t.n_list.is_some() {
            return bad("task.n", "not used by `limit`");
        }
        if needs_d {
            let Some(ds) = &t.d_grid else {
                return bad("task.d", "required (d or d_grid)");
            };
            for &d in ds {
                let ok = if matches!(command, SimulateCodec) {
                    d >= 0.0 && d.is_finite()
                } else {
                    d > 0.0 && d.is_finite()
                };
                if !ok {
                    return bad("task.d_grid", format!("distortion {d} must be positive and finite"));
                }
            }
        }
        if needs_eps {
            let Some(es) = &t.epsilon_list else {
                return bad("task.epsilon", "required (epsilon or epsilon_list)");
            };
            for &e in es {
                if !(e > 0.0 && e < 1.0) {
                    return bad("task.epsilon_list", format!("epsilon {e} must lie in (0,1)"));
                }
            }
        }
        if matches!(command, Achievability | Aep | Sweep) {
            let s = *t.samples.get_or_insert(DEFAULT_SAMPLES);
            if s < 10_000 {
                return bad("task.samples", format!("at least 10000 required, got {s}"));
            }
        }
        if matches!(command, Achievability | SimulateCodec | Aep | Sweep) {
            t.seed.get_or_insert(DEFAULT_SEED);
        }
        if matches!(command, SimulateCodec) {
            let trials = *t.trials.get_or_insert(DEFAULT_TRIALS);
            if trials < fbrd::simulate::MIN_TRIALS {
                return bad(
                    "task.trials",
                    format!("at least {} required, got {trials}", fbrd::simulate::MIN_TRIALS),
                );
            }
            let Some(ms) = &t.m_list else {
                return bad("task.m", "required (m or m_list)");
            };
            if ms.contains(&0) {
                return bad("task.m_list", "codebook sizes must be at least 1");
            }
            if let Some(dd) = t.design_d {
                if !(dd > 0.0 && dd.is_finite()) {
                    return bad("task.design_d", format!("must be positive and finite, got {dd}"));
                }
            }
        }
        if matches!(command, Rate) {
            for (name, v) in [("task.kappa0", &mut t.kappa0), ("task.kappa1", &mut t.kappa1)] {
                let x = *v.get_or_insert(0.0);
                if !(x >= 0.0 && x.is_finite()) {
                    return bad(name, format!("must be nonnegative and finite, got {x}"));
                }
            }
            let kp = *t.k_prime.get_or_insert(f64::MAX);
            if !(kp > 0.0) {
                return bad("task.k_prime", format!("must be positive, got {kp}"));
            }
        }
        if matches!(command, Achievability) && (t.c0.is_some() || t.c.is_some()) {
            let c0 = *t.c0.get_or_insert(0.0);
            t.c.get_or_insert(0.0);
            let k = *t.k.get_or_insert(0.0);
            if !(c0 >= 0.0) || !(k >= 0.0) {
                return bad("task.c0", "formula constants c0 and k must be nonnegative");
            }
        }
        if matches!(command, Aep) {
            t.candidate_c0.get_or_insert(1.0);
            t.candidate_c.get_or_insert(0.0);
        }
        Ok(self)
    }
}

/// Accept either the scalar or the list form of a field, leaving only the list.
fn merge<T: Clone>(one: &mut Option<T>, many: &mut Option<Vec<T>>, field: &str) -> Result<(), ConfigError> {
    match (one.take(), many.as_ref()) {
        (Some(_), Some(_)) => bad(field, "give either the scalar or the list form, not both"),
        (Some(v), None) => {
            *many = Some(vec![v]);
            Ok(())
        }
        (None, Some(l)) if l.is_empty() => bad(field, "list must not be empty"),
        _ => Ok(()),
    }
}
