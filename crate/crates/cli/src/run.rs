//! Subcommand dispatch.

use std::path::PathBuf;
use std::time::Instant;

use fbrd::bounds::{
    achievability_formula_for, converse_ceiling, converse_rate_for, gaussian_approx_for, AchievabilitySampler,
    BoundResult, FormulaConstants,
};
use fbrd::simulate::{aep_experiment, convergence_sweep, run_random_code_multi, CodecConfig};
use fbrd::spectrum::eigen_spectrum;
use fbrd::tilted::{assumption_report, tilted_berry_esseen, AssumptionThresholds, TiltedParams};
use fbrd::waterfill::{limiting_point, Problem};

use crate::config::{Command, ConfigError, RunConfig, Units};
use crate::table::{Row, Table};

/// Environment variable that may replace the configured output path.
pub const OUTPUT_ENV: &str = "FBRD_OUTPUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_COMPUTATION: i32 = 3;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    /// A library error; the table holds the rows produced before it.
    Compute {
        error: fbrd::Error,
        partial: Table,
    },
    Io(std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_VALIDATION,
            RunError::Compute { error, .. } if error.is_validation() => EXIT_VALIDATION,
            RunError::Compute { .. } | RunError::Io(_) => EXIT_COMPUTATION,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "invalid configuration: {e}"),
            RunError::Compute { error, .. } if error.is_validation() => {
                write!(f, "invalid input: {error}")
            }
            RunError::Compute { error, .. } => write!(f, "computation failed: {error}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

/// Builds rows one item at a time, keeping what was done if an item fails.
struct Builder<'a> {
    cfg: &'a RunConfig,
    table: Table,
}

impl<'a> Builder<'a> {
    fn item(&mut self, f: impl FnOnce(&RunConfig) -> fbrd::Result<Vec<Row>>) -> fbrd::Result<()> {
        let start = Instant::now();
        let rows = f(self.cfg)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        for mut r in rows {
            if self.cfg.output.timing {
                r.put("wall_ms", ms);
            }
            if self.cfg.output.units == Units::Bits {
                if let Some(x) = r.f64("log_M_nats") {
                    r.put("log_M_bits", x / std::f64::consts::LN_2);
                }
                if let Some(x) = r.f64("dispersion_nats2") {
                    r.put(
                        "dispersion_bits2",
                        x / (std::f64::consts::LN_2 * std::f64::consts::LN_2),
                    );
                }
            }
            self.table.push(r);
        }
        Ok(())
    }
}

fn list<T: Copy>(v: &Option<Vec<T>>) -> Vec<T> {
    v.clone().unwrap_or_default()
}

fn bound_row(r: &BoundResult, p: &Problem) -> Row {
    Row::new()
        .set("n", r.n)
        .set("d", r.d)
        .set("epsilon", r.epsilon)
        .set("theta", r.theta)
        .rate(r.rate)
        .set("dispersion_nats2", p.point.dispersion)
        .set("bound_kind", r.kind.as_str())
        .set("log_M_nats", r.log_m)
        .set("mc_stderr", r.mc_stderr)
}

fn point_row(p: &Problem) -> Row {
    Row::new()
        .set("n", p.n())
        .set("d", p.point.d)
        .set("theta", p.solution.theta)
        .rate(p.point.rate)
        .set("dispersion_nats2", p.point.dispersion)
}

/// Validate `cfg` for `command` and compute the result table.
pub fn compute(cfg: RunConfig, command: Command) -> Result<(RunConfig, Table), RunError> {
    let cfg = cfg.resolve(command)?;
    let mut b = Builder {
        cfg: &cfg,
        table: Table::default(),
    };
    let res = dispatch(&mut b, command);
    let table = b.table;
    match res {
        Ok(()) => Ok((cfg, table)),
        Err(error) => {
            let mut partial = table;
            partial.push(Row::new().set("status", format!("error: {error}").as_str()));
            Err(RunError::Compute { error, partial })
        }
    }
}

fn dispatch(b: &mut Builder<'_>, command: Command) -> fbrd::Result<()> {
    let cfg = b.cfg;
    let t = &cfg.task;
    let opts = cfg.spectrum_options();
    let src = &cfg.source;
    let ns = list(&t.n_list);
    let ds = list(&t.d_grid);
    let eps = list(&t.epsilon_list);
    let seed = t.seed.unwrap_or_default();
    match command {
        Command::Spectrum => {
            for &n in &ns {
                b.item(|_| {
                    let s = eigen_spectrum(src, n, &opts)?;
                    let density = src.density();
                    Ok(s.eigenvalues()
                        .iter()
                        .enumerate()
                        .map(|(i, &e)| {
                            let mut r = Row::new()
                                .set("n", n)
                                .set("bound_kind", "eigenvalue")
                                .set("index", i + 1);
                            r.put("eigenvalue", e);
                            if let Some(dn) = &density {
                                r.put("psd_min", dn.theta_min());
                                r.put("psd_max", dn.theta_max());
                            }
                            r
                        })
                        .collect())
                })?;
            }
        }
        Command::Waterfill | Command::Rate => {
            for &n in &ns {
                for &d in &ds {
                    b.item(|_| {
                        let p = Problem::new(src, n, d, &opts)?;
                        let mut r = point_row(&p)
                            .set("bound_kind", command.name())
                            .set("active_count", p.solution.active_count)
                            .set("lambda_star", p.point.lambda_star);
                        if command == Command::Rate {
                            let th = AssumptionThresholds {
                                kappa0: t.kappa0.unwrap_or(0.0),
                                kappa1: t.kappa1.unwrap_or(0.0),
                                k_prime: t.k_prime.unwrap_or(f64::MAX),
                            };
                            let a = assumption_report(&p.spectrum, &p.solution, th)?;
                            let be = tilted_berry_esseen(&TiltedParams::from(&p.solution))?;
                            r.put("var_jprime", a.var_jprime);
                            r.put("mean_abs_jpp", a.mean_abs_jpp);
                            r.put("sixth_moment", a.sixth_moment);
                            r.put("variance_ok", a.variance_ok);
                            r.put("curvature_ok", a.curvature_ok);
                            r.put("moment_ok", a.moment_ok);
                            r.put("berry_esseen_m", be.m);
                        }
                        Ok(vec![r])
                    })?;
                }
            }
        }
        Command::Limit => {
            for &d in &ds {
                b.item(|_| {
                    let l = limiting_point(src, d)?;
                    Ok(vec![Row::new()
                        .set("d", d)
                        .set("theta", l.theta_star)
                        .rate(l.rate_limit)
                        .set("dispersion_nats2", l.dispersion_limit)
                        .set("bound_kind", "limit")
                        .set("d_max", l.d_max)])
                })?;
            }
        }
        Command::Approx | Command::Converse => {
            for &n in &ns {
                for &d in &ds {
                    let p = Problem::new(src, n, d, &opts)?;
                    for &e in &eps {
                        b.item(|_| {
                            if command == Command::Approx {
                                return Ok(vec![bound_row(&gaussian_approx_for(&p, e)?, &p)]);
                            }
                            let r = converse_rate_for(&p, e)?;
                            let mut row = bound_row(&r, &p);
                            if let Some(g) = r.trace.gamma_opt {
                                row.put("gamma_opt", g);
                            }
                            row.put("schedule_gamma", r.trace.schedule_gamma.unwrap_or(f64::NAN));
                            row.put("schedule_log_M_nats", r.trace.schedule_log_m.unwrap_or(f64::NAN));
                            row.put("ceiling_rate_nats", converse_ceiling(&p, e)?);
                            Ok(vec![row])
                        })?;
                    }
                }
            }
        }
        Command::Achievability => {
            let samples = t.samples.unwrap_or_default();
            for &n in &ns {
                for &d in &ds {
                    let p = Problem::new(src, n, d, &opts)?;
                    let sampler = AchievabilitySampler::new(&p, samples, seed)?;
                    for &e in &eps {
                        b.item(|_| {
                            let r = sampler.solve(&p, e)?;
                            let mut row = bound_row(&r, &p).set("seed", seed).set("samples", samples);
                            row.put("objective", r.trace.objective.unwrap_or(f64::NAN));
                            row.put("log_M_stderr", r.trace.log_m_stderr.unwrap_or(f64::NAN));
                            let mut rows = vec![row];
                            if let (Some(c0), Some(c)) = (t.c0, t.c) {
                                let k = FormulaConstants {
                                    c0,
                                    c,
                                    k: t.k.unwrap_or(0.0),
                                    berry_esseen: t.berry_esseen,
                                };
                                let f = achievability_formula_for(&p, e, k)?;
                                rows.push(bound_row(&f, &p).set("epsilon_n", f.trace.epsilon_n.unwrap_or(f64::NAN)));
                            }
                            Ok(rows)
                        })?;
                    }
                }
            }
        }
        Command::SimulateCodec => {
            let ms = list(&t.m_list);
            for &n in &ns {
                for &d in &ds {
                    b.item(|_| {
                        let mut c = CodecConfig::new(src.clone(), n, 1, d, t.trials.unwrap_or_default(), seed);
                        c.design_d = t.design_d;
                        c.options = opts;
                        let p = Problem::new(src, n, c.design_d.unwrap_or(d), &opts)?;
                        let est = run_random_code_multi(&c, &ms)?;
                        est.iter()
                            .map(|e| {
                                let log_m = (e.m as f64).ln();
                                Ok(point_row(&p)
                                    .set("d", d)
                                    .set("bound_kind", "codec")
                                    .set("log_M_nats", log_m)
                                    .rate(log_m / n as f64)
                                    .set("mc_stderr", e.stderr)
                                    .set("seed", seed)
                                    .set("m", e.m)
                                    .set("trials", e.trials)
                                    .set("failures", e.failures)
                                    .set("epsilon_hat", e.epsilon_hat)
                                    .set("ci_low", e.ci.0)
                                    .set("ci_high", e.ci.1)
                                    .set("design_d", c.design_d.unwrap_or(d)))
                            })
                            .collect()
                    })?;
                }
            }
        }
        Command::Aep => {
            let samples = t.samples.unwrap_or_default();
            let cand = (t.candidate_c0.unwrap_or(1.0), t.candidate_c.unwrap_or(0.0));
            for &d in &ds {
                b.item(|_| {
                    let rep = aep_experiment(src, d, &ns, samples, cand, seed, &opts)?;
                    let mut rows: Vec<Row> = rep
                        .records
                        .iter()
                        .map(|r| {
                            Row::new()
                                .set("n", r.n)
                                .set("d", d)
                                .set("bound_kind", "aep")
                                .set("seed", seed)
                                .set("samples", r.samples.len() + r.excluded)
                                .set("excluded", r.excluded)
                                .set("negative_gaps", r.negative_gaps)
                                .set("median_gap", r.median_gap)
                                .set("tail_gap", r.tail_gap)
                                .set("violation_fraction", r.violation_fraction)
                                .set("scaled_violation", r.scaled_violation)
                        })
                        .collect();
                    if let Some(f) = rep.fit {
                        rows.push(
                            Row::new()
                                .set("d", d)
                                .set("bound_kind", "aep_fit")
                                .set("seed", seed)
                                .set("fit_c0", f.c0)
                                .set("fit_c", f.c)
                                .set("fit_k", f.k)
                                .set("fit_rms_residual", f.rms_residual)
                                .set("fit_max_residual", f.max_residual)
                                .set("median_slope", f.median_slope),
                        );
                    }
                    Ok(rows)
                })?;
            }
        }
        Command::Sweep => {
            let samples = t.samples.unwrap_or_default();
            for &d in &ds {
                for &e in &eps {
                    b.item(|_| {
                        let rep = convergence_sweep(src, d, &ns, e, samples, seed, &opts)?;
                        let mut rows = Vec::new();
                        for (i, r) in rep.rows.iter().enumerate() {
                            let conc = rep.concentration.as_ref().map(|c| c.rows[i]);
                            let base = || {
                                let mut row = Row::new()
                                    .set("n", r.n)
                                    .set("d", d)
                                    .set("epsilon", e)
                                    .set("theta", r.theta)
                                    .set("dispersion_nats2", r.dispersion);
                                if let Some(c) = conc {
                                    row.put("theta_gap", c.theta_gap);
                                    row.put("rate_gap", c.rate_gap);
                                    row.put("dispersion_gap", c.dispersion_gap);
                                }
                                row
                            };
                            let nf = r.n as f64;
                            rows.push(
                                base()
                                    .rate(r.converse)
                                    .set("bound_kind", "converse")
                                    .set("log_M_nats", r.converse * nf),
                            );
                            rows.push(
                                base()
                                    .rate(r.approx)
                                    .set("bound_kind", "approx")
                                    .set("log_M_nats", r.approx * nf),
                            );
                            rows.push(
                                base()
                                    .rate(r.achievability)
                                    .set("bound_kind", "achievability")
                                    .set("log_M_nats", r.achievability * nf)
                                    .set("mc_stderr", r.achievability_stderr)
                                    .set("seed", seed)
                                    .set("scaled_remainder", r.scaled_remainder)
                                    .set("kappa", r.kappa),
                            );
                        }
                        let mut summary = Row::new()
                            .set("d", d)
                            .set("epsilon", e)
                            .set("bound_kind", "sweep_summary")
                            .set("seed", seed)
                            .set("remainder_ratio", rep.remainder_ratio)
                            .set("kappa", rep.kappa);
                        if let Some(s) = rep.remainder_slope {
                            summary.put("remainder_slope", s);
                        }
                        if let Some(c) = &rep.concentration {
                            for (name, v) in [
                                ("theta_slope", c.slopes.theta),
                                ("rate_slope", c.slopes.rate),
                                ("dispersion_slope", c.slopes.dispersion),
                            ] {
                                if let Some(v) = v {
                                    summary.put(name, v);
                                }
                            }
                        }
                        rows.push(summary);
                        Ok(rows)
                    })?;
                }
            }
        }
    }
    Ok(())
}

/// Where results go: explicit override, then the environment, then the config, then `<command>.csv|json`.
pub fn output_path(cfg: &RunConfig, command: Command, explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.output.path.clone())
        .unwrap_or_else(|| {
            let ext = match cfg.output.format {
                crate::config::Format::Csv => "csv",
                crate::config::Format::Json => "json",
            };
            PathBuf::from(format!("{}.{ext}", command.name()))
        })
}

/// Sidecar holding the resolved configuration next to a result file.
pub fn resolved_path(out: &std::path::Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".resolved.toml");
    PathBuf::from(s)
}

/// Run with an optional dedicated thread pool, writing the result file and its resolved config.
pub fn run(
    cfg: RunConfig,
    command: Command,
    threads: Option<usize>,
    explicit_output: Option<PathBuf>,
) -> Result<PathBuf, RunError> {
    let out = output_path(&cfg, command, explicit_output);
    let format = cfg.output.format;
    let computed = match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build().map_err(|e| {
                RunError::Config(ConfigError {
                    field: "--threads".into(),
                    message: e.to_string(),
                })
            })?;
            pool.install(|| compute(cfg.clone(), command))
        }
        None => compute(cfg.clone(), command),
    };
    match computed {
        Ok((resolved, table)) => {
            write_outputs(&out, &table.encode(format, &resolved), &resolved)?;
            Ok(out)
        }
        Err(RunError::Compute { error, partial }) => {
            write_outputs(&out, &partial.encode(format, &cfg), &cfg)?;
            Err(RunError::Compute { error, partial })
        }
        Err(e) => Err(e),
    }
}

fn write_outputs(out: &std::path::Path, bytes: &[u8], cfg: &RunConfig) -> Result<(), RunError> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(RunError::Io)?;
    }
    std::fs::write(out, bytes).map_err(RunError::Io)?;
    std::fs::write(resolved_path(out), cfg.to_toml()).map_err(RunError::Io)?;
    Ok(())
}
