//! Ground-truth Monte Carlo: random codes, the lossy AEP gap, convergence sweeps.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{ball_log_probability, converse_rate_for, gaussian_approx_for, AchievabilitySampler};
use crate::error::{domain, Error, Result};
use crate::numeric::fit::{line_fit, loglog_slope};
use crate::numeric::stats::wilson_interval;
use crate::rng::{stream, Purpose};
use crate::spectrum::{eigen_spectrum, SourceSpec, SpectrumOptions};
use crate::tilted::{sample_source, tilted_info, TiltedParams};
use crate::waterfill::{concentration_report, solve_water_level, ConcentrationReport, Problem};

pub const MIN_TRIALS: u64 = 1_000;
/// Upper limit on `n·M`.
pub const MEMORY_GUARD: u64 = 1 << 26;
const WILSON_Z: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub n: usize,
    pub m: u64,
    /// Excess-distortion threshold.
    pub d: f64,
    /// Distortion used to build the codeword distribution; defaults to `d`.
    #[serde(default)]
    pub design_d: Option<f64>,
    pub source: SourceSpec,
    pub trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub options: SpectrumOptions,
}

impl CodecConfig {
    pub fn new(source: SourceSpec, n: usize, m: u64, d: f64, trials: u64, seed: u64) -> Self {
        Self {
            n,
            m,
            d,
            design_d: None,
            source,
            trials,
            seed,
            options: SpectrumOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_for(self.m)
    }

    fn validate_for(&self, m_max: u64) -> Result<()> {
        if m_max < 1 {
            return Err(Error::Config("codebook size M must be at least 1".into()));
        }
        if self.trials < MIN_TRIALS {
            return Err(Error::Config(format!(
                "trials must be at least {MIN_TRIALS}, got {}",
                self.trials
            )));
        }
        if (self.n as u64).saturating_mul(m_max) > MEMORY_GUARD {
            return Err(Error::Config(format!(
                "n·M = {}·{m_max} exceeds the guard 2^26",
                self.n
            )));
        }
        if !(self.d >= 0.0) || !self.d.is_finite() {
            return domain(format!("distortion must be finite and nonnegative, got {}", self.d));
        }
        self.source.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecEstimate {
    pub m: u64,
    pub trials: u64,
    pub failures: u64,
    pub epsilon_hat: f64,
    /// Binomial standard error `√(ε̂(1 − ε̂)/trials)`.
    pub stderr: f64,
    /// Wilson 95% interval.
    pub ci: (f64, f64),
}

impl CodecEstimate {
    fn new(m: u64, trials: u64, failures: u64) -> Self {
        let p = failures as f64 / trials as f64;
        Self {
            m,
            trials,
            failures,
            epsilon_hat: p,
            stderr: (p * (1.0 - p) / trials as f64).sqrt(),
            ci: wilson_interval(failures, trials, WILSON_Z),
        }
    }
}

/// Excess-distortion probability of a random Gaussian codebook with minimum-distance encoding.
pub fn run_random_code(config: &CodecConfig) -> Result<CodecEstimate> {
    Ok(run_random_code_multi(config, &[config.m])?[0])
}

/// One simulation shared by several codebook sizes: the size-`M` codebook is a prefix of every larger one.
pub fn run_random_code_multi(config: &CodecConfig, sizes: &[u64]) -> Result<Vec<CodecEstimate>> {
    let m_max = sizes
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::Config("no codebook sizes given".into()))?;
    config.validate_for(m_max)?;
    if sizes.contains(&0) {
        return Err(Error::Config("codebook size M must be at least 1".into()));
    }
    let spectrum = eigen_spectrum(&config.source, config.n, &config.options)?;
    let design = solve_water_level(&spectrum, config.design_d.unwrap_or(config.d))?;
    let n = config.n;
    let budget = n as f64 * config.d;
    let hits: Vec<Option<u64>> = (0..config.trials)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |x, trial| {
                let mut src = stream(config.seed, Purpose::Source, trial);
                sample_source(&mut src, &design.per_index, x);
                let mut cb = stream(config.seed, Purpose::Codebook, trial);
                first_hit(x, &design.per_index, budget, m_max, &mut cb)
            },
        )
        .collect();
    Ok(sizes
        .iter()
        .map(|&m| {
            let failures = hits.iter().filter(|h| h.is_none_or(|j| j > m)).count() as u64;
            CodecEstimate::new(m, config.trials, failures)
        })
        .collect())
}

/// 1-based index of the first codeword within `budget`, drawing codewords lazily.
///
/// A codeword is abandoned as soon as its partial distance exceeds the budget; the
/// next codeword starts at the next unused stream value.
fn first_hit<R: Rng>(
    x: &[f64],
    per_index: &[crate::waterfill::IndexAllocation],
    budget: f64,
    m_max: u64,
    rng: &mut R,
) -> Option<u64> {
    let sd: Vec<f64> = per_index.iter().map(|p| p.nu.sqrt()).collect();
    'codeword: for j in 1..=m_max {
        let mut dist = 0.0;
        for (xi, s) in x.iter().zip(&sd) {
            let z: f64 = rng.sample(StandardNormal);
            let e = xi - s * z;
            dist += e * e;
            if dist > budget {
                continue 'codeword;
            }
        }
        return Some(j);
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AepSample {
    /// `ȷ(X, d)` in nats.
    pub tilted: f64,
    /// `−ln P_{Y*}(B(X, d))`.
    pub neg_ln_ball: f64,
    pub gap: f64,
}

/// Tilted information and ball probability for one source realisation.
pub fn aep_sample(x: &[f64], problem: &Problem) -> Result<AepSample> {
    let params = TiltedParams::from(&problem.solution);
    let tilted = tilted_info(x, &params)?;
    let neg_ln_ball = -ball_log_probability(x, &problem.solution)?;
    Ok(AepSample {
        tilted,
        neg_ln_ball,
        gap: neg_ln_ball - tilted,
    })
}

/// Ball probabilities below this are excluded from the gap statistics.
pub const UNDERFLOW: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AepRecord {
    pub n: usize,
    pub samples: Vec<AepSample>,
    /// Samples whose ball probability fell below 1e-300.
    pub excluded: usize,
    pub negative_gaps: usize,
    pub median_gap: f64,
    /// Empirical `1 − 1/√n` quantile of the gap.
    pub tail_gap: f64,
    /// Fraction with `gap > C₀ ln n + c` for the candidate constants.
    pub violation_fraction: f64,
    /// `√n` times the violation fraction, to compare against `K`.
    pub scaled_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AepFit {
    pub c0: f64,
    pub c: f64,
    /// Smallest `K` with violation fraction `≤ K/√n` at every `n` under the fitted constants.
    pub k: f64,
    /// Root-mean-square of `tail_gap − (C₀ ln n + c)`.
    pub rms_residual: f64,
    pub max_residual: f64,
    /// Least-squares slope of the median gap against `ln n`.
    pub median_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AepReport {
    pub candidate: (f64, f64),
    pub records: Vec<AepRecord>,
    /// Empirical constants; these are fits, not proven values.
    pub fit: Option<AepFit>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let k = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

pub fn aep_experiment(
    source: &SourceSpec,
    d: f64,
    n_list: &[usize],
    samples: usize,
    candidate: (f64, f64),
    seed: u64,
    opts: &SpectrumOptions,
) -> Result<AepReport> {
    if samples < 10_000 {
        return domain(format!(
            "the AEP experiment needs at least 10000 samples per n, got {samples}"
        ));
    }
    if n_list.is_empty() {
        return domain("no blocklengths given");
    }
    let (c0, c) = candidate;
    let mut records = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let p = Problem::new(source, n, d, opts)?;
        let all = (0..samples as u64)
            .into_par_iter()
            .map_init(
                || vec![0.0; n],
                |x, i| {
                    let mut rng = stream(seed, Purpose::Source, i);
                    sample_source(&mut rng, &p.solution.per_index, x);
                    aep_sample(x, &p)
                },
            )
            .collect::<Result<Vec<_>>>()?;
        let limit = -UNDERFLOW.ln();
        let (kept, dropped): (Vec<_>, Vec<_>) = all.into_iter().partition(|s| s.neg_ln_ball <= limit);
        if kept.is_empty() {
            return Err(Error::Consistency(format!(
                "every ball probability underflowed at n = {n}"
            )));
        }
        let mut gaps: Vec<f64> = kept.iter().map(|s| s.gap).collect();
        gaps.sort_by(f64::total_cmp);
        let nf = n as f64;
        let threshold = c0 * nf.ln() + c;
        let violation_fraction = gaps.iter().filter(|&&g| g > threshold).count() as f64 / gaps.len() as f64;
        records.push(AepRecord {
            n,
            excluded: dropped.len(),
            negative_gaps: gaps.iter().filter(|&&g| g < 0.0).count(),
            median_gap: quantile(&gaps, 0.5),
            tail_gap: quantile(&gaps, 1.0 - 1.0 / nf.sqrt()),
            violation_fraction,
            scaled_violation: violation_fraction * nf.sqrt(),
            samples: kept,
        });
    }
    let fit = (records.len() >= 2).then(|| fit_aep(&records)).transpose()?;
    Ok(AepReport {
        candidate,
        records,
        fit,
    })
}

/// `C₀` from the slope of the tail quantile against `ln n` (clamped at 0), then the smallest `c`
/// keeping every tail quantile under `C₀ ln n + c`.
fn fit_aep(records: &[AepRecord]) -> Result<AepFit> {
    let ln_n: Vec<f64> = records.iter().map(|r| (r.n as f64).ln()).collect();
    let tail: Vec<f64> = records.iter().map(|r| r.tail_gap).collect();
    let median: Vec<f64> = records.iter().map(|r| r.median_gap).collect();
    let c0 = line_fit(&ln_n, &tail)?.slope.max(0.0);
    let c = tail
        .iter()
        .zip(&ln_n)
        .map(|(q, l)| q - c0 * l)
        .fold(f64::NEG_INFINITY, f64::max);
    let residuals: Vec<f64> = tail.iter().zip(&ln_n).map(|(q, l)| q - c0 * l - c).collect();
    let rms_residual = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    let max_residual = residuals.iter().map(|r| r.abs()).fold(0.0, f64::max);
    let k = records
        .iter()
        .map(|r| {
            let t = c0 * (r.n as f64).ln() + c;
            let v = r.samples.iter().filter(|s| s.gap > t).count() as f64 / r.samples.len() as f64;
            v * (r.n as f64).sqrt()
        })
        .fold(0.0, f64::max);
    let median_slope = line_fit(&ln_n, &median)?.slope;
    Ok(AepFit {
        c0,
        c,
        k,
        rms_residual,
        max_residual,
        median_slope,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub theta: f64,
    pub rate: f64,
    pub dispersion: f64,
    pub approx: f64,
    pub converse: f64,
    pub achievability: f64,
    pub achievability_stderr: f64,
    /// `(achievability − converse)·n / ln n`.
    pub scaled_remainder: f64,
    /// Smallest `κ` placing the approximation inside the sandwich widened by `κ ln n / n`.
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub epsilon: f64,
    pub samples: usize,
    pub seed: u64,
    pub concentration: Option<ConcentrationReport>,
    pub rows: Vec<SweepRow>,
    /// Max over min of the scaled remainder.
    pub remainder_ratio: f64,
    pub kappa: f64,
    /// Log-log slope of `achievability − converse` against `n`.
    pub remainder_slope: Option<f64>,
}

impl SweepReport {
    pub fn sandwich_holds(&self) -> bool {
        self.rows.iter().all(|r| r.converse <= r.achievability)
    }
}

/// Minimum `κ ≥ 0` with `converse − κ ln n/n ≤ approx ≤ achievability + κ ln n/n`.
pub fn centering_kappa(n: usize, approx: f64, converse: f64, achievability: f64) -> f64 {
    let scale = (n as f64).ln() / n as f64;
    ((converse - approx) / scale)
        .max((approx - achievability) / scale)
        .max(0.0)
}

/// Per-`n` concentration gaps and the converse / approximation / achievability rates.
#[allow(clippy::too_many_arguments)]
pub fn convergence_sweep(
    source: &SourceSpec,
    d: f64,
    n_list: &[usize],
    epsilon: f64,
    samples: usize,
    seed: u64,
    opts: &SpectrumOptions,
) -> Result<SweepReport> {
    if n_list.len() < 3 {
        return Err(Error::SlopeUnavailable(format!(
            "{} blocklengths given, at least 3 needed",
            n_list.len()
        )));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] < 2 {
        return domain("blocklengths must be strictly increasing and at least 2");
    }
    let concentration = match source {
        SourceSpec::GaussMarkov { .. } => Some(concentration_report(source, d, n_list, opts)?),
        SourceSpec::Explicit { .. } => None,
    };
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let p = Problem::new(source, n, d, opts)?;
        let approx = gaussian_approx_for(&p, epsilon)?.rate;
        let converse = converse_rate_for(&p, epsilon)?.rate;
        let ach = AchievabilitySampler::new(&p, samples, seed)?.solve(&p, epsilon)?;
        let nf = n as f64;
        rows.push(SweepRow {
            n,
            theta: p.solution.theta,
            rate: p.point.rate,
            dispersion: p.point.dispersion,
            approx,
            converse,
            achievability: ach.rate,
            achievability_stderr: ach.trace.log_m_stderr.map_or(f64::NAN, |s| s / nf),
            scaled_remainder: (ach.rate - converse) * nf / nf.ln(),
            kappa: centering_kappa(n, approx, converse, ach.rate),
        });
    }
    let scaled: Vec<f64> = rows.iter().map(|r| r.scaled_remainder).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let remainder_ratio = if min > 0.0 { max / min } else { f64::INFINITY };
    let kappa = rows.iter().map(|r| r.kappa).fold(0.0, f64::max);
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let widths: Vec<f64> = rows.iter().map(|r| r.achievability - r.converse).collect();
    let remainder_slope = loglog_slope(&ns, &widths).ok();
    Ok(SweepReport {
        epsilon,
        samples,
        seed,
        concentration,
        rows,
        remainder_ratio,
        kappa,
        remainder_slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iid() -> SourceSpec {
        SourceSpec::gauss_markov(0.0, 1.0).unwrap()
    }

    #[test]
    fn config_guards() {
        let mut c = CodecConfig::new(iid(), 8, 10, 0.25, 1000, 1);
        assert!(c.validate().is_ok());
        c.trials = 999;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.trials = 1000;
        c.m = 1 << 24;
        assert!(matches!(run_random_code(&c), Err(Error::Config(_))));
        c.m = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_distortion_always_fails() {
        let mut c = CodecConfig::new(iid(), 4, 50, 0.0, 1000, 3);
        c.design_d = Some(0.25);
        let e = run_random_code(&c).unwrap();
        assert_eq!(e.failures, 1000);
        assert_eq!(e.epsilon_hat, 1.0);
    }

    #[test]
    fn huge_budget_never_fails() {
        // (1/n)Σ(X_i − Y_i)² with one codeword is a scaled χ²₄ with mean 1; 20 is far beyond its upper quantiles.
        let mut c = CodecConfig::new(iid(), 4, 1, 20.0, 2000, 5);
        c.design_d = Some(0.25);
        assert_eq!(run_random_code(&c).unwrap().failures, 0);
    }

    #[test]
    fn coupled_sizes_are_monotone_and_deterministic() {
        let c = CodecConfig::new(iid(), 4, 64, 0.25, 2000, 11);
        let sizes = [1, 2, 4, 8, 16, 32, 64];
        let a = run_random_code_multi(&c, &sizes).unwrap();
        for w in a.windows(2) {
            assert!(w[1].failures <= w[0].failures);
        }
        let single = run_random_code(&CodecConfig { m: 16, ..c.clone() }).unwrap();
        assert_eq!(single, a[4]);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| run_random_code_multi(&c, &sizes).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn single_letter_aep_closed_form() {
        let p = Problem::new(&iid(), 1, 0.25, &SpectrumOptions::default()).unwrap();
        let s = aep_sample(&[0.0], &p).unwrap();
        assert!((s.tilted - (2f64.ln() - 0.5)).abs() < 1e-14);
        let ball = libm::erf((1.0f64 / 6.0).sqrt());
        assert!(
            (s.neg_ln_ball + ball.ln()).abs() < 1e-10,
            "{} vs {}",
            s.neg_ln_ball,
            -ball.ln()
        );
        assert!((s.gap - (-ball.ln() - 2f64.ln() + 0.5)).abs() < 1e-10);
    }

    #[test]
    fn centering_kappa_cases() {
        assert_eq!(centering_kappa(16, 0.5, 0.4, 0.6), 0.0);
        let k = centering_kappa(16, 0.3, 0.4, 0.6);
        assert!((0.4 - k * 16f64.ln() / 16.0 - 0.3).abs() < 1e-15);
    }
}
