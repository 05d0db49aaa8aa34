//! Reverse water-filling at finite blocklength and in the spectral limit.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numeric::fit::loglog_slope;
use crate::spectrum::{eigen_spectrum, EigenSpectrum, SourceSpec, SpectrumOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexAllocation {
    pub sigma2: f64,
    /// Reproduction variance `max(0, σ² − θ)`.
    pub nu: f64,
    /// Per-letter distortion `min(θ, σ²)`.
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfillSolution {
    pub theta: f64,
    pub d_target: f64,
    pub per_index: Vec<IndexAllocation>,
    pub active_count: usize,
}

impl WaterfillSolution {
    fn at(spectrum: &EigenSpectrum, theta: f64, d_target: f64) -> Self {
        let per_index: Vec<_> = spectrum
            .eigenvalues()
            .iter()
            .map(|&s| IndexAllocation {
                sigma2: s,
                nu: if s > theta { s - theta } else { 0.0 },
                d: theta.min(s),
            })
            .collect();
        let active_count = per_index.iter().filter(|p| p.nu > 0.0).count();
        Self {
            theta,
            d_target,
            per_index,
            active_count,
        }
    }

    pub fn n(&self) -> usize {
        self.per_index.len()
    }

    /// `(1/n) Σ d_i`.
    pub fn distortion(&self) -> f64 {
        self.per_index.iter().map(|p| p.d).sum::<f64>() / self.n() as f64
    }
}

fn g_n(eigs: &[f64], theta: f64) -> f64 {
    eigs.iter().map(|&s| s.min(theta)).sum::<f64>() / eigs.len() as f64
}

/// Mean of `f` over sorted values, evaluated once per run of equal values.
/// A constant spectrum then gives exactly `f(σ²)` for every `n`.
fn grouped_mean(sorted: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut total = 0.0;
    for run in sorted.chunk_by(|a, b| a == b) {
        total += (run.len() as f64 / n) * f(run[0]);
    }
    total
}

/// Water level `θ` with `(1/n) Σ min(θ, σ_i²) = d`.
pub fn solve_water_level(spectrum: &EigenSpectrum, d: f64) -> Result<WaterfillSolution> {
    if !(d > 0.0) || !d.is_finite() {
        return domain(format!("distortion must be positive and finite, got {d}"));
    }
    let d_max = spectrum.mean();
    if d >= d_max {
        return Err(Error::DistortionTooLarge { d, d_max });
    }
    let eigs = spectrum.eigenvalues();
    let n = eigs.len();
    let (mut lo, mut hi) = (0.0, spectrum.max());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g_n(eigs, mid) < d {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let mut theta = 0.5 * (lo + hi);
    // g_n is linear between consecutive eigenvalues: solve exactly for the
    // active count whose segment contains the root.
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + eigs[k];
    }
    for k in 1..=n {
        let exact = (d - suffix[k] / n as f64) * (n as f64 / k as f64);
        let below = if k < n { eigs[k] } else { 0.0 };
        if exact > 0.0 && exact >= below && exact < eigs[k - 1] {
            if (exact - theta).abs() <= 1e-9 * theta {
                theta = exact;
            }
            break;
        }
    }
    let residual = (g_n(eigs, theta) - d).abs() / d;
    if residual > 1e-12 {
        return Err(Error::Convergence {
            what: "water level",
            residual,
        });
    }
    Ok(WaterfillSolution::at(spectrum, theta, d))
}

/// Nth-order rate and dispersion at one distortion level, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateDispersionPoint {
    pub n: usize,
    pub d: f64,
    /// Nats per sample.
    pub rate: f64,
    /// Squared nats per sample.
    pub dispersion: f64,
    pub lambda_star: f64,
}

impl RateDispersionPoint {
    pub fn rate_bits(&self) -> f64 {
        self.rate / LN_2
    }

    pub fn dispersion_bits2(&self) -> f64 {
        self.dispersion / (LN_2 * LN_2)
    }
}

pub fn rate_dispersion(spectrum: &EigenSpectrum, solution: &WaterfillSolution) -> Result<RateDispersionPoint> {
    let matches = spectrum.n() == solution.n()
        && spectrum
            .eigenvalues()
            .iter()
            .zip(&solution.per_index)
            .all(|(s, p)| *s == p.sigma2);
    if !matches {
        return Err(Error::Consistency(
            "water-filling solution was computed from a different spectrum".into(),
        ));
    }
    let theta = solution.theta;
    let eigs = spectrum.eigenvalues();
    let rate = grouped_mean(eigs, |s| (0.5 * (s / theta).ln()).max(0.0));
    let dispersion = grouped_mean(eigs, |s| 0.5 * (s / theta).powi(2).min(1.0));
    Ok(RateDispersionPoint {
        n: spectrum.n(),
        d: solution.d_target,
        rate,
        dispersion,
        lambda_star: 0.5 / theta,
    })
}

/// Spectrum, water-filling and rate/dispersion for one `(source, n, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub spectrum: EigenSpectrum,
    pub solution: WaterfillSolution,
    pub point: RateDispersionPoint,
}

impl Problem {
    pub fn new(source: &SourceSpec, n: usize, d: f64, opts: &SpectrumOptions) -> Result<Self> {
        Self::from_spectrum(eigen_spectrum(source, n, opts)?, d)
    }

    pub fn from_spectrum(spectrum: EigenSpectrum, d: f64) -> Result<Self> {
        let solution = solve_water_level(&spectrum, d)?;
        let point = rate_dispersion(&spectrum, &solution)?;
        Ok(Self {
            spectrum,
            solution,
            point,
        })
    }

    pub fn n(&self) -> usize {
        self.spectrum.n()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitPoint {
    pub d: f64,
    pub theta_star: f64,
    pub rate_limit: f64,
    pub dispersion_limit: f64,
    pub d_max: f64,
}

/// Spectral water level and the limiting rate and dispersion.
pub fn limiting_point(source: &SourceSpec, d: f64) -> Result<LimitPoint> {
    let Some(density) = source.density() else {
        return domain("limiting_point needs a Gauss-Markov source");
    };
    let d_max = source.stationary_variance().expect("gauss-markov");
    if !(d > 0.0 && d < d_max) {
        return domain(format!("distortion must lie in (0, {d_max}), got {d}"));
    }
    let g = |theta: f64| density.average(|s| s.min(theta), &[theta], 1e-15);
    let (mut lo, mut hi) = (0.0, density.theta_max());
    if d <= density.theta_min() {
        // Every frequency is active, so g(θ) = θ.
        lo = d;
        hi = d;
    }
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid)? < d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let residual = (g(theta)? - d).abs();
    if residual > 1e-10 {
        return Err(Error::Convergence {
            what: "limiting water level",
            residual,
        });
    }
    let rate = density.average(|s| (0.5 * (s / theta).ln()).max(0.0), &[theta], 1e-15)?;
    let dispersion = density.average(|s| 0.5 * (s / theta).powi(2).min(1.0), &[theta], 1e-15)?;
    Ok(LimitPoint {
        d,
        theta_star: theta,
        rate_limit: rate,
        dispersion_limit: dispersion,
        d_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub n: usize,
    pub theta_n: f64,
    pub rate_n: f64,
    pub dispersion_n: f64,
    pub theta_gap: f64,
    pub rate_gap: f64,
    pub dispersion_gap: f64,
}

/// Log-log slopes of the gap sequences; `None` where a gap is not positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSlopes {
    pub theta: Option<f64>,
    pub rate: Option<f64>,
    pub dispersion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub limit: LimitPoint,
    pub rows: Vec<ConcentrationRow>,
    pub slopes: GapSlopes,
}

pub fn concentration_report(
    source: &SourceSpec,
    d: f64,
    n_list: &[usize],
    opts: &SpectrumOptions,
) -> Result<ConcentrationReport> {
    if n_list.len() < 3 {
        return Err(Error::SlopeUnavailable(format!(
            "{} blocklengths given, at least 3 needed",
            n_list.len()
        )));
    }
    let limit = limiting_point(source, d)?;
    let rows = n_list
        .iter()
        .map(|&n| {
            let p = Problem::new(source, n, d, opts)?;
            Ok(ConcentrationRow {
                n,
                theta_n: p.solution.theta,
                rate_n: p.point.rate,
                dispersion_n: p.point.dispersion,
                theta_gap: (p.solution.theta - limit.theta_star).abs(),
                rate_gap: (p.point.rate - limit.rate_limit).abs(),
                dispersion_gap: (p.point.dispersion - limit.dispersion_limit).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let slope = |f: fn(&ConcentrationRow) -> f64| {
        let ys: Vec<f64> = rows.iter().map(f).collect();
        loglog_slope(&ns, &ys).ok()
    };
    let slopes = GapSlopes {
        theta: slope(|r| r.theta_gap),
        rate: slope(|r| r.rate_gap),
        dispersion: slope(|r| r.dispersion_gap),
    };
    Ok(ConcentrationReport { limit, rows, slopes })
}

/// `λ*` next to two secant bounds built from another distortion level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaCheck {
    pub lambda_star: f64,
    /// `R_n(d) / (d0 − d)` for `d0 > d`.
    pub right_bound: Option<f64>,
    /// `R_n(d1) / (d − d1)` for `d1 < d`; always valid by convexity.
    pub left_bound: Option<f64>,
}

impl LambdaCheck {
    pub fn right_holds(&self) -> Option<bool> {
        self.right_bound.map(|b| self.lambda_star <= b)
    }

    pub fn left_holds(&self) -> Option<bool> {
        self.left_bound.map(|b| self.lambda_star <= b * (1.0 + 1e-12))
    }
}

/// Compare `λ* = 1/(2θ)` at `d` with the secant bound obtained from level `other`.
pub fn lambda_check(spectrum: &EigenSpectrum, d: f64, other: f64) -> Result<LambdaCheck> {
    let here = Problem::from_spectrum(spectrum.clone(), d)?;
    let lambda_star = here.point.lambda_star;
    if other > d {
        Ok(LambdaCheck {
            lambda_star,
            right_bound: Some(here.point.rate / (other - d)),
            left_bound: None,
        })
    } else if other < d {
        let there = Problem::from_spectrum(spectrum.clone(), other)?;
        Ok(LambdaCheck {
            lambda_star,
            right_bound: None,
            left_bound: Some(there.point.rate / (d - other)),
        })
    } else {
        domain("comparison level must differ from d")
    }
}
