//! Gaussian approximation, converse and achievability bounds on `R(n, d, ε)`.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
pub use crate::numeric::normal::q_inverse;
use crate::numeric::stats::mean_stderr;
use crate::qform::{QuadraticForm, Tails};
use crate::rng::{stream, Purpose};
use crate::spectrum::{EigenSpectrum, SourceSpec, SpectrumOptions};
use crate::tilted::{sample_source, tilted_berry_esseen, TiltedParams};
use crate::waterfill::{Problem, WaterfillSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub n: usize,
    pub d: f64,
    pub epsilon: f64,
    pub source: SourceSpec,
    #[serde(default)]
    pub options: SpectrumOptions,
}

impl BoundQuery {
    pub fn new(source: SourceSpec, n: usize, d: f64, epsilon: f64) -> Result<Self> {
        let q = Self {
            n,
            d,
            epsilon,
            source,
            options: SpectrumOptions::default(),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_options(mut self, options: SpectrumOptions) -> Self {
        self.options = options;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return domain(format!("epsilon must lie in (0,1), got {}", self.epsilon));
        }
        self.source.validate()
    }

    pub fn problem(&self) -> Result<Problem> {
        self.validate()?;
        Problem::new(&self.source, self.n, self.d, &self.options)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Approx,
    Converse,
    Achievability,
    AchievabilityFormula,
}

impl BoundKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundKind::Approx => "approx",
            BoundKind::Converse => "converse",
            BoundKind::Achievability => "achievability",
            BoundKind::AchievabilityFormula => "achievability_formula",
        }
    }
}

/// How a bound was found. All logarithmic quantities in nats.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchTrace {
    /// Maximising `γ` at the returned `log M` (converse).
    pub gamma_opt: Option<f64>,
    /// Final bisection bracket on `log M`.
    pub bracket: Option<(f64, f64)>,
    pub iterations: usize,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    /// Fixed schedule `γ = ½ ln n` and the converse it yields.
    pub schedule_gamma: Option<f64>,
    pub schedule_log_m: Option<f64>,
    /// Standard errors added to the Monte Carlo objective before comparing with ε.
    pub confidence_sigmas: Option<f64>,
    /// Monte Carlo objective at the returned `M`.
    pub objective: Option<f64>,
    /// Delta-method standard error of the returned `log M`.
    pub log_m_stderr: Option<f64>,
    /// `ε_n` used by the rate formula.
    pub epsilon_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub kind: BoundKind,
    pub n: usize,
    pub d: f64,
    pub epsilon: f64,
    pub theta: f64,
    /// Nats per sample, `log_m / n`.
    pub rate: f64,
    /// Nats.
    pub log_m: f64,
    /// Standard error of the Monte Carlo excess-probability estimate; 0 for analytic kinds.
    pub mc_stderr: f64,
    pub trace: SearchTrace,
}

impl BoundResult {
    fn analytic(kind: BoundKind, problem: &Problem, epsilon: f64, log_m: f64, trace: SearchTrace) -> Self {
        let n = problem.n();
        Self {
            kind,
            n,
            d: problem.point.d,
            epsilon,
            theta: problem.solution.theta,
            rate: log_m / n as f64,
            log_m,
            mc_stderr: 0.0,
            trace,
        }
    }

    pub fn rate_bits(&self) -> f64 {
        self.rate / LN_2
    }

    pub fn log_m_bits(&self) -> f64 {
        self.log_m / LN_2
    }
}

/// `R_n(d) + √(V_n(d)/n) Q⁻¹(ε)`.
pub fn gaussian_approx(query: &BoundQuery) -> Result<BoundResult> {
    let p = query.problem()?;
    gaussian_approx_for(&p, query.epsilon)
}

pub fn gaussian_approx_for(problem: &Problem, epsilon: f64) -> Result<BoundResult> {
    let n = problem.n() as f64;
    let rate = problem.point.rate + (problem.point.dispersion / n).sqrt() * q_inverse(epsilon)?;
    Ok(BoundResult::analytic(
        BoundKind::Approx,
        problem,
        epsilon,
        rate * n,
        SearchTrace::default(),
    ))
}

/// Law of `ȷ(X, d) = C + Σ w_i χ²₁` with `w_i = d_i / (2θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedDistribution {
    form: QuadraticForm,
    offset: f64,
    mean: f64,
    sd: f64,
}

impl TiltedDistribution {
    pub fn new(solution: &WaterfillSolution) -> Result<Self> {
        let params = TiltedParams::from(solution);
        let form = QuadraticForm::central(&params.weights())?;
        let (mean, var) = params.mean_variance();
        Ok(Self {
            form,
            offset: params.offset(),
            mean,
            sd: var.sqrt(),
        })
    }

    /// Smallest value the tilted information can take.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    pub fn tails(&self, t: f64) -> Result<Tails> {
        self.form.tails(t - self.offset)
    }

    /// `P[ȷ ≤ t]`.
    pub fn cdf(&self, t: f64) -> Result<f64> {
        Ok(self.tails(t)?.lower())
    }

    /// `P[ȷ ≥ t]`.
    pub fn sf(&self, t: f64) -> Result<f64> {
        Ok(self.tails(t)?.upper())
    }
}

fn check_pair(spectrum: &EigenSpectrum, solution: &WaterfillSolution) -> Result<()> {
    let ok = spectrum.n() == solution.n()
        && spectrum
            .eigenvalues()
            .iter()
            .zip(&solution.per_index)
            .all(|(s, p)| *s == p.sigma2);
    if ok {
        Ok(())
    } else {
        Err(Error::Consistency(
            "water-filling solution was computed from a different spectrum".into(),
        ))
    }
}

/// `P[ȷ(X, d) ≤ t]`.
pub fn tilted_cdf(spectrum: &EigenSpectrum, solution: &WaterfillSolution, t: f64) -> Result<f64> {
    check_pair(spectrum, solution)?;
    TiltedDistribution::new(solution)?.cdf(t)
}

/// `sup_{γ ≥ 0} P[ȷ ≥ L + γ] − e^{−γ}` and its maximiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverseValue {
    pub value: f64,
    pub gamma: f64,
}

const GAMMA_GRID: usize = 64;

/// Lower bound on the excess-distortion probability of any code with `log M = log_m`.
pub fn converse_excess(dist: &TiltedDistribution, n: usize, log_m: f64) -> Result<ConverseValue> {
    let g = |gamma: f64| -> Result<f64> { Ok(dist.sf(log_m + gamma)? - (-gamma).exp()) };
    let top = 20.0 * (n as f64).ln().max(1.0);
    let grid: Vec<f64> = (0..GAMMA_GRID)
        .map(|k| top * 10f64.powf(-4.0 * (1.0 - k as f64 / (GAMMA_GRID - 1) as f64)))
        .collect();
    let values = grid.iter().map(|&x| g(x)).collect::<Result<Vec<f64>>>()?;
    // Strict comparison keeps the smallest γ on ties.
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    let lo = if best == 0 { 0.0 } else { grid[best - 1] };
    let hi = if best + 1 == GAMMA_GRID { top } else { grid[best + 1] };
    let (gamma, value) = golden_max(&g, lo, hi, grid[best], values[best])?;
    Ok(ConverseValue { value, gamma })
}

/// Golden-section search for a maximum on `[a, b]`, never returning worse than `(x0, f0)`.
fn golden_max(f: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, x0: f64, f0: f64) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..60 {
        if (b - a) <= 1e-10 * (1.0 + b.abs()) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let (x, fx) = if fc >= fd { (c, fc) } else { (d, fd) };
    Ok(if fx > f0 { (x, fx) } else { (x0, f0) })
}

impl TiltedDistribution {
    /// `t` with `P[ȷ ≥ t] = p`.
    pub fn upper_quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return domain(format!("tail probability must lie in (0,1), got {p}"));
        }
        let target = p.ln();
        let mut lo = self.offset;
        let mut step = self.sd.max(1e-3);
        let mut hi = self.mean + step;
        while self.tails(hi)?.ln_upper > target {
            lo = hi;
            step *= 2.0;
            hi += step;
            if !hi.is_finite() {
                return Err(Error::Bracketing {
                    what: "tilted quantile",
                    detail: format!("p = {p}"),
                });
            }
        }
        for _ in 0..200 {
            if hi - lo <= 1e-13 * (1.0 + hi.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.tails(mid)?.ln_upper > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Largest `L` with `sup_γ P[ȷ ≥ L + γ] − e^{−γ} ≥ ε`, and the `γ` attaining it.
///
/// The condition holds iff `L ≤ t + ln(P[ȷ ≥ t] − ε)` for some `t`, so `L` is the
/// maximum of that function of `t` on `(−∞, t_ε)` with `P[ȷ ≥ t_ε] = ε`.
fn converse_threshold(dist: &TiltedDistribution, epsilon: f64) -> Result<(f64, f64, usize)> {
    let t_eps = dist.upper_quantile(epsilon)?;
    let width = t_eps - dist.offset();
    if !(width > 0.0) {
        return Err(Error::Bracketing {
            what: "converse log M",
            detail: format!("tail quantile {t_eps} not above the support edge {}", dist.offset()),
        });
    }
    let g = |s: f64| -> Result<f64> {
        let t = t_eps - width * s;
        let tail = dist.sf(t)? - epsilon;
        Ok(if tail > 0.0 { t + tail.ln() } else { f64::NEG_INFINITY })
    };
    // Offsets below t_ε, log-spaced from 1e-12 to the full width; larger s means smaller γ.
    let grid: Vec<f64> = (0..GAMMA_GRID)
        .map(|k| 10f64.powf(-12.0 * (1.0 - k as f64 / (GAMMA_GRID - 1) as f64)))
        .collect();
    let values = grid.iter().map(|&s| g(s)).collect::<Result<Vec<f64>>>()?;
    let mut best = GAMMA_GRID - 1;
    for k in (0..GAMMA_GRID).rev() {
        if values[k] > values[best] {
            best = k;
        }
    }
    if values[best] == f64::NEG_INFINITY {
        return Err(Error::Bracketing {
            what: "converse log M",
            detail: format!("epsilon = {epsilon} too close to the CDF plateau"),
        });
    }
    let lo = if best == 0 { 0.0 } else { grid[best - 1] };
    let hi = if best + 1 == GAMMA_GRID { 1.0 } else { grid[best + 1] };
    let (s, l) = golden_max(&g, lo, hi, grid[best], values[best])?;
    let gamma = -(dist.sf(t_eps - width * s)? - epsilon).ln();
    Ok((l, gamma.max(0.0), GAMMA_GRID + 60))
}

pub fn converse_rate(query: &BoundQuery) -> Result<BoundResult> {
    let p = query.problem()?;
    converse_rate_for(&p, query.epsilon)
}

pub fn converse_rate_for(problem: &Problem, epsilon: f64) -> Result<BoundResult> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return domain(format!("epsilon must lie in (0,1), got {epsilon}"));
    }
    let n = problem.n();
    let dist = TiltedDistribution::new(&problem.solution)?;
    let (log_m, gamma_opt, iterations) = converse_threshold(&dist, epsilon)?;
    let schedule_gamma = 0.5 * (n as f64).ln();
    let floor = epsilon + (-schedule_gamma).exp();
    let schedule_log_m = if floor < 1.0 {
        Some(dist.upper_quantile(floor)? - schedule_gamma)
    } else {
        None
    };
    let trace = SearchTrace {
        gamma_opt: Some(gamma_opt),
        iterations,
        schedule_gamma: Some(schedule_gamma),
        schedule_log_m,
        ..Default::default()
    };
    Ok(BoundResult::analytic(
        BoundKind::Converse,
        problem,
        epsilon,
        log_m,
        trace,
    ))
}

/// Lower bound on the excess-distortion probability of any code of size `m` (converse at fixed `log M`).
pub fn converse_epsilon(problem: &Problem, m: u64) -> Result<f64> {
    let dist = TiltedDistribution::new(&problem.solution)?;
    let v = converse_excess(&dist, problem.n(), (m as f64).ln())?.value;
    Ok(v.max(0.0))
}

/// Berry–Esseen ceiling on the converse: `R_n + √(V_n/n) Q⁻¹(ε − M_n/√n)`, infinite when vacuous.
pub fn converse_ceiling(problem: &Problem, epsilon: f64) -> Result<f64> {
    let be = tilted_berry_esseen(&TiltedParams::from(&problem.solution))?;
    let shifted = epsilon - be.bound(problem.n());
    if shifted <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let n = problem.n() as f64;
    Ok(problem.point.rate + (problem.point.dispersion / n).sqrt() * q_inverse(shifted.min(1.0 - 1e-16))?)
}

/// Quadratic form for the ball event `Σ (x_i − Y_i)² ≤ nd`, `Y_i ~ N(0, ν_i)`, and its threshold.
fn ball_form(x: &[f64], solution: &WaterfillSolution) -> Result<(QuadraticForm, f64)> {
    if x.len() != solution.n() {
        return domain(format!(
            "sample has length {}, solution has n = {}",
            x.len(),
            solution.n()
        ));
    }
    let mut weights = Vec::with_capacity(x.len());
    let mut nonc = Vec::with_capacity(x.len());
    let mut threshold = solution.n() as f64 * solution.d_target;
    for (xi, p) in x.iter().zip(&solution.per_index) {
        if p.nu > 0.0 {
            weights.push(p.nu);
            nonc.push(xi * xi / p.nu);
        } else {
            threshold -= xi * xi;
        }
    }
    Ok((QuadraticForm::new(&weights, &nonc)?, threshold))
}

/// `ln P_{Y*}(B(x, d))`.
pub fn ball_log_probability(x: &[f64], solution: &WaterfillSolution) -> Result<f64> {
    let (form, threshold) = ball_form(x, solution)?;
    if threshold < 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(form.tails(threshold)?.ln_lower)
}

/// `P_{Y*}(B(x, d))` under the water-filling output distribution.
pub fn ball_probability(x: &[f64], solution: &WaterfillSolution) -> Result<f64> {
    Ok(ball_log_probability(x, solution)?.exp())
}

/// Minimum outer sample count for the random-coding bound.
pub const MIN_SAMPLES: usize = 10_000;
const CONFIDENCE_SIGMAS: f64 = 3.0;
const LOG_M_RESOLUTION: f64 = 1e-3;

/// Ball log-probabilities of `samples` source draws, reusable across ε.
#[derive(Debug, Clone)]
pub struct AchievabilitySampler {
    n: usize,
    seed: u64,
    ln_ball: Vec<f64>,
}

impl AchievabilitySampler {
    pub fn new(problem: &Problem, samples: usize, seed: u64) -> Result<Self> {
        if samples < MIN_SAMPLES {
            return domain(format!(
                "achievability needs at least {MIN_SAMPLES} samples, got {samples}"
            ));
        }
        let sol = &problem.solution;
        let ln_ball = (0..samples as u64)
            .into_par_iter()
            .map_init(
                || vec![0.0; sol.n()],
                |x, i| {
                    let mut rng = stream(seed, Purpose::Source, i);
                    sample_source(&mut rng, &sol.per_index, x);
                    ball_log_probability(x, sol)
                },
            )
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self {
            n: problem.n(),
            seed,
            ln_ball,
        })
    }

    pub fn ln_ball(&self) -> &[f64] {
        &self.ln_ball
    }

    pub fn samples(&self) -> usize {
        self.ln_ball.len()
    }

    fn terms(&self, log_m: f64) -> Vec<f64> {
        self.ln_ball.iter().map(|&lp| (-(log_m + lp).exp()).exp()).collect()
    }

    /// Monte Carlo estimate and standard error of `E[exp(−M P(B(X, d)))]`.
    pub fn objective(&self, log_m: f64) -> (f64, f64) {
        mean_stderr(&self.terms(log_m))
    }

    /// Monte Carlo estimate of `E[(1 − P(B(X, d)))^M]`, the random-coding error itself.
    pub fn random_coding_error(&self, log_m: f64) -> (f64, f64) {
        let m = log_m.exp();
        let t: Vec<f64> = self.ln_ball.iter().map(|&lp| (m * (-lp.exp()).ln_1p()).exp()).collect();
        mean_stderr(&t)
    }

    fn feasible(&self, log_m: f64, eps: f64) -> bool {
        let (m, se) = self.objective(log_m);
        m + CONFIDENCE_SIGMAS * se <= eps
    }

    /// Smallest `log M` (to 1e-3 nats) whose objective plus three standard errors is at most ε.
    pub fn solve(&self, problem: &Problem, epsilon: f64) -> Result<BoundResult> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return domain(format!("epsilon must lie in (0,1), got {epsilon}"));
        }
        if problem.n() != self.n {
            return Err(Error::Consistency(
                "sampler was built for a different blocklength".into(),
            ));
        }
        let mut lo = 0.0;
        let mut hi;
        let mut iterations = 0;
        if self.feasible(lo, epsilon) {
            hi = lo;
        } else {
            let mut step = 1.0_f64.max(problem.point.rate * self.n as f64);
            hi = lo + step;
            while !self.feasible(hi, epsilon) {
                lo = hi;
                step *= 2.0;
                hi += step;
                if hi > 1e5 {
                    return Err(self.insufficient(epsilon, hi));
                }
            }
            while hi - lo > LOG_M_RESOLUTION {
                let mid = 0.5 * (lo + hi);
                if self.feasible(mid, epsilon) {
                    hi = mid;
                } else {
                    lo = mid;
                }
                iterations += 1;
            }
        }
        let (mean, se) = self.objective(hi);
        if CONFIDENCE_SIGMAS * se > 0.5 * epsilon {
            return Err(self.insufficient(epsilon, hi));
        }
        let terms = self.terms(hi);
        let m = hi.exp();
        let slope = self
            .ln_ball
            .iter()
            .zip(&terms)
            .map(|(&lp, &t)| t * m * lp.exp())
            .sum::<f64>()
            / terms.len() as f64;
        let trace = SearchTrace {
            bracket: Some((lo, hi)),
            iterations,
            samples: Some(self.samples()),
            seed: Some(self.seed),
            confidence_sigmas: Some(CONFIDENCE_SIGMAS),
            objective: Some(mean),
            log_m_stderr: (slope > 0.0).then(|| se / slope),
            ..Default::default()
        };
        let mut r = BoundResult::analytic(BoundKind::Achievability, problem, epsilon, hi, trace);
        r.mc_stderr = se;
        Ok(r)
    }

    fn insufficient(&self, epsilon: f64, log_m: f64) -> Error {
        let (_, se) = self.objective(log_m);
        let n = self.samples() as f64;
        let required = (n * (2.0 * CONFIDENCE_SIGMAS * se / epsilon).powi(2))
            .ceil()
            .max(n + 1.0);
        Error::InsufficientSamples {
            samples: self.samples(),
            required: required as usize,
        }
    }
}

pub fn achievability_rate(query: &BoundQuery, samples: usize, seed: u64) -> Result<BoundResult> {
    let p = query.problem()?;
    AchievabilitySampler::new(&p, samples, seed)?.solve(&p, query.epsilon)
}

/// Constants of the explicit achievability rate formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormulaConstants {
    pub c0: f64,
    pub c: f64,
    pub k: f64,
    /// Overrides the Berry–Esseen constant `M_n` when set.
    pub berry_esseen: Option<f64>,
}

/// `log M = n R_n + √(n V_n) Q⁻¹(ε_n) + ln(ln n / 2) + C₀ ln n + c`, `ε_n = ε − (M_n + 1 + K)/√n`.
pub fn achievability_formula_rate(query: &BoundQuery, constants: FormulaConstants) -> Result<BoundResult> {
    let p = query.problem()?;
    achievability_formula_for(&p, query.epsilon, constants)
}

pub fn achievability_formula_for(problem: &Problem, epsilon: f64, k: FormulaConstants) -> Result<BoundResult> {
    let n = problem.n();
    let nf = n as f64;
    let m_n = match k.berry_esseen {
        Some(m) => m,
        None => tilted_berry_esseen(&TiltedParams::from(&problem.solution))?.m,
    };
    let epsilon_n = epsilon - (m_n + 1.0 + k.k) / nf.sqrt();
    if !(epsilon_n > 0.0 && epsilon_n < 1.0) || n < 2 {
        return Err(Error::BlocklengthTooSmall { n, epsilon_n });
    }
    let log_m = nf * problem.point.rate
        + (nf * problem.point.dispersion).sqrt() * q_inverse(epsilon_n)?
        + (0.5 * nf.ln()).ln()
        + k.c0 * nf.ln()
        + k.c;
    let trace = SearchTrace {
        epsilon_n: Some(epsilon_n),
        ..Default::default()
    };
    Ok(BoundResult::analytic(
        BoundKind::AchievabilityFormula,
        problem,
        epsilon,
        log_m,
        trace,
    ))
}

/// Convenience: spectrum-level problem for a source.
pub fn problem(source: &SourceSpec, n: usize, d: f64, opts: &SpectrumOptions) -> Result<Problem> {
    Problem::new(source, n, d, opts)
}
