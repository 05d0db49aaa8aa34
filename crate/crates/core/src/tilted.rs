//! Gaussian d-tilted information, the fixed-output `J` family and Berry–Esseen moments.

use libm::erf;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numeric::hermite;
use crate::numeric::quad::{integrate, QuadOptions};
use crate::rng::{stream, Purpose};
use crate::spectrum::EigenSpectrum;
use crate::waterfill::{IndexAllocation, WaterfillSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltedParams {
    pub theta: f64,
    pub lambda_star: f64,
    pub per_index: Vec<IndexAllocation>,
}

impl From<&WaterfillSolution> for TiltedParams {
    fn from(s: &WaterfillSolution) -> Self {
        Self {
            theta: s.theta,
            lambda_star: 0.5 / s.theta,
            per_index: s.per_index.clone(),
        }
    }
}

impl TiltedParams {
    pub fn n(&self) -> usize {
        self.per_index.len()
    }

    /// Weight of `U_i²/σ_i²` in the tilted information: `d_i / (2θ)`.
    pub fn weights(&self) -> Vec<f64> {
        self.per_index.iter().map(|p| p.d / (2.0 * self.theta)).collect()
    }

    /// `Σ ½ max(0, ln(σ_i²/θ))`, the mean of the tilted information.
    pub fn log_term(&self) -> f64 {
        self.per_index
            .iter()
            .map(|p| (0.5 * (p.sigma2 / self.theta).ln()).max(0.0))
            .sum()
    }

    /// Constant `C` with `ȷ = C + Σ w_i χ²₁`.
    pub fn offset(&self) -> f64 {
        self.log_term() - self.weights().iter().sum::<f64>()
    }

    /// Exact mean and variance of the tilted information.
    pub fn mean_variance(&self) -> (f64, f64) {
        let w = self.weights();
        (self.log_term(), w.iter().map(|c| 2.0 * c * c).sum())
    }
}

/// Closed-form single-letter tilted information.
pub fn tilted_letter(u: f64, alloc: &IndexAllocation, theta: f64) -> f64 {
    alloc.d / (2.0 * theta) * (u * u / alloc.sigma2 - 1.0) + (0.5 * (alloc.sigma2 / theta).ln()).max(0.0)
}

/// `ȷ(u, d)` in nats.
pub fn tilted_info(u: &[f64], params: &TiltedParams) -> Result<f64> {
    if u.len() != params.n() {
        return domain(format!(
            "sample has length {}, parameters have n = {}",
            u.len(),
            params.n()
        ));
    }
    Ok(u.iter()
        .zip(&params.per_index)
        .map(|(&x, p)| tilted_letter(x, p, params.theta))
        .sum())
}

/// Definition-level evaluation `−λ d − ln E[exp(−λ (u − Y)²)]`, `Y ~ N(0, ν)`.
pub fn tilted_info_numeric(u: f64, sigma2: f64, nu: f64, lambda_star: f64, d_letter: f64) -> Result<f64> {
    if !(nu >= 0.0) || !(sigma2 > 0.0) || !(lambda_star > 0.0) {
        return domain("need nu >= 0, sigma2 > 0, lambda > 0");
    }
    if nu == 0.0 {
        return Ok(-lambda_star * d_letter + lambda_star * u * u);
    }
    let log_e = log_expectation(u, nu, lambda_star)?;
    Ok(-lambda_star * d_letter - log_e)
}

/// `ln E[exp(−λ (u − √ν Z)²)]` by Gauss–Hermite with node doubling, then
/// adaptive quadrature if the rules disagree.
fn log_expectation(u: f64, nu: f64, lambda: f64) -> Result<f64> {
    let sd = nu.sqrt();
    let gh = |n: usize| {
        let r = hermite::rule(n);
        let terms: Vec<f64> = r
            .nodes
            .iter()
            .zip(&r.log_weights)
            .map(|(z, w)| w - lambda * (u - sd * z).powi(2))
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    };
    let mut prev = gh(200);
    for n in [400, 800] {
        let next = gh(n);
        if (next - prev).abs() <= 1e-13 * next.abs().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    // Peak of the integrand in z, then integrate the shifted density over ±40 widths.
    let a = 1.0 + 2.0 * lambda * nu;
    let z_star = 2.0 * lambda * sd * u / a;
    let width = 1.0 / a.sqrt();
    let shift = -0.5 * z_star * z_star - lambda * (u - sd * z_star).powi(2);
    let f = |z: f64| (-0.5 * z * z - lambda * (u - sd * z).powi(2) - shift).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let pts = [z_star - 40.0 * width, z_star, z_star + 40.0 * width];
    let r = integrate(
        f,
        &pts,
        QuadOptions {
            abs_tol: 0.0,
            rel_tol: 1e-14,
            max_intervals: 2000,
        },
    )?;
    if !(r.value > 0.0) {
        return Err(Error::Convergence {
            what: "tilted-information quadrature",
            residual: r.error,
        });
    }
    Ok(shift + r.value.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JDerivatives {
    pub j: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// `J(λ) = −ln E[exp(−λ (u − Y)²)]` and its first three `λ`-derivatives, `Y ~ N(0, ν)`.
pub fn j_and_derivatives(u: f64, lambda: f64, nu: f64) -> Result<JDerivatives> {
    if !(lambda > 0.0) {
        return domain(format!("lambda must be positive, got {lambda}"));
    }
    if !(nu >= 0.0) {
        return domain(format!("nu must be nonnegative, got {nu}"));
    }
    let a = 1.0 + 2.0 * lambda * nu;
    let u2 = u * u;
    Ok(JDerivatives {
        j: lambda * u2 / a + 0.5 * a.ln(),
        d1: nu / a + u2 / (a * a),
        d2: -2.0 * nu * nu / (a * a) - 4.0 * u2 * nu / a.powi(3),
        d3: 8.0 * nu.powi(3) / a.powi(3) + 24.0 * u2 * nu * nu / a.powi(4),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AssumptionThresholds {
    /// Lower bound required of `Var[(1/√n) J′]`.
    pub kappa0: f64,
    /// Lower bound required of `E[(1/n)|J″|]`.
    pub kappa1: f64,
    /// Upper bound allowed for the sixth-moment average.
    pub k_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub var_jprime: f64,
    pub mean_abs_jpp: f64,
    pub sixth_moment: f64,
    pub thresholds: AssumptionThresholds,
    pub variance_ok: bool,
    pub curvature_ok: bool,
    pub moment_ok: bool,
}

/// Assumption statistics at `λ* = 1/(2θ)` in closed form.
pub fn assumption_report(
    spectrum: &EigenSpectrum,
    solution: &WaterfillSolution,
    thresholds: AssumptionThresholds,
) -> Result<AssumptionReport> {
    if spectrum.n() != solution.n() {
        return Err(Error::Consistency("spectrum and solution differ in length".into()));
    }
    let th = solution.theta;
    let n = solution.n() as f64;
    let mut var = 0.0;
    let mut curv = 0.0;
    let mut sixth = 0.0;
    for p in &solution.per_index {
        let s4 = p.sigma2 * p.sigma2;
        if p.nu > 0.0 {
            var += 2.0 * th.powi(4) / s4;
            curv += 2.0 * th * th * (1.0 - th * th / s4);
        } else {
            var += 2.0 * s4;
        }
        sixth += (p.sigma2 + p.nu).powi(6);
    }
    let (var_jprime, mean_abs_jpp, sixth_moment) = (var / n, curv / n, sixth / n);
    Ok(AssumptionReport {
        var_jprime,
        mean_abs_jpp,
        sixth_moment,
        thresholds,
        variance_ok: var_jprime >= thresholds.kappa0,
        curvature_ok: mean_abs_jpp >= thresholds.kappa1 && mean_abs_jpp > 0.0,
        moment_ok: sixth_moment <= thresholds.k_prime,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerryEsseenStats {
    /// Average variance of the summands.
    pub v2: f64,
    /// Average third absolute central moment.
    pub t3: f64,
    /// `6 t3 / v2^{3/2}`.
    pub m: f64,
}

impl BerryEsseenStats {
    /// Uniform CDF distance bound `m / √n`.
    pub fn bound(&self, n: usize) -> f64 {
        self.m / (n as f64).sqrt()
    }
}

pub fn berry_esseen_stats(variances: &[f64], third_moments: &[f64]) -> Result<BerryEsseenStats> {
    if variances.len() != third_moments.len() || variances.is_empty() {
        return Err(Error::Consistency(
            "moment lists must be nonempty and of equal length".into(),
        ));
    }
    let n = variances.len() as f64;
    let v2 = variances.iter().sum::<f64>() / n;
    let t3 = third_moments.iter().sum::<f64>() / n;
    if !(v2 > 0.0) {
        return domain("average variance must be positive");
    }
    Ok(BerryEsseenStats {
        v2,
        t3,
        m: 6.0 * t3 / v2.powf(1.5),
    })
}

/// `E|χ²₁ − 1|³`.
pub fn chi2_abs_central_third() -> f64 {
    // E|W|³ = E[W³] + 2 E[(1 − Z²)³; |Z| < 1] with E[W³] = 8.
    // I_{2k} = ∫_{-1}^{1} z^{2k} φ(z) dz satisfies I_{2k} = −2φ(1) + (2k − 1) I_{2k−2}.
    let phi1 = (-0.5_f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let i0 = erf(std::f64::consts::FRAC_1_SQRT_2);
    let i2 = -2.0 * phi1 + i0;
    let i4 = -2.0 * phi1 + 3.0 * i2;
    let i6 = -2.0 * phi1 + 5.0 * i4;
    8.0 + 2.0 * (i0 - 3.0 * i2 + 3.0 * i4 - i6)
}

/// Per-letter variances and third absolute central moments of the tilted summands.
pub fn tilted_summand_moments(params: &TiltedParams) -> (Vec<f64>, Vec<f64>) {
    let k3 = chi2_abs_central_third();
    params.weights().iter().map(|c| (2.0 * c * c, k3 * c.powi(3))).unzip()
}

pub fn tilted_berry_esseen(params: &TiltedParams) -> Result<BerryEsseenStats> {
    let (v, t) = tilted_summand_moments(params);
    berry_esseen_stats(&v, &t)
}

/// Draw `X` in the eigendomain: independent `N(0, σ_i²)` letters.
pub fn sample_source<R: Rng>(rng: &mut R, per_index: &[IndexAllocation], out: &mut [f64]) {
    for (x, p) in out.iter_mut().zip(per_index) {
        let z: f64 = rng.sample(StandardNormal);
        *x = p.sigma2.sqrt() * z;
    }
}

/// Monte Carlo draws of `ȷ(X, d)`; draw `i` uses its own stream.
pub fn tilted_samples(params: &TiltedParams, samples: usize, seed: u64) -> Vec<f64> {
    (0..samples as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; params.n()],
            |buf, i| {
                let mut rng = stream(seed, Purpose::Tilted, i);
                sample_source(&mut rng, &params.per_index, buf);
                tilted_info(buf, params).expect("length matches")
            },
        )
        .collect()
}
