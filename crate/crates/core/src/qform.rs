//! Distribution of positive-weight quadratic forms in Gaussian variables,
//! `Q = Σ w_j (Z_j + b_j)²` with noncentralities `δ_j = b_j²`.
//!
//! The default engine inverts the moment generating function along a vertical
//! contour through the saddlepoint, which keeps relative accuracy deep in
//! either tail. Ruben's chi-square mixture series is the fallback for forms
//! with few terms, and the classic Imhof integral is kept as a cross-check.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numeric::gamma::ln_gamma_p;
use crate::numeric::log1m_exp;
use crate::numeric::quad::{integrate, QuadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Contour,
    Ruben,
    Imhof,
    Exact,
}

/// Both tails in log form, so either can be small without losing precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tails {
    /// `ln P[Q ≤ q]`.
    pub ln_lower: f64,
    /// `ln P[Q > q]`.
    pub ln_upper: f64,
    pub method: Method,
}

impl Tails {
    pub fn lower(&self) -> f64 {
        self.ln_lower.exp()
    }

    pub fn upper(&self) -> f64 {
        self.ln_upper.exp()
    }

    fn from_lower(ln_lower: f64, method: Method) -> Self {
        Self {
            ln_lower,
            ln_upper: log1m_exp(ln_lower.min(0.0)),
            method,
        }
    }

    fn from_upper(ln_upper: f64, method: Method) -> Self {
        Self {
            ln_lower: log1m_exp(ln_upper.min(0.0)),
            ln_upper,
            method,
        }
    }
}

/// Relative accuracy targeted for the computed tail.
const REL_TOL: f64 = 1e-11;
const NODE_BUDGET: usize = 200_000;
const RUBEN_BUDGET: usize = 20_000;
/// Forms with at most this many terms go to the series first.
const SERIES_FIRST_MAX_TERMS: usize = 6;
/// Forms whose Ruben mixture is concentrated below this index also go to the series first.
const SERIES_FIRST_MAX_INDEX: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    weights: Vec<f64>,
    noncentralities: Vec<f64>,
}

impl QuadraticForm {
    /// Terms with zero weight are dropped.
    pub fn new(weights: &[f64], noncentralities: &[f64]) -> Result<Self> {
        if weights.len() != noncentralities.len() {
            return Err(Error::Consistency(
                "weights and noncentralities differ in length".into(),
            ));
        }
        let mut w = Vec::with_capacity(weights.len());
        let mut d = Vec::with_capacity(weights.len());
        for (&wi, &di) in weights.iter().zip(noncentralities) {
            if !(wi >= 0.0 && wi.is_finite()) || !(di >= 0.0 && di.is_finite()) {
                return domain(format!("invalid term: weight {wi}, noncentrality {di}"));
            }
            if wi > 0.0 {
                w.push(wi);
                d.push(di);
            }
        }
        Ok(Self {
            weights: w,
            noncentralities: d,
        })
    }

    pub fn central(weights: &[f64]) -> Result<Self> {
        Self::new(weights, &vec![0.0; weights.len()])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn noncentralities(&self) -> &[f64] {
        &self.noncentralities
    }

    pub fn mean(&self) -> f64 {
        self.terms().map(|(w, d)| w * (1.0 + d)).sum()
    }

    pub fn variance(&self) -> f64 {
        self.terms().map(|(w, d)| 2.0 * w * w * (1.0 + 2.0 * d)).sum()
    }

    fn terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.weights.iter().copied().zip(self.noncentralities.iter().copied())
    }

    fn w_max(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    fn w_min(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Cumulant generating function `ln E[e^{sQ}]` for real `s < 1/(2 w_max)`.
    pub fn cgf(&self, s: f64) -> f64 {
        self.terms()
            .map(|(w, d)| {
                let r = 1.0 - 2.0 * w * s;
                -0.5 * r.ln() + d * w * s / r
            })
            .sum()
    }

    fn cgf_d1(&self, s: f64) -> f64 {
        self.terms()
            .map(|(w, d)| {
                let r = 1.0 - 2.0 * w * s;
                w / r + d * w / (r * r)
            })
            .sum()
    }

    fn cgf_d2(&self, s: f64) -> f64 {
        self.terms()
            .map(|(w, d)| {
                let r = 1.0 - 2.0 * w * s;
                2.0 * w * w / (r * r) + 4.0 * d * w * w / (r * r * r)
            })
            .sum()
    }

    fn cgf_complex(&self, s: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (w, d) in self.terms() {
            let r = 1.0 - 2.0 * w * s;
            acc += -0.5 * r.ln() + d * w * s / r;
        }
        acc
    }

    /// Saddlepoint `ŝ` with `K'(ŝ) = q`, for `q > 0`.
    pub fn saddlepoint(&self, q: f64) -> f64 {
        let s_max = 0.5 / self.w_max();
        let (mut lo, mut hi) = if q < self.mean() {
            let mut lo = -s_max;
            while self.cgf_d1(lo) > q {
                lo *= 2.0;
            }
            (lo, 0.0)
        } else {
            (0.0, s_max)
        };
        let mut s = 0.5 * (lo + hi);
        for _ in 0..300 {
            let f = self.cgf_d1(s) - q;
            if f.abs() <= 1e-15 * q {
                break;
            }
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let newton = s - f / self.cgf_d2(s);
            s = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-15 * s.abs().max(1e-300) {
                break;
            }
        }
        s
    }

    /// Leading-order saddlepoint estimate of `ln` of the tail on the saddlepoint's side.
    fn ln_tail_estimate(&self, q: f64, s: f64) -> f64 {
        let k2 = self.cgf_d2(s);
        let est = self.cgf(s) - s * q - (s.abs() * (2.0 * PI * k2).sqrt()).ln();
        est.min(0.0)
    }

    /// Lugannani–Rice approximation to `P[Q ≤ q]`.
    pub fn saddlepoint_cdf(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        let s = self.saddlepoint(q);
        let r = s.signum() * (2.0 * (s * q - self.cgf(s))).max(0.0).sqrt();
        let v = s * self.cgf_d2(s).sqrt();
        if r.abs() < 1e-6 || v.abs() < 1e-8 {
            return 0.5;
        }
        use crate::numeric::normal::{cdf, pdf};
        (cdf(r) + pdf(r) * (1.0 / r - 1.0 / v)).clamp(0.0, 1.0)
    }

    /// Both tails at `q` using the default engine.
    pub fn tails(&self, q: f64) -> Result<Tails> {
        if let Some(t) = self.trivial(q) {
            return Ok(t);
        }
        if self.len() <= SERIES_FIRST_MAX_TERMS || self.ruben_mean_index() <= SERIES_FIRST_MAX_INDEX {
            match self.ruben_tails(q) {
                Ok(t) => Ok(t),
                Err(_) => self.contour_tails(q),
            }
        } else {
            match self.contour_tails(q) {
                Ok(t) => Ok(t),
                Err(_) => self.ruben_tails(q),
            }
        }
    }

    /// Mean index of Ruben's chi-square mixture; the series needs a small multiple of this many terms.
    fn ruben_mean_index(&self) -> f64 {
        let beta = self.w_min();
        self.terms()
            .map(|(w, d)| 0.5 * (w / beta - 1.0) + 0.5 * d * w / beta)
            .sum()
    }

    pub fn cdf(&self, q: f64) -> Result<f64> {
        Ok(self.tails(q)?.lower())
    }

    fn trivial(&self, q: f64) -> Option<Tails> {
        if q.is_nan() {
            return None;
        }
        if self.is_empty() {
            let below = q >= 0.0;
            return Some(Tails {
                ln_lower: if below { 0.0 } else { f64::NEG_INFINITY },
                ln_upper: if below { f64::NEG_INFINITY } else { 0.0 },
                method: Method::Exact,
            });
        }
        if q <= 0.0 {
            return Some(Tails {
                ln_lower: f64::NEG_INFINITY,
                ln_upper: 0.0,
                method: Method::Exact,
            });
        }
        if q == f64::INFINITY {
            return Some(Tails {
                ln_lower: 0.0,
                ln_upper: f64::NEG_INFINITY,
                method: Method::Exact,
            });
        }
        None
    }

    /// Inversion along `Re s = c` through the saddlepoint, trapezoid rule in `Im s`.
    pub fn contour_tails(&self, q: f64) -> Result<Tails> {
        if let Some(t) = self.trivial(q) {
            return Ok(t);
        }
        let s_hat = self.saddlepoint(q);
        let sd = self.variance().sqrt();
        let s_max = 0.5 / self.w_max();
        let lower_side = q < self.mean();
        let c = if lower_side {
            s_hat.min(-1.0 / sd)
        } else {
            s_hat.max((1.0 / sd).min(0.5 * s_max))
        };
        let ln_est = self.ln_tail_estimate(q, c).min(-std::f64::consts::LN_2);
        let needed = -(REL_TOL.ln()) - ln_est + 3.0;
        let mut h = 2.0 * PI * c.abs() / needed;
        if lower_side {
            // Aliased copies at q − 2πj/h fall below zero, where the CDF vanishes.
            h = h.min(0.99 * 2.0 * PI / q);
        } else {
            let s_star = 0.5 * (c + s_max);
            let ln_chernoff = self.cgf(s_star) - s_star * q;
            let room = (ln_chernoff - ln_est - REL_TOL.ln() + 3.0).max(1.0);
            h = h.min(2.0 * PI * (s_star - c) / room);
        }
        let a0 = self.cgf(c) - c * q;
        let mut path = Contour {
            form: self,
            c,
            q,
            a0,
            nodes: 0,
        };
        let t0 = path.eval(0.0).0;
        let first = path.sweep(h, 1.0, t0.abs())?;
        let mut estimate = h * (0.5 * t0 + first);
        let mut step = h;
        let mut verified = false;
        for _ in 0..6 {
            let mid = path.sweep(step, 0.5, estimate.abs() / step)?;
            let refined = 0.5 * estimate + 0.5 * step * mid;
            step *= 0.5;
            let delta = (refined - estimate).abs();
            estimate = refined;
            if delta <= 10.0 * REL_TOL * estimate.abs() {
                verified = true;
                break;
            }
        }
        if !verified {
            return Err(Error::Convergence {
                what: "contour inversion (step refinement)",
                residual: f64::NAN,
            });
        }
        let scaled = if lower_side { -estimate } else { estimate } / PI;
        if !(scaled > 0.0) {
            return Err(Error::Convergence {
                what: "contour inversion (sign)",
                residual: scaled,
            });
        }
        let ln_tail = a0 - c.abs().ln() + scaled.ln();
        if ln_tail > 1e-9 {
            return Err(Error::Convergence {
                what: "contour inversion (range)",
                residual: ln_tail,
            });
        }
        let ln_tail = ln_tail.min(0.0);
        Ok(if lower_side {
            Tails::from_lower(ln_tail, Method::Contour)
        } else {
            Tails::from_upper(ln_tail, Method::Contour)
        })
    }
}

/// Integrand `Re[exp(K(s) − s q − a0) |c| / s]` on `s = c + iy`.
struct Contour<'a> {
    form: &'a QuadraticForm,
    c: f64,
    q: f64,
    a0: f64,
    nodes: usize,
}

impl Contour<'_> {
    /// Real part, modulus, and a power `p` with `|t(y')| ≤ |t(y)| (y'/y)^{-p}` for `y' > y`.
    fn eval(&mut self, y: f64) -> (f64, f64, f64) {
        self.nodes += 1;
        let c = self.c;
        let s = Complex64::new(c, y);
        let z = self.form.cgf_complex(s) - s * self.q - self.a0;
        let v = z.exp() * (c.abs() / s);
        let y2 = y * y;
        let mut p = y2 / (c * c + y2);
        for &w in &self.form.weights {
            let b = 4.0 * w * w * y2;
            let r = 1.0 - 2.0 * w * c;
            p += 0.5 * b / (r * r + b);
        }
        (v.re, v.norm(), p)
    }

    /// `Σ_{j ≥ 0} t((j + offset) h)`, truncated once the power-law envelope of
    /// the remainder is negligible against `scale`.
    fn sweep(&mut self, h: f64, offset: f64, scale: f64) -> Result<f64> {
        let mut acc = 0.0;
        let mut j = 0usize;
        loop {
            let y = (j as f64 + offset) * h;
            let (re, modulus, p) = self.eval(y);
            acc += re;
            j += 1;
            if p > 1.0 && j > 4 {
                let remainder = modulus * (y / h) / (p - 1.0);
                if remainder <= 1e-3 * REL_TOL * scale.max(acc.abs()) {
                    return Ok(acc);
                }
            }
            if self.nodes > NODE_BUDGET {
                return Err(Error::Convergence {
                    what: "contour inversion (node budget)",
                    residual: modulus,
                });
            }
        }
    }
}

impl QuadraticForm {
    /// Ruben's expansion as a mixture of central chi-square laws, `P[Q ≤ q] = Σ a_k P[χ²_{m+2k} ≤ q/β]`.
    pub fn ruben_tails(&self, q: f64) -> Result<Tails> {
        if let Some(t) = self.trivial(q) {
            return Ok(t);
        }
        let beta = self.w_min();
        let m = self.len() as f64;
        let gammas: Vec<f64> = self.weights.iter().map(|w| 1.0 - beta / w).collect();
        let ln_a0: f64 = self.terms().map(|(w, d)| 0.5 * (beta / w).ln() - 0.5 * d).sum();
        let x = 0.5 * q / beta;
        let mut pow_prev: Vec<f64> = vec![1.0; self.len()]; // γ_j^{k−1}
        let mut g: Vec<f64> = vec![0.0]; // g[r], r ≥ 1
        let mut c: Vec<f64> = vec![1.0]; // c_k scaled by exp(ln_scale)
        let mut ln_scale = 0.0_f64;
        // Running sums in log form: mixture mass and CDF contributions.
        let mut ln_mass = f64::NEG_INFINITY;
        let mut ln_sum = f64::NEG_INFINITY;
        for k in 0..RUBEN_BUDGET {
            if k > 0 {
                let kf = k as f64;
                let mut gk = 0.0;
                for (j, (_, d)) in self.terms().enumerate() {
                    let w = self.weights[j];
                    gk += pow_prev[j] * gammas[j] + kf * beta * d / w * pow_prev[j];
                    pow_prev[j] *= gammas[j];
                }
                g.push(gk);
                let ck: f64 = (1..=k).map(|r| g[r] * c[k - r]).sum::<f64>() / (2.0 * kf);
                c.push(ck);
                if ck > 1e250 {
                    for v in c.iter_mut() {
                        *v *= 1e-250;
                    }
                    ln_scale += 250.0 * std::f64::consts::LN_10;
                }
            }
            let ck = c[k];
            let ln_ak = if ck > 0.0 {
                ln_a0 + ln_scale + ck.ln()
            } else {
                f64::NEG_INFINITY
            };
            let ln_pk = ln_gamma_p(0.5 * m + k as f64, x);
            ln_mass = crate::numeric::log_add_exp(ln_mass, ln_ak);
            ln_sum = crate::numeric::log_add_exp(ln_sum, ln_ak + ln_pk);
            // Remaining mixture mass times the next (smaller) chi-square CDF bounds the tail.
            let remaining = -(ln_mass.min(0.0)).exp_m1();
            let ln_bound = remaining.max(1e-300).ln() + ln_gamma_p(0.5 * m + k as f64 + 1.0, x);
            if k > 0 && ln_bound <= REL_TOL.ln() - 2.0 + ln_sum {
                return Ok(Tails::from_lower(ln_sum.min(0.0), Method::Ruben));
            }
        }
        Err(Error::Convergence {
            what: "Ruben series (term budget)",
            residual: f64::NAN,
        })
    }

    /// Classic Imhof integral for `P[Q > q]`, truncated with Imhof's bound.
    pub fn imhof_upper(&self, q: f64, abs_tol: f64) -> Result<f64> {
        if let Some(t) = self.trivial(q) {
            return Ok(t.upper());
        }
        let half_m = 0.5 * self.len() as f64;
        let ln_trunc = |u: f64| {
            let mut v = (PI * half_m).ln() + half_m * u.ln();
            for (w, d) in self.terms() {
                let wu2 = (w * u).powi(2);
                v += 0.5 * w.ln() + 0.5 * d * wu2 / (1.0 + wu2);
            }
            -v
        };
        let mut upper = 1.0 / self.w_max();
        while ln_trunc(upper) > (0.5 * abs_tol).ln() {
            upper *= 1.5;
            if upper > 1e12 {
                return Err(Error::Convergence {
                    what: "Imhof truncation",
                    residual: ln_trunc(upper).exp(),
                });
            }
        }
        let integrand = |u: f64| {
            let mut theta = -0.5 * q * u;
            let mut ln_rho = 0.0;
            for (w, d) in self.terms() {
                let wu = w * u;
                let wu2 = wu * wu;
                theta += 0.5 * (wu.atan() + d * wu / (1.0 + wu2));
                ln_rho += 0.25 * (1.0 + wu2).ln() + 0.5 * d * wu2 / (1.0 + wu2);
            }
            theta.sin() / (u * ln_rho.exp())
        };
        // Split into pieces no longer than a quarter period of the phase.
        let rate = 0.5 * q + 0.5 * self.terms().map(|(w, d)| w * (1.0 + d)).sum::<f64>();
        let piece = (0.5 * PI / rate).min(upper);
        let pieces = (upper / piece).ceil() as usize;
        if pieces > 200_000 {
            return Err(Error::Convergence {
                what: "Imhof integral (oscillation budget)",
                residual: pieces as f64,
            });
        }
        let pts: Vec<f64> = (0..=pieces).map(|i| (i as f64 * piece).min(upper)).collect();
        let opts = QuadOptions {
            abs_tol: 0.25 * abs_tol * PI,
            rel_tol: 0.0,
            max_intervals: 4 * pieces + 4000,
        };
        let r = integrate(integrand, &pts, opts)?;
        Ok(0.5 + r.value / PI)
    }

    /// One draw of `Q`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.terms()
            .map(|(w, d)| {
                let z: f64 = rng.sample(StandardNormal);
                w * (z + d.sqrt()).powi(2)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gamma::{chi2_cdf, ln_gamma_q};

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn single_central_term() {
        let f = QuadraticForm::central(&[1.0]).unwrap();
        let t = f.tails(1.0).unwrap();
        assert!((t.lower() - 0.682_689_492_137_085_9).abs() < 1e-13);
    }

    #[test]
    fn equal_weights_are_chi_square() {
        let f = QuadraticForm::central(&[0.5; 40]).unwrap();
        for q in [2.0, 10.0, 20.0, 35.0] {
            let want = chi2_cdf(40.0, q / 0.5);
            let c = f.contour_tails(q).unwrap();
            let r = f.ruben_tails(q).unwrap();
            assert!((c.lower() - want).abs() < 1e-12, "contour q={q}");
            assert!((r.lower() - want).abs() < 1e-12, "ruben q={q}");
        }
    }

    #[test]
    fn deep_lower_tail_relative_accuracy() {
        // 64 equal weights, far below the mean.
        let f = QuadraticForm::central(&[1.0; 64]).unwrap();
        let want = ln_gamma_p(32.0, 2.0);
        let got = f.contour_tails(4.0).unwrap().ln_lower;
        assert!(close(got, want, 1e-10), "{got} vs {want}");
    }

    #[test]
    fn deep_upper_tail_relative_accuracy() {
        let f = QuadraticForm::central(&[1.0; 64]).unwrap();
        let want = ln_gamma_q(32.0, 90.0);
        let got = f.contour_tails(180.0).unwrap().ln_upper;
        assert!(close(got, want, 1e-10), "{got} vs {want}");
    }

    #[test]
    fn noncentral_single_term_is_poisson_mixture() {
        // P[(Z + b)² ≤ q] = Φ(√q − b) − Φ(−√q − b).
        use crate::numeric::normal::cdf;
        let b: f64 = 1.7;
        let f = QuadraticForm::new(&[1.0], &[b * b]).unwrap();
        for q in [0.2_f64, 1.0, 4.0, 9.0] {
            let want = cdf(q.sqrt() - b) - cdf(-q.sqrt() - b);
            assert!((f.cdf(q).unwrap() - want).abs() < 1e-13, "q={q}");
        }
    }

    #[test]
    fn engines_agree_on_mixed_form() {
        let w = [3.0, 1.5, 0.7, 0.7, 0.2, 0.1, 2.2, 0.05, 1.0, 0.4];
        let d = [0.0, 2.0, 0.3, 0.0, 5.0, 1.0, 0.0, 0.2, 0.8, 0.0];
        let f = QuadraticForm::new(&w, &d).unwrap();
        for q in [1.0, 4.0, f.mean(), 20.0, 40.0] {
            let c = f.contour_tails(q).unwrap();
            let r = f.ruben_tails(q).unwrap();
            let i = f.imhof_upper(q, 1e-11).unwrap();
            assert!((c.lower() - r.lower()).abs() < 1e-10, "q={q} {c:?} {r:?}");
            assert!((c.upper() - i).abs() < 1e-9, "q={q} {} {i}", c.upper());
        }
    }

    #[test]
    fn trivial_cases() {
        let f = QuadraticForm::central(&[1.0, 2.0]).unwrap();
        assert_eq!(f.cdf(0.0).unwrap(), 0.0);
        assert_eq!(f.cdf(-1.0).unwrap(), 0.0);
        assert_eq!(f.cdf(f64::INFINITY).unwrap(), 1.0);
        let empty = QuadraticForm::central(&[0.0, 0.0]).unwrap();
        assert_eq!(empty.cdf(0.5).unwrap(), 1.0);
        assert_eq!(empty.cdf(-0.5).unwrap(), 0.0);
        assert!(QuadraticForm::new(&[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn saddlepoint_approximation_is_close() {
        let f = QuadraticForm::central(&[1.0; 30]).unwrap();
        let exact = f.cdf(20.0).unwrap();
        assert!((f.saddlepoint_cdf(20.0) - exact).abs() < 1e-3);
    }
}
