//! Gauss–Markov covariance structure, eigenvalue spectra and the spectral density.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numeric::quad::{integrate, QuadOptions};

/// A Gaussian source: either the AR(1) recursion `X_{i+1} = a X_i + Z_i`,
/// `Z_i ~ N(0, sigma2)`, or a list of independent component variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    GaussMarkov { a: f64, sigma2: f64 },
    Explicit { variances: Vec<f64> },
}

impl SourceSpec {
    pub fn gauss_markov(a: f64, sigma2: f64) -> Result<Self> {
        let s = SourceSpec::GaussMarkov { a, sigma2 };
        s.validate()?;
        Ok(s)
    }

    pub fn explicit(variances: Vec<f64>) -> Result<Self> {
        let s = SourceSpec::Explicit { variances };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SourceSpec::GaussMarkov { a, sigma2 } => {
                if !(*a >= 0.0 && *a < 1.0) {
                    return domain(format!("a must lie in [0,1), got {a}"));
                }
                if !(*sigma2 > 0.0 && sigma2.is_finite()) {
                    return domain(format!("sigma2 must be positive and finite, got {sigma2}"));
                }
            }
            SourceSpec::Explicit { variances } => {
                if variances.is_empty() {
                    return domain("explicit source needs at least one variance");
                }
                if let Some(v) = variances.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                    return domain(format!("variances must be positive and finite, got {v}"));
                }
            }
        }
        Ok(())
    }

    /// Variance of the stationary process, `sigma2 / (1 - a^2)`.
    pub fn stationary_variance(&self) -> Option<f64> {
        match self {
            SourceSpec::GaussMarkov { a, sigma2 } => Some(sigma2 / (1.0 - a * a)),
            SourceSpec::Explicit { .. } => None,
        }
    }

    pub fn density(&self) -> Option<SpectralDensity> {
        match self {
            SourceSpec::GaussMarkov { a, sigma2 } => Some(SpectralDensity::new(*a, *sigma2)),
            SourceSpec::Explicit { .. } => None,
        }
    }
}

/// Which covariance the Gauss–Markov recursion is taken to have.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceModel {
    /// Recursion started at `X_0 = 0`.
    #[default]
    ZeroStart,
    /// Stationary Toeplitz covariance `sigma2 a^{|i-j|} / (1 - a^2)`.
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    /// Symmetric eigensolver on the dense covariance matrix.
    #[default]
    Dense,
    /// Implicit QL on the tridiagonal precision matrix.
    Tridiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub covariance: CovarianceModel,
    pub method: EigenMethod,
    pub max_n: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            covariance: CovarianceModel::ZeroStart,
            method: EigenMethod::Dense,
            max_n: 4096,
        }
    }
}

fn check_n(source: &SourceSpec, n: usize, opts: &SpectrumOptions) -> Result<()> {
    source.validate()?;
    if n == 0 {
        return domain("blocklength must be at least 1");
    }
    if n > opts.max_n {
        return domain(format!("blocklength {n} exceeds the configured cap {}", opts.max_n));
    }
    if let SourceSpec::Explicit { variances } = source {
        if n > variances.len() {
            return domain(format!(
                "explicit source has {} variances, n = {n} requested",
                variances.len()
            ));
        }
    }
    Ok(())
}

/// The `n × n` covariance matrix of the first `n` letters.
pub fn covariance_matrix(source: &SourceSpec, n: usize, opts: &SpectrumOptions) -> Result<DMatrix<f64>> {
    check_n(source, n, opts)?;
    Ok(match source {
        SourceSpec::Explicit { variances } => {
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&variances[..n]))
        }
        SourceSpec::GaussMarkov { a, sigma2 } => {
            let (a, s2) = (*a, *sigma2);
            if a == 0.0 {
                return Ok(DMatrix::from_diagonal_element(n, n, s2));
            }
            let a2 = a * a;
            DMatrix::from_fn(n, n, |i, j| {
                let lag = i.abs_diff(j) as i32;
                let m = (i.min(j) + 1) as i32;
                match opts.covariance {
                    CovarianceModel::ZeroStart => s2 * a.powi(lag) * (1.0 - a2.powi(m)) / (1.0 - a2),
                    CovarianceModel::Stationary => s2 * a.powi(lag) / (1.0 - a2),
                }
            })
        }
    })
}

/// Diagonal and off-diagonal of the tridiagonal precision matrix.
pub fn precision_tridiagonal(a: f64, sigma2: f64, n: usize, model: CovarianceModel) -> (Vec<f64>, Vec<f64>) {
    let mut diag = vec![(1.0 + a * a) / sigma2; n];
    diag[n - 1] = 1.0 / sigma2;
    if model == CovarianceModel::Stationary {
        diag[0] = 1.0 / sigma2;
    }
    (diag, vec![-a / sigma2; n.saturating_sub(1)])
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL with Wilkinson shifts.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n.saturating_sub(1)].copy_from_slice(&off[..n.saturating_sub(1)]);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Convergence {
                    what: "tridiagonal eigensolver",
                    residual: e[l].abs(),
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(d)
}

/// Blocklength-`n` eigenvalue spectrum, sorted descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    n: usize,
    eigenvalues: Vec<f64>,
    source: SourceSpec,
}

impl EigenSpectrum {
    /// Spectrum of independent components with the given variances.
    pub fn from_variances(variances: Vec<f64>) -> Result<Self> {
        let source = SourceSpec::explicit(variances.clone())?;
        let mut eigenvalues = variances;
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(Self {
            n: eigenvalues.len(),
            eigenvalues,
            source,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn source(&self) -> &SourceSpec {
        &self.source
    }

    /// Per-letter average variance `(1/n) Σ σ_i²`.
    pub fn mean(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.n as f64
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[self.n - 1]
    }
}

pub fn eigen_spectrum(source: &SourceSpec, n: usize, opts: &SpectrumOptions) -> Result<EigenSpectrum> {
    check_n(source, n, opts)?;
    let (mut eigenvalues, trace) = match (source, opts.method) {
        (SourceSpec::Explicit { variances }, _) => (variances[..n].to_vec(), variances[..n].iter().sum()),
        (SourceSpec::GaussMarkov { a, sigma2 }, _) if *a == 0.0 => (vec![*sigma2; n], *sigma2 * n as f64),
        (SourceSpec::GaussMarkov { .. }, EigenMethod::Dense) => {
            let cov = covariance_matrix(source, n, opts)?;
            let trace = cov.trace();
            (cov.symmetric_eigenvalues().iter().copied().collect(), trace)
        }
        (SourceSpec::GaussMarkov { a, sigma2 }, EigenMethod::Tridiagonal) => {
            let (d, e) = precision_tridiagonal(*a, *sigma2, n, opts.covariance);
            let prec = tridiagonal_eigenvalues(&d, &e)?;
            let trace = covariance_matrix(source, n, opts)?.trace();
            (prec.iter().map(|p| 1.0 / p).collect(), trace)
        }
    };
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let sum: f64 = eigenvalues.iter().sum();
    let residual = (sum - trace).abs() / trace;
    if !(residual <= 1e-10) {
        return Err(Error::Convergence {
            what: "eigensolver trace check",
            residual,
        });
    }
    let (max, min) = (eigenvalues[0], eigenvalues[n - 1]);
    if !(min > 1e-12 * max) {
        return Err(Error::Convergence {
            what: "eigensolver (numerically singular covariance)",
            residual: min / max,
        });
    }
    Ok(EigenSpectrum {
        n,
        eigenvalues,
        source: source.clone(),
    })
}

/// `S(ω) = sigma2 / (1 + a² − 2a cos ω)` of the stationary AR(1) process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    pub a: f64,
    pub sigma2: f64,
}

impl SpectralDensity {
    pub fn new(a: f64, sigma2: f64) -> Self {
        Self { a, sigma2 }
    }

    pub fn theta_min(&self) -> f64 {
        self.sigma2 / (1.0 + self.a).powi(2)
    }

    pub fn theta_max(&self) -> f64 {
        self.sigma2 / (1.0 - self.a).powi(2)
    }

    /// `S(ω)` without range checking.
    pub fn eval(&self, omega: f64) -> f64 {
        self.sigma2 / (1.0 + self.a * self.a - 2.0 * self.a * omega.cos())
    }

    /// Angle in `[0, π]` where `S` crosses level `t`; 0 or π if `t` is out of range.
    pub fn crossing_angle(&self, t: f64) -> f64 {
        if self.a == 0.0 {
            return if t >= self.sigma2 { 0.0 } else { PI };
        }
        let c = (1.0 + self.a * self.a - self.sigma2 / t) / (2.0 * self.a);
        c.clamp(-1.0, 1.0).acos()
    }

    /// `(1/2π) ∫_{-π}^{π} f(S(ω)) dω`, split at the angles where `S` crosses each kink.
    pub fn average<F: Fn(f64) -> f64>(&self, f: F, kinks: &[f64], abs_tol: f64) -> Result<f64> {
        let mut pts = vec![0.0, PI];
        for &t in kinks {
            if t > self.theta_min() && t < self.theta_max() {
                pts.push(self.crossing_angle(t));
            }
        }
        pts.sort_by(f64::total_cmp);
        let opts = QuadOptions {
            abs_tol: abs_tol * PI,
            rel_tol: 1e-13,
            max_intervals: 4000,
        };
        Ok(integrate(|w| f(self.eval(w)), &pts, opts)?.value / PI)
    }
}

pub fn psd(density: &SpectralDensity, omega: f64) -> Result<f64> {
    if !(omega.abs() <= PI) {
        return domain(format!("omega must lie in [-pi, pi], got {omega}"));
    }
    Ok(density.eval(omega))
}

/// A bounded, Lipschitz, nondecreasing map used in spectral averages.
pub struct LipschitzMap<'a> {
    pub f: &'a (dyn Fn(f64) -> f64 + Sync),
    pub sup_norm: f64,
    pub lipschitz: f64,
    /// Points where `f` is not smooth.
    pub kinks: Vec<f64>,
}

impl std::fmt::Debug for LipschitzMap<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LipschitzMap")
            .field("sup_norm", &self.sup_norm)
            .field("lipschitz", &self.lipschitz)
            .field("kinks", &self.kinks)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SzegoGap {
    pub n: usize,
    pub gap: f64,
    /// Admissible bound `C_L / n`.
    pub bound: f64,
    pub c_l: f64,
}

/// Compare the eigenvalue average of `F` with its spectral average.
pub fn szego_gap(source: &SourceSpec, n: usize, map: &LipschitzMap<'_>, opts: &SpectrumOptions) -> Result<SzegoGap> {
    let Some(density) = source.density() else {
        return domain("szego_gap needs a Gauss-Markov source");
    };
    let spec = eigen_spectrum(source, n, opts)?;
    let finite = spec.eigenvalues().iter().map(|&s| (map.f)(s)).sum::<f64>() / n as f64;
    let limit = density.average(map.f, &map.kinks, 1e-13)?;
    let (a, s2) = (density.a, density.sigma2);
    let c_l = (map.sup_norm + 2.0 * a * map.lipschitz * PI * s2 / (1.0 - a).powi(4)).max(2.0 * map.sup_norm);
    Ok(SzegoGap {
        n,
        gap: (finite - limit).abs(),
        bound: c_l / n as f64,
        c_l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gm(a: f64, s2: f64) -> SourceSpec {
        SourceSpec::gauss_markov(a, s2).unwrap()
    }

    #[test]
    fn white_covariance_is_scaled_identity() {
        let c = covariance_matrix(&gm(0.0, 1.0), 3, &SpectrumOptions::default()).unwrap();
        assert_eq!(c, DMatrix::identity(3, 3));
    }

    #[test]
    fn two_letter_covariance_by_hand() {
        let c = covariance_matrix(&gm(0.5, 1.0), 2, &SpectrumOptions::default()).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.25]);
        assert!((c - want).abs().max() < 1e-15);
    }

    #[test]
    fn explicit_covariance_is_diagonal() {
        let s = SourceSpec::explicit(vec![4.0, 1.0, 2.0]).unwrap();
        let c = covariance_matrix(&s, 3, &SpectrumOptions::default()).unwrap();
        assert_eq!(
            c,
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0, 2.0]))
        );
    }

    #[test]
    fn white_spectrum() {
        let s = eigen_spectrum(&gm(0.0, 2.0), 5, &SpectrumOptions::default()).unwrap();
        assert_eq!(s.eigenvalues(), &[2.0; 5]);
    }

    #[test]
    fn two_by_two_characteristic_polynomial() {
        let s = eigen_spectrum(&gm(0.5, 1.0), 2, &SpectrumOptions::default()).unwrap();
        // trace 2.25, det 1.0
        let disc = (2.25_f64 * 2.25 - 4.0).sqrt();
        assert!((s.eigenvalues()[0] - (2.25 + disc) / 2.0).abs() < 1e-14);
        assert!((s.eigenvalues()[1] - (2.25 - disc) / 2.0).abs() < 1e-14);
        assert!((s.eigenvalues()[0] - 1.64039).abs() < 1e-5);
        assert!((s.eigenvalues()[1] - 0.60961).abs() < 1e-5);
    }

    #[test]
    fn sandwich_at_n64() {
        let s = eigen_spectrum(&gm(0.7, 1.0), 64, &SpectrumOptions::default()).unwrap();
        assert!(s.eigenvalues().iter().all(|&e| (1.0 / 2.89..=1.0 / 0.09).contains(&e)));
    }

    #[test]
    fn tridiagonal_path_matches_dense() {
        for model in [CovarianceModel::ZeroStart, CovarianceModel::Stationary] {
            for a in [0.3, 0.7, 0.95] {
                let dense = SpectrumOptions {
                    covariance: model,
                    ..Default::default()
                };
                let tri = SpectrumOptions {
                    method: EigenMethod::Tridiagonal,
                    ..dense
                };
                let x = eigen_spectrum(&gm(a, 1.5), 97, &dense).unwrap();
                let y = eigen_spectrum(&gm(a, 1.5), 97, &tri).unwrap();
                for (p, q) in x.eigenvalues().iter().zip(y.eigenvalues()) {
                    assert!((p - q).abs() <= 1e-10 * p, "a={a} {p} {q}");
                }
            }
        }
    }

    #[test]
    fn stationary_covariance_is_toeplitz() {
        let o = SpectrumOptions {
            covariance: CovarianceModel::Stationary,
            ..Default::default()
        };
        let c = covariance_matrix(&gm(0.5, 1.0), 4, &o).unwrap();
        assert!((c[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
        assert!((c[(3, 3)] - 4.0 / 3.0).abs() < 1e-15);
        assert!((c[(1, 3)] - c[(0, 2)]).abs() < 1e-15);
    }

    #[test]
    fn psd_values() {
        assert_eq!(psd(&SpectralDensity::new(0.0, 3.0), 1.234).unwrap(), 3.0);
        assert!((psd(&SpectralDensity::new(0.5, 1.0), 0.0).unwrap() - 4.0).abs() < 1e-15);
        assert!((psd(&SpectralDensity::new(0.5, 1.0), PI).unwrap() - 1.0 / 2.25).abs() < 1e-15);
        assert!(psd(&SpectralDensity::new(0.5, 1.0), 3.5).is_err());
    }

    #[test]
    fn crossing_angle_inverts_psd() {
        let s = SpectralDensity::new(0.6, 1.3);
        for t in [0.6, 1.0, 2.0, 5.0] {
            let w = s.crossing_angle(t);
            assert!((s.eval(w) - t).abs() < 1e-12 * t);
        }
    }

    #[test]
    fn szego_gap_vanishes_for_white_source() {
        let f = |t: f64| t.min(0.5);
        let map = LipschitzMap {
            f: &f,
            sup_norm: 0.5,
            lipschitz: 1.0,
            kinks: vec![0.5],
        };
        let g = szego_gap(&gm(0.0, 1.0), 37, &map, &SpectrumOptions::default()).unwrap();
        assert!(g.gap < 1e-14);
    }

    #[test]
    fn szego_gap_within_bound_at_128() {
        let f = |t: f64| t.min(0.5);
        let map = LipschitzMap {
            f: &f,
            sup_norm: 0.5,
            lipschitz: 1.0,
            kinks: vec![0.5],
        };
        let g = szego_gap(&gm(0.5, 1.0), 128, &map, &SpectrumOptions::default()).unwrap();
        assert!(g.gap <= g.bound, "{g:?}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(SourceSpec::gauss_markov(1.0, 1.0).is_err());
        assert!(SourceSpec::gauss_markov(0.5, 0.0).is_err());
        assert!(SourceSpec::explicit(vec![1.0, -1.0]).is_err());
        assert!(eigen_spectrum(&gm(0.5, 1.0), 0, &SpectrumOptions::default()).is_err());
        let capped = SpectrumOptions {
            max_n: 8,
            ..Default::default()
        };
        assert!(eigen_spectrum(&gm(0.5, 1.0), 9, &capped).is_err());
    }
}
