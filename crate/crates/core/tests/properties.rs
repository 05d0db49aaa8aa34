use fbrd::bounds::{ball_probability, TiltedDistribution};
use fbrd::numeric::normal::{q, q_inverse};
use fbrd::qform::QuadraticForm;
use fbrd::spectrum::{covariance_matrix, eigen_spectrum, EigenSpectrum, SourceSpec, SpectrumOptions};
use fbrd::tilted::{j_and_derivatives, tilted_letter, TiltedParams};
use fbrd::waterfill::{lambda_check, solve_water_level, Problem};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

fn variances() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..8.0, 1..24)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn eigenvalues_stay_inside_psd_range(a in 0.0f64..0.95, s2 in 0.1f64..4.0, n in 1usize..96) {
        let src = SourceSpec::gauss_markov(a, s2).unwrap();
        let opts = SpectrumOptions::default();
        let spec = eigen_spectrum(&src, n, &opts).unwrap();
        let lo = s2 / (1.0 + a).powi(2);
        let hi = s2 / (1.0 - a).powi(2);
        for &e in spec.eigenvalues() {
            prop_assert!(e >= lo * (1.0 - 1e-12) && e <= hi * (1.0 + 1e-12), "{e} outside [{lo}, {hi}]");
        }
        let trace = covariance_matrix(&src, n, &opts).unwrap().trace();
        let sum: f64 = spec.eigenvalues().iter().sum();
        prop_assert!((sum - trace).abs() <= 1e-10 * trace);
    }

    #[test]
    fn water_level_meets_budget(v in variances(), frac in 0.01f64..0.99) {
        let spec = EigenSpectrum::from_variances(v).unwrap();
        let d = frac * spec.mean();
        let sol = solve_water_level(&spec, d).unwrap();
        prop_assert!((sol.distortion() - d).abs() <= 1e-12 * d);
        for p in &sol.per_index {
            if p.sigma2 > sol.theta {
                prop_assert!(p.nu > 0.0 && p.d == sol.theta);
            } else {
                prop_assert!(p.nu == 0.0 && p.d == p.sigma2);
            }
        }
    }

    #[test]
    fn rate_is_nonincreasing_and_convex(v in variances()) {
        let spec = EigenSpectrum::from_variances(v).unwrap();
        let grid: Vec<f64> = (1..=50).map(|k| spec.mean() * k as f64 / 51.0).collect();
        let mut theta = Vec::new();
        let mut rate = Vec::new();
        for &d in &grid {
            let p = Problem::from_spectrum(spec.clone(), d).unwrap();
            prop_assert!(p.point.dispersion > 0.0 && p.point.dispersion <= 0.5 + 1e-15);
            theta.push(p.solution.theta);
            rate.push(p.point.rate);
        }
        for w in theta.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
        for w in rate.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-15);
        }
        for w in rate.windows(3) {
            prop_assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-12);
        }
    }

    #[test]
    fn lambda_below_left_secant(v in variances(), frac in 0.2f64..0.9, back in 0.05f64..0.95) {
        let spec = EigenSpectrum::from_variances(v).unwrap();
        let d = frac * spec.mean();
        let check = lambda_check(&spec, d, d * back).unwrap();
        prop_assert_eq!(check.left_holds(), Some(true));
    }

    #[test]
    fn iid_rate_does_not_depend_on_n(s2 in 0.1f64..5.0, frac in 0.01f64..0.99, n in 1usize..64) {
        let one = Problem::from_spectrum(EigenSpectrum::from_variances(vec![s2]).unwrap(), frac * s2).unwrap();
        let many = Problem::from_spectrum(EigenSpectrum::from_variances(vec![s2; n]).unwrap(), frac * s2).unwrap();
        prop_assert_eq!(one.point.rate, many.point.rate);
        prop_assert_eq!(one.point.dispersion, many.point.dispersion);
    }

    #[test]
    fn j_derivatives_consistent(u in -4.0f64..4.0, lambda in 0.05f64..5.0, nu in 0.0f64..4.0) {
        let h = 1e-5;
        let mid = j_and_derivatives(u, lambda, nu).unwrap();
        let up = j_and_derivatives(u, lambda + h, nu).unwrap();
        let down = j_and_derivatives(u, lambda - h, nu).unwrap();
        prop_assert!(mid.d2 <= 0.0);
        prop_assert!(((up.j - down.j) / (2.0 * h) - mid.d1).abs() <= 1e-6 * (1.0 + mid.d1.abs()));
        prop_assert!(((up.d1 - down.d1) / (2.0 * h) - mid.d2).abs() <= 1e-6 * (1.0 + mid.d2.abs()));
        prop_assert!(((up.d2 - down.d2) / (2.0 * h) - mid.d3).abs() <= 1e-6 * (1.0 + mid.d3.abs()));
    }

    #[test]
    fn tilted_summand_plus_tilt_is_nonnegative(v in variances(), frac in 0.05f64..0.95, u in -6.0f64..6.0) {
        let spec = EigenSpectrum::from_variances(v).unwrap();
        let sol = solve_water_level(&spec, frac * spec.mean()).unwrap();
        let params = TiltedParams::from(&sol);
        for p in &sol.per_index {
            prop_assert!(tilted_letter(u, p, sol.theta) + params.lambda_star * p.d >= 0.0);
        }
    }

    #[test]
    fn tilted_cdf_is_a_cdf(v in prop::collection::vec(0.1f64..4.0, 1..16), frac in 0.1f64..0.9) {
        let spec = EigenSpectrum::from_variances(v).unwrap();
        let sol = solve_water_level(&spec, frac * spec.mean()).unwrap();
        let dist = TiltedDistribution::new(&sol).unwrap();
        let mut last = 0.0;
        for k in 0..=40 {
            let t = dist.offset() - 1.0 + k as f64 * (dist.mean() + 8.0 * dist.sd() + 2.0 - dist.offset()) / 40.0;
            let c = dist.cdf(t).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(c >= last - 1e-10, "cdf decreased at {t}: {c} < {last}");
            last = c;
        }
        prop_assert_eq!(dist.cdf(dist.offset() - 1.0).unwrap(), 0.0);
        prop_assert!(dist.cdf(dist.mean() + 60.0 * dist.sd() + 10.0).unwrap() > 1.0 - 1e-8);
    }

    #[test]
    fn ball_probability_falls_as_x_moves_out(v in prop::collection::vec(0.2f64..4.0, 1..10), seed in 0u64..1000) {
        let spec = EigenSpectrum::from_variances(v).unwrap();
        let sol = solve_water_level(&spec, 0.3 * spec.mean()).unwrap();
        let n = sol.n();
        let mut x: Vec<f64> = (0..n).map(|i| ((seed as f64 + 1.0) * (i as f64 + 0.5)).sin()).collect();
        let i = (seed as usize) % n;
        let mut last = 1.0;
        for k in 0..12 {
            x[i] = 0.25 * k as f64;
            let p = ball_probability(&x, &sol).unwrap();
            prop_assert!(p <= last + 1e-12, "{p} > {last}");
            last = p;
        }
    }

    #[test]
    fn normal_quantile_roundtrip(eps in 1e-12f64..(1.0 - 1e-12)) {
        let z = q_inverse(eps).unwrap();
        prop_assert!((q(z) - eps).abs() <= 1e-12);
        if eps < 0.5 {
            prop_assert!(z > 0.0);
        }
    }

    #[test]
    fn quadratic_form_tails_sum_to_one(
        terms in prop::collection::vec((0.05f64..3.0, 0.0f64..4.0), 1..20),
        frac in 0.05f64..3.0,
    ) {
        let (w, d): (Vec<f64>, Vec<f64>) = terms.into_iter().unzip();
        let form = QuadraticForm::new(&w, &d).unwrap();
        let t = form.tails(frac * form.mean()).unwrap();
        prop_assert!((t.lower() + t.upper() - 1.0).abs() < 1e-9);
    }
}
