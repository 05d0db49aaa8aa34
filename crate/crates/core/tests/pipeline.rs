//! End-to-end checks across bounds and simulation.

use fbrd::bounds::{
    achievability_formula_for, converse_epsilon, converse_rate_for, gaussian_approx_for, AchievabilitySampler,
    FormulaConstants,
};
use fbrd::simulate::{aep_experiment, convergence_sweep, run_random_code, run_random_code_multi, CodecConfig};
use fbrd::spectrum::{SourceSpec, SpectrumOptions};
use fbrd::waterfill::{concentration_report, Problem};
use fbrd::Error;

fn gm(a: f64) -> SourceSpec {
    SourceSpec::gauss_markov(a, 1.0).unwrap()
}

fn problem(a: f64, n: usize, d: f64) -> Problem {
    Problem::new(&gm(a), n, d, &SpectrumOptions::default()).unwrap()
}

#[test]
fn converse_below_approximation_below_achievability() {
    for &(a, n) in &[(0.0, 16), (0.5, 24), (0.9, 32)] {
        let p = problem(a, n, 0.3);
        for &eps in &[0.05, 0.3, 0.7] {
            let c = converse_rate_for(&p, eps).unwrap();
            let g = gaussian_approx_for(&p, eps).unwrap();
            let s = AchievabilitySampler::new(&p, 10_000, 5)
                .unwrap()
                .solve(&p, eps)
                .unwrap();
            assert!(c.rate <= s.rate, "a={a} n={n} eps={eps}");
            assert!(
                c.rate <= g.rate && g.rate <= s.rate,
                "a={a} n={n} eps={eps}: {} {} {}",
                c.rate,
                g.rate,
                s.rate
            );
        }
    }
}

#[test]
fn achievability_agrees_with_direct_simulation() {
    let p = problem(0.0, 4, 0.25);
    let sampler = AchievabilitySampler::new(&p, 50_000, 21).unwrap();
    let r = sampler.solve(&p, 0.1).unwrap();
    let m = r.log_m.exp().ceil() as u64;
    let (predicted, pse) = sampler.random_coding_error((m as f64).ln());
    let sim = run_random_code(&CodecConfig::new(gm(0.0), 4, m, 0.25, 100_000, 22)).unwrap();
    let sigma = (sim.stderr.powi(2) + pse.powi(2)).sqrt();
    assert!(
        (sim.epsilon_hat - predicted).abs() <= 3.0 * sigma,
        "{} vs {predicted}",
        sim.epsilon_hat
    );
    assert!(sim.epsilon_hat <= 0.1 + 3.0 * sim.stderr);
}

#[test]
fn no_simulated_code_beats_the_converse() {
    let p = problem(0.0, 6, 0.25);
    let sizes = [1, 4, 16, 64, 256, 1024];
    let cfg = CodecConfig::new(gm(0.0), 6, 1024, 0.25, 20_000, 8);
    let est = run_random_code_multi(&cfg, &sizes).unwrap();
    for e in &est {
        let floor = converse_epsilon(&p, e.m).unwrap();
        assert!(
            e.epsilon_hat >= floor - 3.0 * e.stderr,
            "M={}: {} < {floor}",
            e.m,
            e.epsilon_hat
        );
        assert!(e.epsilon_hat <= 1.0);
    }
}

#[test]
fn formula_needs_large_enough_blocklength() {
    let p = problem(0.5, 1024, 0.3);
    let k = FormulaConstants {
        c0: 1.0,
        c: 0.0,
        k: 1.0,
        berry_esseen: None,
    };
    match achievability_formula_for(&p, 0.1, k) {
        Err(Error::BlocklengthTooSmall { epsilon_n, .. }) => assert!(epsilon_n <= 0.0),
        other => panic!("expected a blocklength error, got {other:?}"),
    }
    let with_override = FormulaConstants {
        berry_esseen: Some(0.5),
        ..k
    };
    let r = achievability_formula_for(&p, 0.1, with_override).unwrap();
    assert!(r.rate > gaussian_approx_for(&p, 0.1).unwrap().rate);
}

#[test]
fn white_source_sweep_has_no_concentration_gap() {
    let rep = convergence_sweep(&gm(0.0), 0.3, &[8, 16, 32], 0.1, 10_000, 1, &SpectrumOptions::default()).unwrap();
    for row in &rep.concentration.as_ref().unwrap().rows {
        assert_eq!(row.theta_gap, 0.0);
        assert!(row.rate_gap <= 1e-15 && row.dispersion_gap <= 1e-15);
    }
    assert!(rep.sandwich_holds());
}

#[test]
fn gauss_markov_sweep_keeps_approximation_inside_sandwich() {
    let ns = [16, 32, 64, 128, 256, 512];
    let rep = convergence_sweep(&gm(0.5), 0.3, &ns, 0.1, 10_000, 3, &SpectrumOptions::default()).unwrap();
    for r in &rep.rows {
        assert!(r.converse <= r.approx && r.approx <= r.achievability, "n = {}", r.n);
        assert_eq!(r.kappa, 0.0);
    }
    assert!(rep.remainder_ratio <= 10.0, "ratio {}", rep.remainder_ratio);
}

#[test]
fn water_level_gap_decays_like_one_over_n_when_some_eigenvalues_are_inactive() {
    let ns: Vec<usize> = (4..=10).map(|k| 1 << k).collect();
    let rep = concentration_report(&gm(0.5), 1.0, &ns, &SpectrumOptions::default()).unwrap();
    assert!(
        (rep.limit.theta_star - 1.704_445_027_5).abs() < 1e-9,
        "{}",
        rep.limit.theta_star
    );
    let slope = rep.slopes.theta.unwrap();
    assert!((-1.3..=-0.8).contains(&slope), "slope {slope}");
    let scaled: Vec<f64> = rep.rows.iter().map(|r| r.n as f64 * r.rate_gap).collect();
    assert!(scaled.iter().all(|&s| s < 1.0), "{scaled:?}");
}

#[test]
fn aep_gap_grows_slowly() {
    let rep = aep_experiment(
        &gm(0.5),
        0.3,
        &[8, 16, 32, 64],
        10_000,
        (1.0, 1.0),
        13,
        &SpectrumOptions::default(),
    )
    .unwrap();
    let fit = rep.fit.unwrap();
    assert!(fit.median_slope > 0.0 && fit.median_slope.is_finite(), "{fit:?}");
    assert!(fit.c0 >= 0.0);
    for r in &rep.records {
        assert_eq!(r.excluded, 0);
        let t = fit.c0 * (r.n as f64).ln() + fit.c;
        let v = r.samples.iter().filter(|s| s.gap > t).count() as f64 / r.samples.len() as f64;
        assert!(v <= 1.0 / (r.n as f64).sqrt() + 1e-12);
    }
}
