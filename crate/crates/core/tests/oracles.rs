//! Monte Carlo oracles for the analytic quantities.

use fbrd::bounds::{ball_probability, tilted_cdf, TiltedDistribution};
use fbrd::numeric::stats::{mean_stderr, variance, variance_stderr};
use fbrd::qform::QuadraticForm;
use fbrd::rng::{stream, Purpose};
use fbrd::spectrum::{covariance_matrix, SourceSpec, SpectrumOptions};
use fbrd::tilted::{sample_source, tilted_samples, TiltedParams};
use fbrd::waterfill::Problem;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

#[test]
fn covariance_matches_simulated_paths() {
    let (a, s2, n) = (0.9, 2.0, 4);
    let src = SourceSpec::gauss_markov(a, s2).unwrap();
    let cov = covariance_matrix(&src, n, &SpectrumOptions::default()).unwrap();
    let chunks = 1000u64;
    let per_chunk = 10_000usize;
    // Per chunk: sums of x_i x_j and of their squares, upper triangle.
    let sums: Vec<[f64; 20]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(42, Purpose::Paths, c);
            let mut acc = [0.0; 20];
            for _ in 0..per_chunk {
                let mut x = [0.0; 4];
                let mut prev = 0.0;
                for xi in x.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    prev = a * prev + s2.sqrt() * z;
                    *xi = prev;
                }
                let mut k = 0;
                for i in 0..n {
                    for j in i..n {
                        let p = x[i] * x[j];
                        acc[k] += p;
                        acc[k + 10] += p * p;
                        k += 1;
                    }
                }
            }
            acc
        })
        .collect();
    let total = (chunks as usize * per_chunk) as f64;
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let m = sums.iter().map(|s| s[k]).sum::<f64>() / total;
            let m2 = sums.iter().map(|s| s[k + 10]).sum::<f64>() / total;
            let se = ((m2 - m * m) / total).sqrt();
            assert!(
                (m - cov[(i, j)]).abs() <= 4.0 * se,
                "entry ({i},{j}): {m} vs {} (se {se})",
                cov[(i, j)]
            );
            k += 1;
        }
    }
}

#[test]
fn tilted_mean_and_variance_match_simulation() {
    for &(a, n, d) in &[(0.5, 32, 0.3), (0.9, 16, 0.5), (0.0, 8, 0.25)] {
        let src = SourceSpec::gauss_markov(a, 1.0).unwrap();
        let p = Problem::new(&src, n, d, &SpectrumOptions::default()).unwrap();
        let params = TiltedParams::from(&p.solution);
        let (mean, var) = params.mean_variance();
        let nf = n as f64;
        assert!((mean / nf - p.point.rate).abs() <= 1e-12);
        assert!((var / nf - p.point.dispersion).abs() <= 1e-12);
        let draws = tilted_samples(&params, 1_000_000, 9);
        let (m, se) = mean_stderr(&draws);
        assert!((m - mean).abs() <= 4.0 * se, "mean {m} vs {mean}");
        let v = variance(&draws);
        let vse = variance_stderr(&draws);
        assert!((v - var).abs() <= 4.0 * vse, "variance {v} vs {var}");
    }
}

#[test]
fn tilted_cdf_matches_simulation() {
    let src = SourceSpec::gauss_markov(0.5, 1.0).unwrap();
    let p = Problem::new(&src, 32, 0.3, &SpectrumOptions::default()).unwrap();
    let params = TiltedParams::from(&p.solution);
    let dist = TiltedDistribution::new(&p.solution).unwrap();
    let mut draws = tilted_samples(&params, 1_000_000, 17);
    draws.sort_by(f64::total_cmp);
    let total = draws.len() as f64;
    for k in 0..10 {
        let t = dist.mean() + (k as f64 - 4.5) * 0.6 * dist.sd();
        let exact = tilted_cdf(&p.spectrum, &p.solution, t).unwrap();
        let hits = draws.partition_point(|&x| x <= t) as f64 / total;
        let se = (exact * (1.0 - exact) / total).sqrt();
        assert!((hits - exact).abs() <= 4.0 * se, "t = {t}: {hits} vs {exact}");
    }
}

#[test]
fn ball_probability_matches_simulation() {
    let src = SourceSpec::gauss_markov(0.7, 1.0).unwrap();
    let p = Problem::new(&src, 6, 0.5, &SpectrumOptions::default()).unwrap();
    for i in 0..5u64 {
        let mut x = vec![0.0; 6];
        sample_source(&mut stream(3, Purpose::Source, i), &p.solution.per_index, &mut x);
        let exact = ball_probability(&x, &p.solution).unwrap();
        let nu: Vec<f64> = p.solution.per_index.iter().map(|q| q.nu).collect();
        let budget = 6.0 * 0.5;
        let hits: u64 = (0..100u64)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream(4 + i, Purpose::Reproduction, c);
                let mut count = 0;
                for _ in 0..10_000 {
                    let mut dist = 0.0;
                    for (xi, v) in x.iter().zip(&nu) {
                        let z: f64 = rng.sample(StandardNormal);
                        dist += (xi - v.sqrt() * z).powi(2);
                    }
                    count += (dist <= budget) as u64;
                }
                count
            })
            .sum();
        let est = hits as f64 / 1e6;
        let se = (exact * (1.0 - exact) / 1e6).sqrt().max(1e-7);
        assert!((est - exact).abs() <= 4.0 * se, "sample {i}: {est} vs {exact}");
    }
}

#[test]
fn quadratic_form_matches_simulation_on_random_configs() {
    let mut rng = stream(2024, Purpose::Paths, 0);
    for cfg in 0..20u64 {
        let len = rng.random_range(1..=12);
        let w: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..3.0)).collect();
        let d: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..4.0)).collect();
        let form = QuadraticForm::new(&w, &d).unwrap();
        let q = form.mean() * rng.random_range(0.3..2.0);
        let exact = form.cdf(q).unwrap();
        let hits: u64 = (0..100u64)
            .into_par_iter()
            .map(|c| {
                let mut r = stream(cfg, Purpose::Reproduction, c);
                (0..10_000).filter(|_| form.sample(&mut r) <= q).count() as u64
            })
            .sum();
        let est = hits as f64 / 1e6;
        let se = (exact * (1.0 - exact) / 1e6).sqrt().max(1e-7);
        assert!((est - exact).abs() <= 4.0 * se, "config {cfg}: {est} vs {exact}");
    }
}
