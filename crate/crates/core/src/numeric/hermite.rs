//! Gauss–Hermite rules for expectations over a standard normal variable.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::spectrum::tridiagonal_eigenvalues;

/// Rule with `E[f(Z)] ≈ Σ exp(log_weights[i]) f(nodes[i])`, `Z ~ N(0,1)`.
#[derive(Debug)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
}

/// Orthonormal Hermite recurrence at `z`: returns `(p_n, p_{n-1}, ln scale)`.
fn orthonormal(n: usize, z: f64) -> (f64, f64, f64) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    const RESCALE: f64 = 1e150;
    let (mut p1, mut p2, mut log_scale) = (PIM4, 0.0_f64, 0.0_f64);
    for j in 0..n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
        if p1.abs() > RESCALE {
            p1 /= RESCALE;
            p2 /= RESCALE;
            log_scale += RESCALE.ln();
        }
    }
    (p1, p2, log_scale)
}

/// Physicists' nodes from the Jacobi matrix eigenvalues, polished by Newton
/// steps on the orthonormal polynomials, then rescaled to the probabilists' form.
fn build(n: usize) -> HermiteRule {
    let off: Vec<f64> = (1..n).map(|k| (0.5 * k as f64).sqrt()).collect();
    let mut roots = tridiagonal_eigenvalues(&vec![0.0; n], &off).expect("Hermite Jacobi matrix");
    roots.sort_by(|a, b| b.total_cmp(a));
    let nf = n as f64;
    let half_ln_pi = 0.5 * std::f64::consts::PI.ln();
    let mut nodes = Vec::with_capacity(n);
    let mut log_weights = Vec::with_capacity(n);
    for mut z in roots {
        let mut log_pp = 0.0;
        for _ in 0..4 {
            let (p1, p2, log_scale) = orthonormal(n, z);
            let pp = (2.0 * nf).sqrt() * p2;
            log_pp = pp.abs().ln() + log_scale;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 1e-16 * z.abs().max(1.0) {
                break;
            }
        }
        nodes.push(z * std::f64::consts::SQRT_2);
        log_weights.push(std::f64::consts::LN_2 - 2.0 * log_pp - half_ln_pi);
    }
    HermiteRule { nodes, log_weights }
}

/// Cached rule with `n` nodes.
pub fn rule(n: usize) -> Arc<HermiteRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<HermiteRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("hermite cache poisoned");
    guard.entry(n).or_insert_with(|| Arc::new(build(n))).clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moment(r: &HermiteRule, k: i32) -> f64 {
        r.nodes
            .iter()
            .zip(&r.log_weights)
            .map(|(x, w)| w.exp() * x.powi(k))
            .sum()
    }

    #[test]
    fn normal_moments() {
        for n in [10, 200, 400, 800] {
            let r = rule(n);
            assert!((moment(&r, 0) - 1.0).abs() < 1e-12, "n={n}");
            assert!((moment(&r, 2) - 1.0).abs() < 1e-12, "n={n}");
            assert!((moment(&r, 4) - 3.0).abs() < 1e-11, "n={n}");
            assert!(moment(&r, 3).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn nodes_sorted_descending_and_distinct() {
        let r = rule(200);
        assert!(r.nodes.windows(2).all(|w| w[0] > w[1]));
    }
}
