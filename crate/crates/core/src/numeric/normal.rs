//! Standard normal density, tails and the inverse upper-tail quantile.

use libm::erfc;

use crate::error::{domain, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail `Q(x) = P[Z > x]`.
pub fn q(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// `Q^{-1}(eps)`: the `x` with `P[Z > x] = eps`.
pub fn q_inverse(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return domain(format!("epsilon must lie in (0,1), got {eps}"));
    }
    let mut x = -acklam_phi_inv(eps);
    // Newton polish on Q(x) - eps; Q' = -pdf.
    for _ in 0..3 {
        let p = pdf(x);
        if p == 0.0 {
            break;
        }
        let step = (q(x) - eps) / p;
        x += step;
        if step.abs() <= 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Rational approximation to the standard normal quantile (relative error about 1e-9).
fn acklam_phi_inv(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let tail = |t: f64| {
        let q = (-2.0 * t.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    const P_LOW: f64 = 0.024_25;
    if p < P_LOW {
        tail(p)
    } else if p > 1.0 - P_LOW {
        -tail(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_is_zero() {
        assert_eq!(q_inverse(0.5).unwrap(), 0.0);
    }

    #[test]
    fn known_quantile() {
        // Bisection on Q as an independent oracle.
        let (mut lo, mut hi) = (0.0_f64, 5.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q(mid) > 0.1 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = q_inverse(0.1).unwrap();
        assert!((x - lo).abs() < 1e-12);
        assert!((x - 1.281_551_565_544_6).abs() < 1e-9);
    }

    #[test]
    fn roundtrip_grid() {
        for k in 1..100 {
            let eps = k as f64 / 100.0;
            let x = q_inverse(eps).unwrap();
            assert!((q(x) - eps).abs() <= 1e-12, "eps {eps}");
        }
    }

    #[test]
    fn deep_tail_roundtrip() {
        for eps in [1e-10, 1e-50, 1e-200, 1.0 - 1e-9] {
            let x = q_inverse(eps).unwrap();
            assert!(
                (q(x) - eps).abs() <= 1e-12 * eps.clamp(1e-300, 1.0) + 1e-300,
                "eps {eps}"
            );
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(q_inverse(0.0).is_err());
        assert!(q_inverse(1.0).is_err());
        assert!(q_inverse(f64::NAN).is_err());
    }
}
