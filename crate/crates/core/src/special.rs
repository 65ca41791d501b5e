//! Bessel functions of integer order for real arguments.
//!
//! Both kinds are evaluated from their integral representations with the
//! trapezoid rule, which converges geometrically for these integrands:
//!
//! * `J_n(x) = (1/2π) ∫_0^{2π} cos(nτ − x sin τ) dτ` is periodic, so an
//!   `N`-point rule is exact up to `O(J_N(x))`.
//! * `K_n(x) = ∫_0^∞ exp(−x cosh t) cosh(nt) dt` decays double-exponentially.
//!
//! Accuracy is close to machine precision over the argument range the fiber
//! solver and field synthesis need (`0 < x ≲ 50`).

use std::f64::consts::PI;

/// Bessel function of the first kind, `J_n(x)`, integer order.
pub fn bessel_j(n: i32, x: f64) -> f64 {
    if n < 0 {
        let v = bessel_j(-n, x);
        return if n % 2 == 0 { v } else { -v };
    }
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    // Harmonics of cos(x sin τ) beyond |x| + ~40 are below 1e-17.
    let samples = 48 + 2 * (x.abs().ceil() as usize) + n as usize;
    let step = 2.0 * PI / samples as f64;
    let nf = n as f64;
    let mut sum = 0.0;
    for k in 0..samples {
        let tau = k as f64 * step;
        sum += (nf * tau - x * tau.sin()).cos();
    }
    sum / samples as f64
}

/// Derivative `J_n'(x) = (J_{n−1}(x) − J_{n+1}(x)) / 2`.
pub fn bessel_j_prime(n: i32, x: f64) -> f64 {
    0.5 * (bessel_j(n - 1, x) - bessel_j(n + 1, x))
}

/// Exponentially scaled modified Bessel function `e^x K_n(x)`, `x > 0`.
pub fn bessel_k_scaled(n: i32, x: f64) -> f64 {
    assert!(x > 0.0, "K_n requires a positive argument, got {x}");
    let nf = n.abs() as f64;
    let h = 0.05;
    // Integrand is exp(−x (cosh t − 1)) cosh(n t); sum symmetric half-line.
    let mut sum = 0.5; // t = 0 term, cosh(0) = 1, weighted by 1/2
    let mut k = 1usize;
    loop {
        let t = k as f64 * h;
        let arg = -x * (t.cosh() - 1.0);
        let term = (arg + nf * t).exp() * 0.5 * (1.0 + (-2.0 * nf * t).exp());
        sum += term;
        if term < 1e-18 * sum && arg < -40.0 {
            break;
        }
        k += 1;
        if k > 100_000 {
            break;
        }
    }
    sum * h
}

/// Modified Bessel function of the second kind, `K_n(x)`, `x > 0`.
pub fn bessel_k(n: i32, x: f64) -> f64 {
    bessel_k_scaled(n, x) * (-x).exp()
}

/// Derivative `K_n'(x) = −(K_{n−1}(x) + K_{n+1}(x)) / 2`.
pub fn bessel_k_prime(n: i32, x: f64) -> f64 {
    -0.5 * (bessel_k(n - 1, x) + bessel_k(n + 1, x))
}

/// Ratio `K_{n−1}(x) / K_n(x)` computed from scaled values (no overflow).
pub fn bessel_k_ratio(n: i32, x: f64) -> f64 {
    bessel_k_scaled(n - 1, x) / bessel_k_scaled(n, x)
}

/// First zero of `J_0`.
pub const J0_FIRST_ZERO: f64 = 2.404_825_557_695_773;

/// The `m`-th positive zero (m ≥ 1) of `J_n`, found by bracketing and bisection.
pub fn bessel_j_zero(n: i32, m: usize) -> f64 {
    assert!(m >= 1);
    let step = 0.05;
    let mut found = 0;
    let mut x0 = if n == 0 { 1e-6 } else { step };
    let mut f0 = bessel_j(n, x0);
    loop {
        let x1 = x0 + step;
        let f1 = bessel_j(n, x1);
        if f0 == 0.0 || f0 * f1 < 0.0 {
            found += 1;
            if found == m {
                return bisect(|x| bessel_j(n, x), x0, x1);
            }
        }
        x0 = x1;
        f0 = f1;
    }
}

/// Bisection to full double precision on a bracketing interval.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Reference values from scipy.special (jv, kv).
    #[test]
    fn j_reference_values() {
        assert_relative_eq!(bessel_j(0, 1.0), 0.765_197_686_557_966_6, max_relative = 1e-14);
        assert_relative_eq!(bessel_j(1, 2.5), 0.497_094_102_464_274_1, max_relative = 1e-14);
        assert_relative_eq!(bessel_j(2, 7.3), -0.265_594_911_883_436_9, max_relative = 1e-13);
        assert_relative_eq!(bessel_j(3, 0.2), 1.662_504_164_352_679_7e-4, max_relative = 1e-13);
        assert_relative_eq!(bessel_j(-1, 2.5), -0.497_094_102_464_274_1, max_relative = 1e-14);
    }

    #[test]
    fn k_reference_values() {
        assert_relative_eq!(bessel_k(0, 1.0), 0.421_024_438_240_708_3, max_relative = 1e-14);
        assert_relative_eq!(bessel_k(1, 0.01), 99.973_894_118_296_24, max_relative = 1e-13);
        assert_relative_eq!(bessel_k(2, 3.7), 0.025_159_327_544_450_05, max_relative = 1e-13);
        assert_relative_eq!(bessel_k(1, 25.0), 3.532_778_073_199_933e-12, max_relative = 1e-12);
    }

    #[test]
    fn first_zero_of_j0() {
        assert_relative_eq!(bessel_j_zero(0, 1), J0_FIRST_ZERO, max_relative = 1e-15);
        assert_relative_eq!(bessel_j_zero(1, 1), 3.831_705_970_207_512, max_relative = 1e-14);
    }

    #[test]
    fn derivative_identities() {
        // J0' = −J1, K0' = −K1
        let x = 1.7;
        assert_relative_eq!(bessel_j_prime(0, x), -bessel_j(1, x), max_relative = 1e-14);
        assert_relative_eq!(bessel_k_prime(0, x), -bessel_k(1, x), max_relative = 1e-14);
    }
}
