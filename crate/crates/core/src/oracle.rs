//! Closed-form reference values used by the acceptance suite and tests.

use std::f64::consts::{E, PI};

/// Value function of 1D Brownian motion with `f ≡ 0`, `g(x) = x²/2` on
/// `[0, T]`: `½ log(1 + T − t) + z² / (2(1 + T − t))`.
pub fn quadratic_value(z: f64, t: f64, horizon: f64) -> f64 {
    let s = 1.0 + horizon - t;
    0.5 * s.ln() + z * z / (2.0 * s)
}

/// Optimal control of the same problem, `−z / (1 + T − t)`.
pub fn quadratic_control(z: f64, t: f64, horizon: f64) -> f64 {
    -z / (1.0 + horizon - t)
}

/// `D(N(m, s²) ‖ N(0, 1)) = ½ (m² + s² − 1 − log s²)`.
pub fn gaussian_kl_standard(m: f64, var: f64) -> f64 {
    0.5 * (m * m + var - 1.0 - var.ln())
}

/// Differential entropy of `N(·, σ²)`: `½ log(2πe σ²)`.
pub fn gaussian_entropy(var: f64) -> f64 {
    0.5 * (2.0 * PI * E * var).ln()
}

/// `−log` of the `N(0, var)` density at `x`.
pub fn gaussian_neg_log_density(x: f64, var: f64) -> f64 {
    0.5 * (2.0 * PI * var).ln() + x * x / (2.0 * var)
}

/// Cross-covariance of the Brownian Schrödinger bridge between centered
/// Gaussians of variances `a` and `b` over time `ε`: the positive root of
/// `c² + ε c − a b = 0`.
pub fn gaussian_bridge_covariance(a: f64, b: f64, eps: f64) -> f64 {
    0.5 * (-eps + (eps * eps + 4.0 * a * b).sqrt())
}

/// Mean and variance of the OU transition `dX = −θ X dt + σ dW` over `t`.
pub fn ou_transition(z: f64, theta: f64, sigma: f64, t: f64) -> (f64, f64) {
    let decay = (-theta * t).exp();
    (z * decay, sigma * sigma * (1.0 - decay * decay) / (2.0 * theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_numbers() {
        assert!((quadratic_value(0.0, 0.0, 1.0) - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(quadratic_control(1.0, 0.0, 1.0), -0.5);
        assert_eq!(gaussian_kl_standard(1.0, 1.0), 0.5);
        assert!((gaussian_kl_standard(0.0, 0.5) - 0.096574).abs() < 1e-6);
        assert!((gaussian_entropy(2.0) - 1.765512).abs() < 1e-6);
        assert!((gaussian_entropy(1.0) - 1.418939).abs() < 1e-6);
        assert!((gaussian_neg_log_density(0.0, 2.0) - 1.265512).abs() < 1e-6);
        assert!((gaussian_bridge_covariance(0.25, 0.25, 1.0) - 0.0590169944).abs() < 1e-10);
    }

    #[test]
    fn bridge_covariance_root() {
        for (a, b, e) in [(0.25, 0.25, 1.0), (1.0, 2.0, 0.3), (0.1, 4.0, 2.0)] {
            let c = gaussian_bridge_covariance(a, b, e);
            assert!((c * c + e * c - a * b).abs() < 1e-12);
            assert!(c > 0.0 && c < (a * b).sqrt());
        }
    }
}
