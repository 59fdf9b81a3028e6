//! Special functions used by the kernel constants.

use std::f64::consts::PI;

/// Gamma function on the real line (poles at non-positive integers give NaN/inf).
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection keeps the Lanczos sum in its accurate range
        PI / ((PI * x).sin() * statrs::function::gamma::gamma(1.0 - x))
    } else {
        statrs::function::gamma::gamma(x)
    }
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Surface area of the unit sphere S^{n-1} in R^n.
pub fn sphere_area(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// Regularized incomplete beta I_x(a, b).
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    statrs::function::beta::beta_reg(a, b, x)
}
