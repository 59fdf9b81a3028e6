//! Piecewise cubic Hermite interpolation with C2 spline slopes.

use serde::{Deserialize, Serialize};

/// End condition for a cubic spline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EndCondition {
    Natural,
    NotAKnot,
    Clamped(f64),
}

#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    k: Vec<f64>,
}

fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = if i + 1 < n { sup[i] / m } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
    }
    let mut out = vec![0.0; n];
    out[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = d[i] - c[i] * out[i + 1];
    }
    out
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>, left: EndCondition, right: EndCondition) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n, "spline needs at least two matching points");
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        if n == 2 {
            let k = vec![del[0]; 2];
            return Self { x, y, k };
        }
        let (left, right) = if n < 4 {
            let f = |c| if c == EndCondition::NotAKnot { EndCondition::Natural } else { c };
            (f(left), f(right))
        } else {
            (left, right)
        };
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            sub[i] = h[i];
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            sup[i] = h[i - 1];
            rhs[i] = 3.0 * (h[i] * del[i - 1] + h[i - 1] * del[i]);
        }
        match left {
            EndCondition::Clamped(d) => {
                diag[0] = 1.0;
                rhs[0] = d;
            }
            EndCondition::Natural => {
                diag[0] = 2.0;
                sup[0] = 1.0;
                rhs[0] = 3.0 * del[0];
            }
            EndCondition::NotAKnot => {
                let x20 = x[2] - x[0];
                diag[0] = h[1];
                sup[0] = x20;
                rhs[0] = ((h[0] + 2.0 * x20) * h[1] * del[0] + h[0] * h[0] * del[1]) / x20;
            }
        }
        let m = n - 1;
        match right {
            EndCondition::Clamped(d) => {
                diag[m] = 1.0;
                sub[m] = 0.0;
                rhs[m] = d;
            }
            EndCondition::Natural => {
                sub[m] = 1.0;
                diag[m] = 2.0;
                rhs[m] = 3.0 * del[m - 1];
            }
            EndCondition::NotAKnot => {
                let xn = x[m] - x[m - 2];
                sub[m] = xn;
                diag[m] = h[m - 2];
                rhs[m] = (h[m - 1] * h[m - 1] * del[m - 2] + (2.0 * xn + h[m - 1]) * h[m - 2] * del[m - 1]) / xn;
            }
        }
        let k = solve_tridiagonal(&sub, &diag, &sup, &rhs);
        Self { x, y, k }
    }

    /// Piecewise cubic Hermite interpolant with prescribed nodal slopes.
    pub fn from_hermite(x: Vec<f64>, y: Vec<f64>, k: Vec<f64>) -> Self {
        assert!(x.len() >= 2 && y.len() == x.len() && k.len() == x.len(), "hermite data must match the knots");
        Self { x, y, k }
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn slopes(&self) -> &[f64] {
        &self.k
    }

    fn locate(&self, t: f64) -> usize {
        let i = self.x.partition_point(|&xi| xi <= t);
        i.clamp(1, self.x.len() - 1) - 1
    }

    /// Value, first and second derivative; the outermost cubic pieces are
    /// extended beyond the knot range.
    pub fn eval_all(&self, t: f64) -> (f64, f64, f64) {
        let i = self.locate(t);
        let h = self.x[i + 1] - self.x[i];
        let u = (t - self.x[i]) / h;
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (k0, k1) = (self.k[i] * h, self.k[i + 1] * h);
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        let v = h00 * y0 + h10 * k0 + h01 * y1 + h11 * k1;
        let d00 = 6.0 * u2 - 6.0 * u;
        let d10 = 3.0 * u2 - 4.0 * u + 1.0;
        let d01 = -d00;
        let d11 = 3.0 * u2 - 2.0 * u;
        let d = (d00 * y0 + d10 * k0 + d01 * y1 + d11 * k1) / h;
        let s00 = 12.0 * u - 6.0;
        let s10 = 6.0 * u - 4.0;
        let s11 = 6.0 * u - 2.0;
        let dd = (s00 * y0 + s10 * k0 - s00 * y1 + s11 * k1) / (h * h);
        (v, d, dd)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_all(t).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reproduces_cubics_with_not_a_knot() {
        let x: Vec<f64> = (0..9).map(|i| (i as f64 / 8.0).powi(2) * 3.0).collect();
        let p = |t: f64| 1.0 - 2.0 * t + 0.5 * t * t - 0.25 * t * t * t;
        let y = x.iter().map(|&t| p(t)).collect();
        let s = CubicSpline::new(x, y, EndCondition::NotAKnot, EndCondition::NotAKnot);
        for &t in &[0.01, 0.4, 1.3, 2.2, 2.99] {
            let (v, d, dd) = s.eval_all(t);
            assert_relative_eq!(v, p(t), epsilon = 1e-12);
            assert_relative_eq!(d, -2.0 + t - 0.75 * t * t, epsilon = 1e-11);
            assert_relative_eq!(dd, 1.0 - 1.5 * t, epsilon = 1e-10);
        }
    }

    #[test]
    fn clamped_end_slope_is_honored() {
        let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let y = x.iter().map(|t| (-t * t / 4.0f64).exp()).collect();
        let s = CubicSpline::new(x, y, EndCondition::Natural, EndCondition::Clamped(0.0));
        assert!(s.eval_all(5.0).1.abs() < 1e-14);
        assert!(s.eval_all(0.0).2.abs() < 1e-12);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |n: usize| {
            let x: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let y = x.iter().map(|t| t.sin()).collect();
            let s = CubicSpline::new(x, y, EndCondition::NotAKnot, EndCondition::NotAKnot);
            (0..200).map(|j| {
                let t = (j as f64 + 0.5) / 200.0;
                (s.eval(t) - t.sin()).abs()
            })
            .fold(0.0, f64::max)
        };
        let r = (err(10) / err(20)).log2();
        assert!(r > 3.7, "observed order {r}");
    }
}
