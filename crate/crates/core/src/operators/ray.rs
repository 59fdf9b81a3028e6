//! Radial integrals along a single ray x + rθ.

use crate::equilibrium::{KernelTable, V3};
use crate::geometry::{Field, Jet};
use std::sync::OnceLock;

use crate::quad::{adaptive, adaptive_with_breaks, endpoint_power, gauss_legendre, semi_infinite, unit_power_rule, Estimate, Tol};

use super::Acc;

/// Difference quotients are replaced by integral Taylor remainders below
/// `taylor_switch(b1)`, where b1 is the first smooth piece of the path.
pub(super) const TAYLOR_RADIUS: f64 = 1e-2;

pub(crate) fn taylor_switch(b1: f64) -> f64 {
    b1.min(1e-2).max(TAYLOR_RADIUS * b1)
}

/// Four-point Gauss rules on [0, 1] for the weights 1 and 1 - t, used for
/// ∫_0^1 g(t) dt and ∫_0^1 (1 - t) g(t) dt in the Taylor remainders.
pub(super) struct TaylorRules {
    pub mean: Vec<(f64, f64)>,
    pub remainder: Vec<(f64, f64)>,
}

pub(super) fn taylor_rules() -> &'static TaylorRules {
    static RULES: OnceLock<TaylorRules> = OnceLock::new();
    RULES.get_or_init(|| {
        let gl = gauss_legendre(4);
        let mean = gl.nodes.iter().zip(&gl.weights).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
        let up = unit_power_rule(4, 1.0);
        let remainder = up.nodes.iter().zip(&up.weights).map(|(u, w)| (1.0 - u, *w)).collect();
        TaylorRules { mean, remainder }
    })
}

pub(crate) fn mean_of<G: Fn(f64) -> f64>(g: G) -> f64 {
    taylor_rules().mean.iter().map(|(t, w)| w * g(*t)).sum()
}

pub(super) fn remainder_of<G: Fn(f64) -> f64>(g: G) -> f64 {
    taylor_rules().remainder.iter().map(|(t, w)| w * g(*t)).sum()
}

/// ∫_0^b g(r) r^{-a} dr where g switches to a Taylor model below `small`;
/// the switch point is a panel boundary so the model mismatch is not
/// refined as a jump.
fn near_origin<G: Fn(f64) -> f64>(g: G, small: f64, b: f64, a: f64, tol: Tol) -> Estimate {
    endpoint_power(&g, small, a, tol) + adaptive(|r| g(r) * r.powf(-a), small, b, tol)
}

pub(super) struct Ray<'a, F: Field + ?Sized> {
    f: &'a F,
    d: usize,
    x: V3,
    th: V3,
    /// The path is mirrored at the wall (specular flow) instead of stopping.
    mirror: bool,
    r_wall: f64,
    r_box: f64,
    breaks: Vec<f64>,
    jet0: Jet,
}

fn dot(a: &V3, b: &V3, d: usize) -> f64 {
    (0..d).map(|k| a[k] * b[k]).sum()
}

fn quad_form(h: &[V3; 3], th: &V3, d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += th[i] * h[i][j] * th[j];
        }
    }
    s
}

impl<'a, F: Field + ?Sized> Ray<'a, F> {
    pub(super) fn new(f: &'a F, x: &[f64], th: V3, mirror: bool) -> Self {
        let d = f.dim();
        let mut xs = [0.0; 3];
        xs[..d].copy_from_slice(&x[..d]);
        let r_wall = if th[d - 1] < 0.0 { xs[d - 1] / -th[d - 1] } else { f64::INFINITY };
        let direct = f.box_exit(&xs[..d], &th[..d]);
        let mut breaks = Vec::new();
        let (mirror, r_box) = if mirror && r_wall < direct {
            let z = Self::wall_point_of(&xs, &th, r_wall, d);
            let mut tm = th;
            tm[d - 1] = -th[d - 1];
            let after = f.box_exit(&z[..d], &tm[..d]);
            let r_box = r_wall + after;
            f.ray_breaks(&xs[..d], &th[..d], r_wall, &mut breaks);
            breaks.push(r_wall);
            let mut second = Vec::new();
            f.ray_breaks(&z[..d], &tm[..d], after, &mut second);
            breaks.extend(second.into_iter().map(|r| r + r_wall));
            (true, r_box)
        } else {
            let lim = if mirror { direct } else { r_wall.min(direct) };
            f.ray_breaks(&xs[..d], &th[..d], lim, &mut breaks);
            (false, direct)
        };
        breaks.retain(|r| r.is_finite() && *r > 0.0);
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();
        let jet0 = f.jet(&xs[..d]);
        Self { f, d, x: xs, th, mirror, r_wall, r_box, breaks, jet0 }
    }

    fn wall_point_of(x: &V3, th: &V3, r: f64, d: usize) -> V3 {
        let mut p = [0.0; 3];
        for k in 0..d {
            p[k] = x[k] + r * th[k];
        }
        p[d - 1] = 0.0;
        p
    }

    /// End of the non-constant part of the path.
    pub(super) fn end(&self) -> f64 {
        if self.mirror {
            self.r_box
        } else {
            self.r_wall.min(self.r_box)
        }
    }

    /// Value of the (extended) field beyond `end`.
    pub(super) fn end_value(&self) -> f64 {
        if !self.mirror && self.r_wall <= self.r_box {
            let z = Self::wall_point_of(&self.x, &self.th, self.r_wall, self.d);
            self.f.value(&z[..self.d])
        } else {
            self.f.far_value()
        }
    }

    fn at(&self, r: f64) -> V3 {
        let d = self.d;
        let mut p = [0.0; 3];
        for k in 0..d {
            p[k] = self.x[k] + r * self.th[k];
        }
        if self.mirror && r > self.r_wall {
            p[d - 1] = -p[d - 1];
        }
        p[d - 1] = p[d - 1].max(0.0);
        p
    }

    pub(super) fn val(&self, r: f64) -> f64 {
        self.f.value(&self.at(r)[..self.d])
    }

    /// Directional derivative θ·∇ψ(x + rθ) on the straight part.
    fn dr(&self, r: f64) -> f64 {
        let j = self.f.jet(&self.at(r)[..self.d]);
        dot(&j.g, &self.th, self.d)
    }

    fn hess(&self, r: f64) -> f64 {
        let j = self.f.jet(&self.at(r)[..self.d]);
        quad_form(&j.h, &self.th, self.d)
    }

    fn v0(&self) -> f64 {
        self.jet0.v
    }

    fn d0(&self) -> f64 {
        dot(&self.jet0.g, &self.th, self.d)
    }

    /// Length of the first smooth piece, capped.
    fn first(&self, cap: f64) -> f64 {
        self.breaks.first().copied().unwrap_or(f64::INFINITY).min(self.end()).min(cap)
    }

    /// ∫_lo^hi f with the ray's breakpoints; hi may be infinite.
    fn span<G: Fn(f64) -> f64>(&self, f: G, lo: f64, hi: f64, extra: &[f64], tol: Tol) -> Estimate {
        if !(hi > lo) {
            return Estimate::default();
        }
        let mut brk = self.breaks.clone();
        brk.extend_from_slice(extra);
        // doubling breaks keep long spans from stepping over compact features
        let mut g = lo.max(1e-3);
        while g < hi.min(1e6) {
            brk.push(g);
            g *= 2.0;
        }
        if hi.is_finite() {
            return adaptive_with_breaks(&f, lo, hi, &brk, tol);
        }
        let last = brk.iter().copied().filter(|b| b.is_finite()).fold(lo, f64::max);
        let mid = 2.0 * last + 4.0;
        adaptive_with_breaks(&f, lo, mid, &brk, tol) + semi_infinite(&f, mid, tol)
    }

    /// ∫_0^end ∂_rψ(x + rθ) r^{1-2s} dr.
    pub(super) fn d_grad(&self, s: f64, tol: Tol) -> Acc {
        let a = 2.0 * s - 1.0;
        let end = self.end();
        let b1 = self.first(1.0);
        let mut acc = Acc::default();
        acc.add(endpoint_power(|r| self.dr(r), b1, a, tol));
        acc.add(self.span(|r| self.dr(r) * r.powf(-a), b1, end, &[], tol));
        acc
    }

    /// ∫_0^∞ [ψ̃ - ψ(x)] r^{-2s} dr along the ray; with `regional` the part
    /// beyond the wall is dropped.
    pub(super) fn d_ext(&self, s: f64, tol: Tol, regional: bool) -> Acc {
        let a = 2.0 * s - 1.0;
        let v0 = self.v0();
        let end = self.end();
        let b1 = self.first(1.0);
        let small = taylor_switch(b1);
        let mut acc = Acc::default();
        // (ψ(x + rθ) - ψ(x)) / r = ∫_0^1 ∂_rψ(x + rtθ) dt
        let g = |r: f64| {
            if r < small {
                mean_of(|t| self.dr(t * r))
            } else {
                (self.val(r) - v0) / r
            }
        };
        acc.add(near_origin(g, small, b1, a, tol));
        if end.is_finite() {
            acc.add(self.span(|r| (self.val(r) - v0) * r.powf(-2.0 * s), b1, end, &[], tol));
            if regional {
                if self.r_box < self.r_wall {
                    let c = self.f.far_value() - v0;
                    acc.exact(c * (self.r_box.powf(-a) - self.r_wall.powf(-a)) / a);
                }
            } else {
                acc.exact((self.end_value() - v0) * end.powf(-a) / a);
            }
        } else {
            let far = self.f.far_value();
            acc.add(self.span(|r| (self.val(r) - far) * r.powf(-2.0 * s), b1, end, &[], tol));
            acc.exact((far - v0) * b1.powf(-a) / a);
        }
        acc
    }

    /// P.V. ∫_0^end ∂_rψ(x + rθ) r^{-2s} dr with the constant part of
    /// ∂_rψ dropped inside δ.
    pub(super) fn l_pv(&self, s: f64, delta: f64, tol: Tol) -> Acc {
        let a = 2.0 * s - 1.0;
        let d0 = self.d0();
        let end = self.end();
        let b1 = self.first(delta);
        let small = taylor_switch(b1);
        let mut acc = Acc::default();
        let g = |r: f64| {
            if r < small {
                mean_of(|t| self.hess(t * r))
            } else {
                (self.dr(r) - d0) / r
            }
        };
        acc.add(near_origin(g, small, b1, a, tol));
        acc.add(self.span(|r| (self.dr(r) - d0) * r.powf(-2.0 * s), b1, delta, &[], tol));
        acc.add(self.span(|r| self.dr(r) * r.powf(-2.0 * s), delta, end, &[], tol));
        acc
    }

    /// P.V. ∫_0^∞ [ψ̃ - ψ(x)] r^{-1-2s} dr with the linear part dropped
    /// inside δ; with `regional` the part beyond the wall is dropped.
    pub(super) fn l_ext(&self, s: f64, delta: f64, tol: Tol, regional: bool) -> Acc {
        let a = 2.0 * s - 1.0;
        let k = -1.0 - 2.0 * s;
        let (v0, d0) = (self.v0(), self.d0());
        let end = self.end();
        let b1 = self.first(delta).min(delta);
        let small = taylor_switch(b1);
        let mut acc = Acc::default();
        let g = |r: f64| {
            // second-order remainder ∫_0^1 (1 - t) ∂_r^2ψ(x + rtθ) dt
            if r < small {
                remainder_of(|t| self.hess(t * r))
            } else {
                (self.val(r) - v0 - r * d0) / (r * r)
            }
        };
        acc.add(near_origin(g, small, b1, a, tol));
        acc.add(self.span(|r| (self.val(r) - v0 - r * d0) * r.powf(k), b1, delta, &[], tol));
        if end.is_finite() {
            acc.add(self.span(|r| (self.val(r) - v0) * r.powf(k), delta, end, &[], tol));
            let from = end.max(delta);
            if regional && !self.mirror {
                if self.r_box < self.r_wall {
                    let c = self.f.far_value() - v0;
                    acc.exact(c * (from.powf(-2.0 * s) - self.r_wall.powf(-2.0 * s)) / (2.0 * s));
                }
            } else {
                acc.exact((self.end_value() - v0) * from.powf(-2.0 * s) / (2.0 * s));
            }
        } else {
            let far = self.f.far_value();
            acc.add(self.span(|r| (self.val(r) - far) * r.powf(k), delta, end, &[], tol));
            acc.exact((far - v0) * delta.powf(-2.0 * s) / (2.0 * s));
        }
        acc
    }

    /// ∫_0^∞ u^m K(u) [ψ̃(x + εuθ) - ψ(x)] du for a tabulated kernel, with
    /// the constant continuation beyond the path end added through the
    /// table's tail moment.
    pub(super) fn kernel_moment(&self, table: &KernelTable, eps: f64, tol: Tol) -> Acc {
        let m = table.moment();
        let v0 = self.v0();
        let end = self.end() / eps;
        let mut extra: Vec<f64> = vec![0.1, 1.0, 10.0, 1.0 / eps];
        extra.extend(self.breaks.iter().map(|b| b / eps));
        let mut e = 100.0;
        while e < end.min(1e7) {
            extra.push(e);
            e *= 10.0;
        }
        let f = |u: f64| {
            if u <= 0.0 {
                return 0.0;
            }
            u.powi(m) * table.eval(u) * (self.val(eps * u) - v0)
        };
        let mut acc = Acc::default();
        if !(end > 0.0) {
            acc.exact((self.end_value() - v0) * table.tail(0.0));
            return acc;
        }
        if end.is_finite() {
            let mut brk = extra.clone();
            brk.retain(|b| *b < end);
            acc.add(adaptive_with_breaks(f, 0.0, end, &brk, tol));
            acc.exact((self.end_value() - v0) * table.tail(end));
        } else {
            let last = extra.iter().copied().fold(1.0, f64::max);
            let far = self.f.far_value();
            acc.add(adaptive_with_breaks(f, 0.0, last, &extra, tol));
            acc.add(semi_infinite(|u| u.powi(m) * table.eval(u) * (self.val(eps * u) - far), last, tol));
            acc.exact((far - v0) * table.tail(last));
        }
        acc
    }

    /// ∫_0^∞ (ν0/c) e^{-ν0 r/c} ψ̃(x + rθ) dr with c = ε|v|.
    pub(super) fn exponential_average(&self, rate: f64, tol: Tol) -> Estimate {
        let end = self.end();
        let horizon = 50.0 / rate;
        let stop = end.min(horizon);
        let f = |r: f64| rate * (-rate * r).exp() * self.val(r);
        let scales = [1.0 / rate, 4.0 / rate, 16.0 / rate];
        let body = adaptive_with_breaks(f, 0.0, stop, &scales, tol);
        if end <= horizon {
            body + Estimate::exact(self.end_value() * (-rate * end).exp())
        } else {
            // truncated weight e^{-50} times a rough field magnitude
            let bound = (-rate * stop).exp() * (self.v0().abs() + self.f.far_value().abs() + 1.0);
            body + Estimate::new(0.0, bound)
        }
    }
}

