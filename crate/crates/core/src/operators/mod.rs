//! The flux operator D^{2s-1} and the limit operator L in their equivalent
//! forms, the boundary flux, the kernel h, the ε-scaled kinetic operators and
//! the specular comparison operator.
//!
//! Every form reduces to radial integrals along rays x + rθ. In N = 1 the
//! directions are ±1; in N = 2 an adaptive angular rule runs over the circle.
//! Inside the radius δ(x) the part of the integrand that is odd in θ is
//! dropped (it cancels between θ and -θ) and the remainder is integrated with
//! an endpoint-power substitution; near r = 0 a mean-value Taylor model
//! replaces the difference quotients to avoid cancellation.

mod eps;
mod ray;

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{EquilibriumSpec, V3};
use crate::error::{domain, Error, Result};
use crate::geometry::Field;
use crate::quad::{adaptive, adaptive_vec, adaptive_with_breaks, semi_infinite, Estimate, Tol};
use crate::special::sphere_area;

pub use eps::{apply_d_eps, apply_l_eps, corrector_norm, corrector_t_eps, corrector_trace, phi_eps, phi_eps_l2};
pub(crate) use ray::{mean_of, taylor_switch};
use ray::Ray;

/// Constants, PV split rule and tolerances shared by all operator evaluations.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OperatorParams {
    pub spec: EquilibriumSpec,
    /// δ(x) = min(delta_frac · x_N, delta_max).
    #[serde(default = "default_delta_frac")]
    pub delta_frac: f64,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    /// Target relative error, measured against the summed magnitude of the
    /// radial pieces; evaluations whose estimate exceeds it are refused.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_delta_frac() -> f64 {
    0.5
}
fn default_delta_max() -> f64 {
    0.1
}
fn default_tol() -> f64 {
    1e-8
}

impl OperatorParams {
    pub fn new(spec: EquilibriumSpec) -> Self {
        Self { spec, delta_frac: default_delta_frac(), delta_max: default_delta_max(), tol: default_tol() }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.delta_frac > 0.0 && self.delta_frac <= 0.5) {
            return Err(Error::Config(format!("delta_frac = {} must lie in (0, 1/2]", self.delta_frac)));
        }
        if !(self.delta_max > 0.0) || !(self.tol > 0.0) {
            return Err(Error::Config("delta_max and tol must be positive".into()));
        }
        Ok(())
    }

    pub fn delta(&self, x_n: f64) -> f64 {
        (self.delta_frac * x_n).min(self.delta_max)
    }

    pub fn c_d(&self) -> f64 {
        self.spec.c_d()
    }
    pub fn c_grad(&self) -> f64 {
        self.spec.c_grad()
    }
    pub fn c_l(&self) -> f64 {
        self.spec.c_l()
    }

    /// Checks c_grad = (2s-1) c_D and c_L = 2s c_grad.
    pub fn check_constants(&self) -> Result<()> {
        let s = self.spec.s;
        let r1 = (self.c_grad() - (2.0 * s - 1.0) * self.c_d()).abs() / self.c_grad();
        let r2 = (self.c_l() - 2.0 * s * self.c_grad()).abs() / self.c_l();
        if r1 > 1e-13 || r2 > 1e-13 {
            return Err(Error::Config(format!("operator constants inconsistent ({r1:e}, {r2:e})")));
        }
        Ok(())
    }

    fn inner_tol(&self) -> Tol {
        Tol { abs: 1e-15, rel: (self.tol * 1e-3).max(1e-13), max_panels: 4000 }
    }

    fn outer_tol(&self) -> Tol {
        Tol { abs: 1e-14, rel: (self.tol * 0.1).max(1e-12), max_panels: 2000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DForm {
    /// c_D ∫_Ω (y-x)·∇ψ(y) (y-x) |y-x|^{-N-2s} dy.
    Gradient,
    /// c_grad ∫_{R^N} [ψ̃(y) - ψ(x)] (y-x) |y-x|^{-N-2s} dy with the wall extension.
    Extension,
    /// Regional difference integral plus the x_N-weighted boundary integral.
    BoundarySplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LForm {
    /// c_grad P.V.∫_Ω ∇ψ(y)·(y-x) |y-x|^{-N-2s} dy.
    PvGradient,
    /// c_L P.V.∫_{R^N} [ψ̃(y) - ψ(x)] |y-x|^{-N-2s} dy.
    Extension,
    /// Regional fractional Laplacian plus the boundary integral.
    RegionalBoundary,
}

/// Vector-valued operator output with an absolute error estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FluxValue {
    pub value: V3,
    pub error: f64,
}

/// Running sum of radial pieces: value, error estimate and summed magnitude.
#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    value: f64,
    error: f64,
    mag: f64,
}

impl Acc {
    fn add(&mut self, e: Estimate) {
        self.value += e.value;
        self.error += e.error;
        self.mag += e.value.abs();
    }
    fn exact(&mut self, v: f64) {
        self.value += v;
        self.mag += v.abs();
    }
}

const SLOTS: usize = 5;

/// Sums a per-direction quantity over ±1 (N = 1) or integrates it over the
/// unit circle (N = 2). Slots 0..3 carry values, slot 3 the inner error and
/// slot 4 the magnitude.
fn over_directions<G>(dim: usize, p: &OperatorParams, g: G) -> Result<([f64; 3], f64, f64)>
where
    G: Fn(V3) -> Result<[f64; SLOTS]>,
{
    match dim {
        1 => {
            let a = g([1.0, 0.0, 0.0])?;
            let b = g([-1.0, 0.0, 0.0])?;
            Ok(([a[0] + b[0], a[1] + b[1], a[2] + b[2]], a[3] + b[3], a[4] + b[4]))
        }
        2 => {
            let mut failure: Option<Error> = None;
            let breaks = [0.5 * PI, PI, 1.5 * PI];
            let (v, outer) = adaptive_vec(
                |phi: f64| {
                    if failure.is_some() {
                        return [0.0; SLOTS];
                    }
                    match g([phi.cos(), phi.sin(), 0.0]) {
                        Ok(v) => v,
                        Err(e) => {
                            failure = Some(e);
                            [0.0; SLOTS]
                        }
                    }
                },
                0.0,
                2.0 * PI,
                &breaks,
                p.outer_tol(),
            );
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(([v[0], v[1], v[2]], v[3] + outer, v[4]))
        }
        _ => domain(format!("operators are implemented for N = 1, 2 (got N = {dim})")),
    }
}

fn refuse_if_inaccurate(what: &str, value: f64, err: f64, mag: f64, p: &OperatorParams) -> Result<()> {
    let budget = p.tol * mag + 1e-13;
    if !(err <= budget) || !value.is_finite() {
        return Err(Error::Quadrature(format!(
            "{what}: estimated error {err:.3e} exceeds budget {budget:.3e} (value {value:.6e})"
        )));
    }
    Ok(())
}

fn check_point<F: Field + ?Sized>(psi: &F, x: &[f64], p: &OperatorParams) -> Result<usize> {
    let d = psi.dim();
    if d != p.spec.dim {
        return Err(Error::Config(format!("field dimension {d} differs from spec dimension {}", p.spec.dim)));
    }
    if x.len() < d {
        return domain(format!("point has {} coordinates, expected {d}", x.len()));
    }
    if !(x[d - 1] > 0.0) {
        return domain(format!("x_N = {} is not interior; use boundary_flux on the wall", x[d - 1]));
    }
    Ok(d)
}

fn pack(th: V3, dim: usize, acc: Acc) -> [f64; SLOTS] {
    let mut out = [0.0; SLOTS];
    for k in 0..dim {
        out[k] = th[k] * acc.value;
    }
    out[3] = acc.error;
    out[4] = acc.mag;
    out
}

fn pack_scalar(acc: Acc) -> [f64; SLOTS] {
    [acc.value, 0.0, 0.0, acc.error, acc.mag]
}

/// D^{2s-1}[ψ](x) at an interior point.
pub fn apply_d<F: Field + ?Sized>(psi: &F, x: &[f64], form: DForm, p: &OperatorParams) -> Result<FluxValue> {
    let d = check_point(psi, x, p)?;
    let s = p.spec.s;
    let tol = p.inner_tol();
    let (mut vec, mut err, mag, scale) = match (form, d) {
        (DForm::BoundarySplit, 1) => {
            let (acc, c) = d_split_1d(psi, x[0], p)?;
            ([acc.value, 0.0, 0.0], acc.error, acc.mag, c)
        }
        _ => {
            let (v, e, m) = over_directions(d, p, |th| {
                let ray = Ray::new(psi, x, th, false);
                let acc = match form {
                    DForm::Gradient => ray.d_grad(s, tol),
                    DForm::Extension => ray.d_ext(s, tol, false),
                    DForm::BoundarySplit => ray.d_ext(s, tol, true),
                };
                Ok(pack(th, d, acc))
            })?;
            let c = if form == DForm::Gradient { p.c_d() } else { p.c_grad() };
            (v, e, m, c)
        }
    };
    for v in vec.iter_mut() {
        *v *= scale;
    }
    err *= scale;
    let mut mag = mag * scale;
    if form == DForm::BoundarySplit && d == 2 {
        let b = boundary_line(psi, x, p, BoundaryKernel::Flux)?;
        let c = p.c_d();
        vec[0] += c * b[0].value;
        vec[1] += c * b[1].value;
        err += c * (b[0].error + b[1].error);
        mag += c * (b[0].value.abs() + b[1].value.abs());
    }
    let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
    refuse_if_inaccurate("flux operator", norm, err, mag, p)?;
    Ok(FluxValue { value: vec, error: err })
}

/// L[ψ](x) at an interior point. Within about 1e-7 of the wall the extension
/// forms cancel terms of size x_N^{-2s} and lose digits (reflected in the
/// returned error); the gradient form stays well conditioned there.
pub fn apply_l<F: Field + ?Sized>(psi: &F, x: &[f64], form: LForm, p: &OperatorParams) -> Result<Estimate> {
    let d = check_point(psi, x, p)?;
    let s = p.spec.s;
    let tol = p.inner_tol();
    let delta = p.delta(x[d - 1]);
    let (mut value, mut err, mut mag) = match (form, d) {
        (LForm::RegionalBoundary, 1) => {
            let acc = l_regional_1d(psi, x[0], p)?;
            (acc.value, acc.error, acc.mag)
        }
        _ => {
            let (v, e, m) = over_directions(d, p, |th| {
                let ray = Ray::new(psi, x, th, false);
                let acc = match form {
                    LForm::PvGradient => ray.l_pv(s, delta, tol),
                    LForm::Extension => ray.l_ext(s, delta, tol, false),
                    LForm::RegionalBoundary => ray.l_ext(s, delta, tol, true),
                };
                Ok(pack_scalar(acc))
            })?;
            let c = if form == LForm::PvGradient { p.c_grad() } else { p.c_l() };
            (c * v[0], c * e, c * m)
        }
    };
    if form == LForm::RegionalBoundary {
        let b = if d == 1 {
            let xn = x[0];
            Estimate::exact(xn.powf(-2.0 * s) * (psi.value(&[0.0]) - psi.value(&[xn])))
        } else {
            boundary_line(psi, x, p, BoundaryKernel::Limit)?[0]
        };
        let c = p.c_grad();
        value += c * b.value;
        err += c * b.error;
        mag += c * b.value.abs();
    }
    refuse_if_inaccurate("limit operator", value, err, mag, p)?;
    Ok(Estimate::new(value, err))
}

/// Normal flux ∫_{R^N_+} [ψ(x+y) - ψ(x)] (y·n) |y|^{-N-2s} dy at the wall
/// point x = (x', 0) with n = -e_N; D^{2s-1}[ψ](x)·n = c_grad times this.
pub fn boundary_flux<F: Field + ?Sized>(psi: &F, x_lat: &[f64], p: &OperatorParams) -> Result<Estimate> {
    let d = psi.dim();
    if d != p.spec.dim {
        return Err(Error::Config(format!("field dimension {d} differs from spec dimension {}", p.spec.dim)));
    }
    let mut x = [0.0; 3];
    x[..d - 1].copy_from_slice(&x_lat[..d - 1]);
    let s = p.spec.s;
    let tol = p.inner_tol();
    let g = |th: V3| -> Result<[f64; SLOTS]> {
        if th[d - 1] <= 0.0 {
            return Ok([0.0; SLOTS]);
        }
        let ray = Ray::new(psi, &x[..d], th, false);
        let mut acc = ray.d_ext(s, tol, false);
        acc.value *= -th[d - 1];
        acc.error *= th[d - 1];
        acc.mag *= th[d - 1];
        Ok(pack_scalar(acc))
    };
    let (v, e, m) = match d {
        1 => {
            let a = g([1.0, 0.0, 0.0])?;
            ([a[0], 0.0, 0.0], a[3], a[4])
        }
        _ => over_directions(d, p, g)?,
    };
    refuse_if_inaccurate("boundary flux", v[0], e, m, p)?;
    Ok(Estimate::new(v[0], e))
}

/// h(x_N) = P.V.∫_{|z|<1, z_N > -x_N} z_N |z|^{-N-2s} dz.
///
/// The symmetric strip |z_N| < x_N cancels, leaving the cap z_N > x_N of the
/// unit ball; in N ≥ 2 the cap is integrated in spherical shells.
pub fn kernel_h(x_n: f64, dim: usize, s: f64) -> Result<f64> {
    if !(x_n > 0.0) {
        return domain(format!("kernel h needs x_N > 0 (got {x_n})"));
    }
    if x_n >= 1.0 {
        return Ok(0.0);
    }
    let a = 2.0 * s - 1.0;
    let radial = |u: f64| ((x_n / u).powf(-a) - 1.0) / a;
    match dim {
        1 => Ok(radial(1.0)),
        2 => {
            // u = sin φ removes the (1 - u^2)^{-1/2} endpoint singularity
            let lo = x_n.asin();
            let tol = Tol::new(1e-15, 1e-13);
            let val = adaptive(|phi| phi.sin() * radial(phi.sin()), lo, 0.5 * PI, tol);
            Ok(sphere_area(1) * val.value)
        }
        3 => {
            let tol = Tol::new(1e-15, 1e-13);
            let val = adaptive(|u| u * radial(u), x_n, 1.0, tol);
            Ok(sphere_area(2) * val.value)
        }
        _ => domain(format!("kernel h is defined for N = 1, 2, 3 (got {dim})")),
    }
}

/// Specular-reflection fractional Laplacian
/// c_{N,s} P.V.∫ [ψ(x) - ψ(η(x, w))] |w|^{-N-2s} dw.
pub fn apply_specular<F: Field + ?Sized>(psi: &F, x: &[f64], p: &OperatorParams) -> Result<Estimate> {
    let d = check_point(psi, x, p)?;
    let s = p.spec.s;
    let tol = p.inner_tol();
    let delta = p.delta(x[d - 1]);
    let (v, e, m) = over_directions(d, p, |th| {
        let ray = Ray::new(psi, x, th, true);
        Ok(pack_scalar(ray.l_ext(s, delta, tol, false)))
    })?;
    let c = p.spec.c_ns();
    refuse_if_inaccurate("specular operator", c * v[0], c * e, c * m, p)?;
    Ok(Estimate::new(-c * v[0], c * e))
}

#[derive(Clone, Copy, PartialEq)]
enum BoundaryKernel {
    /// x_N ∫ [ψ(t,0) - ψ(x)] (t - x', -x_N) |(t - x', -x_N)|^{-2-2s} dt
    Flux,
    /// x_N ∫ [ψ(t,0) - ψ(x)] |(t - x', -x_N)|^{-2-2s} dt
    Limit,
}

/// Boundary line integral in N = 2; returns one or two components.
///
/// With t = x' + x_N tan ϑ the line becomes ϑ ∈ (-π/2, π/2) and the kernel
/// x_N |(t - x', -x_N)|^{-2-2s} dt becomes x_N^{-2s} cos^{2s} ϑ dϑ.
fn boundary_line<F: Field + ?Sized>(psi: &F, x: &[f64], p: &OperatorParams, kind: BoundaryKernel) -> Result<[Estimate; 2]> {
    let (a, b) = (x[0], x[1]);
    let s = p.spec.s;
    let v0 = psi.value(x);
    let tol = p.inner_tol();
    let mut brk: Vec<f64> = lateral_breaks(psi).into_iter().map(|t| ((t - a) / b).atan()).collect();
    brk.extend([-1.0, -0.5, 0.0, 0.5, 1.0]);
    let half = 0.5 * PI;
    let scale = b.powf(-2.0 * s);
    let comp = |j: usize| -> Estimate {
        let f = |th: f64| {
            let (sn, c) = th.sin_cos();
            if c <= 0.0 {
                return 0.0;
            }
            let t = a + b * sn / c;
            let w = match (kind, j) {
                (BoundaryKernel::Flux, 0) => b * sn / c,
                (BoundaryKernel::Flux, _) => -b,
                _ => 1.0,
            };
            (psi.value(&[t, 0.0]) - v0) * c.powf(2.0 * s) * w
        };
        adaptive_with_breaks(f, -half, half, &brk, tol).scale(scale)
    };
    match kind {
        BoundaryKernel::Flux => Ok([comp(0), comp(1)]),
        BoundaryKernel::Limit => Ok([comp(0), Estimate::default()]),
    }
}

fn lateral_breaks<F: Field + ?Sized>(psi: &F) -> Vec<f64> {
    // lateral mesh lines are those crossed by a horizontal ray from far left
    let mut out = Vec::new();
    let far = 1e6;
    psi.ray_breaks(&[-far, 0.0], &[1.0, 0.0], 2.0 * far, &mut out);
    out.iter().map(|r| r - far).collect()
}

/// Geometric breakpoints δ 2^{-k}, k = 0..=levels, used by the Cartesian
/// windows around the singular point.
fn geometric(delta: f64, levels: usize) -> Vec<f64> {
    (0..=levels).map(|k| delta * 0.5f64.powi(k as i32)).collect()
}

const WINDOW_LEVELS: usize = 40;

/// Normal-direction breakpoints of a 1D field shifted to be relative to x.
fn shifted_nodes<F: Field + ?Sized>(psi: &F, x: f64) -> Vec<f64> {
    psi.normal_nodes().map(|n| n.iter().map(|c| (c - x).abs()).collect()).unwrap_or_default()
}

/// Distance from x to the nearest mesh node on either side, capped at δ.
fn first_gap<F: Field + ?Sized>(psi: &F, x: f64, delta: f64) -> f64 {
    shifted_nodes(psi, x).into_iter().filter(|d| *d > 0.0).fold(delta, f64::min)
}

/// Upper end of the meshed region to the right of x in N = 1.
fn right_extent<F: Field + ?Sized>(psi: &F, x: f64) -> f64 {
    x + psi.box_exit(&[x], &[1.0])
}

/// N = 1 boundary-split flux in Cartesian form:
/// c_grad ∫_0^∞ [ψ(y) - ψ(x)] sgn(y-x) |y-x|^{-2s} dy - c_D [ψ(0) - ψ(x)] x^{1-2s}.
fn d_split_1d<F: Field + ?Sized>(psi: &F, x: f64, p: &OperatorParams) -> Result<(Acc, f64)> {
    let s = p.spec.s;
    let a = 2.0 * s - 1.0;
    let tol = p.inner_tol();
    let delta = p.delta(x);
    let jet = psi.jet(&[x]);
    let v0 = jet.v;
    let val = |y: f64| psi.value(&[y]);
    let nodes = psi.normal_nodes().map(|n| n.to_vec()).unwrap_or_default();
    let mut acc = Acc::default();
    // left of the window
    acc.add(adaptive_with_breaks(|y| -(val(y) - v0) * (x - y).powf(-2.0 * s), 0.0, x - delta, &nodes, tol));
    // symmetric window: [ψ(x+t) - ψ(x-t)] t^{-2s}
    let eta = delta * 0.5f64.powi(WINDOW_LEVELS as i32);
    let mut brk = geometric(delta, WINDOW_LEVELS);
    brk.extend(shifted_nodes(psi, x));
    let small = ray::taylor_switch(first_gap(psi, x, delta));
    brk.push(small);
    let win = |t: f64| {
        let diff = if t < small {
            // ∫_{-t}^{t} ψ' as a Gauss mean
            t * ray::mean_of(|v| psi.jet(&[x + v * t]).g[0] + psi.jet(&[x - v * t]).g[0])
        } else {
            val(x + t) - val(x - t)
        };
        diff * t.powf(-2.0 * s)
    };
    acc.add(adaptive_with_breaks(win, eta, delta, &brk, tol));
    acc.exact(2.0 * jet.g[0] * eta.powf(1.0 - a) / (1.0 - a));
    // right of the window up to the end of the meshed region, then the tail
    let top = right_extent(psi, x).max(x + delta);
    if top.is_finite() {
        acc.add(adaptive_with_breaks(|y| (val(y) - v0) * (y - x).powf(-2.0 * s), x + delta, top, &nodes, tol));
        acc.exact((psi.far_value() - v0) * (top - x).powf(-a) / a);
    } else {
        let far = psi.far_value();
        let mid = x + delta + 16.0;
        acc.add(adaptive_with_breaks(|y| (val(y) - v0) * (y - x).powf(-2.0 * s), x + delta, mid, &nodes, tol));
        acc.add(semi_infinite(|y| (val(y) - far) * (y - x).powf(-2.0 * s), mid, tol));
        acc.exact((far - v0) * (mid - x).powf(-a) / a);
    }
    // point term from the wall, rescaled to the c_grad prefactor
    let bnd = -(p.c_d() / p.c_grad()) * (val(0.0) - v0) * x.powf(-a);
    acc.exact(bnd);
    Ok((acc, p.c_grad()))
}

/// N = 1 regional-plus-boundary limit operator without the boundary term:
/// c_L P.V.∫_0^∞ [ψ(y) - ψ(x)] |y-x|^{-1-2s} dy.
fn l_regional_1d<F: Field + ?Sized>(psi: &F, x: f64, p: &OperatorParams) -> Result<Acc> {
    let s = p.spec.s;
    let tol = p.inner_tol();
    let delta = p.delta(x);
    let jet = psi.jet(&[x]);
    let v0 = jet.v;
    let val = |y: f64| psi.value(&[y]);
    let nodes = psi.normal_nodes().map(|n| n.to_vec()).unwrap_or_default();
    let k = -1.0 - 2.0 * s;
    let mut acc = Acc::default();
    acc.add(adaptive_with_breaks(|y| (val(y) - v0) * (x - y).powf(k), 0.0, x - delta, &nodes, tol));
    let eta = delta * 0.5f64.powi(WINDOW_LEVELS as i32);
    let mut brk = geometric(delta, WINDOW_LEVELS);
    brk.extend(shifted_nodes(psi, x));
    let small = ray::taylor_switch(first_gap(psi, x, delta));
    brk.push(small);
    let win = |t: f64| {
        let second = if t < small {
            let h2 = |u: f64| psi.jet(&[x + u]).h[0][0] + psi.jet(&[x - u]).h[0][0];
            t * t * ray::remainder_of(|v| h2(v * t))
        } else {
            val(x + t) + val(x - t) - 2.0 * v0
        };
        second * t.powf(k)
    };
    acc.add(adaptive_with_breaks(win, eta, delta, &brk, tol));
    acc.exact(jet.h[0][0] * eta.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s));
    let top = right_extent(psi, x).max(x + delta);
    if top.is_finite() {
        acc.add(adaptive_with_breaks(|y| (val(y) - v0) * (y - x).powf(k), x + delta, top, &nodes, tol));
        acc.exact((psi.far_value() - v0) * (top - x).powf(-2.0 * s) / (2.0 * s));
    } else {
        let far = psi.far_value();
        let mid = x + delta + 16.0;
        acc.add(adaptive_with_breaks(|y| (val(y) - v0) * (y - x).powf(k), x + delta, mid, &nodes, tol));
        acc.add(semi_infinite(|y| (val(y) - far) * (y - x).powf(k), mid, tol));
        acc.exact((far - v0) * (mid - x).powf(-2.0 * s) / (2.0 * s));
    }
    let c = p.c_l();
    Ok(Acc { value: c * acc.value, error: c * acc.error, mag: c * acc.mag })
}

/// One row of a batch evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct BatchRow {
    pub x: Vec<f64>,
    pub value: Vec<f64>,
    pub error: f64,
}

/// Evaluates an operator at many points in parallel; the output order
/// matches the input order regardless of the thread count.
pub fn evaluate_batch<E>(points: &[Vec<f64>], eval: E) -> Result<Vec<BatchRow>>
where
    E: Fn(&[f64]) -> Result<(Vec<f64>, f64)> + Sync,
{
    points
        .par_iter()
        .map(|x| eval(x).map(|(value, error)| BatchRow { x: x.clone(), value, error }))
        .collect()
}

/// CSV with columns x_1..x_N, value_1..value_K, error.
pub fn write_batch_csv(path: &Path, rows: &[BatchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    if let Some(r) = rows.first() {
        let mut head: Vec<String> = (1..=r.x.len()).map(|k| format!("x{k}")).collect();
        if r.value.len() == 1 {
            head.push("value".into());
        } else {
            head.extend((1..=r.value.len()).map(|k| format!("value{k}")));
        }
        head.push("error".into());
        w.write_record(&head).map_err(|e| Error::Io(e.into()))?;
    }
    for r in rows {
        let rec: Vec<String> = r.x.iter().chain(r.value.iter()).chain(std::iter::once(&r.error)).map(|v| format!("{v:.17e}")).collect();
        w.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
