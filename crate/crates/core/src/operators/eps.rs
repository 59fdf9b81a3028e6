//! ε-scale operators: the auxiliary function φ^ε, the kinetic flux and limit
//! operators D_ε, L_ε, and the boundary corrector T^ε.

use std::f64::consts::PI;

use crate::equilibrium::{KernelKind, KernelTable, V3};
use crate::error::{domain, Error, Result};
use crate::geometry::Field;
use crate::quad::{adaptive_with_breaks, semi_infinite, Estimate, Tol};

use super::ray::Ray;
use super::{over_directions, pack, pack_scalar, refuse_if_inaccurate, FluxValue, OperatorParams};

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return domain(format!("ε = {eps} must be positive"));
    }
    Ok(())
}

fn check_closed<F: Field + ?Sized>(psi: &F, x: &[f64], p: &OperatorParams) -> Result<usize> {
    let d = psi.dim();
    if d != p.spec.dim {
        return Err(Error::Config(format!("field dimension {d} differs from spec dimension {}", p.spec.dim)));
    }
    if !(x[d - 1] >= 0.0) {
        return domain(format!("x_N = {} lies outside the closed half-space", x[d - 1]));
    }
    Ok(d)
}

/// φ^ε(x, v) = ∫_0^∞ ν0 e^{-ν0 z} ψ̃(x + εvz, v) dz.
pub fn phi_eps<F: Field + ?Sized>(psi: &F, eps: f64, x: &[f64], v: &[f64], p: &OperatorParams) -> Result<Estimate> {
    phi_eps_tol(psi, eps, x, v, p, Tol::new(1e-15, 1e-12))
}

fn phi_eps_tol<F: Field + ?Sized>(psi: &F, eps: f64, x: &[f64], v: &[f64], p: &OperatorParams, tol: Tol) -> Result<Estimate> {
    check_eps(eps)?;
    let d = check_closed(psi, x, p)?;
    let speed = v[..d].iter().map(|c| c * c).sum::<f64>().sqrt();
    if speed == 0.0 {
        return Ok(Estimate::exact(psi.value(&x[..d])));
    }
    let mut th = [0.0; 3];
    for k in 0..d {
        th[k] = v[k] / speed;
    }
    let ray = Ray::new(psi, x, th, false);
    let rate = p.spec.nu0 / (eps * speed);
    Ok(ray.exponential_average(rate, tol))
}

/// ∭ |φ^ε(x, v) - ψ(x)|^2 F(v) dv dx over Ω × R (N = 1).
pub fn phi_eps_l2<F: Field + ?Sized>(psi: &F, eps: f64, p: &OperatorParams) -> Result<Estimate> {
    check_eps(eps)?;
    if psi.dim() != 1 || p.spec.dim != 1 {
        return domain("the weighted L2 distance of φ^ε is implemented for N = 1");
    }
    let spec = p.spec;
    let tol_phi = Tol::new(1e-14, 1e-9);
    let tol_v = Tol::new(1e-14, 1e-7);
    let tol_x = Tol::new(1e-12, 1e-5);
    let vb = spec.nu0 / eps;
    let mut failure: Option<Error> = None;
    let inner = |x: f64| -> f64 {
        let psi_x = psi.value(&[x]);
        let g = |v: f64| -> f64 {
            match phi_eps_tol(psi, eps, &[x], &[v], p, tol_phi) {
                Ok(e) => {
                    let d = e.value - psi_x;
                    d * d * spec.f_radial(v.abs())
                }
                Err(_) => f64::NAN,
            }
        };
        let pos = adaptive_with_breaks(&g, 0.0, vb, &[], tol_v) + semi_infinite(&g, vb, tol_v);
        let neg = adaptive_with_breaks(|v| g(-v), 0.0, vb, &[], tol_v) + semi_infinite(|v| g(-v), vb, tol_v);
        pos.value + neg.value
    };
    let top = psi.box_exit(&[0.0], &[1.0]);
    let top = if top.is_finite() { top } else { 20.0 };
    let brk = [eps, 0.1, 1.0, 4.0];
    let near = adaptive_with_breaks(
        |x| {
            let v = inner(x);
            if !v.is_finite() && failure.is_none() {
                failure = Some(Error::Quadrature(format!("φ^ε evaluation failed at x = {x}")));
            }
            v
        },
        0.0,
        top,
        &brk,
        tol_x,
    );
    let far = semi_infinite(inner, top, tol_x);
    if let Some(e) = failure {
        return Err(e);
    }
    let total = near + far;
    if !total.value.is_finite() {
        return Err(Error::Quadrature("φ^ε evaluation failed in the far region".into()));
    }
    Ok(total)
}

/// D_ε[ψ](x) = ε^{1-2s} ∫ v F0(v) [ψ̃(x + εv, v) - ψ(x)] dv, for x_N ≥ 0.
pub fn apply_d_eps<F: Field + ?Sized>(psi: &F, eps: f64, x: &[f64], p: &OperatorParams) -> Result<FluxValue> {
    check_eps(eps)?;
    let d = check_closed(psi, x, p)?;
    let table = KernelTable::shared(p.spec, KernelKind::F0)?;
    let tol = p.inner_tol();
    let (v, e, m) = over_directions(d, p, |th: V3| {
        let ray = Ray::new(psi, x, th, false);
        Ok(pack(th, d, ray.kernel_moment(&table, eps, tol)))
    })?;
    let c = eps.powf(1.0 - 2.0 * p.spec.s);
    let value = [c * v[0], c * v[1], c * v[2]];
    let norm = value.iter().map(|a| a * a).sum::<f64>().sqrt();
    refuse_if_inaccurate("D_ε", norm, c * e, c * m, p)?;
    Ok(FluxValue { value, error: c * e })
}

/// L_ε[ψ](x) = ε^{-2s} ∫ F1(v) [ψ̃(x + εv, v) - ψ(x)] dv.
pub fn apply_l_eps<F: Field + ?Sized>(psi: &F, eps: f64, x: &[f64], p: &OperatorParams) -> Result<Estimate> {
    check_eps(eps)?;
    let d = check_closed(psi, x, p)?;
    let table = KernelTable::shared(p.spec, KernelKind::F1)?;
    let tol = p.inner_tol();
    let (v, e, m) = over_directions(d, p, |th: V3| {
        let ray = Ray::new(psi, x, th, false);
        Ok(pack_scalar(ray.kernel_moment(&table, eps, tol)))
    })?;
    let c = eps.powf(-2.0 * p.spec.s);
    refuse_if_inaccurate("L_ε", c * v[0], c * e, c * m, p)?;
    Ok(Estimate::new(c * v[0], c * e))
}

/// Boundary trace T̄^ε(x') = D_ε[ψ](x', 0)·n with n = -e_N.
pub fn corrector_trace<F: Field + ?Sized>(psi: &F, eps: f64, x_lat: &[f64], p: &OperatorParams) -> Result<Estimate> {
    let d = psi.dim();
    let mut x = [0.0; 3];
    x[..d - 1].copy_from_slice(&x_lat[..d - 1]);
    let dv = apply_d_eps(psi, eps, &x[..d], p)?;
    Ok(Estimate::new(-dv.value[d - 1], dv.error))
}

/// T^ε(x) = ε^{2s-1} α0 T̄^ε(x') e^{-x_N^2}.
pub fn corrector_t_eps<F: Field + ?Sized>(psi: &F, eps: f64, x: &[f64], p: &OperatorParams) -> Result<Estimate> {
    let d = check_closed(psi, x, p)?;
    let trace = corrector_trace(psi, eps, &x[..d - 1], p)?;
    let a0 = p.spec.alpha0(&p.spec.outward_normal())?;
    let c = eps.powf(2.0 * p.spec.s - 1.0) * a0 * (-x[d - 1] * x[d - 1]).exp();
    Ok(trace.scale(c))
}

/// ‖T^ε‖_{L²(Ω)}; the normal profile integrates to (π/8)^{1/2} exactly.
pub fn corrector_norm<F: Field + ?Sized>(psi: &F, eps: f64, p: &OperatorParams) -> Result<Estimate> {
    let d = psi.dim();
    let a0 = p.spec.alpha0(&p.spec.outward_normal())?;
    let c = eps.powf(2.0 * p.spec.s - 1.0) * a0;
    let profile = (PI / 8.0).sqrt();
    let sq = match d {
        1 => {
            let t = corrector_trace(psi, eps, &[], p)?;
            Estimate::new(t.value * t.value, 2.0 * t.value.abs() * t.error)
        }
        2 => {
            let mut failure: Option<Error> = None;
            let tol = Tol::new(1e-14, 1e-7);
            let mut g = |t: f64| match corrector_trace(psi, eps, &[t], p) {
                Ok(e) => e.value * e.value,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            };
            let mid = adaptive_with_breaks(&mut g, -4.0, 4.0, &[-1.0, 0.0, 1.0], tol);
            let right = semi_infinite(&mut g, 4.0, tol);
            let left = semi_infinite(|t| g(-t), 4.0, tol);
            if let Some(e) = failure {
                return Err(e);
            }
            mid + right + left
        }
        _ => return domain(format!("corrector norm is implemented for N = 1, 2 (got {d})")),
    };
    let norm = c * (sq.value * profile).sqrt();
    let err = if sq.value > 0.0 { 0.5 * norm * sq.error / sq.value } else { 0.0 };
    Ok(Estimate::new(norm, err))
}
