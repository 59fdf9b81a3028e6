use std::f64::consts::PI;

use fracneumann::equilibrium::{DerivedKernel, EquilibriumSpec, KernelKind};
use fracneumann::geometry::*;
use fracneumann::operators::*;
use fracneumann::quad::{gauss_legendre, Rule};
use fracneumann::special::gamma;
use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

fn params(s: f64, dim: usize) -> OperatorParams {
    OperatorParams::new(EquilibriumSpec::new(s, dim, 1.0).unwrap())
}

/// exp(-((x_N - c)/w)^2) in N = 1, with its exact jet.
fn gauss1(c: f64, w: f64) -> FnField {
    FnField::new(1, 0.0, move |x| {
        let u = (x[0] - c) / w;
        let v = (-u * u).exp();
        let mut j = Jet::default();
        j.v = v;
        j.g[0] = -2.0 * u / w * v;
        j.h[0][0] = (4.0 * u * u - 2.0) / (w * w) * v;
        j
    })
}

/// exp(-|x - c|^2) in N = 2.
fn gauss2(c: [f64; 2]) -> FnField {
    FnField::new(2, 0.0, move |x| {
        let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
        let v = (-(dx * dx + dy * dy)).exp();
        let mut j = Jet::default();
        j.v = v;
        j.g = [-2.0 * dx * v, -2.0 * dy * v, 0.0];
        j.h[0] = [(4.0 * dx * dx - 2.0) * v, 4.0 * dx * dy * v, 0.0];
        j.h[1] = [4.0 * dx * dy * v, (4.0 * dy * dy - 2.0) * v, 0.0];
        j
    })
}

fn meshed(s: f64, m: usize, f: impl Fn(f64) -> f64) -> ScalarField {
    let mesh = GradedMesh::new(MeshSpec::for_order(s, m, 20.0)).unwrap();
    ScalarField::from_fn(mesh, Interp::Cubic, FarField::Zero, |x| f(x[0])).unwrap()
}

fn composite(rule: &Rule, a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels).map(|i| rule.integrate(a + i as f64 * h, a + (i + 1) as f64 * h, &f)).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// (-Δ)^s exp(-(x-c)^2) at distance t from the centre by the inverse
/// Fourier integral (1/π)∫_0^∞ k^{2s} √π e^{-k²/4} cos(kt) dk.
fn frac_lap_fourier(s: f64, t: f64) -> f64 {
    let rule = gauss_legendre(30);
    let v = composite(&rule, 0.0, 40.0, 400, |k| k.powf(2.0 * s) * PI.sqrt() * (-k * k / 4.0).exp() * (k * t).cos());
    v / PI
}

/// (-Δ)^s of exp(-((x-c)/w)^2) + exp(-((x+c)/w)^2) at x.
fn frac_lap_pair(s: f64, c: f64, w: f64, x: f64) -> f64 {
    w.powf(-2.0 * s) * (frac_lap_fourier(s, (x - c) / w) + frac_lap_fourier(s, (x + c) / w))
}

/// exp(-((x-c)/w)^2) + exp(-((x+c)/w)^2), which is its own even reflection.
fn gauss_pair(c: f64, w: f64) -> FnField {
    let (a, b) = (gauss1(c, w), gauss1(-c, w));
    FnField::new(1, 0.0, move |x| {
        let (p, q) = (a.jet(x), b.jet(x));
        let mut j = Jet::default();
        j.v = p.v + q.v;
        j.g[0] = p.g[0] + q.g[0];
        j.h[0][0] = p.h[0][0] + q.h[0][0];
        j
    })
}

/// Whole-line D^{2s-1}: c_D times the convolution of ψ' with |y|^{1-2s},
/// through its Fourier multiplier 2Γ(2-2s) sin(π(s-1/2)) |k|^{2s-2}.
fn d_fourier(s: f64, c_d: f64, t: f64) -> f64 {
    let rule = gauss_legendre(30);
    let m = 2.0 * gamma(2.0 - 2.0 * s) * (PI * (s - 0.5)).sin();
    // Re[(1/2π)∫ m|k|^{2s-2} (ik) ψ̂(k) e^{ikt} dk] = -(m/π)∫_0^∞ k^{2s-1} √π e^{-k²/4} sin(kt) dk
    let v = composite(&rule, 0.0, 40.0, 400, |k| k.powf(2.0 * s - 1.0) * PI.sqrt() * (-k * k / 4.0).exp() * (k * t).sin());
    -c_d * m * v / PI
}

/// (-Δ)^s of samples on a periodic grid through the FFT.
fn frac_lap_fft(s: f64, values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|v| Complex::new(*v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let len = n as f64 * dx;
    for (j, b) in buf.iter_mut().enumerate() {
        let k = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 } * 2.0 * PI / len;
        *b *= k.abs().powf(2.0 * s);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

#[test]
fn constants_are_annihilated() {
    for &dim in &[1usize, 2] {
        let p = params(0.7, dim);
        let c = 3.25;
        let psi = FnField::new(dim, c, move |_| Jet { v: c, ..Default::default() });
        let x: Vec<f64> = if dim == 1 { vec![0.4] } else { vec![0.2, 0.4] };
        for f in [DForm::Gradient, DForm::Extension, DForm::BoundarySplit] {
            let d = apply_d(&psi, &x, f, &p).unwrap();
            assert!(d.value.iter().all(|v| v.abs() < 1e-12), "{f:?} {:?}", d.value);
        }
        for f in [LForm::PvGradient, LForm::Extension, LForm::RegionalBoundary] {
            assert!(apply_l(&psi, &x, f, &p).unwrap().value.abs() < 1e-12, "{f:?}");
        }
        assert!(apply_specular(&psi, &x, &p).unwrap().value.abs() < 1e-12);
        assert!(boundary_flux(&psi, &x[..dim - 1], &p).unwrap().value.abs() < 1e-12);
        assert!(apply_d_eps(&psi, 0.1, &x, &p).unwrap().value.iter().all(|v| v.abs() < 1e-12));
        assert!(apply_l_eps(&psi, 0.1, &x, &p).unwrap().value.abs() < 1e-12);
        assert!(corrector_t_eps(&psi, 0.1, &x, &p).unwrap().value.abs() < 1e-12);
        let v: Vec<f64> = if dim == 1 { vec![-2.0] } else { vec![0.3, -2.0] };
        assert!((phi_eps(&psi, 0.1, &x, &v, &p).unwrap().value - c).abs() < 1e-12);
    }
    let p = params(0.7, 1);
    let mesh = GradedMesh::new(MeshSpec::for_order(0.7, 64, 20.0)).unwrap();
    let psi = ScalarField::from_fn(mesh, Interp::Cubic, FarField::Constant(1.5), |_| 1.5).unwrap();
    assert!(phi_eps_l2(&psi, 0.2, &p).unwrap().value.abs() < 1e-12);
}

#[test]
fn one_dimensional_forms_agree_on_meshed_fields() {
    for &s in &[0.6, 0.85] {
        let p = params(s, 1);
        let psi = meshed(s, 400, |x| (-(x - 2.0) * (x - 2.0)).exp());
        for &x in &[0.5, 1.0, 2.0, 4.0] {
            let d: Vec<f64> =
                [DForm::Gradient, DForm::Extension, DForm::BoundarySplit].iter().map(|f| apply_d(&psi, &[x], *f, &p).unwrap().value[0]).collect();
            let l: Vec<f64> =
                [LForm::PvGradient, LForm::Extension, LForm::RegionalBoundary].iter().map(|f| apply_l(&psi, &[x], *f, &p).unwrap().value).collect();
            for k in 1..3 {
                assert!(rel(d[k], d[0]) < 1e-7, "s={s} x={x} D {d:?}");
                assert!(rel(l[k], l[0]) < 1e-7, "s={s} x={x} L {l:?}");
            }
        }
    }
}

#[test]
fn two_dimensional_forms_agree() {
    let psi = gauss2([0.3, 1.5]);
    for &s in &[0.6, 0.85] {
        let p = params(s, 2);
        let x = [0.5, 1.0];
        let d: Vec<[f64; 3]> =
            [DForm::Gradient, DForm::Extension, DForm::BoundarySplit].iter().map(|f| apply_d(&psi, &x, *f, &p).unwrap().value).collect();
        let l: Vec<f64> =
            [LForm::PvGradient, LForm::Extension, LForm::RegionalBoundary].iter().map(|f| apply_l(&psi, &x, *f, &p).unwrap().value).collect();
        for k in 1..3 {
            assert!(rel(l[k], l[0]) < 1e-7, "s={s} L {l:?}");
            for c in 0..2 {
                assert!(rel(d[k][c], d[0][c]) < 1e-7, "s={s} D {d:?}");
            }
        }
    }
}

#[test]
fn far_interior_limit_operator_is_a_fractional_laplacian() {
    for &s in &[0.6, 0.75, 0.9] {
        let p = params(s, 1);
        let closed = 4f64.powf(s) * gamma(s + 0.5) / PI.sqrt();
        assert!(rel(frac_lap_fourier(s, 0.0), closed) < 1e-10);
        let factor = -p.c_l() / p.spec.c_ns();
        let psi = gauss1(10.0, 1.0);
        for &t in &[0.0, 0.7] {
            let want = factor * frac_lap_fourier(s, t);
            for f in [LForm::PvGradient, LForm::Extension, LForm::RegionalBoundary] {
                let got = apply_l(&psi, &[10.0 + t], f, &p).unwrap().value;
                assert!(rel(got, want) < 1e-7, "s={s} t={t} {f:?}: {got} vs {want}");
            }
            // the mirror image of the bump is still felt at x_N = 10
            let sr = apply_specular(&psi, &[10.0 + t], &p).unwrap().value;
            assert!(rel(sr, frac_lap_pair(s, 10.0, 1.0, 10.0 + t)) < 1e-7, "specular s={s}: {sr}");
            let far = apply_specular(&gauss1(40.0, 1.0), &[40.0 + t], &p).unwrap().value;
            assert!(rel(far, frac_lap_fourier(s, t)) < 1e-3, "specular s={s}: {far}");
        }
    }
}

#[test]
fn meshed_far_interior_matches_fft_oracle() {
    let s = 0.75;
    let p = params(s, 1);
    let n = 1 << 16;
    let len = 400.0;
    let dx = len / n as f64;
    let samples: Vec<f64> = (0..n).map(|i| (-(i as f64 * dx - 200.0).powi(2)).exp()).collect();
    let lap = frac_lap_fft(s, &samples, dx);
    let oracle = lap[n / 2];
    assert!(rel(oracle, 4f64.powf(s) * gamma(s + 0.5) / PI.sqrt()) < 1e-6);
    let psi = meshed(s, 400, |x| (-(x - 10.0) * (x - 10.0)).exp());
    let got = apply_l(&psi, &[10.0], LForm::Extension, &p).unwrap().value;
    let want = -p.c_l() / p.spec.c_ns() * oracle;
    assert!(rel(got, want) < 1e-3, "{got} vs {want}");
}

#[test]
fn far_interior_flux_matches_riesz_potential() {
    for &s in &[0.6, 0.8] {
        let p = params(s, 1);
        let psi = gauss1(10.0, 1.0);
        for &t in &[0.5, -1.2] {
            let want = d_fourier(s, p.c_d(), t);
            for f in [DForm::Gradient, DForm::Extension, DForm::BoundarySplit] {
                let got = apply_d(&psi, &[10.0 + t], f, &p).unwrap().value[0];
                assert!(rel(got, want) < 1e-7, "s={s} t={t} {f:?}: {got} vs {want}");
            }
        }
        let at_centre = apply_d(&psi, &[10.0], DForm::Extension, &p).unwrap().value[0];
        assert!(at_centre.abs() < 1e-10);
    }
}

#[test]
fn divergence_of_flux_is_the_limit_operator() {
    let h = 1e-3;
    let p = params(0.75, 1);
    let psi = gauss1(2.0, 1.0);
    for &x in &[0.5, 1.0, 3.0] {
        let dp = apply_d(&psi, &[x + h], DForm::Extension, &p).unwrap().value[0];
        let dm = apply_d(&psi, &[x - h], DForm::Extension, &p).unwrap().value[0];
        let l = apply_l(&psi, &[x], LForm::Extension, &p).unwrap().value;
        assert!(((dp - dm) / (2.0 * h) - l).abs() < 1e-5 * l.abs().max(1.0), "x={x}");
    }
    let p = params(0.75, 2);
    let psi = gauss2([0.3, 1.5]);
    let x = [0.5, 1.0];
    let mut div = 0.0;
    for c in 0..2 {
        let mut xp = x;
        let mut xm = x;
        xp[c] += h;
        xm[c] -= h;
        let dp = apply_d(&psi, &xp, DForm::Extension, &p).unwrap().value[c];
        let dm = apply_d(&psi, &xm, DForm::Extension, &p).unwrap().value[c];
        div += (dp - dm) / (2.0 * h);
    }
    let l = apply_l(&psi, &x, LForm::Extension, &p).unwrap().value;
    assert!((div - l).abs() < 1e-5 * l.abs(), "{div} vs {l}");
}

#[test]
fn tangential_flux_vanishes_for_normal_profiles() {
    let p = params(0.7, 2);
    let psi = FnField::new(2, 0.0, |x| {
        let u = x[1] - 1.5;
        let v = (-u * u).exp();
        let mut j = Jet::default();
        j.v = v;
        j.g[1] = -2.0 * u * v;
        j.h[1][1] = (4.0 * u * u - 2.0) * v;
        j
    });
    let d = apply_d(&psi, &[0.4, 1.0], DForm::Extension, &p).unwrap().value;
    assert!(d[0].abs() < 1e-9 * d[1].abs(), "{d:?}");
}

#[test]
fn boundary_flux_matches_closed_forms() {
    // ∫_0^∞ (e^{-r^2} - 1) r^{-2s} dr = Γ(1/2 - s)/2
    for &s in &[0.6, 0.75, 0.9] {
        let psi = gauss1(0.0, 1.0);
        let got = boundary_flux(&psi, &[], &params(s, 1)).unwrap().value;
        assert!(rel(got, -0.5 * gamma(0.5 - s)) < 1e-9, "s={s}: {got}");
        let psi = gauss2([0.0, 0.0]);
        let got = boundary_flux(&psi, &[0.0], &params(s, 2)).unwrap().value;
        assert!(rel(got, -gamma(0.5 - s)) < 1e-8, "s={s}: {got}");
    }
    let s = 0.75;
    let mesh = GradedMesh::new(MeshSpec::for_order(s, 64, 20.0)).unwrap();
    let ramp = ScalarField::from_fn(mesh, Interp::Cubic, FarField::Constant(20.0), |x| x[0]).unwrap();
    assert!(boundary_flux(&ramp, &[], &params(s, 1)).unwrap().value < 0.0);
}

#[test]
fn kernel_h_matches_cartesian_quadrature() {
    let rule = gauss_legendre(20);
    for &s in &[0.6, 0.75, 0.9] {
        for &x in &[0.01, 0.2, 0.7] {
            // N = 1: ∫_x^1 z^{-2s} dz
            let one = composite(&rule, x, 1.0, 200, |z| z.powf(-2.0 * s));
            assert!(rel(kernel_h(x, 1, s).unwrap(), one) < 1e-10);
            // N = 2: cap z_2 > x of the unit disc
            let two = composite(&rule, x, 1.0, 200, |z2| {
                let w = (1.0 - z2 * z2).max(0.0).sqrt();
                2.0 * composite(&rule, 0.0, w, 8, |z1| z2 * (z1 * z1 + z2 * z2).powf(-1.0 - s))
            });
            assert!(rel(kernel_h(x, 2, s).unwrap(), two) < 1e-7, "s={s} x={x}");
        }
        for d in 1..=3 {
            assert_eq!(kernel_h(1.5, d, s).unwrap(), 0.0);
            assert!(kernel_h(0.999, d, s).unwrap() >= 0.0);
        }
        // the exponent 1 - 2s is reached as x_N -> 0
        let (a, b) = (1e-12, 1e-10);
        let slope = (kernel_h(b, 1, s).unwrap() / kernel_h(a, 1, s).unwrap()).ln() / (b / a).ln();
        assert!(rel(slope, 1.0 - 2.0 * s) < 0.02, "s={s}: {slope}");
    }
}

#[test]
fn phi_eps_matches_erfc_closed_form() {
    use statrs::function::erf::erfc;
    let p = params(0.75, 1);
    let psi = gauss1(2.0, 1.0);
    for &(eps, x, v) in &[(0.1, 1.0, 3.0), (0.4, 0.5, 0.7), (0.05, 2.5, 40.0)] {
        // λ ∫_0^∞ e^{-λr} e^{-(x + r - 2)^2} dr with λ = ν0/(εv)
        let lam: f64 = 1.0 / (eps * v);
        let a = x - 2.0;
        let want = lam * 0.5 * PI.sqrt() * (lam * a + lam * lam / 4.0).exp() * erfc(a + lam / 2.0);
        let got = phi_eps(&psi, eps, &[x], &[v], &p).unwrap().value;
        assert!(rel(got, want) < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn phi_eps_solves_its_transport_equation() {
    let p = params(0.75, 2);
    let psi = gauss2([0.3, 1.5]);
    let eps = 0.2;
    let h = 1e-4;
    for (x, v) in [([0.1f64, 1.0], [0.6f64, -1.1]), ([-0.5, 0.3], [2.0, 0.5])] {
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let e = [v[0] / speed, v[1] / speed];
        let at = |t: f64| phi_eps(&psi, eps, &[x[0] + t * e[0], x[1] + t * e[1]], &v, &p).unwrap().value;
        let grad = (at(h) - at(-h)) / (2.0 * h);
        let lhs = at(0.0) - eps * speed * grad;
        let rhs = psi.value(&x);
        assert!((lhs - rhs).abs() < 1e-6 * rhs.abs().max(1e-3), "{lhs} vs {rhs}");
    }
}

#[test]
fn phi_eps_keeps_wall_values_on_outgoing_directions() {
    let psi = gauss2([0.3, 1.5]);
    let p = params(0.75, 2);
    for v in [[0.4, -1.0], [-3.0, -0.2]] {
        let got = phi_eps(&psi, 0.3, &[0.7, 0.0], &v, &p).unwrap().value;
        assert!((got - psi.value(&[0.7, 0.0])).abs() < 1e-13);
    }
    let inward = phi_eps(&psi, 0.3, &[0.7, 0.0], &[0.4, 1.0], &p).unwrap().value;
    assert!((inward - psi.value(&[0.7, 0.0])).abs() > 1e-3);
}

/// ε^{1-2s}∫ v F0(v)[ψ̃(x+εv) - ψ(x)] dv and ε^{-2s}∫ F1(v)[...] dv for
/// N = 1 straight from the untabulated kernels.
fn eps_oracle(s: f64, kind: KernelKind, psi: &FnField, eps: f64, x: f64) -> f64 {
    let spec = EquilibriumSpec::new(s, 1, 1.0).unwrap();
    let k = DerivedKernel::new(spec, kind);
    let rule = gauss_legendre(20);
    let top: f64 = 1e7;
    let v0 = psi.value(&[x]);
    let wall = psi.value(&[0.0]);
    let ext = |y: f64| if y >= 0.0 { psi.value(&[y]) } else { wall };
    let odd = kind == KernelKind::F0;
    let body = composite(&rule, -12.0, top.ln(), 3000, |t| {
        let v = t.exp();
        let w = k.eval_radial(v).unwrap() * v;
        let (r, l) = (ext(x + eps * v) - v0, ext(x - eps * v) - v0);
        if odd { w * v * (r - l) } else { w * (r + l) }
    });
    // beyond `top` the right side has decayed and the left side sits at ψ(0)
    let tail_c = k.tail_constant();
    let tail = if odd {
        -wall * tail_c * top.powf(1.0 - 2.0 * s) / (2.0 * s - 1.0)
    } else {
        (wall - v0) * tail_c * top.powf(-2.0 * s) / (2.0 * s) - v0 * tail_c * top.powf(-2.0 * s) / (2.0 * s)
    };
    let scale = if odd { eps.powf(1.0 - 2.0 * s) } else { eps.powf(-2.0 * s) };
    scale * (body + tail)
}

#[test]
fn eps_operators_match_direct_velocity_integrals() {
    let s = 0.75;
    let p = params(s, 1);
    let psi = gauss1(2.0, 1.0);
    for &(eps, x) in &[(0.2, 1.0), (0.05, 0.3)] {
        let d = apply_d_eps(&psi, eps, &[x], &p).unwrap().value[0];
        let want = eps_oracle(s, KernelKind::F0, &psi, eps, x);
        assert!(rel(d, want) < 1e-6, "D_ε {d} vs {want}");
        let l = apply_l_eps(&psi, eps, &[x], &p).unwrap().value;
        let want = eps_oracle(s, KernelKind::F1, &psi, eps, x);
        assert!(rel(l, want) < 1e-6, "L_ε {l} vs {want}");
    }
}

#[test]
fn eps_operators_approach_their_limits() {
    let p = params(0.75, 1);
    let psi = gauss1(2.0, 1.0);
    let x = [1.0];
    let d = apply_d(&psi, &x, DForm::Extension, &p).unwrap().value[0];
    let l = apply_l(&psi, &x, LForm::Extension, &p).unwrap().value;
    let mut last = (f64::INFINITY, f64::INFINITY);
    for &eps in &[0.4, 0.2, 0.1, 0.05, 0.025] {
        let ed = (apply_d_eps(&psi, eps, &x, &p).unwrap().value[0] - d).abs();
        let el = (apply_l_eps(&psi, eps, &x, &p).unwrap().value - l).abs();
        assert!(ed < last.0 && el < last.1, "ε={eps}: {ed} {el}");
        last = (ed, el);
    }
}

#[test]
fn corrector_factorizes_in_the_normal_variable() {
    let p = params(0.75, 2);
    let psi = gauss2([0.3, 1.5]);
    let base = corrector_t_eps(&psi, 0.2, &[0.1, 0.0], &p).unwrap().value;
    assert!(base.abs() > 1e-6);
    for &xn in &[0.3, 1.0, 2.5] {
        let t = corrector_t_eps(&psi, 0.2, &[0.1, xn], &p).unwrap().value;
        assert!(rel(t / base, (-xn * xn).exp()) < 1e-12);
    }
    let p1 = params(0.75, 1);
    let psi1 = gauss1(2.0, 1.0);
    let trace = corrector_trace(&psi1, 0.2, &[], &p1).unwrap().value;
    let a0 = p1.spec.alpha0(&p1.spec.outward_normal()).unwrap();
    let want = 0.2f64.powf(0.5) * a0 * trace.abs() * (PI / 8.0).sqrt().sqrt();
    assert!(rel(corrector_norm(&psi1, 0.2, &p1).unwrap().value, want) < 1e-12);
}

#[test]
fn specular_operator_differs_from_the_limit_near_the_wall() {
    let s = 0.75;
    let p = params(s, 1);
    let psi = gauss_pair(0.5, 0.5);
    assert!(boundary_flux(&psi, &[], &p).unwrap().value.abs() > 1e-2);
    let x = [0.1];
    let sr = apply_specular(&psi, &x, &p).unwrap().value;
    assert!(rel(sr, frac_lap_pair(s, 0.5, 0.5, x[0])) < 1e-7, "{sr}");
    let l = apply_l(&psi, &x, LForm::Extension, &p).unwrap().value;
    let gap = (sr + l * p.spec.c_ns() / p.c_l()).abs();
    assert!(gap > 0.05 * sr.abs(), "{sr} {l}");
}

#[test]
fn batch_evaluation_preserves_order() {
    let p = params(0.75, 1);
    let psi = gauss1(2.0, 1.0);
    let pts: Vec<Vec<f64>> = (1..=12).map(|i| vec![0.25 * i as f64]).collect();
    let rows = evaluate_batch(&pts, |x| {
        let e = apply_l(&psi, x, LForm::Extension, &p)?;
        Ok((vec![e.value], e.error))
    })
    .unwrap();
    for (r, x) in rows.iter().zip(&pts) {
        assert_eq!(&r.x, x);
        assert_eq!(r.value[0], apply_l(&psi, x, LForm::Extension, &p).unwrap().value);
    }
    let dir = std::env::temp_dir().join("fracneumann-batch.csv");
    write_batch_csv(&dir, &rows).unwrap();
    let text = std::fs::read_to_string(&dir).unwrap();
    assert!(text.starts_with("x1,value,error"));
    assert_eq!(text.lines().count(), 13);
}

#[test]
fn wall_points_are_rejected() {
    let p = params(0.75, 1);
    let psi = gauss1(2.0, 1.0);
    assert!(apply_l(&psi, &[0.0], LForm::Extension, &p).is_err());
    assert!(apply_d(&psi, &[-0.1], DForm::Gradient, &p).is_err());
    assert!(kernel_h(0.0, 1, 0.75).is_err());
    assert!(phi_eps(&psi, 0.0, &[1.0], &[1.0], &p).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn forms_agree_on_random_gaussians(
        s in 0.55f64..0.95,
        c in 0.5f64..4.0,
        w in 0.4f64..1.5,
        x in 0.05f64..5.0,
    ) {
        let p = params(s, 1);
        let psi = gauss1(c, w);
        let d: Vec<f64> = [DForm::Gradient, DForm::Extension, DForm::BoundarySplit]
            .iter().map(|f| apply_d(&psi, &[x], *f, &p).unwrap().value[0]).collect();
        let l: Vec<f64> = [LForm::PvGradient, LForm::Extension, LForm::RegionalBoundary]
            .iter().map(|f| apply_l(&psi, &[x], *f, &p).unwrap().value).collect();
        let band = |a: &[f64]| 2.0 * p.tol * a.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1e-12;
        for k in 1..3 {
            prop_assert!((d[k] - d[0]).abs() <= band(&d), "D {:?}", d);
            prop_assert!((l[k] - l[0]).abs() <= band(&l), "L {:?}", l);
        }
    }

    #[test]
    fn constants_vanish_everywhere(c in -5.0f64..5.0, x in 0.01f64..8.0, s in 0.55f64..0.95) {
        let p = params(s, 1);
        let psi = FnField::new(1, c, move |_| Jet { v: c, ..Default::default() });
        prop_assert!(apply_l(&psi, &[x], LForm::PvGradient, &p).unwrap().value.abs() < 1e-12);
        prop_assert!(apply_d(&psi, &[x], DForm::BoundarySplit, &p).unwrap().value[0].abs() < 1e-12);
    }
}
