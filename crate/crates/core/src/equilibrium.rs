//! Heavy-tailed equilibrium F(v) = Z^{-1} (1 + |v|^2)^{-(N+2s)/2}, the derived
//! kernels F0 and F1, the diffuse-reflection constant and the samplers.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quad::{adaptive_with_breaks, endpoint_power, gauss_laguerre, Rule, Tol};
use crate::special::{gamma, sphere_area};
use crate::spline::{CubicSpline, EndCondition};

/// Points and velocities in R^N are stored in the first N slots; the last
/// active slot (index N-1) is the wall-normal coordinate.
pub type V3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSpec {
    pub s: f64,
    pub dim: usize,
    #[serde(default = "default_nu0")]
    pub nu0: f64,
}

fn default_nu0() -> f64 {
    1.0
}

impl EquilibriumSpec {
    pub fn new(s: f64, dim: usize, nu0: f64) -> Result<Self> {
        let spec = Self { s, dim, nu0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.5 && self.s < 1.0) {
            return Err(Error::Config(format!("s = {} must lie in (1/2, 1)", self.s)));
        }
        if !(1..=3).contains(&self.dim) {
            return Err(Error::Config(format!("dimension {} not in {{1, 2, 3}}", self.dim)));
        }
        if !(self.nu0 > 0.0 && self.nu0.is_finite()) {
            return Err(Error::Config(format!("collision frequency {} must be positive", self.nu0)));
        }
        Ok(())
    }

    fn n(&self) -> f64 {
        self.dim as f64
    }

    /// Normalization Z = ∫ (1 + |v|^2)^{-(N+2s)/2} dv.
    pub fn z(&self) -> f64 {
        PI.powf(self.n() / 2.0) * gamma(self.s) / gamma(self.n() / 2.0 + self.s)
    }

    /// Tail constant of F: F(v) |v|^{N+2s} -> gamma as |v| -> inf.
    pub fn gamma(&self) -> f64 {
        1.0 / self.z()
    }

    /// Decay exponent N + 2s.
    pub fn decay(&self) -> f64 {
        self.n() + 2.0 * self.s
    }

    pub fn f_radial(&self, r: f64) -> f64 {
        (1.0 + r * r).powf(-0.5 * self.decay()) / self.z()
    }

    pub fn eval_f(&self, v: &[f64]) -> f64 {
        let r2: f64 = v[..self.dim].iter().map(|x| x * x).sum();
        (1.0 + r2).powf(-0.5 * self.decay()) / self.z()
    }

    /// ν0^{1-2s}.
    pub fn nu_factor(&self) -> f64 {
        self.nu0.powf(1.0 - 2.0 * self.s)
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma() * self.nu_factor() * gamma(2.0 * self.s)
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma() * self.nu_factor() * gamma(2.0 * self.s + 1.0)
    }

    /// Coefficient of the gradient form of the flux operator.
    pub fn c_d(&self) -> f64 {
        self.gamma() * self.nu_factor() * gamma(2.0 * self.s - 1.0)
    }

    /// Coefficient of the difference-quotient form of the flux operator.
    pub fn c_grad(&self) -> f64 {
        self.gamma0()
    }

    /// Coefficient of the difference-quotient form of the limit operator.
    pub fn c_l(&self) -> f64 {
        self.gamma1()
    }

    /// Normalizing constant of the whole-space fractional Laplacian.
    pub fn c_ns(&self) -> f64 {
        let s = self.s;
        4f64.powf(s) * gamma(self.n() / 2.0 + s) / (PI.powf(self.n() / 2.0) * gamma(-s).abs())
    }

    /// Diffuse-reflection constant: α0 ∫_{v·n<0} |v·n| F dv = 1.
    ///
    /// F is rotation invariant and its one-dimensional marginal is the N = 1
    /// member of the family, so α0 = (2s - 1) Z_1 for every unit normal.
    pub fn alpha0(&self, n: &[f64]) -> Result<f64> {
        let norm: f64 = n[..self.dim].iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return domain(format!("normal has length {norm}, expected 1"));
        }
        let z1 = PI.sqrt() * gamma(self.s) / gamma(0.5 + self.s);
        Ok((2.0 * self.s - 1.0) * z1)
    }

    /// Unit normal -e_N of the half-space.
    pub fn outward_normal(&self) -> V3 {
        let mut n = [0.0; 3];
        n[self.dim - 1] = -1.0;
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    F0,
    F1,
}

/// F0(v) = ∫ e^{-ν0 z} ν0 F(v/z) z^{-N-1} dz and
/// F1(v) = ∫ e^{-ν0 z} ν0^2 F(v/z) z^{-N} dz.
#[derive(Debug, Clone)]
pub struct DerivedKernel {
    pub kind: KernelKind,
    pub spec: EquilibriumSpec,
    ggl: Arc<Rule>,
}

/// ν0 |v| above which the 64-node generalized Gauss-Laguerre rule is used.
const GGL_SWITCH: f64 = 200.0;

impl DerivedKernel {
    pub fn new(spec: EquilibriumSpec, kind: KernelKind) -> Self {
        let p = match kind {
            KernelKind::F0 => 2.0 * spec.s - 1.0,
            KernelKind::F1 => 2.0 * spec.s,
        };
        Self { kind, spec, ggl: Arc::new(gauss_laguerre(64, p)) }
    }

    fn power(&self) -> f64 {
        match self.kind {
            KernelKind::F0 => 2.0 * self.spec.s - 1.0,
            KernelKind::F1 => 2.0 * self.spec.s,
        }
    }

    fn prefactor(&self) -> f64 {
        match self.kind {
            KernelKind::F0 => self.spec.nu0,
            KernelKind::F1 => self.spec.nu0 * self.spec.nu0,
        }
    }

    /// Tail constant γ0 or γ1.
    pub fn tail_constant(&self) -> f64 {
        match self.kind {
            KernelKind::F0 => self.spec.gamma0(),
            KernelKind::F1 => self.spec.gamma1(),
        }
    }

    pub fn eval(&self, v: &[f64]) -> Result<f64> {
        let r: f64 = v[..self.spec.dim].iter().map(|x| x * x).sum::<f64>().sqrt();
        self.eval_radial(r)
    }

    /// Kernel value at |v| = r. Both kernels reduce to
    /// pre Z^{-1} ∫ e^{-ν0 z} z^p (z^2 + r^2)^{-q} dz with q = (N+2s)/2.
    pub fn eval_radial(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) || !r.is_finite() {
            return domain(format!("derived kernel is singular at |v| = {r}"));
        }
        let sp = &self.spec;
        let p = self.power();
        let q = 0.5 * sp.decay();
        let nu = sp.nu0;
        let pre = self.prefactor() / sp.z();
        if nu * r >= GGL_SWITCH {
            // z = u/ν0: ν0^{-p-1} ∫ e^{-u} u^p ((u/ν0)^2 + r^2)^{-q} du
            let s: f64 = self
                .ggl
                .nodes
                .iter()
                .zip(&self.ggl.weights)
                .map(|(u, w)| w * ((u / nu).powi(2) + r * r).powf(-q))
                .sum();
            return Ok(pre * nu.powf(-p - 1.0) * s);
        }
        // z = r t, split at t = 1; the upper half uses t = 1/u
        let a = nu * r;
        let tol = Tol { abs: 0.0, rel: 1e-14, max_panels: 4000 };
        let lower = endpoint_power(|t: f64| (-a * t).exp() * (1.0 + t * t).powf(-q), 1.0, -p, tol);
        let e = 2.0 * q - p - 2.0;
        let upper = adaptive_with_breaks(
            |u: f64| {
                if u <= 0.0 {
                    return 0.0;
                }
                (-a / u).exp() * u.powf(e) * (1.0 + u * u).powf(-q)
            },
            0.0,
            1.0,
            &[0.1 * a, a, 10.0 * a],
            tol,
        );
        Ok(pre * r.powf(p + 1.0 - 2.0 * q) * (lower.value + upper.value))
    }
}

/// Log-spaced table of a derived kernel with its radial tail moment
/// T(a) = ∫_a^∞ r^m K(r) dr, where m = N for F0 and m = N-1 for F1.
/// Used inside the ε-scaled velocity integrals.
#[derive(Debug)]
pub struct KernelTable {
    pub kind: KernelKind,
    pub spec: EquilibriumSpec,
    moment: i32,
    lmin: f64,
    lmax: f64,
    logk: CubicSpline,
    logt: CubicSpline,
}

const TABLE_RMIN: f64 = 1e-7;
const TABLE_RMAX: f64 = 1e7;
const TABLE_PER_DECADE: usize = 160;

impl KernelTable {
    pub fn build(spec: EquilibriumSpec, kind: KernelKind) -> Result<Self> {
        let kernel = DerivedKernel::new(spec, kind);
        let lmin = TABLE_RMIN.ln();
        let lmax = TABLE_RMAX.ln();
        let n = (14 * TABLE_PER_DECADE) + 1;
        let ls: Vec<f64> = (0..n).map(|i| lmin + (lmax - lmin) * i as f64 / (n - 1) as f64).collect();
        let mut lk = Vec::with_capacity(n);
        for &l in &ls {
            lk.push(kernel.eval_radial(l.exp())?.ln());
        }
        let logk = CubicSpline::new(ls.clone(), lk, EndCondition::NotAKnot, EndCondition::NotAKnot);
        let moment = match kind {
            KernelKind::F0 => spec.dim as i32,
            KernelKind::F1 => spec.dim as i32 - 1,
        };
        // cumulative tail integrals from the top using the asymptotic power law
        let expo = spec.decay() - moment as f64 - 1.0;
        let mut tails = vec![0.0; n];
        tails[n - 1] = kernel.tail_constant() * TABLE_RMAX.powf(-expo) / expo;
        let gl = crate::quad::gauss_legendre(6);
        for i in (0..n - 1).rev() {
            let piece = gl.integrate(ls[i], ls[i + 1], |l| ((moment as f64 + 1.0) * l + logk.eval(l)).exp());
            tails[i] = tails[i + 1] + piece;
        }
        let lt = tails.iter().map(|t| t.ln()).collect();
        let logt = CubicSpline::new(ls, lt, EndCondition::NotAKnot, EndCondition::NotAKnot);
        Ok(Self { kind, spec, moment, lmin, lmax, logk, logt })
    }

    /// Shared table for a spec, built on first use.
    pub fn shared(spec: EquilibriumSpec, kind: KernelKind) -> Result<Arc<KernelTable>> {
        type Key = (u64, usize, u64, KernelKind);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<KernelTable>>>> = OnceLock::new();
        let key = (spec.s.to_bits(), spec.dim, spec.nu0.to_bits(), kind);
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(t) = cache.lock().unwrap().get(&key) {
            return Ok(t.clone());
        }
        let t = Arc::new(Self::build(spec, kind)?);
        cache.lock().unwrap().insert(key, t.clone());
        Ok(t)
    }

    pub fn moment(&self) -> i32 {
        self.moment
    }

    fn tail_constant(&self) -> f64 {
        match self.kind {
            KernelKind::F0 => self.spec.gamma0(),
            KernelKind::F1 => self.spec.gamma1(),
        }
    }

    /// K(r) for r > 0.
    pub fn eval(&self, r: f64) -> f64 {
        let l = r.ln();
        if l >= self.lmax {
            self.tail_constant() * r.powf(-self.spec.decay())
        } else if l <= self.lmin {
            // log-log linear continuation below the table
            let (v, d, _) = self.logk.eval_all(self.lmin);
            (v + d * (l - self.lmin)).exp()
        } else {
            self.logk.eval(l).exp()
        }
    }

    /// ∫_a^∞ r^m K(r) dr.
    pub fn tail(&self, a: f64) -> f64 {
        let expo = self.spec.decay() - self.moment as f64 - 1.0;
        if a <= 0.0 {
            return self.logt.eval(self.lmin).exp() + self.head(TABLE_RMIN);
        }
        let l = a.ln();
        if l >= self.lmax {
            self.tail_constant() * a.powf(-expo) / expo
        } else if l <= self.lmin {
            self.logt.eval(self.lmin).exp() + self.head(TABLE_RMIN) - self.head(a)
        } else {
            self.logt.eval(l).exp()
        }
    }

    /// ∫_0^a r^m K(r) dr below the table using the log-log continuation.
    fn head(&self, a: f64) -> f64 {
        let (v, d, _) = self.logk.eval_all(self.lmin);
        // K ≈ e^v (r/rmin)^d
        let pw = d + self.moment as f64 + 1.0;
        v.exp() * TABLE_RMIN.powf(-d) * a.powf(pw) / pw
    }
}

/// Per-worker random streams: worker `k` of a run seeded with `seed` uses the
/// ChaCha8 stream number `k` keyed by `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One draw from F: v = g / sqrt(W) with g standard normal in R^N and W
/// chi-squared with 2s degrees of freedom.
pub fn draw_f<R: Rng + ?Sized>(spec: &EquilibriumSpec, chi: &ChiSquared<f64>, rng: &mut R) -> V3 {
    let w: f64 = chi.sample(rng);
    let sc = 1.0 / w.sqrt();
    let mut v = [0.0; 3];
    for x in v.iter_mut().take(spec.dim) {
        let g: f64 = StandardNormal.sample(rng);
        *x = g * sc;
    }
    v
}

pub fn chi_for(spec: &EquilibriumSpec) -> ChiSquared<f64> {
    ChiSquared::new(2.0 * spec.s).expect("positive degrees of freedom")
}

pub fn sample_f(spec: &EquilibriumSpec, seed: u64, count: usize) -> Vec<V3> {
    let mut rng = substream(seed, 0);
    let chi = chi_for(spec);
    (0..count).map(|_| draw_f(spec, &chi, &mut rng)).collect()
}

/// Cap on the normal speed of diffuse draws; larger speeds are not representable
/// downstream (their squares overflow).
pub const MAX_DIFFUSE_SPEED: f64 = 1e150;

/// Sampler for the diffuse-reflection law α0 F(v) |v·n| on {v·n > 0}.
///
/// The normal component u = v·n has density ∝ u (1 + u^2)^{-(1+2s)/2},
/// inverted in closed form; given u, the tangential part is
/// sqrt(1 + u^2) times an (N-1)-dimensional draw of the same family with
/// 2s replaced by 2s + 1.
#[derive(Debug, Clone)]
pub struct DiffuseSampler {
    spec: EquilibriumSpec,
    n: V3,
    frame: [V3; 2],
    chi_t: ChiSquared<f64>,
}

impl DiffuseSampler {
    pub fn new(spec: EquilibriumSpec, n: &[f64]) -> Result<Self> {
        spec.alpha0(n)?;
        let mut nn = [0.0; 3];
        nn[..spec.dim].copy_from_slice(&n[..spec.dim]);
        let frame = tangent_frame(&nn, spec.dim);
        let chi_t = ChiSquared::new(2.0 * spec.s + 1.0).expect("positive degrees of freedom");
        Ok(Self { spec, n: nn, frame, chi_t })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> V3 {
        let s = self.spec.s;
        let uni: f64 = rng.random();
        // u^2 = (1 - U)^{-2/(2s-1)} - 1, evaluated in log space: near s = 1/2 the
        // power overflows long before the tail probability is negligible
        let at = -(-uni).ln_1p() * 2.0 / (2.0 * s - 1.0);
        let u = if at > 40.0 { (0.5 * at).exp().min(MAX_DIFFUSE_SPEED) } else { at.exp_m1().sqrt() };
        let mut v = [0.0; 3];
        for k in 0..self.spec.dim {
            v[k] = u * self.n[k];
        }
        if self.spec.dim > 1 {
            let w: f64 = self.chi_t.sample(rng);
            let sc = u.hypot(1.0) / w.sqrt();
            for e in self.frame.iter().take(self.spec.dim - 1) {
                let g: f64 = StandardNormal.sample(rng);
                for k in 0..self.spec.dim {
                    v[k] += sc * g * e[k];
                }
            }
        }
        v
    }
}

fn tangent_frame(n: &V3, dim: usize) -> [V3; 2] {
    match dim {
        1 => [[0.0; 3]; 2],
        2 => [[-n[1], n[0], 0.0], [0.0; 3]],
        _ => {
            // Gram-Schmidt against the coordinate axis least aligned with n
            let mut k = 0;
            for j in 1..3 {
                if n[j].abs() < n[k].abs() {
                    k = j;
                }
            }
            let mut a = [0.0; 3];
            a[k] = 1.0;
            let d = a[0] * n[0] + a[1] * n[1] + a[2] * n[2];
            let mut t1 = [a[0] - d * n[0], a[1] - d * n[1], a[2] - d * n[2]];
            let l = (t1[0] * t1[0] + t1[1] * t1[1] + t1[2] * t1[2]).sqrt();
            t1.iter_mut().for_each(|x| *x /= l);
            let t2 = [n[1] * t1[2] - n[2] * t1[1], n[2] * t1[0] - n[0] * t1[2], n[0] * t1[1] - n[1] * t1[0]];
            [t1, t2]
        }
    }
}

pub fn sample_diffuse(spec: &EquilibriumSpec, n: &[f64], seed: u64, count: usize) -> Result<Vec<V3>> {
    let sampler = DiffuseSampler::new(*spec, n)?;
    let mut rng = substream(seed, 0);
    Ok((0..count).map(|_| sampler.draw(&mut rng)).collect())
}

/// Surface measure of S^{N-1} (2 for N = 1, counting the two directions).
pub fn sphere(spec: &EquilibriumSpec) -> f64 {
    sphere_area(spec.dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_relations() {
        for &s in &[0.55, 0.75, 0.95] {
            let sp = EquilibriumSpec::new(s, 1, 1.3).unwrap();
            assert_relative_eq!(sp.c_grad(), (2.0 * s - 1.0) * sp.c_d(), max_relative = 1e-13);
            assert_relative_eq!(sp.c_l(), 2.0 * s * sp.c_grad(), max_relative = 1e-13);
            assert_relative_eq!(sp.gamma1(), 2.0 * s * sp.gamma0(), max_relative = 1e-13);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(EquilibriumSpec::new(0.5, 1, 1.0).is_err());
        assert!(EquilibriumSpec::new(0.7, 4, 1.0).is_err());
        assert!(EquilibriumSpec::new(0.7, 1, 0.0).is_err());
    }

    #[test]
    fn derived_kernel_singular_at_origin() {
        let k = DerivedKernel::new(EquilibriumSpec::new(0.7, 1, 1.0).unwrap(), KernelKind::F0);
        assert!(matches!(k.eval(&[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn alpha0_rejects_non_unit_normal() {
        let sp = EquilibriumSpec::new(0.7, 2, 1.0).unwrap();
        assert!(sp.alpha0(&[0.0, -2.0]).is_err());
        let a = sp.alpha0(&[0.6, -0.8]).unwrap();
        let b = sp.alpha0(&[0.0, -1.0]).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn sampler_is_seed_deterministic() {
        let sp = EquilibriumSpec::new(0.7, 3, 1.0).unwrap();
        let a = sample_f(&sp, 9, 50);
        let b = sample_f(&sp, 9, 50);
        assert_eq!(a, b);
        assert_ne!(a, sample_f(&sp, 10, 50));
    }

    #[test]
    fn table_tracks_direct_evaluation() {
        let sp = EquilibriumSpec::new(0.75, 1, 1.0).unwrap();
        for kind in [KernelKind::F0, KernelKind::F1] {
            let t = KernelTable::shared(sp, kind).unwrap();
            let k = DerivedKernel::new(sp, kind);
            for &r in &[1e-4, 0.0123, 0.7, 3.3, 58.0, 61.0, 900.0] {
                let d = k.eval_radial(r).unwrap();
                assert_relative_eq!(t.eval(r), d, max_relative = 1e-9);
            }
        }
    }
}
