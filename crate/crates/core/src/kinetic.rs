//! The scaled linear Boltzmann equation
//!   ∂_t f + ε^{1-2s} v·∇f = ν0 ε^{-2s} (ρF - f),   x_N > 0,
//! with diffuse reflection at x_N = 0, solved by event-driven Monte Carlo
//! (N = 1, 2, 3) and by a discrete-velocity upwind scheme (N = 1).
//!
//! Orientation: a particle hits the wall when x_N reaches 0 with v_N < 0 and
//! re-enters with v_N > 0. With the outward normal n = -e_N these are the
//! outgoing (Σ+) and incoming (Σ-) sides.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{chi_for, draw_f, DiffuseSampler, EquilibriumSpec, V3};
use crate::error::{domain, Error, Result};
use crate::geometry::{FnField, Jet};
use crate::special::beta_reg;

/// Initial density ρ_in on the half-line x_N > 0; the kinetic datum is ρ_in F.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialProfile {
    /// mass · exp(-(x - center)^2 / width^2), normalized on x > 0.
    Gaussian { center: f64, width: f64, mass: f64 },
    Uniform { lo: f64, hi: f64, mass: f64 },
    /// All mass at one point (Monte Carlo only).
    Point { x: f64, mass: f64 },
    /// Piecewise-linear density through (x, rho), zero outside.
    Tabulated { x: Vec<f64>, rho: Vec<f64> },
}

impl Default for InitialProfile {
    fn default() -> Self {
        InitialProfile::Gaussian { center: 2.0, width: 1.0, mass: 1.0 }
    }
}

impl InitialProfile {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            InitialProfile::Gaussian { center, width, mass } => center.is_finite() && *width > 0.0 && *mass >= 0.0,
            InitialProfile::Uniform { lo, hi, mass } => *lo >= 0.0 && hi > lo && *mass >= 0.0,
            InitialProfile::Point { x, mass } => *x >= 0.0 && *mass >= 0.0,
            InitialProfile::Tabulated { x, rho } => {
                x.len() >= 2
                    && x.len() == rho.len()
                    && x[0] >= 0.0
                    && x.windows(2).all(|w| w[1] > w[0])
                    && rho.iter().all(|r| *r >= 0.0 && r.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid initial profile {self:?}")))
        }
    }

    fn gaussian_norm(center: f64, width: f64) -> f64 {
        0.5 * width * PI.sqrt() * (1.0 + statrs::function::erf::erf(center / width))
    }

    pub fn mass(&self) -> f64 {
        match self {
            InitialProfile::Gaussian { mass, .. } | InitialProfile::Uniform { mass, .. } | InitialProfile::Point { mass, .. } => *mass,
            InitialProfile::Tabulated { x, rho } => x.windows(2).zip(rho.windows(2)).map(|(a, r)| 0.5 * (a[1] - a[0]) * (r[0] + r[1])).sum(),
        }
    }

    /// Density and its derivative at x >= 0.
    pub fn density(&self, x: f64) -> Result<(f64, f64)> {
        Ok(match self {
            InitialProfile::Gaussian { center, width, mass } => {
                let a = mass / Self::gaussian_norm(*center, *width);
                let u = (x - center) / width;
                let e = a * (-u * u).exp();
                (e, -2.0 * u / width * e)
            }
            InitialProfile::Uniform { lo, hi, mass } => {
                if x >= *lo && x < *hi {
                    (mass / (hi - lo), 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            InitialProfile::Point { .. } => return domain("a point mass has no density"),
            InitialProfile::Tabulated { x: xs, rho } => {
                if x < xs[0] || x > xs[xs.len() - 1] {
                    (0.0, 0.0)
                } else {
                    let j = xs.partition_point(|&t| t <= x).clamp(1, xs.len() - 1);
                    let slope = (rho[j] - rho[j - 1]) / (xs[j] - xs[j - 1]);
                    (rho[j - 1] + slope * (x - xs[j - 1]), slope)
                }
            }
        })
    }

    /// ρ_in as a field on the half-line (zero far value).
    pub fn field(&self) -> Result<FnField> {
        self.validate()?;
        self.density(0.0)?;
        let p = self.clone();
        Ok(FnField::new(1, 0.0, move |x| {
            let (v, d) = p.density(x[0]).unwrap_or((0.0, 0.0));
            let mut j = Jet { v, ..Default::default() };
            j.g[0] = d;
            j
        }))
    }

    /// Average of ρ_in over [a, b] (exact for the closed-form profiles).
    pub fn cell_average(&self, a: f64, b: f64) -> Result<f64> {
        Ok(match self {
            InitialProfile::Gaussian { center, width, mass } => {
                let erf = statrs::function::erf::erf;
                let c = mass / Self::gaussian_norm(*center, *width) * 0.5 * width * PI.sqrt();
                c * (erf((b - center) / width) - erf((a - center) / width)) / (b - a)
            }
            InitialProfile::Uniform { lo, hi, mass } => mass / (hi - lo) * ((b.min(*hi) - a.max(*lo)).max(0.0)) / (b - a),
            InitialProfile::Point { .. } => return domain("a point mass has no density"),
            InitialProfile::Tabulated { .. } => {
                // piecewise linear: Simpson on sub-intervals split at the knots
                let InitialProfile::Tabulated { x: xs, .. } = self else { unreachable!() };
                let mut pts = vec![a];
                pts.extend(xs.iter().copied().filter(|&t| t > a && t < b));
                pts.push(b);
                let mut total = 0.0;
                for w in pts.windows(2) {
                    let m = 0.5 * (w[0] + w[1]);
                    let f = |t| self.density(t).map(|d| d.0).unwrap_or(0.0);
                    total += (w[1] - w[0]) * (f(w[0]) + 4.0 * f(m) + f(w[1])) / 6.0;
                }
                total / (b - a)
            }
        })
    }

    /// One draw of a position from ρ_in / mass.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InitialProfile::Gaussian { center, width, .. } => {
                let normal = Normal::new(*center, width / 2f64.sqrt()).expect("positive width");
                loop {
                    let x: f64 = normal.sample(rng);
                    if x >= 0.0 {
                        return x;
                    }
                }
            }
            InitialProfile::Uniform { lo, hi, .. } => lo + (hi - lo) * rng.random::<f64>(),
            InitialProfile::Point { x, .. } => *x,
            InitialProfile::Tabulated { x, rho } => {
                let seg: Vec<f64> = x.windows(2).zip(rho.windows(2)).map(|(a, r)| 0.5 * (a[1] - a[0]) * (r[0] + r[1])).collect();
                let total: f64 = seg.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut j = 0;
                while j + 1 < seg.len() && u > seg[j] {
                    u -= seg[j];
                    j += 1;
                }
                // invert r0 t + (r1 - r0) t^2 / 2 = u / h on t in [0, 1]
                let h = x[j + 1] - x[j];
                let (r0, r1) = (rho[j], rho[j + 1]);
                let q = (u / h).clamp(0.0, 0.5 * (r0 + r1));
                let d = r1 - r0;
                let t = if d.abs() < 1e-14 * (r0 + r1).max(1e-300) {
                    q / r0.max(1e-300)
                } else {
                    (q * 2.0) / (r0 + (r0 * r0 + 2.0 * d * q).max(0.0).sqrt())
                };
                x[j] + h * t.clamp(0.0, 1.0)
            }
        }
    }
}

/// Wall treatment of the particle solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Wall {
    #[default]
    Diffuse,
    /// No wall: the whole space.
    Absent,
    /// Periodic in x_N with the given period (no wall).
    Periodic { length: f64 },
}

/// Uniform histogram cells on [0, x_max] in the normal coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramGrid {
    pub x_max: f64,
    pub cells: usize,
}

impl Default for HistogramGrid {
    fn default() -> Self {
        Self { x_max: 10.0, cells: 100 }
    }
}

impl HistogramGrid {
    pub fn width(&self) -> f64 {
        self.x_max / self.cells as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.cells).map(|i| self.x_max * i as f64 / self.cells as f64).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.x_max * (i as f64 + 0.5) / self.cells as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticConfig {
    pub eps: f64,
    pub spec: EquilibriumSpec,
    pub t_final: f64,
    #[serde(default)]
    pub initial: InitialProfile,
    #[serde(default)]
    pub grid: HistogramGrid,
    #[serde(default)]
    pub wall: Wall,
    /// Switch off the collision clock (free transport checks).
    #[serde(default = "yes")]
    pub collisions: bool,
}

fn yes() -> bool {
    true
}

impl KineticConfig {
    pub fn new(eps: f64, spec: EquilibriumSpec, t_final: f64) -> Result<Self> {
        let c = Self { eps, spec, t_final, initial: InitialProfile::default(), grid: HistogramGrid::default(), wall: Wall::default(), collisions: true };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("Knudsen number {} must be positive", self.eps)));
        }
        if !(self.t_final >= 0.0) {
            return Err(Error::Config(format!("final time {} must be nonnegative", self.t_final)));
        }
        if !(self.grid.x_max > 0.0) || self.grid.cells == 0 {
            return Err(Error::Config(format!("invalid estimator grid {:?}", self.grid)));
        }
        if let Wall::Periodic { length } = self.wall {
            if !(length > 0.0) {
                return Err(Error::Config(format!("period {length} must be positive")));
            }
        }
        self.initial.validate()
    }

    /// Velocity scale ε^{1-2s} of free flight in macroscopic time.
    pub fn speed_factor(&self) -> f64 {
        self.eps.powf(1.0 - 2.0 * self.spec.s)
    }

    /// Collision rate ν0 ε^{-2s} in macroscopic time.
    pub fn collision_rate(&self) -> f64 {
        self.spec.nu0 * self.eps.powf(-2.0 * self.spec.s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub x: V3,
    pub v: V3,
    pub weight: f64,
    pub collisions: u32,
    pub wall_hits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub particles: Vec<Particle>,
    pub seed: u64,
    pub time: f64,
    /// Number of completed `advance_mc` calls; keys the random streams.
    pub epoch: u64,
}

/// Random stream of particle `index` in epoch `epoch`: independent of how
/// particles are split across workers.
fn particle_rng(seed: u64, epoch: u64, index: usize) -> ChaCha8Rng {
    let mut z = seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    rng.set_stream(index as u64);
    rng
}

impl ParticleEnsemble {
    /// `count` particles with positions from ρ_in, velocities from F and equal weights.
    pub fn well_prepared(config: &KineticConfig, count: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if count == 0 {
            return Err(Error::Config("ensemble needs at least one particle".into()));
        }
        let spec = config.spec;
        let chi = chi_for(&spec);
        let w = config.initial.mass() / count as f64;
        let period = match config.wall {
            Wall::Periodic { length } => Some(length),
            _ => None,
        };
        let particles = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = particle_rng(seed, 0, i);
                let mut x = [0.0; 3];
                let xn = config.initial.sample(&mut rng);
                x[spec.dim - 1] = period.map_or(xn, |l| xn.rem_euclid(l));
                Particle { x, v: draw_f(&spec, &chi, &mut rng), weight: w, collisions: 0, wall_hits: 0 }
            })
            .collect();
        Ok(Self { dim: spec.dim, particles, seed, time: 0.0, epoch: 1 })
    }

    pub fn from_particles(dim: usize, particles: Vec<Particle>, seed: u64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("dimension {dim} not in {{1, 2, 3}}")));
        }
        if particles.iter().any(|p| !(p.weight > 0.0) || p.x[dim - 1] < 0.0) {
            return Err(Error::Config("particles need positive weights and x_N >= 0".into()));
        }
        Ok(Self { dim, particles, seed, time: 0.0, epoch: 1 })
    }

    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

/// Diffuse re-emission at a wall point: a draw from α0 F(v)|v·n| on the
/// re-entering side v_N > 0, independent of the incoming velocity.
pub fn reflect_diffuse<R: Rng + ?Sized>(rng: &mut R, sampler: &DiffuseSampler, x: &[f64], dim: usize, v_in: &[f64]) -> Result<V3> {
    if x[dim - 1].abs() > 1e-12 {
        return domain(format!("reflection requested at x_N = {}, away from the wall", x[dim - 1]));
    }
    if v_in[dim - 1] > 0.0 {
        return domain(format!("incoming velocity has v_N = {} > 0", v_in[dim - 1]));
    }
    Ok(sampler.draw(rng))
}

/// Inward unit normal e_N: the support side of re-emitted velocities.
fn inward(dim: usize) -> V3 {
    let mut n = [0.0; 3];
    n[dim - 1] = 1.0;
    n
}

/// Exact event-driven evolution of every particle over a macroscopic time
/// `dt`: straight flights at speed v ε^{1-2s}, exponential collision clocks
/// of rate ν0 ε^{-2s} resampling v from F, diffuse re-emission at the wall.
pub fn advance_mc(ensemble: &mut ParticleEnsemble, config: &KineticConfig, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return domain(format!("time step {dt} must be positive"));
    }
    config.validate()?;
    let spec = config.spec;
    if spec.dim != ensemble.dim {
        return Err(Error::Config(format!("ensemble dimension {} differs from configuration {}", ensemble.dim, spec.dim)));
    }
    let d = spec.dim - 1;
    let a = config.speed_factor();
    let clock = Exp::new(config.collision_rate()).map_err(|e| Error::Config(e.to_string()))?;
    let chi = chi_for(&spec);
    let sampler = DiffuseSampler::new(spec, &inward(spec.dim))?;
    let (seed, epoch) = (ensemble.seed, ensemble.epoch);
    ensemble.particles.par_iter_mut().enumerate().try_for_each(|(i, p)| -> Result<()> {
        let mut rng = particle_rng(seed, epoch, i);
        let mut left = dt;
        loop {
            let tc = if config.collisions { clock.sample(&mut rng) } else { f64::INFINITY };
            let un = a * p.v[d];
            let tw = match config.wall {
                Wall::Diffuse if un < 0.0 => -p.x[d] / un,
                _ => f64::INFINITY,
            };
            if left <= tc.min(tw) {
                for k in 0..spec.dim {
                    p.x[k] += a * p.v[k] * left;
                }
                break;
            }
            let tau = tc.min(tw);
            for k in 0..spec.dim {
                p.x[k] += a * p.v[k] * tau;
            }
            left -= tau;
            if tw <= tc {
                p.x[d] = 0.0;
                p.v = reflect_diffuse(&mut rng, &sampler, &p.x, spec.dim, &p.v)?;
                p.wall_hits += 1;
            } else {
                p.v = draw_f(&spec, &chi, &mut rng);
                p.collisions += 1;
            }
        }
        match config.wall {
            Wall::Periodic { length } => p.x[d] = p.x[d].rem_euclid(length),
            Wall::Diffuse => p.x[d] = p.x[d].max(0.0),
            Wall::Absent => {}
        }
        Ok(())
    })?;
    ensemble.time += dt;
    ensemble.epoch += 1;
    Ok(())
}

/// Histogram estimate of ρ^ε in the normal coordinate with per-cell standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    pub grid: HistogramGrid,
    pub density: Vec<f64>,
    pub stderr: Vec<f64>,
    pub cell_mass: Vec<f64>,
    /// Weight of particles outside [0, x_max).
    pub outside: f64,
    pub total_weight: f64,
    pub time: f64,
}

pub fn estimate_rho(ensemble: &ParticleEnsemble, grid: &HistogramGrid) -> Result<RhoEstimate> {
    if !(grid.x_max > 0.0) || grid.cells == 0 {
        return Err(Error::Config(format!("invalid estimator grid {grid:?}")));
    }
    let d = ensemble.dim - 1;
    let h = grid.width();
    let cell = |x: f64| (x >= 0.0 && x < grid.x_max).then(|| ((x / h) as usize).min(grid.cells - 1));
    let mut mass = vec![0.0; grid.cells];
    let mut count = vec![0usize; grid.cells];
    let mut outside = 0.0;
    for p in &ensemble.particles {
        match cell(p.x[d]) {
            Some(c) => {
                mass[c] += p.weight;
                count[c] += 1;
            }
            None => outside += p.weight,
        }
    }
    // two-pass sample variance of the per-particle contributions w 1_cell
    let n = ensemble.len() as f64;
    let mean: Vec<f64> = mass.iter().map(|m| m / n).collect();
    let mut sq = vec![0.0; grid.cells];
    for p in &ensemble.particles {
        if let Some(c) = cell(p.x[d]) {
            sq[c] += (p.weight - mean[c]).powi(2);
        }
    }
    let stderr = (0..grid.cells)
        .map(|c| {
            let ss = sq[c] + (n - count[c] as f64) * mean[c] * mean[c];
            let var = if n > 1.0 { ss / (n - 1.0) } else { 0.0 };
            (n * var).sqrt() / h
        })
        .collect();
    Ok(RhoEstimate {
        grid: *grid,
        density: mass.iter().map(|m| m / h).collect(),
        stderr,
        cell_mass: mass,
        outside,
        total_weight: ensemble.total_weight(),
        time: ensemble.time,
    })
}

impl RhoEstimate {
    pub fn mass(&self) -> f64 {
        self.cell_mass.iter().sum()
    }

    /// CSV with columns t, x, rho, stderr.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "t,x,rho,stderr")?;
        for ((x, r), e) in self.grid.centers().iter().zip(&self.density).zip(&self.stderr) {
            writeln!(w, "{},{},{},{}", self.time, x, r, e)?;
        }
        Ok(())
    }
}

/// Symmetric graded velocity grid for the discrete-velocity solver:
/// cells [V (j-1)^p/K^p, V j^p/K^p] mirrored to negative v, nodes at the
/// centers in the grading variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    /// Ascending; negatives first, v[nv-1-k] = -v[k].
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    /// Discrete equilibrium, F at the nodes scaled so that Σ M w = 1.
    pub m: Vec<f64>,
    pub v_max: f64,
    /// Mass of F outside [-v_max, v_max].
    pub tail_mass: f64,
    /// Discrete wall constant: α Σ_{v>0} v M w = 1.
    pub alpha: f64,
}

impl VelocityGrid {
    pub fn graded(spec: &EquilibriumSpec, k: usize, v_max: f64, p: f64) -> Result<Self> {
        if spec.dim != 1 {
            return Err(Error::Config(format!("the discrete-velocity solver is one-dimensional, got N = {}", spec.dim)));
        }
        if k < 2 || !(v_max > 0.0) || !(p >= 1.0) {
            return Err(Error::Config(format!("invalid velocity grid K = {k}, V = {v_max}, p = {p}")));
        }
        let edge = |j: f64| v_max * (j / k as f64).powf(p);
        let pos: Vec<(f64, f64)> = (1..=k).map(|j| (edge(j as f64 - 0.5), edge(j as f64) - edge(j as f64 - 1.0))).collect();
        let mut v: Vec<f64> = pos.iter().rev().map(|(x, _)| -x).collect();
        v.extend(pos.iter().map(|(x, _)| *x));
        let mut w: Vec<f64> = pos.iter().rev().map(|(_, h)| *h).collect();
        w.extend(pos.iter().map(|(_, h)| *h));
        let raw: Vec<f64> = v.iter().map(|x| spec.f_radial(x.abs())).collect();
        let z: f64 = raw.iter().zip(&w).map(|(f, h)| f * h).sum();
        let m: Vec<f64> = raw.iter().map(|f| f / z).collect();
        let flux: f64 = v.iter().zip(&m).zip(&w).filter(|((x, _), _)| **x > 0.0).map(|((x, f), h)| x * f * h).sum();
        let tail_mass = beta_reg(spec.s, 0.5, 1.0 / (1.0 + v_max * v_max));
        Ok(Self { v, w, m, v_max, tail_mass, alpha: 1.0 / flux })
    }

    /// Default grid: K cells per sign, p = 2, V = 50 ε^{-(2s-1)/(2s)} capped at 1000.
    pub fn for_eps(spec: &EquilibriumSpec, eps: f64, k: usize) -> Result<Self> {
        let s = spec.s;
        let v_max = (50.0 * eps.powf(-(2.0 * s - 1.0) / (2.0 * s))).min(1e3);
        Self::graded(spec, k, v_max, 2.0)
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Number of velocities of each sign.
    pub fn half(&self) -> usize {
        self.v.len() / 2
    }

    pub fn max_speed(&self) -> f64 {
        self.v[self.v.len() - 1]
    }

    /// Discrete wall law: re-emitted values on v > 0 from the outgoing trace
    /// `out` on v < 0 (aligned with the first half of the grid).
    pub fn reemit(&self, out: &[f64]) -> Vec<f64> {
        let k = self.half();
        let j: f64 = (0..k).map(|i| self.v[i].abs() * out[i] * self.w[i]).sum();
        (k..self.len()).map(|i| self.alpha * self.m[i] * j).collect()
    }
}

/// Darrozès–Guiraud balance of the discrete wall law for an outgoing trace
/// g on v < 0: Σ |v| g^2/M w - Σ_{v>0} |v| B[g]^2/M w.
pub fn darrozes_guiraud_residual(grid: &VelocityGrid, outgoing: &[f64]) -> Result<f64> {
    let k = grid.half();
    if outgoing.len() != k {
        return domain(format!("trace has {} values, expected {k}", outgoing.len()));
    }
    let out: f64 = (0..k).map(|i| grid.v[i].abs() * outgoing[i] * outgoing[i] / grid.m[i] * grid.w[i]).sum();
    let back = grid.reemit(outgoing);
    let inn: f64 = (k..grid.len()).zip(&back).map(|(i, b)| grid.v[i] * b * b / grid.m[i] * grid.w[i]).sum();
    Ok(out - inn)
}

/// Treatment of the far end x = X_max of the discrete-velocity box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FarBoundary {
    /// Nothing enters; outflow is recorded as leakage.
    Vacuum,
    /// Mirror: f(X, -v) = f(X, v).
    #[default]
    Specular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Relaxation {
    /// Explicit Euler unless ν0 dt > ε^{2s}, then the exponential integrator.
    #[default]
    Auto,
    Explicit,
    Exponential,
}

/// Discrete-velocity state (N = 1): cell averages on a uniform grid of
/// [0, x_max], stored velocity-major (f[k * nx + i]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvmState {
    pub grid: VelocityGrid,
    pub x_max: f64,
    pub nx: usize,
    pub f: Vec<f64>,
    pub time: f64,
    pub far: FarBoundary,
    pub relaxation: Relaxation,
    /// Mass lost through the far boundary so far.
    pub leaked: f64,
}

/// Bookkeeping of one `advance_dvm` step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvmStep {
    pub energy_before: f64,
    pub energy_after: f64,
    /// ε^{-2s} ∫ ‖f - ρM‖^2 over the step.
    pub dissipation: f64,
    /// Darrozès–Guiraud residual of the wall trace used in the step.
    pub wall_residual: f64,
    pub leaked: f64,
    /// Equilibrium mass the relaxation would have placed beyond ±v_max.
    pub tail: f64,
}

impl DvmState {
    pub fn new(grid: VelocityGrid, x_max: f64, nx: usize, f: impl Fn(f64, f64, usize) -> f64) -> Result<Self> {
        if !(x_max > 0.0) || nx < 2 {
            return Err(Error::Config(format!("invalid space grid x_max = {x_max}, nx = {nx}")));
        }
        let dx = x_max / nx as f64;
        let nv = grid.len();
        let mut vals = vec![0.0; nv * nx];
        for k in 0..nv {
            for i in 0..nx {
                let v = f((i as f64 + 0.5) * dx, grid.v[k], k);
                if !(v >= 0.0 && v.is_finite()) {
                    return domain(format!("initial value {v} at cell {i}, velocity {k} must be finite and nonnegative"));
                }
                vals[k * nx + i] = v;
            }
        }
        Ok(Self { grid, x_max, nx, f: vals, time: 0.0, far: FarBoundary::default(), relaxation: Relaxation::default(), leaked: 0.0 })
    }

    /// Well-prepared datum: cell averages of ρ_in times the discrete equilibrium.
    pub fn well_prepared(config: &KineticConfig, grid: VelocityGrid, x_max: f64, nx: usize) -> Result<Self> {
        config.validate()?;
        let dx = x_max / nx as f64;
        let rho: Vec<f64> = (0..nx).map(|i| config.initial.cell_average(i as f64 * dx, (i + 1) as f64 * dx)).collect::<Result<_>>()?;
        let m = grid.m.clone();
        Self::new(grid, x_max, nx, |x, _, k| rho[((x / dx) as usize).min(nx - 1)] * m[k])
    }

    pub fn dx(&self) -> f64 {
        self.x_max / self.nx as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.nx).map(|i| (i as f64 + 0.5) * dx).collect()
    }

    pub fn rho(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.nx];
        for (k, row) in self.f.chunks(self.nx).enumerate() {
            for (ri, fi) in r.iter_mut().zip(row) {
                *ri += fi * self.grid.w[k];
            }
        }
        r
    }

    pub fn mass(&self) -> f64 {
        self.rho().iter().sum::<f64>() * self.dx()
    }

    pub fn min_value(&self) -> f64 {
        self.f.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest stable step dt = Δx / (ε^{1-2s} max|v|).
    pub fn max_dt(&self, config: &KineticConfig) -> f64 {
        self.dx() / (config.speed_factor() * self.grid.max_speed())
    }

    /// Outgoing wall trace: cell-0 values on v < 0.
    pub fn wall_trace(&self) -> Vec<f64> {
        (0..self.grid.half()).map(|k| self.f[k * self.nx]).collect()
    }

    /// Σ_i Σ_k (f - ρ_i M_k)^2 / M_k w_k Δx.
    fn deviation(&self) -> f64 {
        let rho = self.rho();
        let dx = self.dx();
        self.f
            .par_chunks(self.nx)
            .enumerate()
            .map(|(k, row)| {
                let mk = self.grid.m[k];
                row.iter().zip(&rho).map(|(f, r)| (f - r * mk).powi(2)).sum::<f64>() * self.grid.w[k] / mk * dx
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum()
    }
}

/// (‖f‖^2 in L^2_{1/M}, ε^{-2s} ‖f - ρM‖^2): weighted norm and instantaneous
/// collision dissipation rate.
pub fn energy_functional(state: &DvmState, config: &KineticConfig) -> (f64, f64) {
    let dx = state.dx();
    // collected before summing so the result does not depend on the worker count
    let rows: Vec<f64> = state
        .f
        .par_chunks(state.nx)
        .enumerate()
        .map(|(k, row)| row.iter().map(|f| f * f).sum::<f64>() * state.grid.w[k] / state.grid.m[k] * dx)
        .collect();
    let norm: f64 = rows.iter().sum();
    (norm, state.deviation() * config.eps.powf(-2.0 * config.spec.s))
}

/// One step of first-order upwind transport followed by relaxation.
pub fn advance_dvm(state: &mut DvmState, config: &KineticConfig, dt: f64) -> Result<DvmStep> {
    if config.spec.dim != 1 {
        return Err(Error::Config("the discrete-velocity solver is one-dimensional".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return domain(format!("time step {dt} must be positive"));
    }
    let limit = state.max_dt(config);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl(format!("dt = {dt:e} exceeds Δx/(ε^{{1-2s}} max|v|) = {limit:e}")));
    }
    let (energy_before, _) = energy_functional(state, config);
    let nx = state.nx;
    let nv = state.grid.len();
    let half = state.grid.half();
    let a = config.speed_factor();
    let dx = state.dx();
    let trace = state.wall_trace();
    let wall_residual = darrozes_guiraud_residual(&state.grid, &trace)?;
    let wall_in = state.grid.reemit(&trace);
    let far_in: Vec<f64> = match state.far {
        FarBoundary::Vacuum => vec![0.0; half],
        // inflow at v_k < 0 mirrors the outgoing value at -v_k
        FarBoundary::Specular => (0..half).map(|k| state.f[(nv - 1 - k) * nx + nx - 1]).collect(),
    };
    let leaked = match state.far {
        FarBoundary::Vacuum => (half..nv).map(|k| dt * a * state.grid.v[k] * state.f[k * nx + nx - 1] * state.grid.w[k]).sum(),
        FarBoundary::Specular => 0.0,
    };
    let v = &state.grid.v;
    state.f.par_chunks_mut(nx).enumerate().for_each(|(k, row)| {
        let c = dt * a * v[k].abs() / dx;
        if v[k] > 0.0 {
            for i in (1..nx).rev() {
                row[i] -= c * (row[i] - row[i - 1]);
            }
            row[0] -= c * (row[0] - wall_in[k - half]);
        } else {
            for i in 0..nx - 1 {
                row[i] -= c * (row[i] - row[i + 1]);
            }
            row[nx - 1] -= c * (row[nx - 1] - far_in[k]);
        }
    });
    state.leaked += leaked;

    let rate = config.collision_rate();
    let x = rate * dt;
    let exponential = match state.relaxation {
        Relaxation::Explicit => false,
        Relaxation::Exponential => true,
        Relaxation::Auto => x > 1.0,
    };
    if !exponential && x > 1.0 {
        return Err(Error::Cfl(format!("explicit relaxation needs ν0 dt ε^{{-2s}} <= 1, got {x}")));
    }
    let dev = state.deviation();
    let scale = config.eps.powf(-2.0 * config.spec.s);
    let (theta, dissipation) = if exponential {
        ((-x).exp(), scale * dev * (-(-2.0 * x).exp_m1()) / (2.0 * rate))
    } else {
        (1.0 - x, scale * dev * dt)
    };
    let rho = state.rho();
    let mass: f64 = rho.iter().sum::<f64>() * dx;
    let m = &state.grid.m;
    state.f.par_chunks_mut(nx).enumerate().for_each(|(k, row)| {
        for (f, r) in row.iter_mut().zip(&rho) {
            let eq = r * m[k];
            *f = eq + (*f - eq) * theta;
        }
    });
    state.time += dt;
    let (energy_after, _) = energy_functional(state, config);
    Ok(DvmStep { energy_before, energy_after, dissipation, wall_residual, leaked, tail: mass * (1.0 - theta) * state.grid.tail_mass })
}

/// Record of a discrete-velocity run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvmRun {
    pub steps: Vec<DvmStep>,
    pub initial_energy: f64,
    pub initial_mass: f64,
    pub dt: f64,
}

impl DvmRun {
    pub fn cumulative_dissipation(&self) -> f64 {
        self.steps.iter().map(|s| s.dissipation).sum()
    }

    /// Largest violation of E^{n+1} + D^n <= E^n, relative to the initial energy.
    pub fn worst_step_violation(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| (s.energy_after + s.dissipation - s.energy_before) / self.initial_energy.max(1e-300))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_wall_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.wall_residual).fold(f64::INFINITY, f64::min)
    }

    pub fn tail_budget(&self) -> f64 {
        self.steps.iter().map(|s| s.tail).sum()
    }

    pub fn leaked(&self) -> f64 {
        self.steps.iter().map(|s| s.leaked).sum()
    }
}

/// Advance to `t_final` with the uniform step `cfl · max_dt` adjusted to land on `t_final`.
pub fn run_dvm(state: &mut DvmState, config: &KineticConfig, t_final: f64, cfl: f64) -> Result<DvmRun> {
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(Error::Config(format!("CFL number {cfl} must lie in (0, 1]")));
    }
    let (initial_energy, _) = energy_functional(state, config);
    let initial_mass = state.mass();
    let span = t_final - state.time;
    let mut steps = Vec::new();
    if span <= 0.0 {
        return Ok(DvmRun { steps, initial_energy, initial_mass, dt: 0.0 });
    }
    let n = (span / (cfl * state.max_dt(config))).ceil().max(1.0) as usize;
    let dt = span / n as f64;
    for _ in 0..n {
        steps.push(advance_dvm(state, config, dt)?);
    }
    Ok(DvmRun { steps, initial_energy, initial_mass, dt })
}
