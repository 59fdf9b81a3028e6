//! Galerkin discretization of the form a(φ, ψ) = (φ, ψ) + ∫ D^{2s-1}[φ]·∇ψ
//! on the half-line, stationary and implicit-Euler solves, and the
//! Dirichlet-form, integration-by-parts and Hardy diagnostics.
//!
//! The discrete space lives on [0, x_max]: P1 hats or cubic Hermite elements
//! whose last node continues as a constant beyond x_max, so constants belong
//! to the space. The nonlocal matrix is
//! B_ij = c_D ∬ χ_i'(x) χ_j'(y) |x-y|^{1-2s} dx dy over [0, x_max]^2,
//! computed element pair by element pair with Duffy-type splittings for
//! identical and touching elements. The mass matrix is taken over [0, x_max].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{FarField, Field, GradedMesh, ScalarField};
use crate::operators::{apply_d, apply_l, boundary_flux, mean_of, taylor_switch, DForm, LForm, OperatorParams};
use crate::quad::{adaptive, adaptive_vec, adaptive_with_breaks, endpoint_power, gauss_legendre, semi_infinite, unit_power_rule, Estimate, Rule, Tol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    #[default]
    P1,
    P3Hermite,
}

/// Finite element space on the normal mesh.
#[derive(Debug, Clone)]
pub struct Space {
    pub mesh: GradedMesh,
    pub basis: Basis,
}

type Local = [f64; 4];

impl Space {
    pub fn new(mesh: GradedMesh, basis: Basis) -> Result<Self> {
        if mesh.dim() != 1 {
            return Err(Error::Config("Galerkin assembly is implemented for N = 1".into()));
        }
        Ok(Self { mesh, basis })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.mesh.normal
    }

    pub fn elements(&self) -> usize {
        self.mesh.normal.len() - 1
    }

    pub fn ndof(&self) -> usize {
        match self.basis {
            Basis::P1 => self.mesh.normal.len(),
            Basis::P3Hermite => 2 * self.mesh.normal.len(),
        }
    }

    fn local_count(&self) -> usize {
        match self.basis {
            Basis::P1 => 2,
            Basis::P3Hermite => 4,
        }
    }

    /// Global indices of the local shape functions of element e.
    fn dofs(&self, e: usize) -> [usize; 4] {
        match self.basis {
            Basis::P1 => [e, e + 1, 0, 0],
            Basis::P3Hermite => [2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3],
        }
    }

    fn element(&self, e: usize) -> (f64, f64) {
        (self.mesh.normal[e], self.mesh.normal[e + 1])
    }

    /// Values and x-derivatives of the local shape functions at x in element e.
    fn shapes(&self, e: usize, x: f64) -> (Local, Local) {
        let (a, b) = self.element(e);
        let h = b - a;
        let u = (x - a) / h;
        match self.basis {
            Basis::P1 => ([1.0 - u, u, 0.0, 0.0], [-1.0 / h, 1.0 / h, 0.0, 0.0]),
            Basis::P3Hermite => {
                let (u2, u3) = (u * u, u * u * u);
                (
                    [2.0 * u3 - 3.0 * u2 + 1.0, h * (u3 - 2.0 * u2 + u), -2.0 * u3 + 3.0 * u2, h * (u3 - u2)],
                    [(6.0 * u2 - 6.0 * u) / h, 3.0 * u2 - 4.0 * u + 1.0, (6.0 * u - 6.0 * u2) / h, 3.0 * u2 - 2.0 * u],
                )
            }
        }
    }

    /// Coefficients of the constant function c.
    pub fn constant(&self, c: f64) -> DVector<f64> {
        match self.basis {
            Basis::P1 => DVector::from_element(self.ndof(), c),
            Basis::P3Hermite => DVector::from_fn(self.ndof(), |i, _| if i % 2 == 0 { c } else { 0.0 }),
        }
    }

    /// Nodal interpolant of a one-dimensional field.
    pub fn interpolate<F: Field + ?Sized>(&self, f: &F) -> Result<DVector<f64>> {
        if f.dim() != 1 {
            return Err(Error::Config("interpolation needs a one-dimensional field".into()));
        }
        let xs = self.nodes();
        Ok(match self.basis {
            Basis::P1 => DVector::from_iterator(xs.len(), xs.iter().map(|&x| f.value(&[x]))),
            Basis::P3Hermite => DVector::from_iterator(
                self.ndof(),
                xs.iter().flat_map(|&x| {
                    let j = f.jet(&[x]);
                    [j.v, j.g[0]]
                }),
            ),
        })
    }

    /// Nodal values of a coefficient vector.
    pub fn node_values(&self, c: &DVector<f64>) -> Vec<f64> {
        match self.basis {
            Basis::P1 => c.iter().copied().collect(),
            Basis::P3Hermite => c.iter().step_by(2).copied().collect(),
        }
    }

    /// The discrete function as a field, constant beyond x_max.
    pub fn to_field(&self, c: &DVector<f64>) -> Result<ScalarField> {
        if c.len() != self.ndof() {
            return Err(Error::Config(format!("{} coefficients for {} degrees of freedom", c.len(), self.ndof())));
        }
        let values = self.node_values(c);
        let far = FarField::Constant(*values.last().unwrap());
        match self.basis {
            Basis::P1 => ScalarField::new(self.mesh.clone(), values, crate::geometry::Interp::Linear, far),
            Basis::P3Hermite => {
                let slopes = c.iter().skip(1).step_by(2).copied().collect();
                ScalarField::hermite(self.mesh.clone(), values, slopes, far)
            }
        }
    }
}

/// Assembled Galerkin system: A = M + B.
#[derive(Debug, Clone)]
pub struct StiffnessSystem {
    pub space: Space,
    pub params: OperatorParams,
    pub mass: DMatrix<f64>,
    pub nonlocal: DMatrix<f64>,
    pub a: DMatrix<f64>,
    /// Relative error target for element-pair integrals.
    pub assembly_tol: f64,
    /// Largest estimated absolute error of an entry of B.
    pub assembly_error: f64,
}

pub const DEFAULT_ASSEMBLY_TOL: f64 = 1e-10;

struct PairRules {
    beta: f64,
    duffy_x: [Rule; 2],
    duffy_t: [Rule; 2],
    touch_t: [Rule; 2],
    far: [Rule; 2],
}

impl PairRules {
    fn new(s: f64) -> Self {
        let beta = 1.0 - 2.0 * s;
        Self {
            beta,
            duffy_x: [unit_power_rule(5, 1.0 + beta), unit_power_rule(4, 1.0 + beta)],
            duffy_t: [unit_power_rule(5, beta), unit_power_rule(4, beta)],
            touch_t: [gauss_legendre(16), gauss_legendre(10)],
            far: [gauss_legendre(10), gauss_legendre(7)],
        }
    }
}

/// High- and low-order accumulators for one element pair.
struct PairAcc<'a> {
    space: &'a Space,
    e: usize,
    f: usize,
    n: usize,
    out: [[[f64; 4]; 4]; 2],
}

impl PairAcc<'_> {
    fn add(&mut self, k: usize, x: f64, y: f64, w: f64) {
        let (_, dx) = self.space.shapes(self.e, x);
        let (_, dy) = self.space.shapes(self.f, y);
        for a in 0..self.n {
            let wa = w * dx[a];
            for b in 0..self.n {
                self.out[k][a][b] += wa * dy[b];
            }
        }
    }
}

impl PairRules {
    fn identical(&self, acc: &mut PairAcc, a: f64, h: f64) {
        let scale = h.powf(2.0 + self.beta);
        for k in 0..2 {
            let (rx, rt) = (&self.duffy_x[k], &self.duffy_t[k]);
            for (&xi, &wx) in rx.nodes.iter().zip(&rx.weights) {
                for (&t, &wt) in rt.nodes.iter().zip(&rt.weights) {
                    let x = a + h * xi;
                    let y = a + h * xi * (1.0 - t);
                    let w = scale * wx * wt;
                    acc.add(k, x, y, w);
                    acc.add(k, y, x, w);
                }
            }
        }
    }

    /// Intervals [b - hi, b] (x side) and [b, b + hj] (y side) touching at b,
    /// with either orientation of the element pair.
    fn touching(&self, acc: &mut PairAcc, b: f64, hi: f64, hj: f64, x_left: bool) {
        let beta = self.beta;
        let map = |p: f64, q: f64| if x_left { (b - hi * p, b + hj * q) } else { (b + hj * q, b - hi * p) };
        for k in 0..2 {
            let (rp, rt) = (&self.duffy_x[k], &self.touch_t[k]);
            for (&p, &wp) in rp.nodes.iter().zip(&rp.weights) {
                for (&tn, &wt) in rt.nodes.iter().zip(&rt.weights) {
                    let t = 0.5 * (tn + 1.0);
                    let wt = 0.5 * wt;
                    let w1 = hi * hj * wp * wt * (hi + hj * t).powf(beta);
                    let (x, y) = map(p, p * t);
                    acc.add(k, x, y, w1);
                    let w2 = hi * hj * wp * wt * (hi * t + hj).powf(beta);
                    let (x, y) = map(p * t, p);
                    acc.add(k, x, y, w2);
                }
            }
        }
    }

    fn separated(&self, acc: &mut PairAcc, i: (f64, f64), j: (f64, f64)) {
        let (li, lj) = (i.1 - i.0, j.1 - j.0);
        let gap = if i.1 <= j.0 { j.0 - i.1 } else { i.0 - j.1 };
        if gap < 1.5 * li.max(lj) {
            if li >= lj {
                let m = 0.5 * (i.0 + i.1);
                self.separated(acc, (i.0, m), j);
                self.separated(acc, (m, i.1), j);
            } else {
                let m = 0.5 * (j.0 + j.1);
                self.separated(acc, i, (j.0, m));
                self.separated(acc, i, (m, j.1));
            }
            return;
        }
        let (ci, hi) = (0.5 * (i.0 + i.1), 0.5 * li);
        let (cj, hj) = (0.5 * (j.0 + j.1), 0.5 * lj);
        for k in 0..2 {
            let r = &self.far[k];
            for (&u, &wu) in r.nodes.iter().zip(&r.weights) {
                let x = ci + hi * u;
                for (&v, &wv) in r.nodes.iter().zip(&r.weights) {
                    let y = cj + hj * v;
                    acc.add(k, x, y, hi * hj * wu * wv * (x - y).abs().powf(self.beta));
                }
            }
        }
    }

    /// x-interval i and y-interval j sharing the endpoint where i meets j.
    fn adjacent(&self, acc: &mut PairAcc, i: (f64, f64), j: (f64, f64)) {
        let x_left = i.1 <= j.0;
        let (li, lj) = (i.1 - i.0, j.1 - j.0);
        if lj > 2.0 * li {
            let m = 0.5 * (j.0 + j.1);
            if x_left {
                self.adjacent(acc, i, (j.0, m));
                self.separated(acc, i, (m, j.1));
            } else {
                self.separated(acc, i, (j.0, m));
                self.adjacent(acc, i, (m, j.1));
            }
            return;
        }
        if li > 2.0 * lj {
            let m = 0.5 * (i.0 + i.1);
            if x_left {
                self.separated(acc, (i.0, m), j);
                self.adjacent(acc, (m, i.1), j);
            } else {
                self.adjacent(acc, (i.0, m), j);
                self.separated(acc, (m, i.1), j);
            }
            return;
        }
        if x_left {
            self.touching(acc, i.1, li, lj, true);
        } else {
            // the x interval lies to the right: swap roles in the map
            self.touching(acc, i.0, lj, li, false);
        }
    }
}

/// Assembles the mass, nonlocal and full matrices on a one-dimensional mesh.
pub fn assemble(mesh: &GradedMesh, params: &OperatorParams, basis: Basis) -> Result<StiffnessSystem> {
    assemble_with_tol(mesh, params, basis, DEFAULT_ASSEMBLY_TOL)
}

pub fn assemble_with_tol(mesh: &GradedMesh, params: &OperatorParams, basis: Basis, tol: f64) -> Result<StiffnessSystem> {
    params.validate()?;
    if params.spec.dim != 1 {
        return Err(Error::Config("Galerkin assembly is implemented for N = 1".into()));
    }
    let space = Space::new(mesh.clone(), basis)?;
    let ne = space.elements();
    let n = space.ndof();
    let nl = space.local_count();
    let rules = PairRules::new(params.spec.s);

    let rows: Vec<Vec<(usize, [[f64; 4]; 4], f64)>> = (0..ne)
        .into_par_iter()
        .map(|e| {
            (e..ne)
                .map(|f| {
                    let mut acc = PairAcc { space: &space, e, f, n: nl, out: [[[0.0; 4]; 4]; 2] };
                    let ie = space.element(e);
                    let jf = space.element(f);
                    if e == f {
                        rules.identical(&mut acc, ie.0, ie.1 - ie.0);
                    } else if f == e + 1 {
                        rules.adjacent(&mut acc, ie, jf);
                    } else {
                        rules.separated(&mut acc, ie, jf);
                    }
                    let mut err: f64 = 0.0;
                    for a in 0..nl {
                        for b in 0..nl {
                            err = err.max((acc.out[0][a][b] - acc.out[1][a][b]).abs());
                        }
                    }
                    (f, acc.out[0], err)
                })
                .collect()
        })
        .collect();

    let c = params.c_d();
    let mut b = DMatrix::<f64>::zeros(n, n);
    let mut max_err: f64 = 0.0;
    for (e, row) in rows.iter().enumerate() {
        let de = space.dofs(e);
        for (f, loc, err) in row {
            let df = space.dofs(*f);
            max_err = max_err.max(c * err);
            for p in 0..nl {
                for q in 0..nl {
                    let v = c * loc[p][q];
                    b[(de[p], df[q])] += v;
                    if e != *f {
                        b[(df[q], de[p])] += v;
                    }
                }
            }
        }
    }
    let b = 0.5 * (&b + b.transpose());
    let scale = b.amax();
    if !(max_err <= tol * scale) {
        return Err(Error::Assembly(format!(
            "element-pair error estimate {max_err:e} exceeds {tol:e} relative to max|B| = {scale:e}"
        )));
    }

    let gl = gauss_legendre(4);
    let mut m = DMatrix::<f64>::zeros(n, n);
    for e in 0..ne {
        let (x0, x1) = space.element(e);
        let (cx, hx) = (0.5 * (x0 + x1), 0.5 * (x1 - x0));
        let de = space.dofs(e);
        for (&u, &w) in gl.nodes.iter().zip(&gl.weights) {
            let (v, _) = space.shapes(e, cx + hx * u);
            for p in 0..nl {
                for q in 0..nl {
                    m[(de[p], de[q])] += w * hx * v[p] * v[q];
                }
            }
        }
    }
    let m = 0.5 * (&m + m.transpose());
    let a = &m + &b;
    Ok(StiffnessSystem { space, params: *params, mass: m, nonlocal: b, a, assembly_tol: tol, assembly_error: max_err })
}

impl StiffnessSystem {
    pub fn ndof(&self) -> usize {
        self.space.ndof()
    }

    /// a(φ, ψ) for coefficient vectors.
    pub fn form(&self, phi: &DVector<f64>, psi: &DVector<f64>) -> f64 {
        phi.dot(&(&self.a * psi))
    }

    /// ∫_0^{x_max} ρ.
    pub fn mass_of(&self, rho: &DVector<f64>) -> f64 {
        self.space.constant(1.0).dot(&(&self.mass * rho))
    }

    /// L² norm on [0, x_max].
    pub fn l2_norm(&self, rho: &DVector<f64>) -> f64 {
        rho.dot(&(&self.mass * rho)).max(0.0).sqrt()
    }

    /// max|A - A^T| / max|A|.
    pub fn asymmetry(&self) -> f64 {
        (&self.a - self.a.transpose()).amax() / self.a.amax()
    }

    /// Default time step 1e-2 (x_max/M)^{2s}.
    pub fn default_dt(&self) -> f64 {
        let spec = &self.space.mesh.spec;
        1e-2 * (spec.x_max / spec.m as f64).powf(2.0 * self.params.spec.s)
    }

    /// Writes A, M or B in MatrixMarket coordinate symmetric format.
    pub fn write_matrix_market(&self, which: MatrixKind, path: &Path) -> Result<()> {
        let mat = match which {
            MatrixKind::Full => &self.a,
            MatrixKind::Mass => &self.mass,
            MatrixKind::Nonlocal => &self.nonlocal,
        };
        write_matrix_market(mat, path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Full,
    Mass,
    Nonlocal,
}

/// Lower triangle of a symmetric matrix in MatrixMarket coordinate format.
pub fn write_matrix_market(mat: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = mat.nrows();
    let entries: Vec<(usize, usize, f64)> =
        (0..n).flat_map(|j| (j..n).map(move |i| (i, j))).map(|(i, j)| (i, j, mat[(i, j)])).filter(|e| e.2 != 0.0).collect();
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(w, "{n} {n} {}", entries.len())?;
    for (i, j, v) in entries {
        writeln!(w, "{} {} {v:.17e}", i + 1, j + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a real MatrixMarket coordinate file (general or symmetric).
pub fn read_matrix_market(path: &Path) -> Result<DMatrix<f64>> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty MatrixMarket file".into()))??;
    let h = header.to_lowercase();
    if !h.starts_with("%%matrixmarket matrix coordinate real") {
        return Err(Error::Parse(format!("unsupported MatrixMarket header {header:?}")));
    }
    let symmetric = h.contains("symmetric");
    let mut mat: Option<DMatrix<f64>> = None;
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let num = |k: usize| -> Result<&str> { parts.get(k).copied().ok_or_else(|| Error::Parse(format!("short line {t:?}"))) };
        match mat.as_mut() {
            None => {
                let r: usize = num(0)?.parse().map_err(|e| Error::Parse(format!("{e}")))?;
                let c: usize = num(1)?.parse().map_err(|e| Error::Parse(format!("{e}")))?;
                mat = Some(DMatrix::zeros(r, c));
            }
            Some(m) => {
                let i: usize = num(0)?.parse().map_err(|e| Error::Parse(format!("{e}")))?;
                let j: usize = num(1)?.parse().map_err(|e| Error::Parse(format!("{e}")))?;
                let v: f64 = num(2)?.parse().map_err(|e| Error::Parse(format!("{e}")))?;
                if i == 0 || j == 0 || i > m.nrows() || j > m.ncols() {
                    return Err(Error::Parse(format!("entry ({i}, {j}) out of range")));
                }
                m[(i - 1, j - 1)] = v;
                if symmetric {
                    m[(j - 1, i - 1)] = v;
                }
            }
        }
    }
    mat.ok_or_else(|| Error::Parse("missing MatrixMarket size line".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Dense Cholesky up to `dense_limit` nodes, conjugate gradients above.
    #[default]
    Auto,
    Cg,
    Dense,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverOptions {
    #[serde(default)]
    pub kind: SolverKind,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_dense_limit")]
    pub dense_limit: usize,
}

fn default_rel_tol() -> f64 {
    1e-12
}
fn default_max_iter() -> usize {
    20_000
}
fn default_dense_limit() -> usize {
    512
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { kind: SolverKind::Auto, rel_tol: default_rel_tol(), max_iter: default_max_iter(), dense_limit: default_dense_limit() }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub dense: bool,
}

fn relative_residual(a: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let nb = b.norm();
    let r = (a * x - b).norm();
    if nb == 0.0 {
        r
    } else {
        r / nb
    }
}

/// Jacobi-preconditioned conjugate gradients.
pub fn conjugate_gradient(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64, max_iter: usize) -> Result<(DVector<f64>, usize)> {
    let n = b.len();
    let diag = a.diagonal();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Solver("non-positive diagonal entry; the matrix is not positive definite".into()));
    }
    let mut x = DVector::zeros(n);
    let nb = b.norm();
    if nb == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.clone();
    let mut z = r.component_div(&diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 1..=max_iter {
        let ap = a * &p;
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::Solver(format!("p·Ap = {pap:e} at iteration {it}; the matrix is not positive definite")));
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        if r.norm() <= rel_tol * nb {
            return Ok((x, it));
        }
        z = r.component_div(&diag);
        let rz_new = r.dot(&z);
        p = &z + (rz_new / rz) * &p;
        rz = rz_new;
    }
    Err(Error::Solver(format!("conjugate gradients did not reach {rel_tol:e} in {max_iter} iterations")))
}

/// Solves a symmetric positive definite system and checks the residual.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, nodes: usize, opts: &SolverOptions) -> Result<(DVector<f64>, SolveStats)> {
    let dense = match opts.kind {
        SolverKind::Dense => true,
        SolverKind::Cg => false,
        SolverKind::Auto => nodes <= opts.dense_limit,
    };
    let (x, iterations) = if dense {
        let ch = a.clone().cholesky().ok_or_else(|| Error::Solver("Cholesky factorization failed; the matrix is not positive definite".into()))?;
        (ch.solve(b), 0)
    } else {
        conjugate_gradient(a, b, opts.rel_tol, opts.max_iter)?
    };
    let residual = relative_residual(a, &x, b);
    if !(residual < 1e-10) {
        return Err(Error::Solver(format!("relative residual {residual:e} exceeds 1e-10")));
    }
    Ok((x, SolveStats { iterations, residual, dense }))
}

#[derive(Debug, Clone)]
pub struct Stationary {
    pub coeffs: DVector<f64>,
    pub field: ScalarField,
    pub stats: SolveStats,
}

/// Solves A φ = M g for the nodal interpolant g of the data.
pub fn solve_stationary<F: Field + ?Sized>(system: &StiffnessSystem, g: &F, opts: &SolverOptions) -> Result<Stationary> {
    let gi = system.space.interpolate(g)?;
    solve_stationary_coeffs(system, &gi, opts)
}

pub fn solve_stationary_coeffs(system: &StiffnessSystem, g: &DVector<f64>, opts: &SolverOptions) -> Result<Stationary> {
    let rhs = &system.mass * g;
    let (coeffs, stats) = solve_spd(&system.a, &rhs, system.space.nodes().len(), opts)?;
    let field = system.space.to_field(&coeffs)?;
    Ok(Stationary { coeffs, field, stats })
}

/// ½ a(φ, φ) - (g, φ), minimized by the stationary solution.
pub fn stationary_energy(system: &StiffnessSystem, phi: &DVector<f64>, g: &DVector<f64>) -> f64 {
    0.5 * system.form(phi, phi) - phi.dot(&(&system.mass * g))
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return domain(format!("time step {dt} must be positive"));
    }
    Ok(())
}

/// One implicit Euler step (M + dt B) ρ^{n+1} = M ρ^n.
pub fn step_evolution(system: &StiffnessSystem, rho: &DVector<f64>, dt: f64, opts: &SolverOptions) -> Result<DVector<f64>> {
    check_dt(dt)?;
    let lhs = &system.mass + dt * &system.nonlocal;
    let rhs = &system.mass * rho;
    Ok(solve_spd(&lhs, &rhs, system.space.nodes().len(), opts)?.0)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub masses: Vec<f64>,
    pub l2_norms: Vec<f64>,
}

impl Trajectory {
    /// max_n |mass_n - mass_0| / |mass_0|.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.masses[0];
        self.masses.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max) / m0.abs().max(f64::MIN_POSITIVE)
    }

    /// Largest increase of the L² norm between consecutive steps.
    pub fn max_norm_increase(&self) -> f64 {
        self.l2_norms.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with columns t, then the nodal values.
    pub fn write_csv(&self, space: &Space, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
        let io = |e: csv::Error| Error::Parse(e.to_string());
        let mut header = vec!["t".to_string()];
        header.extend(space.nodes().iter().map(|x| format!("x={x:.6e}")));
        w.write_record(&header).map_err(io)?;
        for (t, c) in self.times.iter().zip(&self.states) {
            let mut rec = vec![format!("{t:.17e}")];
            rec.extend(space.node_values(c).iter().map(|v| format!("{v:.17e}")));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Implicit Euler from ρ_in to t_final. The step is shortened so that an
/// integer number of steps lands on t_final; the matrix is factored once.
pub fn solve_evolution(
    system: &StiffnessSystem,
    rho_in: &DVector<f64>,
    t_final: f64,
    dt: f64,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    check_dt(dt)?;
    if !(t_final >= 0.0) {
        return domain(format!("final time {t_final} must be nonnegative"));
    }
    let steps = ((t_final / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![rho_in.clone()],
        masses: vec![system.mass_of(rho_in)],
        l2_norms: vec![system.l2_norm(rho_in)],
    };
    if steps == 0 {
        return Ok(traj);
    }
    let h = t_final / steps as f64;
    let lhs = &system.mass + h * &system.nonlocal;
    let nodes = system.space.nodes().len();
    let dense = match opts.kind {
        SolverKind::Dense => true,
        SolverKind::Cg => false,
        SolverKind::Auto => nodes <= opts.dense_limit,
    };
    let factor = if dense {
        Some(lhs.clone().cholesky().ok_or_else(|| Error::Solver("M + dt B is not positive definite".into()))?)
    } else {
        None
    };
    let mut rho = rho_in.clone();
    for n in 1..=steps {
        let rhs = &system.mass * &rho;
        rho = match &factor {
            Some(ch) => {
                let x = ch.solve(&rhs);
                let res = relative_residual(&lhs, &x, &rhs);
                if !(res < 1e-10) {
                    return Err(Error::Solver(format!("step {n}: relative residual {res:e}")));
                }
                x
            }
            None => conjugate_gradient(&lhs, &rhs, opts.rel_tol, opts.max_iter)?.0,
        };
        traj.times.push(n as f64 * h);
        traj.masses.push(system.mass_of(&rho));
        traj.l2_norms.push(system.l2_norm(&rho));
        traj.states.push(rho.clone());
    }
    Ok(traj)
}

fn check_line<F: Field + ?Sized>(f: &F) -> Result<()> {
    if f.dim() != 1 {
        return Err(Error::Config("the variational diagnostics are implemented for N = 1".into()));
    }
    Ok(())
}

const FREE_EXTENT: f64 = 20.0;

/// Integration breakpoints and the end of the non-constant region.
fn layout<F: Field + ?Sized>(f: &F) -> (Vec<f64>, Option<f64>) {
    let top = f.box_exit(&[0.0], &[1.0]);
    match f.normal_nodes() {
        Some(nodes) if top.is_finite() => (nodes.to_vec(), Some(top)),
        _ => (vec![1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0], None),
    }
}

/// ∫_a^∞ [d(t) + c]^2 t^{-p} dt for d(t) = f(x+t) - f_∞ and c = f_∞ - f(x):
/// the constant part is exact and the rest decays with the field.
fn algebraic_tail<F: Field + ?Sized>(f: &F, x: f64, a: f64, p: f64, tol: Tol) -> Estimate {
    let far = f.far_value();
    let c = far - f.value(&[x]);
    let rest = semi_infinite(
        |t| {
            let d = f.value(&[x + t]) - far;
            (d * d + 2.0 * c * d) * t.powf(-p)
        },
        a,
        tol,
    );
    rest + Estimate::exact(c * c * a.powf(1.0 - p) / (p - 1.0))
}

/// ∫_0^h q(t)^2 t^{-a} dt for the difference quotient q(t) = (f(x+t) - f(x))/t,
/// with q taken as the mean of f' over [x, x+t] for small t.
fn quotient_square<F: Field + ?Sized>(f: &F, x: f64, fx: f64, h: f64, a: f64, tol: Tol) -> Estimate {
    let small = taylor_switch(h);
    let model = |t: f64| {
        let q = mean_of(|u| f.jet(&[x + u * t]).g[0]);
        q * q
    };
    let quotient = |t: f64| {
        let q = (f.value(&[x + t]) - fx) / t;
        q * q * t.powf(-a)
    };
    let near = endpoint_power(model, small, a, tol);
    if small < h {
        near + adaptive(quotient, small, h, tol)
    } else {
        near
    }
}

/// Gagliardo seminorm ∬_{Ω×Ω} [f(x) - f(y)]^2 |x - y|^{-1-2σ} dx dy (N = 1).
pub fn gagliardo_seminorm<F: Field + ?Sized>(f: &F, sigma: f64) -> Result<Estimate> {
    check_line(f)?;
    if !(sigma > 0.0 && sigma < 1.0) {
        return domain(format!("order σ = {sigma} must lie in (0, 1)"));
    }
    let (nodes, top) = layout(f);
    let tin = Tol::new(1e-16, 1e-11);
    let tout = Tol::new(1e-15, 1e-9);
    let p = 1.0 + 2.0 * sigma;
    let inner = |x: f64| -> f64 {
        let fx = f.value(&[x]);
        let next = nodes.iter().copied().find(|&c| c > x * (1.0 + 1e-14) + 1e-300);
        let h0 = next.map_or(1.0, |c| (c - x).min(1.0));
        let near = quotient_square(f, x, fx, h0, 2.0 * sigma - 1.0, tin);
        let end = match top {
            Some(t) => (t - x).max(h0),
            None => (FREE_EXTENT - x).max(h0),
        };
        let brk: Vec<f64> = nodes.iter().map(|c| c - x).filter(|&t| t > h0 && t < end).collect();
        let mid = adaptive_with_breaks(
            |t| {
                let d = f.value(&[x + t]) - fx;
                d * d * t.powf(-p)
            },
            h0,
            end,
            &brk,
            tin,
        );
        let tail = match top {
            Some(_) => {
                let c = f.far_value() - fx;
                Estimate::exact(c * c * end.powf(1.0 - p) / (p - 1.0))
            }
            None => algebraic_tail(f, x, end, p, tin),
        };
        (near + mid + tail).value
    };
    let total = match top {
        Some(t) => adaptive_with_breaks(inner, 0.0, t, &nodes, tout),
        None => adaptive_with_breaks(&inner, 0.0, FREE_EXTENT, &nodes, tout) + semi_infinite(&inner, FREE_EXTENT, tout),
    };
    finish(total.scale(2.0), "Gagliardo seminorm")
}

fn finish(e: Estimate, what: &str) -> Result<Estimate> {
    if !e.value.is_finite() || e.error > 1e-6 * e.value.abs() + 1e-13 {
        return Err(Error::Quadrature(format!("{what}: value {} with error estimate {:e}", e.value, e.error)));
    }
    Ok(e)
}

/// ∫_0^∞ [f(x) - f(0)]^2 x^{-2s} dx.
fn wall_term<F: Field + ?Sized>(f: &F, s: f64) -> Result<Estimate> {
    let (nodes, top) = layout(f);
    let tol = Tol::new(1e-16, 1e-11);
    let f0 = f.value(&[0.0]);
    let h0 = nodes.iter().copied().find(|&c| c > 0.0).unwrap_or(1.0).min(1.0);
    let near = quotient_square(f, 0.0, f0, h0, 2.0 * s - 2.0, tol);
    let end = top.unwrap_or(FREE_EXTENT).max(h0);
    let g = |x: f64| {
        let d = f.value(&[x]) - f0;
        d * d * x.powf(-2.0 * s)
    };
    let mid = adaptive_with_breaks(g, h0, end, &nodes, tol);
    let tail = match top {
        Some(_) => {
            let c = f.far_value() - f0;
            Estimate::exact(c * c * end.powf(1.0 - 2.0 * s) / (2.0 * s - 1.0))
        }
        None => algebraic_tail(f, 0.0, end, 2.0 * s, tol),
    };
    finish(near + mid + tail, "wall term")
}

/// Both sides of the Dirichlet-form identity
/// ∫ D[φ] φ' = s c_grad [φ]^2_{s} + c_grad ∫ [φ(x) - φ(0)]^2 x^{-2s}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DirichletReport {
    pub lhs: f64,
    /// s c_grad times the Gagliardo seminorm of order s.
    pub interior: f64,
    /// c_grad times the wall term.
    pub boundary: f64,
    pub residual: f64,
}

pub fn dirichlet_identity<F: Field + ?Sized>(phi: &F, params: &OperatorParams) -> Result<DirichletReport> {
    check_line(phi)?;
    let s = params.spec.s;
    let (nodes, top) = layout(phi);
    let tol = Tol::new(1e-14, 1e-9);
    let mut failure: Option<Error> = None;
    let mut g = |x: f64| -> f64 {
        let dphi = phi.jet(&[x]).g[0];
        if dphi == 0.0 {
            return 0.0;
        }
        match apply_d(phi, &[x], DForm::Extension, params) {
            Ok(v) => v.value[0] * dphi,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    };
    let mut brk = nodes.clone();
    brk.extend([1e-6, 1e-4, 1e-2]);
    let lhs = match top {
        Some(t) => adaptive_with_breaks(&mut g, 0.0, t, &brk, tol),
        None => adaptive_with_breaks(&mut g, 0.0, FREE_EXTENT, &brk, tol) + semi_infinite(&mut g, FREE_EXTENT, tol),
    };
    if let Some(e) = failure {
        return Err(e);
    }
    let lhs = finish(lhs, "Dirichlet form")?.value;
    let interior = s * params.c_grad() * gagliardo_seminorm(phi, s)?.value;
    let boundary = params.c_grad() * wall_term(phi, s)?.value;
    let rhs = interior + boundary;
    let scale = lhs.abs().max(rhs.abs());
    let residual = if scale < 1e-300 { 0.0 } else { (lhs - rhs).abs() / scale };
    Ok(DirichletReport { lhs, interior, boundary, residual })
}

pub fn dirichlet_identity_residual<F: Field + ?Sized>(phi: &F, params: &OperatorParams) -> Result<f64> {
    Ok(dirichlet_identity(phi, params)?.residual)
}

/// Both sides of ∫ L[φ] ψ - ∫ φ L[ψ] = ψ(0) D[φ]·n - φ(0) D[ψ]·n.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IppReport {
    pub lhs: f64,
    pub rhs: f64,
    /// max(|∫ L[φ] ψ|, |∫ φ L[ψ]|), the size of the cancelling terms.
    pub bulk: f64,
    pub flux_phi: f64,
    pub flux_psi: f64,
    pub residual: f64,
}

pub fn ipp<F: Field + ?Sized, G: Field + ?Sized>(phi: &F, psi: &G, params: &OperatorParams) -> Result<IppReport> {
    check_line(phi)?;
    check_line(psi)?;
    let s = params.spec.s;
    let (mut brk, top_phi) = layout(phi);
    let (brk2, top_psi) = layout(psi);
    brk.extend(brk2);
    brk.sort_by(f64::total_cmp);
    brk.dedup();
    let tol = Tol::new(1e-14, 1e-8);
    let mut failure: Option<Error> = None;
    let mut lv = |x: f64| -> (f64, f64) {
        let mut l = |f: &dyn Fn() -> Result<Estimate>| match f() {
            Ok(e) => e.value,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        };
        let lp = l(&|| apply_l(phi, &[x], LForm::Extension, params));
        let lq = l(&|| apply_l(psi, &[x], LForm::Extension, params));
        (lp, lq)
    };
    // below X0 both L[φ] and L[ψ] are K x^{1-2s} to leading order
    const X0: f64 = 1e-8;
    let (kp, kq) = {
        let (lp, lq) = lv(X0);
        let w = X0.powf(2.0 * s - 1.0);
        (lp * w, lq * w)
    };
    let (p0, q0) = (phi.value(&[0.0]), psi.value(&[0.0]));
    let wall = Estimate::exact((kp * q0 - p0 * kq) * X0.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s));
    let mut g = |x: f64| -> [f64; 2] {
        let (lp, lq) = lv(x);
        [lp * psi.value(&[x]), phi.value(&[x]) * lq]
    };
    let mut near_brk: Vec<f64> = (1..8).map(|k| X0 * 10f64.powi(k)).collect();
    near_brk.extend(brk.iter().copied());
    // beyond both boxes the fields are constant and L decays like x^{-1-2s}
    let t = match (top_phi, top_psi) {
        (Some(t1), Some(t2)) => t1.max(t2),
        _ => FREE_EXTENT,
    };
    let (body, e1) = adaptive_vec(&mut g, X0, t, &near_brk, tol);
    let (tail, e2) = adaptive_vec(
        |u| {
            if u >= 1.0 {
                return [0.0; 2];
            }
            let om = 1.0 - u;
            let v = g(t + u / om);
            [v[0] / (om * om), v[1] / (om * om)]
        },
        0.0,
        1.0,
        &[],
        tol,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let parts = [body[0] + tail[0], body[1] + tail[1]];
    let bulk = parts[0].abs().max(parts[1].abs());
    let lhs = wall + Estimate::new(parts[0] - parts[1], e1 + e2);
    if !lhs.value.is_finite() || lhs.error > 1e-6 * bulk.max(lhs.value.abs()) + 1e-13 {
        return Err(Error::Quadrature(format!("integration by parts: value {} with error {:e}", lhs.value, lhs.error)));
    }
    let lhs = lhs.value;
    let c = params.c_grad();
    let flux_phi = c * boundary_flux(phi, &[], params)?.value;
    let flux_psi = c * boundary_flux(psi, &[], params)?.value;
    let rhs = q0 * flux_phi - p0 * flux_psi;
    let scale = lhs.abs().max(rhs.abs()).max((q0 * flux_phi).abs() + (p0 * flux_psi).abs());
    let residual = if scale < 1e-300 { 0.0 } else { (lhs - rhs).abs() / scale };
    Ok(IppReport { lhs, rhs, bulk, flux_phi, flux_psi, residual })
}

pub fn ipp_residual<F: Field + ?Sized, G: Field + ?Sized>(phi: &F, psi: &G, params: &OperatorParams) -> Result<f64> {
    Ok(ipp(phi, psi, params)?.residual)
}

/// ∫ f^2 x^{-2σ} divided by the Gagliardo seminorm of order σ.
pub fn hardy_ratio<F: Field + ?Sized>(f: &F, sigma: f64) -> Result<f64> {
    check_line(f)?;
    if !(sigma > 0.0 && sigma < 1.0) {
        return domain(format!("order σ = {sigma} must lie in (0, 1)"));
    }
    if f.far_value() != 0.0 {
        return domain("the Hardy quotient needs a field vanishing at infinity");
    }
    let f0 = f.value(&[0.0]);
    if f0.abs() > 1e-12 && sigma >= 0.5 {
        return domain(format!("trace f(0) = {f0} is nonzero while σ = {sigma} ≥ 1/2"));
    }
    let (nodes, top) = layout(f);
    let tol = Tol::new(1e-16, 1e-11);
    let h0 = nodes.iter().copied().find(|&c| c > 0.0).unwrap_or(1.0).min(1.0);
    let near = if f0 == 0.0 {
        endpoint_power(
            |x| {
                let q = f.value(&[x]) / x;
                q * q
            },
            h0,
            2.0 * sigma - 2.0,
            tol,
        )
    } else {
        endpoint_power(|x| f.value(&[x]).powi(2), h0, 2.0 * sigma, tol)
    };
    let g = |x: f64| f.value(&[x]).powi(2) * x.powf(-2.0 * sigma);
    let rest = match top {
        Some(t) => adaptive_with_breaks(g, h0, t.max(h0), &nodes, tol),
        None => adaptive_with_breaks(&g, h0, FREE_EXTENT, &nodes, tol) + semi_infinite(&g, FREE_EXTENT, tol),
    };
    let num = finish(near + rest, "Hardy numerator")?.value;
    let den = gagliardo_seminorm(f, sigma)?.value;
    if !(den > 0.0) {
        return domain("the Gagliardo seminorm vanishes; the quotient is undefined");
    }
    Ok(num / den)
}

/// (a(φ,φ) - ‖φ‖²) / [φ]^2_s for a coefficient vector; bounded below by s c_grad.
pub fn coercivity_ratio(system: &StiffnessSystem, coeffs: &DVector<f64>) -> Result<f64> {
    let b = coeffs.dot(&(&system.nonlocal * coeffs));
    let field = system.space.to_field(coeffs)?;
    let g = gagliardo_seminorm(&field, system.params.spec.s)?.value;
    if !(g > 0.0) {
        return domain("the Gagliardo seminorm vanishes for a constant vector");
    }
    Ok(b / g)
}
