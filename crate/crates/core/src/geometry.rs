//! Graded meshes, scalar fields on the half-space and the wall extension
//! ψ̃(y, v) that freezes a field at the point where the backward ray crosses
//! the wall.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::equilibrium::V3;
use crate::error::{domain, Error, Result};
use crate::spline::{CubicSpline, EndCondition};

/// Lateral extent of a two-dimensional mesh: uniform nodes on [-half_width, half_width].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateralSpec {
    pub half_width: f64,
    pub m: usize,
}

/// Mesh descriptor. Normal nodes are x_i = x_max (i/m)^q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub x_max: f64,
    pub m: usize,
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lateral: Option<LateralSpec>,
}

impl MeshSpec {
    /// Default grading for a given s: q = 2/(2s-1) capped at 4.
    pub fn for_order(s: f64, m: usize, x_max: f64) -> Self {
        Self { x_max, m, q: default_grading(s), lateral: None }
    }
}

pub fn default_grading(s: f64) -> f64 {
    (2.0 / (2.0 * s - 1.0)).min(4.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradedMesh {
    pub spec: MeshSpec,
    pub normal: Vec<f64>,
    pub lateral: Vec<f64>,
}

impl GradedMesh {
    pub fn new(spec: MeshSpec) -> Result<Self> {
        if !(spec.x_max > 0.0) || spec.m < 3 || !(spec.q >= 1.0) {
            return Err(Error::Config(format!("invalid mesh {spec:?}")));
        }
        let normal = (0..=spec.m).map(|i| spec.x_max * (i as f64 / spec.m as f64).powf(spec.q)).collect();
        let lateral = match spec.lateral {
            None => Vec::new(),
            Some(l) => {
                if l.m < 3 || !(l.half_width > 0.0) {
                    return Err(Error::Config(format!("invalid lateral mesh {l:?}")));
                }
                (0..=l.m).map(|i| -l.half_width + 2.0 * l.half_width * i as f64 / l.m as f64).collect()
            }
        };
        Ok(Self { spec, normal, lateral })
    }

    pub fn dim(&self) -> usize {
        if self.lateral.is_empty() {
            1
        } else {
            2
        }
    }

    pub fn x_max(&self) -> f64 {
        self.spec.x_max
    }

    /// Number of normal elements inside [0, x_max/100].
    pub fn wall_elements(&self) -> usize {
        let lim = self.spec.x_max / 100.0;
        self.normal.windows(2).filter(|w| w[1] <= lim * (1.0 + 1e-12)).count()
    }

    pub fn node_count(&self) -> usize {
        self.normal.len() * self.lateral.len().max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Linear,
    #[default]
    Cubic,
}

/// Value of a field outside its mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FarField {
    #[default]
    Zero,
    Constant(f64),
}

impl FarField {
    pub fn value(&self) -> f64 {
        match self {
            FarField::Zero => 0.0,
            FarField::Constant(c) => *c,
        }
    }
}

/// Value, gradient and Hessian at a point (first N slots used).
#[derive(Debug, Clone, Copy, Default)]
pub struct Jet {
    pub v: f64,
    pub g: V3,
    pub h: [V3; 3],
}

/// Anything the operators can be applied to.
pub trait Field: Sync {
    fn dim(&self) -> usize;
    /// Point evaluation on the closed half-space.
    fn value(&self, x: &[f64]) -> f64;
    fn jet(&self, x: &[f64]) -> Jet;
    /// Constant taken by the field outside its support box.
    fn far_value(&self) -> f64;
    /// Distance along x + rθ after which the field equals `far_value`,
    /// disregarding the wall (infinite when there is no such box).
    fn box_exit(&self, x: &[f64], th: &[f64]) -> f64;
    /// Values of r in (0, rmax) where x + rθ crosses a mesh line.
    fn ray_breaks(&self, _x: &[f64], _th: &[f64], _rmax: f64, _out: &mut Vec<f64>) {}
    /// Nodes of the normal mesh, if any.
    fn normal_nodes(&self) -> Option<&[f64]> {
        None
    }
}

/// Scalar field sampled on a graded mesh.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub mesh: GradedMesh,
    pub values: Vec<f64>,
    pub interp: Interp,
    pub far: FarField,
    repr: Repr,
}

#[derive(Debug, Clone)]
enum Repr {
    Line(CubicSpline),
    Patch(Bicubic),
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    mesh: MeshSpec,
    interp: Interp,
    far_field: FarField,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slopes: Option<Vec<f64>>,
}

impl ScalarField {
    /// Values are ordered normal-fastest: index = i_lateral * (m+1) + i_normal.
    pub fn new(mesh: GradedMesh, values: Vec<f64>, interp: Interp, far: FarField) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(Error::Config(format!("{} values for {} nodes", values.len(), mesh.node_count())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("field values must be finite".into()));
        }
        let repr = if mesh.dim() == 1 {
            let (left, right) = match interp {
                Interp::Cubic => (EndCondition::NotAKnot, EndCondition::Clamped(0.0)),
                Interp::Linear => (EndCondition::Natural, EndCondition::Natural),
            };
            Repr::Line(CubicSpline::new(mesh.normal.clone(), values.clone(), left, right))
        } else {
            Repr::Patch(Bicubic::new(&mesh, &values))
        };
        Ok(Self { mesh, values, interp, far, repr })
    }

    /// One-dimensional cubic Hermite field with prescribed nodal slopes.
    pub fn hermite(mesh: GradedMesh, values: Vec<f64>, slopes: Vec<f64>, far: FarField) -> Result<Self> {
        if mesh.dim() != 1 {
            return Err(Error::Config("Hermite fields with explicit slopes are one-dimensional".into()));
        }
        let n = mesh.node_count();
        if values.len() != n || slopes.len() != n {
            return Err(Error::Config(format!("{} values and {} slopes for {n} nodes", values.len(), slopes.len())));
        }
        if values.iter().chain(&slopes).any(|v| !v.is_finite()) {
            return Err(Error::Config("field values must be finite".into()));
        }
        let repr = Repr::Line(CubicSpline::from_hermite(mesh.normal.clone(), values.clone(), slopes));
        Ok(Self { mesh, values, interp: Interp::Cubic, far, repr })
    }

    /// Nodal slopes of a one-dimensional cubic field.
    pub fn slopes(&self) -> Option<&[f64]> {
        match (&self.repr, self.interp) {
            (Repr::Line(sp), Interp::Cubic) => Some(sp.slopes()),
            _ => None,
        }
    }

    pub fn from_fn(mesh: GradedMesh, interp: Interp, far: FarField, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(mesh.node_count());
        if mesh.dim() == 1 {
            for &x in &mesh.normal {
                values.push(f(&[x]));
            }
        } else {
            for &a in &mesh.lateral {
                for &b in &mesh.normal {
                    values.push(f(&[a, b]));
                }
            }
        }
        Self::new(mesh, values, interp, far)
    }

    fn inside(&self, x: &[f64]) -> bool {
        let d = self.mesh.dim();
        if x[d - 1] > self.mesh.spec.x_max {
            return false;
        }
        if d == 2 {
            let l = self.mesh.spec.lateral.unwrap().half_width;
            if x[0].abs() > l {
                return false;
            }
        }
        true
    }

    fn linear_1d(&self, t: f64) -> (f64, f64) {
        let xs = &self.mesh.normal;
        let i = xs.partition_point(|&xi| xi <= t).clamp(1, xs.len() - 1) - 1;
        let h = xs[i + 1] - xs[i];
        let sl = (self.values[i + 1] - self.values[i]) / h;
        (self.values[i] + sl * (t - xs[i]), sl)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
        let io = |e: csv::Error| Error::Parse(e.to_string());
        if self.mesh.dim() == 1 {
            w.write_record(["x_n", "value"]).map_err(io)?;
            for (x, v) in self.mesh.normal.iter().zip(&self.values) {
                w.write_record([format!("{x:.17e}"), format!("{v:.17e}")]).map_err(io)?;
            }
        } else {
            w.write_record(["x_1", "x_n", "value"]).map_err(io)?;
            let m = self.mesh.normal.len();
            for (i, a) in self.mesh.lateral.iter().enumerate() {
                for (j, b) in self.mesh.normal.iter().enumerate() {
                    let v = self.values[i * m + j];
                    w.write_record([format!("{a:.17e}"), format!("{b:.17e}"), format!("{v:.17e}")]).map_err(io)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads node values from CSV and checks the coordinates against `mesh`.
    pub fn read_csv(path: &Path, mesh: GradedMesh, interp: Interp, far: FarField) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
        let d = mesh.dim();
        let mut values = Vec::new();
        let mut coords = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != d + 1 {
                return Err(Error::Parse(format!("expected {} columns, found {}", d + 1, rec.len())));
            }
            let nums: Vec<f64> = rec
                .iter()
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))))
                .collect::<Result<_>>()?;
            coords.push(nums[..d].to_vec());
            values.push(nums[d]);
        }
        if values.len() != mesh.node_count() {
            return Err(Error::Parse(format!("{} rows for {} mesh nodes", values.len(), mesh.node_count())));
        }
        let m = mesh.normal.len();
        for (k, c) in coords.iter().enumerate() {
            let expect_n = mesh.normal[k % m];
            let ok_n = (c[d - 1] - expect_n).abs() <= 1e-12 * (1.0 + expect_n.abs());
            let ok_l = d == 1 || (c[0] - mesh.lateral[k / m]).abs() <= 1e-12 * (1.0 + c[0].abs());
            if !ok_n || !ok_l {
                return Err(Error::Parse(format!("row {k} coordinates {c:?} do not match the mesh")));
            }
        }
        Self::new(mesh, values, interp, far)
    }

    pub fn to_json(&self) -> Result<String> {
        let f = FieldFile {
            mesh: self.mesh.spec,
            interp: self.interp,
            far_field: self.far,
            values: self.values.clone(),
            slopes: self.slopes().map(|k| k.to_vec()),
        };
        serde_json::to_string_pretty(&f).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: FieldFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mesh = GradedMesh::new(f.mesh)?;
        match f.slopes {
            Some(k) if mesh.dim() == 1 && f.interp == Interp::Cubic => Self::hermite(mesh, f.values, k, f.far_field),
            _ => Self::new(mesh, f.values, f.interp, f.far_field),
        }
    }
}

impl Field for ScalarField {
    fn dim(&self) -> usize {
        self.mesh.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        if !self.inside(x) {
            return self.far.value();
        }
        match (&self.repr, self.interp) {
            (Repr::Line(_), Interp::Linear) => self.linear_1d(x[0].max(0.0)).0,
            (Repr::Line(sp), Interp::Cubic) => sp.eval(x[0].max(0.0)),
            (Repr::Patch(p), _) => p.eval(x[0], x[1].max(0.0)).v,
        }
    }

    fn jet(&self, x: &[f64]) -> Jet {
        if !self.inside(x) {
            return Jet { v: self.far.value(), ..Default::default() };
        }
        match (&self.repr, self.interp) {
            (Repr::Line(_), Interp::Linear) => {
                let (v, d) = self.linear_1d(x[0].max(0.0));
                let mut j = Jet { v, ..Default::default() };
                j.g[0] = d;
                j
            }
            (Repr::Line(sp), Interp::Cubic) => {
                let (v, d, dd) = sp.eval_all(x[0].max(0.0));
                let mut j = Jet { v, ..Default::default() };
                j.g[0] = d;
                j.h[0][0] = dd;
                j
            }
            (Repr::Patch(p), _) => p.eval(x[0], x[1].max(0.0)),
        }
    }

    fn far_value(&self) -> f64 {
        self.far.value()
    }

    fn box_exit(&self, x: &[f64], th: &[f64]) -> f64 {
        let d = self.mesh.dim();
        let top = self.mesh.spec.x_max;
        let mut r = if th[d - 1] > 0.0 { ((top - x[d - 1]) / th[d - 1]).max(0.0) } else { f64::INFINITY };
        if d == 2 {
            let l = self.mesh.spec.lateral.unwrap().half_width;
            if th[0] > 0.0 {
                r = r.min(((l - x[0]) / th[0]).max(0.0));
            } else if th[0] < 0.0 {
                r = r.min(((-l - x[0]) / th[0]).max(0.0));
            }
        }
        r
    }

    fn ray_breaks(&self, x: &[f64], th: &[f64], rmax: f64, out: &mut Vec<f64>) {
        let d = self.mesh.dim();
        let mut push_axis = |nodes: &[f64], x0: f64, t: f64| {
            if t.abs() < 1e-300 {
                return;
            }
            for &c in nodes {
                let r = (c - x0) / t;
                if r > 0.0 && r < rmax {
                    out.push(r);
                }
            }
        };
        push_axis(&self.mesh.normal, x[d - 1], th[d - 1]);
        if d == 2 {
            push_axis(&self.mesh.lateral, x[0], th[0]);
        }
    }

    fn normal_nodes(&self) -> Option<&[f64]> {
        Some(&self.mesh.normal)
    }
}

/// Hermite basis on [0, 1]: values, first and second derivatives of
/// (h00, h01, h10, h11).
fn hermite(u: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let u2 = u * u;
    let u3 = u2 * u;
    (
        [2.0 * u3 - 3.0 * u2 + 1.0, -2.0 * u3 + 3.0 * u2, u3 - 2.0 * u2 + u, u3 - u2],
        [6.0 * u2 - 6.0 * u, -6.0 * u2 + 6.0 * u, 3.0 * u2 - 4.0 * u + 1.0, 3.0 * u2 - 2.0 * u],
        [12.0 * u - 6.0, -12.0 * u + 6.0, 6.0 * u - 4.0, 6.0 * u - 2.0],
    )
}

/// Bicubic Hermite surface with spline-derived nodal slopes.
#[derive(Debug, Clone)]
struct Bicubic {
    a: Vec<f64>,
    b: Vec<f64>,
    f: Vec<f64>,
    fa: Vec<f64>,
    fb: Vec<f64>,
    fab: Vec<f64>,
}

impl Bicubic {
    fn new(mesh: &GradedMesh, values: &[f64]) -> Self {
        let a = mesh.lateral.clone();
        let b = mesh.normal.clone();
        let (na, nb) = (a.len(), b.len());
        let idx = |i: usize, j: usize| i * nb + j;
        let mut fb = vec![0.0; na * nb];
        for i in 0..na {
            let col: Vec<f64> = (0..nb).map(|j| values[idx(i, j)]).collect();
            let sp = CubicSpline::new(b.clone(), col, EndCondition::NotAKnot, EndCondition::Clamped(0.0));
            for j in 0..nb {
                fb[idx(i, j)] = sp.slopes()[j];
            }
        }
        let mut fa = vec![0.0; na * nb];
        let mut fab = vec![0.0; na * nb];
        for j in 0..nb {
            let row: Vec<f64> = (0..na).map(|i| values[idx(i, j)]).collect();
            let sp = CubicSpline::new(a.clone(), row, EndCondition::Clamped(0.0), EndCondition::Clamped(0.0));
            let rowb: Vec<f64> = (0..na).map(|i| fb[idx(i, j)]).collect();
            let spb = CubicSpline::new(a.clone(), rowb, EndCondition::Clamped(0.0), EndCondition::Clamped(0.0));
            for i in 0..na {
                fa[idx(i, j)] = sp.slopes()[i];
                fab[idx(i, j)] = spb.slopes()[i];
            }
        }
        Self { a, b, f: values.to_vec(), fa, fb, fab }
    }

    fn eval(&self, x: f64, y: f64) -> Jet {
        let loc = |nodes: &[f64], t: f64| nodes.partition_point(|&c| c <= t).clamp(1, nodes.len() - 1) - 1;
        let i = loc(&self.a, x);
        let j = loc(&self.b, y);
        let nb = self.b.len();
        let ha = self.a[i + 1] - self.a[i];
        let hb = self.b[j + 1] - self.b[j];
        let (pu, du, su) = hermite((x - self.a[i]) / ha);
        let (pw, dw, sw) = hermite((y - self.b[j]) / hb);
        let mut jet = Jet::default();
        for (ci, ii) in [i, i + 1].into_iter().enumerate() {
            for (cj, jj) in [j, j + 1].into_iter().enumerate() {
                let k = ii * nb + jj;
                // coefficient per (value|slope in a) x (value|slope in b)
                let terms = [
                    (ci, cj, self.f[k]),
                    (2 + ci, cj, self.fa[k] * ha),
                    (ci, 2 + cj, self.fb[k] * hb),
                    (2 + ci, 2 + cj, self.fab[k] * ha * hb),
                ];
                for (bu, bw, c) in terms {
                    jet.v += c * pu[bu] * pw[bw];
                    jet.g[0] += c * du[bu] * pw[bw] / ha;
                    jet.g[1] += c * pu[bu] * dw[bw] / hb;
                    jet.h[0][0] += c * su[bu] * pw[bw] / (ha * ha);
                    jet.h[1][1] += c * pu[bu] * sw[bw] / (hb * hb);
                    jet.h[0][1] += c * du[bu] * dw[bw] / (ha * hb);
                }
            }
        }
        jet.h[1][0] = jet.h[0][1];
        jet
    }
}

type JetFn = dyn Fn(&[f64]) -> Jet + Send + Sync;

/// Field given by a closure returning its jet; used for analytic test data.
pub struct FnField {
    dim: usize,
    far: f64,
    f: Box<JetFn>,
}

impl FnField {
    pub fn new(dim: usize, far: f64, f: impl Fn(&[f64]) -> Jet + Send + Sync + 'static) -> Self {
        Self { dim, far, f: Box::new(f) }
    }
}

impl Field for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x).v
    }
    fn jet(&self, x: &[f64]) -> Jet {
        (self.f)(x)
    }
    fn far_value(&self) -> f64 {
        self.far
    }
    fn box_exit(&self, _x: &[f64], _th: &[f64]) -> f64 {
        f64::INFINITY
    }
}

/// Wall extension ψ̃(y, v): ψ(y) inside, ψ at the wall crossing of the
/// backward ray y - t v (t > 0) when y lies below the wall.
pub fn extend<F: Field + ?Sized>(psi: &F, y: &[f64], v: &[f64]) -> Result<f64> {
    let d = psi.dim();
    let yn = y[d - 1];
    if yn > 0.0 {
        return Ok(psi.value(y));
    }
    if yn == 0.0 {
        return Ok(psi.value(y));
    }
    let vn = v[d - 1];
    if vn >= 0.0 {
        return domain(format!("y_N = {yn} < 0 with v_N = {vn} >= 0: backward ray never meets the wall"));
    }
    let t = yn / vn;
    let mut z = [0.0; 3];
    for k in 0..d - 1 {
        z[k] = y[k] - t * v[k];
    }
    z[d - 1] = 0.0;
    Ok(psi.value(&z[..d]))
}

/// Fraction τ0 in (0, 1] of the step x + εv taken before the wall is met.
pub fn exit_fraction(x_n: f64, eps: f64, v_n: f64) -> Result<f64> {
    if !(x_n >= 0.0) || !(eps > 0.0) {
        return domain(format!("exit fraction needs x_N >= 0 and ε > 0 (got {x_n}, {eps})"));
    }
    if x_n + eps * v_n >= 0.0 {
        Ok(1.0)
    } else {
        Ok(-x_n / (eps * v_n))
    }
}

/// Specular flow η(x, w): x + w, mirrored through the wall when it ends below it.
pub fn specular_flow(x: &[f64], w: &[f64], dim: usize) -> V3 {
    let mut out = [0.0; 3];
    for k in 0..dim {
        out[k] = x[k] + w[k];
    }
    if out[dim - 1] <= 0.0 {
        out[dim - 1] = -out[dim - 1];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mesh1(m: usize) -> GradedMesh {
        GradedMesh::new(MeshSpec { x_max: 20.0, m, q: 4.0, lateral: None }).unwrap()
    }

    #[test]
    fn graded_nodes_are_monotone_and_resolve_the_wall() {
        let m = mesh1(200);
        assert!(m.normal.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(m.normal[0], 0.0);
        assert_relative_eq!(m.normal[200], 20.0);
        assert!(m.wall_elements() >= 8);
    }

    #[test]
    fn default_grading_is_capped() {
        assert_relative_eq!(default_grading(0.75), 4.0);
        assert_relative_eq!(default_grading(0.95), 2.0 / 0.9);
    }

    #[test]
    fn field_reproduces_nodes_and_far_value() {
        let m = mesh1(40);
        let f = ScalarField::from_fn(m, Interp::Cubic, FarField::Constant(0.5), |x| (-x[0]).exp()).unwrap();
        assert_relative_eq!(f.value(&[f.mesh.normal[7]]), (-f.mesh.normal[7]).exp(), max_relative = 1e-14);
        assert_eq!(f.value(&[25.0]), 0.5);
    }

    #[test]
    fn extension_examples() {
        let m = mesh1(60);
        let f = ScalarField::from_fn(m, Interp::Cubic, FarField::Zero, |x| 1.0 + x[0]).unwrap();
        assert_relative_eq!(extend(&f, &[2.0], &[-1.0]).unwrap(), 3.0, max_relative = 1e-12);
        assert_relative_eq!(extend(&f, &[-2.0], &[-1.0]).unwrap(), 1.0, max_relative = 1e-12);
        assert!(extend(&f, &[-2.0], &[1.0]).is_err());
        assert_relative_eq!(extend(&f, &[0.0], &[1.0]).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn exit_fraction_example() {
        assert_relative_eq!(exit_fraction(1.0, 0.5, -4.0).unwrap(), 0.5);
        assert_eq!(exit_fraction(1.0, 0.5, 4.0).unwrap(), 1.0);
    }

    #[test]
    fn specular_example() {
        let y = specular_flow(&[0.3, 1.0], &[0.2, -3.0], 2);
        assert_relative_eq!(y[1], 2.0);
        assert_relative_eq!(y[0], 0.5);
    }

    #[test]
    fn bicubic_reproduces_smooth_surface() {
        let spec = MeshSpec { x_max: 6.0, m: 40, q: 2.0, lateral: Some(LateralSpec { half_width: 6.0, m: 60 }) };
        let mesh = GradedMesh::new(spec).unwrap();
        let g = |x: &[f64]| (-(x[0] * x[0]) - (x[1] - 1.0).powi(2)).exp();
        let f = ScalarField::from_fn(mesh, Interp::Cubic, FarField::Zero, g).unwrap();
        for &(a, b) in &[(0.13, 0.77), (-1.1, 1.9), (0.5, 0.05)] {
            let j = f.jet(&[a, b]);
            assert!((j.v - g(&[a, b])).abs() < 1e-4);
            let gx = -2.0 * a * g(&[a, b]);
            let gy = -2.0 * (b - 1.0) * g(&[a, b]);
            assert!((j.g[0] - gx).abs() < 2e-3 && (j.g[1] - gy).abs() < 2e-3);
        }
    }
}
