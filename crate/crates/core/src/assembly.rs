//! Assembly of the locally stabilized space-time system.
//!
//! Per element `K` the bilinear form is
//! `(∂t u, v) + (∇x u, ∇x v) + δ_K [(∂t u, ∂t v) − (Δx u, ∂t v)]`
//! and the load `(f, v) + δ_K (f, ∂t v)`. The Laplacian is taken element-wise;
//! for C¹ bases this equals the facet form obtained by integration by parts.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::dense::{generalized_eigenvalues, sym_eigenvalues};
use crate::error::{Error, Result};
use crate::geometry::{GeometryMap, MapPoint};
use crate::hier::{ActiveEval, HierarchicalSplineSpace};
use crate::parallel::{par_map_range, Exec};
use crate::quadrature::TensorRule;
use crate::sparse::{ldlt_solve, lu_solve, SparseMatrix};
use crate::spline::{BasisEval, KnotVector, TensorSplineSpace, MAX_DIM};

/// Scalar field evaluated at a mapped point.
pub type ScalarFn<'a> = &'a (dyn Fn(&MapPoint) -> f64 + Sync);

/// How `δ_K` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabMode {
    /// `δ_K = θ_K h_K` per element.
    Local,
    /// One `δ = θ h` with the global mesh size.
    Global,
    /// Plain space-time Galerkin.
    Off,
}

impl FromStr for StabMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Self::Local),
            "global" => Ok(Self::Global),
            "off" => Ok(Self::Off),
            _ => Err(Error::Unknown { kind: "stabilization mode", name: s.to_string() }),
        }
    }
}

impl fmt::Display for StabMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Local => "local",
            Self::Global => "global",
            Self::Off => "off",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilizationConfig {
    pub mode: StabMode,
    pub theta: f64,
    /// Clamp `θ_K` to `h_K / (d C²)`.
    pub inverse_cap: bool,
    /// Inverse-inequality constant; estimated from the degree when absent.
    pub c_int1: Option<f64>,
}

impl Default for StabilizationConfig {
    fn default() -> Self {
        Self { mode: StabMode::Local, theta: 0.1, inverse_cap: true, c_int1: None }
    }
}

impl StabilizationConfig {
    pub fn off() -> Self {
        Self { mode: StabMode::Off, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::Config(format!("theta must be positive, got {}", self.theta)));
        }
        if let Some(c) = self.c_int1 {
            if !(c > 0.0) {
                return Err(Error::Config(format!("C_int1 must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// `δ_K` for an element of size `h_k` in a mesh of global size `h`.
pub fn compute_delta(h_k: f64, h: f64, d: usize, c_int1: f64, cfg: &StabilizationConfig) -> f64 {
    let theta_for = |size: f64| {
        if cfg.inverse_cap {
            cfg.theta.min(size / (d as f64 * c_int1 * c_int1))
        } else {
            cfg.theta
        }
    };
    match cfg.mode {
        StabMode::Off => 0.0,
        StabMode::Local => theta_for(h_k) * h_k,
        StabMode::Global => theta_for(h) * h,
    }
}

/// Inverse-inequality constant `C` with `‖∇v‖ ≤ C h⁻¹ ‖v‖` for tensor polynomials of
/// degree `p` on a `dim`-dimensional cube, `h` its diameter. Cached per `(p, dim)`.
pub fn estimate_cinv(p: usize, dim: usize) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&c) = cache.lock().unwrap().get(&(p, dim)) {
        return Ok(c);
    }
    let c = cinv_on_box(p, dim, 1.0)?;
    cache.lock().unwrap().insert((p, dim), c);
    Ok(c)
}

/// Same constant computed on a cube of side `width`.
pub fn cinv_on_box(p: usize, dim: usize, width: f64) -> Result<f64> {
    if p == 0 || dim == 0 || dim > MAX_DIM {
        return Err(Error::Config(format!("no inverse constant for degree {p} in dimension {dim}")));
    }
    let space = TensorSplineSpace::new(vec![KnotVector::open_uniform(p, 1); dim])?;
    let n = space.num_basis();
    let rule = TensorRule::new(p + 1, dim)?;
    let mut s = vec![vec![0.0; n]; n];
    let mut m = vec![vec![0.0; n]; n];
    let bounds = vec![(0.0, 1.0); dim];
    for q in rule.points(&bounds) {
        let e = space.eval(&q.xi[..dim], 1)?;
        let g = e.grad.as_ref().unwrap();
        for i in 0..n {
            for j in 0..n {
                m[i][j] += q.weight * e.values[i] * e.values[j];
                let dot: f64 = (0..dim).map(|a| g[i * dim + a] * g[j * dim + a]).sum();
                s[i][j] += q.weight * dot;
            }
        }
    }
    // on a cube of side w: S scales by w^(dim-2), M by w^dim
    let sc_s = width.powi(dim as i32 - 2);
    let sc_m = width.powi(dim as i32);
    for i in 0..n {
        for j in 0..n {
            s[i][j] *= sc_s;
            m[i][j] *= sc_m;
        }
    }
    let lam = generalized_eigenvalues(&s, &m)?;
    let lmax = *lam.last().unwrap();
    let diam = width * (dim as f64).sqrt();
    Ok(lmax.sqrt() * diam)
}

/// Basis functions of one cell pushed forward to a physical point.
#[derive(Clone, Debug, Default)]
pub struct PhysBasis {
    pub funcs: Vec<usize>,
    pub val: Vec<f64>,
    /// Full physical gradient `grad[f * dim + i]`, time last.
    pub grad: Vec<f64>,
    /// Spatial Laplacian, present when second derivatives were requested.
    pub lap: Vec<f64>,
    pub dim: usize,
}

impl PhysBasis {
    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    pub fn dt(&self, f: usize) -> f64 {
        self.grad[f * self.dim + self.dim - 1]
    }

    /// Spatial gradient components of local function `f`.
    pub fn grad_x(&self, f: usize) -> &[f64] {
        &self.grad[f * self.dim..f * self.dim + self.dim - 1]
    }
}

/// Reusable buffers for basis evaluation.
#[derive(Default)]
pub struct Evaluator {
    tensor: BasisEval,
    active: ActiveEval,
}

impl Evaluator {
    /// Truncated basis of cell `ci` at the parameter point of `mp`, in physical derivatives.
    pub fn eval(&mut self, space: &HierarchicalSplineSpace, ci: usize, mp: &MapPoint, second: bool, out: &mut PhysBasis) {
        let n = mp.dim;
        space.eval_on_cell_into(ci, &mp.xi[..n], if second { 2 } else { 1 }, &mut self.tensor, &mut self.active);
        let a = &self.active;
        let nf = a.funcs.len();
        out.dim = n;
        out.funcs.clear();
        out.funcs.extend_from_slice(&a.funcs);
        out.val.clear();
        out.val.extend_from_slice(&a.values);
        out.grad.clear();
        out.grad.resize(nf * n, 0.0);
        out.lap.clear();
        for f in 0..nf {
            let g = mp.push_grad(&a.grad[f * n..(f + 1) * n]);
            out.grad[f * n..(f + 1) * n].copy_from_slice(&g[..n]);
            if second {
                out.lap.push(mp.push_laplacian(&g, &a.hess[f * n * n..(f + 1) * n * n]));
            }
        }
    }
}

/// Primal or auxiliary discretization: space, geometry, and quadrature order.
#[derive(Clone, Copy)]
pub struct Discretization<'a> {
    pub space: &'a HierarchicalSplineSpace,
    pub geo: &'a GeometryMap,
    /// Gauss points per direction.
    pub quad: usize,
    pub exec: Exec,
}

/// Quadrature data of one element: mapped points, weights including `|det J|`, bases.
pub struct ElementQuad {
    pub points: Vec<MapPoint>,
    pub weights: Vec<f64>,
    pub basis: Vec<PhysBasis>,
}

impl<'a> Discretization<'a> {
    pub fn new(space: &'a HierarchicalSplineSpace, geo: &'a GeometryMap) -> Self {
        let p = (0..space.dim()).map(|a| space.degree(a)).max().unwrap_or(1);
        Self { space, geo, quad: p + 2, exec: Exec::default() }
    }

    pub fn with_quad(mut self, n: usize) -> Self {
        self.quad = n;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Number of spatial dimensions.
    pub fn d(&self) -> usize {
        self.dim() - 1
    }

    pub fn rule(&self) -> Result<TensorRule> {
        TensorRule::new(self.quad, self.dim())
    }

    /// Quadrature points of cell `ci` with the basis evaluated at each.
    pub fn element_quad(&self, ci: usize, rule: &TensorRule, second: bool) -> Result<ElementQuad> {
        let n = self.dim();
        let cell = self.space.cells()[ci];
        let bounds = self.space.mesh().cell_bounds(&cell);
        let mut ev = Evaluator::default();
        let qp = rule.points(&bounds[..n]);
        let mut out = ElementQuad {
            points: Vec::with_capacity(qp.len()),
            weights: Vec::with_capacity(qp.len()),
            basis: Vec::with_capacity(qp.len()),
        };
        for q in qp {
            let mp = self.geo.eval(&q.xi[..n], second)?;
            if mp.det <= 0.0 {
                return Err(Error::Geometry(format!("non-positive Jacobian determinant at {:?}", &q.xi[..n])));
            }
            let mut b = PhysBasis::default();
            ev.eval(self.space, ci, &mp, second, &mut b);
            out.weights.push(q.weight * mp.det);
            out.points.push(mp);
            out.basis.push(b);
        }
        Ok(out)
    }

    /// Quadrature on the face `t̂ = value` of cell `ci`, if the cell touches it.
    pub fn time_face_quad(&self, ci: usize, rule: &TensorRule, value: f64, second: bool) -> Result<Option<ElementQuad>> {
        let n = self.dim();
        let cell = self.space.cells()[ci];
        let bounds = self.space.mesh().cell_bounds(&cell);
        let (lo, hi) = bounds[n - 1];
        if lo != value && hi != value {
            return Ok(None);
        }
        let (points, weights) = self.geo.map_face(&bounds[..n], (n - 1, value), rule, second)?;
        let mut ev = Evaluator::default();
        let basis = points
            .iter()
            .map(|mp| {
                let mut b = PhysBasis::default();
                ev.eval(self.space, ci, mp, second, &mut b);
                b
            })
            .collect();
        Ok(Some(ElementQuad { points, weights, basis }))
    }

    /// `h_K` for every active cell.
    pub fn element_sizes(&self) -> Result<Vec<f64>> {
        let rule = self.rule()?;
        let n = self.dim();
        par_map_range(self.exec, self.space.num_cells(), |ci| {
            let b = self.space.mesh().cell_bounds(&self.space.cells()[ci]);
            self.geo.element_size(&b[..n], &rule)
        })
        .into_iter()
        .collect()
    }

    /// `δ_K` for every active cell.
    pub fn deltas(&self, cfg: &StabilizationConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        if cfg.mode == StabMode::Off {
            return Ok(vec![0.0; self.space.num_cells()]);
        }
        let sizes = self.element_sizes()?;
        let h = sizes.iter().cloned().fold(0.0, f64::max);
        let c = self.c_int1(cfg)?;
        Ok(sizes.iter().map(|&hk| compute_delta(hk, h, self.d(), c, cfg)).collect())
    }

    /// Inverse constant used by the `h_K/(d C²)` cap: the full space-time gradient
    /// bounds the spatial one, so the estimate on the `(d+1)`-cube is safe.
    pub fn c_int1(&self, cfg: &StabilizationConfig) -> Result<f64> {
        match cfg.c_int1 {
            Some(c) => Ok(c),
            None => {
                let p = (0..self.dim()).map(|a| self.space.degree(a)).max().unwrap();
                estimate_cinv(p, self.dim())
            }
        }
    }

    /// Evaluate a coefficient vector: value, full physical gradient and spatial Laplacian.
    pub fn eval_coeffs(&self, b: &PhysBasis, coeffs: &[f64]) -> FieldValue {
        let n = b.dim;
        let mut out = FieldValue::default();
        for (k, &f) in b.funcs.iter().enumerate() {
            let c = coeffs[f];
            out.val += c * b.val[k];
            for i in 0..n {
                out.grad[i] += c * b.grad[k * n + i];
            }
            if !b.lap.is_empty() {
                out.lap += c * b.lap[k];
            }
        }
        out
    }
}

/// A spline field at a point.
#[derive(Clone, Copy, Debug, Default)]
pub struct FieldValue {
    pub val: f64,
    pub grad: [f64; MAX_DIM],
    pub lap: f64,
}

/// Per-element contributions of each term of the bilinear form, row = test function.
#[derive(Clone, Debug)]
pub struct ElementTerms {
    pub funcs: Vec<usize>,
    /// `(∂t u, v)`.
    pub dt_v: Vec<f64>,
    /// `(∇x u, ∇x v)`.
    pub grad_grad: Vec<f64>,
    /// `(∂t u, ∂t v)`.
    pub dt_dt: Vec<f64>,
    /// `(Δx u, ∂t v)`.
    pub lap_dt: Vec<f64>,
    /// `(f, v)` and `(f, ∂t v)`.
    pub f_v: Vec<f64>,
    pub f_dt: Vec<f64>,
}

impl ElementTerms {
    /// Combined element matrix for a given `δ_K` (row-major, test × trial).
    pub fn matrix(&self, delta: f64) -> Vec<f64> {
        (0..self.dt_v.len())
            .map(|k| self.dt_v[k] + self.grad_grad[k] + delta * (self.dt_dt[k] - self.lap_dt[k]))
            .collect()
    }

    pub fn load(&self, delta: f64) -> Vec<f64> {
        self.f_v.iter().zip(&self.f_dt).map(|(a, b)| a + delta * b).collect()
    }
}

/// Term-by-term element integrals on cell `ci`.
pub fn element_terms(disc: &Discretization, ci: usize, rule: &TensorRule, source: Option<ScalarFn>) -> Result<ElementTerms> {
    let eq = disc.element_quad(ci, rule, true)?;
    let funcs = disc.space.cell_basis(ci).funcs.clone();
    let nf = funcs.len();
    let d = disc.d();
    let mut t = ElementTerms {
        funcs,
        dt_v: vec![0.0; nf * nf],
        grad_grad: vec![0.0; nf * nf],
        dt_dt: vec![0.0; nf * nf],
        lap_dt: vec![0.0; nf * nf],
        f_v: vec![0.0; nf],
        f_dt: vec![0.0; nf],
    };
    for ((mp, &w), b) in eq.points.iter().zip(&eq.weights).zip(&eq.basis) {
        let fval = source.map_or(0.0, |f| f(mp));
        for i in 0..nf {
            let vi = b.val[i];
            let dti = b.dt(i);
            let gi = b.grad_x(i);
            t.f_v[i] += w * fval * vi;
            t.f_dt[i] += w * fval * dti;
            let row = i * nf;
            for j in 0..nf {
                let dtj = b.dt(j);
                let gj = b.grad_x(j);
                let gg: f64 = (0..d).map(|a| gi[a] * gj[a]).sum();
                t.dt_v[row + j] += w * dtj * vi;
                t.grad_grad[row + j] += w * gg;
                t.dt_dt[row + j] += w * dtj * dti;
                t.lap_dt[row + j] += w * b.lap[j] * dti;
            }
        }
    }
    Ok(t)
}

/// `K_h`, `f_h` and the Dirichlet partition.
#[derive(Clone, Debug)]
pub struct StabilizedSystem {
    pub matrix: SparseMatrix,
    pub load: Vec<f64>,
    pub fixed: Vec<bool>,
    /// Values of the fixed coefficients (zero for free ones).
    pub fixed_values: Vec<f64>,
    pub deltas: Vec<f64>,
}

/// Sparsity pattern from cell-wise function lists.
pub(crate) fn cell_pattern(space: &HierarchicalSplineSpace) -> SparseMatrix {
    let n = space.space_dimension();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for ci in 0..space.num_cells() {
        let funcs = &space.cell_basis(ci).funcs;
        for &i in funcs {
            rows[i].extend_from_slice(funcs);
        }
    }
    SparseMatrix::from_pattern(n, rows)
}

/// Assemble `K_h` and `f_h` (without boundary conditions).
pub fn assemble_stabilized_system(disc: &Discretization, source: ScalarFn, cfg: &StabilizationConfig) -> Result<StabilizedSystem> {
    let deltas = disc.deltas(cfg)?;
    let rule = disc.rule()?;
    let locals: Vec<Result<(Vec<usize>, Vec<f64>, Vec<f64>)>> = par_map_range(disc.exec, disc.space.num_cells(), |ci| {
        let t = element_terms(disc, ci, &rule, Some(source))?;
        let m = t.matrix(deltas[ci]);
        let l = t.load(deltas[ci]);
        Ok((t.funcs, m, l))
    });
    let n = disc.space.space_dimension();
    let mut matrix = cell_pattern(disc.space);
    let mut load = vec![0.0; n];
    for r in locals {
        let (funcs, m, l) = r?;
        let nf = funcs.len();
        for (i, &gi) in funcs.iter().enumerate() {
            load[gi] += l[i];
            for (j, &gj) in funcs.iter().enumerate() {
                matrix.add_to(gi, gj, m[i * nf + j]);
            }
        }
    }
    Ok(StabilizedSystem { matrix, load, fixed: vec![false; n], fixed_values: vec![0.0; n], deltas })
}

/// Functions whose trace on a Dirichlet face (lateral faces and `t̂ = 0`) is nonzero.
pub fn dirichlet_functions(space: &HierarchicalSplineSpace) -> Vec<bool> {
    let n = space.dim();
    let mut fixed = vec![false; space.space_dimension()];
    for ci in 0..space.num_cells() {
        let cb = space.cell_basis(ci);
        let level = cb.cell.level();
        // faces of this cell lying on a Dirichlet face: (direction, local index on that side)
        let mut faces = Vec::new();
        let counts: Vec<usize> = (0..n).map(|a| space.degree(a) + 1).collect();
        for a in 0..n {
            let p = space.degree(a);
            let first = cb.spans[a] - p;
            if first == 0 {
                faces.push((a, 0));
            }
            if a < n - 1 && first + p + 1 == space.level_num_basis(level, a) {
                faces.push((a, p));
            }
        }
        if faces.is_empty() {
            continue;
        }
        for (k, &f) in cb.funcs.iter().enumerate() {
            if fixed[f] {
                continue;
            }
            let row = &cb.coeffs[k * cb.n_local..(k + 1) * cb.n_local];
            let on_face = row.iter().enumerate().any(|(m, &c)| {
                if c == 0.0 {
                    return false;
                }
                let mut rem = m;
                let mut loc = [0usize; MAX_DIM];
                for a in 0..n {
                    loc[a] = rem % counts[a];
                    rem /= counts[a];
                }
                faces.iter().any(|&(a, side)| loc[a] == side)
            });
            if on_face {
                fixed[f] = true;
            }
        }
    }
    fixed
}

/// Fix boundary and initial coefficients from the trace data.
pub fn impose_dirichlet(
    system: &mut StabilizedSystem,
    space: &HierarchicalSplineSpace,
    geo: &GeometryMap,
    u_d: ScalarFn,
    u_0: ScalarFn,
) -> Result<()> {
    let fixed = dirichlet_functions(space);
    system.fixed_values = dirichlet_values(space, geo, &fixed, u_d, u_0)?;
    system.fixed = fixed;
    Ok(())
}

/// Coefficients of the fixed functions reproducing the trace data (zero elsewhere).
///
/// Collocation at the Greville points of the fixed functions; on hierarchical meshes
/// the points of functions on different levels can coincide, in which case the
/// L2 projection onto the traces is used instead.
pub fn dirichlet_values(
    space: &HierarchicalSplineSpace,
    geo: &GeometryMap,
    fixed: &[bool],
    u_d: ScalarFn,
    u_0: ScalarFn,
) -> Result<Vec<f64>> {
    match dirichlet_collocation(space, geo, fixed, u_d, u_0) {
        Ok(v) => Ok(v),
        Err(Error::Singular(_)) => dirichlet_projection(space, geo, fixed, u_d, u_0),
        Err(e) => Err(e),
    }
}

fn dirichlet_collocation(
    space: &HierarchicalSplineSpace,
    geo: &GeometryMap,
    fixed: &[bool],
    u_d: ScalarFn,
    u_0: ScalarFn,
) -> Result<Vec<f64>> {
    let n = space.dim();
    let idx: Vec<usize> = (0..fixed.len()).filter(|&i| fixed[i]).collect();
    let mut values = vec![0.0; fixed.len()];
    let mut pts = Vec::with_capacity(idx.len());
    let mut data = Vec::with_capacity(idx.len());
    for &f in &idx {
        let g = space.greville_point(f);
        let mp = geo.eval(&g[..n], false)?;
        let lateral = (0..n - 1).any(|a| g[a] == 0.0 || g[a] == 1.0);
        data.push(if lateral { u_d(&mp) } else { u_0(&mp) });
        pts.push(g);
    }
    if data.iter().all(|&v| v == 0.0) {
        return Ok(values);
    }
    let mut pos = vec![usize::MAX; fixed.len()];
    for (k, &f) in idx.iter().enumerate() {
        pos[f] = k;
    }
    let mut trip = Vec::new();
    for (r, g) in pts.iter().enumerate() {
        let e = space.eval_active(&g[..n], 0)?;
        for (&f, &v) in e.funcs.iter().zip(&e.values) {
            if v != 0.0 && pos[f] != usize::MAX {
                trip.push((r, pos[f], v));
            }
        }
    }
    let a = SparseMatrix::from_triplets(idx.len(), idx.len(), &trip)?;
    let c = lu_solve(&a, &data).map_err(|e| Error::Singular(format!("boundary interpolation failed: {e}")))?;
    // a nearly singular collocation matrix passes the factorization but loses the data
    let ac = a.mul_vec(&c);
    let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if ac.iter().zip(&data).any(|(p, q)| (p - q).abs() > 1e-9 * scale.max(1.0)) {
        return Err(Error::Singular("boundary interpolation residual too large".into()));
    }
    for (k, &f) in idx.iter().enumerate() {
        values[f] = c[k];
    }
    Ok(values)
}

fn dirichlet_projection(
    space: &HierarchicalSplineSpace,
    geo: &GeometryMap,
    fixed: &[bool],
    u_d: ScalarFn,
    u_0: ScalarFn,
) -> Result<Vec<f64>> {
    let n = space.dim();
    let idx: Vec<usize> = (0..fixed.len()).filter(|&i| fixed[i]).collect();
    let mut values = vec![0.0; fixed.len()];
    if idx.is_empty() {
        return Ok(values);
    }
    let mut pos = vec![usize::MAX; fixed.len()];
    for (k, &f) in idx.iter().enumerate() {
        pos[f] = k;
    }
    let nq = (0..n).map(|a| space.degree(a)).max().unwrap_or(1) + 2;
    let rule = TensorRule::new(nq, n)?;
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; idx.len()];
    let mut nonzero = false;
    for ci in 0..space.num_cells() {
        let bounds = space.mesh().cell_bounds(&space.cells()[ci]);
        let mut faces = Vec::new();
        for a in 0..n {
            if bounds[a].0 == 0.0 {
                faces.push((a, 0.0));
            }
            if a < n - 1 && bounds[a].1 == 1.0 {
                faces.push((a, 1.0));
            }
        }
        for face in faces {
            let lateral = face.0 < n - 1;
            let (points, weights) = geo.map_face(&bounds[..n], face, &rule, false)?;
            let xis = rule.face_points(&bounds[..n], face);
            for ((mp, w), q) in points.iter().zip(&weights).zip(&xis) {
                let g = if lateral { u_d(mp) } else { u_0(mp) };
                nonzero |= g != 0.0;
                let e = space.eval_on_cell(ci, &q.xi[..n], 0);
                let loc: Vec<(usize, f64)> = e
                    .funcs
                    .iter()
                    .zip(&e.values)
                    .filter(|(&f, &v)| v != 0.0 && pos[f] != usize::MAX)
                    .map(|(&f, &v)| (pos[f], v))
                    .collect();
                for &(i, vi) in &loc {
                    rhs[i] += w * g * vi;
                    for &(j, vj) in &loc {
                        trip.push((i, j, w * vi * vj));
                    }
                }
            }
        }
    }
    if !nonzero {
        return Ok(values);
    }
    let a = SparseMatrix::from_triplets(idx.len(), idx.len(), &trip)?;
    let c = ldlt_solve(&a, &rhs).map_err(|e| Error::Singular(format!("boundary projection failed: {e}")))?;
    for (k, &f) in idx.iter().enumerate() {
        values[f] = c[k];
    }
    Ok(values)
}

/// Statistics of a linear solve.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct SolveInfo {
    pub free: usize,
    pub fixed: usize,
    pub residual: f64,
}

impl StabilizedSystem {
    pub fn dimension(&self) -> usize {
        self.load.len()
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.dimension()).filter(|&i| !self.fixed[i]).collect()
    }

    /// Free block of `K_h` and the reduced right-hand side.
    pub fn reduced(&self) -> (SparseMatrix, Vec<f64>, Vec<usize>) {
        let free = self.free_indices();
        let a = self.matrix.submatrix(&free, &free);
        let kx = self.matrix.mul_vec(&self.fixed_values);
        let b = free.iter().map(|&i| self.load[i] - kx[i]).collect();
        (a, b, free)
    }

    /// Solve for the full coefficient vector.
    pub fn solve(&self) -> Result<(Vec<f64>, SolveInfo)> {
        let (a, b, free) = self.reduced();
        let mut u = self.fixed_values.clone();
        let mut info = SolveInfo { free: free.len(), fixed: self.dimension() - free.len(), residual: 0.0 };
        if !free.is_empty() {
            let x = lu_solve(&a, &b)?;
            let ax = a.mul_vec(&x);
            let rn: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            info.residual = if bn > 0.0 { rn / bn } else { rn };
            for (k, &i) in free.iter().enumerate() {
                u[i] = x[k];
            }
        }
        Ok((u, info))
    }

    /// Smallest eigenvalue of the symmetric part of the free block (dense; small systems only).
    pub fn min_symmetric_eigenvalue(&self) -> Result<f64> {
        let (a, _, free) = self.reduced();
        let dense = a.to_dense();
        let n = free.len();
        let sym: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (dense[i][j] + dense[j][i])).collect()).collect();
        Ok(sym_eigenvalues(&sym)?.first().copied().unwrap_or(f64::INFINITY))
    }
}

/// `a_loc,h(u, v)` by element loops.
pub fn apply_bilinear(disc: &Discretization, cfg: &StabilizationConfig, u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(disc, u)?;
    check_len(disc, v)?;
    let deltas = disc.deltas(cfg)?;
    let rule = disc.rule()?;
    let d = disc.d();
    let parts: Vec<Result<f64>> = par_map_range(disc.exec, disc.space.num_cells(), |ci| {
        let eq = disc.element_quad(ci, &rule, true)?;
        let mut s = 0.0;
        for (&w, b) in eq.weights.iter().zip(&eq.basis) {
            let fu = disc.eval_coeffs(b, u);
            let fv = disc.eval_coeffs(b, v);
            let gg: f64 = (0..d).map(|a| fu.grad[a] * fv.grad[a]).sum();
            let (ut, vt) = (fu.grad[d], fv.grad[d]);
            s += w * (ut * fv.val + gg + deltas[ci] * (ut * vt - fu.lap * vt));
        }
        Ok(s)
    });
    parts.into_iter().sum()
}

/// `|||v|||_loc,h = (‖∇x v‖²_Q + ½‖v‖²_{Σ_T} + Σ δ_K ‖∂t v‖²_K)^{1/2}`.
pub fn norm_loc_h(disc: &Discretization, cfg: &StabilizationConfig, v: &[f64]) -> Result<f64> {
    check_len(disc, v)?;
    let deltas = disc.deltas(cfg)?;
    let rule = disc.rule()?;
    let d = disc.d();
    let parts: Vec<Result<f64>> = par_map_range(disc.exec, disc.space.num_cells(), |ci| {
        let eq = disc.element_quad(ci, &rule, false)?;
        let mut s = 0.0;
        for (&w, b) in eq.weights.iter().zip(&eq.basis) {
            let fv = disc.eval_coeffs(b, v);
            let gg: f64 = (0..d).map(|a| fv.grad[a] * fv.grad[a]).sum();
            s += w * (gg + deltas[ci] * fv.grad[d] * fv.grad[d]);
        }
        if let Some(face) = disc.time_face_quad(ci, &rule, 1.0, false)? {
            for (&w, b) in face.weights.iter().zip(&face.basis) {
                let fv = disc.eval_coeffs(b, v);
                s += 0.5 * w * fv.val * fv.val;
            }
        }
        Ok(s)
    });
    Ok(parts.into_iter().sum::<Result<f64>>()?.sqrt())
}

/// `(a_loc,h(v, v), |||v|||²_loc,h)` for several coefficient vectors in one element pass.
pub fn quadratic_forms(disc: &Discretization, cfg: &StabilizationConfig, vs: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    for v in vs {
        check_len(disc, v)?;
    }
    let deltas = disc.deltas(cfg)?;
    let rule = disc.rule()?;
    let d = disc.d();
    let parts: Vec<Result<Vec<(f64, f64)>>> = par_map_range(disc.exec, disc.space.num_cells(), |ci| {
        let mut acc = vec![(0.0, 0.0); vs.len()];
        let eq = disc.element_quad(ci, &rule, true)?;
        for (&w, b) in eq.weights.iter().zip(&eq.basis) {
            for (v, s) in vs.iter().zip(acc.iter_mut()) {
                let fv = disc.eval_coeffs(b, v);
                let gg: f64 = (0..d).map(|a| fv.grad[a] * fv.grad[a]).sum();
                let vt = fv.grad[d];
                s.0 += w * (vt * fv.val + gg + deltas[ci] * (vt * vt - fv.lap * vt));
                s.1 += w * (gg + deltas[ci] * vt * vt);
            }
        }
        if let Some(face) = disc.time_face_quad(ci, &rule, 1.0, false)? {
            for (&w, b) in face.weights.iter().zip(&face.basis) {
                for (v, s) in vs.iter().zip(acc.iter_mut()) {
                    let fv = disc.eval_coeffs(b, v);
                    s.1 += 0.5 * w * fv.val * fv.val;
                }
            }
        }
        Ok(acc)
    });
    let mut out = vec![(0.0, 0.0); vs.len()];
    for part in parts {
        for (o, p) in out.iter_mut().zip(part?) {
            o.0 += p.0;
            o.1 += p.1;
        }
    }
    Ok(out)
}

fn check_len(disc: &Discretization, v: &[f64]) -> Result<()> {
    let n = disc.space.space_dimension();
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: v.len() });
    }
    Ok(())
}
