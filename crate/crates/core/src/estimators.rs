//! Exact error norms, functional majorants, the error identity and effectivity indices.

use std::time::Instant;

use serde::Serialize;

use crate::assembly::{Discretization, Evaluator, PhysBasis, ScalarFn, StabilizationConfig};
use crate::cases::ExactValue;
use crate::error::{Error, Result};
use crate::geometry::MapPoint;
use crate::hier::{HierarchicalMesh, HierarchicalSplineSpace};
use crate::parallel::{par_map_range, Exec};
use crate::quadrature::TensorRule;
use crate::sparse::{ldlt_solve, SparseMatrix};

pub use crate::cases::friedrichs_constant;

/// Exact solution callback: value, physical gradient (time last), spatial Laplacian.
pub type ExactFn<'a> = &'a (dyn Fn(&MapPoint) -> ExactValue + Sync);

/// Bounds for β; the lower one keeps `1/β` finite when the equilibration residual vanishes.
pub const BETA_MAX: f64 = 1e8;
pub const BETA_MIN: f64 = 1e-8;

fn optimal_beta(c_f: f64, m_eq: f64, m_d: f64) -> f64 {
    if m_d == 0.0 {
        return BETA_MAX;
    }
    (c_f * m_eq / m_d).clamp(BETA_MIN, BETA_MAX)
}

/// Number of dyadic levels that best matches a mesh-size factor `M`.
pub fn coarsening_levels(m: usize) -> usize {
    if m <= 1 {
        0
    } else {
        (m as f64).log2().round() as usize
    }
}

/// Exact error norms of a discrete solution.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ErrorNorms {
    /// `‖∇x e‖_Q`.
    pub grad_x: f64,
    /// `|||e||| = (‖∇x e‖²_Q + ‖e‖²_{Σ_T})^{1/2}`.
    pub energy: f64,
    /// `|||e|||_loc,h`.
    pub loc_h: f64,
    /// `|||e|||_L = (‖Δx e‖²_Q + ‖∂t e‖²_Q + ‖∇x e‖²_{Σ_T})^{1/2}`.
    pub l: f64,
    /// `‖∇x e‖²_K` per active cell.
    #[serde(skip)]
    pub cell_grad_x: Vec<f64>,
}

#[derive(Default, Clone, Copy)]
struct NormParts {
    gx: f64,
    dt: f64,
    lap: f64,
    delta_dt: f64,
    top_val: f64,
    top_gx: f64,
}

/// All four error norms by element quadrature (face terms at `t = T`).
pub fn exact_error_norms(
    disc: &Discretization,
    stab: &StabilizationConfig,
    u: &[f64],
    exact: ExactFn,
) -> Result<ErrorNorms> {
    check_len(disc.space, u)?;
    let deltas = disc.deltas(stab)?;
    let rule = disc.rule()?;
    let d = disc.d();
    let parts: Vec<Result<NormParts>> = par_map_range(disc.exec, disc.space.num_cells(), |ci| {
        let mut p = NormParts::default();
        let eq = disc.element_quad(ci, &rule, true)?;
        for ((mp, &w), b) in eq.points.iter().zip(&eq.weights).zip(&eq.basis) {
            let uh = disc.eval_coeffs(b, u);
            let ex = exact(mp);
            let gx: f64 = (0..d).map(|a| (ex.grad[a] - uh.grad[a]).powi(2)).sum();
            let et = ex.grad[d] - uh.grad[d];
            p.gx += w * gx;
            p.dt += w * et * et;
            p.lap += w * (ex.lap - uh.lap).powi(2);
        }
        p.delta_dt = deltas[ci] * p.dt;
        if let Some(face) = disc.time_face_quad(ci, &rule, 1.0, false)? {
            for ((mp, &w), b) in face.points.iter().zip(&face.weights).zip(&face.basis) {
                let uh = disc.eval_coeffs(b, u);
                let ex = exact(mp);
                p.top_val += w * (ex.u - uh.val).powi(2);
                p.top_gx += w * (0..d).map(|a| (ex.grad[a] - uh.grad[a]).powi(2)).sum::<f64>();
            }
        }
        Ok(p)
    });
    let mut s = NormParts::default();
    let mut cell_grad_x = Vec::with_capacity(parts.len());
    for p in parts {
        let p = p?;
        cell_grad_x.push(p.gx);
        s.gx += p.gx;
        s.dt += p.dt;
        s.lap += p.lap;
        s.delta_dt += p.delta_dt;
        s.top_val += p.top_val;
        s.top_gx += p.top_gx;
    }
    Ok(ErrorNorms {
        grad_x: s.gx.sqrt(),
        energy: (s.gx + s.top_val).sqrt(),
        loc_h: (s.gx + 0.5 * s.top_val + s.delta_dt).sqrt(),
        l: (s.lap + s.dt + s.top_gx).sqrt(),
        cell_grad_x,
    })
}

/// `EId² = ‖∇x(u_0 − u_h)‖²_{Σ_0} + ‖Δx u_h + f − ∂t u_h‖²_Q`.
///
/// `initial` supplies `u_0` and its spatial gradient on the bottom face.
pub fn error_identity(disc: &Discretization, u: &[f64], source: ScalarFn, initial: ExactFn) -> Result<f64> {
    check_len(disc.space, u)?;
    let rule = disc.rule()?;
    let d = disc.d();
    let parts: Vec<Result<f64>> = par_map_range(disc.exec, disc.space.num_cells(), |ci| {
        let mut s = 0.0;
        let eq = disc.element_quad(ci, &rule, true)?;
        for ((mp, &w), b) in eq.points.iter().zip(&eq.weights).zip(&eq.basis) {
            let uh = disc.eval_coeffs(b, u);
            s += w * (uh.lap + source(mp) - uh.grad[d]).powi(2);
        }
        if let Some(face) = disc.time_face_quad(ci, &rule, 0.0, false)? {
            for ((mp, &w), b) in face.points.iter().zip(&face.weights).zip(&face.basis) {
                let uh = disc.eval_coeffs(b, u);
                let u0 = initial(mp);
                s += w * (0..d).map(|a| (u0.grad[a] - uh.grad[a]).powi(2)).sum::<f64>();
            }
        }
        Ok(s)
    });
    Ok(parts.into_iter().sum::<Result<f64>>()?.sqrt())
}

/// Vector-valued flux space: `d` copies of a scalar spline space, component-major unknowns.
#[derive(Clone, Debug)]
pub struct FluxSpace {
    pub space: HierarchicalSplineSpace,
    pub components: usize,
}

impl FluxSpace {
    /// Degree-`q` space on the primal mesh coarsened by the factor `m`.
    pub fn coarsened(primal: &HierarchicalMesh, q: usize, m: usize, exec: Exec) -> Result<Self> {
        let mesh = primal.coarsened(coarsening_levels(m));
        let space = HierarchicalSplineSpace::with_degree(mesh, q, exec)?;
        let components = primal.dim() - 1;
        Ok(Self { space, components })
    }

    pub fn dimension(&self) -> usize {
        self.components * self.space.space_dimension()
    }
}

/// Result of the flux minimization.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MajorantReport {
    /// `‖y_h − ∇x u_h‖_Q`.
    pub m_d: f64,
    /// `‖div_x y_h + f − ∂t u_h‖_Q`.
    pub m_eq: f64,
    /// Final `β = C_F m_eq / m_d`.
    pub beta: f64,
    /// `β` of the last flux solve (the functional is minimal in `y` at this value).
    pub beta_solve: f64,
    pub value: f64,
    pub iterations: usize,
    /// Majorant after each round.
    pub history: Vec<f64>,
    #[serde(skip)]
    pub flux: Vec<f64>,
    /// `‖y_h − ∇x u_h‖²_K` per primal cell.
    #[serde(skip)]
    pub indicators: Vec<f64>,
    pub t_assembly: f64,
    pub t_solve: f64,
}

/// Everything needed to evaluate and minimize the first majorant.
pub struct MajorantProblem<'a> {
    pub primal: Discretization<'a>,
    pub u: &'a [f64],
    pub source: ScalarFn<'a>,
    pub c_f: f64,
    pub flux: &'a FluxSpace,
    /// Gauss points per direction for all integrals.
    pub quad: usize,
    /// Auxiliary solution `w_h` for the second majorant: the flux then targets
    /// `2∇x u_h − ∇x w_h` and balances `∂t w_h` instead of `∂t u_h`.
    pub aux: Option<Aux<'a>>,
}

/// A discrete field on its own spline space.
#[derive(Clone, Copy)]
pub struct Aux<'a> {
    pub space: &'a HierarchicalSplineSpace,
    pub coeffs: &'a [f64],
}

/// Per-point data the flux is fitted to.
struct Target {
    grad: [f64; 3],
    dt: f64,
}

/// Assembled flux system parts.
pub struct FluxSystem {
    pub div: SparseMatrix,
    pub mass: SparseMatrix,
    /// `z_j = (f − ∂t u_h, div_x ψ_j)`.
    pub z: Vec<f64>,
    /// `g_j = (∇x u_h, ψ_j)`.
    pub g: Vec<f64>,
}

/// Residual norms squared, with the per-cell `‖y − ∇x u_h‖²_K`.
#[derive(Clone, Debug)]
pub struct FluxResiduals {
    pub m_d2: f64,
    pub m_eq2: f64,
    pub cells: Vec<f64>,
}

impl FluxResiduals {
    pub fn majorant(&self, beta: f64, c_f: f64) -> f64 {
        (1.0 + beta) * self.m_d2 + (1.0 + 1.0 / beta) * c_f * c_f * self.m_eq2
    }
}

impl<'a> MajorantProblem<'a> {
    pub fn new(primal: Discretization<'a>, u: &'a [f64], source: ScalarFn<'a>, c_f: f64, flux: &'a FluxSpace) -> Self {
        let q = (0..flux.space.dim()).map(|a| flux.space.degree(a)).max().unwrap_or(1);
        let quad = primal.quad.max(q + 2);
        Self { primal, u, source, c_f, flux, quad, aux: None }
    }

    pub fn with_aux(mut self, aux: Aux<'a>) -> Self {
        self.aux = Some(aux);
        self
    }

    fn aux_cell(&self, ci: usize) -> Result<Option<usize>> {
        match &self.aux {
            None => Ok(None),
            Some(a) => {
                let cell = self.primal.space.cells()[ci];
                a.space
                    .cell_covering(&cell)
                    .map(Some)
                    .ok_or_else(|| Error::Domain(format!("auxiliary mesh does not cover cell {cell:?}")))
            }
        }
    }

    fn target(&self, b: &PhysBasis, mp: &MapPoint, aux_ci: Option<usize>, ev: &mut Evaluator, wb: &mut PhysBasis) -> Target {
        let d = self.primal.d();
        let uh = self.primal.eval_coeffs(b, self.u);
        match (&self.aux, aux_ci) {
            (Some(a), Some(wci)) => {
                ev.eval(a.space, wci, mp, false, wb);
                let wh = self.primal.eval_coeffs(wb, a.coeffs);
                let mut grad = [0.0; 3];
                for k in 0..d {
                    grad[k] = 2.0 * uh.grad[k] - wh.grad[k];
                }
                Target { grad, dt: wh.grad[d] }
            }
            _ => Target { grad: uh.grad, dt: uh.grad[d] },
        }
    }

    fn flux_disc(&self) -> Discretization<'a> {
        Discretization::new(&self.flux.space, self.primal.geo).with_quad(self.quad).with_exec(self.primal.exec)
    }

    /// Flux-cell index covering primal cell `ci`.
    fn covering(&self, ci: usize) -> Result<usize> {
        let cell = self.primal.space.cells()[ci];
        self.flux
            .space
            .cell_covering(&cell)
            .ok_or_else(|| Error::Domain(format!("flux mesh does not cover cell {cell:?}")))
    }

    /// Assemble `Div_h`, `M_h` on flux cells and `z_h`, `g_h` on primal cells.
    pub fn assemble(&self) -> Result<FluxSystem> {
        let (div, mass) = self.assemble_matrices()?;
        let (z, g) = self.assemble_rhs()?;
        Ok(FluxSystem { div, mass, z, g })
    }

    /// `Div_h` and `M_h`; they depend on the flux space only.
    pub fn assemble_matrices(&self) -> Result<(SparseMatrix, SparseMatrix)> {
        let fs = &self.flux.space;
        let nf = fs.space_dimension();
        let nc = self.flux.components;
        let fdisc = self.flux_disc();
        let rule = fdisc.rule()?;
        let locals: Vec<Result<(Vec<f64>, Vec<f64>)>> = par_map_range(self.primal.exec, fs.num_cells(), |ci| {
            let eq = fdisc.element_quad(ci, &rule, false)?;
            let nl = fs.cell_basis(ci).funcs.len();
            let mut div = vec![0.0; nc * nl * nc * nl];
            let mut mass = vec![0.0; nl * nl];
            let n = nc * nl;
            for (&w, b) in eq.weights.iter().zip(&eq.basis) {
                for i in 0..nl {
                    for j in 0..nl {
                        mass[i * nl + j] += w * b.val[i] * b.val[j];
                    }
                }
                for c in 0..nc {
                    for i in 0..nl {
                        let gi = b.grad[i * b.dim + c];
                        for c2 in 0..nc {
                            for j in 0..nl {
                                div[(c * nl + i) * n + c2 * nl + j] += w * gi * b.grad[j * b.dim + c2];
                            }
                        }
                    }
                }
            }
            Ok((div, mass))
        });
        let pattern = block_pattern(fs, nc);
        let mut div = pattern.clone();
        let mut mass = pattern;
        for (ci, r) in locals.into_iter().enumerate() {
            let (dl, ml) = r?;
            let funcs = &fs.cell_basis(ci).funcs;
            let nl = funcs.len();
            let n = nc * nl;
            for c in 0..nc {
                for (i, &gi) in funcs.iter().enumerate() {
                    for c2 in 0..nc {
                        for (j, &gj) in funcs.iter().enumerate() {
                            div.add_to(c * nf + gi, c2 * nf + gj, dl[(c * nl + i) * n + c2 * nl + j]);
                        }
                    }
                    for (j, &gj) in funcs.iter().enumerate() {
                        mass.add_to(c * nf + gi, c * nf + gj, ml[i * nl + j]);
                    }
                }
            }
        }
        Ok((div, mass))
    }

    /// `z_h` and `g_h`.
    pub fn assemble_rhs(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(self.primal.space, self.u)?;
        let fs = &self.flux.space;
        let nf = fs.space_dimension();
        let nc = self.flux.components;
        let prule = TensorRule::new(self.quad, self.primal.dim())?;
        let locals: Vec<Result<(usize, Vec<f64>, Vec<f64>)>> =
            par_map_range(self.primal.exec, self.primal.space.num_cells(), |ci| {
                let fci = self.covering(ci)?;
                let wci = self.aux_cell(ci)?;
                let eq = self.primal.element_quad(ci, &prule, false)?;
                let nl = fs.cell_basis(fci).funcs.len();
                let mut z = vec![0.0; nc * nl];
                let mut g = vec![0.0; nc * nl];
                let mut ev = Evaluator::default();
                let mut fb = PhysBasis::default();
                let mut wb = PhysBasis::default();
                for ((mp, &w), b) in eq.points.iter().zip(&eq.weights).zip(&eq.basis) {
                    let tg = self.target(b, mp, wci, &mut ev, &mut wb);
                    ev.eval(fs, fci, mp, false, &mut fb);
                    let r = (self.source)(mp) - tg.dt;
                    for c in 0..nc {
                        for i in 0..nl {
                            z[c * nl + i] += w * r * fb.grad[i * fb.dim + c];
                            g[c * nl + i] += w * tg.grad[c] * fb.val[i];
                        }
                    }
                }
                Ok((fci, z, g))
            });
        let mut z = vec![0.0; nc * nf];
        let mut g = vec![0.0; nc * nf];
        for r in locals {
            let (fci, zl, gl) = r?;
            let funcs = &fs.cell_basis(fci).funcs;
            let nl = funcs.len();
            for c in 0..nc {
                for (i, &gi) in funcs.iter().enumerate() {
                    z[c * nf + gi] += zl[c * nl + i];
                    g[c * nf + gi] += gl[c * nl + i];
                }
            }
        }
        Ok((z, g))
    }

    /// Residual norms of a flux coefficient vector, by quadrature on primal cells.
    pub fn residuals(&self, y: &[f64]) -> Result<FluxResiduals> {
        let fs = &self.flux.space;
        let nf = fs.space_dimension();
        let nc = self.flux.components;
        if y.len() != nc * nf {
            return Err(Error::DimensionMismatch { expected: nc * nf, got: y.len() });
        }
        let prule = TensorRule::new(self.quad, self.primal.dim())?;
        let d = self.primal.d();
        let parts: Vec<Result<(f64, f64)>> = par_map_range(self.primal.exec, self.primal.space.num_cells(), |ci| {
            let fci = self.covering(ci)?;
            let wci = self.aux_cell(ci)?;
            let eq = self.primal.element_quad(ci, &prule, false)?;
            let mut ev = Evaluator::default();
            let mut fb = PhysBasis::default();
            let mut wb = PhysBasis::default();
            let (mut md, mut meq) = (0.0, 0.0);
            for ((mp, &w), b) in eq.points.iter().zip(&eq.weights).zip(&eq.basis) {
                let tg = self.target(b, mp, wci, &mut ev, &mut wb);
                ev.eval(fs, fci, mp, false, &mut fb);
                let mut yv = [0.0; 3];
                let mut div = 0.0;
                for c in 0..nc {
                    for (k, &f) in fb.funcs.iter().enumerate() {
                        let coef = y[c * nf + f];
                        yv[c] += coef * fb.val[k];
                        div += coef * fb.grad[k * fb.dim + c];
                    }
                }
                md += w * (0..d).map(|a| (yv[a] - tg.grad[a]).powi(2)).sum::<f64>();
                meq += w * (div + (self.source)(mp) - tg.dt).powi(2);
            }
            Ok((md, meq))
        });
        let mut out = FluxResiduals { m_d2: 0.0, m_eq2: 0.0, cells: Vec::with_capacity(parts.len()) };
        for p in parts {
            let (md, meq) = p?;
            out.cells.push(md);
            out.m_d2 += md;
            out.m_eq2 += meq;
        }
        Ok(out)
    }

    /// Solve `(C_F² Div_h + β M_h) y = −C_F² z_h + β g_h`.
    pub fn solve_flux(&self, sys: &FluxSystem, beta: f64) -> Result<Vec<f64>> {
        let c2 = self.c_f * self.c_f;
        let a = sys.div.linear_combination(c2, &sys.mass, beta);
        let rhs: Vec<f64> = sys.z.iter().zip(&sys.g).map(|(z, g)| -c2 * z + beta * g).collect();
        ldlt_solve(&a, &rhs)
    }

    /// Alternate flux solves and β updates, starting from `β = 1`.
    pub fn minimize(&self, iters: usize) -> Result<MajorantReport> {
        self.minimize_with(iters, None)
    }

    /// As [`minimize`](Self::minimize), reusing `Div_h` and `M_h` when given.
    pub fn minimize_with(&self, iters: usize, matrices: Option<(&SparseMatrix, &SparseMatrix)>) -> Result<MajorantReport> {
        if iters == 0 {
            return Err(Error::Config("majorant iterations must be at least 1".into()));
        }
        let t0 = Instant::now();
        let (div, mass) = match matrices {
            Some((d, m)) => (d.clone(), m.clone()),
            None => self.assemble_matrices()?,
        };
        let (z, g) = self.assemble_rhs()?;
        let sys = FluxSystem { div, mass, z, g };
        let t_assembly = t0.elapsed().as_secs_f64();
        let mut t_solve = 0.0;
        let mut beta = 1.0;
        let mut report = MajorantReport { t_assembly, ..Default::default() };
        for _ in 0..iters {
            let t1 = Instant::now();
            let y = self.solve_flux(&sys, beta)?;
            t_solve += t1.elapsed().as_secs_f64();
            let res = self.residuals(&y)?;
            report.beta_solve = beta;
            let (m_d, m_eq) = (res.m_d2.sqrt(), res.m_eq2.sqrt());
            beta = optimal_beta(self.c_f, m_eq, m_d);
            let value = res.majorant(beta, self.c_f);
            report.history.push(value);
            report.m_d = m_d;
            report.m_eq = m_eq;
            report.beta = beta;
            report.value = value;
            report.flux = y;
            report.indicators = res.cells;
        }
        report.iterations = iters;
        report.t_solve = t_solve;
        Ok(report)
    }
}

/// Per-cell `η_K² = ‖y_h − ∇x u_h‖²_K`.
pub fn local_indicators(report: &MajorantReport) -> &[f64] {
    &report.indicators
}

fn block_pattern(space: &HierarchicalSplineSpace, nc: usize) -> SparseMatrix {
    let n = space.space_dimension();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); nc * n];
    for ci in 0..space.num_cells() {
        let funcs = &space.cell_basis(ci).funcs;
        for c in 0..nc {
            for &i in funcs {
                let row = &mut rows[c * n + i];
                for c2 in 0..nc {
                    row.extend(funcs.iter().map(|&j| c2 * n + j));
                }
            }
        }
    }
    SparseMatrix::from_pattern(nc * n, rows)
}

/// Components of the second majorant.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MajorantIIReport {
    pub value: f64,
    /// `‖w_h − u_h‖²_{Σ_T}`.
    pub top: f64,
    /// `F(u_h, w_h)`.
    pub f_term: f64,
    /// `‖y_h + ∇x w_h − 2∇x u_h‖_Q`.
    pub r_d: f64,
    /// `‖div_x y_h + f − ∂t w_h‖_Q`.
    pub r_eq: f64,
    pub beta: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub flux: Vec<f64>,
    pub t_assembly: f64,
    pub t_solve: f64,
}

/// Second majorant built from an auxiliary solution `w_h`.
///
/// The flux is minimized for this functional (its residual terms are those of the
/// first majorant with `∇x u_h` replaced by `2∇x u_h − ∇x w_h` and `∂t u_h` by `∂t w_h`).
pub struct MajorantII<'a> {
    pub problem: MajorantProblem<'a>,
}

impl<'a> MajorantII<'a> {
    pub fn new(
        primal: Discretization<'a>,
        u: &'a [f64],
        source: ScalarFn<'a>,
        c_f: f64,
        flux: &'a FluxSpace,
        w: Aux<'a>,
    ) -> Self {
        Self { problem: MajorantProblem::new(primal, u, source, c_f, flux).with_aux(w) }
    }

    /// `‖w_h − u_h‖²_{Σ_T}` and `F(u_h, w_h)`.
    pub fn data_terms(&self) -> Result<(f64, f64)> {
        let pr = &self.problem;
        let w = pr.aux.expect("auxiliary field set");
        check_len(pr.primal.space, pr.u)?;
        check_len(w.space, w.coeffs)?;
        let n = pr.primal.dim();
        let d = n - 1;
        let rule = TensorRule::new(pr.quad, n)?;
        let parts: Vec<Result<(f64, f64)>> = par_map_range(pr.primal.exec, pr.primal.space.num_cells(), |ci| {
            let wci = pr.aux_cell(ci)?.expect("auxiliary field set");
            let mut ev = Evaluator::default();
            let mut wb = PhysBasis::default();
            let (mut top, mut f) = (0.0, 0.0);
            let eq = pr.primal.element_quad(ci, &rule, false)?;
            for ((mp, &wq), b) in eq.points.iter().zip(&eq.weights).zip(&eq.basis) {
                let uh = pr.primal.eval_coeffs(b, pr.u);
                ev.eval(w.space, wci, mp, false, &mut wb);
                let wh = pr.primal.eval_coeffs(&wb, w.coeffs);
                let gg: f64 = (0..d).map(|a| uh.grad[a] * (wh.grad[a] - uh.grad[a])).sum();
                f += wq * (gg + (uh.grad[d] - (pr.source)(mp)) * (wh.val - uh.val));
            }
            if let Some(face) = pr.primal.time_face_quad(ci, &rule, 1.0, false)? {
                for ((mp, &wq), b) in face.points.iter().zip(&face.weights).zip(&face.basis) {
                    let uh = pr.primal.eval_coeffs(b, pr.u);
                    ev.eval(w.space, wci, mp, false, &mut wb);
                    let wh = pr.primal.eval_coeffs(&wb, w.coeffs);
                    top += wq * (wh.val - uh.val).powi(2);
                }
            }
            Ok((top, f))
        });
        let (mut top, mut f) = (0.0, 0.0);
        for p in parts {
            let (a, b) = p?;
            top += a;
            f += b;
        }
        Ok((top, f))
    }

    /// Minimize over the flux and `β`, reusing `Div_h` and `M_h` when given.
    pub fn evaluate(&self, iters: usize, matrices: Option<(&SparseMatrix, &SparseMatrix)>) -> Result<MajorantIIReport> {
        let (top, f_term) = self.data_terms()?;
        let m = self.problem.minimize_with(iters, matrices)?;
        Ok(MajorantIIReport {
            value: top + 2.0 * f_term + m.value,
            top,
            f_term,
            r_d: m.m_d,
            r_eq: m.m_eq,
            beta: m.beta,
            iterations: m.iterations,
            flux: m.flux,
            t_assembly: m.t_assembly,
            t_solve: m.t_solve,
        })
    }

    /// The functional at a given flux, with the optimal `β` for it.
    pub fn value_at(&self, y: &[f64]) -> Result<f64> {
        let (top, f_term) = self.data_terms()?;
        let res = self.problem.residuals(y)?;
        let beta = optimal_beta(self.problem.c_f, res.m_eq2.sqrt(), res.m_d2.sqrt());
        Ok(top + 2.0 * f_term + res.majorant(beta, self.problem.c_f))
    }
}

/// Effectivity indices in the square-root convention; `None` when the error vanishes.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Effectivity {
    pub majorant_i: Option<f64>,
    pub majorant_ii: Option<f64>,
    pub eid: Option<f64>,
}

pub fn effectivity(norms: &ErrorNorms, m_i: Option<f64>, m_ii: Option<f64>, eid: Option<f64>) -> Effectivity {
    let ratio = |num: Option<f64>, den: f64| num.filter(|_| den > 0.0).map(|v| v / den);
    Effectivity {
        majorant_i: ratio(m_i.map(|m| m.max(0.0).sqrt()), norms.energy),
        majorant_ii: ratio(m_ii.map(|m| m.max(0.0).sqrt()), norms.grad_x),
        eid: ratio(eid, norms.l),
    }
}

fn check_len(space: &HierarchicalSplineSpace, v: &[f64]) -> Result<()> {
    let n = space.space_dimension();
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: v.len() });
    }
    Ok(())
}
