//! Bulk marking, convergence rates and the solve-estimate-mark-refine loop.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;

use crate::assembly::{assemble_stabilized_system, impose_dirichlet, Discretization, ScalarFn, SolveInfo, StabilizationConfig};
use crate::cases::ProblemCase;
use crate::error::{Error, Result};
use crate::estimators::{
    effectivity, error_identity, exact_error_norms, Aux, Effectivity, ErrorNorms, FluxSpace, MajorantII, MajorantIIReport,
    MajorantProblem, MajorantReport,
};
use crate::geometry::{GeometryMap, MapPoint};
use crate::hier::{Cell, HierarchicalMesh, HierarchicalSplineSpace};
use crate::parallel::Exec;

/// Cells whose squared indicators carry at least the fraction `sigma` of the total.
///
/// Sorted by value descending with ties broken by index ascending; the result is
/// the shortest such prefix, returned in that order. `sigma = 0` marks the single
/// largest cell and `sigma = 1` every cell with a positive indicator.
pub fn bulk_mark(eta2: &[f64], sigma: f64) -> Result<Vec<usize>> {
    if eta2.is_empty() {
        return Err(Error::Config("cannot mark an empty indicator table".into()));
    }
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::Config(format!("bulk parameter must lie in [0, 1], got {sigma}")));
    }
    if let Some(bad) = eta2.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Config(format!("indicators must be nonnegative, got {bad}")));
    }
    let mut order: Vec<usize> = (0..eta2.len()).collect();
    order.sort_by(|&a, &b| eta2[b].partial_cmp(&eta2[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    if sigma == 0.0 {
        return Ok(vec![order[0]]);
    }
    if sigma == 1.0 {
        return Ok(order.into_iter().filter(|&i| eta2[i] > 0.0).collect());
    }
    let total: f64 = eta2.iter().sum();
    let target = sigma * total;
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in order {
        out.push(i);
        acc += eta2[i];
        if acc >= target {
            break;
        }
    }
    Ok(out)
}

/// `rate_i = log(e_i / e_{i+1}) / log(s_i / s_{i+1})`; NaN where the scale did not change.
pub fn eoc(values: &[f64], scales: &[f64]) -> Result<Vec<f64>> {
    if values.len() != scales.len() {
        return Err(Error::DimensionMismatch { expected: values.len(), got: scales.len() });
    }
    if values.iter().chain(scales).any(|v| !(*v > 0.0)) {
        return Err(Error::Config("convergence rates need positive values".into()));
    }
    Ok(values
        .windows(2)
        .zip(scales.windows(2))
        .map(|(e, s)| if s[0] == s[1] { f64::NAN } else { (e[0] / e[1]).ln() / (s[0] / s[1]).ln() })
        .collect())
}

/// Which cell indicator drives marking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorSource {
    /// `‖y_h − ∇x u_h‖²_K` from the first majorant.
    #[default]
    MajorantDK,
    /// `‖∇x e‖²_K` from the exact solution.
    ExactErrorK,
}

impl FromStr for IndicatorSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majorant_d_k" | "majorant" => Ok(Self::MajorantDK),
            "exact_error_k" | "exact" => Ok(Self::ExactErrorK),
            _ => Err(Error::Unknown { kind: "indicator", name: s.to_string() }),
        }
    }
}

impl fmt::Display for IndicatorSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MajorantDK => "majorant_d_k",
            Self::ExactErrorK => "exact_error_k",
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MarkingConfig {
    pub sigma: f64,
    pub source: IndicatorSource,
}

impl Default for MarkingConfig {
    fn default() -> Self {
        Self { sigma: 0.4, source: IndicatorSource::MajorantDK }
    }
}

/// Default guard on the number of primal unknowns.
pub const DEFAULT_DIM_CAP: usize = 200_000;

#[derive(Clone, Debug, Serialize)]
pub struct LoopConfig {
    pub n_ref0: usize,
    pub n_ref: usize,
    /// Primal degree.
    pub p: usize,
    /// Flux degree.
    pub q: usize,
    /// Degree of the auxiliary solution in the second majorant.
    pub r: usize,
    /// Flux mesh is coarser than the primal one by this factor.
    pub flux_coarsening: usize,
    pub stab: StabilizationConfig,
    pub marking: MarkingConfig,
    /// Refine every cell instead of marking.
    pub uniform: bool,
    pub majorant_iters: usize,
    pub majorant_ii: bool,
    /// Extra Gauss points per direction for estimator and error integrals.
    pub quad_extra: usize,
    pub dim_cap: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            n_ref0: 1,
            n_ref: 8,
            p: 2,
            q: 3,
            r: 3,
            flux_coarsening: 5,
            stab: StabilizationConfig::default(),
            marking: MarkingConfig::default(),
            uniform: false,
            majorant_iters: 3,
            majorant_ii: true,
            quad_extra: 1,
            dim_cap: DEFAULT_DIM_CAP,
            exec: Exec::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Config(format!("primal degree must be at least 2, got {}", self.p)));
        }
        if self.q < self.p {
            return Err(Error::Config(format!("flux degree {} below primal degree {}", self.q, self.p)));
        }
        if self.r < 2 {
            return Err(Error::Config("auxiliary degree must be at least 2".into()));
        }
        if self.flux_coarsening == 0 {
            return Err(Error::Config("flux coarsening factor must be positive".into()));
        }
        if self.majorant_iters == 0 {
            return Err(Error::Config("majorant iterations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.marking.sigma) {
            return Err(Error::Config(format!("bulk parameter must lie in [0, 1], got {}", self.marking.sigma)));
        }
        self.stab.validate()
    }

    fn estimator_quad(&self) -> usize {
        self.p.max(self.q).max(self.r) + 2 + self.quad_extra
    }
}

/// Wall-clock seconds for assembling and solving one field.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Timing {
    pub assembly: f64,
    pub solve: f64,
}

impl Timing {
    pub fn total(&self) -> f64 {
        self.assembly + self.solve
    }
}

/// Active cells of one step with their marking data.
#[derive(Clone, Debug, Default)]
pub struct MeshSnapshot {
    pub mesh: Option<HierarchicalMesh>,
    pub cells: Vec<Cell>,
    /// The indicator used for marking, per cell.
    pub indicators: Vec<f64>,
    /// Marked cell indices (empty on the last step).
    pub marked: Vec<usize>,
    /// Cells that exact-error marking would choose on the same mesh.
    pub marked_exact: Vec<usize>,
}

/// Everything recorded at one step.
#[derive(Clone, Debug, Default)]
pub struct StepReport {
    pub step: usize,
    pub dofs_u: usize,
    pub dofs_y: usize,
    pub dofs_w: usize,
    pub num_cells: usize,
    /// Largest element size.
    pub h: f64,
    pub norms: ErrorNorms,
    pub majorant: MajorantReport,
    pub majorant_ii: Option<MajorantIIReport>,
    pub eid: f64,
    pub effectivity: Effectivity,
    pub solve_info: SolveInfo,
    pub t_u: Timing,
    pub t_y: Timing,
    pub t_w: Timing,
    pub snapshot: MeshSnapshot,
    /// Coefficients of `u_h`.
    pub solution: Vec<f64>,
}

impl StepReport {
    /// `t_appr / t_er.est`: primal cost over estimator cost.
    pub fn time_ratio(&self) -> f64 {
        let est = self.t_y.total() + self.t_w.total();
        if est > 0.0 {
            self.t_u.total() / est
        } else {
            f64::NAN
        }
    }

    /// Mesh scale for rates: `h` on uniform runs, `N^{-1/(d+1)}` on adaptive ones.
    pub fn scale(&self, uniform: bool, dim: usize) -> f64 {
        if uniform {
            self.h
        } else {
            (self.dofs_u as f64).powf(-1.0 / dim as f64)
        }
    }
}

/// Steps completed, plus the error that ended the loop early, if any.
#[derive(Debug, Default)]
pub struct LoopResult {
    pub steps: Vec<StepReport>,
    /// Space-time dimension.
    pub dim: usize,
    pub failure: Option<Error>,
}

impl LoopResult {
    /// `(e.o.c. of |||e|||_loc,h, e.o.c. of |||e|||_L)` per step (`None` on the first).
    pub fn rates(&self, uniform: bool) -> Vec<(Option<f64>, Option<f64>)> {
        let mut out = vec![(None, None)];
        for w in self.steps.windows(2) {
            let s = [w[0].scale(uniform, self.dim), w[1].scale(uniform, self.dim)];
            let r = |a: f64, b: f64| eoc(&[a, b], &s).ok().map(|v| v[0]).filter(|v| v.is_finite());
            out.push((r(w[0].norms.loc_h, w[1].norms.loc_h), r(w[0].norms.l, w[1].norms.l)));
        }
        out.truncate(self.steps.len());
        out
    }
}

/// Initial primal space: uniform level `n_ref0` over the unit parameter cube.
pub fn initial_space(dim: usize, p: usize, n_ref0: usize, exec: Exec) -> Result<HierarchicalSplineSpace> {
    let mesh = HierarchicalMesh::uniform(vec![vec![0.0, 1.0]; dim], &vec![p; dim], n_ref0);
    HierarchicalSplineSpace::with_degree(mesh, p, exec)
}

/// Assemble, impose data and solve the stabilized scheme on one space.
pub fn solve_scheme(
    disc: &Discretization,
    stab: &StabilizationConfig,
    source: ScalarFn,
    u_d: ScalarFn,
    u_0: ScalarFn,
) -> Result<(Vec<f64>, SolveInfo, Timing)> {
    let t0 = Instant::now();
    let mut sys = assemble_stabilized_system(disc, source, stab)?;
    impose_dirichlet(&mut sys, disc.space, disc.geo, u_d, u_0)?;
    let assembly = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let (u, info) = sys.solve()?;
    Ok((u, info, Timing { assembly, solve: t1.elapsed().as_secs_f64() }))
}

/// One full step on a fixed primal space: solve, estimate, and compute exact norms.
pub fn evaluate_step(case: &ProblemCase, space: &HierarchicalSplineSpace, cfg: &LoopConfig, step: usize) -> Result<StepReport> {
    let geo: &GeometryMap = case.geometry();
    let source = |mp: &MapPoint| case.source(mp);
    let u_d = |mp: &MapPoint| case.dirichlet(mp);
    let u_0 = |mp: &MapPoint| case.initial(mp);
    let exact = |mp: &MapPoint| case.exact(mp);
    let initial = |mp: &MapPoint| case.initial_point(mp);
    let c_f = case.friedrichs_constant();

    let disc = Discretization::new(space, geo).with_exec(cfg.exec);
    let (u, solve_info, t_u) = solve_scheme(&disc, &cfg.stab, &source, &u_d, &u_0)?;
    let est = disc.with_quad(cfg.estimator_quad());

    let flux = FluxSpace::coarsened(space.mesh(), cfg.q, cfg.flux_coarsening, cfg.exec)?;
    let problem = MajorantProblem::new(est, &u, &source, c_f, &flux);
    let t0 = Instant::now();
    let (div, mass) = problem.assemble_matrices()?;
    let t_mats = t0.elapsed().as_secs_f64();
    let majorant = problem.minimize_with(cfg.majorant_iters, Some((&div, &mass)))?;
    let t_y = Timing { assembly: t_mats + majorant.t_assembly, solve: majorant.t_solve };

    let (majorant_ii, t_w, dofs_w) = if cfg.majorant_ii {
        let w_space = HierarchicalSplineSpace::with_degree(flux.space.mesh().clone(), cfg.r, cfg.exec)?;
        let wdisc = Discretization::new(&w_space, geo).with_exec(cfg.exec);
        let (w, _, mut t_w) = solve_scheme(&wdisc, &cfg.stab, &source, &u_d, &u_0)?;
        let aux = Aux { space: &w_space, coeffs: &w };
        let m2 = MajorantII::new(est, &u, &source, c_f, &flux, aux);
        let m2 = m2.evaluate(cfg.majorant_iters, Some((&div, &mass)))?;
        t_w.assembly += m2.t_assembly;
        t_w.solve += m2.t_solve;
        (Some(m2), t_w, w_space.space_dimension())
    } else {
        (None, Timing::default(), 0)
    };

    let norms = exact_error_norms(&est, &cfg.stab, &u, &exact)?;
    let eid = error_identity(&est, &u, &source, &initial)?;
    let eff = effectivity(&norms, Some(majorant.value), majorant_ii.as_ref().map(|m| m.value), Some(eid));
    let h = disc.element_sizes()?.into_iter().fold(0.0, f64::max);
    Ok(StepReport {
        step,
        dofs_u: space.space_dimension(),
        dofs_y: flux.dimension(),
        dofs_w,
        num_cells: space.num_cells(),
        h,
        norms,
        majorant,
        majorant_ii,
        eid,
        effectivity: eff,
        solve_info,
        t_u,
        t_y,
        t_w,
        snapshot: MeshSnapshot { cells: space.cells().to_vec(), ..Default::default() },
        solution: u,
    })
}

/// Run `n_ref + 1` steps (initial mesh plus each refinement).
///
/// A failing step ends the loop; completed steps are kept.
pub fn adaptive_loop(case: &ProblemCase, cfg: &LoopConfig) -> Result<LoopResult> {
    cfg.validate()?;
    let dim = case.geometry().dim();
    let mut space = initial_space(dim, cfg.p, cfg.n_ref0, cfg.exec)?;
    let mut result = LoopResult { dim, ..Default::default() };
    for step in 0..=cfg.n_ref {
        if space.space_dimension() > cfg.dim_cap {
            warn!("stopping: {} unknowns exceed the cap {}", space.space_dimension(), cfg.dim_cap);
            break;
        }
        let mut rep = match evaluate_step(case, &space, cfg, step) {
            Ok(r) => r,
            Err(e) => {
                warn!("step {step} failed: {e}");
                result.failure = Some(e);
                break;
            }
        };
        let indicators = match cfg.marking.source {
            IndicatorSource::MajorantDK => rep.majorant.indicators.clone(),
            IndicatorSource::ExactErrorK => rep.norms.cell_grad_x.clone(),
        };
        info!(
            "step {step}: {} dofs, |||e||| = {:.4e}, Ieff(M^I) = {:.3}",
            rep.dofs_u,
            rep.norms.energy,
            rep.effectivity.majorant_i.unwrap_or(f64::NAN)
        );
        rep.snapshot.mesh = Some(space.mesh().clone());
        rep.snapshot.indicators = indicators;
        if step < cfg.n_ref {
            let marked = if cfg.uniform {
                (0..space.num_cells()).collect()
            } else {
                match bulk_mark(&rep.snapshot.indicators, cfg.marking.sigma) {
                    Ok(m) => m,
                    Err(e) => {
                        result.steps.push(rep);
                        result.failure = Some(e);
                        break;
                    }
                }
            };
            rep.snapshot.marked_exact = bulk_mark(&rep.norms.cell_grad_x, cfg.marking.sigma).unwrap_or_default();
            let cells: Vec<Cell> = marked.iter().map(|&i| space.cells()[i]).collect();
            rep.snapshot.marked = marked;
            match space.refine_marked(&cells, cfg.exec) {
                Ok(s) => space = s,
                Err(e) => {
                    result.steps.push(rep);
                    result.failure = Some(e);
                    break;
                }
            }
        }
        result.steps.push(rep);
    }
    Ok(result)
}

/// Marking minimality: dropping any marked cell leaves less than `sigma` of the total.
pub fn is_minimal_marking(eta2: &[f64], marked: &[usize], sigma: f64) -> bool {
    let total: f64 = eta2.iter().sum();
    let sum: f64 = marked.iter().map(|&i| eta2[i]).sum();
    if sum < sigma * total {
        return false;
    }
    marked.len() <= 1 || marked.iter().all(|&i| sum - eta2[i] < sigma * total)
}
