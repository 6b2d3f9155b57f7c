//! Experiment runner plumbing: flat key-value configs, report rows, and CSV,
//! JSON and VTK output.
//!
//! A config is a list of `key = value` lines; `#` starts a comment.
//!
//! ```text
//! example = ex1
//! p = 2
//! q = 3
//! M = 5
//! sigma = 0.4
//! n_ref0 = 1
//! n_ref = 8
//! csv = ex1.csv
//! ```
//!
//! Relative output paths are resolved against the directory of the config file.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::adaptivity::{adaptive_loop, IndicatorSource, LoopConfig, LoopResult, StepReport};
use crate::assembly::StabMode;
use crate::cases::{ExampleId, ProblemCase};
use crate::error::{Error, Result};
use crate::geometry::GeometryMap;
use crate::parallel::Exec;

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub example: ExampleId,
    pub run: LoopConfig,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    /// Directory for one VTK file per step.
    pub vtk_dir: Option<PathBuf>,
    /// Serial execution and no timings in the CSV, so reruns are byte-identical.
    pub strict: bool,
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad flag `{v}` for `{key}`"))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_in(text, None)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse_in(&text, path.parent())
    }

    fn parse_in(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut run = LoopConfig::default();
        let mut example = None;
        let mut r = None;
        let mut out = [None, None, None];
        let mut strict = false;
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            match key {
                "example" => example = Some(v.parse::<ExampleId>()?),
                "p" => run.p = parse_value(key, v)?,
                "q" => run.q = parse_value(key, v)?,
                "r" => r = Some(parse_value(key, v)?),
                "M" | "flux_gap" => run.flux_coarsening = parse_value(key, v)?,
                "sigma" => run.marking.sigma = parse_value(key, v)?,
                "indicator" => run.marking.source = v.parse::<IndicatorSource>()?,
                "theta" => run.stab.theta = parse_value(key, v)?,
                "inverse_cap" => run.stab.inverse_cap = parse_bool(key, v)?,
                "stab" => run.stab.mode = v.parse::<StabMode>()?,
                "c_int1" => run.stab.c_int1 = Some(parse_value(key, v)?),
                "n_ref0" => run.n_ref0 = parse_value(key, v)?,
                "n_ref" => run.n_ref = parse_value(key, v)?,
                "uniform" => run.uniform = parse_bool(key, v)?,
                "majorant_iters" => run.majorant_iters = parse_value(key, v)?,
                "majorant_ii" => run.majorant_ii = parse_bool(key, v)?,
                "quad_extra" => run.quad_extra = parse_value(key, v)?,
                "dim_cap" => run.dim_cap = parse_value(key, v)?,
                "strict" => strict = parse_bool(key, v)?,
                "csv" => out[0] = Some(v),
                "json" => out[1] = Some(v),
                "vtk_dir" => out[2] = Some(v),
                _ => return Err(Error::Unknown { kind: "config key", name: key.to_string() }),
            }
        }
        let example = example.ok_or_else(|| Error::Config("missing `example`".into()))?;
        run.r = r.unwrap_or(run.q);
        if strict {
            run.exec = Exec::Serial;
        }
        run.validate()?;
        // reject bad parameters (λ ≤ 0, non-finite k) before any run
        ProblemCase::new(example)?;
        let resolve = |p: Option<&str>| {
            p.map(|s| match base {
                Some(b) if Path::new(s).is_relative() => b.join(s),
                _ => PathBuf::from(s),
            })
        };
        let [csv, json, vtk] = out;
        Ok(Self { example, run, csv: resolve(csv), json: resolve(json), vtk_dir: resolve(vtk), strict })
    }
}

/// One table row: errors, estimates, effectivity indices and timings of a step.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ReportRow {
    pub step: usize,
    pub dofs_u: usize,
    pub dofs_y: usize,
    pub dofs_w: usize,
    pub grad_x_error: f64,
    pub ieff_majorant_i: Option<f64>,
    pub ieff_majorant_ii: Option<f64>,
    pub loc_h_error: f64,
    pub l_error: f64,
    pub ieff_eid: Option<f64>,
    pub eoc_loc_h: Option<f64>,
    pub eoc_l: Option<f64>,
    pub t_as_u: f64,
    pub t_as_y: f64,
    pub t_as_w: f64,
    pub t_sol_u: f64,
    pub t_sol_y: f64,
    pub t_sol_w: f64,
    pub time_ratio: f64,
}

pub const CSV_HEADER: &str = "step,dofs_u,dofs_y,dofs_w,grad_x_error,ieff_majorant_i,ieff_majorant_ii,\
loc_h_error,l_error,ieff_eid,eoc_loc_h,eoc_l,t_as_u,t_as_y,t_as_w,t_sol_u,t_sol_y,t_sol_w,time_ratio";

pub fn report_rows(result: &LoopResult, uniform: bool) -> Vec<ReportRow> {
    let rates = result.rates(uniform);
    result
        .steps
        .iter()
        .zip(rates)
        .map(|(s, (eoc_loc_h, eoc_l))| ReportRow {
            step: s.step,
            dofs_u: s.dofs_u,
            dofs_y: s.dofs_y,
            dofs_w: s.dofs_w,
            grad_x_error: s.norms.grad_x,
            ieff_majorant_i: s.effectivity.majorant_i,
            ieff_majorant_ii: s.effectivity.majorant_ii,
            loc_h_error: s.norms.loc_h,
            l_error: s.norms.l,
            ieff_eid: s.effectivity.eid,
            eoc_loc_h,
            eoc_l,
            t_as_u: s.t_u.assembly,
            t_as_y: s.t_y.assembly,
            t_as_w: s.t_w.assembly,
            t_sol_u: s.t_u.solve,
            t_sol_y: s.t_y.solve,
            t_sol_w: s.t_w.solve,
            time_ratio: s.time_ratio(),
        })
        .collect()
}

// 17 significant digits round-trip every f64
fn num(out: &mut String, v: f64) {
    let _ = write!(out, ",{v:.16e}");
}

fn opt(out: &mut String, v: Option<f64>) {
    match v {
        Some(v) => num(out, v),
        None => out.push(','),
    }
}

/// CSV text; `with_timings = false` leaves the timing columns empty.
pub fn format_csv(rows: &[ReportRow], with_timings: bool) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{},{}", r.step, r.dofs_u, r.dofs_y, r.dofs_w);
        num(&mut out, r.grad_x_error);
        opt(&mut out, r.ieff_majorant_i);
        opt(&mut out, r.ieff_majorant_ii);
        num(&mut out, r.loc_h_error);
        num(&mut out, r.l_error);
        opt(&mut out, r.ieff_eid);
        opt(&mut out, r.eoc_loc_h);
        opt(&mut out, r.eoc_l);
        let t = [r.t_as_u, r.t_as_y, r.t_as_w, r.t_sol_u, r.t_sol_y, r.t_sol_w, r.time_ratio];
        for v in t {
            if with_timings {
                num(&mut out, v);
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}

pub fn export_report(rows: &[ReportRow], path: &Path, with_timings: bool) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, format_csv(rows, with_timings))?;
    Ok(())
}

/// VTK legacy ASCII grid of the active cells of one step, mapped to physical space.
///
/// Cells become quads (2D) or hexahedra (3D) through their mapped corners, with
/// cell fields `level` and `eta2` (the majorant indicator `‖y_h − ∇x u_h‖²_K`).
pub fn format_vtk(step: &StepReport, geo: &GeometryMap) -> Result<String> {
    let snap = &step.snapshot;
    let mesh = snap.mesh.as_ref().ok_or_else(|| Error::Config("snapshot carries no mesh".into()))?;
    let n = geo.dim();
    let (corners, cell_type): (&[[usize; 3]], u8) = match n {
        2 => (&[[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], 9),
        3 => (
            &[[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
            12,
        ),
        _ => return Err(Error::DimensionMismatch { expected: 3, got: n }),
    };
    let nc = snap.cells.len();
    let k = corners.len();
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "step {} ({} cells)", step.step, nc);
    let _ = writeln!(out, "ASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {} double", nc * k);
    for c in &snap.cells {
        let b = mesh.cell_bounds(c);
        for corner in corners {
            let xi: Vec<f64> = (0..n).map(|a| if corner[a] == 0 { b[a].0 } else { b[a].1 }).collect();
            let x = geo.eval(&xi, false)?.x;
            let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", x[0], x[1], if n == 3 { x[2] } else { 0.0 });
        }
    }
    let _ = writeln!(out, "CELLS {} {}", nc, nc * (k + 1));
    for i in 0..nc {
        let ids: Vec<String> = (i * k..(i + 1) * k).map(|j| j.to_string()).collect();
        let _ = writeln!(out, "{k} {}", ids.join(" "));
    }
    let _ = writeln!(out, "CELL_TYPES {nc}");
    for _ in 0..nc {
        let _ = writeln!(out, "{cell_type}");
    }
    let _ = writeln!(out, "CELL_DATA {nc}");
    let _ = writeln!(out, "SCALARS level int 1\nLOOKUP_TABLE default");
    for c in &snap.cells {
        let _ = writeln!(out, "{}", c.level());
    }
    let _ = writeln!(out, "SCALARS eta2 double 1\nLOOKUP_TABLE default");
    for i in 0..nc {
        let _ = writeln!(out, "{:.16e}", step.majorant.indicators.get(i).copied().unwrap_or(0.0));
    }
    Ok(out)
}

pub fn export_mesh(step: &StepReport, geo: &GeometryMap, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, format_vtk(step, geo)?)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
struct StepMeta {
    step: usize,
    num_cells: usize,
    h: f64,
    energy_error: f64,
    majorant_i: f64,
    m_d: f64,
    m_eq: f64,
    beta: f64,
    majorant_ii: Option<f64>,
    eid: f64,
    marked: usize,
    solver_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
struct RunMeta<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    parallel: bool,
    elapsed_seconds: f64,
    failure: Option<String>,
    rows: &'a [ReportRow],
    steps: Vec<StepMeta>,
}

/// Outcome of [`run_experiment`].
#[derive(Debug)]
pub struct Experiment {
    pub result: LoopResult,
    pub rows: Vec<ReportRow>,
    pub elapsed: f64,
}

/// Run the loop described by `cfg` and write the requested files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    let case = ProblemCase::new(cfg.example)?;
    let t0 = Instant::now();
    let result = adaptive_loop(&case, &cfg.run)?;
    let elapsed = t0.elapsed().as_secs_f64();
    let rows = report_rows(&result, cfg.run.uniform);
    if let Some(path) = &cfg.csv {
        export_report(&rows, path, !cfg.strict)?;
    }
    if let Some(dir) = &cfg.vtk_dir {
        for s in &result.steps {
            export_mesh(s, case.geometry(), &dir.join(format!("mesh_{:03}.vtk", s.step)))?;
        }
    }
    if let Some(path) = &cfg.json {
        let meta = RunMeta {
            version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            parallel: cfg.run.exec.is_parallel(),
            elapsed_seconds: elapsed,
            failure: result.failure.as_ref().map(|e| e.to_string()),
            rows: &rows,
            steps: result
                .steps
                .iter()
                .map(|s| StepMeta {
                    step: s.step,
                    num_cells: s.num_cells,
                    h: s.h,
                    energy_error: s.norms.energy,
                    majorant_i: s.majorant.value,
                    m_d: s.majorant.m_d,
                    m_eq: s.majorant.m_eq,
                    beta: s.majorant.beta,
                    majorant_ii: s.majorant_ii.as_ref().map(|m| m.value),
                    eid: s.eid,
                    marked: s.snapshot.marked.len(),
                    solver_residual: s.solve_info.residual,
                })
                .collect(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Config(format!("metadata: {e}")))?;
        fs::write(path, text)?;
    }
    Ok(Experiment { result, rows, elapsed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_protocol() {
        let cfg = ExperimentConfig::parse(
            "# example 1\nexample = ex1\np = 2\nq = 3\nM = 5\nsigma = 0.4\nn_ref0 = 1\nn_ref = 8\nstrict = yes\n",
        )
        .unwrap();
        assert_eq!(cfg.example, ExampleId::Ex1);
        assert_eq!((cfg.run.p, cfg.run.q, cfg.run.r, cfg.run.flux_coarsening), (2, 3, 3, 5));
        assert_eq!(cfg.run.exec, Exec::Serial);
        assert!(cfg.csv.is_none());
    }

    #[test]
    fn parse_errors() {
        assert!(ExperimentConfig::parse("p = 2\n").is_err());
        assert!(ExperimentConfig::parse("example = ex1\nfoo = 1\n").is_err());
        assert!(ExperimentConfig::parse("example = ex1\np = 2\np = 3\n").is_err());
        assert!(ExperimentConfig::parse("example = ex1\np\n").is_err());
        assert!(ExperimentConfig::parse("example = ex4(-1)\n").is_err());
        assert!(ExperimentConfig::parse("example = ex1\nsigma = 2\n").is_err());
    }

    #[test]
    fn csv_layout() {
        let row = ReportRow { step: 3, grad_x_error: 0.1, ieff_majorant_i: Some(1.5), ..Default::default() };
        let text = format_csv(&[row], false);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let cols: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cols.len(), CSV_HEADER.split(',').count());
        assert_eq!(cols[4], "1.0000000000000001e-1");
        assert_eq!(cols[6], "");
        assert!(cols[12..].iter().all(|c| c.is_empty()));
    }
}
