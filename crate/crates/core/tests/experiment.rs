use std::fs;

use stiga::adaptivity::{adaptive_loop, LoopConfig};
use stiga::cases::{catalog, ExampleId, ProblemCase};
use stiga::experiment::{format_csv, format_vtk, report_rows, run_experiment, ExperimentConfig, CSV_HEADER};
use stiga::parallel::Exec;

fn loop_cfg(n_ref0: usize, n_ref: usize) -> LoopConfig {
    LoopConfig { n_ref0, n_ref, flux_coarsening: 2, majorant_ii: false, exec: Exec::Serial, ..Default::default() }
}

/// Parse one `SCALARS name` block of a legacy VTK file.
fn vtk_scalars(text: &str, name: &str) -> Vec<f64> {
    let mut lines = text.lines().skip_while(|l| !l.starts_with(&format!("SCALARS {name}")));
    lines.next();
    lines.next();
    lines.map_while(|l| l.trim().parse::<f64>().ok()).collect()
}

#[test]
fn unrefined_mesh_exports_sixteen_quads() {
    let case = ProblemCase::new(ExampleId::Ex1).unwrap();
    let res = adaptive_loop(&case, &loop_cfg(2, 0)).unwrap();
    let vtk = format_vtk(&res.steps[0], case.geometry()).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version 3.0"));
    assert!(vtk.contains("CELLS 16 80"));
    assert!(vtk.contains("CELL_TYPES 16"));
    assert!(vtk.contains("POINTS 64 double"));
    assert_eq!(vtk_scalars(&vtk, "level"), vec![2.0; 16]);
}

#[test]
fn indicator_field_sums_to_the_majorant_term() {
    let case = ProblemCase::new(ExampleId::Ex3).unwrap();
    let res = adaptive_loop(&case, &loop_cfg(1, 2)).unwrap();
    for s in &res.steps {
        let eta = vtk_scalars(&format_vtk(s, case.geometry()).unwrap(), "eta2");
        assert_eq!(eta.len(), s.num_cells);
        let sum: f64 = eta.iter().sum();
        let m2 = s.majorant.m_d.powi(2);
        assert!((sum - m2).abs() <= 1e-12 * m2, "{sum} vs {m2}");
    }
}

#[test]
fn annulus_mesh_uses_hexahedra() {
    let case = ProblemCase::new(ExampleId::Ex5).unwrap();
    let c = LoopConfig { p: 2, q: 2, r: 2, quad_extra: 0, ..loop_cfg(0, 0) };
    let res = adaptive_loop(&case, &c).unwrap();
    let vtk = format_vtk(&res.steps[0], case.geometry()).unwrap();
    assert!(vtk.contains("CELLS 1 9"));
    assert!(vtk.lines().any(|l| l == "12"));
}

#[test]
fn csv_has_one_row_per_step() {
    let case = ProblemCase::new(ExampleId::Ex1).unwrap();
    let res = adaptive_loop(&case, &loop_cfg(1, 3)).unwrap();
    let rows = report_rows(&res, false);
    let csv = format_csv(&rows, true);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 1 + res.steps.len());
    let cols = CSV_HEADER.split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == cols));
    // first step has no rate; the M^II column is empty when it is disabled
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[10], "");
    assert_eq!(first[6], "");
    for r in &rows {
        assert!(r.t_as_u >= 0.0 && r.t_sol_u >= 0.0 && r.t_as_y >= 0.0);
    }
}

#[test]
fn strict_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let text = |name: &str| {
        format!(
            "example = ex3\np = 2\nq = 3\nM = 2\nsigma = 0.4\nn_ref0 = 1\nn_ref = 3\nmajorant_ii = false\nstrict = true\ncsv = {name}.csv\njson = {name}.json\nvtk_dir = {name}_vtk\n"
        )
    };
    for name in ["a", "b"] {
        let path = dir.path().join(format!("{name}.cfg"));
        fs::write(&path, text(name)).unwrap();
        let cfg = ExperimentConfig::from_file(&path).unwrap();
        assert!(cfg.strict);
        let exp = run_experiment(&cfg).unwrap();
        assert_eq!(exp.rows.len(), 4);
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    let b = fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(fs::read_dir(dir.path().join("a_vtk")).unwrap().count(), 4);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(meta["steps"].as_array().unwrap().len(), 4);
}

#[test]
fn config_round_trip_and_errors() {
    let cfg = ExperimentConfig::parse("example = ex2(2,1)\np = 3\nq = 3\nuniform = true\n").unwrap();
    assert_eq!(cfg.example, ExampleId::Ex2 { k1: 2.0, k2: 1.0 });
    assert_eq!(cfg.run.p, 3);
    assert!(cfg.run.uniform);
    assert!(ExperimentConfig::parse("example = ex9\n").is_err());
    assert!(ExperimentConfig::parse("example = ex1\nfoo = 1\n").is_err());
    assert!(ExperimentConfig::parse("example = ex1\np = 2\np = 3\n").is_err());
    assert!(ExperimentConfig::parse("example = ex4(-1)\n").is_err());
}

#[test]
fn catalog_cases_are_consistent() {
    for id in catalog() {
        let case = ProblemCase::new(id).unwrap();
        let worst = case.validate(1000, 1e-8).unwrap();
        assert!(worst <= 1e-8, "{id}: {worst:e}");
    }
    let ex1 = ProblemCase::new(ExampleId::Ex1).unwrap();
    let mp = ex1.geometry().eval(&[0.5, 0.5], false).unwrap();
    assert!((ex1.source(&mp) - 0.25).abs() < 1e-15);
    let ex2 = ProblemCase::new(ExampleId::Ex2 { k1: 1.0, k2: 1.0 }).unwrap();
    assert!((ex2.exact(&mp).u - 1.0).abs() < 1e-15);
    // Example 5 vanishes on the lateral boundary of the parameter box
    let ex5 = ProblemCase::new(ExampleId::Ex5).unwrap();
    for s in [0.0, 0.3, 0.7, 1.0] {
        for xi in [[0.0, s, 0.5], [1.0, s, 0.5], [s, 0.0, 0.5], [s, 1.0, 0.5]] {
            let mp = ex5.geometry().eval(&xi, false).unwrap();
            assert!(ex5.exact(&mp).u.abs() < 1e-14);
        }
    }
}
