use std::f64::consts::PI;

use approx::assert_abs_diff_eq;

use stiga::adaptivity::{adaptive_loop, evaluate_step, initial_space, solve_scheme, LoopConfig};
use stiga::assembly::{Discretization, StabilizationConfig};
use stiga::cases::{friedrichs_constant, ExampleId, ProblemCase};
use stiga::estimators::{
    effectivity, error_identity, exact_error_norms, local_indicators, FluxSpace, MajorantProblem,
};
use stiga::geometry::{BenchmarkDomain, MapPoint};
use stiga::hier::{HierarchicalMesh, HierarchicalSplineSpace};
use stiga::parallel::Exec;

fn cfg(p: usize, q: usize, m: usize) -> LoopConfig {
    LoopConfig { p, q, r: q, flux_coarsening: m, n_ref0: 2, n_ref: 0, exec: Exec::Serial, ..Default::default() }
}

#[test]
fn friedrichs_constants() {
    assert_abs_diff_eq!(friedrichs_constant(BenchmarkDomain::UnitIntervalTime), 0.31831, epsilon = 1e-5);
    assert_abs_diff_eq!(friedrichs_constant(BenchmarkDomain::UnitSquareTime), 0.22508, epsilon = 1e-5);
    // the quarter annulus fits in a box of diameter 2√2, so √5/π is a valid bound
    assert!(friedrichs_constant(BenchmarkDomain::QuarterAnnulusTime) >= 2.0 * 2f64.sqrt() / (2.0 * PI));
}

#[test]
fn zero_approximation_of_a_sine() {
    let case = ProblemCase::new(ExampleId::Ex2 { k1: 1.0, k2: 1.0 }).unwrap();
    let space = initial_space(2, 2, 2, Exec::Serial).unwrap();
    let disc = Discretization::new(&space, case.geometry()).with_quad(10);
    let zero = vec![0.0; space.space_dimension()];
    let ex = |mp: &MapPoint| case.exact(mp);
    let n = exact_error_norms(&disc, &StabilizationConfig::default(), &zero, &ex).unwrap();
    assert_abs_diff_eq!(n.grad_x * n.grad_x, PI * PI / 4.0, epsilon = 1e-10);
    assert_abs_diff_eq!(n.cell_grad_x.iter().sum::<f64>(), PI * PI / 4.0, epsilon = 1e-10);
}

#[test]
fn exact_error_identity_with_zero_approximation() {
    // Example 1 has u_0 = 0, so EId² reduces to ‖f‖²
    let case = ProblemCase::new(ExampleId::Ex1).unwrap();
    let space = initial_space(2, 2, 2, Exec::Serial).unwrap();
    let disc = Discretization::new(&space, case.geometry()).with_quad(6);
    let zero = vec![0.0; space.space_dimension()];
    let f = |mp: &MapPoint| case.source(mp);
    let init = |mp: &MapPoint| case.initial_point(mp);
    let eid = error_identity(&disc, &zero, &f, &init).unwrap();
    let rule = disc.rule().unwrap();
    let mut f2 = 0.0;
    for ci in 0..space.num_cells() {
        let eq = disc.element_quad(ci, &rule, false).unwrap();
        f2 += eq.points.iter().zip(&eq.weights).map(|(mp, w)| w * case.source(mp).powi(2)).sum::<f64>();
    }
    assert_abs_diff_eq!(eid * eid, f2, epsilon = 1e-14);
}

#[test]
fn in_space_solution_has_vanishing_estimators() {
    let case = ProblemCase::new(ExampleId::Ex1).unwrap();
    let space = initial_space(2, 3, 2, Exec::Serial).unwrap();
    let rep = evaluate_step(&case, &space, &cfg(3, 3, 5), 0).unwrap();
    assert!(rep.norms.grad_x <= 1e-10);
    assert!(rep.majorant.value <= 1e-12, "M^I = {:e}", rep.majorant.value);
    assert!(rep.majorant_ii.as_ref().unwrap().value <= 1e-10);
    assert!(rep.eid <= 1e-9);
    assert!(rep.majorant.indicators.iter().all(|&e| e <= 1e-12));
    assert!(rep.effectivity.majorant_i.is_none() || rep.norms.energy > 0.0);
}

#[test]
fn guaranteed_bound_identity_and_additivity() {
    for (id, m) in [(ExampleId::Ex1, 5), (ExampleId::Ex2 { k1: 1.0, k2: 1.0 }, 1), (ExampleId::Ex3, 2)] {
        let case = ProblemCase::new(id).unwrap();
        for level in [2, 3] {
            let space = initial_space(2, 2, level, Exec::Serial).unwrap();
            // the Gaussian peak needs more points on coarse meshes
            let c = LoopConfig { quad_extra: if matches!(id, ExampleId::Ex3) { 4 } else { 1 }, ..cfg(2, 3, m) };
            let rep = evaluate_step(&case, &space, &c, 0).unwrap();
            let e2 = rep.norms.energy.powi(2);
            assert!(rep.majorant.value >= e2 * (1.0 - 1e-8), "{id} level {level}");
            assert!(rep.effectivity.majorant_i.unwrap() >= 1.0 - 1e-8);
            assert!(rep.effectivity.majorant_ii.unwrap() >= 1.0 - 1e-8);
            let l2 = rep.norms.l.powi(2);
            assert!((rep.eid.powi(2) - l2).abs() <= 1e-6 * l2, "{id}: EId² {} vs {}", rep.eid.powi(2), l2);
            let sum: f64 = local_indicators(&rep.majorant).iter().sum();
            assert_abs_diff_eq!(sum, rep.majorant.m_d.powi(2), epsilon = 1e-12 * sum.max(1e-300));
            // β is the closed-form optimum for the final residuals
            let beta = case.friedrichs_constant() * rep.majorant.m_eq / rep.majorant.m_d;
            assert_abs_diff_eq!(rep.majorant.beta, beta, epsilon = 1e-12 * beta);
            assert!(rep.majorant.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        }
    }
}

#[test]
fn error_norms_decrease_under_uniform_refinement() {
    let case = ProblemCase::new(ExampleId::Ex2 { k1: 1.0, k2: 1.0 }).unwrap();
    let c = LoopConfig { uniform: true, n_ref: 3, n_ref0: 1, majorant_ii: false, exec: Exec::Serial, ..cfg(2, 3, 1) };
    let res = adaptive_loop(&case, &c).unwrap();
    assert!(res.failure.is_none());
    for w in res.steps.windows(2) {
        assert!(w[1].norms.grad_x < w[0].norms.grad_x);
        assert!(w[1].norms.energy < w[0].norms.energy);
        assert!(w[1].norms.loc_h < w[0].norms.loc_h);
        assert!(w[1].norms.l < w[0].norms.l);
    }
}

/// Two-element primal mesh with a flux space on the same mesh.
fn two_element_problem(case: &ProblemCase) -> (HierarchicalSplineSpace, Vec<f64>, FluxSpace) {
    let mesh = HierarchicalMesh::new(vec![vec![0.0, 0.5, 1.0], vec![0.0, 1.0]], &[2, 2]);
    let space = HierarchicalSplineSpace::with_degree(mesh, 2, Exec::Serial).unwrap();
    assert_eq!(space.num_cells(), 2);
    let disc = Discretization::new(&space, case.geometry());
    let f = |mp: &MapPoint| case.source(mp);
    let ud = |mp: &MapPoint| case.dirichlet(mp);
    let u0 = |mp: &MapPoint| case.initial(mp);
    let (u, _, _) = solve_scheme(&disc, &StabilizationConfig::default(), &f, &ud, &u0).unwrap();
    let flux = FluxSpace::coarsened(space.mesh(), 3, 1, Exec::Serial).unwrap();
    (space, u, flux)
}

#[test]
fn converged_flux_is_stationary() {
    let case = ProblemCase::new(ExampleId::Ex2 { k1: 1.0, k2: 1.0 }).unwrap();
    let (space, u, flux) = two_element_problem(&case);
    let f = |mp: &MapPoint| case.source(mp);
    let disc = Discretization::new(&space, case.geometry()).with_quad(6);
    let pr = MajorantProblem::new(disc, &u, &f, case.friedrichs_constant(), &flux);
    let rep = pr.minimize(3).unwrap();
    let j = |y: &[f64]| pr.residuals(y).unwrap().majorant(rep.beta_solve, pr.c_f);
    let j0 = j(&rep.flux);
    for k in 0..rep.flux.len() {
        for s in [-1e-4, 1e-4] {
            let mut y = rep.flux.clone();
            y[k] += s;
            assert!(j(&y) > j0, "coefficient {k}, step {s}");
        }
    }
}

#[test]
fn larger_friedrichs_constant_raises_the_index() {
    let case = ProblemCase::new(ExampleId::Ex2 { k1: 1.0, k2: 1.0 }).unwrap();
    let (space, u, flux) = two_element_problem(&case);
    let f = |mp: &MapPoint| case.source(mp);
    let ex = |mp: &MapPoint| case.exact(mp);
    let disc = Discretization::new(&space, case.geometry()).with_quad(6);
    let norms = exact_error_norms(&disc, &StabilizationConfig::default(), &u, &ex).unwrap();
    let c_f = case.friedrichs_constant();
    let m1 = MajorantProblem::new(disc, &u, &f, c_f, &flux).minimize(3).unwrap();
    let m2 = MajorantProblem::new(disc, &u, &f, 2.0 * c_f, &flux).minimize(3).unwrap();
    let i1 = effectivity(&norms, Some(m1.value), None, None).majorant_i.unwrap();
    let i2 = effectivity(&norms, Some(m2.value), None, None).majorant_i.unwrap();
    assert!(i1 >= 1.0 && i2 > i1, "{i1} {i2}");
}

#[test]
fn peak_element_ranks_high_after_two_steps() {
    let case = ProblemCase::new(ExampleId::Ex3).unwrap();
    let c = LoopConfig { n_ref0: 2, n_ref: 2, flux_coarsening: 2, majorant_ii: false, exec: Exec::Serial, ..Default::default() };
    let res = adaptive_loop(&case, &c).unwrap();
    let last = res.steps.last().unwrap();
    let mesh = last.snapshot.mesh.as_ref().unwrap();
    let peak = mesh.leaf_containing(&[0.8, 0.05]);
    let k = last.snapshot.cells.iter().position(|c| *c == peak).unwrap();
    let eta = &last.snapshot.indicators;
    let above = eta.iter().filter(|&&e| e > eta[k]).count();
    assert!((above as f64) < 0.05 * eta.len() as f64, "rank {above} of {}", eta.len());
}
