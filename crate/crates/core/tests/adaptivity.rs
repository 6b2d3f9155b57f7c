use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use stiga::adaptivity::{adaptive_loop, bulk_mark, eoc, is_minimal_marking, IndicatorSource, LoopConfig, MarkingConfig};
use stiga::cases::{ExampleId, ProblemCase};
use stiga::parallel::Exec;

/// Greedy oracle: sort by value, stable on index, take until the target is reached.
fn greedy(eta2: &[f64], sigma: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..eta2.len()).collect();
    idx.sort_by(|&a, &b| eta2[b].total_cmp(&eta2[a]));
    let total: f64 = eta2.iter().sum();
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in idx {
        if acc >= sigma * total && !out.is_empty() {
            break;
        }
        acc += eta2[i];
        out.push(i);
    }
    out
}

#[test]
fn marking_examples() {
    let eta = [4.0, 3.0, 2.0, 1.0];
    assert_eq!(bulk_mark(&eta, 0.4).unwrap(), vec![0]);
    assert_eq!(bulk_mark(&eta, 0.6).unwrap(), vec![0, 1]);
    assert_eq!(bulk_mark(&eta, 1.0).unwrap(), vec![0, 1, 2, 3]);
    assert_eq!(bulk_mark(&eta, 0.0).unwrap(), vec![0]);
    assert_eq!(bulk_mark(&[1.0, 0.0, 2.0], 1.0).unwrap(), vec![2, 0]);
    // ties go to the lower index
    assert_eq!(bulk_mark(&[1.0, 3.0, 3.0, 1.0], 0.3).unwrap(), vec![1]);
    assert!(bulk_mark(&[], 0.5).is_err());
    assert!(bulk_mark(&[1.0, -1.0], 0.5).is_err());
    assert!(bulk_mark(&[1.0], 1.5).is_err());
}

proptest! {
    #[test]
    fn marking_is_the_minimal_greedy_prefix(
        eta in prop::collection::vec(0.0f64..10.0, 1..60),
        sigma in 0.01f64..0.99,
    ) {
        let m = bulk_mark(&eta, sigma).unwrap();
        prop_assert_eq!(&m, &greedy(&eta, sigma));
        let total: f64 = eta.iter().sum();
        if total > 0.0 {
            prop_assert!(is_minimal_marking(&eta, &m, sigma));
        }
    }
}

#[test]
fn rate_examples() {
    let r = eoc(&[1.0, 0.25], &[1.0, 0.5]).unwrap();
    assert_abs_diff_eq!(r[0], 2.0, epsilon = 1e-15);
    assert_eq!(eoc(&[1.0, 1.0], &[0.3, 0.1]).unwrap(), vec![0.0]);
    assert!(eoc(&[1.0, 0.0], &[1.0, 0.5]).is_err());
    assert!(eoc(&[1.0, -1.0], &[1.0, 0.5]).is_err());
    assert!(eoc(&[1.0], &[1.0, 0.5]).is_err());
    assert!(eoc(&[1.0, 0.5], &[0.5, 0.5]).unwrap()[0].is_nan());
}

fn quick(n_ref: usize) -> LoopConfig {
    LoopConfig { n_ref0: 1, n_ref, flux_coarsening: 2, majorant_ii: false, exec: Exec::Serial, ..Default::default() }
}

#[test]
fn zero_steps_give_one_report() {
    let case = ProblemCase::new(ExampleId::Ex1).unwrap();
    let res = adaptive_loop(&case, &quick(0)).unwrap();
    assert_eq!(res.steps.len(), 1);
    assert!(res.steps[0].snapshot.marked.is_empty());
}

#[test]
fn loop_is_deterministic_and_grows() {
    let case = ProblemCase::new(ExampleId::Ex3).unwrap();
    let a = adaptive_loop(&case, &quick(4)).unwrap();
    let b = adaptive_loop(&case, &quick(4)).unwrap();
    assert!(a.failure.is_none());
    assert_eq!(a.steps.len(), 5);
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!(x.snapshot.marked, y.snapshot.marked);
        assert_eq!(x.snapshot.cells, y.snapshot.cells);
        assert_eq!(x.solution, y.solution);
        assert_eq!(x.majorant.value.to_bits(), y.majorant.value.to_bits());
    }
    for w in a.steps.windows(2) {
        assert!(!w[0].snapshot.marked.is_empty());
        assert!(w[1].dofs_u >= w[0].dofs_u);
        assert!(w[1].num_cells > w[0].num_cells);
    }
    assert!(a.steps.last().unwrap().dofs_u > a.steps[0].dofs_u);
    for s in &a.steps[..4] {
        assert!(is_minimal_marking(&s.snapshot.indicators, &s.snapshot.marked, 0.4));
    }
}

#[test]
fn parallel_matches_serial() {
    let case = ProblemCase::new(ExampleId::Ex1).unwrap();
    let a = adaptive_loop(&case, &quick(2)).unwrap();
    let b = adaptive_loop(&case, &LoopConfig { exec: Exec::Parallel, ..quick(2) }).unwrap();
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!(x.snapshot.marked, y.snapshot.marked);
        assert_abs_diff_eq!(x.majorant.value, y.majorant.value, epsilon = 1e-12 * x.majorant.value);
    }
}

#[test]
fn exact_error_marking_and_dimension_cap() {
    let case = ProblemCase::new(ExampleId::Ex2 { k1: 1.0, k2: 1.0 }).unwrap();
    let c = LoopConfig {
        marking: MarkingConfig { sigma: 0.4, source: IndicatorSource::ExactErrorK },
        ..quick(2)
    };
    let res = adaptive_loop(&case, &c).unwrap();
    for s in &res.steps[..2] {
        assert_eq!(s.snapshot.indicators, s.norms.cell_grad_x);
        assert_eq!(s.snapshot.marked, s.snapshot.marked_exact);
    }
    let capped = adaptive_loop(&case, &LoopConfig { dim_cap: 30, ..quick(5) }).unwrap();
    assert!(capped.steps.len() < 6);
    assert!(capped.steps.iter().all(|s| s.dofs_u <= 30));
}

#[test]
fn invalid_configurations_are_rejected() {
    let case = ProblemCase::new(ExampleId::Ex1).unwrap();
    for bad in [
        LoopConfig { p: 1, ..quick(0) },
        LoopConfig { q: 1, ..quick(0) },
        LoopConfig { flux_coarsening: 0, ..quick(0) },
        LoopConfig { majorant_iters: 0, ..quick(0) },
        LoopConfig { marking: MarkingConfig { sigma: 1.5, ..Default::default() }, ..quick(0) },
    ] {
        assert!(adaptive_loop(&case, &bad).is_err());
    }
}

#[test]
fn uniform_rates_for_a_smooth_solution() {
    let case = ProblemCase::new(ExampleId::Ex2 { k1: 1.0, k2: 1.0 }).unwrap();
    let c = LoopConfig { uniform: true, n_ref0: 1, n_ref: 4, flux_coarsening: 1, ..quick(4) };
    let res = adaptive_loop(&case, &c).unwrap();
    let rates = res.rates(true);
    assert!(rates[0].0.is_none());
    for (loc, l) in &rates[2..] {
        assert!((loc.unwrap() - 2.0).abs() <= 0.2, "{rates:?}");
        assert!((l.unwrap() - 1.0).abs() <= 0.2, "{rates:?}");
    }
}
