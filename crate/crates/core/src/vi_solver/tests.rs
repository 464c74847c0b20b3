use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dg_forms::{calibrate_gamma, Discretization, GlobalSystem};
use crate::mesh::{build_uniform, build_uniform_rect, BoundaryRule, Point, PolygonalMesh, Rectangle};

fn unit(n: usize) -> PolygonalMesh {
    build_uniform(Rectangle::UNIT, n, BoundaryRule::default()).unwrap()
}

fn system(mesh: PolygonalMesh, f: &dyn Fn(Point) -> f64, g: f64) -> (Discretization, GlobalSystem) {
    let d = Discretization::new(mesh).unwrap();
    let gamma = calibrate_gamma(&d, 1, 10.0, 1e-3, 200, 42).unwrap().gamma;
    let s = GlobalSystem::new(&d, 1, gamma, f, g).unwrap();
    (d, s)
}

fn gamma2_trace_max(s: &GlobalSystem, u: &[f64]) -> f64 {
    norm_inf(&s.friction.trace_values(u))
}

#[test]
fn zero_data_gives_zero_solution() {
    let (_, s) = system(unit(2), &|_| 0.0, 1.0);
    let sol = solve_uzawa(&s, &SolverConfig::default()).unwrap();
    assert!(sol.u.iter().all(|&x| x == 0.0));
    assert!(sol.lambda.iter().all(|&x| x == 0.0));
    assert_eq!(sol.iterations, 1);
    let o = oracle_solve(&s, 1e-10).unwrap();
    assert!(o.u.iter().all(|&x| x == 0.0));
    assert_eq!(s.energy(&o.u), 0.0);
}

#[test]
fn larger_friction_bound_shrinks_gamma2_traces() {
    let mut last = f64::INFINITY;
    for g in [0.01, 0.1, 1.0, 10.0, 100.0] {
        let (_, s) = system(unit(4), &|p| 20.0 * (1.0 + p.x), g);
        let sol = solve_uzawa(&s, &SolverConfig::default()).unwrap();
        let m = gamma2_trace_max(&s, &sol.u);
        assert!(m <= last * (1.0 + 1e-9), "g = {g}: {m} > {last}");
        last = m;
    }
    assert!(last < 1e-8);
}

#[test]
fn invalid_configuration() {
    let (_, s) = system(unit(1), &|_| 1.0, 1.0);
    let bad = SolverConfig { rho: Some(-1.0), ..SolverConfig::default() };
    assert!(matches!(solve_uzawa(&s, &bad), Err(SolverError::Config(_))));
    let bad = SolverConfig { tol: 0.0, ..SolverConfig::default() };
    assert!(matches!(solve_uzawa(&s, &bad), Err(SolverError::Config(_))));
}

#[test]
fn max_iterations_reported() {
    let (_, s) = system(unit(2), &|_| 5.0, 0.5);
    let cfg = SolverConfig { rho: Some(1e-6), max_iter: 3, ..SolverConfig::default() };
    assert!(matches!(solve_uzawa(&s, &cfg), Err(SolverError::MaxIterations { iterations: 3, .. })));
}

/// Tiny configurations; the last two have a trace changing sign inside a `Γ₂` segment.
fn tiny_cases() -> Vec<(PolygonalMesh, Box<dyn Fn(Point) -> f64>, f64)> {
    let rect = |w: f64, nx: usize, ny: usize| {
        build_uniform_rect(Rectangle::new(0.0, 0.0, w, 1.0).unwrap(), nx, ny, BoundaryRule::default()).unwrap()
    };
    vec![
        (unit(1), Box::new(|_| 30.0), 1.0),
        (unit(2), Box::new(|p| 40.0 * (1.0 + p.x * p.y)), 0.5),
        (unit(2), Box::new(|_| 5.0), 50.0),
        (rect(2.0, 2, 1), Box::new(|p| -25.0 * (1.0 + p.x)), 2.0),
        (rect(2.0, 4, 1), Box::new(|p| 30.0 + 10.0 * p.y), 1.5),
        (rect(1.0, 2, 2), Box::new(|p| 40.0 * (1.0 + p.y)), 0.3),
        (unit(1), Box::new(|p| 60.0 * (p.x - 0.5)), 0.5),
        (unit(2), Box::new(|p| 80.0 * (p.x - 0.4) * (1.0 + p.y)), 0.4),
    ]
}

#[test]
fn uzawa_matches_oracle_on_tiny_systems() {
    let mut crossings = 0;
    for (k, (mesh, f, g)) in tiny_cases().into_iter().enumerate() {
        let (_, s) = system(mesh, f.as_ref(), g);
        assert!(s.num_dofs() <= 32);
        let o = oracle_solve(&s, 1e-10).unwrap();
        crossings += s
            .friction
            .edges
            .iter()
            .filter(|e| {
                let tr = e.trace.evaluate(&o.u);
                tr.start * tr.end < 0.0
            })
            .count();
        let u = solve_uzawa(&s, &SolverConfig::default()).unwrap();
        let diff = u.u.iter().zip(&o.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-6, "case {k}: {diff}");
        assert!(verify_vi(&s, &o, 100, 1) >= -1e-8 * (1.0 + norm_inf(&o.u)), "case {k}");
        assert!(verify_vi(&s, &u, 100, 1) >= -1e-7 * (1.0 + norm_inf(&u.u)), "case {k}");
    }
    assert!(crossings >= 2, "{crossings}");
}

#[test]
fn oracle_handles_sign_change_inside_a_segment() {
    let (_, s) = system(unit(1), &|p| 60.0 * (p.x - 0.5), 0.5);
    let o = oracle_solve(&s, 1e-10).unwrap();
    let tr = s.friction.edges[0].trace.evaluate(&o.u);
    assert!(tr.start * tr.end < 0.0, "{tr:?}");
    assert!(verify_vi(&s, &o, 500, 2) >= -1e-8);
}

#[test]
fn oracle_rejects_nonsymmetric_and_large_systems() {
    let d = Discretization::new(unit(1)).unwrap();
    let s = GlobalSystem::new(&d, 0, 10.0, &|_| 1.0, 1.0).unwrap();
    assert!(matches!(oracle_solve(&s, 1e-10), Err(SolverError::OracleNeedsSymmetric(0))));
    let d = Discretization::new(unit(5)).unwrap();
    let s = GlobalSystem::new(&d, 1, 10.0, &|_| 1.0, 1.0).unwrap();
    assert!(matches!(oracle_solve(&s, 1e-10), Err(SolverError::OracleTooLarge { .. })));
}

#[test]
fn verify_vi_detects_perturbation() {
    let (_, s) = system(unit(2), &|p| 40.0 * (1.0 + p.x * p.y), 0.5);
    let sol = solve_uzawa(&s, &SolverConfig::default()).unwrap();
    assert!(verify_vi(&s, &sol, 200, 3) >= -1e-7 * (1.0 + norm_inf(&sol.u)));
    let mut bad = sol.clone();
    bad.u.iter_mut().for_each(|x| *x *= 1.05);
    assert!(verify_vi(&s, &bad, 200, 3) < -1e-6);
}

#[test]
fn multiplier_feasibility_and_complementarity() {
    for (mesh, f, g) in tiny_cases() {
        let (_, s) = system(mesh, f.as_ref(), g);
        let sol = solve_uzawa(&s, &SolverConfig::default()).unwrap();
        assert!(sol.lambda.iter().all(|l| l.abs() <= 1.0));
        assert!(complementarity_residual(&s, &sol) <= 1e-6);
    }
}

#[test]
fn different_initial_multipliers_agree() {
    let (d, s) = system(unit(4), &|p| 30.0 * (1.0 + p.x), 0.8);
    let cfg = SolverConfig::default();
    let a = solve_uzawa(&s, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let l0: Vec<f64> = (0..s.friction.num_points()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b = solve_uzawa_from(&s, &cfg, &l0).unwrap();
    let diff: Vec<f64> = a.u.iter().zip(&b.u).map(|(x, y)| x - y).collect();
    let norm = d.norm_matrix().unwrap();
    assert!(norm.bilinear(&diff, &diff).sqrt() <= 10.0 * cfg.tol);
}

#[test]
fn trace_csv_has_one_row_per_iteration() {
    let (_, s) = system(unit(2), &|_| 10.0, 0.5);
    let sol = solve_uzawa(&s, &SolverConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&sol.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), sol.iterations + 1);
    assert!(text.starts_with("iteration,residual,energy,rho\n"));
}

mod properties {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn uzawa_solutions_satisfy_the_inequality(
            delta in -1i32..=1,
            a in -60.0f64..60.0,
            b in -60.0f64..60.0,
            g in 0.05f64..5.0,
        ) {
            let d = Discretization::new(unit(3)).unwrap();
            let gamma = calibrate_gamma(&d, delta, 10.0, 1e-3, 200, 42).unwrap().gamma;
            let s = GlobalSystem::new(&d, delta, gamma, &|p| a + b * p.x, g).unwrap();
            let sol = solve_uzawa(&s, &SolverConfig::default()).unwrap();
            prop_assert!(sol.lambda.iter().all(|l| l.abs() <= 1.0));
            prop_assert!(complementarity_residual(&s, &sol) <= 1e-6);
            prop_assert!(verify_vi(&s, &sol, 50, 5) >= -1e-7 * (1.0 + norm_inf(&sol.u)));
        }
    }
}
