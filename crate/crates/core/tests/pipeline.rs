use dvem::analysis::{error_against_exact, ExactSolutionCase};
use dvem::dg_forms::{calibrate_gamma, Discretization, GlobalSystem};
use dvem::mesh::{figure1_mesh, read_mesh, refine_uniform, write_mesh, BoundaryRule, Rectangle};
use dvem::vi_solver::{complementarity_residual, solve_uzawa, verify_vi, SolverConfig};

#[test]
fn mesh_file_round_trip_gives_the_same_solution() {
    let mesh = refine_uniform(&figure1_mesh(BoundaryRule::default()).unwrap()).unwrap();
    let mut buf = Vec::new();
    write_mesh(&mesh, &mut buf).unwrap();
    let back = read_mesh(buf.as_slice()).unwrap();
    assert_eq!(back.num_elements(), mesh.num_elements());
    assert_eq!(back.segments.len(), mesh.segments.len());

    let strip = Rectangle::new(0.0, 0.0, 2.0, 1.0).unwrap();
    let case = ExactSolutionCase::clamped(strip, 2.0);
    let solve = |m| {
        let d = Discretization::new(m).unwrap();
        let gamma = calibrate_gamma(&d, 1, 10.0, 1e-3, 200, 42).unwrap().gamma;
        let f = case.f.0.clone();
        let s = GlobalSystem::new(&d, 1, gamma, &move |p| f(p), case.g).unwrap();
        let sol = solve_uzawa(&s, &SolverConfig::default()).unwrap();
        (d, s, sol)
    };
    let (d, s, a) = solve(mesh);
    let (_, _, b) = solve(back);
    assert_eq!(a.u, b.u);

    assert!(verify_vi(&s, &a, 100, 1) >= -1e-9);
    assert!(complementarity_residual(&s, &a) <= 1e-8);
    let err = error_against_exact(&d, &case, &a.u).unwrap();
    assert!(err.norm_1dg() < 0.5, "{}", err.norm_1dg());
}

#[test]
fn all_three_consistency_parameters_converge_on_a_hanging_mesh() {
    let strip = Rectangle::new(0.0, 0.0, 2.0, 1.0).unwrap();
    let case = ExactSolutionCase::clamped(strip, 2.0);
    let coarse = refine_uniform(&figure1_mesh(BoundaryRule::default()).unwrap()).unwrap();
    let fine = refine_uniform(&coarse).unwrap();
    for delta in [-1, 0, 1] {
        let mut errors = Vec::new();
        for mesh in [coarse.clone(), fine.clone()] {
            let d = Discretization::new(mesh).unwrap();
            let gamma = calibrate_gamma(&d, delta, 10.0, 1e-3, 200, 42).unwrap().gamma;
            let f = case.f.0.clone();
            let s = GlobalSystem::new(&d, delta, gamma, &move |p| f(p), case.g).unwrap();
            let sol = solve_uzawa(&s, &SolverConfig::default()).unwrap();
            errors.push(error_against_exact(&d, &case, &sol.u).unwrap().norm_1dg());
        }
        let rate = (errors[0] / errors[1]).log2();
        assert!(rate > 0.7, "delta {delta}: {errors:?}");
    }
}
