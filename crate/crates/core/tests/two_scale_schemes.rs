use fehmm::fem::Kinematics;
use fehmm::material::{benchmark_phases, MaterialLaw, MaterialMap};
use fehmm::mesh::{mesh_from_phase_grid, refine_uniform, ElementKind, Mesh, PhaseGrid};
use fehmm::two_scale::{
    max_nodal_displacement_of, run_alternating, run_nested, solve, MacroProblem, Scheme, SolveTrace, SolverConfig,
    TwoScaleSolver,
};
use fehmm::verify::{quadratic_tail, speedup_report};

fn micro() -> Mesh {
    let g = PhaseGrid::new(2, 2, vec![1, 2, 2, 1]).unwrap();
    refine_uniform(&refine_uniform(&mesh_from_phase_grid(&g, 500.0, ElementKind::Quad4).unwrap()).unwrap()).unwrap()
}

fn material() -> MaterialMap {
    let [a, b] = benchmark_phases();
    MaterialMap::new(MaterialLaw::NeoHookean, a, b)
}

fn beam() -> MacroProblem {
    MacroProblem::cantilever_force(5000.0, 1000.0, 100.0, 3, 1, 200.0).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn check_trace(trace: &SolveTrace) {
    let mut sum = 0.0;
    for s in &trace.steps {
        assert_eq!(s.residuals.len(), s.iteration_times.len());
        assert_eq!(s.residuals.len(), s.micro_iterations.len());
        assert_eq!(s.residuals[0], 1.0);
        assert!(s.iteration_times.iter().all(|t| *t >= 0.0));
        assert!(s.iteration_times.iter().sum::<f64>() <= s.step_time + 1e-9);
        sum += s.step_time;
    }
    assert!(sum <= trace.total_time + 1e-9);
}

#[test]
fn schemes_agree_step_by_step() {
    let cfg = SolverConfig::default();
    let (sn, tn) = run_nested(&beam(), micro(), material(), &cfg).unwrap();
    let (sa, ta) = run_alternating(&beam(), micro(), material(), &cfg).unwrap();
    let report = speedup_report(&tn, &ta).unwrap();
    assert!(report.u_max_agree, "{report:?}");
    assert!(report.max_extra_iterations <= 1, "{report:?}");
    assert!(rel(sn.macro_d[7], sa.macro_d[7]) < 1e-6);
    for t in [&tn, &ta] {
        check_trace(t);
        let u = t.u_max();
        assert!(u.windows(2).all(|w| w[1] > w[0]));
    }
    for s in &tn.steps {
        assert!(quadratic_tail(&s.residuals, 10.0, cfg.micro_tol), "{:?}", s.residuals);
    }
}

#[test]
fn end_of_step_equilibrium_on_both_scales() {
    let problem = beam();
    for scheme in [Scheme::Nested, Scheme::Alternating] {
        let cfg = SolverConfig {
            scheme,
            n_load_steps: 2,
            ..Default::default()
        };
        let solver = TwoScaleSolver::new(&problem, micro(), material(), cfg).unwrap();
        let (state, trace) = solver.run().unwrap();
        assert!(state.rves.iter().all(|r| r.is_converged(cfg.micro_tol)), "{scheme:?}");
        assert_eq!(state.rves.len(), 3 * 4);
        assert!(trace.steps.iter().all(|s| *s.residuals.last().unwrap() < cfg.macro_tol));
        assert_eq!(state.load_factor, 1.0);
    }
}

#[test]
fn final_state_independent_of_load_stepping() {
    for scheme in [Scheme::Nested, Scheme::Alternating] {
        let one = SolverConfig {
            scheme,
            n_load_steps: 1,
            ..Default::default()
        };
        let four = SolverConfig { n_load_steps: 4, ..one };
        let (_, t1) = solve(&beam(), micro(), material(), &one).unwrap();
        let (_, t4) = solve(&beam(), micro(), material(), &four).unwrap();
        let (a, b) = (t1.u_max()[0], *t4.u_max().last().unwrap());
        assert!(rel(a, b) < 1e-6, "{scheme:?}: {a} vs {b}");
    }
}

#[test]
fn displacement_control_is_monotone() {
    let p = MacroProblem::cantilever_displacement(5000.0, 1000.0, 100.0, 3, 1, 1100.0).unwrap();
    let (_, t) = solve(&p, micro(), material(), &SolverConfig::default()).unwrap();
    let u = t.u_max();
    assert_eq!(u.len(), 4);
    assert!(u.windows(2).all(|w| w[1] > w[0]));
    assert!(u[3] >= 1100.0);
}

#[test]
fn largest_displacement_sits_on_the_loaded_edge() {
    let (state, _) = solve(&beam(), micro(), material(), &SolverConfig { n_load_steps: 1, ..Default::default() }).unwrap();
    let (_, node) = max_nodal_displacement_of(&state.macro_d);
    assert_eq!(beam().mesh.nodes[node][0], 5000.0);
}

#[test]
fn fully_linear_problem_converges_in_one_iteration() {
    let cfg = SolverConfig {
        law: MaterialLaw::LinearElastic,
        kinematics: Kinematics::Linear,
        ..Default::default()
    };
    for scheme in [Scheme::Nested, Scheme::Alternating] {
        let (_, t) = solve(&beam(), micro(), material().with_law(MaterialLaw::LinearElastic), &SolverConfig { scheme, ..cfg }).unwrap();
        assert!(t.macro_iterations().iter().all(|&n| n == 1), "{scheme:?} {:?}", t.macro_iterations());
    }
}

#[test]
fn invalid_configuration_rejected() {
    let bad = SolverConfig {
        macro_tol: 1.5,
        ..Default::default()
    };
    assert!(solve(&beam(), micro(), material(), &bad).is_err());
    let bad = SolverConfig {
        n_load_steps: 0,
        ..Default::default()
    };
    assert!(solve(&beam(), micro(), material(), &bad).is_err());
}
