use gauss_colloc::analysis::node_errors;
use gauss_colloc::problem::{
    augment_bolza, builtin, map_domain, ControlProblem, ControlSet, Dynamics, QuadraticRunningCost,
    ScalarIntegrator, SecondDerivatives,
};
use gauss_colloc::solver::{
    evaluate_controls, reduced_gradient, reduced_objective, solve, solve_costate, solve_state,
    solve_with_operators, SolverConfig, StepKind, Termination,
};
use gauss_colloc::transcription::{
    costate_to_multipliers, eval_residual, extended_nodes, kkt_residual, Trajectory,
};
use gauss_colloc::{CollocationOperators, Error};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `x' = x - x^3 / 3 + u`.
struct Cubic;

impl Dynamics for Cubic {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0] - x[0].powi(3) / 3.0 + u[0])
    }
    fn jacobian_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0 - x[0] * x[0])
    }
    fn jacobian_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn hamiltonian_hessians(&self, x: &DVector<f64>, _u: &DVector<f64>, l: &DVector<f64>) -> SecondDerivatives {
        let mut h = SecondDerivatives::zeros(1, 1);
        h.xx[(0, 0)] = -2.0 * x[0] * l[0];
        h
    }
}

fn cubic_problem() -> ControlProblem {
    let base = ControlProblem::builder(Cubic, vec![1.2])
        .name("cubic")
        .control_set(ControlSet::bounds(vec![-0.8], vec![0.8]).unwrap())
        .domain(0.0, 2.0)
        .build()
        .unwrap();
    map_domain(&augment_bolza(&base, QuadraticRunningCost).unwrap())
}

fn max_err(p: &ControlProblem, n: usize) -> (f64, f64, f64) {
    let r = solve(p, n, &SolverConfig::default(), None).unwrap();
    assert!(r.converged, "n = {n}");
    node_errors(p, &CollocationOperators::gauss(n).unwrap().rule().clone(), &r.traj).unwrap()
}

#[test]
fn state_solve_examples() {
    let still = ControlProblem::builder(ScalarIntegrator, vec![-0.4]).build().unwrap();
    let ops = CollocationOperators::gauss(7).unwrap();
    let s = solve_state(&still, &ops, &DMatrix::zeros(7, 1), still.x0(), None).unwrap();
    assert!(s.x.iter().all(|v| *v == -0.4));

    let a = 1.75;
    let s = solve_state(&still, &ops, &DMatrix::from_element(7, 1, 1.0), &DVector::from_element(1, a), None).unwrap();
    for (i, t) in extended_nodes(ops.rule()).into_iter().enumerate() {
        assert!((s.x[(i, 0)] - (a + t + 1.0)).abs() <= 1e-11);
    }
}

#[test]
fn state_solve_with_analytic_control_converges() {
    let p = builtin("hager84-constrained").unwrap();
    let sol = p.analytic().unwrap();
    let mut errs = Vec::new();
    for n in [5, 10, 20, 40] {
        let ops = CollocationOperators::gauss(n).unwrap();
        let u = Trajectory::from_analytic(&p, ops.rule()).unwrap().u;
        let s = solve_state(&p, &ops, &u, p.x0(), None).unwrap();
        let e = extended_nodes(ops.rule())
            .iter()
            .enumerate()
            .map(|(i, &t)| (s.x[(i, 0)] - sol.state(t)[0]).abs())
            .fold(0.0, f64::max);
        errs.push(e);
    }
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[3] < errs[0] / 16.0, "{errs:?}");
}

#[test]
fn nonlinear_state_solve_meets_defect_tolerance() {
    let p = cubic_problem();
    for n in [4, 16, 40] {
        let ops = CollocationOperators::gauss(n).unwrap();
        let u = DMatrix::from_fn(n, 1, |i, _| 0.8 * (i as f64).cos());
        let s = solve_state(&p, &ops, &u, p.x0(), None).unwrap();
        assert!(s.iterations >= 2, "nonlinear solve should need Newton steps");
        let traj = Trajectory::new(s.x.clone(), u.clone(), DMatrix::zeros(n + 2, 2)).unwrap();
        let r = eval_residual(&p, &ops, &traj).unwrap();
        assert!(r.t1.amax() <= 1e-11, "n = {n}: {}", r.t1.amax());
        assert!(r.t2.amax() <= 1e-12);
    }
}

/// `x' = x^2 + u`, which blows up in finite time from large `x0`.
struct Riccati;

impl Dynamics for Riccati {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[0] * x[0] + u[0])
    }
    fn jacobian_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 2.0 * x[0])
    }
    fn jacobian_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn hamiltonian_hessians(&self, _x: &DVector<f64>, _u: &DVector<f64>, l: &DVector<f64>) -> SecondDerivatives {
        let mut h = SecondDerivatives::zeros(1, 1);
        h.xx[(0, 0)] = 2.0 * l[0];
        h
    }
}

#[test]
fn state_solve_reports_divergence() {
    // The exact solution from x0 = 10 escapes at t = -0.9.
    let p = ControlProblem::builder(Riccati, vec![10.0]).build().unwrap();
    let ops = CollocationOperators::gauss(12).unwrap();
    let r = solve_state(&p, &ops, &DMatrix::zeros(12, 1), p.x0(), None);
    assert!(matches!(r, Err(Error::NewtonDivergence { .. }) | Err(Error::EvaluationFailure(_))), "{r:?}");
}

#[test]
fn stiff_but_stable_state_solve_is_relatively_accurate() {
    let p = cubic_problem();
    let ops = CollocationOperators::gauss(30).unwrap();
    let u = DMatrix::from_element(30, 1, 1e9);
    let s = solve_state(&p, &ops, &u, p.x0(), None).unwrap();
    // x - x^3/3 + 1e9 = 0 near x = 1442.
    assert!((s.x[(30, 0)] - 1443.0).abs() < 2.0);
    assert!(s.defect <= 1e-10 * s.x.amax());
}

#[test]
fn costate_examples() {
    let still = ControlProblem::builder(ScalarIntegrator, vec![0.0]).build().unwrap();
    let ops = CollocationOperators::gauss(5).unwrap();
    let u = DMatrix::from_element(5, 1, 0.2);
    let s = solve_state(&still, &ops, &u, still.x0(), None).unwrap();
    let term = DVector::from_element(1, 3.5);
    let lam = solve_costate(&still, &ops, &s.x, &u, &term).unwrap();
    assert!(lam.iter().all(|v| (v - 3.5).abs() <= 1e-13));

    let p = builtin("hager84-constrained").unwrap();
    let sol = p.analytic().unwrap();
    let mut prev = f64::INFINITY;
    for n in [5, 10, 20, 40] {
        let ops = CollocationOperators::gauss(n).unwrap();
        let a = Trajectory::from_analytic(&p, ops.rule()).unwrap();
        let x_end = a.state(n + 1);
        let lam = solve_costate(&p, &ops, &a.x, &a.u, &p.cost_gradient(&x_end).unwrap()).unwrap();
        let e = extended_nodes(ops.rule())
            .iter()
            .enumerate()
            .map(|(i, &t)| (lam[(i, 0)] - sol.costate(t)[0]).abs())
            .fold(0.0, f64::max);
        assert!(e < prev, "n = {n}");
        prev = e;
        let traj = Trajectory::new(a.x.clone(), a.u.clone(), lam).unwrap();
        let r = eval_residual(&p, &ops, &traj).unwrap();
        assert!(r.t4.amax() <= 1e-10 && r.t5.amax() <= 1e-10 && r.t3.amax() <= 1e-10, "n = {n}");
    }
}

#[test]
fn benchmark_n20_accuracy() {
    let p = builtin("hager84-constrained").unwrap();
    let (ex, eu, el) = max_err(&p, 20);
    assert!(ex <= 5e-3 && eu <= 5e-3 && el <= 5e-3, "{ex:e} {eu:e} {el:e}");
}

#[test]
fn benchmark_errors_shrink() {
    let p = builtin("hager84-constrained").unwrap();
    let e4 = max_err(&p, 4);
    let e40 = max_err(&p, 40);
    assert!(e40.0 < e4.0 && e40.1 < e4.1 && e40.2 < e4.2, "{e4:?} vs {e40:?}");
}

#[test]
fn converged_reports_honor_contract() {
    let cfg = SolverConfig::default();
    for name in ["hager84-constrained", "hager84-unconstrained"] {
        let p = builtin(name).unwrap();
        for n in [3, 12, 25] {
            let r = solve(&p, n, &cfg, None).unwrap();
            assert!(r.converged, "{name} n = {n}");
            assert_eq!(r.termination, Termination::Converged);
            assert!(r.y_norm <= cfg.tol_y);
            for i in 1..=n {
                let t = &r.traj;
                let hu = p.grad_u_h(&t.state(i), &t.control(i), &t.costate(i)).unwrap();
                assert!(p.control_set().stationarity(&t.control(i), &hu).amax() <= cfg.tol_y);
            }
            let ops = CollocationOperators::gauss(n).unwrap();
            let mu = costate_to_multipliers(&r.traj.lambda, ops.rule()).unwrap();
            let kkt = kkt_residual(&p, &ops, &r.traj, &mu).unwrap();
            assert!(kkt.max_abs() <= 10.0 * cfg.tol_y, "{name} n = {n}: {:e}", kkt.max_abs());
        }
    }
}

#[test]
fn armijo_steps_decrease_objective() {
    for p in [builtin("hager84-constrained").unwrap(), cubic_problem()] {
        let r = solve(&p, 16, &SolverConfig::default(), None).unwrap();
        assert!(r.converged, "{}", p.name());
        assert_eq!(r.history[0].kind, StepKind::Initial);
        for w in r.history.windows(2) {
            if matches!(w[1].kind, StepKind::Newton | StepKind::Gradient) {
                assert!(w[1].objective < w[0].objective, "{}: iter {}", p.name(), w[1].iter);
            }
        }
    }
}

#[test]
fn active_set_matches_benchmark_structure() {
    let p = builtin("hager84-unconstrained").unwrap();
    let r = solve(&p, 20, &SolverConfig::default(), None).unwrap();
    assert!(r.converged);
    assert_eq!(r.active_count(), 0);
    assert!(r.residual.stationarity() <= 1e-10);

    // u* = 1 on the first half of the interval.
    let p = builtin("hager84-constrained").unwrap();
    let r = solve(&p, 20, &SolverConfig::default(), None).unwrap();
    let ops = CollocationOperators::gauss(20).unwrap();
    for (i, &t) in ops.rule().nodes().iter().enumerate() {
        if t < -0.1 {
            assert!(r.active_set[i], "node {t} should be active");
        } else if t > 0.1 {
            assert!(!r.active_set[i], "node {t} should be free");
        }
    }
}

#[test]
fn nonlinear_problem_solves() {
    let p = cubic_problem();
    let r = solve(&p, 24, &SolverConfig::default(), None).unwrap();
    assert!(r.converged, "{:?} after {}", r.termination, r.outer_iters);
    assert!(r.traj.u.iter().all(|u| u.abs() <= 0.8));
    // Driving x from 1.2 towards 0 saturates the lower bound early on.
    assert!(r.active_count() > 0);
}

#[test]
fn warm_start_reuses_solution() {
    let p = builtin("hager84-constrained").unwrap();
    let cfg = SolverConfig::default();
    let ops = CollocationOperators::gauss(12).unwrap();
    let cold = solve_with_operators(&p, &ops, &cfg, None).unwrap();
    let warm = solve_with_operators(&p, &ops, &cfg, Some(&cold.traj)).unwrap();
    assert!(warm.converged);
    assert!(warm.outer_iters <= 1);
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in [builtin("hager84-constrained").unwrap(), cubic_problem()] {
        for n in [1, 3, 6] {
            let ops = CollocationOperators::gauss(n).unwrap();
            for _ in 0..10 {
                let u = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-0.7..0.7));
                let (traj, _, j) = evaluate_controls(&p, &ops, &u, None).unwrap();
                assert!((j - reduced_objective(&p, &ops, &u).unwrap()).abs() <= 1e-14 * j.abs().max(1.0));
                let g = reduced_gradient(&p, &ops, &traj).unwrap();
                let h = 1e-5;
                let fd = DMatrix::from_fn(n, 1, |i, c| {
                    let (mut up, mut dn) = (u.clone(), u.clone());
                    up[(i, c)] += h;
                    dn[(i, c)] -= h;
                    (reduced_objective(&p, &ops, &up).unwrap() - reduced_objective(&p, &ops, &dn).unwrap()) / (2.0 * h)
                });
                let rel = (&g - &fd).amax() / g.amax();
                assert!(rel <= 1e-5, "{} n = {n}: {rel:e}", p.name());
            }
        }
    }
}

#[test]
fn invalid_inputs_rejected() {
    let native = ControlProblem::builder(ScalarIntegrator, vec![0.0]).domain(0.0, 1.0).build().unwrap();
    assert!(matches!(solve(&native, 4, &SolverConfig::default(), None), Err(Error::InvalidInput(_))));
    let p = builtin("hager84-constrained").unwrap();
    let bad = SolverConfig { armijo_c: 1.0, ..SolverConfig::default() };
    assert!(bad.validate().is_err());
    assert!(solve(&p, 4, &bad, None).is_err());
    assert!(solve(&p, 0, &SolverConfig::default(), None).is_err());
    let ops = CollocationOperators::gauss(4).unwrap();
    assert!(solve_state(&p, &ops, &DMatrix::zeros(3, 1), p.x0(), None).is_err());
}

#[test]
fn iteration_limit_is_reported() {
    let p = builtin("hager84-constrained").unwrap();
    let cfg = SolverConfig { max_outer: 1, ..SolverConfig::default() };
    let r = solve(&p, 10, &cfg, None).unwrap();
    assert!(!r.converged);
    assert_eq!(r.termination, Termination::MaxIterations);
    assert!(r.y_norm > cfg.tol_y);
}
