use approx::assert_abs_diff_eq;
use gauss_colloc::problem::{
    augment_bolza, builtin, domain_scale, hager84_x0, map_domain, to_native_time, ControlProblem,
    ControlSet, Dynamics, Hager84Constrained, Hager84Unconstrained, RunningCost, ScalarIntegrator,
    SecondDerivatives, BUILTIN_NAMES,
};
use gauss_colloc::solver::solve_state;
use gauss_colloc::{CollocationOperators, Error};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

struct ConstantRunning(f64);

impl RunningCost for ConstantRunning {
    fn value(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> f64 {
        self.0
    }
    fn gradient_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn gradient_u(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(u.len())
    }
    fn hessians(&self, x: &DVector<f64>, u: &DVector<f64>) -> SecondDerivatives {
        SecondDerivatives::zeros(x.len(), u.len())
    }
}

/// `x' = x - x^3 / 3 + u`, with a deliberately wrong `f_x` when `broken`.
struct Cubic {
    broken: bool,
}

impl Dynamics for Cubic {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        v(&[x[0] - x[0].powi(3) / 3.0 + u[0]])
    }
    fn jacobian_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let d = if self.broken { 1.0 - x[0] * x[0] / 3.0 } else { 1.0 - x[0] * x[0] };
        DMatrix::from_element(1, 1, d)
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

/// Eighth-order central difference.
fn fd8(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    const C: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
    C.iter()
        .enumerate()
        .map(|(k, c)| {
            let s = (k + 1) as f64 * h;
            c * (f(t + s) - f(t - s))
        })
        .sum::<f64>()
        / h
}

fn sample_points(count: usize, kink: f64, gap: f64) -> Vec<f64> {
    (0..count)
        .map(|k| -0.95 + 1.9 * (k as f64 + 0.5) / count as f64)
        .filter(|t| (t - kink).abs() > gap)
        .collect()
}

#[test]
fn builtin_benchmark_data() {
    let p = builtin("hager84-constrained").unwrap();
    assert_eq!(p.state_dim(), 2);
    assert_eq!(p.native_state_dim(), 1);
    assert_eq!(p.control_dim(), 1);
    assert!(p.is_canonical());
    let e = std::f64::consts::E;
    assert_abs_diff_eq!(p.x0()[0], (1.0 + 3.0 * e) / (2.0 * (1.0 - e)), epsilon = 1e-15);
    assert!((p.x0()[0] + 2.66395).abs() < 1e-5);
    assert_eq!(p.x0()[1], 0.0);
    assert_eq!(hager84_x0(), p.x0()[0]);
    assert_eq!(Hager84Constrained::u(0.25), 1.0);
    assert_abs_diff_eq!(Hager84Constrained::u(1.0), 0.0, epsilon = 1e-15);
}

#[test]
fn builtin_names_resolve() {
    for name in BUILTIN_NAMES {
        assert_eq!(builtin(name).unwrap().name(), name);
    }
    assert!(matches!(builtin("brachistochrone"), Err(Error::UnknownProblem(_))));
}

#[test]
fn closed_forms_are_continuous_at_junction() {
    let h = 1e-12;
    assert_abs_diff_eq!(Hager84Constrained::x(0.5 - h), Hager84Constrained::x(0.5 + h), epsilon = 1e-10);
    assert_abs_diff_eq!(Hager84Constrained::u(0.5 + h), 1.0, epsilon = 1e-10);
    assert_abs_diff_eq!(Hager84Constrained::lambda(0.5 - h), Hager84Constrained::lambda(0.5 + h), epsilon = 1e-10);
    assert_abs_diff_eq!(Hager84Constrained::lambda(1.0), 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(Hager84Unconstrained::x(0.0), hager84_x0(), epsilon = 1e-14);
    assert_abs_diff_eq!(Hager84Unconstrained::lambda(1.0), 0.0, epsilon = 1e-14);
}

#[test]
fn domain_map_examples() {
    assert_eq!(domain_scale(-1.0, 1.0), 1.0);
    assert_eq!(domain_scale(0.0, 1.0), 0.5);
    assert_eq!(to_native_time((0.0, 1.0), -1.0), 0.0);
    assert_eq!(to_native_time((0.0, 1.0), 0.0), 0.5);
    let p = builtin("hager84-constrained").unwrap();
    let sol = p.analytic().unwrap();
    for k in 0..=20 {
        let tau = -1.0 + k as f64 / 20.0;
        assert_eq!(sol.control(tau)[0], 1.0, "tau = {tau}");
    }
    assert_eq!(sol.breakpoints(), vec![0.0]);
    let canonical = map_domain(&p);
    assert_eq!(canonical.domain(), (-1.0, 1.0));
}

#[test]
fn analytic_solution_audit() {
    for name in BUILTIN_NAMES {
        let p = builtin(name).unwrap();
        let sol = p.analytic().unwrap();
        let pts = sample_points(100, 0.0, 0.05);
        assert!(pts.len() >= 94);
        for &t in &pts {
            let (x, u, l) = (sol.state(t), sol.control(t), sol.costate(t));
            let f = p.f(&x, &u).unwrap();
            let hx = p.grad_x_h(&x, &u, &l).unwrap();
            for c in 0..p.state_dim() {
                let xdot = fd8(|s| sol.state(s)[c], t, 1e-2);
                assert!((xdot - f[c]).abs() <= 1e-12, "{name}: state eq at {t}, comp {c}: {:e}", (xdot - f[c]).abs());
                let ldot = fd8(|s| sol.costate(s)[c], t, 1e-2);
                assert!((ldot + hx[c]).abs() <= 1e-10, "{name}: costate eq at {t}, comp {c}");
            }
            let hu = p.grad_u_h(&x, &u, &l).unwrap();
            let st = p.control_set().stationarity(&u, &hu);
            assert!(st.amax() <= 1e-10, "{name}: minimum principle at {t}");
        }
        let x1 = sol.state(1.0);
        let gc = p.cost_gradient(&x1).unwrap();
        assert!((sol.costate(1.0) - gc).amax() <= 1e-14, "{name}: transversality");
    }
}

#[test]
fn constant_running_costs() {
    let base = ControlProblem::builder(ScalarIntegrator, vec![0.0])
        .domain(0.0, 1.0)
        .build()
        .unwrap();
    let ops = CollocationOperators::gauss(7).unwrap();
    let u = DMatrix::from_fn(7, 1, |i, _| (i as f64).sin());
    for (level, expected) in [(0.0, 0.0), (1.0, 1.0)] {
        let p = map_domain(&augment_bolza(&base, ConstantRunning(level)).unwrap());
        assert_eq!(p.state_dim(), 2);
        let xs = solve_state(&p, &ops, &u, p.x0(), None).unwrap();
        let c = p.cost(&xs.x.row(8).transpose()).unwrap();
        assert_abs_diff_eq!(c, expected, epsilon = 1e-14);
    }
}

#[test]
fn augmented_cost_matches_direct_quadrature() {
    let p = builtin("hager84-constrained").unwrap();
    for n in [3, 8, 15] {
        let ops = CollocationOperators::gauss(n).unwrap();
        let u = DMatrix::from_fn(n, 1, |i, _| 1.0 - 0.3 * i as f64);
        let xs = solve_state(&p, &ops, &u, p.x0(), None).unwrap();
        let direct: f64 = (0..n)
            .map(|i| {
                let x = xs.x[(i + 1, 0)];
                ops.weights()[i] * 0.5 * 0.5 * (x * x + u[(i, 0)] * u[(i, 0)])
            })
            .sum();
        let c = p.cost(&xs.x.row(n + 1).transpose()).unwrap();
        assert!((c - direct).abs() <= 1e-10, "n = {n}: {c} vs {direct}");
    }
}

#[test]
fn linearization_of_benchmark() {
    // Unmapped, augmented: H = l1 u + l2 (x^2 + u^2) / 2.
    let base = ControlProblem::builder(ScalarIntegrator, vec![1.0])
        .domain(0.0, 1.0)
        .build()
        .unwrap();
    let p = augment_bolza(&base, gauss_colloc::problem::QuadraticRunningCost).unwrap();
    for (x, u) in [(0.3, -0.7), (-2.0, 1.0)] {
        let lin = p.linearize_at(&v(&[x, 5.0]), &v(&[u]), &v(&[0.4, 1.0])).unwrap();
        assert_eq!(lin.a, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, x, 0.0]));
        assert_eq!(lin.b, DMatrix::from_row_slice(2, 1, &[1.0, u]));
        assert_eq!(lin.q[(0, 0)], 1.0);
        assert_eq!(lin.s[(0, 0)], 0.0);
        assert_eq!(lin.r[(0, 0)], 1.0);
        assert!((&lin.q - lin.q.transpose()).amax() <= 1e-12);
        assert!((&lin.r - lin.r.transpose()).amax() <= 1e-12);
    }
    let t = p.cost_hessian(&v(&[1.0, 2.0])).unwrap();
    assert_eq!(t, DMatrix::zeros(2, 2));
}

#[test]
fn derivative_audit_rejects_wrong_jacobian() {
    assert!(ControlProblem::builder(Cubic { broken: false }, vec![0.5]).build().is_ok());
    let r = ControlProblem::builder(Cubic { broken: true }, vec![0.5]).build();
    assert!(matches!(r, Err(Error::DerivativeMismatch { .. })), "{r:?}");
    assert!(ControlProblem::builder(Cubic { broken: true }, vec![0.5]).skip_audit().build().is_ok());
}

#[test]
fn builder_validation() {
    let r = ControlProblem::builder(ScalarIntegrator, vec![0.0, 1.0]).build();
    assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    let r = ControlProblem::builder(ScalarIntegrator, vec![0.0]).domain(1.0, 1.0).build();
    assert!(matches!(r, Err(Error::InvalidInput(_))));
    let r = ControlProblem::builder(ScalarIntegrator, vec![0.0])
        .control_set(ControlSet::bounds(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap())
        .build();
    assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    assert!(ControlSet::bounds(vec![1.0], vec![1.0]).is_err());
    assert!(ControlSet::bounds(vec![2.0], vec![1.0]).is_err());
}

#[test]
fn diagnostics_reported_along_solution() {
    let p = builtin("hager84-constrained").unwrap();
    let d = p.assumption_diagnostics(201).unwrap();
    // f_x of the augmented, mapped problem is [[0, 0], [x/2, 0]].
    assert_abs_diff_eq!(d.max_jac_norm, hager84_x0().abs() / 2.0, epsilon = 1e-12);
    assert!(d.min_hessian_eig >= -1e-12);
    let bare = ControlProblem::builder(ScalarIntegrator, vec![0.0]).build().unwrap();
    assert!(bare.assumption_diagnostics(10).is_none());
}

fn unit_ball() -> ControlSet {
    ControlSet::custom(|v: &DVector<f64>| {
        let n = v.norm();
        if n <= 1.0 {
            v.clone()
        } else {
            v / n
        }
    })
}

fn sets() -> Vec<ControlSet> {
    vec![
        ControlSet::Unconstrained,
        ControlSet::bounds(vec![f64::NEG_INFINITY, -1.0, 0.0], vec![1.0, 1.0, f64::INFINITY]).unwrap(),
        unit_ball(),
    ]
}

proptest! {
    #[test]
    fn projection_idempotent(a in prop::array::uniform3(-5.0f64..5.0)) {
        for set in sets() {
            let p = set.project(&v(&a));
            let pp = set.project(&p);
            prop_assert!((pp - &p).amax() <= 1e-12);
        }
    }

    #[test]
    fn projection_nonexpansive(
        a in prop::array::uniform3(-5.0f64..5.0),
        b in prop::array::uniform3(-5.0f64..5.0),
    ) {
        for set in sets() {
            let (pa, pb) = (set.project(&v(&a)), set.project(&v(&b)));
            prop_assert!((pa - pb).norm() <= (v(&a) - v(&b)).norm() + 1e-12);
        }
    }

    #[test]
    fn stationarity_vanishes_on_normal_cone(u in -3.0f64..1.0, g in 0.0f64..4.0) {
        let set = ControlSet::bounds(vec![f64::NEG_INFINITY], vec![1.0]).unwrap();
        // At the upper bound any g <= 0 is admissible; in the interior only g = 0.
        prop_assert_eq!(set.stationarity(&v(&[1.0]), &v(&[-g]))[0], 0.0);
        let r = set.stationarity(&v(&[u]), &v(&[0.0]))[0];
        prop_assert_eq!(r, 0.0);
        if u < 1.0 && g > 0.0 {
            prop_assert!(set.stationarity(&v(&[u]), &v(&[g]))[0] > 0.0);
            prop_assert!(set.stationarity(&v(&[1.0]), &v(&[g]))[0] > 0.0);
        }
    }
}
