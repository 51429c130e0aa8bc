//! Reduced-space solver for the collocated problem.
//!
//! For a fixed control `U` the state is obtained by Newton's method on the
//! collocation equations and the costate by one linear solve; the only
//! quantity driven iteratively is the projected stationarity residual. The
//! control update is a projected step along `R_i^{-1} grad_u H_i` (or along
//! `grad_u H_i` when `R_i` is not positive definite) with Armijo
//! backtracking on `C(X_{N+1})`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use crate::diffmat::CollocationOperators;
use crate::error::{Error, Result};
use crate::problem::ControlProblem;
use crate::transcription::{eval_residual, Residual, Trajectory};

/// Stopping and line-search parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Stop when the `Y`-norm of the residual falls to this level.
    pub tol_y: f64,
    pub max_outer: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    /// Dynamics defect tolerance for the inner state solve.
    pub newton_tol: f64,
    pub newton_max: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_y: 1e-10,
            max_outer: 200,
            armijo_c: 1e-4,
            backtrack: 0.5,
            newton_tol: 1e-12,
            newton_max: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol_y > 0.0
            && self.newton_tol > 0.0
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.newton_max > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid solver configuration {self:?}")))
        }
    }
}

/// How an outer step was accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// First record, before any step.
    Initial,
    /// Armijo decrease along the `R^{-1}`-scaled direction.
    Newton,
    /// Armijo decrease along the plain gradient.
    Gradient,
    /// The predicted decrease was below rounding noise in the objective, so
    /// the step was accepted because it reduced the stationarity residual.
    NoiseFloor,
}

/// One row of the outer-iteration log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub y_norm: f64,
    pub stationarity: f64,
    pub step: f64,
    pub kind: StepKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No trial step along either direction made progress.
    Stalled,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub n_colloc: usize,
    pub traj: Trajectory,
    pub residual: Residual,
    pub y_norm: f64,
    pub outer_iters: usize,
    pub converged: bool,
    pub termination: Termination,
    pub objective: f64,
    /// `active_set[i]` is true when the constraint binds at `U_{i+1}`.
    pub active_set: Vec<bool>,
    pub history: Vec<IterationRecord>,
}

impl SolveReport {
    pub fn active_count(&self) -> usize {
        self.active_set.iter().filter(|a| **a).count()
    }
}

/// Result of [`solve_state`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateSolution {
    /// `(N + 2) x n`.
    pub x: DMatrix<f64>,
    pub iterations: usize,
    /// Final `max_i |sum_j D_ij X_j - f(X_i, U_i)|`.
    pub defect: f64,
}

fn check_controls(problem: &ControlProblem, ops: &CollocationOperators, u: &DMatrix<f64>) -> Result<()> {
    if u.nrows() != ops.n() || u.ncols() != problem.control_dim() {
        return Err(Error::DimensionMismatch {
            what: "control rows",
            expected: ops.n(),
            found: u.nrows(),
        });
    }
    Ok(())
}

fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// Dense `I - (K (x) I_n) blockdiag(blocks)` with `K` N x N; `transpose_blocks`
/// uses `blocks[j]^T` instead.
fn kron_correction(k: &DMatrix<f64>, blocks: &[DMatrix<f64>], transpose_blocks: bool) -> DMatrix<f64> {
    let n = k.nrows();
    let s = blocks[0].nrows();
    let mut m = DMatrix::identity(n * s, n * s);
    for i in 0..n {
        for j in 0..n {
            let kij = k[(i, j)];
            if kij == 0.0 {
                continue;
            }
            for a in 0..s {
                for b in 0..s {
                    let v = if transpose_blocks { blocks[j][(b, a)] } else { blocks[j][(a, b)] };
                    m[(i * s + a, j * s + b)] -= kij * v;
                }
            }
        }
    }
    m
}

fn flatten(z: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(z.len(), z.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

fn unflatten(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

/// Solves `sum_{j=0}^N D_ij X_j = f(X_i, U_i)`, `X_0 = x0`, by Newton's method,
/// then sets `X_{N+1} = X_0 + sum_j w_j f(X_j, U_j)`.
///
/// Each Newton step is premultiplied by `D_{1:N}^{-1}`: when every `f_x`
/// vanishes the step is one solve with `n` right-hand sides, otherwise the
/// correction `I - (D_{1:N}^{-1} (x) I) blockdiag(f_x)` is factored densely.
/// The iteration stops at `defect <= newton_tol`, or when the step has
/// stagnated at a defect already within rounding of `|D| |X|`.
///
/// ```
/// use gauss_colloc::{problem::builtin, solver::solve_state, CollocationOperators};
/// use nalgebra::DMatrix;
/// let p = builtin("hager84-constrained").unwrap();
/// let ops = CollocationOperators::gauss(8).unwrap();
/// let u = DMatrix::from_element(8, 1, 1.0);
/// let s = solve_state(&p, &ops, &u, p.x0(), None).unwrap();
/// // x' = u / 2 on [-1, 1] after the time map, so x(1) = x0 + 1.
/// assert!((s.x[(9, 0)] - (p.x0()[0] + 1.0)).abs() < 1e-12);
/// ```
pub fn solve_state(
    problem: &ControlProblem,
    ops: &CollocationOperators,
    u: &DMatrix<f64>,
    x0: &DVector<f64>,
    guess: Option<&DMatrix<f64>>,
) -> Result<StateSolution> {
    solve_state_with(problem, ops, u, x0, guess, SolverConfig::default().newton_tol, SolverConfig::default().newton_max)
}

pub(crate) fn solve_state_with(
    problem: &ControlProblem,
    ops: &CollocationOperators,
    u: &DMatrix<f64>,
    x0: &DVector<f64>,
    guess: Option<&DMatrix<f64>>,
    newton_tol: f64,
    newton_max: usize,
) -> Result<StateSolution> {
    check_controls(problem, ops, u)?;
    let n = ops.n();
    let s = problem.state_dim();
    if x0.len() != s {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: s,
            found: x0.len(),
        });
    }
    let d = ops.d();
    let d_norm = d.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    // D_0 x0^T, constant across iterations.
    let d0x0 = d.column(0) * x0.transpose();

    let mut z = match guess {
        Some(g) if g.nrows() == n + 2 && g.ncols() == s => g.rows(1, n).into_owned(),
        _ => DMatrix::from_fn(n, s, |_, j| x0[j]),
    };

    let eval_defect = |z: &DMatrix<f64>| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mut f = DMatrix::zeros(n, s);
        for i in 0..n {
            f.set_row(i, &problem.f(&row(z, i), &row(u, i))?.transpose());
        }
        let r = &d0x0 + d.columns(1, n) * z - &f;
        Ok((r, f))
    };

    let (mut r, mut f) = eval_defect(&z)?;
    let mut defect = r.amax();
    let mut iterations = 0;
    while defect > newton_tol {
        if iterations == newton_max {
            return Err(Error::NewtonDivergence { iterations, defect });
        }
        iterations += 1;
        let jac: Vec<DMatrix<f64>> = (0..n)
            .map(|i| problem.jacobian_x(&row(&z, i), &row(u, i)))
            .collect::<Result<_>>()?;
        let rhs = ops.solve_d1n(&(-&r), false)?;
        let delta = if jac.iter().all(|a| a.iter().all(|v| *v == 0.0)) {
            rhs
        } else {
            let m = kron_correction(ops.d1n_inverse(), &jac, false);
            let sol = m
                .lu()
                .solve(&flatten(&rhs))
                .ok_or(Error::SingularMatrix("state Newton system"))?;
            unflatten(&sol, n, s)
        };
        z += &delta;
        let (r_new, f_new) = eval_defect(&z)?;
        r = r_new;
        f = f_new;
        defect = r.amax();
        // Rounding floor of the defect evaluation itself.
        let scale = 1.0 + z.amax().max(x0.amax());
        let floor = 64.0 * f64::EPSILON * (d_norm * scale + f.amax());
        if delta.amax() <= 4.0 * f64::EPSILON * scale && defect <= floor.max(newton_tol) {
            break;
        }
        if defect <= floor && delta.amax() <= 1e-13 * scale {
            break;
        }
    }

    let mut x = DMatrix::zeros(n + 2, s);
    x.set_row(0, &x0.transpose());
    x.rows_mut(1, n).copy_from(&z);
    let mut end = x0.clone();
    for (i, &w) in ops.weights().iter().enumerate() {
        end += row(&f, i) * w;
    }
    x.set_row(n + 1, &end.transpose());
    Ok(StateSolution { x, iterations, defect })
}

/// Solves `sum_{j=1}^{N+1} D^dag_ij Lambda_j = -grad_x H(X_i, U_i, Lambda_i)` with
/// `Lambda_{N+1} = terminal`, then `Lambda_0 = Lambda_{N+1} + sum_i w_i grad_x H_i`.
///
/// `H` is linear in `Lambda`, so this is a single linear system. It uses
/// `D^dag_{1:N}^{-1} = -W^{-1} D_{1:N}^{-T} W`, i.e. the transposed solve
/// against the state factorization.
pub fn solve_costate(
    problem: &ControlProblem,
    ops: &CollocationOperators,
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    terminal: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_controls(problem, ops, u)?;
    let n = ops.n();
    let s = problem.state_dim();
    if x.nrows() != n + 2 || x.ncols() != s || terminal.len() != s {
        return Err(Error::DimensionMismatch {
            what: "costate solve inputs",
            expected: n + 2,
            found: x.nrows(),
        });
    }
    let w = ops.weights();
    let jac: Vec<DMatrix<f64>> = (0..n)
        .map(|i| problem.jacobian_x(&row(x, i + 1), &row(u, i)))
        .collect::<Result<_>>()?;

    // G = (D^dag_{1:N})^{-1}, via G_ij = -(w_j / w_i) (D_{1:N}^{-1})_ji.
    let dinv = ops.d1n_inverse();
    let g = DMatrix::from_fn(n, n, |i, j| -(w[j] / w[i]) * dinv[(j, i)]);
    // Interior rows satisfy L + G rows(A_i^T L_i) = -G D^dag_{N+1} terminal^T.
    let last = ops.d_dagger().column(n).into_owned();
    let rhs = -(&g * last) * terminal.transpose();

    let interior = if jac.iter().all(|a| a.iter().all(|v| *v == 0.0)) {
        rhs
    } else {
        let neg_g = -&g;
        let m = kron_correction(&neg_g, &jac, true);
        let sol = m
            .lu()
            .solve(&flatten(&rhs))
            .ok_or(Error::SingularMatrix("costate system"))?;
        unflatten(&sol, n, s)
    };

    let mut lam = DMatrix::zeros(n + 2, s);
    lam.rows_mut(1, n).copy_from(&interior);
    lam.set_row(n + 1, &terminal.transpose());
    let mut l0 = terminal.clone();
    for i in 0..n {
        l0 += jac[i].tr_mul(&row(&interior, i)) * w[i];
    }
    lam.set_row(0, &l0.transpose());
    Ok(lam)
}

/// `g_i = w_i grad_u H(X_i, U_i, Lambda_i)`, the gradient of `C(X_{N+1}(U))`
/// with respect to `U_i`. Rows are zero-based.
pub fn reduced_gradient(problem: &ControlProblem, ops: &CollocationOperators, traj: &Trajectory) -> Result<DMatrix<f64>> {
    let n = ops.n();
    let mut g = DMatrix::zeros(n, problem.control_dim());
    for i in 1..=n {
        let gi = problem.grad_u_h(&traj.state(i), &traj.control(i), &traj.costate(i))? * ops.weights()[i - 1];
        g.set_row(i - 1, &gi.transpose());
    }
    Ok(g)
}

/// `C(X_{N+1})` with `X` eliminated through [`solve_state`].
pub fn reduced_objective(problem: &ControlProblem, ops: &CollocationOperators, u: &DMatrix<f64>) -> Result<f64> {
    let xs = solve_state(problem, ops, u, problem.x0(), None)?;
    problem.cost(&row(&xs.x, ops.n() + 1))
}

/// State, costate and residual at a given control.
pub fn evaluate_controls(
    problem: &ControlProblem,
    ops: &CollocationOperators,
    u: &DMatrix<f64>,
    guess: Option<&DMatrix<f64>>,
) -> Result<(Trajectory, Residual, f64)> {
    let cfg = SolverConfig::default();
    evaluate_with(problem, ops, u, guess, &cfg)
}

fn evaluate_with(
    problem: &ControlProblem,
    ops: &CollocationOperators,
    u: &DMatrix<f64>,
    guess: Option<&DMatrix<f64>>,
    cfg: &SolverConfig,
) -> Result<(Trajectory, Residual, f64)> {
    let n = ops.n();
    let xs = solve_state_with(problem, ops, u, problem.x0(), guess, cfg.newton_tol, cfg.newton_max)?;
    let x_end = row(&xs.x, n + 1);
    let j = problem.cost(&x_end)?;
    let lam = solve_costate(problem, ops, &xs.x, u, &problem.cost_gradient(&x_end)?)?;
    let traj = Trajectory::new(xs.x, u.clone(), lam)?;
    let res = eval_residual(problem, ops, &traj)?;
    Ok((traj, res, j))
}

fn project_rows(problem: &ControlProblem, u: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = u.clone();
    for i in 0..u.nrows() {
        out.set_row(i, &problem.control_set().project(&row(u, i)).transpose());
    }
    out
}

fn grad_u_rows(problem: &ControlProblem, traj: &Trajectory) -> Result<DMatrix<f64>> {
    let n = traj.n_colloc();
    let mut g = DMatrix::zeros(n, traj.control_dim());
    for i in 1..=n {
        g.set_row(i - 1, &problem.grad_u_h(&traj.state(i), &traj.control(i), &traj.costate(i))?.transpose());
    }
    Ok(g)
}

/// `true` where the projection of `U_i - grad_u H_i` moves the point, i.e.
/// the constraint binds with a nonzero multiplier.
fn active_flags(problem: &ControlProblem, traj: &Trajectory, hu: &DMatrix<f64>, tol: f64) -> Vec<bool> {
    (0..traj.n_colloc())
        .map(|i| {
            let v = row(&traj.u, i) - row(hu, i);
            let p = problem.control_set().project(&v);
            (v - p).amax() > 10.0 * tol
        })
        .collect()
}

/// Computes the search direction: `R_i^{-1} grad_u H_i` where `R_i` is
/// positive definite, otherwise `grad_u H_i`.
fn newton_direction(problem: &ControlProblem, traj: &Trajectory, hu: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut d = hu.clone();
    for i in 1..=traj.n_colloc() {
        let lin = problem.linearize_at(&traj.state(i), &traj.control(i), &traj.costate(i))?;
        if let Some(ch) = Cholesky::new(lin.r) {
            d.set_row(i - 1, &ch.solve(&row(hu, i - 1)).transpose());
        }
    }
    Ok(d)
}

/// Solves the collocated problem with `N` Gauss points.
///
/// Starts from `X = x0`, `U = proj(0)` unless a warm start is given. Returns
/// `Ok` with `converged = false` when the iteration limit is reached or the
/// line search stalls.
pub fn solve(
    problem: &ControlProblem,
    n_colloc: usize,
    config: &SolverConfig,
    warm_start: Option<&Trajectory>,
) -> Result<SolveReport> {
    config.validate()?;
    if !problem.is_canonical() {
        return Err(Error::InvalidInput(
            "problem must be posed on [-1, 1]; apply map_domain first".into(),
        ));
    }
    let ops = CollocationOperators::gauss(n_colloc)?;
    solve_with_operators(problem, &ops, config, warm_start)
}

/// As [`solve`] but reusing prebuilt operators.
pub fn solve_with_operators(
    problem: &ControlProblem,
    ops: &CollocationOperators,
    config: &SolverConfig,
    warm_start: Option<&Trajectory>,
) -> Result<SolveReport> {
    config.validate()?;
    let n = ops.n();
    let m = problem.control_dim();
    let w = ops.weights();

    let (mut u, mut guess) = match warm_start {
        Some(t) if t.n_colloc() == n && t.control_dim() == m && t.state_dim() == problem.state_dim() => {
            (project_rows(problem, &t.u), Some(t.x.clone()))
        }
        _ => {
            let u0 = problem.control_set().project(&DVector::zeros(m));
            (DMatrix::from_fn(n, m, |_, j| u0[j]), None)
        }
    };

    let (mut traj, mut res, mut obj) = evaluate_with(problem, ops, &u, guess.as_ref(), config)?;
    let mut history = vec![IterationRecord {
        iter: 0,
        objective: obj,
        y_norm: res.y_norm,
        stationarity: res.stationarity(),
        step: 0.0,
        kind: StepKind::Initial,
    }];
    let mut termination = Termination::MaxIterations;
    let mut iter = 0;

    loop {
        if res.y_norm <= config.tol_y {
            termination = Termination::Converged;
            break;
        }
        if iter == config.max_outer {
            break;
        }
        iter += 1;
        guess = Some(traj.x.clone());
        let hu = grad_u_rows(problem, &traj)?;
        let directions = [
            (StepKind::Newton, newton_direction(problem, &traj, &hu)?),
            (StepKind::Gradient, hu.clone()),
        ];
        let noise = 100.0 * f64::EPSILON * obj.abs().max(1.0);
        let mut accepted = None;
        'dirs: for (kind, d) in directions.iter() {
            let mut s = 1.0;
            for _ in 0..60 {
                let trial_u = project_rows(problem, &(&u - d * s));
                let delta = &trial_u - &u;
                if delta.amax() == 0.0 {
                    break;
                }
                // Directional derivative of J along delta: sum_i w_i <grad_u H_i, delta_i>.
                let pred: f64 = (0..n).map(|i| w[i] * hu.row(i).dot(&delta.row(i))).sum();
                let trial = evaluate_with(problem, ops, &trial_u, guess.as_ref(), config);
                if let Ok((t_traj, t_res, t_obj)) = trial {
                    if pred.abs() > noise {
                        if pred < 0.0 && t_obj <= obj + config.armijo_c * pred {
                            accepted = Some((*kind, s, trial_u, t_traj, t_res, t_obj));
                            break 'dirs;
                        }
                    } else if t_res.stationarity() < res.stationarity() {
                        accepted = Some((StepKind::NoiseFloor, s, trial_u, t_traj, t_res, t_obj));
                        break 'dirs;
                    }
                }
                s *= config.backtrack;
            }
        }
        match accepted {
            Some((kind, s, nu, nt, nr, no)) => {
                u = nu;
                traj = nt;
                res = nr;
                obj = no;
                history.push(IterationRecord {
                    iter,
                    objective: obj,
                    y_norm: res.y_norm,
                    stationarity: res.stationarity(),
                    step: s,
                    kind,
                });
            }
            None => {
                termination = Termination::Stalled;
                break;
            }
        }
    }

    let hu = grad_u_rows(problem, &traj)?;
    let active_set = active_flags(problem, &traj, &hu, config.tol_y);
    Ok(SolveReport {
        n_colloc: n,
        y_norm: res.y_norm,
        residual: res,
        outer_iters: iter,
        converged: termination == Termination::Converged,
        termination,
        objective: obj,
        active_set,
        history,
        traj,
    })
}
