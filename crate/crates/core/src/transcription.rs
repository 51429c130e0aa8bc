//! The discrete problem: trajectories on the collocation grid, the
//! first-order residual `T = (T0, ..., T6)` with its `Y`-norm, and the map
//! between NLP multipliers `mu` and costate samples `Lambda`.
//!
//! Node indexing follows the stacked vectors of the discretization: row `0`
//! is `tau_0 = -1`, rows `1..=N` are the Gauss points and row `N + 1` is the
//! virtual endpoint `+1`. Controls live only on rows `1..=N` and are stored
//! with zero-based rows `0..N`.

use nalgebra::{DMatrix, DVector};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::diffmat::CollocationOperators;
use crate::error::{Error, Result};
use crate::problem::ControlProblem;
use crate::quadrature::QuadratureRule;

/// Discrete state, control and costate, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `(N + 2) x n`.
    pub x: DMatrix<f64>,
    /// `N x m`; row `i - 1` holds `U_i`.
    pub u: DMatrix<f64>,
    /// `(N + 2) x n`.
    pub lambda: DMatrix<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl Serialize for Trajectory {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Trajectory", 4)?;
        st.serialize_field("n_colloc", &self.n_colloc())?;
        st.serialize_field("x", &rows_of(&self.x))?;
        st.serialize_field("u", &rows_of(&self.u))?;
        st.serialize_field("lambda", &rows_of(&self.lambda))?;
        st.end()
    }
}

impl Trajectory {
    pub fn new(x: DMatrix<f64>, u: DMatrix<f64>, lambda: DMatrix<f64>) -> Result<Self> {
        let n = u.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("trajectory needs N >= 1".into()));
        }
        if x.nrows() != n + 2 {
            return Err(Error::DimensionMismatch {
                what: "state rows",
                expected: n + 2,
                found: x.nrows(),
            });
        }
        if lambda.shape() != x.shape() {
            return Err(Error::DimensionMismatch {
                what: "costate rows",
                expected: x.nrows(),
                found: lambda.nrows(),
            });
        }
        let t = Self { x, u, lambda };
        if !t.is_finite() {
            return Err(Error::InvalidInput("trajectory has non-finite entries".into()));
        }
        Ok(t)
    }

    /// Constant state `x0`, control `u`, zero costate.
    pub fn constant(n_colloc: usize, x0: &DVector<f64>, u: &DVector<f64>) -> Self {
        Self {
            x: DMatrix::from_fn(n_colloc + 2, x0.len(), |_, j| x0[j]),
            u: DMatrix::from_fn(n_colloc, u.len(), |_, j| u[j]),
            lambda: DMatrix::zeros(n_colloc + 2, x0.len()),
        }
    }

    /// The problem's analytic solution sampled at `-1, tau_1, ..., tau_N, +1`.
    pub fn from_analytic(problem: &ControlProblem, rule: &QuadratureRule) -> Result<Self> {
        let sol = problem
            .analytic()
            .ok_or_else(|| Error::InvalidInput("problem has no analytic solution".into()))?;
        let n = rule.len();
        let nodes = extended_nodes(rule);
        let sx = problem.state_dim();
        let sm = problem.control_dim();
        let mut x = DMatrix::zeros(n + 2, sx);
        let mut lambda = DMatrix::zeros(n + 2, sx);
        let mut u = DMatrix::zeros(n, sm);
        for (i, &t) in nodes.iter().enumerate() {
            x.set_row(i, &sol.state(t).transpose());
            lambda.set_row(i, &sol.costate(t).transpose());
            if (1..=n).contains(&i) {
                u.set_row(i - 1, &sol.control(t).transpose());
            }
        }
        Self::new(x, u, lambda)
    }

    /// Number of collocation points `N`.
    pub fn n_colloc(&self) -> usize {
        self.u.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn control_dim(&self) -> usize {
        self.u.ncols()
    }

    /// `X_i`, `0 <= i <= N + 1`.
    pub fn state(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    /// `U_i`, `1 <= i <= N`.
    pub fn control(&self, i: usize) -> DVector<f64> {
        self.u.row(i - 1).transpose()
    }

    /// `Lambda_i`, `0 <= i <= N + 1`.
    pub fn costate(&self, i: usize) -> DVector<f64> {
        self.lambda.row(i).transpose()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.u.iter()).chain(self.lambda.iter()).all(|v| v.is_finite())
    }
}

/// `[-1, tau_1, ..., tau_N, 1]`.
pub fn extended_nodes(rule: &QuadratureRule) -> Vec<f64> {
    let mut v = Vec::with_capacity(rule.len() + 2);
    v.push(-1.0);
    v.extend_from_slice(rule.nodes());
    v.push(1.0);
    v
}

/// `sqrt(sum_i w_i |z_i|^2)` over the rows of `z`.
pub fn omega_norm(z: &DMatrix<f64>, weights: &[f64]) -> f64 {
    z.row_iter()
        .zip(weights)
        .map(|(r, w)| w * r.norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// The seven components of `T`, with the control component scalarized as
/// the projected residual `U_i - proj(U_i - grad_u H_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub t0: DVector<f64>,
    pub t1: DMatrix<f64>,
    pub t2: DVector<f64>,
    pub t3: DVector<f64>,
    pub t4: DMatrix<f64>,
    pub t5: DVector<f64>,
    pub t6: DMatrix<f64>,
    pub y_norm: f64,
}

impl Residual {
    /// `|t0| + |t2| + |t3| + |t5| + |t6|_inf + |t1|_w + |t4|_w`.
    pub fn y_norm_of(&self, weights: &[f64]) -> f64 {
        self.t0.norm()
            + self.t2.norm()
            + self.t3.norm()
            + self.t5.norm()
            + self.t6.amax()
            + omega_norm(&self.t1, weights)
            + omega_norm(&self.t4, weights)
    }

    /// Largest entry of the control component.
    pub fn stationarity(&self) -> f64 {
        self.t6.amax()
    }
}

impl Serialize for Residual {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Residual", 8)?;
        st.serialize_field("t0", self.t0.as_slice())?;
        st.serialize_field("t1", &rows_of(&self.t1))?;
        st.serialize_field("t2", self.t2.as_slice())?;
        st.serialize_field("t3", self.t3.as_slice())?;
        st.serialize_field("t4", &rows_of(&self.t4))?;
        st.serialize_field("t5", self.t5.as_slice())?;
        st.serialize_field("t6", &rows_of(&self.t6))?;
        st.serialize_field("y_norm", &self.y_norm)?;
        st.end()
    }
}

fn check_shapes(problem: &ControlProblem, ops: &CollocationOperators, traj: &Trajectory) -> Result<()> {
    let n = ops.n();
    if traj.n_colloc() != n {
        return Err(Error::DimensionMismatch {
            what: "trajectory collocation points",
            expected: n,
            found: traj.n_colloc(),
        });
    }
    if traj.state_dim() != problem.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "trajectory state dimension",
            expected: problem.state_dim(),
            found: traj.state_dim(),
        });
    }
    if traj.control_dim() != problem.control_dim() {
        return Err(Error::DimensionMismatch {
            what: "trajectory control dimension",
            expected: problem.control_dim(),
            found: traj.control_dim(),
        });
    }
    Ok(())
}

/// Per-node `f`, `grad_x H`, `grad_u H` with `H` taken at the given
/// multiplier rows (`lam_rows[i]` belongs to node `i + 1`).
pub(crate) struct NodeEvals {
    pub f: DMatrix<f64>,
    pub hx: DMatrix<f64>,
    pub hu: DMatrix<f64>,
}

pub(crate) fn node_evals(
    problem: &ControlProblem,
    traj: &Trajectory,
    lam_rows: &DMatrix<f64>,
) -> Result<NodeEvals> {
    let n = traj.n_colloc();
    let (sx, sm) = (traj.state_dim(), traj.control_dim());
    let mut f = DMatrix::zeros(n, sx);
    let mut hx = DMatrix::zeros(n, sx);
    let mut hu = DMatrix::zeros(n, sm);
    for i in 1..=n {
        let x = traj.state(i);
        let u = traj.control(i);
        let l = lam_rows.row(i - 1).transpose();
        f.set_row(i - 1, &problem.f(&x, &u)?.transpose());
        hx.set_row(i - 1, &problem.grad_x_h(&x, &u, &l)?.transpose());
        hu.set_row(i - 1, &problem.grad_u_h(&x, &u, &l)?.transpose());
    }
    Ok(NodeEvals { f, hx, hu })
}

fn weighted_sum(rows: &DMatrix<f64>, w: &[f64]) -> DVector<f64> {
    let mut s = DVector::zeros(rows.ncols());
    for (r, &wi) in rows.row_iter().zip(w) {
        s += r.transpose() * wi;
    }
    s
}

/// Evaluates `T(X, U, Lambda)` and its `Y`-norm.
pub fn eval_residual(problem: &ControlProblem, ops: &CollocationOperators, traj: &Trajectory) -> Result<Residual> {
    check_shapes(problem, ops, traj)?;
    let n = ops.n();
    let w = ops.weights();
    let lam_colloc = traj.lambda.rows(1, n).into_owned();
    let ev = node_evals(problem, traj, &lam_colloc)?;

    let x0 = traj.state(0);
    let x_end = traj.state(n + 1);
    let l0 = traj.costate(0);
    let l_end = traj.costate(n + 1);

    let t0 = &x0 - problem.x0();
    let t1 = ops.d() * traj.x.rows(0, n + 1) - &ev.f;
    let t2 = &x_end - &x0 - weighted_sum(&ev.f, w);
    let t3 = &l_end - &l0 + weighted_sum(&ev.hx, w);
    let t4 = ops.d_dagger() * traj.lambda.rows(1, n + 1) + &ev.hx;
    let t5 = &l_end - problem.cost_gradient(&x_end)?;
    let mut t6 = DMatrix::zeros(n, traj.control_dim());
    for i in 1..=n {
        let r = problem
            .control_set()
            .stationarity(&traj.control(i), &ev.hu.row(i - 1).transpose());
        t6.set_row(i - 1, &r.transpose());
    }
    let mut res = Residual {
        t0,
        t1,
        t2,
        t3,
        t4,
        t5,
        t6,
        y_norm: 0.0,
    };
    res.y_norm = res.y_norm_of(w);
    if !res.y_norm.is_finite() {
        return Err(Error::EvaluationFailure("residual is not finite".into()));
    }
    Ok(res)
}

/// `Lambda_i = mu_{N+1} + mu_i / w_i`, `Lambda_{N+1} = mu_{N+1}`, `Lambda_0 = mu_0`.
pub fn multipliers_to_costate(mu: &DMatrix<f64>, rule: &QuadratureRule) -> Result<DMatrix<f64>> {
    let n = rule.len();
    if mu.nrows() != n + 2 {
        return Err(Error::DimensionMismatch {
            what: "multiplier rows",
            expected: n + 2,
            found: mu.nrows(),
        });
    }
    let mut lam = mu.clone();
    let end = mu.row(n + 1).into_owned();
    for (i, &w) in rule.weights().iter().enumerate() {
        let row = &end + mu.row(i + 1) / w;
        lam.set_row(i + 1, &row);
    }
    Ok(lam)
}

/// Inverse of [`multipliers_to_costate`]: `mu_i = w_i (Lambda_i - Lambda_{N+1})`.
pub fn costate_to_multipliers(lambda: &DMatrix<f64>, rule: &QuadratureRule) -> Result<DMatrix<f64>> {
    let n = rule.len();
    if lambda.nrows() != n + 2 {
        return Err(Error::DimensionMismatch {
            what: "costate rows",
            expected: n + 2,
            found: lambda.nrows(),
        });
    }
    let mut mu = lambda.clone();
    let end = lambda.row(n + 1).into_owned();
    for (i, &w) in rule.weights().iter().enumerate() {
        let row = (lambda.row(i + 1) - &end) * w;
        mu.set_row(i + 1, &row);
    }
    Ok(mu)
}

/// Stationarity of the NLP Lagrangian in the variables `X_0`, `X_j`,
/// `X_{N+1}` and `U_i`, evaluated at multipliers `mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct KktResidual {
    /// `mu_{N+1} - mu_0 - sum_i D_{i0} mu_i`.
    pub x_initial: DVector<f64>,
    /// `sum_i D_{ij} mu_i - grad_x H(X_j, U_j, mu_j + w_j mu_{N+1})`, rows `j = 1..=N`.
    pub x_interior: DMatrix<f64>,
    /// `mu_{N+1} - grad C(X_{N+1})`.
    pub x_terminal: DVector<f64>,
    /// `U_i - proj(U_i - grad_u H(X_i, U_i, mu_i + w_i mu_{N+1}))`.
    pub control: DMatrix<f64>,
}

impl KktResidual {
    /// Largest absolute entry over all four conditions.
    pub fn max_abs(&self) -> f64 {
        self.x_initial
            .amax()
            .max(self.x_interior.amax())
            .max(self.x_terminal.amax())
            .max(self.control.amax())
    }
}

/// Evaluates the Lagrangian stationarity conditions at `(X, U)` and `mu`.
pub fn kkt_residual(
    problem: &ControlProblem,
    ops: &CollocationOperators,
    traj: &Trajectory,
    mu: &DMatrix<f64>,
) -> Result<KktResidual> {
    check_shapes(problem, ops, traj)?;
    let n = ops.n();
    if mu.shape() != traj.x.shape() {
        return Err(Error::DimensionMismatch {
            what: "multiplier rows",
            expected: n + 2,
            found: mu.nrows(),
        });
    }
    let w = ops.weights();
    let d = ops.d();
    let mu_end = mu.row(n + 1).into_owned();
    let mut lam_rows = DMatrix::zeros(n, traj.state_dim());
    for i in 0..n {
        lam_rows.set_row(i, &(mu.row(i + 1) + &mu_end * w[i]));
    }
    let ev = node_evals(problem, traj, &lam_rows)?;
    let mu_colloc = mu.rows(1, n);
    // d^T mu over columns 0..=N
    let dt_mu = d.tr_mul(&mu_colloc);

    let x_initial = (mu.row(n + 1) - mu.row(0) - dt_mu.row(0)).transpose();
    let x_interior = dt_mu.rows(1, n) - &ev.hx;
    let x_terminal = mu_end.transpose() - problem.cost_gradient(&traj.state(n + 1))?;
    let mut control = DMatrix::zeros(n, traj.control_dim());
    for i in 1..=n {
        let r = problem
            .control_set()
            .stationarity(&traj.control(i), &ev.hu.row(i - 1).transpose());
        control.set_row(i - 1, &r.transpose());
    }
    Ok(KktResidual {
        x_initial,
        x_interior,
        x_terminal,
        control,
    })
}

/// Evaluates the degree-`N` state polynomial through `X_0..X_N` and the
/// degree-`N` costate polynomial through `Lambda_1..Lambda_{N+1}` at `t`.
pub fn interpolate_trajectory(
    ops: &CollocationOperators,
    traj: &Trajectory,
    t: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = ops.n();
    if traj.n_colloc() != n {
        return Err(Error::DimensionMismatch {
            what: "trajectory collocation points",
            expected: n,
            found: traj.n_colloc(),
        });
    }
    let x = ops.state_basis().eval_rows(&traj.x.rows(0, n + 1).into_owned(), t);
    let l = ops.costate_basis().eval_rows(&traj.lambda.rows(1, n + 1).into_owned(), t);
    Ok((x, l))
}
