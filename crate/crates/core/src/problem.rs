//! Continuous control problems in Mayer form on `[-1, 1]`:
//!
//! ```text
//! minimize C(x(1))  subject to  x' = f(x, u),  u(t) in U,  x(-1) = x0.
//! ```
//!
//! Problems are assembled from user callbacks ([`Dynamics`], [`TerminalCost`]),
//! a convex [`ControlSet`] described by its projection, and optionally an
//! [`AnalyticSolution`]. Integral costs are folded into the state by
//! [`augment_bolza`], and problems posed on another interval are rescaled
//! with [`map_domain`]. All callbacks must be reentrant.

use std::f64::consts::E;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quadrature::CompositeRule;

/// Second derivatives of a scalar function of `(x, u)`.
///
/// `xu` is the `n x m` block `d^2 / dx du`.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondDerivatives {
    pub xx: DMatrix<f64>,
    pub xu: DMatrix<f64>,
    pub uu: DMatrix<f64>,
}

impl SecondDerivatives {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            xx: DMatrix::zeros(n, n),
            xu: DMatrix::zeros(n, m),
            uu: DMatrix::zeros(m, m),
        }
    }
}

/// Right-hand side `f(x, u)` of the state equation and its derivatives.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `n x n` Jacobian with respect to the state.
    fn jacobian_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    /// `n x m` Jacobian with respect to the control.
    fn jacobian_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    /// Second derivatives of the Hamiltonian `H = lambda^T f(x, u)`.
    fn hamiltonian_hessians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> SecondDerivatives;
}

/// Terminal cost `C(x(1))`.
pub trait TerminalCost: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Integrand `l(x, u)` of a Bolza cost.
pub trait RunningCost: Send + Sync {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn gradient_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn gradient_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn hessians(&self, x: &DVector<f64>, u: &DVector<f64>) -> SecondDerivatives;
}

/// Closed-form optimal state, control and costate on the problem's domain.
pub trait AnalyticSolution: Send + Sync {
    fn state(&self, t: f64) -> DVector<f64>;
    fn control(&self, t: f64) -> DVector<f64>;
    fn costate(&self, t: f64) -> DVector<f64>;
    /// Interior points where the solution loses smoothness.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `C == 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroCost;

impl TerminalCost for ZeroCost {
    fn value(&self, _x: &DVector<f64>) -> f64 {
        0.0
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(x.len())
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

type Projection = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Closed convex control set, represented by its Euclidean projection.
#[derive(Clone)]
pub enum ControlSet {
    Unconstrained,
    /// Componentwise bounds; entries may be infinite.
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// Arbitrary convex set given by a projection that must be idempotent
    /// and nonexpansive.
    Custom(Projection),
}

impl fmt::Debug for ControlSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlSet::Unconstrained => write!(f, "Unconstrained"),
            ControlSet::Box { lower, upper } => f
                .debug_struct("Box")
                .field("lower", &lower.as_slice())
                .field("upper", &upper.as_slice())
                .finish(),
            ControlSet::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl ControlSet {
    /// Box `lower <= u <= upper`; the box must have nonempty interior.
    pub fn bounds(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "box bounds",
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || l.is_nan()) {
            return Err(Error::InvalidInput(
                "box bounds need lower < upper in every component".into(),
            ));
        }
        Ok(ControlSet::Box {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    pub fn custom(proj: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        ControlSet::Custom(Arc::new(proj))
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            ControlSet::Unconstrained => v.clone(),
            ControlSet::Box { lower, upper } => {
                DVector::from_fn(v.len(), |i, _| v[i].max(lower[i]).min(upper[i]))
            }
            ControlSet::Custom(p) => p(v),
        }
    }

    /// `u - proj(u - g)`; zero exactly when `-g` lies in the normal cone at `u`.
    pub fn stationarity(&self, u: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        u - self.project(&(u - g))
    }

    fn check_dim(&self, m: usize) -> Result<()> {
        if let ControlSet::Box { lower, .. } = self {
            if lower.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "box bounds vs control dimension",
                    expected: m,
                    found: lower.len(),
                });
            }
        }
        Ok(())
    }
}

/// The matrices `A = f_x`, `B = f_u`, `Q = H_xx`, `S = H_xu`, `R = H_uu`
/// at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Linearization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// A control problem ready for transcription.
#[derive(Clone)]
pub struct ControlProblem {
    name: String,
    dynamics: Arc<dyn Dynamics>,
    cost: Arc<dyn TerminalCost>,
    x0: DVector<f64>,
    control_set: ControlSet,
    domain: (f64, f64),
    native_state_dim: usize,
    analytic: Option<Arc<dyn AnalyticSolution>>,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("n", &self.state_dim())
            .field("m", &self.control_dim())
            .field("x0", &self.x0.as_slice())
            .field("control_set", &self.control_set)
            .field("domain", &self.domain)
            .field("analytic", &self.analytic.is_some())
            .finish()
    }
}

/// Builder for [`ControlProblem`]; `build` validates dimensions and audits
/// the user derivatives against central differences.
pub struct ProblemBuilder {
    name: String,
    dynamics: Arc<dyn Dynamics>,
    cost: Arc<dyn TerminalCost>,
    x0: DVector<f64>,
    control_set: ControlSet,
    domain: (f64, f64),
    analytic: Option<Arc<dyn AnalyticSolution>>,
    audit: bool,
}

impl ProblemBuilder {
    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn cost(mut self, cost: impl TerminalCost + 'static) -> Self {
        self.cost = Arc::new(cost);
        self
    }

    pub fn control_set(mut self, set: ControlSet) -> Self {
        self.control_set = set;
        self
    }

    /// Native time interval `[a, b]`; defaults to `[-1, 1]`.
    pub fn domain(mut self, a: f64, b: f64) -> Self {
        self.domain = (a, b);
        self
    }

    pub fn analytic(mut self, sol: impl AnalyticSolution + 'static) -> Self {
        self.analytic = Some(Arc::new(sol));
        self
    }

    /// Skips the finite-difference derivative audit.
    pub fn skip_audit(mut self) -> Self {
        self.audit = false;
        self
    }

    pub fn build(self) -> Result<ControlProblem> {
        let n = self.dynamics.state_dim();
        let m = self.dynamics.control_dim();
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput("state and control dimensions must be positive".into()));
        }
        if self.x0.len() != n {
            return Err(Error::DimensionMismatch {
                what: "initial state",
                expected: n,
                found: self.x0.len(),
            });
        }
        if !(self.domain.0 < self.domain.1) {
            return Err(Error::InvalidInput(format!(
                "domain [{}, {}] must have a < b",
                self.domain.0, self.domain.1
            )));
        }
        self.control_set.check_dim(m)?;
        let problem = ControlProblem {
            name: self.name,
            dynamics: self.dynamics,
            cost: self.cost,
            x0: self.x0,
            control_set: self.control_set,
            domain: self.domain,
            native_state_dim: n,
            analytic: self.analytic,
        };
        if self.audit {
            problem.audit_derivatives(0x5eed)?;
        }
        Ok(problem)
    }
}

fn ensure_finite_vec(v: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::EvaluationFailure(format!("{what} returned a non-finite value")))
    }
}

fn ensure_finite_mat(v: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::EvaluationFailure(format!("{what} returned a non-finite value")))
    }
}

const AUDIT_TOL: f64 = 1e-6;

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1.0)
}

/// Central-difference Jacobian of `g` (output `k`, input length `p`).
fn fd_jacobian(
    p: usize,
    k: usize,
    at: &DVector<f64>,
    g: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(k, p);
    for j in 0..p {
        let h = 1e-5 * at[j].abs().max(1.0);
        let mut plus = at.clone();
        let mut minus = at.clone();
        plus[j] += h;
        minus[j] -= h;
        let col = (g(&plus) - g(&minus)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

impl ControlProblem {
    pub fn builder(dynamics: impl Dynamics + 'static, x0: Vec<f64>) -> ProblemBuilder {
        Self::builder_arc(Arc::new(dynamics), x0)
    }

    pub fn builder_arc(dynamics: Arc<dyn Dynamics>, x0: Vec<f64>) -> ProblemBuilder {
        ProblemBuilder {
            name: "custom".into(),
            dynamics,
            cost: Arc::new(ZeroCost),
            x0: DVector::from_vec(x0),
            control_set: ControlSet::Unconstrained,
            domain: (-1.0, 1.0),
            analytic: None,
            audit: true,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    /// State dimension before any Bolza augmentation.
    pub fn native_state_dim(&self) -> usize {
        self.native_state_dim
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control_set
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn is_canonical(&self) -> bool {
        self.domain == (-1.0, 1.0)
    }

    pub fn analytic(&self) -> Option<&dyn AnalyticSolution> {
        self.analytic.as_deref()
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    pub fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_finite_vec(self.dynamics.eval(x, u), "dynamics")
    }

    pub fn jacobian_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        ensure_finite_mat(self.dynamics.jacobian_x(x, u), "state Jacobian")
    }

    pub fn jacobian_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        ensure_finite_mat(self.dynamics.jacobian_u(x, u), "control Jacobian")
    }

    /// `grad_x H = f_x^T lambda`.
    pub fn grad_x_h(&self, x: &DVector<f64>, u: &DVector<f64>, l: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.jacobian_x(x, u)?.tr_mul(l))
    }

    /// `grad_u H = f_u^T lambda`.
    pub fn grad_u_h(&self, x: &DVector<f64>, u: &DVector<f64>, l: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.jacobian_u(x, u)?.tr_mul(l))
    }

    pub fn cost(&self, x: &DVector<f64>) -> Result<f64> {
        let c = self.cost.value(x);
        if c.is_finite() {
            Ok(c)
        } else {
            Err(Error::EvaluationFailure("terminal cost returned a non-finite value".into()))
        }
    }

    pub fn cost_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_finite_vec(self.cost.gradient(x), "terminal cost gradient")
    }

    /// `T = grad^2 C`.
    pub fn cost_hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        ensure_finite_mat(self.cost.hessian(x), "terminal cost Hessian")
    }

    /// `A, B, Q, S, R` at `(x, u, lambda)`.
    pub fn linearize_at(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<Linearization> {
        let h = self.dynamics.hamiltonian_hessians(x, u, lambda);
        Ok(Linearization {
            a: self.jacobian_x(x, u)?,
            b: self.jacobian_u(x, u)?,
            q: ensure_finite_mat(h.xx, "Hamiltonian Hessian")?,
            s: ensure_finite_mat(h.xu, "Hamiltonian Hessian")?,
            r: ensure_finite_mat(h.uu, "Hamiltonian Hessian")?,
        })
    }

    /// Checks every user derivative against central differences at a few
    /// random points around `x0`.
    pub fn audit_derivatives(&self, seed: u64) -> Result<()> {
        let n = self.state_dim();
        let m = self.control_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..3 {
            let x = DVector::from_fn(n, |i, _| self.x0[i] + rng.gen_range(-1.0..1.0));
            let u_raw = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
            let u = self.control_set.project(&u_raw);
            let lam = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let dynamics = &self.dynamics;

            let checks: [(&str, DMatrix<f64>, DMatrix<f64>); 3] = [
                (
                    "dynamics Jacobian in x",
                    dynamics.jacobian_x(&x, &u),
                    fd_jacobian(n, n, &x, |xx| dynamics.eval(xx, &u)),
                ),
                (
                    "dynamics Jacobian in u",
                    dynamics.jacobian_u(&x, &u),
                    fd_jacobian(m, n, &u, |uu| dynamics.eval(&x, uu)),
                ),
                (
                    "terminal cost gradient",
                    DMatrix::from_column_slice(n, 1, self.cost.gradient(&x).as_slice()),
                    fd_jacobian(n, 1, &x, |xx| DVector::from_element(1, self.cost.value(xx)))
                        .transpose(),
                ),
            ];
            for (what, given, fd) in checks.iter() {
                let e = rel_err(given, fd);
                if !(e <= AUDIT_TOL) {
                    return Err(Error::DerivativeMismatch { what: what.to_string(), rel_error: e });
                }
            }

            let h = dynamics.hamiltonian_hessians(&x, &u, &lam);
            let hx = |xx: &DVector<f64>, uu: &DVector<f64>| dynamics.jacobian_x(xx, uu).tr_mul(&lam);
            let hu = |xx: &DVector<f64>, uu: &DVector<f64>| dynamics.jacobian_u(xx, uu).tr_mul(&lam);
            let second = [
                ("Hamiltonian Hessian xx", h.xx.clone(), fd_jacobian(n, n, &x, |xx| hx(xx, &u))),
                ("Hamiltonian Hessian xu", h.xu.clone(), fd_jacobian(m, n, &u, |uu| hx(&x, uu))),
                ("Hamiltonian Hessian uu", h.uu.clone(), fd_jacobian(m, m, &u, |uu| hu(&x, uu))),
                (
                    "terminal cost Hessian",
                    self.cost.hessian(&x),
                    fd_jacobian(n, n, &x, |xx| self.cost.gradient(xx)),
                ),
            ];
            for (what, given, fd) in second.iter() {
                let e = rel_err(given, fd);
                if !(e <= AUDIT_TOL) {
                    return Err(Error::DerivativeMismatch { what: what.to_string(), rel_error: e });
                }
            }
        }
        Ok(())
    }

    /// Coercivity and Jacobian-size diagnostics along the analytic solution.
    ///
    /// Returns `None` when no analytic solution is attached. Nothing is
    /// asserted; the numbers are reported for inspection.
    pub fn assumption_diagnostics(&self, samples: usize) -> Option<AssumptionDiagnostics> {
        let sol = self.analytic()?;
        let (a, b) = self.domain;
        let n = self.state_dim();
        let m = self.control_dim();
        let mut min_hessian_eig = f64::INFINITY;
        let mut max_jac_norm: f64 = 0.0;
        let mut max_jac_t_norm: f64 = 0.0;
        for k in 0..samples.max(2) {
            let t = a + (b - a) * k as f64 / (samples.max(2) - 1) as f64;
            let (x, u, l) = (sol.state(t), sol.control(t), sol.costate(t));
            let h = self.dynamics.hamiltonian_hessians(&x, &u, &l);
            let mut full = DMatrix::zeros(n + m, n + m);
            full.view_mut((0, 0), (n, n)).copy_from(&h.xx);
            full.view_mut((0, n), (n, m)).copy_from(&h.xu);
            full.view_mut((n, 0), (m, n)).copy_from(&h.xu.transpose());
            full.view_mut((n, n), (m, m)).copy_from(&h.uu);
            let eig = SymmetricEigen::new(full).eigenvalues.min();
            min_hessian_eig = min_hessian_eig.min(eig);
            let jac = self.dynamics.jacobian_x(&x, &u);
            max_jac_norm = max_jac_norm.max(inf_norm(&jac));
            max_jac_t_norm = max_jac_t_norm.max(inf_norm(&jac.transpose()));
        }
        let x1 = sol.state(b);
        let terminal_hessian_eig = SymmetricEigen::new(self.cost.hessian(&x1)).eigenvalues.min();
        Some(AssumptionDiagnostics {
            min_hessian_eig,
            terminal_hessian_eig,
            max_jac_norm,
            max_jac_t_norm,
        })
    }
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smallest Hessian eigenvalues and largest `||f_x||_inf` seen along a solution.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct AssumptionDiagnostics {
    pub min_hessian_eig: f64,
    pub terminal_hessian_eig: f64,
    pub max_jac_norm: f64,
    pub max_jac_t_norm: f64,
}

// ---------------------------------------------------------------------------
// Bolza augmentation

struct AugmentedDynamics {
    base: Arc<dyn Dynamics>,
    running: Arc<dyn RunningCost>,
}

impl AugmentedDynamics {
    fn split(&self, x: &DVector<f64>) -> DVector<f64> {
        x.rows(0, self.base.state_dim()).into_owned()
    }
}

impl Dynamics for AugmentedDynamics {
    fn state_dim(&self) -> usize {
        self.base.state_dim() + 1
    }

    fn control_dim(&self) -> usize {
        self.base.control_dim()
    }

    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let xb = self.split(x);
        let f = self.base.eval(&xb, u);
        let mut out = DVector::zeros(f.len() + 1);
        out.rows_mut(0, f.len()).copy_from(&f);
        out[f.len()] = self.running.value(&xb, u);
        out
    }

    fn jacobian_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.base.state_dim();
        let xb = self.split(x);
        let mut j = DMatrix::zeros(n + 1, n + 1);
        j.view_mut((0, 0), (n, n)).copy_from(&self.base.jacobian_x(&xb, u));
        j.view_mut((n, 0), (1, n))
            .copy_from(&self.running.gradient_x(&xb, u).transpose());
        j
    }

    fn jacobian_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.base.state_dim();
        let m = self.base.control_dim();
        let xb = self.split(x);
        let mut j = DMatrix::zeros(n + 1, m);
        j.view_mut((0, 0), (n, m)).copy_from(&self.base.jacobian_u(&xb, u));
        j.view_mut((n, 0), (1, m))
            .copy_from(&self.running.gradient_u(&xb, u).transpose());
        j
    }

    fn hamiltonian_hessians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> SecondDerivatives {
        let n = self.base.state_dim();
        let m = self.base.control_dim();
        let xb = self.split(x);
        let lb = lambda.rows(0, n).into_owned();
        let weight = lambda[n];
        let hb = self.base.hamiltonian_hessians(&xb, u, &lb);
        let hl = self.running.hessians(&xb, u);
        let mut out = SecondDerivatives::zeros(n + 1, m);
        out.xx.view_mut((0, 0), (n, n)).copy_from(&(hb.xx + hl.xx * weight));
        out.xu.view_mut((0, 0), (n, m)).copy_from(&(hb.xu + hl.xu * weight));
        out.uu = hb.uu + hl.uu * weight;
        out
    }
}

/// `C(x) + x_{n+1}`.
struct AugmentedCost {
    base: Arc<dyn TerminalCost>,
    n: usize,
}

impl TerminalCost for AugmentedCost {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.base.value(&x.rows(0, self.n).into_owned()) + x[self.n]
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = self.base.gradient(&x.rows(0, self.n).into_owned());
        let mut out = DVector::zeros(self.n + 1);
        out.rows_mut(0, self.n).copy_from(&g);
        out[self.n] = 1.0;
        out
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let h = self.base.hessian(&x.rows(0, self.n).into_owned());
        let mut out = DMatrix::zeros(self.n + 1, self.n + 1);
        out.view_mut((0, 0), (self.n, self.n)).copy_from(&h);
        out
    }
}

/// Analytic solution of an augmented problem; the cost state is the
/// running integral of `l` along the base solution.
struct AugmentedAnalytic {
    base: Arc<dyn AnalyticSolution>,
    running: Arc<dyn RunningCost>,
    start: f64,
}

impl AugmentedAnalytic {
    fn running_integral(&self, t: f64) -> f64 {
        if t == self.start {
            return 0.0;
        }
        let (lo, hi, sign) = if t > self.start { (self.start, t, 1.0) } else { (t, self.start, -1.0) };
        let rule = CompositeRule::with_breakpoints(lo, hi, &self.base.breakpoints(), 8, 12)
            .expect("valid composite rule");
        sign * rule.integrate(|s| self.running.value(&self.base.state(s), &self.base.control(s)))
    }
}

impl AnalyticSolution for AugmentedAnalytic {
    fn state(&self, t: f64) -> DVector<f64> {
        let x = self.base.state(t);
        let mut out = DVector::zeros(x.len() + 1);
        out.rows_mut(0, x.len()).copy_from(&x);
        out[x.len()] = self.running_integral(t);
        out
    }

    fn control(&self, t: f64) -> DVector<f64> {
        self.base.control(t)
    }

    fn costate(&self, t: f64) -> DVector<f64> {
        let l = self.base.costate(t);
        let mut out = DVector::zeros(l.len() + 1);
        out.rows_mut(0, l.len()).copy_from(&l);
        out[l.len()] = 1.0;
        out
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.base.breakpoints()
    }
}

/// Folds `integral of l(x, u) dt` into the state so the problem is in Mayer form.
///
/// A state `x_{n+1}` with `x_{n+1}' = l(x, u)` and `x_{n+1}(a) = 0` is appended
/// and the terminal cost becomes `C(x(b)) + x_{n+1}(b)`. An attached analytic
/// solution must carry the Bolza costate (the one with `l` in the Hamiltonian);
/// the costate of the appended state is identically one.
pub fn augment_bolza(base: &ControlProblem, running: impl RunningCost + 'static) -> Result<ControlProblem> {
    let running: Arc<dyn RunningCost> = Arc::new(running);
    let n = base.state_dim();
    let dynamics = Arc::new(AugmentedDynamics {
        base: base.dynamics.clone(),
        running: running.clone(),
    });
    let mut x0 = DVector::zeros(n + 1);
    x0.rows_mut(0, n).copy_from(&base.x0);
    let analytic = base.analytic.clone().map(|a| {
        Arc::new(AugmentedAnalytic {
            base: a,
            running: running.clone(),
            start: base.domain.0,
        }) as Arc<dyn AnalyticSolution>
    });
    let problem = ControlProblem {
        name: base.name.clone(),
        dynamics,
        cost: Arc::new(AugmentedCost {
            base: base.cost.clone(),
            n,
        }),
        x0,
        control_set: base.control_set.clone(),
        domain: base.domain,
        native_state_dim: base.native_state_dim,
        analytic,
    };
    problem.audit_derivatives(0x5eed)?;
    Ok(problem)
}

// ---------------------------------------------------------------------------
// Domain mapping

/// `(b - a) / 2`, the factor by which the dynamics scale on `[-1, 1]`.
pub fn domain_scale(a: f64, b: f64) -> f64 {
    0.5 * (b - a)
}

/// Native time of the canonical point `tau`.
pub fn to_native_time(domain: (f64, f64), tau: f64) -> f64 {
    let (a, b) = domain;
    a + (b - a) * (tau + 1.0) / 2.0
}

struct ScaledDynamics {
    inner: Arc<dyn Dynamics>,
    scale: f64,
}

impl Dynamics for ScaledDynamics {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.inner.eval(x, u) * self.scale
    }
    fn jacobian_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.inner.jacobian_x(x, u) * self.scale
    }
    fn jacobian_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.inner.jacobian_u(x, u) * self.scale
    }
    fn hamiltonian_hessians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> SecondDerivatives {
        let h = self.inner.hamiltonian_hessians(x, u, lambda);
        SecondDerivatives {
            xx: h.xx * self.scale,
            xu: h.xu * self.scale,
            uu: h.uu * self.scale,
        }
    }
}

struct MappedAnalytic {
    inner: Arc<dyn AnalyticSolution>,
    domain: (f64, f64),
}

impl AnalyticSolution for MappedAnalytic {
    fn state(&self, tau: f64) -> DVector<f64> {
        self.inner.state(to_native_time(self.domain, tau))
    }
    fn control(&self, tau: f64) -> DVector<f64> {
        self.inner.control(to_native_time(self.domain, tau))
    }
    fn costate(&self, tau: f64) -> DVector<f64> {
        self.inner.costate(to_native_time(self.domain, tau))
    }
    fn breakpoints(&self) -> Vec<f64> {
        let (a, b) = self.domain;
        self.inner
            .breakpoints()
            .into_iter()
            .map(|t| 2.0 * (t - a) / (b - a) - 1.0)
            .collect()
    }
}

/// Re-poses a problem on `[a, b]` over `[-1, 1]` via `t = a + (b - a)(tau + 1)/2`.
///
/// The dynamics pick up the factor `(b - a)/2`; the costate is unchanged as a
/// function of time, so analytic solutions are composed with the time map.
pub fn map_domain(problem: &ControlProblem) -> ControlProblem {
    if problem.is_canonical() {
        return problem.clone();
    }
    let (a, b) = problem.domain;
    let mut out = problem.clone();
    out.dynamics = Arc::new(ScaledDynamics {
        inner: problem.dynamics.clone(),
        scale: domain_scale(a, b),
    });
    out.analytic = problem.analytic.clone().map(|inner| {
        Arc::new(MappedAnalytic {
            inner,
            domain: (a, b),
        }) as Arc<dyn AnalyticSolution>
    });
    out.domain = (-1.0, 1.0);
    out
}

// ---------------------------------------------------------------------------
// Built-in problems

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 2] = ["hager84-constrained", "hager84-unconstrained"];

/// `x' = u` with scalar state and control.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScalarIntegrator;

impl Dynamics for ScalarIntegrator {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }
    fn jacobian_x(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }
    fn jacobian_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn hamiltonian_hessians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _lambda: &DVector<f64>,
    ) -> SecondDerivatives {
        SecondDerivatives::zeros(1, 1)
    }
}

/// `l(x, u) = (|x|^2 + |u|^2) / 2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct QuadraticRunningCost;

impl RunningCost for QuadraticRunningCost {
    fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * (x.norm_squared() + u.norm_squared())
    }
    fn gradient_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn gradient_u(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }
    fn hessians(&self, x: &DVector<f64>, u: &DVector<f64>) -> SecondDerivatives {
        SecondDerivatives {
            xx: DMatrix::identity(x.len(), x.len()),
            xu: DMatrix::zeros(x.len(), u.len()),
            uu: DMatrix::identity(u.len(), u.len()),
        }
    }
}

/// Initial state `(1 + 3e) / (2(1 - e))` of the benchmark.
pub fn hager84_x0() -> f64 {
    (1.0 + 3.0 * E) / (2.0 * (1.0 - E))
}

/// Closed-form solution of the bound-constrained benchmark on `[0, 1]`.
///
/// `u* = 1` on `[0, 1/2]`; on `[1/2, 1]` the bound is inactive. The costate
/// is `lambda*(t) = integral of x* from t to 1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Hager84Constrained;

impl Hager84Constrained {
    fn k() -> f64 {
        E.sqrt() * (1.0 - E)
    }

    pub fn x(t: f64) -> f64 {
        if t <= 0.5 {
            t + hager84_x0()
        } else {
            ((t).exp() + (2.0 - t).exp()) / Self::k()
        }
    }

    pub fn u(t: f64) -> f64 {
        if t <= 0.5 {
            1.0
        } else {
            ((t).exp() - (2.0 - t).exp()) / Self::k()
        }
    }

    pub fn lambda(t: f64) -> f64 {
        // integral_t^1 x(s) ds, with x(s) = (e^s + e^{2-s})/k on [1/2, 1]:
        // antiderivative (e^s - e^{2-s})/k, which vanishes at s = 1.
        let tail = |s: f64| -((s).exp() - (2.0 - s).exp()) / Self::k();
        if t >= 0.5 {
            tail(t)
        } else {
            let x0 = hager84_x0();
            let head = (0.5 * 0.5 / 2.0 + x0 * 0.5) - (t * t / 2.0 + x0 * t);
            head + tail(0.5)
        }
    }
}

impl AnalyticSolution for Hager84Constrained {
    fn state(&self, t: f64) -> DVector<f64> {
        DVector::from_element(1, Self::x(t))
    }
    fn control(&self, t: f64) -> DVector<f64> {
        DVector::from_element(1, Self::u(t))
    }
    fn costate(&self, t: f64) -> DVector<f64> {
        DVector::from_element(1, Self::lambda(t))
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.5]
    }
}

/// Solution of the same benchmark with the bound removed:
/// `x = a e^t + b e^{-t}` with `b = a e^2`, `u = x'`, `lambda = -u`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Hager84Unconstrained;

impl Hager84Unconstrained {
    fn a() -> f64 {
        hager84_x0() / (1.0 + E * E)
    }

    pub fn x(t: f64) -> f64 {
        let a = Self::a();
        a * t.exp() + a * E * E * (-t).exp()
    }

    pub fn u(t: f64) -> f64 {
        let a = Self::a();
        a * t.exp() - a * E * E * (-t).exp()
    }

    pub fn lambda(t: f64) -> f64 {
        -Self::u(t)
    }
}

impl AnalyticSolution for Hager84Unconstrained {
    fn state(&self, t: f64) -> DVector<f64> {
        DVector::from_element(1, Self::x(t))
    }
    fn control(&self, t: f64) -> DVector<f64> {
        DVector::from_element(1, Self::u(t))
    }
    fn costate(&self, t: f64) -> DVector<f64> {
        DVector::from_element(1, Self::lambda(t))
    }
}

/// Built-in benchmark problems, already augmented and mapped to `[-1, 1]`.
///
/// ```
/// let p = gauss_colloc::problem::builtin("hager84-constrained").unwrap();
/// assert_eq!(p.state_dim(), 2);
/// assert!((p.x0()[0] + 2.66395).abs() < 1e-5);
/// ```
pub fn builtin(name: &str) -> Result<ControlProblem> {
    let (set, analytic): (ControlSet, Arc<dyn AnalyticSolution>) = match name {
        "hager84-constrained" => (
            ControlSet::bounds(vec![f64::NEG_INFINITY], vec![1.0])?,
            Arc::new(Hager84Constrained),
        ),
        "hager84-unconstrained" => (ControlSet::Unconstrained, Arc::new(Hager84Unconstrained)),
        other => return Err(Error::UnknownProblem(other.to_string())),
    };
    let mut base = ControlProblem::builder(ScalarIntegrator, vec![hager84_x0()])
        .name(name)
        .control_set(set)
        .domain(0.0, 1.0)
        .build()?;
    base.analytic = Some(analytic);
    let augmented = augment_bolza(&base, QuadraticRunningCost)?;
    Ok(map_domain(&augmented))
}
