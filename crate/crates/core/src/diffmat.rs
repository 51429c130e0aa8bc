//! Differentiation matrices for the collocation scheme.
//!
//! `D` (N x (N+1)) maps values at `{-1, t_1..t_N}` to derivatives at the
//! Gauss nodes. `D_dagger` (N x (N+1)) does the same for values at
//! `{t_1..t_N, +1}` and is tied to `D` through the weight identity
//! `D_ij = -(w_j / w_i) D_dagger_ji`, `D_dagger_{i,N+1} = -sum_j D_dagger_ij`.

use nalgebra::{DMatrix, DVector, LU, Dyn};

use crate::error::{Error, Result};
use crate::quadrature::{QuadratureRule, RuleKind};

/// Slack added to the `2` and `sqrt(2)` bounds when checking them in floating point.
pub const BOUND_SLACK: f64 = 1e-10;

/// Barycentric Lagrange interpolation on a fixed node set.
#[derive(Clone, Debug)]
pub struct Barycentric {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Barycentric {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidInput("barycentric basis needs nodes".into()));
        }
        let lo = nodes.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = nodes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Scaling each difference by 4/(hi - lo) keeps the products O(1) on
        // Chebyshev-like sets; only ratios of the weights matter.
        let scale = if hi > lo { 4.0 / (hi - lo) } else { 1.0 };
        let mut weights = vec![1.0; nodes.len()];
        for (j, w) in weights.iter_mut().enumerate() {
            for (l, &x) in nodes.iter().enumerate() {
                if l != j {
                    let d = scale * (nodes[j] - x);
                    if d == 0.0 {
                        return Err(Error::InvalidInput("repeated interpolation node".into()));
                    }
                    *w /= d;
                }
            }
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Values of all cardinal polynomials `l_j(t)`.
    pub fn cardinals(&self, t: f64) -> Vec<f64> {
        if let Some(k) = self.nodes.iter().position(|&x| x == t) {
            let mut e = vec![0.0; self.len()];
            e[k] = 1.0;
            return e;
        }
        let mut c: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w / (t - x))
            .collect();
        let s: f64 = c.iter().sum();
        c.iter_mut().for_each(|v| *v /= s);
        c
    }

    /// Derivatives of all cardinal polynomials `l_j'(t)`.
    pub fn cardinal_derivatives(&self, t: f64) -> Vec<f64> {
        if let Some(k) = self.nodes.iter().position(|&x| x == t) {
            return self.diff_row(k);
        }
        let a: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w / (t - x))
            .collect();
        let da: Vec<f64> = a
            .iter()
            .zip(&self.nodes)
            .map(|(&aj, &x)| -aj / (t - x))
            .collect();
        let s: f64 = a.iter().sum();
        let ds: f64 = da.iter().sum();
        a.iter()
            .zip(&da)
            .map(|(&aj, &daj)| (daj - aj / s * ds) / s)
            .collect()
    }

    pub fn eval(&self, values: &[f64], t: f64) -> f64 {
        self.cardinals(t).iter().zip(values).map(|(l, v)| l * v).sum()
    }

    pub fn eval_derivative(&self, values: &[f64], t: f64) -> f64 {
        self.cardinal_derivatives(t)
            .iter()
            .zip(values)
            .map(|(l, v)| l * v)
            .sum()
    }

    /// Evaluates a vector-valued interpolant whose node values are the rows of `values`.
    pub fn eval_rows(&self, values: &DMatrix<f64>, t: f64) -> DVector<f64> {
        let c = self.cardinals(t);
        let mut out = DVector::zeros(values.ncols());
        for (k, ck) in c.iter().enumerate() {
            if *ck != 0.0 {
                out += values.row(k).transpose() * *ck;
            }
        }
        out
    }

    fn diff_row(&self, i: usize) -> Vec<f64> {
        let xi = self.nodes[i];
        let wi = self.weights[i];
        let mut row: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(j, (&x, &w))| if j == i { 0.0 } else { (w / wi) / (xi - x) })
            .collect();
        row[i] = -row.iter().sum::<f64>();
        row
    }

    /// Square differentiation matrix over the node set; diagonal from the negative row sum.
    pub fn differentiation_matrix(&self) -> DMatrix<f64> {
        let m = self.len();
        let mut d = DMatrix::zeros(m, m);
        for i in 0..m {
            for (j, v) in self.diff_row(i).into_iter().enumerate() {
                d[(i, j)] = v;
            }
        }
        d
    }
}

/// Collocation operators for one Gauss rule.
#[derive(Clone, Debug)]
pub struct CollocationOperators {
    rule: QuadratureRule,
    state_basis: Barycentric,
    costate_basis: Barycentric,
    d: DMatrix<f64>,
    d_dagger: DMatrix<f64>,
    d1n_lu: LU<f64, Dyn, Dyn>,
    d1n_t_lu: LU<f64, Dyn, Dyn>,
    d1n_inv: DMatrix<f64>,
}

impl CollocationOperators {
    pub fn new(rule: QuadratureRule) -> Result<Self> {
        if rule.kind() != RuleKind::Gauss {
            return Err(Error::InvalidInput(
                "collocation operators are built on a Gauss rule".into(),
            ));
        }
        let n = rule.len();
        let mut state_nodes = vec![-1.0];
        state_nodes.extend_from_slice(rule.nodes());
        let mut costate_nodes = rule.nodes().to_vec();
        costate_nodes.push(1.0);
        let state_basis = Barycentric::new(state_nodes)?;
        let costate_basis = Barycentric::new(costate_nodes)?;

        let full = state_basis.differentiation_matrix();
        let d = full.rows(1, n).into_owned();
        let w = rule.weights();
        let mut d_dagger = DMatrix::zeros(n, n + 1);
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                // D_{ji} = -(w_i / w_j) Ddag_{ij}  =>  Ddag_{ij} = -(w_j / w_i) D_{ji}
                let v = -(w[j] / w[i]) * d[(j, i + 1)];
                d_dagger[(i, j)] = v;
                sum += v;
            }
            d_dagger[(i, n)] = -sum;
        }

        let d1n = d.columns(1, n).into_owned();
        let d1n_lu = d1n.clone().lu();
        let d1n_t_lu = d1n.transpose().lu();
        let d1n_inv = d1n_lu
            .try_inverse()
            .ok_or(Error::SingularMatrix("D_{1:N} factorization"))?;
        if !d1n_inv.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularMatrix("D_{1:N} factorization"));
        }
        Ok(Self {
            rule,
            state_basis,
            costate_basis,
            d,
            d_dagger,
            d1n_lu,
            d1n_t_lu,
            d1n_inv,
        })
    }

    /// Shorthand for building the Gauss rule and its operators.
    pub fn gauss(n: usize) -> Result<Self> {
        Self::new(QuadratureRule::gauss(n)?)
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn n(&self) -> usize {
        self.rule.len()
    }

    pub fn weights(&self) -> &[f64] {
        self.rule.weights()
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn d_dagger(&self) -> &DMatrix<f64> {
        &self.d_dagger
    }

    pub fn d1n_inverse(&self) -> &DMatrix<f64> {
        &self.d1n_inv
    }

    /// Interpolation basis over `{-1, t_1..t_N}`.
    pub fn state_basis(&self) -> &Barycentric {
        &self.state_basis
    }

    /// Interpolation basis over `{t_1..t_N, +1}`.
    pub fn costate_basis(&self) -> &Barycentric {
        &self.costate_basis
    }

    /// Solves `D_{1:N} Y = rhs` (or `D_{1:N}^T Y = rhs`), one column per right-hand side.
    pub fn solve_d1n(&self, rhs: &DMatrix<f64>, transposed: bool) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "D_{1:N} right-hand side rows",
                expected: self.n(),
                found: rhs.nrows(),
            });
        }
        let lu = if transposed { &self.d1n_t_lu } else { &self.d1n_lu };
        lu.solve(rhs).ok_or(Error::SingularMatrix("D_{1:N} solve"))
    }

    /// Induced infinity norm of `D_{1:N}^{-1}`, compared against 2.
    pub fn check_p1(&self) -> P1Check {
        let norm = max_abs_row_sum(&self.d1n_inv);
        P1Check {
            norm,
            pass: norm <= 2.0 + BOUND_SLACK,
        }
    }

    /// Largest Euclidean row norm of `[W^{1/2} D_{1:N}]^{-1}`, compared against `sqrt(2)`,
    /// plus the gap between the last row of `D_{1:N}^{-1}` and the weights.
    pub fn check_p2(&self) -> P2Check {
        let n = self.n();
        let w = self.rule.weights();
        let mut max_row_norm: f64 = 0.0;
        for i in 0..n {
            let s: f64 = (0..n)
                .map(|j| {
                    let v = self.d1n_inv[(i, j)];
                    v * v / w[j]
                })
                .sum();
            max_row_norm = max_row_norm.max(s.sqrt());
        }
        let last_row_gap = (0..n)
            .map(|j| (self.d1n_inv[(n - 1, j)] - w[j]).abs())
            .fold(0.0, f64::max);
        P2Check {
            max_row_norm,
            pass: max_row_norm <= 2f64.sqrt() + BOUND_SLACK,
            last_row_gap,
        }
    }
}

fn max_abs_row_sum(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct P1Check {
    pub norm: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct P2Check {
    pub max_row_norm: f64,
    pub pass: bool,
    pub last_row_gap: f64,
}

/// One row of the property table: both checks for a given `N`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct PropertyRow {
    pub n: usize,
    pub p1: P1Check,
    pub p2: P2Check,
}

pub fn property_row(n: usize) -> Result<PropertyRow> {
    let ops = CollocationOperators::gauss(n)?;
    Ok(PropertyRow {
        n,
        p1: ops.check_p1(),
        p2: ops.check_p2(),
    })
}
