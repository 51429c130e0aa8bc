//! Legendre polynomials and the Gauss / flipped-Radau point sets on `[-1, 1]`.
//!
//! Gauss nodes are the roots of `P_N`; the weights come from
//! `w_i = 2 / ((1 - t_i^2) P_N'(t_i)^2)` and integrate every polynomial of
//! degree `2N - 1` exactly. The Radau set used here keeps `t_N = +1` fixed and
//! places the remaining nodes at the roots of the Jacobi polynomial
//! `P_{N-1}^{(1,0)}`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX: usize = 100;

/// Which point set a [`QuadratureRule`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Gauss,
    Radau,
}

impl std::str::FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gauss" => Ok(RuleKind::Gauss),
            "radau" => Ok(RuleKind::Radau),
            other => Err(Error::InvalidInput(format!("unknown rule kind `{other}`"))),
        }
    }
}

/// Evaluates `(P_n(t), P_n'(t))` with the forward three-term recurrence.
///
/// The derivative uses `P'_{k+1} = P'_{k-1} + (2k + 1) P_k`, which stays
/// finite at the endpoints where the `(1 - t^2)` form degenerates.
pub fn legendre(degree: usize, t: f64) -> (f64, f64) {
    let (p, dp, _) = legendre_d2(degree, t);
    (p, dp)
}

/// Like [`legendre`] but also returns `P_n''(t)`.
pub fn legendre_d2(degree: usize, t: f64) -> (f64, f64, f64) {
    if degree == 0 {
        return (1.0, 0.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, t);
    let (mut dp_prev, mut dp) = (0.0, 1.0);
    let (mut d2p_prev, mut d2p) = (0.0, 0.0);
    for k in 1..degree {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * t * p - kf * p_prev) / (kf + 1.0);
        let dp_next = dp_prev + (2.0 * kf + 1.0) * p;
        let d2p_next = d2p_prev + (2.0 * kf + 1.0) * dp;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
        d2p_prev = d2p;
        d2p = d2p_next;
    }
    (p, dp, d2p)
}

/// Jacobi polynomial `P_n^{(alpha, beta)}(t)` and its derivative.
fn jacobi(degree: usize, alpha: f64, beta: f64, t: f64) -> (f64, f64) {
    if degree == 0 {
        return (1.0, 0.0);
    }
    let ab = alpha + beta;
    let mut p_prev = 1.0;
    let mut p = 0.5 * ((ab + 2.0) * t + (alpha - beta));
    let mut dp_prev = 0.0;
    let mut dp = 0.5 * (ab + 2.0);
    for k in 2..=degree {
        let kf = k as f64;
        let c = 2.0 * kf + ab;
        let a1 = 2.0 * kf * (kf + ab) * (c - 2.0);
        let a2 = (c - 1.0) * (alpha * alpha - beta * beta);
        let a3 = (c - 2.0) * (c - 1.0) * c;
        let a4 = 2.0 * (kf + alpha - 1.0) * (kf + beta - 1.0) * c;
        let p_next = ((a2 + a3 * t) * p - a4 * p_prev) / a1;
        let dp_next = ((a2 + a3 * t) * dp + a3 * p - a4 * dp_prev) / a1;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp)
}

/// `P_n^{(1,0)}(t)` and its derivative; the weight is `(1 - t)`.
pub fn jacobi_1_0(degree: usize, t: f64) -> (f64, f64) {
    jacobi(degree, 1.0, 0.0, t)
}

/// Newton's method kept inside a sign-change bracket `[a, b]`.
///
/// Any iterate that would leave the bracket is replaced by its midpoint.
fn bracketed_newton(
    f: impl Fn(f64) -> (f64, f64),
    mut a: f64,
    mut b: f64,
    start: f64,
) -> Result<f64> {
    let sign_a = f(a).0.signum();
    let mut x = start;
    for _ in 0..NEWTON_MAX {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == sign_a {
            a = x;
        } else {
            b = x;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let mut next = x - fx / dfx;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= NEWTON_TOL || hi - lo <= NEWTON_TOL {
            return Ok(x);
        }
    }
    Err(Error::IterationFailure {
        what: "polynomial root finder",
        iterations: NEWTON_MAX,
    })
}

/// Nodes and weights of an `N`-point rule on `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadratureRule {
    kind: RuleKind,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// `N`-point Legendre–Gauss rule.
    ///
    /// ```
    /// let rule = gauss_colloc::QuadratureRule::gauss(2).unwrap();
    /// let s = 1.0 / 3f64.sqrt();
    /// assert!((rule.nodes()[1] - s).abs() < 1e-15);
    /// assert!((rule.weights()[0] - 1.0).abs() < 1e-15);
    /// ```
    pub fn gauss(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("a Gauss rule needs N >= 1".into()));
        }
        let nf = n as f64;
        let mut nodes = vec![0.0; n];
        // k-th largest root: theta_k lies in ((k - 1/2) pi / (N + 1/2), k pi / (N + 1/2)).
        for k in 1..=n {
            let kf = k as f64;
            let guess = (PI * (4.0 * kf - 1.0) / (4.0 * nf + 2.0)).cos();
            let a = (kf * PI / (nf + 0.5)).cos();
            let b = ((kf - 0.5) * PI / (nf + 0.5)).cos();
            nodes[n - k] = bracketed_newton(|t| legendre(n, t), a, b, guess)?;
        }
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let s = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -s;
            nodes[j] = s;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let weights = nodes
            .iter()
            .map(|&t| {
                let dp = legendre(n, t).1;
                2.0 / ((1.0 - t * t) * dp * dp)
            })
            .collect();
        Ok(Self {
            kind: RuleKind::Gauss,
            nodes,
            weights,
        })
    }

    /// `N`-point Radau rule with the last node fixed at `+1`.
    ///
    /// The endpoint weight is `2 / N^2`. Interior weights equal
    /// `(1 + t_i) / (N^2 P_{N-1}(t_i)^2)`; they are evaluated in the
    /// equivalent form `4 / ((1 - t)^2 (1 + t) P'(t)^2)` with `P = P_{N-1}^{(1,0)}`,
    /// which is far less sensitive to rounding in the nodes.
    pub fn radau(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("a Radau rule needs N >= 1".into()));
        }
        let m = n - 1;
        let mut nodes = Vec::with_capacity(n);
        if m > 0 {
            // Bracket the m roots of P_m^{(1,0)} by a sign scan in theta.
            let samples = 16 * (m + 1);
            let f = |t: f64| jacobi_1_0(m, t);
            let mut prev_t = 1.0_f64;
            let mut prev_v = f(prev_t).0;
            for s in 1..=samples {
                let t = (PI * s as f64 / samples as f64).cos();
                let v = f(t).0;
                if v == 0.0 {
                    nodes.push(t);
                } else if prev_v != 0.0 && v.signum() != prev_v.signum() {
                    nodes.push(bracketed_newton(f, t, prev_t, 0.5 * (t + prev_t))?);
                }
                prev_t = t;
                prev_v = v;
            }
            if nodes.len() != m {
                return Err(Error::IterationFailure {
                    what: "Radau root bracketing",
                    iterations: samples,
                });
            }
            nodes.sort_by(f64::total_cmp);
        }
        nodes.push(1.0);
        let n2 = (n * n) as f64;
        let weights = nodes
            .iter()
            .map(|&t| {
                if t == 1.0 {
                    2.0 / n2
                } else {
                    let dp = jacobi_1_0(m, t).1;
                    4.0 / ((1.0 - t) * (1.0 - t) * (1.0 + t) * dp * dp)
                }
            })
            .collect();
        Ok(Self {
            kind: RuleKind::Radau,
            nodes,
            weights,
        })
    }

    pub fn new(kind: RuleKind, n: usize) -> Result<Self> {
        match kind {
            RuleKind::Gauss => Self::gauss(n),
            RuleKind::Radau => Self::radau(n),
        }
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    /// Number of nodes `N`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_i w_i samples[i]`, where `samples[i]` is the integrand at node `i`.
    pub fn integrate(&self, samples: &[f64]) -> Result<f64> {
        if samples.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "quadrature samples",
                expected: self.len(),
                found: samples.len(),
            });
        }
        Ok(self.weights.iter().zip(samples).map(|(w, s)| w * s).sum())
    }

    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Composite Gauss rule: `panels` equal panels per segment, `order` nodes each.
///
/// Segments are delimited by the interval ends plus any interior breakpoints,
/// so integrands with kinks at known locations stay resolved.
#[derive(Clone, Debug)]
pub struct CompositeRule {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl CompositeRule {
    pub fn new(a: f64, b: f64, panels: usize, order: usize) -> Result<Self> {
        Self::with_breakpoints(a, b, &[], panels, order)
    }

    pub fn with_breakpoints(
        a: f64,
        b: f64,
        breakpoints: &[f64],
        panels: usize,
        order: usize,
    ) -> Result<Self> {
        if panels == 0 || !(a <= b) {
            return Err(Error::InvalidInput(format!(
                "composite rule on [{a}, {b}] with {panels} panels"
            )));
        }
        let base = QuadratureRule::gauss(order)?;
        let mut cuts = vec![a];
        let mut inner: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|&c| c > a && c < b)
            .collect();
        inner.sort_by(f64::total_cmp);
        cuts.extend(inner);
        cuts.push(b);

        let mut points = Vec::new();
        let mut weights = Vec::new();
        for seg in cuts.windows(2) {
            let h = (seg[1] - seg[0]) / panels as f64;
            for p in 0..panels {
                let lo = seg[0] + h * p as f64;
                let mid = lo + 0.5 * h;
                for (&t, &w) in base.nodes().iter().zip(base.weights()) {
                    points.push(mid + 0.5 * h * t);
                    weights.push(0.5 * h * w);
                }
            }
        }
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn legendre_low_degrees() {
        assert_eq!(legendre(0, 0.3), (1.0, 0.0));
        assert_eq!(legendre(1, 0.3), (0.3, 1.0));
        let (p, dp) = legendre(2, 1.0);
        assert!((p - 1.0).abs() < 1e-15 && (dp - 3.0).abs() < 1e-15);
        // P_2 = (3t^2 - 1)/2 away from the endpoint.
        let (p, dp) = legendre(2, 0.3);
        assert!((p - (3.0 * 0.09 - 1.0) / 2.0).abs() < 1e-15);
        assert!((dp - 0.9).abs() < 1e-15);
    }

    #[test]
    fn legendre_endpoint_derivative() {
        for n in 1..60 {
            let (p, dp) = legendre(n, 1.0);
            assert!((p - 1.0).abs() < 1e-12);
            let expect = (n * (n + 1)) as f64 / 2.0;
            assert!((dp - expect).abs() <= 1e-12 * expect, "n = {n}");
        }
    }

    #[test]
    fn second_derivative_matches_legendre_equation() {
        // (1 - t^2) P'' - 2t P' + n(n+1) P = 0
        for n in 0..20 {
            for &t in &[-0.9, -0.3, 0.0, 0.45, 0.8] {
                let (p, dp, d2p) = legendre_d2(n, t);
                let lhs = (1.0 - t * t) * d2p - 2.0 * t * dp + (n * (n + 1)) as f64 * p;
                assert!(lhs.abs() < 1e-10, "n = {n}, t = {t}: {lhs}");
            }
        }
    }

    #[test]
    fn jacobi_matches_closed_forms() {
        let (p, dp) = jacobi_1_0(1, 0.4);
        assert!((p - (3.0 * 0.4 + 1.0) / 2.0).abs() < 1e-15);
        assert!((dp - 1.5).abs() < 1e-15);
        // alpha = beta = 0 reduces to Legendre.
        for n in 0..12 {
            let (a, da) = jacobi(n, 0.0, 0.0, 0.37);
            let (b, db) = legendre(n, 0.37);
            assert!((a - b).abs() < 1e-14 && (da - db).abs() < 1e-12);
        }
    }

    #[test]
    fn gauss_small_rules() {
        let r = QuadratureRule::gauss(1).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert!((r.weights()[0] - 2.0).abs() < 1e-15);

        let r = QuadratureRule::gauss(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!((r.nodes()[0] + s).abs() < 1e-15);
        assert!((r.nodes()[1] - s).abs() < 1e-15);
        assert!((r.weights()[0] - 1.0).abs() < 1e-15);
        assert!((r.weights()[1] - 1.0).abs() < 1e-15);

        let r = QuadratureRule::gauss(5).unwrap();
        assert!((r.weights().iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gauss_rejects_zero() {
        assert!(matches!(QuadratureRule::gauss(0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn gauss_invariants_up_to_300() {
        for n in 1..=300 {
            let r = QuadratureRule::gauss(n).unwrap();
            let sum: f64 = r.weights().iter().sum();
            assert!((sum - 2.0).abs() <= 1e-13, "N = {n}: sum {sum}");
            for i in 0..n {
                let t = r.nodes()[i];
                assert!(t > -1.0 && t < 1.0);
                assert!(r.weights()[i] > 0.0);
                assert!((t + r.nodes()[n - 1 - i]).abs() <= 1e-14);
                // Backward error: even the correctly rounded root leaves
                // |P_N| ~ |P_N'| * ulp, which exceeds 1e-13 near the ends.
                let (p, dp) = legendre(n, t);
                assert!(p.abs() <= 1e-13 * dp.abs().max(1.0), "N = {n}");
                if i > 0 {
                    assert!(t > r.nodes()[i - 1]);
                }
            }
        }
    }

    #[test]
    fn integrate_examples() {
        let r = QuadratureRule::gauss(3).unwrap();
        assert!((r.integrate(&[1.0; 3]).unwrap() - 2.0).abs() < 1e-15);
        let fifth: Vec<f64> = r.nodes().iter().map(|t| t.powi(5)).collect();
        assert!(r.integrate(&fifth).unwrap().abs() < 1e-15);
        let r = QuadratureRule::gauss(2).unwrap();
        let sq: Vec<f64> = r.nodes().iter().map(|t| t * t).collect();
        assert!((r.integrate(&sq).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            r.integrate(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn exactness_on_random_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=50 {
            let rule = QuadratureRule::gauss(n).unwrap();
            for _ in 0..50 {
                let coeffs: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                // Exact: integral of t^k over [-1, 1] is 2/(k+1) for even k.
                let exact: f64 = coeffs
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| k % 2 == 0)
                    .map(|(k, c)| 2.0 * c / (k as f64 + 1.0))
                    .sum();
                let approx = rule.integrate_fn(|t| coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c));
                let scale = exact.abs().max(coeffs.iter().map(|c| c.abs()).sum::<f64>());
                assert!((approx - exact).abs() <= 1e-12 * scale, "N = {n}");
            }
        }
    }

    #[test]
    fn radau_small_rules() {
        assert_eq!(QuadratureRule::radau(1).unwrap().nodes(), &[1.0]);
        let r = QuadratureRule::radau(2).unwrap();
        assert!((r.nodes()[0] + 1.0 / 3.0).abs() < 1e-16);
        assert!((r.weights()[0] - 1.5).abs() < 1e-14);
        assert!((r.weights()[1] - 0.5).abs() < 1e-15);
        let r = QuadratureRule::radau(4).unwrap();
        assert!(r.nodes().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*r.nodes().last().unwrap(), 1.0);
    }

    #[test]
    fn radau_roots_and_exactness() {
        for n in 2..=64 {
            let r = QuadratureRule::radau(n).unwrap();
            for &t in &r.nodes()[..n - 1] {
                let (p, dp) = jacobi_1_0(n - 1, t);
                assert!(p.abs() <= 1e-12 * dp.abs().max(1.0), "N = {n}");
                assert!(t > -1.0 && t < 1.0);
            }
            // Radau integrates degree 2N - 2 exactly.
            let k = 2 * n - 2;
            let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            assert!((r.integrate_fn(|t| t.powi(k as i32)) - exact).abs() < 1e-13);
            let sum: f64 = r.weights().iter().sum();
            assert!((sum - 2.0).abs() < 1e-13, "N = {n}: {sum}");
        }
    }

    #[test]
    fn composite_rule_handles_kinks() {
        let c = CompositeRule::with_breakpoints(-1.0, 1.0, &[0.25], 4, 6).unwrap();
        let v = c.integrate(|t| (t - 0.25).abs());
        let exact = 0.5 * (1.25f64 * 1.25 + 0.75 * 0.75);
        assert!((v - exact).abs() < 1e-14);
        assert!(CompositeRule::new(1.0, 0.0, 4, 4).is_err());
    }
}
