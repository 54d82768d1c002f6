//! Exact tabular ground truth: the conditional state visitation distribution
//! `d(s̄ | s, a)`, the one-step operator whose fixed point it is, the
//! `L̄_n` norms in which that operator contracts, and the value-function
//! identities built on top of it.
//!
//! Every quantity is computed by a dense direct solve and, where it is cheap,
//! by a second independent route (power iteration, truncated series) so the
//! two can be checked against each other.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{random_simplex, Policy, TabularMdp};

/// Largest state count accepted by the dense solvers.
pub const DENSE_STATE_CAP: usize = 4096;

const ROW_TOL: f64 = 1e-9;

/// Stochastic policy table `π(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::InvalidPolicy(format!(
                "{} entries for {n_states} states x {n_actions} actions",
                probs.len()
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
        }
        Ok(Self { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Self { n_states: actions.len(), n_actions, probs }
    }

    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, strictly_positive: bool, rng: &mut R) -> Self {
        let probs = (0..n_states).flat_map(|_| random_simplex(n_actions, strictly_positive, rng)).collect();
        Self { n_states, n_actions, probs }
    }

    /// Boltzmann policy over a `(s, a)` score table.
    pub fn softmax(n_actions: usize, scores: &[f64], temperature: f64) -> Self {
        let probs = scores
            .chunks(n_actions)
            .flat_map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|&q| ((q - max) / temperature).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(move |x| x / z)
            })
            .collect();
        Self { n_states: scores.len() / n_actions, n_actions, probs }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }
}

impl Policy for TabularPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, state: &[usize]) -> Vec<f64> {
        self.row(state[0]).to_vec()
    }
}

/// Table `q(s̄ | s, a)`, one probability distribution per `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalVisitation {
    n_states: usize,
    n_actions: usize,
    /// Row-major `(s, a, s̄)`.
    table: Vec<f64>,
    gamma: f64,
}

impl ConditionalVisitation {
    pub fn new(n_states: usize, n_actions: usize, table: Vec<f64>, gamma: f64) -> Result<Self> {
        let q = Self { n_states, n_actions, table, gamma };
        q.validate(1e-8)?;
        Ok(q)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.table.len() != self.n_states * self.n_actions * self.n_states {
            return Err(Error::InvalidTable("table has wrong size".into()));
        }
        for (i, row) in self.table.chunks(self.n_states).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < -tol) || (sum - 1.0).abs() > tol {
                return Err(Error::InvalidTable(format!(
                    "slice (s={}, a={}) sums to {sum}",
                    i / self.n_actions,
                    i % self.n_actions
                )));
            }
        }
        Ok(())
    }

    /// Independent random slices, for contraction tests.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Self {
        let table = (0..n_states * n_actions).flat_map(|_| random_simplex(n_states, false, rng)).collect();
        Self { n_states, n_actions, table, gamma }
    }

    pub fn uniform(n_states: usize, n_actions: usize, gamma: f64) -> Self {
        Self {
            n_states,
            n_actions,
            table: vec![1.0 / n_states as f64; n_states * n_actions * n_states],
            gamma,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// `q(· | s, a)`.
    pub fn slice(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.table[base..base + self.n_states]
    }

    /// Signed difference table `self - other`.
    pub fn minus(&self, other: &Self) -> Vec<f64> {
        self.table.iter().zip(&other.table).map(|(a, b)| a - b).collect()
    }

    /// State-action form `d(s̄, ā | s, a) = π(ā | s̄) d(s̄ | s, a)`, row-major
    /// `(s, a, s̄, ā)`.
    pub fn with_actions(&self, policy: &TabularPolicy) -> Vec<f64> {
        let na = self.n_actions;
        let mut out = Vec::with_capacity(self.table.len() * na);
        for row in self.table.chunks(self.n_states) {
            for (sbar, &p) in row.iter().enumerate() {
                out.extend(policy.row(sbar).iter().map(|&pi| pi * p));
            }
        }
        out
    }

    /// Largest total-variation distance between matching slices.
    pub fn max_tv(&self, other: &Self) -> f64 {
        self.table
            .chunks(self.n_states)
            .zip(other.table.chunks(self.n_states))
            .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn check_shapes(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions != mdp.n_actions() {
        return Err(Error::InvalidPolicy("policy shape does not match the MDP".into()));
    }
    if mdp.n_states() > DENSE_STATE_CAP {
        return Err(Error::StateSpaceTooLarge { states: mdp.n_states(), cap: DENSE_STATE_CAP });
    }
    Ok(())
}

/// `P^π(s' | s) = Σ_a π(a|s) p(s'|s,a)` as a dense matrix.
pub fn state_kernel(mdp: &TabularMdp, policy: &TabularPolicy) -> DMatrix<f64> {
    let n = mdp.n_states();
    let mut m = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let pi = policy.prob(s, a);
            if pi == 0.0 {
                continue;
            }
            for (next, &p) in mdp.next_dist(s, a).iter().enumerate() {
                m[(s, next)] += pi * p;
            }
        }
    }
    m
}

/// Exact `d^{π,γ}(s̄ | s, a) = (1-γ) Σ_{Δ≥1} γ^{Δ-1} p_Δ^π(s̄ | s, a)`.
///
/// Solves the state-conditioned system `(I - γP^π) D = (1-γ) P^π` for
/// `D(s̄ | s') = Σ_a' π(a'|s') d(s̄ | s', a')`, then expands one step:
/// `d(· | s, a) = (1-γ) p(· | s, a) + γ Σ_s' p(s' | s, a) D(· | s')`.
pub fn exact_visitation(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<ConditionalVisitation> {
    check_shapes(mdp, policy)?;
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let kernel = state_kernel(mdp, policy);
    let system = DMatrix::identity(n, n) - &kernel * gamma;
    let rhs = &kernel * (1.0 - gamma);
    let state_cond = system.lu().solve(&rhs).ok_or(Error::Singular("conditional visitation"))?;
    let mut table = Vec::with_capacity(n * mdp.n_actions() * n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let p = mdp.next_dist(s, a);
            for sbar in 0..n {
                let mut future = 0.0;
                for (next, &pn) in p.iter().enumerate() {
                    future += pn * state_cond[(next, sbar)];
                }
                table.push((1.0 - gamma) * p[sbar] + gamma * future);
            }
        }
    }
    Ok(ConditionalVisitation { n_states: n, n_actions: mdp.n_actions(), table, gamma })
}

/// `T^π q(s̄|s,a) = (1-γ) p(s̄|s,a) + γ E_{s'~p, a'~π}[q(s̄|s',a')]`.
pub fn apply_t(mdp: &TabularMdp, policy: &TabularPolicy, q: &ConditionalVisitation) -> ConditionalVisitation {
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let gamma = mdp.gamma();
    // E_{a'~π}[q(· | s', a')] for every s'
    let mut averaged = vec![0.0; n * n];
    for next in 0..n {
        let row = &mut averaged[next * n..(next + 1) * n];
        for a in 0..na {
            let pi = policy.prob(next, a);
            if pi != 0.0 {
                for (acc, &v) in row.iter_mut().zip(q.slice(next, a)) {
                    *acc += pi * v;
                }
            }
        }
    }
    let mut table = vec![0.0; n * na * n];
    for s in 0..n {
        for a in 0..na {
            let out = &mut table[(s * na + a) * n..(s * na + a + 1) * n];
            let p = mdp.next_dist(s, a);
            for (o, &ps) in out.iter_mut().zip(p) {
                *o = (1.0 - gamma) * ps;
            }
            for (next, &pn) in p.iter().enumerate() {
                if pn != 0.0 {
                    for (o, &v) in out.iter_mut().zip(&averaged[next * n..(next + 1) * n]) {
                        *o += gamma * pn * v;
                    }
                }
            }
        }
    }
    ConditionalVisitation { n_states: n, n_actions: na, table, gamma }
}

/// `(T^π)^k q`, the power-iteration route to the fixed point.
pub fn power_iteration(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    start: &ConditionalVisitation,
    iterations: usize,
) -> ConditionalVisitation {
    (0..iterations).fold(start.clone(), |q, _| apply_t(mdp, policy, &q))
}

/// Brute-force `Σ_{Δ=1}^{K} (1-γ) γ^{Δ-1} p_Δ^π(· | s, a)` by propagating
/// state distributions step by step.
pub fn truncated_visitation_sum(mdp: &TabularMdp, policy: &TabularPolicy, terms: usize) -> ConditionalVisitation {
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let kernel = state_kernel(mdp, policy);
    let mut table = Vec::with_capacity(n * mdp.n_actions() * n);
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let mut dist = DVector::from_row_slice(mdp.next_dist(s, a));
            let mut acc = DVector::zeros(n);
            let mut weight = 1.0 - gamma;
            for _ in 0..terms {
                acc += &dist * weight;
                weight *= gamma;
                dist = kernel.tr_mul(&dist);
            }
            table.extend(acc.iter());
        }
    }
    ConditionalVisitation { n_states: n, n_actions: mdp.n_actions(), table, gamma }
}

/// `L̄_n(f) = (max_{(s,a)} Σ_s̄ |f(s̄|s,a)|^n)^{1/n}` for a signed table with
/// rows of length `row_len`.
pub fn lbar_norm(f: &[f64], row_len: usize, n: u32) -> f64 {
    assert!(n >= 1, "norm order must be at least 1");
    let max_row = f
        .chunks(row_len)
        .map(|row| row.iter().map(|v| v.abs().powi(n as i32)).sum::<f64>())
        .fold(0.0, f64::max);
    max_row.powf(1.0 / n as f64)
}

/// Returns `(L̄_n(Tq - Tq'), γ L̄_n(q - q'))`; the contraction property is
/// `lhs <= rhs` up to rounding.
pub fn check_contraction(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    q: &ConditionalVisitation,
    q2: &ConditionalVisitation,
    n: u32,
) -> (f64, f64) {
    let rows = mdp.n_states();
    let tq = apply_t(mdp, policy, q);
    let tq2 = apply_t(mdp, policy, q2);
    let lhs = lbar_norm(&tq.minus(&tq2), rows, n);
    let rhs = mdp.gamma() * lbar_norm(&q.minus(q2), rows, n);
    (lhs, rhs)
}

/// `V^π` from the Bellman linear system `(I - γP^π) V = R^π`, returned as
/// `Q^π(s, a) = R(s, a) + γ Σ_s' p(s'|s,a) V(s')`.
pub fn q_value_bellman(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    check_shapes(mdp, policy)?;
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let kernel = state_kernel(mdp, policy);
    let r_pi = DVector::from_fn(n, |s, _| (0..mdp.n_actions()).map(|a| policy.prob(s, a) * mdp.reward(s, a)).sum());
    let system = DMatrix::identity(n, n) - kernel * gamma;
    let v = system.lu().solve(&r_pi).ok_or(Error::Singular("state values"))?;
    Ok((0..n)
        .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| mdp.reward(s, a) + gamma * mdp.next_dist(s, a).iter().zip(v.iter()).map(|(p, v)| p * v).sum::<f64>())
        .collect())
}

/// `Q^π(s,a) = R(s,a) + γ/(1-γ) Σ_{s̄,ā} d(s̄,ā | s,a) R(s̄,ā)`.
///
/// `d` starts at one step ahead, so the immediate reward is added separately
/// and the tail carries a factor `γ`.
pub fn q_value_from_visitation(mdp: &TabularMdp, policy: &TabularPolicy, d: &ConditionalVisitation) -> Vec<f64> {
    let gamma = mdp.gamma();
    let n = mdp.n_states();
    let r_pi: Vec<f64> = (0..n)
        .map(|s| (0..mdp.n_actions()).map(|a| policy.prob(s, a) * mdp.reward(s, a)).sum())
        .collect();
    let scale = if gamma == 0.0 { 0.0 } else { gamma / (1.0 - gamma) };
    (0..n)
        .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| mdp.reward(s, a) + scale * d.slice(s, a).iter().zip(&r_pi).map(|(p, r)| p * r).sum::<f64>())
        .collect()
}

/// Maximum allowed disagreement between the two value routes.
pub const Q_ROUTE_TOL: f64 = 1e-7;

/// `Q^π` through both the Bellman solve and the visitation identity; errors
/// when they disagree by more than [`Q_ROUTE_TOL`].
pub fn q_value_exact(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let bellman = q_value_bellman(mdp, policy)?;
    let d = exact_visitation(mdp, policy)?;
    let identity = q_value_from_visitation(mdp, policy, &d);
    let gap = bellman.iter().zip(&identity).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if gap > Q_ROUTE_TOL {
        return Err(Error::OracleDisagreement(format!("Bellman and visitation Q differ by {gap:e}")));
    }
    Ok(bellman)
}

/// Optimal action values by value iteration (to a 1e-12 sup-norm residual).
pub fn optimal_q(mdp: &TabularMdp) -> Vec<f64> {
    let (n, na, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut v = vec![0.0; n];
    let mut q = vec![0.0; n * na];
    loop {
        for s in 0..n {
            for a in 0..na {
                q[s * na + a] = mdp.reward(s, a) + gamma * mdp.next_dist(s, a).iter().zip(&v).map(|(p, v)| p * v).sum::<f64>();
            }
        }
        let mut residual: f64 = 0.0;
        for s in 0..n {
            let best = q[s * na..(s + 1) * na].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((best - v[s]).abs());
            v[s] = best;
        }
        if residual < 1e-12 {
            return q;
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundCheck {
    /// `Q^π(s, a)`.
    pub q: Vec<f64>,
    /// Lower bound on `Q^π(s, a)` built from the reference policy.
    pub bound: Vec<f64>,
}

impl BoundCheck {
    /// Largest violation `bound - q` (non-positive when the bound holds).
    pub fn worst_violation(&self) -> f64 {
        self.bound.iter().zip(&self.q).map(|(b, q)| b - q).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.worst_violation() <= tol
    }
}

fn sup_log_ratio(a: &[f64], b: &[f64], s: usize, action: usize) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        match (x > 0.0, y > 0.0) {
            (true, true) => sup = sup.max((x.ln() - y.ln()).abs()),
            (false, false) => {}
            _ => {
                return Err(Error::SupportMismatch {
                    state: s,
                    action,
                    detail: format!("entry {i}: {x:e} vs {y:e}"),
                })
            }
        }
    }
    Ok(sup)
}

fn check_nonnegative_rewards(mdp: &TabularMdp) -> Result<()> {
    if mdp.rewards().iter().any(|&r| r < 0.0) {
        return Err(Error::InvalidMdp("the value bound needs non-negative rewards".into()));
    }
    Ok(())
}

/// Value bound between two policies:
/// `bound(s,a) = Q^{π*}(s,a) exp(-‖log d^{π}(·,·|s,a) - log d^{π*}(·,·|s,a)‖_∞)`,
/// with the state-action visitation distributions compared over their
/// shared support.
pub fn check_theorem1(mdp: &TabularMdp, policy: &TabularPolicy, policy_star: &TabularPolicy) -> Result<BoundCheck> {
    check_nonnegative_rewards(mdp)?;
    let q = q_value_exact(mdp, policy)?;
    let q_star = q_value_exact(mdp, policy_star)?;
    let d = exact_visitation(mdp, policy)?.with_actions(policy);
    let d_star = exact_visitation(mdp, policy_star)?.with_actions(policy_star);
    let row = mdp.n_states() * mdp.n_actions();
    let mut bound = Vec::with_capacity(q.len());
    for (i, (a, b)) in d.chunks(row).zip(d_star.chunks(row)).enumerate() {
        let sup = sup_log_ratio(a, b, i / mdp.n_actions(), i % mdp.n_actions())?;
        bound.push(q_star[i] * (-sup).exp());
    }
    Ok(BoundCheck { q, bound })
}

/// The relaxed bound through a strictly positive reference measure `q*`
/// over `(s̄, ā)`:
/// `Q^π ≥ Q^{π*} exp(-‖log d^π/q*‖_∞) exp(-‖log d^{π*}/q*‖_∞)`.
pub fn check_reference_bound(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    policy_star: &TabularPolicy,
    reference: &[f64],
) -> Result<BoundCheck> {
    check_nonnegative_rewards(mdp)?;
    let row = mdp.n_states() * mdp.n_actions();
    if reference.len() != row || reference.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidTable("reference measure must be strictly positive over (s̄, ā)".into()));
    }
    let q = q_value_exact(mdp, policy)?;
    let q_star = q_value_exact(mdp, policy_star)?;
    let d = exact_visitation(mdp, policy)?.with_actions(policy);
    let d_star = exact_visitation(mdp, policy_star)?.with_actions(policy_star);
    let mut bound = Vec::with_capacity(q.len());
    for (i, (a, b)) in d.chunks(row).zip(d_star.chunks(row)).enumerate() {
        let (s, act) = (i / mdp.n_actions(), i % mdp.n_actions());
        if a.iter().chain(b).any(|&p| p <= 0.0) {
            return Err(Error::SupportMismatch { state: s, action: act, detail: "zero visitation against a positive reference".into() });
        }
        let e1 = sup_log_ratio(a, reference, s, act)?;
        let e2 = sup_log_ratio(b, reference, s, act)?;
        bound.push(q_star[i] * (-e1).exp() * (-e2).exp());
    }
    Ok(BoundCheck { q, bound })
}

/// Marginal discounted state measure from the initial distribution,
/// `ρ(s̄) = (1-γ) Σ_{t≥0} γ^t P(s_t = s̄)`, expanded through `d`.
pub fn discounted_state_measure(mdp: &TabularMdp, policy: &TabularPolicy, d: &ConditionalVisitation) -> Vec<f64> {
    let gamma = mdp.gamma();
    let mut rho: Vec<f64> = mdp.initial().iter().map(|p| (1.0 - gamma) * p).collect();
    for (s, &p0) in mdp.initial().iter().enumerate() {
        for a in 0..mdp.n_actions() {
            let w = gamma * p0 * policy.prob(s, a);
            if w != 0.0 {
                for (r, &v) in rho.iter_mut().zip(d.slice(s, a)) {
                    *r += w * v;
                }
            }
        }
    }
    rho
}
