//! Finite average-reward MDPs and exact reference computations.
//!
//! State-action pairs are flattened row-major by state: pair `(x, a)` lives at
//! index `x * num_actions + a`. Every vector over pairs in this crate (rewards,
//! occupancy measures, rows of `Q`, columns of `W`) uses that order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on probability rows (transition rows, policy rows, simplices).
pub const PROB_TOL: f64 = 1e-12;

/// Singular values below this mark a direction of the stationary null space.
const NULL_SPACE_TOL: f64 = 1e-8;

/// Above this condition number the dense stationary solve is replaced by
/// power iteration.
const MAX_CONDITION: f64 = 1e12;

/// Required accuracy of a stationary distribution, `||dP - d||_1`.
const STATIONARY_TOL: f64 = 1e-10;

/// A finite MDP with dense transition kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    /// Row `x * num_actions + a` is `P(. | x, a)`.
    transitions: DMatrix<f64>,
    rewards: DVector<f64>,
    relaxed_rewards: bool,
}

impl Mdp {
    /// Builds an MDP from nested `[x][a][x']` transitions and `[x][a]` rewards.
    ///
    /// Rewards must lie in `[0, 1]`.
    pub fn new(transitions: &[Vec<Vec<f64>>], rewards: &[Vec<f64>]) -> Result<Self> {
        let (p, r, ns, na) = flatten(transitions, rewards)?;
        Self::from_dense(ns, na, p, r, false)
    }

    /// Like [`Mdp::new`] but accepts any finite rewards. The result carries a
    /// flag ([`Mdp::has_relaxed_rewards`]) so downstream checks that rely on
    /// `r in [0, 1]` can tell.
    pub fn with_relaxed_rewards(transitions: &[Vec<Vec<f64>>], rewards: &[Vec<f64>]) -> Result<Self> {
        let (p, r, ns, na) = flatten(transitions, rewards)?;
        Self::from_dense(ns, na, p, r, true)
    }

    /// Builds an MDP from a `(|X||A|) x |X|` kernel matrix and a reward vector
    /// over pairs.
    pub fn from_dense(
        num_states: usize,
        num_actions: usize,
        transitions: DMatrix<f64>,
        rewards: DVector<f64>,
        relaxed_rewards: bool,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        let pairs = num_states * num_actions;
        if transitions.shape() != (pairs, num_states) {
            return Err(Error::InvalidMdp(format!(
                "transition matrix has shape {:?}, expected ({pairs}, {num_states})",
                transitions.shape()
            )));
        }
        if rewards.len() != pairs {
            return Err(Error::InvalidMdp(format!(
                "reward vector has length {}, expected {pairs}",
                rewards.len()
            )));
        }
        for x in 0..num_states {
            for a in 0..num_actions {
                let row = transitions.row(x * num_actions + a);
                let mut sum = 0.0;
                for (next, &p) in row.iter().enumerate() {
                    if !p.is_finite() || p < 0.0 {
                        return Err(Error::InvalidMdp(format!(
                            "transitions[{x}][{a}][{next}] = {p} is not a probability"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "transitions[{x}][{a}] sums to {sum}, not 1"
                    )));
                }
                let r = rewards[x * num_actions + a];
                if !r.is_finite() {
                    return Err(Error::InvalidMdp(format!("rewards[{x}][{a}] = {r} is not finite")));
                }
                if !relaxed_rewards && !(0.0..=1.0).contains(&r) {
                    return Err(Error::InvalidMdp(format!(
                        "rewards[{x}][{a}] = {r} is outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { num_states, num_actions, transitions, rewards, relaxed_rewards })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    #[inline]
    pub fn pair(&self, x: usize, a: usize) -> usize {
        x * self.num_actions + a
    }

    /// The `(|X||A|) x |X|` transition matrix.
    pub fn transitions(&self) -> &DMatrix<f64> {
        &self.transitions
    }

    /// Rewards as a vector over pairs.
    pub fn rewards(&self) -> &DVector<f64> {
        &self.rewards
    }

    pub fn prob(&self, x: usize, a: usize, next: usize) -> f64 {
        self.transitions[(self.pair(x, a), next)]
    }

    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.rewards[self.pair(x, a)]
    }

    /// True when the rewards were allowed to leave `[0, 1]`.
    pub fn has_relaxed_rewards(&self) -> bool {
        self.relaxed_rewards
    }

    /// Nested `[x][a][x']` copy of the kernel.
    pub fn transitions_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.num_states)
            .map(|x| {
                (0..self.num_actions)
                    .map(|a| self.transitions.row(self.pair(x, a)).iter().copied().collect())
                    .collect()
            })
            .collect()
    }

    /// Nested `[x][a]` copy of the rewards.
    pub fn rewards_nested(&self) -> Vec<Vec<f64>> {
        (0..self.num_states)
            .map(|x| (0..self.num_actions).map(|a| self.reward(x, a)).collect())
            .collect()
    }

    /// `r(x, a) + sum_x' P(x'|x, a) v(x')` arranged as a `|X| x |A|` matrix.
    pub fn lookahead(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let backed = &self.transitions * v + &self.rewards;
        DMatrix::from_row_slice(self.num_states, self.num_actions, backed.as_slice())
    }
}

fn flatten(
    transitions: &[Vec<Vec<f64>>],
    rewards: &[Vec<f64>],
) -> Result<(DMatrix<f64>, DVector<f64>, usize, usize)> {
    let ns = transitions.len();
    if ns == 0 {
        return Err(Error::InvalidMdp("need at least one state".into()));
    }
    let na = transitions[0].len();
    if rewards.len() != ns {
        return Err(Error::InvalidMdp(format!("rewards has {} states, expected {ns}", rewards.len())));
    }
    let mut p = DMatrix::zeros(ns * na, ns);
    let mut r = DVector::zeros(ns * na);
    for x in 0..ns {
        if transitions[x].len() != na {
            return Err(Error::InvalidMdp(format!(
                "transitions[{x}] has {} actions, expected {na}",
                transitions[x].len()
            )));
        }
        if rewards[x].len() != na {
            return Err(Error::InvalidMdp(format!(
                "rewards[{x}] has {} actions, expected {na}",
                rewards[x].len()
            )));
        }
        for a in 0..na {
            let row = &transitions[x][a];
            if row.len() != ns {
                return Err(Error::InvalidMdp(format!(
                    "transitions[{x}][{a}] has length {}, expected {ns}",
                    row.len()
                )));
            }
            for (next, &prob) in row.iter().enumerate() {
                p[(x * na + a, next)] = prob;
            }
            r[x * na + a] = rewards[x][a];
        }
    }
    Ok((p, r, ns, na))
}

/// A randomized stationary policy `pi(a | x)`, stored as a `|X| x |A|` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: DMatrix<f64>,
}

impl Policy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        for (x, row) in probs.row_iter().enumerate() {
            let mut sum = 0.0;
            for (a, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::InvalidPolicy(format!("pi[{x}][{a}] = {p}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidPolicy(format!("row {x} sums to {sum}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let na = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != na) {
            return Err(Error::InvalidPolicy("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), na, |x, a| rows[x][a]))
    }

    /// Deterministic policy taking `actions[x]` in state `x`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let mut probs = DMatrix::zeros(actions.len(), num_actions);
        for (x, &a) in actions.iter().enumerate() {
            probs[(x, a)] = 1.0;
        }
        Self { probs }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self { probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64) }
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[(x, a)]
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Most likely action per state, lowest index on ties.
    pub fn greedy_actions(&self) -> Vec<usize> {
        self.probs
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for a in 1..row.len() {
                    if row[a] > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

/// A distribution over state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionDist(DVector<f64>);

impl StateActionDist {
    pub fn new(mu: DVector<f64>) -> Result<Self> {
        if let Some(i) = mu.iter().position(|&m| !m.is_finite() || m < 0.0) {
            return Err(Error::DimensionMismatch(format!("mu[{i}] = {} is not a probability", mu[i])));
        }
        let sum = mu.sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::DimensionMismatch(format!("mu sums to {sum}, not 1")));
        }
        Ok(Self(mu))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    /// Marginal over states, `d(x) = sum_a mu(x, a)`.
    pub fn state_marginal(&self, num_actions: usize) -> DVector<f64> {
        let ns = self.0.len() / num_actions;
        DVector::from_fn(ns, |x, _| self.0.rows(x * num_actions, num_actions).sum())
    }
}

/// A (differential) value function over states.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFn(DVector<f64>);

impl ValueFn {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::DimensionMismatch("value function has non-finite entries".into()));
        }
        Ok(Self(v))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    /// `max_x v(x) - min_x v(x)`.
    pub fn span(&self) -> f64 {
        self.0.max() - self.0.min()
    }
}

/// The `(|X||A|) x |X|` matrix `Q = P - E` with `E_{(x,a),x'} = 1{x' = x}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix(DMatrix<f64>);

impl QMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn build_q_matrix(mdp: &Mdp) -> QMatrix {
    let mut q = mdp.transitions.clone();
    for x in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            q[(mdp.pair(x, a), x)] -= 1.0;
        }
    }
    QMatrix(q)
}

/// `P_pi(x'|x) = sum_a pi(a|x) P(x'|x, a)`.
pub fn policy_transition_matrix(mdp: &Mdp, pi: &Policy) -> DMatrix<f64> {
    let ns = mdp.num_states;
    let mut p = DMatrix::zeros(ns, ns);
    for x in 0..ns {
        for a in 0..mdp.num_actions {
            let w = pi.prob(x, a);
            if w != 0.0 {
                let row = mdp.transitions.row(mdp.pair(x, a));
                for (next, &prob) in row.iter().enumerate() {
                    p[(x, next)] += w * prob;
                }
            }
        }
    }
    p
}

/// Unique stationary distribution `d = d P` of a row-stochastic matrix.
///
/// Solves `[P^T - I; 1^T] d = [0; 1]` densely; a rank-deficient system means
/// the chain has several recurrent classes.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::DimensionMismatch(format!("{n}x{} matrix is not square", p.ncols())));
    }
    let mut system = DMatrix::zeros(n + 1, n);
    system.view_mut((0, 0), (n, n)).copy_from(&(p.transpose() - DMatrix::identity(n, n)));
    system.row_mut(n).fill(1.0);
    let svd = system.svd(true, true);
    let deficient = svd.singular_values.iter().filter(|&&s| s < NULL_SPACE_TOL).count();
    if deficient > 0 {
        return Err(Error::NonUniqueStationary { dim: deficient + 1 });
    }
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();

    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    if smax / smin <= MAX_CONDITION {
        let d = svd.solve(&rhs, 0.0).map_err(|e| Error::NoConvergence {
            iterations: 0,
            reason: e.to_string(),
        })?;
        let d = clean_distribution(d);
        if stationary_residual(p, &d) <= STATIONARY_TOL {
            return Ok(d);
        }
    }
    power_iteration(p)
}

fn clean_distribution(mut d: DVector<f64>) -> DVector<f64> {
    d.apply(|x| *x = x.max(0.0));
    let s = d.sum();
    d / s
}

fn stationary_residual(p: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    (p.tr_mul(d) - d).lp_norm(1)
}

fn power_iteration(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    const MAX_ITERS: usize = 200_000;
    let n = p.nrows();
    // The lazy chain (P + I) / 2 has the same stationary distribution and is aperiodic.
    let lazy = (p + DMatrix::identity(n, n)) * 0.5;
    let lazy_t = lazy.transpose();
    let mut d = DVector::from_element(n, 1.0 / n as f64);
    for it in 0..MAX_ITERS {
        let next = &lazy_t * &d;
        let next = clean_distribution(next);
        let change = (&next - &d).lp_norm(1);
        d = next;
        if (change < 1e-15 || it % 64 == 0) && stationary_residual(p, &d) <= STATIONARY_TOL {
            return Ok(d);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITERS,
        reason: "power iteration for the stationary distribution".into(),
    })
}

/// `mu_pi(x, a) = d_pi(x) pi(a | x)`.
pub fn occupancy_from_policy(mdp: &Mdp, pi: &Policy) -> Result<StateActionDist> {
    check_policy_shape(mdp, pi)?;
    let d = stationary_distribution(&policy_transition_matrix(mdp, pi))?;
    let mut mu = DVector::zeros(mdp.num_pairs());
    for x in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            mu[mdp.pair(x, a)] = d[x] * pi.prob(x, a);
        }
    }
    Ok(StateActionDist(mu))
}

/// `rho_pi = <mu_pi, r>`.
pub fn average_reward(mdp: &Mdp, pi: &Policy) -> Result<f64> {
    Ok(occupancy_from_policy(mdp, pi)?.0.dot(&mdp.rewards))
}

fn check_policy_shape(mdp: &Mdp, pi: &Policy) -> Result<()> {
    if pi.num_states() != mdp.num_states || pi.num_actions() != mdp.num_actions {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{}, MDP has {} states and {} actions",
            pi.num_states(),
            pi.num_actions(),
            mdp.num_states,
            mdp.num_actions
        )));
    }
    Ok(())
}

/// `pi(a|x) = mu(x, a) / sum_a' mu(x, a')`; states without mass get the uniform row.
pub fn extract_policy(mu: &DVector<f64>, num_actions: usize) -> Result<Policy> {
    if num_actions == 0 || !mu.len().is_multiple_of(num_actions) {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} is not a multiple of {num_actions} actions",
            mu.len()
        )));
    }
    if let Some(i) = mu.iter().position(|&m| !m.is_finite() || m < 0.0) {
        return Err(Error::InvalidPolicy(format!("mass {} at pair {i} is negative", mu[i])));
    }
    if mu.iter().all(|&m| m == 0.0) {
        return Err(Error::AllZeroInput);
    }
    let ns = mu.len() / num_actions;
    let mut probs = DMatrix::zeros(ns, num_actions);
    for x in 0..ns {
        let block = mu.rows(x * num_actions, num_actions);
        let mass = block.sum();
        for a in 0..num_actions {
            probs[(x, a)] = if mass > 0.0 { block[a] / mass } else { 1.0 / num_actions as f64 };
        }
    }
    Ok(Policy { probs })
}

/// `||Q^T mu||_1`: how far `mu` is from satisfying the flow constraints.
pub fn flow_residual(q: &QMatrix, mu: &DVector<f64>) -> f64 {
    q.0.tr_mul(mu).lp_norm(1)
}

/// Largest violation of `v(x) = max_a [r(x,a) - rho + sum_x' P(x'|x,a) v(x')]`.
pub fn bellman_residual(mdp: &Mdp, v: &DVector<f64>, rho: f64) -> f64 {
    let look = mdp.lookahead(v);
    (0..mdp.num_states)
        .map(|x| (look.row(x).max() - rho - v[x]).abs())
        .fold(0.0, f64::max)
}

/// Exact solution of the average-reward problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    /// Optimal differential values, anchored at `v(x_0) = 0`.
    pub v_star: ValueFn,
    pub mu_star: StateActionDist,
    pub rho_star: f64,
    pub policy_star: Policy,
}

/// Gain and bias of a policy: solves `v + rho 1 = r_pi + P_pi v` with `v(x_0) = 0`.
pub fn evaluate_policy(mdp: &Mdp, pi: &Policy) -> Result<(ValueFn, f64)> {
    check_policy_shape(mdp, pi)?;
    let ns = mdp.num_states;
    let p_pi = policy_transition_matrix(mdp, pi);
    let r_pi = DVector::from_fn(ns, |x, _| {
        (0..mdp.num_actions).map(|a| pi.prob(x, a) * mdp.reward(x, a)).sum::<f64>()
    });
    // Unknowns: rho, v(1), ..., v(n-1). Column 0 of (I - P_pi) is dropped by the gauge.
    let mut a = DMatrix::identity(ns, ns) - p_pi;
    a.column_mut(0).fill(1.0);
    let lu = a.lu();
    let sol = lu.solve(&r_pi).ok_or_else(|| Error::NoConvergence {
        iterations: 0,
        reason: "policy evaluation system is singular (multichain policy)".into(),
    })?;
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::NoConvergence {
            iterations: 0,
            reason: "policy evaluation produced non-finite values".into(),
        });
    }
    let rho = sol[0];
    let mut v = sol;
    v[0] = 0.0;
    Ok((ValueFn(v), rho))
}

/// Greedy action per state with the lowest index among near-ties.
pub fn greedy(look: &DMatrix<f64>) -> Vec<usize> {
    look.row_iter()
        .map(|row| {
            let max = row.max();
            let tol = 1e-12 * (1.0 + max.abs());
            (0..row.len()).find(|&a| row[a] >= max - tol).unwrap_or(0)
        })
        .collect()
}

/// Result of relative value iteration.
#[derive(Debug, Clone)]
pub struct RviOutcome {
    pub v: ValueFn,
    pub rho: f64,
    pub policy: Policy,
    pub iterations: usize,
    /// `span(Tv - v)` at the final iteration; brackets the optimal gain.
    pub span: f64,
}

/// One recorded iteration of relative value iteration.
#[derive(Debug, Clone, Copy)]
pub struct RviStep {
    pub iteration: usize,
    /// `span(Tv - v)`, an upper bound on `|rho* - rho|` for the midpoint estimate, times two.
    pub span: f64,
    pub rho: f64,
}

/// Relative value iteration, stopping when `span(Tv - v) <= tol`.
pub fn relative_value_iteration(mdp: &Mdp, tol: f64, max_iter: usize) -> Result<RviOutcome> {
    relative_value_iteration_with(mdp, tol, max_iter, |_, _| {})
}

/// [`relative_value_iteration`] with a callback observing every iterate and its greedy policy.
pub fn relative_value_iteration_with(
    mdp: &Mdp,
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(&RviStep, &DMatrix<f64>),
) -> Result<RviOutcome> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    let mut v = DVector::zeros(mdp.num_states);
    for it in 1..=max_iter {
        let look = mdp.lookahead(&v);
        let tv = DVector::from_fn(mdp.num_states, |x, _| look.row(x).max());
        let diff = &tv - &v;
        let (lo, hi) = (diff.min(), diff.max());
        let step = RviStep { iteration: it, span: hi - lo, rho: 0.5 * (lo + hi) };
        observe(&step, &look);
        if step.span <= tol {
            let policy = Policy::deterministic(&greedy(&look), mdp.num_actions);
            let anchor = tv[0];
            return Ok(RviOutcome {
                v: ValueFn(tv.add_scalar(-anchor)),
                rho: step.rho,
                policy,
                iterations: it,
                span: step.span,
            });
        }
        v = tv.add_scalar(-tv[0]);
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        reason: format!("relative value iteration did not reach span {tol}"),
    })
}

/// Exact optimal gain, bias, occupancy and policy via Howard's policy iteration.
///
/// The starting policy is the greedy policy of a damped relative value
/// iteration, which keeps the iteration away from multichain policies whose
/// evaluation equations are singular.
pub fn solve_exact(mdp: &Mdp) -> Result<OptimalSolution> {
    const MAX_PI_ITERS: usize = 1_000;
    let mut actions = warm_start(mdp);
    for it in 0..MAX_PI_ITERS {
        let pi = Policy::deterministic(&actions, mdp.num_actions);
        let (v, _) = evaluate_policy(mdp, &pi)?;
        let look = mdp.lookahead(v.as_vector());
        let best = greedy(&look);
        let mut changed = false;
        for x in 0..mdp.num_states {
            let current = look[(x, actions[x])];
            let candidate = look[(x, best[x])];
            if candidate > current + 1e-12 * (1.0 + current.abs()) {
                actions[x] = best[x];
                changed = true;
            }
        }
        if !changed {
            let mu = occupancy_from_policy(mdp, &pi)?;
            let rho_mu = mu.0.dot(&mdp.rewards);
            let residual = bellman_residual(mdp, v.as_vector(), rho_mu);
            let scale = 1.0 + v.0.amax();
            if residual > 1e-9 * scale {
                return Err(Error::NoConvergence {
                    iterations: it,
                    reason: format!("Bellman residual {residual:e} after policy iteration"),
                });
            }
            return Ok(OptimalSolution { v_star: v, mu_star: mu, rho_star: rho_mu, policy_star: pi });
        }
    }
    Err(Error::NoConvergence { iterations: MAX_PI_ITERS, reason: "policy iteration cycled".into() })
}

fn warm_start(mdp: &Mdp) -> Vec<usize> {
    // Aperiodicity transform: P' = (P + I) / 2 keeps the optimal policies and
    // makes value iteration converge on periodic chains.
    let mut v = DVector::zeros(mdp.num_states);
    let mut look = mdp.lookahead(&v);
    for _ in 0..20_000 {
        let tv = DVector::from_fn(mdp.num_states, |x, _| look.row(x).max());
        let damped = (&tv + &v) * 0.5;
        let diff = &damped - &v;
        v = damped.add_scalar(-damped[0]);
        look = mdp.lookahead(&v);
        if diff.max() - diff.min() < 1e-10 {
            break;
        }
    }
    greedy(&look)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swap_chain() -> Mdp {
        Mdp::new(&[vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]], &[vec![0.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn rejects_bad_rows_with_index() {
        let err = Mdp::new(&[vec![vec![0.5, 0.4]], vec![vec![1.0, 0.0]]], &[vec![0.0], vec![0.0]])
            .unwrap_err();
        assert!(err.to_string().contains("transitions[0][0]"), "{err}");
        let err = Mdp::new(&[vec![vec![1.0]]], &[vec![1.5]]).unwrap_err();
        assert!(err.to_string().contains("rewards[0][0]"), "{err}");
        assert!(Mdp::with_relaxed_rewards(&[vec![vec![1.0]]], &[vec![1.5]]).is_ok());
    }

    #[test]
    fn self_loops_give_zero_q() {
        let mdp = Mdp::new(
            &[vec![vec![1.0, 0.0], vec![1.0, 0.0]], vec![vec![0.0, 1.0], vec![0.0, 1.0]]],
            &[vec![0.1, 0.2], vec![0.3, 0.4]],
        )
        .unwrap();
        assert_eq!(build_q_matrix(&mdp).as_matrix().amax(), 0.0);
    }

    #[test]
    fn swap_chain_transition_and_stationary() {
        let mdp = swap_chain();
        let p = policy_transition_matrix(&mdp, &Policy::uniform(2, 1));
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let d = stationary_distribution(&p).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-14 && (d[1] - 0.5).abs() < 1e-14);
        let mu = occupancy_from_policy(&mdp, &Policy::uniform(2, 1)).unwrap();
        assert!((mu.as_vector()[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn symmetric_lazy_chain() {
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let d = stationary_distribution(&p).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let p = DMatrix::<f64>::identity(3, 3);
        match stationary_distribution(&p) {
            Err(Error::NonUniqueStationary { dim }) => assert_eq!(dim, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identical_actions_average_to_either() {
        let row = vec![0.2, 0.3, 0.5];
        let mdp = Mdp::new(
            &vec![vec![row.clone(), row.clone()]; 3],
            &vec![vec![0.0, 0.0]; 3],
        )
        .unwrap();
        let p = policy_transition_matrix(&mdp, &Policy::uniform(3, 2));
        for x in 0..3 {
            for y in 0..3 {
                assert!((p[(x, y)] - row[y]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_state_occupancy_is_the_policy() {
        let mdp = Mdp::new(&[vec![vec![1.0], vec![1.0], vec![1.0]]], &[vec![0.1, 0.5, 0.9]]).unwrap();
        let pi = Policy::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap();
        let mu = occupancy_from_policy(&mdp, &pi).unwrap();
        for a in 0..3 {
            assert!((mu.as_vector()[a] - pi.prob(0, a)).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_reward_gives_constant_gain() {
        let mdp = Mdp::new(
            &[vec![vec![0.3, 0.7], vec![0.5, 0.5]], vec![vec![0.9, 0.1], vec![0.2, 0.8]]],
            &[vec![0.4, 0.4], vec![0.4, 0.4]],
        )
        .unwrap();
        let pi = Policy::from_rows(&[vec![0.5, 0.5], vec![0.1, 0.9]]).unwrap();
        assert!((average_reward(&mdp, &pi).unwrap() - 0.4).abs() < 1e-14);
    }

    #[test]
    fn extraction_edge_cases() {
        assert!(matches!(extract_policy(&DVector::zeros(4), 2), Err(Error::AllZeroInput)));
        let pi = extract_policy(&DVector::from_element(6, 1.0 / 6.0), 3).unwrap();
        assert!(pi.probs().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let pi = extract_policy(&DVector::from_vec(vec![0.0, 0.0, 0.25, 0.75]), 2).unwrap();
        assert_eq!(pi.prob(0, 0), 0.5);
        assert_eq!(pi.prob(1, 1), 0.75);
    }

    #[test]
    fn single_state_problem() {
        let mdp = Mdp::new(&[vec![vec![1.0]]], &[vec![0.7]]).unwrap();
        let opt = solve_exact(&mdp).unwrap();
        assert!((opt.rho_star - 0.7).abs() < 1e-15);
        assert_eq!(opt.v_star.as_vector()[0], 0.0);
        let rvi = relative_value_iteration(&mdp, 1e-9, 10).unwrap();
        assert_eq!(rvi.iterations, 1);
        assert!((rvi.rho - 0.7).abs() < 1e-15);
    }

    #[test]
    fn self_loop_point_mass_has_zero_flow_residual() {
        let mdp = Mdp::new(
            &[vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let q = build_q_matrix(&mdp);
        let mut mu = DVector::zeros(4);
        mu[0] = 1.0;
        assert_eq!(flow_residual(&q, &mu), 0.0);
        mu[0] = 0.0;
        mu[1] = 1.0;
        assert_eq!(flow_residual(&q, &mu), 2.0);
    }
}
