//! Benchmark environments: the three-state coherence counterexample, a
//! toroidal gridworld with a teleporting reward cell, and a chain whose only
//! reward sits in the first state, together with low-dimensional features for
//! the chain.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assumptions::check_realizability;
use crate::error::{Error, Result};
use crate::mdp::{solve_exact, Mdp, OptimalSolution};
use crate::saddle::{FeatureMaps, RelaxedProblem};

/// Tolerance for the realizability check run by [`build_chain_features`].
pub const CHAIN_REALIZABILITY_TOL: f64 = 1e-8;

/// The three-state counterexample and its hand-made features.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub mdp: Mdp,
    pub features: FeatureMaps,
    pub optimal: OptimalSolution,
    /// Flattened pair indices of the four available actions, in the order
    /// `(x1, right), (x2, left), (x2, right), (x3, left)`.
    pub effective_pairs: [usize; 4],
}

impl Counterexample {
    /// Embeds a 4-vector over the available pairs into the full pair space.
    pub fn embed(&self, y: &[f64; 4]) -> DVector<f64> {
        let mut mu = DVector::zeros(self.mdp.num_pairs());
        for (k, &pair) in self.effective_pairs.iter().enumerate() {
            mu[pair] = y[k];
        }
        mu
    }
}

/// Three states in a row. The middle one can drift left (reward 1) or right
/// (reward 3); the end states return to the middle. Action 0 is "left",
/// action 1 is "right"; the end states have one real action, duplicated.
///
/// `F = (-1, -1, 1)^T` spans `v*` but not the directions needed for coherence,
/// and `W` selects the four available pairs.
pub fn build_counterexample() -> Counterexample {
    let to_middle = vec![0.0, 1.0, 0.0];
    let transitions = vec![
        vec![to_middle.clone(), to_middle.clone()],
        vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]],
        vec![to_middle.clone(), to_middle],
    ];
    let rewards = vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![3.0, 3.0]];
    let mdp = Mdp::with_relaxed_rewards(&transitions, &rewards).expect("valid by construction");
    let effective_pairs = [mdp.pair(0, 1), mdp.pair(1, 0), mdp.pair(1, 1), mdp.pair(2, 0)];

    let f = DMatrix::from_column_slice(3, 1, &[-1.0, -1.0, 1.0]);
    let mut w = DMatrix::zeros(4, mdp.num_pairs());
    for (m, &pair) in effective_pairs.iter().enumerate() {
        w[(m, pair)] = 1.0;
    }
    let features = FeatureMaps::new(f, w).expect("valid by construction");
    let optimal = solve_exact(&mdp).expect("the counterexample is unichain");
    Counterexample { mdp, features, optimal, effective_pairs }
}

/// Duality gap and policy loss at the relaxed point `(u_hat, y_eps)` with
/// `y_eps = (1 - eps, eps, 0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub epsilon: f64,
    pub y_eps: [f64; 4],
    /// `L(F u_hat, mu*) - L(v*, W^T y_eps)`.
    pub duality_gap: f64,
    /// Policy extracted from `W^T y_eps`, one row of action probabilities per state.
    pub policy: Vec<Vec<f64>>,
    pub policy_reward: f64,
    pub optimal_reward: f64,
    /// `rho* - rho` of the extracted policy.
    pub policy_suboptimality: f64,
}

/// Evaluates the counterexample at `y_eps` for `eps` in `[0, 1]`. The gap does
/// not depend on `u_hat`, which is taken to be zero.
pub fn counterexample_report(epsilon: f64) -> Result<CounterexampleReport> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidConfig(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    let ce = build_counterexample();
    let y_eps = [1.0 - epsilon, epsilon, 0.0, 0.0];
    let mu_eps = ce.embed(&y_eps);
    let q = crate::mdp::build_q_matrix(&ce.mdp);
    let opt = &ce.optimal;
    let u_hat = DVector::zeros(ce.features.n());
    let duality_gap = crate::saddle::exact_duality_gap(
        &ce.mdp,
        &q,
        &(ce.features.f() * u_hat),
        &mu_eps,
        opt.v_star.as_vector(),
        opt.mu_star.as_vector(),
    );
    let policy = crate::mdp::extract_policy(&mu_eps, ce.mdp.num_actions())?;
    let policy_reward = crate::mdp::average_reward(&ce.mdp, &policy)?;
    Ok(CounterexampleReport {
        epsilon,
        y_eps,
        duality_gap,
        policy: policy.probs().row_iter().map(|r| r.iter().copied().collect()).collect(),
        policy_reward,
        optimal_reward: opt.rho_star,
        policy_suboptimality: opt.rho_star - policy_reward,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub side: usize,
    pub reward_state: usize,
    pub success_prob: f64,
}

impl GridworldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.side < 2 {
            return Err(Error::InvalidSpec(format!("side must be at least 2, got {}", self.side)));
        }
        if self.reward_state >= self.side * self.side {
            return Err(Error::InvalidSpec(format!(
                "reward_state {} is outside the {}x{} grid",
                self.reward_state, self.side, self.side
            )));
        }
        check_prob("success_prob", self.success_prob)
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("{name} must lie in (0, 1], got {p}")))
    }
}

/// Gridworld actions, in index order.
pub const GRID_ACTIONS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// `s x s` torus. State `row * s + col`; actions up, down, left, right. A
/// move succeeds with `success_prob` and otherwise goes the opposite way.
/// Every action in the reward cell teleports uniformly to another cell and
/// earns reward 1.
pub fn build_gridworld(spec: &GridworldSpec) -> Result<Mdp> {
    spec.validate()?;
    let s = spec.side;
    let ns = s * s;
    let na = GRID_ACTIONS.len();
    let p = spec.success_prob;
    let shift = |x: usize, (dr, dc): (isize, isize)| {
        let r = (x / s) as isize + dr;
        let c = (x % s) as isize + dc;
        r.rem_euclid(s as isize) as usize * s + c.rem_euclid(s as isize) as usize
    };
    let mut trans = DMatrix::zeros(ns * na, ns);
    let mut rewards = DVector::zeros(ns * na);
    for x in 0..ns {
        for (a, &(dr, dc)) in GRID_ACTIONS.iter().enumerate() {
            let row = x * na + a;
            if x == spec.reward_state {
                rewards[row] = 1.0;
                for next in (0..ns).filter(|&n| n != x) {
                    trans[(row, next)] = 1.0 / (ns - 1) as f64;
                }
            } else {
                trans[(row, shift(x, (dr, dc)))] += p;
                trans[(row, shift(x, (-dr, -dc)))] += 1.0 - p;
            }
        }
    }
    Mdp::from_dense(ns, na, trans, rewards, false)
}

/// How the chain's single reward is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScale {
    /// `r(x1, a) = L`; the MDP carries the relaxed-reward flag.
    #[default]
    Length,
    /// `r(x1, a) = 1`.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub length: usize,
    pub success_prob: f64,
    pub num_clusters: usize,
    pub num_random_w_rows: usize,
    pub num_random_f_cols: usize,
    pub seed: u64,
    #[serde(default)]
    pub reward_scale: RewardScale,
}

impl ChainSpec {
    pub fn new(length: usize, success_prob: f64, seed: u64) -> Self {
        Self {
            length,
            success_prob,
            num_clusters: 3,
            num_random_w_rows: 2,
            num_random_f_cols: 3,
            seed,
            reward_scale: RewardScale::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 3 {
            return Err(Error::InvalidSpec(format!("length must be at least 3, got {}", self.length)));
        }
        if self.num_clusters == 0 || self.num_clusters > self.length {
            return Err(Error::InvalidSpec(format!(
                "num_clusters must lie in 1..={}, got {}",
                self.length, self.num_clusters
            )));
        }
        check_prob("success_prob", self.success_prob)
    }
}

/// Chain `x1, ..., xL`; action 0 moves left, action 1 moves right, each
/// succeeding with `success_prob` and otherwise staying put. Both actions in
/// `x1` jump to `xL`, both in `xL` move left. Only `x1` is rewarded.
pub fn build_chain(spec: &ChainSpec) -> Result<Mdp> {
    spec.validate()?;
    let l = spec.length;
    let p = spec.success_prob;
    let mut trans = DMatrix::zeros(2 * l, l);
    let mut rewards = DVector::zeros(2 * l);
    let reward = match spec.reward_scale {
        RewardScale::Length => l as f64,
        RewardScale::Unit => 1.0,
    };
    for x in 0..l {
        for a in 0..2 {
            let row = 2 * x + a;
            let target = match (x, a) {
                (0, _) => l - 1,
                (x, _) if x == l - 1 => x - 1,
                (x, 0) => x - 1,
                (x, _) => x + 1,
            };
            trans[(row, target)] += p;
            trans[(row, x)] += 1.0 - p;
            if x == 0 {
                rewards[row] = reward;
            }
        }
    }
    Mdp::from_dense(l, 2, trans, rewards, spec.reward_scale == RewardScale::Length)
}

/// Low-dimensional features for a chain built by [`build_chain`].
///
/// `W` holds one normalized cluster indicator per (cluster, action), with a
/// cluster split wherever `mu*` is not constant on it, plus random
/// distribution rows. `F` holds `v*` scaled to unit sup-norm, the direction
/// `Q^T W^T e_m` of every row of `W` scaled the same way, and random columns
/// in `[0, 1)`. The sizes depend on the `ChainSpec` counts but not on the chain length.
pub fn build_chain_features(mdp: &Mdp, spec: &ChainSpec, opt: &OptimalSolution) -> Result<FeatureMaps> {
    spec.validate()?;
    let l = spec.length;
    if mdp.num_states() != l || mdp.num_actions() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "expected a chain with {l} states and 2 actions, got {}x{}",
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clusters = draw_clusters(&mut rng, l, spec.num_clusters);
    let mu = opt.mu_star.as_vector();
    let scale = mu.amax().max(f64::MIN_POSITIVE);

    let mut rows: Vec<DVector<f64>> = Vec::new();
    for a in 0..2 {
        for k in 0..spec.num_clusters {
            // Group the cluster's pairs by their (rounded) optimal mass.
            let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
            for x in (0..l).filter(|&x| clusters[x] == k) {
                let pair = mdp.pair(x, a);
                let level = mu[pair];
                match groups.iter_mut().find(|(v, _)| (v - level).abs() <= 1e-12 * scale) {
                    Some((_, members)) => members.push(pair),
                    None => groups.push((level, vec![pair])),
                }
            }
            for (_, members) in groups {
                let mut row = DVector::zeros(mdp.num_pairs());
                for &pair in &members {
                    row[pair] = 1.0 / members.len() as f64;
                }
                rows.push(row);
            }
        }
    }
    for _ in 0..spec.num_random_w_rows {
        let row = DVector::from_fn(mdp.num_pairs(), |_, _| rng.random::<f64>());
        let total = row.sum();
        rows.push(row / total);
    }
    let mut w = DMatrix::zeros(rows.len(), mdp.num_pairs());
    for (m, row) in rows.iter().enumerate() {
        w.row_mut(m).tr_copy_from(row);
    }

    let q = crate::mdp::build_q_matrix(mdp);
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let v = opt.v_star.as_vector();
    let v_norm = v.amax();
    cols.push(if v_norm > 0.0 { v / v_norm } else { v.clone() });
    for row in &rows {
        let dir = q.as_matrix().tr_mul(row);
        let norm = dir.amax();
        if norm > 1e-14 {
            cols.push(dir / norm);
        }
    }
    for _ in 0..spec.num_random_f_cols {
        cols.push(DVector::from_fn(l, |_, _| rng.random::<f64>()));
    }
    let f = DMatrix::from_columns(&cols);

    let features = FeatureMaps::new(f, w)?;
    let prob = RelaxedProblem::new(mdp.clone(), features.clone())?;
    let record = check_realizability(&prob, opt, None, CHAIN_REALIZABILITY_TOL);
    if !record.holds {
        return Err(Error::ConstructionFailed(format!(
            "realizability residuals v: {:e}, mu: {:e}",
            record.v_residual, record.y_residual
        )));
    }
    Ok(features)
}

/// Random cluster label per state, redrawn until every label occurs.
fn draw_clusters(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    loop {
        let labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
        if (0..k).all(|c| labels.contains(&c)) {
            return labels;
        }
    }
}
