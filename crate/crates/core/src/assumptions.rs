//! Numerical checks of ergodicity, realizability and coherence, plus the
//! right-hand sides of the convergence bounds.
//!
//! Ergodicity is summarized by the second-largest eigenvalue modulus (SLEM)
//! over deterministic policies. With `C = 1` and `tau = -1 / log(SLEM)`, the
//! mixing time used by the bounds is `tau_mix = 2 C (tau + 1)`.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{average_reward, extract_policy, policy_transition_matrix, stationary_distribution, Mdp, OptimalSolution, Policy};
use crate::saddle::RelaxedProblem;

/// Policies are enumerated exhaustively up to this many.
pub const MAX_ENUMERATED_POLICIES: usize = 4096;

/// A SLEM at or above `1 - NON_ERGODIC_GAP` is treated as 1.
const NON_ERGODIC_GAP: f64 = 1e-10;

/// Default tolerance for the coherence residuals.
pub const COHERENCE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizabilityRecord {
    pub holds: bool,
    /// `min_{u,c} ||F u - (v* + c 1)||_2`.
    pub v_residual: f64,
    /// `min_{y in simplex} ||W^T y - mu*||_2`.
    pub y_residual: f64,
    pub u_star: Vec<f64>,
    pub y_star: Vec<f64>,
    /// `||u*||_inf / tau_mix`, when a mixing time is known.
    pub u_bound_u: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceRecord {
    pub holds: bool,
    /// Largest relative least-squares residual of `Q^T W^T e_m` against `col(F)`.
    pub max_vertex_residual: f64,
    /// Worst vertex (0-based) when the check fails.
    pub witness_index: Option<usize>,
    /// Largest `||u||_inf` of the minimal-norm `u` matching `<Q^T W^T e_m, F u> = <Q^T W^T e_m, v>`
    /// over `||v||_inf <= 1`.
    pub u_bound: f64,
    /// Whether `u_bound` stays below the requested cap (reported, not enforced).
    pub within_u_cap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityRecord {
    pub tau_mix_estimate: f64,
    /// `tau = -1 / log(slem_max)`.
    pub tau: f64,
    pub slem_max: f64,
    pub policies_sampled: usize,
    /// True when every deterministic policy was checked.
    pub exhaustive: bool,
    /// The deterministic policy attaining `slem_max`.
    pub worst_policy: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub realizability: RealizabilityRecord,
    pub coherence: CoherenceRecord,
    pub ergodicity: Option<ErgodicityRecord>,
    /// Set when some checked policy is not ergodic.
    pub ergodicity_error: Option<String>,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.realizability.holds && self.coherence.holds && self.ergodicity.is_some()
    }
}

/// Second-largest eigenvalue modulus of a stochastic matrix.
pub fn slem(p: &DMatrix<f64>) -> f64 {
    if p.nrows() <= 1 {
        return 0.0;
    }
    if let Some(eig) = eigenvalues(p) {
        return second_modulus(&eig);
    }
    // The lazy chain (P + I) / 2 has eigenvalues (lambda + 1) / 2 and is often easier.
    let lazy = (p + DMatrix::identity(p.nrows(), p.ncols())) * 0.5;
    if let Some(eig) = eigenvalues(&lazy) {
        return second_modulus(&eig.map(|l| l * 2.0 - Complex::new(1.0, 0.0)));
    }
    deflated_spectral_radius(p)
}

fn eigenvalues(p: &DMatrix<f64>) -> Option<DVector<Complex<f64>>> {
    Schur::try_new(p.clone(), f64::EPSILON, 10_000).map(|s| s.complex_eigenvalues())
}

fn second_modulus(eig: &DVector<Complex<f64>>) -> f64 {
    let unit = eig
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    eig.iter()
        .enumerate()
        .filter(|&(i, _)| i != unit)
        .map(|(_, l)| l.norm())
        .fold(0.0, f64::max)
}

/// Spectral radius of `P - 1 d^T` by repeated squaring, `||A^(2^k)||^(2^-k)`.
fn deflated_spectral_radius(p: &DMatrix<f64>) -> f64 {
    let Ok(d) = stationary_distribution(p) else {
        return 1.0;
    };
    let n = p.nrows();
    let mut a = p - DVector::from_element(n, 1.0) * d.transpose();
    let mut log_radius = 0.0;
    let mut weight = 1.0;
    for _ in 0..40 {
        let norm = a.norm();
        if norm == 0.0 {
            return 0.0;
        }
        a /= norm;
        log_radius += weight * norm.ln();
        weight *= 0.5;
        a = &a * &a;
    }
    log_radius.exp()
}

/// `2 C (tau + 1)` with `C = 1` and `tau = -1 / log(slem)`.
pub fn tau_mix_from_slem(slem: f64) -> f64 {
    2.0 * (tau_from_slem(slem) + 1.0)
}

fn tau_from_slem(slem: f64) -> f64 {
    if slem <= 0.0 {
        0.0
    } else if slem >= 1.0 {
        f64::INFINITY
    } else {
        -1.0 / slem.ln()
    }
}

/// Mixing-time estimate for a single (possibly randomized) policy.
pub fn policy_mixing_time(mdp: &Mdp, pi: &Policy) -> Result<f64> {
    let s = slem(&policy_transition_matrix(mdp, pi));
    if s >= 1.0 - NON_ERGODIC_GAP {
        return Err(Error::NotErgodic { policy: pi.greedy_actions(), slem: s });
    }
    Ok(tau_mix_from_slem(s))
}

/// SLEM over all deterministic policies (or `num_policy_samples` random ones
/// when there are more than [`MAX_ENUMERATED_POLICIES`]).
pub fn estimate_mixing(mdp: &Mdp, num_policy_samples: usize, seed: u64) -> Result<ErgodicityRecord> {
    if num_policy_samples == 0 {
        return Err(Error::InvalidConfig("need at least one policy sample".into()));
    }
    let ns = mdp.num_states();
    let na = mdp.num_actions();
    let total = u32::try_from(ns)
        .ok()
        .and_then(|e| na.checked_pow(e))
        .filter(|&t| t <= MAX_ENUMERATED_POLICIES);

    let mut worst = (0.0, vec![0; ns]);
    let mut visit = |actions: Vec<usize>| -> Result<()> {
        let p = policy_transition_matrix(mdp, &Policy::deterministic(&actions, na));
        let s = slem(&p);
        if s >= 1.0 - NON_ERGODIC_GAP {
            return Err(Error::NotErgodic { policy: actions, slem: s });
        }
        if s > worst.0 {
            worst = (s, actions);
        }
        Ok(())
    };

    let (count, exhaustive) = match total {
        Some(total) => {
            for index in 0..total {
                let mut rest = index;
                let actions = (0..ns)
                    .map(|_| {
                        let a = rest % na;
                        rest /= na;
                        a
                    })
                    .collect();
                visit(actions)?;
            }
            (total, true)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..num_policy_samples {
                let actions = (0..ns).map(|_| rng.random_range(0..na)).collect();
                visit(actions)?;
            }
            (num_policy_samples, false)
        }
    };
    let (slem_max, worst_policy) = worst;
    Ok(ErgodicityRecord {
        tau_mix_estimate: tau_mix_from_slem(slem_max),
        tau: tau_from_slem(slem_max),
        slem_max,
        policies_sampled: count,
        exhaustive,
        worst_policy,
    })
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// `min_{y in simplex} ||W^T y - target||_2` by accelerated projected gradient.
fn simplex_least_squares(w: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
    const MAX_ITERS: usize = 200_000;
    const STEP_TOL: f64 = 1e-10;
    let gram = w * w.transpose();
    let lipschitz = SymmetricEigen::new(gram.clone()).eigenvalues.max().max(1e-300);
    let wt = w * target;
    let m = w.nrows();
    let mut y = DVector::from_element(m, 1.0 / m as f64);
    let mut look = y.clone();
    let mut momentum = 1.0_f64;
    for _ in 0..MAX_ITERS {
        let grad = &gram * &look - &wt;
        let next = project_to_simplex(&(&look - grad / lipschitz));
        let step = (&next - &y).amax();
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        look = &next + (&next - &y) * ((momentum - 1.0) / next_momentum);
        momentum = next_momentum;
        y = next;
        if step < STEP_TOL * 1e-3 {
            break;
        }
    }
    y
}

/// Whether `v* = F u*` (up to a constant shift) and `mu* = W^T y*` for some simplex `y*`.
pub fn check_realizability(
    prob: &RelaxedProblem,
    opt: &OptimalSolution,
    tau_mix: Option<f64>,
    tol: f64,
) -> RealizabilityRecord {
    let f = prob.features().f();
    let w = prob.features().w();
    let ns = f.nrows();
    let n = f.ncols();
    let v_star = opt.v_star.as_vector();

    let mut design = DMatrix::zeros(ns, n + 1);
    design.view_mut((0, 0), (ns, n)).copy_from(f);
    design.column_mut(n).fill(1.0);
    let svd = design.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    let coef = svd.solve(v_star, eps).expect("SVD computed with both factors");
    let v_residual = (&design * &coef - v_star).norm();
    let u_star = coef.rows(0, n).into_owned();

    let mu_star = opt.mu_star.as_vector();
    let y_star = simplex_least_squares(w, mu_star);
    let y_residual = (w.tr_mul(&y_star) - mu_star).norm();

    RealizabilityRecord {
        holds: v_residual <= tol && y_residual <= tol,
        v_residual,
        y_residual,
        u_bound_u: tau_mix.map(|t| u_star.amax() / t),
        u_star: u_star.iter().copied().collect(),
        y_star: y_star.iter().copied().collect(),
    }
}

/// Whether every `Q^T W^T e_m` lies in the column space of `F`.
pub fn check_coherence(prob: &RelaxedProblem, u_cap: f64, tol: f64) -> CoherenceRecord {
    let f = prob.features().f();
    let images = prob.q().as_matrix().tr_mul(&prob.features().w().transpose());
    let svd = f.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let cutoff = 1e-12 * svd.singular_values.max();
    let rank_cols: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > cutoff).collect();
    let basis = u.select_columns(&rank_cols);

    let mut worst = (0.0, 0);
    let mut u_bound: f64 = 0.0;
    for (m, b) in images.column_iter().enumerate() {
        let b = b.into_owned();
        let norm = b.norm();
        if norm <= 1e-14 {
            continue;
        }
        let projected = &basis * basis.tr_mul(&b);
        let residual = (&b - projected).norm() / norm;
        if residual > worst.0 {
            worst = (residual, m);
        }
        let ftb = f.tr_mul(&b);
        let denom = ftb.norm_squared();
        let bound = if denom > 0.0 { ftb.amax() * b.lp_norm(1) / denom } else { f64::INFINITY };
        u_bound = u_bound.max(bound);
    }
    let holds = worst.0 <= tol;
    CoherenceRecord {
        holds,
        max_vertex_residual: worst.0,
        witness_index: (!holds).then_some(worst.1),
        u_bound,
        within_u_cap: u_bound <= u_cap,
    }
}

/// Runs all three checks. A non-ergodic policy is recorded, not returned as an error.
pub fn check_assumptions(
    prob: &RelaxedProblem,
    opt: &OptimalSolution,
    num_policy_samples: usize,
    seed: u64,
    tol: f64,
) -> AssumptionReport {
    let (ergodicity, ergodicity_error) = match estimate_mixing(prob.mdp(), num_policy_samples, seed) {
        Ok(rec) => (Some(rec), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let tau_mix = ergodicity.as_ref().map(|e| e.tau_mix_estimate);
    let realizability = check_realizability(prob, opt, tau_mix, tol);
    let u_cap = realizability.u_bound_u.unwrap_or(f64::INFINITY);
    AssumptionReport {
        realizability,
        coherence: check_coherence(prob, u_cap, tol.max(COHERENCE_TOL)),
        ergodicity,
        ergodicity_error,
    }
}

/// `(11 tau_mix^2 U^2 N + 7 log M) / (eta t)`.
///
/// With identity features this is called with `U = 1`, `N = |X|`, `M = |X||A|`.
pub fn theorem_bound_rhs(tau_mix: f64, u_bound: f64, n: usize, m: usize, eta: f64, t: usize) -> f64 {
    bound_rhs(11.0, 7.0, tau_mix * u_bound, n, (m as f64).ln(), eta, t)
}

/// `(5 tau_mix^2 U^2 N + 3 log M) / (eta t)`, the bound on `tau_mix ||Q^T W^T y_bar||_1`.
pub fn flow_bound_rhs(tau_mix: f64, u_bound: f64, n: usize, m: usize, eta: f64, t: usize) -> f64 {
    bound_rhs(5.0, 3.0, tau_mix * u_bound, n, (m as f64).ln(), eta, t)
}

fn bound_rhs(a: f64, b: f64, scale: f64, n: usize, log_m: f64, eta: f64, t: usize) -> f64 {
    (a * scale * scale * n as f64 + b * log_m) / (eta * t as f64)
}

/// `<mu, r> - rho_{pi_mu}`: how much the occupancy vector overstates the reward
/// of the policy it induces.
pub fn occupancy_reward_gap(mdp: &Mdp, mu: &DVector<f64>) -> Result<f64> {
    let pi = extract_policy(mu, mdp.num_actions())?;
    Ok(mu.dot(mdp.rewards()) - average_reward(mdp, &pi)?)
}
