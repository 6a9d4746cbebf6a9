//! Mirror Prox and Mirror Descent on the relaxed saddle-point problem.
//!
//! The `u`-block uses the Euclidean mirror map, the `y`-block the entropy
//! mirror map, so every step is a gradient step in `u` and an
//! exponentiated-gradient (multiplicative weights) step in `y`.
//!
//! Internally the solver keeps `log y` rather than `y`: the multiplicative
//! update is additive in log space and renormalization is a shift, so long
//! runs never lose coordinates to underflow.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::assumptions::theorem_bound_rhs;
use crate::error::{Error, Result};
use crate::mdp::{average_reward, extract_policy, flow_residual, OptimalSolution, Policy};
use crate::saddle::{relaxed_duality_gap, Iterate, RelaxedProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    MirrorProx,
    MirrorDescent,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::MirrorProx => "mirror_prox",
            Variant::MirrorDescent => "mirror_descent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eta: f64,
    pub num_iters: usize,
    pub checkpoint_every: usize,
    pub variant: Variant,
    /// Reserved; runs are deterministic.
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(eta: f64, num_iters: usize, checkpoint_every: usize, variant: Variant) -> Self {
        Self { eta, num_iters, checkpoint_every, variant, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.num_iters == 0 {
            return Err(Error::InvalidConfig("num_iters must be positive".into()));
        }
        if self.checkpoint_every == 0 || self.checkpoint_every > self.num_iters {
            return Err(Error::InvalidConfig(format!(
                "checkpoint_every must be in 1..={}, got {}",
                self.num_iters, self.checkpoint_every
            )));
        }
        Ok(())
    }
}

/// `1 / (4 max(K, 1))`, the largest step covered by the convergence guarantees.
pub fn default_step_size(prob: &RelaxedProblem) -> f64 {
    1.0 / (4.0 * prob.k_smooth().max(1.0))
}

/// Solver state with `y` held as unnormalized log-weights.
#[derive(Debug, Clone)]
struct State {
    u: DVector<f64>,
    log_y: DVector<f64>,
}

impl State {
    fn from_iterate(z: &Iterate) -> Self {
        Self { u: z.u.clone(), log_y: z.y.map(f64::ln) }
    }

    fn y(&self) -> DVector<f64> {
        softmax(&self.log_y)
    }

    fn to_iterate(&self) -> Iterate {
        Iterate { u: self.u.clone(), y: self.y() }
    }
}

fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let w = logits.map(|l| (l - max).exp());
    let s = w.sum();
    w / s
}

/// `log y + eta * (W r + W Q F u)`, shifted so the largest entry is zero.
fn tilt(prob: &RelaxedProblem, log_y: &DVector<f64>, u: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    let payoff = prob.wqf() * u + prob.wr();
    let mut next = log_y + payoff * eta;
    if let Some(index) = next.iter().position(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::NumericOverflow { index });
    }
    let max = next.max();
    next.add_scalar_mut(-max);
    Ok(next)
}

/// Extrapolated point and next point of one Mirror Prox step.
struct ProxStep {
    hat: State,
    next: State,
}

fn prox_step(prob: &RelaxedProblem, z: &State, eta: f64) -> Result<ProxStep> {
    let y = z.y();
    let u_hat = &z.u - prob.wqf().tr_mul(&y) * eta;
    let log_y_hat = tilt(prob, &z.log_y, &z.u, eta)?;
    let y_hat = softmax(&log_y_hat);
    let u_next = &z.u - prob.wqf().tr_mul(&y_hat) * eta;
    let log_y_next = tilt(prob, &z.log_y, &u_hat, eta)?;
    Ok(ProxStep {
        hat: State { u: u_hat, log_y: log_y_hat },
        next: State { u: u_next, log_y: log_y_next },
    })
}

fn descent_step(prob: &RelaxedProblem, z: &State, eta: f64) -> Result<State> {
    let y = z.y();
    let u = &z.u - prob.wqf().tr_mul(&y) * eta;
    let log_y = tilt(prob, &z.log_y, &z.u, eta)?;
    Ok(State { u, log_y })
}

/// One Mirror Prox step from `z_t`: returns `(z_hat_{t+1}, z_{t+1})`.
///
/// ```text
/// u_hat  = u_t - eta F^T Q^T W^T y_t        y_hat_i  ~ y_t,i exp(eta (Wr + WQF u_t)_i)
/// u_next = u_t - eta F^T Q^T W^T y_hat      y_next_i ~ y_t,i exp(eta (Wr + WQF u_hat)_i)
/// ```
pub fn mirror_prox_step(prob: &RelaxedProblem, z_t: &Iterate, eta: f64) -> Result<(Iterate, Iterate)> {
    check_dims(prob, z_t)?;
    let step = prox_step(prob, &State::from_iterate(z_t), eta)?;
    Ok((step.hat.to_iterate(), step.next.to_iterate()))
}

/// One Mirror Descent step: the extrapolation half of Mirror Prox, committed.
pub fn mirror_descent_step(prob: &RelaxedProblem, z_t: &Iterate, eta: f64) -> Result<Iterate> {
    check_dims(prob, z_t)?;
    Ok(descent_step(prob, &State::from_iterate(z_t), eta)?.to_iterate())
}

fn check_dims(prob: &RelaxedProblem, z: &Iterate) -> Result<()> {
    if z.u.len() != prob.n() || z.y.len() != prob.m() {
        return Err(Error::DimensionMismatch(format!(
            "iterate has dimensions ({}, {}), problem has ({}, {})",
            z.u.len(),
            z.y.len(),
            prob.n(),
            prob.m()
        )));
    }
    Ok(())
}

/// Constants for the suboptimality bound `(11 tau^2 U^2 N + 7 log M) / (eta t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub tau_mix: f64,
    pub u_bound: f64,
}

/// What a run is compared against at each checkpoint.
#[derive(Debug, Clone)]
pub struct Reference {
    pub optimal: OptimalSolution,
    /// A saddle point `(u*, y*)` of the relaxed problem, for duality gaps.
    pub saddle_point: Option<Iterate>,
    pub bound: Option<BoundParams>,
}

impl Reference {
    pub fn new(optimal: OptimalSolution) -> Self {
        Self { optimal, saddle_point: None, bound: None }
    }

    /// Reference for identity features: `(u*, y*) = (v*, mu*)`.
    pub fn tabular(optimal: OptimalSolution) -> Self {
        let z = Iterate {
            u: optimal.v_star.as_vector().clone(),
            y: optimal.mu_star.as_vector().clone(),
        };
        Self { optimal, saddle_point: Some(z), bound: None }
    }

    pub fn with_saddle_point(mut self, z: Iterate) -> Self {
        self.saddle_point = Some(z);
        self
    }

    pub fn with_bound(mut self, tau_mix: f64, u_bound: f64) -> Self {
        self.bound = Some(BoundParams { tau_mix, u_bound });
        self
    }
}

/// State of a run after `t` iterations.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub t: usize,
    /// Running mean of the points where the committed step's operator was evaluated
    /// (`u_hat` for Mirror Prox, `u_t` for Mirror Descent).
    pub u_bar: DVector<f64>,
    /// Running mean of `y_1, ..., y_t`.
    pub y_bar: DVector<f64>,
    /// Policy extracted from `W^T y_bar`.
    pub policy: Policy,
    /// Average reward of `policy`; NaN when its chain has no unique stationary distribution.
    pub rho_t: f64,
    /// `rho* - rho_t`; NaN without a reference.
    pub suboptimality: f64,
    /// `gap(z_bar; z*)`; NaN without a reference saddle point.
    pub gap_vs_ref: f64,
    /// `||Q^T W^T y_bar||_1`.
    pub flow_residual_l1: f64,
    /// Suboptimality bound at `t`; NaN when it does not apply.
    pub bound_rhs: f64,
    /// Average reward of the policy extracted from the last iterate `y_{t+1}`.
    pub last_rho: f64,
    pub last_suboptimality: f64,
    pub evaluation_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub variant: Variant,
    pub eta: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub warnings: Vec<String>,
}

impl SolveTrace {
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("a run records at least one checkpoint")
    }

    /// First checkpoint whose (averaged-iterate) suboptimality is at most `threshold`.
    pub fn iterations_to(&self, threshold: f64) -> Option<usize> {
        self.checkpoints.iter().find(|c| c.suboptimality <= threshold).map(|c| c.t)
    }

    /// First checkpoint whose last-iterate suboptimality is at most `threshold`.
    pub fn last_iterate_to(&self, threshold: f64) -> Option<usize> {
        self.checkpoints.iter().find(|c| c.last_suboptimality <= threshold).map(|c| c.t)
    }

    /// First checkpoint from which the last-iterate suboptimality stays at most
    /// `threshold` until the end of the run.
    pub fn last_iterate_settles(&self, threshold: f64) -> Option<usize> {
        let from = match self.checkpoints.iter().rposition(|c| !(c.last_suboptimality <= threshold)) {
            Some(i) => i + 1,
            None => 0,
        };
        self.checkpoints.get(from).map(|c| c.t)
    }

    /// Checkpoints where the suboptimality exceeds a finite bound.
    pub fn bound_violations(&self) -> usize {
        self.checkpoints
            .iter()
            .filter(|c| c.bound_rhs.is_finite() && c.suboptimality > c.bound_rhs)
            .count()
    }

    /// CSV with header `t,gap,suboptimality,flow_residual_l1,bound_rhs,rho_t,last_suboptimality`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<_> = self
            .checkpoints
            .iter()
            .map(|c| {
                [
                    c.gap_vs_ref,
                    c.suboptimality,
                    c.flow_residual_l1,
                    c.bound_rhs,
                    c.rho_t,
                    c.last_suboptimality,
                ]
            })
            .map(|r| r.to_vec())
            .zip(self.checkpoints.iter().map(|c| c.t))
            .map(|(r, t)| (t, r))
            .collect();
        crate::io::write_trace_csv(out, &rows)
    }
}

/// Runs `config.num_iters` steps from `z_1 = (0, uniform)`, recording a checkpoint
/// every `config.checkpoint_every` steps and after the last one.
pub fn run(prob: &RelaxedProblem, config: &SolverConfig, reference: Option<&Reference>) -> Result<SolveTrace> {
    config.validate()?;
    let mut warnings = Vec::new();
    let safe = default_step_size(prob);
    let bounds_apply = config.eta <= safe * (1.0 + 1e-12);
    if !bounds_apply {
        let msg = format!(
            "eta = {} exceeds 1/(4K) = {safe}; convergence bounds are not checked",
            config.eta
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let eta = config.eta;
    let mut z = State::from_iterate(&Iterate::initial(prob.n(), prob.m()));
    let mut u_bar = DVector::zeros(prob.n());
    let mut y_bar = DVector::zeros(prob.m());
    let mut checkpoints = Vec::new();

    for t in 1..=config.num_iters {
        let inv = 1.0 / t as f64;
        y_bar += (z.y() - &y_bar) * inv;
        z = match config.variant {
            Variant::MirrorProx => {
                let step = prox_step(prob, &z, eta)?;
                u_bar += (&step.hat.u - &u_bar) * inv;
                step.next
            }
            Variant::MirrorDescent => {
                u_bar += (&z.u - &u_bar) * inv;
                descent_step(prob, &z, eta)?
            }
        };
        if t % config.checkpoint_every == 0 || t == config.num_iters {
            let bound = if bounds_apply { reference.and_then(|r| r.bound) } else { None };
            checkpoints.push(checkpoint(prob, t, eta, &u_bar, &y_bar, &z, reference, bound)?);
        }
    }
    Ok(SolveTrace { variant: config.variant, eta, checkpoints, warnings })
}

#[allow(clippy::too_many_arguments)]
fn checkpoint(
    prob: &RelaxedProblem,
    t: usize,
    eta: f64,
    u_bar: &DVector<f64>,
    y_bar: &DVector<f64>,
    last: &State,
    reference: Option<&Reference>,
    bound: Option<BoundParams>,
) -> Result<Checkpoint> {
    let mdp = prob.mdp();
    let mu_bar = prob.lift_y(y_bar);
    let policy = extract_policy(&mu_bar.map(|m| m.max(0.0)), mdp.num_actions())?;
    let mut evaluation_error = None;
    let rho_t = average_reward(mdp, &policy).unwrap_or_else(|e| {
        evaluation_error = Some(e.to_string());
        f64::NAN
    });
    let last_policy = extract_policy(&prob.lift_y(&last.y()).map(|m| m.max(0.0)), mdp.num_actions())?;
    let last_rho = average_reward(mdp, &last_policy).unwrap_or_else(|e| {
        evaluation_error.get_or_insert_with(|| e.to_string());
        f64::NAN
    });
    let rho_star = reference.map_or(f64::NAN, |r| r.optimal.rho_star);
    let gap_vs_ref = match reference.and_then(|r| r.saddle_point.as_ref()) {
        Some(z_star) => {
            let z_bar = Iterate { u: u_bar.clone(), y: y_bar.clone() };
            relaxed_duality_gap(prob, &z_bar, z_star)?
        }
        None => f64::NAN,
    };
    let bound_rhs = bound.map_or(f64::NAN, |b| {
        theorem_bound_rhs(b.tau_mix, b.u_bound, prob.n(), prob.m(), eta, t)
    });
    Ok(Checkpoint {
        t,
        u_bar: u_bar.clone(),
        y_bar: y_bar.clone(),
        policy,
        rho_t,
        suboptimality: rho_star - rho_t,
        gap_vs_ref,
        flow_residual_l1: flow_residual(prob.q(), &mu_bar),
        bound_rhs,
        last_rho,
        last_suboptimality: rho_star - last_rho,
        evaluation_error,
    })
}
