//! Exact and linearly relaxed Lagrangians, the monotone operator `G`, and the
//! entropy/Euclidean Bregman geometry used by the solvers.
//!
//! The relaxed problem replaces `v` by `F u` and `mu` by `W^T y`:
//!
//! ```text
//! min_u max_{y in simplex}  L~(u, y) = <W^T y, Q F u> + <W^T y, r>
//! ```
//!
//! With `F = I` and `W = I` it is the exact saddle-point problem.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{build_q_matrix, Mdp, QMatrix, PROB_TOL};

/// Feature matrices `F` (`|X| x N`) and `W` (`M x |X||A|`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    f: DMatrix<f64>,
    w: DMatrix<f64>,
}

impl FeatureMaps {
    /// Validates `|F_ij| <= 1` and that each row of `W` is a distribution.
    pub fn new(f: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        if f.ncols() == 0 || w.nrows() == 0 {
            return Err(Error::InvalidFeatures("F and W need at least one column/row".into()));
        }
        let worst_f = f.iter().map(|x| if x.is_finite() { x.abs() } else { f64::INFINITY }).fold(0.0, f64::max);
        if worst_f > 1.0 {
            return Err(Error::InvalidFeatures(format!(
                "entries of F must be bounded by 1 in absolute value (max violation {:e})",
                worst_f - 1.0
            )));
        }
        let mut worst_neg: f64 = 0.0;
        let mut worst_sum: f64 = 0.0;
        for row in w.row_iter() {
            for &x in row.iter() {
                if !x.is_finite() {
                    return Err(Error::InvalidFeatures("W has non-finite entries".into()));
                }
                worst_neg = worst_neg.max(-x);
            }
            worst_sum = worst_sum.max((row.sum() - 1.0).abs());
        }
        if worst_neg > 0.0 {
            return Err(Error::InvalidFeatures(format!(
                "rows of W must be non-negative (max violation {worst_neg:e})"
            )));
        }
        if worst_sum > PROB_TOL {
            return Err(Error::InvalidFeatures(format!(
                "rows of W must sum to one (max violation {worst_sum:e})"
            )));
        }
        Ok(Self { f, w })
    }

    /// `F = I_|X|`, `W = I_|X||A|`: the relaxed problem is the exact one.
    pub fn identity(mdp: &Mdp) -> Self {
        let ns = mdp.num_states();
        let np = mdp.num_pairs();
        Self { f: DMatrix::identity(ns, ns), w: DMatrix::identity(np, np) }
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Number of value features `N`.
    pub fn n(&self) -> usize {
        self.f.ncols()
    }

    /// Number of occupancy features `M`.
    pub fn m(&self) -> usize {
        self.w.nrows()
    }
}

/// `K = max_x ||F_{x,.}||_1`; `G` is `2K`-Lipschitz in the norms below.
pub fn smoothness_constant(features: &FeatureMaps) -> f64 {
    features.f.row_iter().map(|row| row.lp_norm(1)).fold(0.0, f64::max)
}

/// A point `z = (u, y)` with `y` on the `M`-simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
}

impl Iterate {
    pub fn new(u: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidIterate("u has non-finite entries".into()));
        }
        if let Some(i) = y.iter().position(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::InvalidIterate(format!("y[{i}] = {} is negative", y[i])));
        }
        let sum = y.sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidIterate(format!("y sums to {sum}, not 1")));
        }
        Ok(Self { u, y })
    }

    /// The minimizer of the regularizer: `u = 0`, `y` uniform.
    pub fn initial(n: usize, m: usize) -> Self {
        Self { u: DVector::zeros(n), y: DVector::from_element(m, 1.0 / m as f64) }
    }
}

/// The relaxed problem with `WQF` and `Wr` precomputed once.
#[derive(Debug, Clone)]
pub struct RelaxedProblem {
    mdp: Mdp,
    features: FeatureMaps,
    q: QMatrix,
    wqf: DMatrix<f64>,
    wr: DVector<f64>,
    k_smooth: f64,
    setup_time: Duration,
}

impl RelaxedProblem {
    pub fn new(mdp: Mdp, features: FeatureMaps) -> Result<Self> {
        if features.f.nrows() != mdp.num_states() {
            return Err(Error::DimensionMismatch(format!(
                "F has {} rows, MDP has {} states",
                features.f.nrows(),
                mdp.num_states()
            )));
        }
        if features.w.ncols() != mdp.num_pairs() {
            return Err(Error::DimensionMismatch(format!(
                "W has {} columns, MDP has {} state-action pairs",
                features.w.ncols(),
                mdp.num_pairs()
            )));
        }
        let start = Instant::now();
        let q = build_q_matrix(&mdp);
        let wqf = &features.w * (q.as_matrix() * &features.f);
        let wr = &features.w * mdp.rewards();
        let setup_time = start.elapsed();
        let k_smooth = smoothness_constant(&features);
        log::debug!(
            "relaxed problem: N = {}, M = {}, K = {k_smooth}, WQF computed in {setup_time:?}",
            features.n(),
            features.m()
        );
        Ok(Self { mdp, features, q, wqf, wr, k_smooth, setup_time })
    }

    /// Tabular mode: identity features.
    pub fn tabular(mdp: Mdp) -> Self {
        let features = FeatureMaps::identity(&mdp);
        Self::new(mdp, features).expect("identity features always match")
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn features(&self) -> &FeatureMaps {
        &self.features
    }

    pub fn q(&self) -> &QMatrix {
        &self.q
    }

    /// The `M x N` matrix `W Q F`.
    pub fn wqf(&self) -> &DMatrix<f64> {
        &self.wqf
    }

    /// The length-`M` vector `W r`.
    pub fn wr(&self) -> &DVector<f64> {
        &self.wr
    }

    pub fn k_smooth(&self) -> f64 {
        self.k_smooth
    }

    /// Wall time spent forming `WQF` and `Wr`.
    pub fn setup_time(&self) -> Duration {
        self.setup_time
    }

    pub fn n(&self) -> usize {
        self.features.n()
    }

    pub fn m(&self) -> usize {
        self.features.m()
    }

    /// `W^T y`, the occupancy vector represented by `y`.
    pub fn lift_y(&self, y: &DVector<f64>) -> DVector<f64> {
        self.features.w.tr_mul(y)
    }

    /// `F u`, the value function represented by `u`.
    pub fn lift_u(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.features.f * u
    }

    fn check(&self, z: &Iterate) -> Result<()> {
        if z.u.len() != self.n() || z.y.len() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "iterate has dimensions ({}, {}), problem has ({}, {})",
                z.u.len(),
                z.y.len(),
                self.n(),
                self.m()
            )));
        }
        Ok(())
    }
}

/// `L(v, mu) = <mu, Q v> + <mu, r>`.
pub fn lagrangian(mdp: &Mdp, q: &QMatrix, v: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    mu.dot(&(q.as_matrix() * v)) + mu.dot(mdp.rewards())
}

/// `L~(u, y) = y^T (WQF) u + y^T (W r)`.
pub fn relaxed_lagrangian(prob: &RelaxedProblem, z: &Iterate) -> Result<f64> {
    prob.check(z)?;
    Ok(z.y.dot(&(&prob.wqf * &z.u)) + z.y.dot(&prob.wr))
}

/// The value of `G` at a point: `(grad_u L~, -grad_y L~)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorValue {
    pub g_u: DVector<f64>,
    pub g_y: DVector<f64>,
}

impl OperatorValue {
    pub fn dual_norm(&self) -> f64 {
        dual_norm(&self.g_u, &self.g_y)
    }

    /// `<G, z>` for a point or displacement `z`.
    pub fn pair_with(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.g_u.dot(u) + self.g_y.dot(y)
    }
}

/// `G(z) = (F^T Q^T W^T y, -W r - W Q F u)`.
pub fn operator_g(prob: &RelaxedProblem, z: &Iterate) -> Result<OperatorValue> {
    prob.check(z)?;
    Ok(operator_parts(prob, &z.u, &z.y))
}

pub(crate) fn operator_parts(prob: &RelaxedProblem, u: &DVector<f64>, y: &DVector<f64>) -> OperatorValue {
    let g_u = prob.wqf.tr_mul(y);
    let g_y = -(&prob.wqf * u) - &prob.wr;
    OperatorValue { g_u, g_y }
}

/// `Phi(z) = ||u||^2 / 2 + sum_j y_j log y_j`, with `0 log 0 = 0`.
pub fn regularizer(z: &Iterate) -> f64 {
    0.5 * z.u.norm_squared() + z.y.iter().map(|&p| xlogx(p)).sum::<f64>()
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// `D(z, z0) = ||u - u0||^2 / 2 + KL(y || y0)`.
pub fn bregman_divergence(z: &Iterate, z0: &Iterate) -> Result<f64> {
    if z.u.len() != z0.u.len() || z.y.len() != z0.y.len() {
        return Err(Error::DimensionMismatch("points of different dimensions".into()));
    }
    let mut kl = 0.0;
    for (j, (&p, &q)) in z.y.iter().zip(z0.y.iter()).enumerate() {
        if p > 0.0 {
            if q <= 0.0 {
                return Err(Error::ZeroMassReference { index: j });
            }
            kl += p * (p / q).ln();
        }
    }
    // The y-sums agree up to rounding, so the linear KL terms cancel.
    Ok(0.5 * (&z.u - &z0.u).norm_squared() + kl.max(0.0))
}

/// `sqrt(||du||_2^2 + ||dy||_1^2)`.
pub fn primal_norm(du: &DVector<f64>, dy: &DVector<f64>) -> f64 {
    (du.norm_squared() + dy.lp_norm(1).powi(2)).sqrt()
}

/// `sqrt(||gu||_2^2 + ||gy||_inf^2)`, dual to [`primal_norm`].
pub fn dual_norm(gu: &DVector<f64>, gy: &DVector<f64>) -> f64 {
    (gu.norm_squared() + gy.amax().powi(2)).sqrt()
}

/// `gap(z_bar; z_ref) = L~(u_bar, y_ref) - L~(u_ref, y_bar)`.
pub fn relaxed_duality_gap(prob: &RelaxedProblem, z_bar: &Iterate, z_ref: &Iterate) -> Result<f64> {
    prob.check(z_bar)?;
    prob.check(z_ref)?;
    let upper = z_ref.y.dot(&(&prob.wqf * &z_bar.u)) + z_ref.y.dot(&prob.wr);
    let lower = z_bar.y.dot(&(&prob.wqf * &z_ref.u)) + z_bar.y.dot(&prob.wr);
    Ok(upper - lower)
}

/// `L(v_bar, mu_ref) - L(v_ref, mu_bar)` in the unrelaxed space.
pub fn exact_duality_gap(
    mdp: &Mdp,
    q: &QMatrix,
    v_bar: &DVector<f64>,
    mu_bar: &DVector<f64>,
    v_ref: &DVector<f64>,
    mu_ref: &DVector<f64>,
) -> f64 {
    lagrangian(mdp, q, v_bar, mu_ref) - lagrangian(mdp, q, v_ref, mu_bar)
}
