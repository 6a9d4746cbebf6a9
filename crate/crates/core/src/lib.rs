//! Average-reward MDPs solved as bilinear saddle-point problems.
//!
//! The crate covers the exact and feature-relaxed Lagrangian formulations,
//! Mirror Prox and Mirror Descent solvers with checkpointed traces, numerical
//! checks of the assumptions behind the convergence bounds, and a few
//! benchmark environments.
//!
//! ```
//! use saddle_mdp::{envs, solvers, RelaxedProblem, SolverConfig, Variant};
//!
//! let ce = envs::build_counterexample();
//! let prob = RelaxedProblem::tabular(ce.mdp.clone());
//! let reference = solvers::Reference::tabular(ce.optimal.clone());
//! let config = SolverConfig::new(0.25, 2_000, 500, Variant::MirrorProx);
//! let trace = solvers::run(&prob, &config, Some(&reference)).unwrap();
//! assert!(trace.last().suboptimality < 1e-2);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assumptions;
pub mod envs;
pub mod error;
pub mod io;
pub mod mdp;
pub mod saddle;
pub mod solvers;

pub use error::{Error, Result};
pub use mdp::{Mdp, OptimalSolution, Policy, QMatrix, StateActionDist, ValueFn};
pub use saddle::{FeatureMaps, Iterate, RelaxedProblem};
pub use solvers::{SolverConfig, SolveTrace, Variant};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mdps.md")]
    mod mdps {}
    #[doc = include_str!("../../../book/src/relaxation.md")]
    mod relaxation {}
    #[doc = include_str!("../../../book/src/solvers.md")]
    mod solvers {}
    #[doc = include_str!("../../../book/src/assumptions.md")]
    mod assumptions {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
