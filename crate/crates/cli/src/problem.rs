use saddle_mdp::envs::{
    build_chain, build_chain_features, build_counterexample, build_gridworld, ChainSpec, GridworldSpec, RewardScale,
};
use saddle_mdp::mdp::solve_exact;
use saddle_mdp::{io, FeatureMaps, OptimalSolution, RelaxedProblem};

use crate::settings::{EnvKind, FeatureChoice, ProblemArgs, RewardScaleArg};
use crate::CliError;

enum EnvFeatures {
    None,
    Fixed(FeatureMaps),
    Chain(ChainSpec),
}

pub struct Instance {
    pub source: String,
    pub problem: RelaxedProblem,
    pub optimal: OptimalSolution,
    pub tabular: bool,
}

fn reject<T>(value: &Option<T>, name: &str, context: &str) -> Result<(), CliError> {
    match value {
        Some(_) => Err(CliError::Config(format!("{name}: only applies to {context}"))),
        None => Ok(()),
    }
}

fn gridworld_spec(args: &ProblemArgs) -> GridworldSpec {
    GridworldSpec {
        side: args.side.unwrap_or(10),
        reward_state: args.reward_state.unwrap_or(0),
        success_prob: args.success_prob.unwrap_or(0.9),
    }
}

fn chain_spec(args: &ProblemArgs) -> ChainSpec {
    let mut spec = ChainSpec::new(args.length.unwrap_or(10), args.success_prob.unwrap_or(0.7), args.seed.unwrap_or(0));
    if let Some(k) = args.num_clusters {
        spec.num_clusters = k;
    }
    if let Some(r) = args.num_random_w_rows {
        spec.num_random_w_rows = r;
    }
    if let Some(c) = args.num_random_f_cols {
        spec.num_random_f_cols = c;
    }
    if let Some(scale) = args.reward_scale {
        spec.reward_scale = match scale {
            RewardScaleArg::Length => RewardScale::Length,
            RewardScaleArg::Unit => RewardScale::Unit,
        };
    }
    spec
}

fn spec_error(e: saddle_mdp::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn solver_error(e: saddle_mdp::Error) -> CliError {
    CliError::Solver(e.to_string())
}

/// Builds or loads the MDP and its features, and solves it exactly.
pub fn load(args: &ProblemArgs) -> Result<Instance, CliError> {
    if args.env.is_some() && args.mdp.is_some() {
        return Err(CliError::Config("env: cannot be combined with mdp".into()));
    }
    let grid_only = "--env gridworld";
    let chain_only = "--env chain";
    if args.env != Some(EnvKind::Gridworld) {
        reject(&args.side, "side", grid_only)?;
        reject(&args.reward_state, "reward_state", grid_only)?;
    }
    if args.env != Some(EnvKind::Chain) {
        reject(&args.length, "length", chain_only)?;
        reject(&args.num_clusters, "num_clusters", chain_only)?;
        reject(&args.num_random_w_rows, "num_random_w_rows", chain_only)?;
        reject(&args.num_random_f_cols, "num_random_f_cols", chain_only)?;
        reject(&args.reward_scale, "reward_scale", chain_only)?;
        if args.env != Some(EnvKind::Gridworld) {
            reject(&args.success_prob, "success_prob", "--env gridworld or --env chain")?;
        }
    }
    if args.features.is_some() && args.feature_set.is_some() {
        return Err(CliError::Config("feature_set: cannot be combined with features".into()));
    }

    let (source, mdp, env_features) = match (args.env, &args.mdp) {
        (Some(EnvKind::Counterexample), _) => {
            let ce = build_counterexample();
            ("counterexample".to_string(), ce.mdp, EnvFeatures::Fixed(ce.features))
        }
        (Some(EnvKind::Gridworld), _) => {
            let spec = gridworld_spec(args);
            let mdp = build_gridworld(&spec).map_err(spec_error)?;
            (format!("gridworld side={} reward_state={}", spec.side, spec.reward_state), mdp, EnvFeatures::None)
        }
        (Some(EnvKind::Chain), _) => {
            let spec = chain_spec(args);
            let mdp = build_chain(&spec).map_err(spec_error)?;
            (format!("chain length={} seed={}", spec.length, spec.seed), mdp, EnvFeatures::Chain(spec))
        }
        (None, Some(path)) => {
            let mdp = io::read_mdp(path).map_err(|e| CliError::Config(format!("mdp: {}: {e}", path.display())))?;
            (path.display().to_string(), mdp, EnvFeatures::None)
        }
        (None, None) => return Err(CliError::Config("env: one of env or mdp is required".into())),
    };

    let optimal = solve_exact(&mdp).map_err(solver_error)?;
    let features = if let Some(path) = &args.features {
        io::read_features(path).map_err(|e| CliError::Config(format!("features: {}: {e}", path.display())))?
    } else {
        let default = if args.env == Some(EnvKind::Chain) { FeatureChoice::Env } else { FeatureChoice::Identity };
        match (args.feature_set.unwrap_or(default), env_features) {
            (FeatureChoice::Identity, _) => FeatureMaps::identity(&mdp),
            (FeatureChoice::Env, EnvFeatures::Fixed(features)) => features,
            (FeatureChoice::Env, EnvFeatures::Chain(spec)) => {
                build_chain_features(&mdp, &spec, &optimal).map_err(solver_error)?
            }
            (FeatureChoice::Env, EnvFeatures::None) => {
                return Err(CliError::Config("feature_set: this problem has no built-in features".into()))
            }
        }
    };
    let tabular = features == FeatureMaps::identity(&mdp);
    let problem = RelaxedProblem::new(mdp, features).map_err(|e| CliError::Config(format!("features: {e}")))?;
    Ok(Instance { source, problem, optimal, tabular })
}
