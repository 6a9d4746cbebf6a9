use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Counterexample,
    Gridworld,
    Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureChoice {
    /// `F = I`, `W = I`.
    Identity,
    /// The environment's own features (counterexample, chain).
    Env,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SolverKind {
    MirrorProx,
    MirrorDescent,
    ValueIteration,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::MirrorProx => "mirror_prox",
            SolverKind::MirrorDescent => "mirror_descent",
            SolverKind::ValueIteration => "value_iteration",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScaleArg {
    Length,
    Unit,
}

/// Options shared by every subcommand that needs a problem instance. Every
/// field can also come from the `--config` JSON file, under the same name
/// with underscores.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemArgs {
    /// Built-in environment.
    #[arg(long, value_enum)]
    pub env: Option<EnvKind>,
    /// MDP JSON file (instead of --env).
    #[arg(long)]
    pub mdp: Option<PathBuf>,
    /// Feature-map JSON file.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Built-in feature choice when no --features file is given.
    #[arg(long, value_enum)]
    pub feature_set: Option<FeatureChoice>,
    /// Seed for random feature construction.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub reward_state: Option<usize>,
    #[arg(long)]
    pub success_prob: Option<f64>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub num_clusters: Option<usize>,
    #[arg(long)]
    pub num_random_w_rows: Option<usize>,
    #[arg(long)]
    pub num_random_f_cols: Option<usize>,
    #[arg(long, value_enum)]
    pub reward_scale: Option<RewardScaleArg>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveArgs {
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Comma-separated subset of mirror_prox, mirror_descent, value_iteration.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub solvers: Option<Vec<SolverKind>>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckArgs {
    /// Random deterministic policies examined when there are too many to enumerate.
    #[arg(long)]
    pub policy_samples: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Check only realizability and coherence.
    #[arg(long)]
    #[serde(default)]
    pub skip_ergodicity: bool,
}

/// Flat config file: the union of all option groups plus `out`.
#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    out: Option<PathBuf>,
    epsilon: Option<f64>,
    #[serde(flatten)]
    rest: serde_json::Map<String, serde_json::Value>,
}

pub struct Config {
    pub out: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub problem: ProblemArgs,
    pub solve: SolveArgs,
    pub check: CheckArgs,
}

impl Config {
    pub fn load(path: Option<&PathBuf>) -> Result<Config, CliError> {
        let Some(path) = path else {
            return Ok(Config {
                out: None,
                epsilon: None,
                problem: ProblemArgs::default(),
                solve: SolveArgs::default(),
                check: CheckArgs::default(),
            });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
        let file: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config: {}: {e}", path.display())))?;
        // Route each remaining key to the group that knows it.
        let mut groups = [serde_json::Map::new(), serde_json::Map::new(), serde_json::Map::new()];
        for (key, value) in file.rest {
            let slot = if PROBLEM_KEYS.contains(&key.as_str()) {
                0
            } else if SOLVE_KEYS.contains(&key.as_str()) {
                1
            } else if CHECK_KEYS.contains(&key.as_str()) {
                2
            } else {
                return Err(CliError::Config(format!("config: unknown key `{key}`")));
            };
            groups[slot].insert(key, value);
        }
        let [problem, solve, check] = groups;
        Ok(Config {
            out: file.out,
            epsilon: file.epsilon,
            problem: from_map(problem)?,
            solve: from_map(solve)?,
            check: from_map(check)?,
        })
    }
}

fn from_map<T: serde::de::DeserializeOwned>(map: serde_json::Map<String, serde_json::Value>) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| CliError::Config(format!("config: {e}")))
}

const PROBLEM_KEYS: &[&str] = &[
    "env",
    "mdp",
    "features",
    "feature_set",
    "seed",
    "side",
    "reward_state",
    "success_prob",
    "length",
    "num_clusters",
    "num_random_w_rows",
    "num_random_f_cols",
    "reward_scale",
];
const SOLVE_KEYS: &[&str] = &["eta", "iters", "checkpoint_every", "solvers"];
const CHECK_KEYS: &[&str] = &["policy_samples", "tol", "skip_ergodicity"];

macro_rules! overlay {
    ($flags:expr, $file:expr; $($field:ident),* $(,)?) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field.take(); } )*
    };
}

impl ProblemArgs {
    /// Fills unset flags from the config file.
    pub fn merge(mut self, mut file: ProblemArgs) -> ProblemArgs {
        overlay!(self, file; env, mdp, features, feature_set, seed, side, reward_state, success_prob,
            length, num_clusters, num_random_w_rows, num_random_f_cols, reward_scale);
        self
    }
}

impl SolveArgs {
    pub fn merge(mut self, mut file: SolveArgs) -> SolveArgs {
        overlay!(self, file; eta, iters, checkpoint_every, solvers);
        self
    }
}

impl CheckArgs {
    pub fn merge(mut self, mut file: CheckArgs) -> CheckArgs {
        overlay!(self, file; policy_samples, tol);
        self.skip_ergodicity |= file.skip_ergodicity;
        self
    }
}
