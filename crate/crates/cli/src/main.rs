//! `saddle-mdp`: build or load average-reward MDPs, run the saddle-point
//! solvers, check assumptions, and export instances.
//!
//! Exit codes: 0 success, 1 a check did not hold, 2 bad configuration,
//! 3 solver failure. Diagnostics go to stderr; stdout lists written files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod problem;
mod settings;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use saddle_mdp::assumptions::{check_assumptions, check_coherence, check_realizability, COHERENCE_TOL};
use saddle_mdp::envs::counterexample_report;
use saddle_mdp::mdp::{average_reward, greedy, relative_value_iteration_with, Policy};
use saddle_mdp::solvers::{default_step_size, run, Reference};
use saddle_mdp::{io, Iterate, SolveTrace, SolverConfig, Variant};

use settings::{CheckArgs, Config, ProblemArgs, SolveArgs, SolverKind};

const THRESHOLDS: [(&str, f64); 3] = [("1e-1", 1e-1), ("1e-2", 1e-2), ("1e-3", 1e-3)];
const DEFAULT_POLICY_SAMPLES: usize = 256;
const VI_SPAN_FLOOR: f64 = 1e-12;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    CheckFailed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "saddle-mdp", version, about = "Saddle-point solvers for average-reward MDPs")]
struct Cli {
    /// JSON file with default values for any option (keys use underscores).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run solvers and write one CSV trace per solver plus summary.json.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check ergodicity, realizability and coherence; write assumptions.json.
    Check {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        check: CheckArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the three-state counterexample at y = (1 - eps, eps, 0, 0).
    Counterexample {
        #[arg(long)]
        epsilon: Option<f64>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the MDP and feature maps of an instance as JSON.
    Export {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(m) => eprintln!("configuration error: {m}"),
                CliError::Solver(m) => eprintln!("solver error: {m}"),
                CliError::CheckFailed(m) => eprintln!("{m}"),
            }
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config = Config::load(cli.config.as_ref())?;
    match cli.command {
        Command::Solve { problem, solve, out } => {
            cmd_solve(&problem.merge(config.problem), solve.merge(config.solve), &out_dir(out, config.out)?)
        }
        Command::Check { problem, check, out } => {
            cmd_check(&problem.merge(config.problem), check.merge(config.check), &out_dir(out, config.out)?)
        }
        Command::Counterexample { epsilon, out } => {
            let epsilon = epsilon
                .or(config.epsilon)
                .ok_or_else(|| CliError::Config("epsilon: required".into()))?;
            cmd_counterexample(epsilon, out.or(config.out).as_deref())
        }
        Command::Export { problem, out } => cmd_export(&problem.merge(config.problem), &out_dir(out, config.out)?),
    }
}

fn out_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag.or(file).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("out: cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    io::write_json(path, value).map_err(|e| CliError::Config(format!("out: cannot write {}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    io::write_atomic(path, bytes).map_err(|e| CliError::Config(format!("out: cannot write {}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn thresholds(find: impl Fn(f64) -> Option<usize>) -> Value {
    let map: BTreeMap<&str, Option<usize>> = THRESHOLDS.iter().map(|&(k, t)| (k, find(t))).collect();
    json!(map)
}

fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn cmd_solve(args: &ProblemArgs, solve: SolveArgs, out: &Path) -> Result<(), CliError> {
    let solvers = solve.solvers.clone().unwrap_or_else(|| vec![SolverKind::MirrorProx]);
    if solvers.is_empty() {
        return Err(CliError::Config("solvers: select at least one solver".into()));
    }
    let inst = problem::load(args)?;
    let prob = &inst.problem;
    let eta = solve.eta.unwrap_or_else(|| default_step_size(prob));
    let iters = solve.iters.unwrap_or(10_000);
    let every = solve.checkpoint_every.unwrap_or((iters / 100).max(1));
    let seed = args.seed.unwrap_or(0);

    let mut reference = Reference::new(inst.optimal.clone());
    let report = check_assumptions(prob, &inst.optimal, DEFAULT_POLICY_SAMPLES, seed, 1e-8);
    if report.realizability.holds {
        let z = Iterate {
            u: nalgebra::DVector::from_vec(report.realizability.u_star.clone()),
            y: nalgebra::DVector::from_vec(report.realizability.y_star.clone()),
        };
        reference = if inst.tabular { Reference::tabular(inst.optimal.clone()) } else { reference.with_saddle_point(z) };
    }
    if report.all_hold() {
        let tau_mix = report.ergodicity.as_ref().map(|e| e.tau_mix_estimate).unwrap_or(f64::NAN);
        let u_bound = report.realizability.u_bound_u.unwrap_or(f64::NAN);
        reference = reference.with_bound(tau_mix, u_bound);
    } else {
        log::warn!("assumptions do not all hold; the suboptimality bound is not checked");
    }

    let configs: Vec<(SolverKind, SolverConfig)> = solvers
        .iter()
        .filter_map(|&kind| {
            let variant = match kind {
                SolverKind::MirrorProx => Variant::MirrorProx,
                SolverKind::MirrorDescent => Variant::MirrorDescent,
                SolverKind::ValueIteration => return None,
            };
            let mut c = SolverConfig::new(eta, iters, every, variant);
            c.seed = seed;
            Some((kind, c))
        })
        .collect();
    for (_, c) in &configs {
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }

    let traces: Vec<(SolverKind, Result<SolveTrace, saddle_mdp::Error>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|(kind, c)| (*kind, scope.spawn(|| run(prob, c, Some(&reference)))))
            .collect();
        handles.into_iter().map(|(k, h)| (k, h.join().expect("solver thread panicked"))).collect()
    });

    let mut summary = serde_json::Map::new();
    for (kind, trace) in traces {
        let trace = trace.map_err(|e| CliError::Solver(format!("{}: {e}", kind.name())))?;
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).map_err(|e| CliError::Solver(e.to_string()))?;
        write_file(&out.join(format!("{}.csv", kind.name())), &csv)?;
        let last = trace.last();
        summary.insert(
            kind.name().into(),
            json!({
                "final_suboptimality": finite(last.suboptimality),
                "final_last_iterate_suboptimality": finite(last.last_suboptimality),
                "final_gap": finite(last.gap_vs_ref),
                "iterations_to": thresholds(|t| trace.iterations_to(t)),
                "last_iterate_to": thresholds(|t| trace.last_iterate_to(t)),
                "bound_checked": last.bound_rhs.is_finite(),
                "bound_violations": trace.bound_violations(),
                "warnings": trace.warnings,
            }),
        );
    }
    if solvers.contains(&SolverKind::ValueIteration) {
        summary.insert("value_iteration".into(), value_iteration(&inst, iters, every, out)?);
    }

    let doc = json!({
        "problem": {
            "source": inst.source,
            "num_states": prob.mdp().num_states(),
            "num_actions": prob.mdp().num_actions(),
            "n": prob.n(),
            "m": prob.m(),
            "k_smooth": prob.k_smooth(),
            "rho_star": inst.optimal.rho_star,
            "tabular": inst.tabular,
        },
        "eta": eta,
        "iters": iters,
        "checkpoint_every": every,
        "assumptions_hold": report.all_hold(),
        "solvers": summary,
    });
    write_json(&out.join("summary.json"), &doc)
}

/// Relative value iteration for `iters` sweeps (or until the span vanishes).
fn value_iteration(inst: &problem::Instance, iters: usize, every: usize, out: &Path) -> Result<Value, CliError> {
    let mdp = inst.problem.mdp();
    let rho_star = inst.optimal.rho_star;
    let mut rows = Vec::new();
    let mut first_span: BTreeMap<&str, Option<usize>> = THRESHOLDS.iter().map(|&(k, _)| (k, None)).collect();
    let mut last = (0, f64::NAN, f64::NAN, f64::NAN);
    let mut eval_error = None;
    let result = relative_value_iteration_with(mdp, VI_SPAN_FLOOR, iters, |step, look| {
        for &(k, t) in &THRESHOLDS {
            if step.span <= t {
                first_span.get_mut(k).expect("key").get_or_insert(step.iteration);
            }
        }
        if step.iteration % every == 0 || step.iteration == iters || step.span <= VI_SPAN_FLOOR {
            let actions = greedy(look);
            let policy = Policy::deterministic(&actions, mdp.num_actions());
            let sub = match average_reward(mdp, &policy) {
                Ok(rho) => rho_star - rho,
                Err(e) => {
                    eval_error.get_or_insert(e.to_string());
                    f64::NAN
                }
            };
            rows.push(format!("{},{:.16e},{:.16e},{:.16e}", step.iteration, step.span, step.rho, sub));
            last = (step.iteration, step.span, step.rho, sub);
        }
    });
    match result {
        Ok(_) | Err(saddle_mdp::Error::NoConvergence { .. }) => {}
        Err(e) => return Err(CliError::Solver(format!("value_iteration: {e}"))),
    }
    let mut csv = String::from("t,span,rho_estimate,greedy_suboptimality\n");
    for row in rows {
        csv.push_str(&row);
        csv.push('\n');
    }
    write_file(&out.join("value_iteration.csv"), csv.as_bytes())?;
    Ok(json!({
        "iterations": last.0,
        "final_span": finite(last.1),
        "final_rho_estimate": finite(last.2),
        "final_suboptimality": finite(last.3),
        "iterations_to_span": first_span,
        "evaluation_error": eval_error,
    }))
}

fn cmd_check(args: &ProblemArgs, check: CheckArgs, out: &Path) -> Result<(), CliError> {
    let inst = problem::load(args)?;
    let tol = check.tol.unwrap_or(1e-8);
    if !(tol > 0.0) {
        return Err(CliError::Config(format!("tol: must be positive, got {tol}")));
    }
    let samples = check.policy_samples.unwrap_or(DEFAULT_POLICY_SAMPLES);
    if samples == 0 {
        return Err(CliError::Config("policy_samples: must be positive".into()));
    }
    let prob = &inst.problem;
    let (doc, holds) = if check.skip_ergodicity {
        let realizability = check_realizability(prob, &inst.optimal, None, tol);
        let coherence = check_coherence(prob, f64::INFINITY, tol.max(COHERENCE_TOL));
        let holds = realizability.holds && coherence.holds;
        (json!({ "realizability": realizability, "coherence": coherence, "ergodicity": null,
                 "ergodicity_skipped": true, "all_hold": holds }), holds)
    } else {
        let report = check_assumptions(prob, &inst.optimal, samples, args.seed.unwrap_or(0), tol);
        let holds = report.all_hold();
        let mut doc = serde_json::to_value(&report).expect("serializable");
        doc["all_hold"] = json!(holds);
        (doc, holds)
    };
    write_json(&out.join("assumptions.json"), &doc)?;
    if holds {
        Ok(())
    } else {
        Err(CliError::CheckFailed("assumption check failed; see assumptions.json".into()))
    }
}

fn cmd_counterexample(epsilon: f64, out: Option<&Path>) -> Result<(), CliError> {
    let report = counterexample_report(epsilon).map_err(|e| CliError::Config(e.to_string()))?;
    let gap_ok = (report.duality_gap - epsilon).abs() <= 1e-12;
    let loss_ok = (report.policy_suboptimality - 2.0 / 3.0).abs() <= 1e-12;
    let mut doc = serde_json::to_value(&report).expect("serializable");
    doc["gap_equals_epsilon"] = json!(gap_ok);
    doc["suboptimality_equals_two_thirds"] = json!(loss_ok);
    match out {
        Some(path) => write_json(path, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc).expect("serializable")),
    }
    if gap_ok && loss_ok {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gap {:e} (expected {epsilon:e}), suboptimality {} (expected 2/3)",
            report.duality_gap, report.policy_suboptimality
        )))
    }
}

fn cmd_export(args: &ProblemArgs, out: &Path) -> Result<(), CliError> {
    let inst = problem::load(args)?;
    let mdp_path = out.join("mdp.json");
    io::write_mdp(&mdp_path, inst.problem.mdp()).map_err(|e| CliError::Config(format!("out: {e}")))?;
    println!("{}", mdp_path.display());
    let features_path = out.join("features.json");
    io::write_features(&features_path, inst.problem.features()).map_err(|e| CliError::Config(format!("out: {e}")))?;
    println!("{}", features_path.display());
    Ok(())
}
