//! `mvmctl` command line.
//!
//! Exit codes: 0 ok, 2 configuration, 3 numeric failure, 4 value iteration
//! did not converge, 5 invariant or acceptance failure, 6 artifact mismatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::actions::ActionVec;
use crate::checks::{self, CheckResult};
use crate::config::{Experiment, ExperimentConfig, PolicyConfig, PriorConfig, SimulationMode};
use crate::control::{dyadic_step, ControlSchedule, SchedulePolicy};
use crate::dp::{
    interpolate, refine_study, value_iteration, EpsilonBudget, RefineRow, ValueFunction,
};
use crate::error::{Error, Result};
use crate::filter::{simulate_closed_loop, simulate_weak_path};
use crate::hjb::hjb_residual_diagnostic;
use crate::io::{
    create_stamped, load_value_artifacts, write_json, write_refinement_csv, write_value_artifacts,
};
use crate::measures::AtomicMeasure;
use crate::objective::{discounted_cost, estimate_j, mean_stderr, truncation_error, JEstimate};
use crate::rng::path_rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;
pub const EXIT_INVARIANT: i32 = 5;
pub const EXIT_ARTIFACT: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "mvmctl", version, about = "Adaptive control of a hidden static signal through its filter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate filter paths under the configured policy.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory of a solved value function (feedback policy).
        #[arg(long)]
        value: Option<PathBuf>,
    },
    /// Solve the dyadic problem by value iteration and write the value table.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Estimate the closed-loop cost of a solved policy and compare with V.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory of a solved value function; defaults to the output directory.
        #[arg(long)]
        value: Option<PathBuf>,
        /// Evaluate a constant action index instead of the solved feedback.
        #[arg(long)]
        constant: Option<usize>,
    },
    /// Run the invariant suite.
    Check {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve every level of `solver.n_list` and tabulate V^n(μ0).
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Experiment seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Dyadic level n (overrides `solver.n`).
    #[arg(long)]
    pub level: Option<u32>,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.simulation.seed = seed;
        }
        if let Some(level) = self.level {
            cfg.solver.n = level;
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        Ok(cfg)
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Domain(_)
        | Error::Precondition(_)
        | Error::Resource(_)
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Io(_) => EXIT_CONFIG,
        Error::Numeric(_) | Error::Degenerate(_) => EXIT_NUMERIC,
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        Error::ArtifactMismatch(_) => EXIT_ARTIFACT,
    }
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    let common = match &cli.command {
        Command::Simulate { common, .. }
        | Command::Solve { common }
        | Command::Evaluate { common, .. }
        | Command::Check { common }
        | Command::Convergence { common } => common,
    };
    if let Some(workers) = common.workers {
        if workers == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        // a global pool may already exist when embedded; the count never changes results
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    let cfg = common.load()?;
    match &cli.command {
        Command::Simulate { value, .. } => cmd_simulate(&cfg, value.as_deref()),
        Command::Solve { .. } => cmd_solve(&cfg),
        Command::Evaluate { value, constant, .. } => cmd_evaluate(&cfg, value.as_deref(), *constant),
        Command::Check { .. } => cmd_check(&cfg),
        Command::Convergence { .. } => cmd_convergence(&cfg),
    }
}

fn solve_level(exp: &Experiment, level: u32) -> Result<ValueFunction> {
    value_iteration(
        exp.grid.clone(),
        level,
        &exp.actions,
        &exp.cost,
        &exp.config.solver.settings(),
        None,
    )
}

/// Value table from `dir`, checked against the configured atoms and actions.
fn load_value(exp: &Experiment, dir: &Path) -> Result<ValueFunction> {
    let (v, actions, _) = load_value_artifacts(dir, Some(exp.mu0.atoms()))?;
    if actions.candidates() != exp.actions.candidates() {
        return Err(Error::ArtifactMismatch(
            "value artifact was solved on a different action grid".into(),
        ));
    }
    Ok(v)
}

#[derive(Debug, Serialize)]
struct SimulationSummary {
    mode: SimulationMode,
    policy: PolicyConfig,
    level: u32,
    estimate: JEstimate,
    /// Mean and standard error of `ξ_T(id)`.
    terminal_mean: f64,
    terminal_stderr: f64,
    written_paths: usize,
}

pub fn cmd_simulate(cfg: &ExperimentConfig, value: Option<&Path>) -> Result<i32> {
    let exp = cfg.build()?;
    let out = &cfg.output;
    let sim = &cfg.simulation;
    let horizon = cfg.horizon(&exp.cost);

    let (schedule, grid) = match exp.open_loop_schedule() {
        Some(s) => (s, exp.grid.clone()),
        None => {
            let solved = match value {
                Some(dir) => load_value(&exp, dir)?,
                None => solve_level(&exp, cfg.solver.n)?,
            };
            let schedule = solved
                .policy_schedule()
                .ok_or_else(|| Error::ArtifactMismatch("value artifact has no policy".into()))?;
            (schedule, solved.grid)
        }
    };
    let policy = SchedulePolicy::new(&schedule, &exp.actions, Some(&grid))?;

    let results = (0..sim.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(sim.seed, i as u64);
            let path = match sim.mode {
                SimulationMode::ClosedLoop => {
                    simulate_closed_loop(&exp.mu0, &policy, horizon, sim.dt, &mut rng)?
                }
                SimulationMode::Weak => simulate_weak_path(&exp.mu0, &policy, horizon, sim.dt, &mut rng)?,
            };
            let cost = discounted_cost(&path, &exp.cost, horizon)?;
            let terminal = path.measure_at(path.len() - 1).mean();
            let keep = (i < sim.write_paths).then_some(path);
            Ok((cost, terminal, keep))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut written = 0;
    for (i, (_, _, path)) in results.iter().enumerate() {
        if let Some(path) = path {
            let file = create_stamped(&out.join(format!("path_{i:05}.csv")), &exp.hash)?;
            path.write_csv(file)?;
            written += 1;
        }
    }
    let costs: Vec<f64> = results.iter().map(|r| r.0).collect();
    let terminals: Vec<f64> = results.iter().map(|r| r.1).collect();
    let (mean, stderr) = mean_stderr(&costs);
    let (terminal_mean, terminal_stderr) = mean_stderr(&terminals);
    let summary = SimulationSummary {
        mode: sim.mode,
        policy: sim.policy.clone(),
        level: cfg.solver.n,
        estimate: JEstimate {
            mean,
            stderr,
            truncation_bound: truncation_error(&exp.cost, horizon),
            paths: sim.paths,
            horizon,
            seed: sim.seed,
        },
        terminal_mean,
        terminal_stderr,
        written_paths: written,
    };
    write_json(&out.join("summary.json"), &summary, &exp.hash)?;
    println!("J = {mean:.6} ± {stderr:.6} over {} paths; wrote {}", sim.paths, out.display());
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct SolveSummary {
    level: u32,
    delta: f64,
    m: u32,
    nodes: usize,
    #[serde(rename = "V_at_mu0")]
    v_at_mu0: f64,
    iterations: usize,
    residual: f64,
    interpolation_modulus: f64,
    checks: Vec<CheckResult>,
}

pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<i32> {
    let exp = cfg.build()?;
    let out = &cfg.output;
    let level = cfg.solver.n;
    let v = solve_level(&exp, level)?;
    write_value_artifacts(out, &v, &exp.actions, exp.cost.beta(), &exp.hash)?;

    let residual = hjb_residual_diagnostic(&v, &exp.actions, &exp.cost, true)?;
    write_json(&out.join("hjb_residual.json"), &residual, &exp.hash)?;

    if let Some(levels) = &cfg.solver.n_list {
        let rows = refinement_rows(&exp, levels)?;
        write_refinement_csv(&out.join("refinement.csv"), &rows, &exp.hash)?;
    }
    let gamma = (-exp.cost.beta() * dyadic_step(level)).exp();
    let summary = SolveSummary {
        level,
        delta: dyadic_step(level),
        m: cfg.solver.m,
        nodes: exp.grid.len(),
        v_at_mu0: interpolate(&v, &exp.mu0),
        iterations: v.meta.iterations,
        residual: v.meta.residual,
        interpolation_modulus: v.interpolation_modulus(),
        checks: vec![
            checks::contraction_check(&v.meta.residual_history, gamma),
            checks::vertex_identity(&v, &exp.actions, &exp.cost),
            checks::value_bound(&v, &exp.cost),
        ],
    };
    write_json(&out.join("solve.json"), &summary, &exp.hash)?;
    println!(
        "V^{level}(mu0) = {:.8} after {} sweeps; wrote {}",
        summary.v_at_mu0,
        summary.iterations,
        out.display()
    );
    Ok(EXIT_OK)
}

fn refinement_rows(exp: &Experiment, levels: &[u32]) -> Result<Vec<RefineRow>> {
    let (rows, _) = refine_study(
        &exp.mu0,
        &exp.cost,
        &exp.actions,
        levels,
        exp.grid.clone(),
        &exp.config.solver.settings(),
    )?;
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct EvaluateReport {
    policy: String,
    #[serde(rename = "J_mean")]
    j_mean: f64,
    #[serde(rename = "J_stderr")]
    j_stderr: f64,
    #[serde(rename = "V_at_mu0")]
    v_at_mu0: f64,
    epsilon_budget: EpsilonBudget,
    /// Feedback: `|J − V| ≤ ε`. Constant action: `J ≥ V − ε`.
    pass: bool,
    #[serde(rename = "M")]
    paths: usize,
    #[serde(rename = "T")]
    horizon: f64,
    seed: u64,
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, value: Option<&Path>, constant: Option<usize>) -> Result<i32> {
    let exp = cfg.build()?;
    let out = &cfg.output;
    let v = load_value(&exp, value.unwrap_or(out))?;
    let schedule = match constant {
        Some(a) => ControlSchedule::constant(v.meta.level, a),
        None => v
            .policy_schedule()
            .ok_or_else(|| Error::ArtifactMismatch("value artifact has no policy".into()))?,
    };
    let policy = SchedulePolicy::new(&schedule, &exp.actions, Some(&v.grid))?;
    let mc = cfg.mc_settings(&exp.cost);
    let est = estimate_j(&policy, &exp.mu0, &exp.cost, &mc)?;
    let v0 = interpolate(&v, &exp.mu0);
    let budget = EpsilonBudget::new(&v, &exp.cost, est.stderr, mc.horizon, mc.dt);
    let lower_ok = est.mean >= v0 - budget.total;
    let pass = match constant {
        Some(_) => lower_ok,
        None => lower_ok && est.mean <= v0 + budget.total,
    };
    let report = EvaluateReport {
        policy: match constant {
            Some(a) => format!("constant:{a}"),
            None => "feedback".into(),
        },
        j_mean: est.mean,
        j_stderr: est.stderr,
        v_at_mu0: v0,
        epsilon_budget: budget,
        pass,
        paths: mc.paths,
        horizon: mc.horizon,
        seed: mc.seed,
    };
    write_json(&out.join("evaluate.json"), &report, &exp.hash)?;
    println!(
        "J = {:.6} ± {:.6}, V(mu0) = {:.6}, epsilon = {:.6}: {}",
        est.mean,
        est.stderr,
        v0,
        budget.total,
        if pass { "pass" } else { "FAIL" }
    );
    Ok(if pass { EXIT_OK } else { EXIT_INVARIANT })
}

#[derive(Debug, Serialize)]
struct CheckReport {
    all_pass: bool,
    checks: Vec<CheckResult>,
}

/// The most informative candidate: largest effort, lowest index on ties.
fn probe_action(exp: &Experiment) -> &ActionVec {
    let mut best = &exp.actions.candidates()[0];
    for a in exp.actions.candidates() {
        if a.effort() > best.effort() {
            best = a;
        }
    }
    best
}

pub fn run_checks(cfg: &ExperimentConfig) -> Result<Vec<CheckResult>> {
    cfg.validate_static()?;
    if let PriorConfig::Explicit { weights, .. } = &cfg.prior {
        let mass = checks::mass_check("prior_mass", weights);
        if !mass.passed() {
            // nothing downstream is defined without a valid prior
            return Ok(vec![mass]);
        }
    }
    let exp = cfg.build()?;
    let samples = cfg.check.samples;
    let seed = cfg.simulation.seed;
    let xs = exp.mu0.atoms().as_slice();
    let id: Vec<f64> = xs.to_vec();
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let v = probe_action(&exp);
    let delta = dyadic_step(cfg.solver.n);

    let mut out = vec![checks::mass_check("prior_mass", exp.mu0.weights())];

    let nodes: Vec<AtomicMeasure> = (0..exp.grid.len()).map(|i| exp.grid.node_measure(i)).collect();
    let cost = &exp.cost;
    let worst_cost = nodes
        .iter()
        .flat_map(|mu| exp.actions.candidates().iter().map(move |a| cost.eval(mu, a).abs()))
        .fold(0.0, f64::max);
    out.push(CheckResult::at_most("cost_bound", worst_cost, exp.cost.k_max() + 1e-12));

    for (name, f) in [("martingale_id", &id), ("martingale_id2", &sq)] {
        let mut c = checks::martingale_check(&exp.mu0, v, delta, f, samples, seed)?;
        c.name = name.into();
        out.push(c);
    }
    out.extend(checks::euler_exact_moments(&exp.mu0, v, 0.1, cfg.check.euler_dt, &id, samples, seed)?);
    out.push(checks::dirac_absorbing(&exp.mu0, v, 100, seed)?);

    let kappa = exp.mu0.atoms().max_abs();
    if kappa < cfg.actions.radius {
        for n in 1..=cfg.actions.d {
            out.push(checks::tail_bound_check(
                cfg.actions.radius,
                cfg.actions.budget,
                kappa,
                cfg.actions.d,
                n,
                samples,
                seed,
            )?);
        }
    }

    let vertex = AtomicMeasure::dirac(exp.mu0.atoms().clone(), 0)?;
    let nu_weights: Vec<f64> = exp
        .mu0
        .weights()
        .iter()
        .zip(vertex.weights())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let nu = AtomicMeasure::from_unnormalized(exp.mu0.atoms().clone(), nu_weights)?;
    for t in [0.5, 1.0] {
        out.push(checks::wasserstein_submartingale(&exp.mu0, &nu, v, t, 1e-3, samples.min(4000), seed)?);
    }

    let solved = solve_level(&exp, cfg.solver.n)?;
    let gamma = (-exp.cost.beta() * delta).exp();
    out.push(checks::contraction_check(&solved.meta.residual_history, gamma));
    out.push(checks::vertex_identity(&solved, &exp.actions, &exp.cost));
    out.push(checks::value_bound(&solved, &exp.cost));
    Ok(out)
}

pub fn cmd_check(cfg: &ExperimentConfig) -> Result<i32> {
    let results = run_checks(cfg)?;
    let all_pass = results.iter().all(|c| c.passed());
    let report = CheckReport {
        all_pass,
        checks: results,
    };
    write_json(&cfg.output.join("check.json"), &report, &cfg.hash())?;
    for c in &report.checks {
        println!(
            "{:<32} {:<4} statistic={:.3e} threshold={:.3e}",
            c.name,
            if c.passed() { "ok" } else { "FAIL" },
            c.statistic,
            c.threshold
        );
    }
    if all_pass {
        Ok(EXIT_OK)
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.name.as_str())
            .collect();
        eprintln!("failed invariants: {}", failed.join(", "));
        Ok(EXIT_INVARIANT)
    }
}

#[derive(Debug, Serialize)]
struct ConvergenceReport {
    rows: Vec<RefineRow>,
    /// Every `V^{n+1}(μ0) ≤ V^n(μ0) + tol`.
    monotone: bool,
    /// Successive gaps decrease.
    gaps_shrinking: bool,
}

pub fn cmd_convergence(cfg: &ExperimentConfig) -> Result<i32> {
    let exp = cfg.build()?;
    let levels = cfg
        .solver
        .n_list
        .clone()
        .unwrap_or_else(|| (0..=cfg.solver.n).collect());
    let rows = refinement_rows(&exp, &levels)?;
    write_refinement_csv(&cfg.output.join("refinement.csv"), &rows, &exp.hash)?;
    let tol = cfg.solver.tol;
    let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
    let report = ConvergenceReport {
        monotone: gaps.iter().all(|g| *g >= -tol),
        gaps_shrinking: gaps.windows(2).all(|w| w[1] <= w[0]),
        rows,
    };
    write_json(&cfg.output.join("convergence.json"), &report, &exp.hash)?;
    for r in &report.rows {
        println!("n={} delta={} V={:.8}", r.level, r.delta, r.value);
    }
    Ok(EXIT_OK)
}
