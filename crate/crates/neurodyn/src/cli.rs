//! Command-line front end: run training, integration, comparisons, and
//! hyperparameter sweeps on the registered examples, emitting CSV/JSON
//! artifacts for offline plotting.
//!
//! Exit codes: 0 success, 2 usage error, 3 numerical failure (non-finite
//! loss or a failed integration). Configuration precedence is command-line
//! flags, then a JSON config file, then built-in defaults; `NEURODYN_OUT_DIR`
//! supplies the default output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::benchmarks::{all_examples, load_example_with, ExampleInstance, ExampleOptions};
use crate::integrators::{
    integrate_adaptive, integrate_fixed_thinned, AdaptiveMethod, FixedMethod, StepControl,
    Trajectory, TrajectoryStatus,
};
use crate::model::{save_checkpoint, StateNet, DEFAULT_HIDDEN};
use crate::trainer::{train, HistoryRow, TrainConfig, TrainObserver, TrainReport};

pub const OUT_DIR_ENV: &str = "NEURODYN_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) | CliError::Json(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "neurodyn",
    about = "Neurodynamic optimization: solve constrained problems by training a neural state solution or by Runge-Kutta integration",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List the registered examples as JSON.
    List,
    /// Train the neural state solution on one example.
    Train(TrainArgs),
    /// Integrate one example's ODE system and report the projected endpoint.
    Integrate(IntegrateArgs),
    /// Run training and integration side by side at matched budgets.
    Compare(CompareArgs),
    /// Repeat training across initial points or time ranges.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Example id (1..=6).
    #[arg(long)]
    example: u8,
    /// Output directory (default: $NEURODYN_OUT_DIR or ./neurodyn-out).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Metric evaluation cadence in iterations.
    #[arg(long)]
    cadence: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct IntegrateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// euler | rk4 | rk45 | rk23.
    #[arg(long, default_value = "rk45")]
    method: String,
    /// Fixed step size (euler/rk4).
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    max_step: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// Store every k-th sample of a fixed-step run.
    #[arg(long, default_value_t = 1)]
    thin: usize,
}

#[derive(Args, Debug, Clone)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated training seeds; the best run is reported.
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Fixed step for the integrator branch.
    #[arg(long, default_value_t = 2e-4)]
    step: f64,
}

#[derive(Args, Debug, Clone)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// initial-point | time-range.
    #[arg(long)]
    axis: String,
    /// Semicolon-separated vectors for initial-point (e.g. "1,2,3,4;-10,0,0,8")
    /// or comma-separated horizons for time-range (e.g. "5,8,15").
    #[arg(long, allow_hyphen_values = true)]
    values: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
}

/// Optional JSON config file; any present field acts as a default for the
/// matching flag.
#[derive(Debug, Default, Clone, Deserialize)]
struct FileConfig {
    seed: Option<u64>,
    iters: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    gamma: Option<f64>,
    hidden: Option<usize>,
    t_final: Option<f64>,
    alpha: Option<f64>,
    cadence: Option<usize>,
    out_dir: Option<PathBuf>,
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad config file {}: {e}", p.display())))
        }
    }
}

fn resolve_out_dir(flag: &Option<PathBuf>, file: &FileConfig) -> PathBuf {
    flag.clone()
        .or_else(|| file.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("neurodyn-out"))
}

fn load_instance(id: u8, t_final: Option<f64>) -> Result<ExampleInstance, CliError> {
    load_example_with(id, &ExampleOptions { y0: None, t_final })
        .map_err(|e| CliError::Usage(e.to_string()))
}

/// JSON value for a float, representing non-finite values as strings so the
/// document stays valid ("inf" mirrors an infeasible objective).
fn json_f64(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

struct CsvCheckpointObserver {
    history: std::io::BufWriter<fs::File>,
    checkpoint_path: PathBuf,
}

impl CsvCheckpointObserver {
    fn new(out_dir: &Path) -> Result<Self, CliError> {
        let mut history = std::io::BufWriter::new(fs::File::create(out_dir.join("history.csv"))?);
        writeln!(history, "iter,loss,epsilon,wall_ms")?;
        Ok(CsvCheckpointObserver {
            history,
            checkpoint_path: out_dir.join("checkpoint"),
        })
    }
}

impl TrainObserver for CsvCheckpointObserver {
    fn on_row(&mut self, row: &HistoryRow) {
        let _ = writeln!(
            self.history,
            "{},{},{},{}",
            row.iteration, row.loss, row.epsilon, row.wall_ms
        );
        let _ = self.history.flush();
    }

    fn on_improvement(&mut self, _iteration: usize, _epsilon: f64, net: &StateNet) {
        let _ = save_checkpoint(&self.checkpoint_path, net);
    }
}

struct ResolvedTrain {
    cfg: TrainConfig,
    hidden: usize,
}

#[allow(clippy::too_many_arguments)]
fn resolve_train_config(
    file: &FileConfig,
    seed: Option<u64>,
    iters: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    gamma: Option<f64>,
    hidden: Option<usize>,
    t_final: Option<f64>,
    alpha: Option<f64>,
    cadence: Option<usize>,
) -> ResolvedTrain {
    let d = TrainConfig::default();
    ResolvedTrain {
        cfg: TrainConfig {
            learning_rate: lr.or(file.lr).unwrap_or(d.learning_rate),
            batch_size: batch.or(file.batch).unwrap_or(d.batch_size),
            max_iters: iters.or(file.iters).unwrap_or(d.max_iters),
            gamma: gamma.or(file.gamma).unwrap_or(d.gamma),
            seed: seed.or(file.seed).unwrap_or(1),
            epsilon_every: cadence.or(file.cadence).unwrap_or(d.epsilon_every),
            horizon: t_final.or(file.t_final).unwrap_or(d.horizon),
            alpha: alpha.or(file.alpha).unwrap_or(d.alpha),
        },
        hidden: hidden.or(file.hidden).unwrap_or(DEFAULT_HIDDEN),
    }
}

fn config_snapshot(example: u8, rt: &ResolvedTrain) -> serde_json::Value {
    json!({
        "example": example,
        "seed": rt.cfg.seed,
        "iters": rt.cfg.max_iters,
        "batch": rt.cfg.batch_size,
        "lr": rt.cfg.learning_rate,
        "gamma": rt.cfg.gamma,
        "hidden": rt.hidden,
        "t_final": rt.cfg.horizon,
        "alpha": rt.cfg.alpha,
        "cadence": rt.cfg.epsilon_every,
    })
}

fn run_training(
    inst: &ExampleInstance,
    rt: &ResolvedTrain,
    out_dir: Option<&Path>,
) -> Result<TrainReport, CliError> {
    let net = inst.make_net(rt.hidden, rt.cfg.seed);
    let mut observer = match out_dir {
        Some(dir) => Some(CsvCheckpointObserver::new(dir)?),
        None => None,
    };
    let obs_ref: Option<&mut dyn TrainObserver> = match observer.as_mut() {
        Some(o) => Some(o),
        None => None,
    };
    train(&inst.field, &net, &inst.epsilon, &rt.cfg, obs_ref)
        .map_err(|e| CliError::Numerical(e.to_string()))
}

fn cmd_train(args: &TrainArgs) -> Result<serde_json::Value, CliError> {
    let file = load_file_config(&args.common.config)?;
    let rt = resolve_train_config(
        &file,
        args.seed,
        args.iters,
        args.batch,
        args.lr,
        args.gamma,
        args.hidden,
        args.t_final,
        args.alpha,
        args.cadence,
    );
    let inst = load_instance(args.common.example, Some(rt.cfg.horizon))?;
    let out_dir = resolve_out_dir(&args.common.out_dir, &file);
    fs::create_dir_all(&out_dir)?;

    let start = Instant::now();
    let report = run_training(&inst, &rt, Some(&out_dir))?;
    let summary = json!({
        "command": "train",
        "example": inst.id,
        "name": inst.name,
        "seed": rt.cfg.seed,
        "config": config_snapshot(inst.id, &rt),
        "epsilon_best": json_f64(report.epsilon_best),
        "best_iteration": report.best_iteration,
        "best_solution": report.best_solution,
        "wall_ms": start.elapsed().as_secs_f64() * 1e3,
        "outputs": {
            "history": out_dir.join("history.csv"),
            "checkpoint": out_dir.join("checkpoint"),
            "summary": out_dir.join("summary.json"),
        },
        "status": "ok",
    });
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let n = traj.states().first().map_or(0, Vec::len);
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    let header: Vec<String> = (1..=n).map(|i| format!("y{i}")).collect();
    writeln!(w, "t,{}", header.join(","))?;
    for (t, s) in traj.times().iter().zip(traj.states()) {
        let row: Vec<String> = s.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{t},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn status_label(status: TrajectoryStatus) -> &'static str {
    match status {
        TrajectoryStatus::Completed => "completed",
        TrajectoryStatus::StepUnderflow => "fail:step-underflow",
        TrajectoryStatus::NonFiniteState => "fail:non-finite-state",
    }
}

fn cmd_integrate(args: &IntegrateArgs) -> Result<serde_json::Value, CliError> {
    let file = load_file_config(&args.common.config)?;
    if !matches!(args.method.as_str(), "euler" | "rk4" | "rk45" | "rk23") {
        return Err(CliError::Usage(format!(
            "unknown method `{}` (euler|rk4|rk45|rk23)",
            args.method
        )));
    }
    let t_final = args.t_final.or(file.t_final).unwrap_or(10.0);
    let inst = load_instance(args.common.example, Some(t_final))?;
    let out_dir = resolve_out_dir(&args.common.out_dir, &file);
    fs::create_dir_all(&out_dir)?;

    let start = Instant::now();
    let traj = match args.method.as_str() {
        "euler" | "rk4" => {
            let method = if args.method == "euler" {
                FixedMethod::Euler
            } else {
                FixedMethod::Rk4
            };
            let step = args.step.unwrap_or(2e-4);
            if step <= 0.0 {
                return Err(CliError::Usage("--step must be positive".into()));
            }
            integrate_fixed_thinned(&inst.field, &inst.y0, t_final, step, method, args.thin.max(1))
        }
        "rk45" | "rk23" => {
            let method = if args.method == "rk45" {
                AdaptiveMethod::Rk45
            } else {
                AdaptiveMethod::Rk23
            };
            let defaults = StepControl::default();
            let ctrl = StepControl {
                rtol: args.rtol.unwrap_or(defaults.rtol),
                atol: args.atol.unwrap_or(defaults.atol),
                max_step: args.max_step.unwrap_or(defaults.max_step),
                ..defaults
            };
            integrate_adaptive(&inst.field, &inst.y0, t_final, &ctrl, method)
        }
        _ => unreachable!("method validated above"),
    };
    write_trajectory_csv(&out_dir.join("trajectory.csv"), &traj)?;

    let raw = traj.last_state().to_vec();
    let projected = inst.project(&raw);
    let epsilon = inst.epsilon_of(&raw);
    let completed = traj.status() == TrajectoryStatus::Completed;
    let summary = json!({
        "command": "integrate",
        "example": inst.id,
        "name": inst.name,
        "method": args.method,
        "step": args.step,
        "t_final": t_final,
        "samples": traj.len(),
        "status": status_label(traj.status()),
        "last_state": raw,
        "projected_endpoint": projected,
        "epsilon": json_f64(epsilon),
        "wall_ms": start.elapsed().as_secs_f64() * 1e3,
        "outputs": {
            "trajectory": out_dir.join("trajectory.csv"),
            "summary": out_dir.join("summary.json"),
        },
    });
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    if !completed {
        return Err(CliError::Numerical(format!(
            "integration ended with {}",
            status_label(traj.status())
        )));
    }
    Ok(summary)
}

const COMPARE_BUDGETS: [usize; 6] = [0, 10, 100, 1000, 10_000, 50_000];

fn cmd_compare(args: &CompareArgs) -> Result<serde_json::Value, CliError> {
    let file = load_file_config(&args.common.config)?;
    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad seed `{s}`")))
        })
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    let inst = load_instance(args.common.example, None)?;
    let out_dir = resolve_out_dir(&args.common.out_dir, &file);
    fs::create_dir_all(&out_dir)?;

    let start = Instant::now();
    // training branch: best of the requested seeds
    let mut best: Option<(u64, TrainReport)> = None;
    for &seed in &seeds {
        let rt = resolve_train_config(
            &file,
            Some(seed),
            args.iters,
            args.batch,
            None,
            None,
            args.hidden,
            None,
            None,
            None,
        );
        let seed_dir = out_dir.join(format!("seed_{seed}"));
        fs::create_dir_all(&seed_dir)?;
        let report = run_training(&inst, &rt, Some(&seed_dir))?;
        let better = match &best {
            None => true,
            Some((_, b)) => report.epsilon_best < b.epsilon_best,
        };
        if better {
            best = Some((seed, report));
        }
    }
    let (best_seed, report) = best.expect("at least one seed ran");

    // integrator branch: fixed steps so collocation counts match budgets
    let traj = integrate_fixed_thinned(
        &inst.field,
        &inst.y0,
        inst.t_final,
        args.step,
        FixedMethod::Rk4,
        1,
    );

    let iters = report.history.len() - 1;
    let budgets: Vec<usize> = COMPARE_BUDGETS
        .iter()
        .copied()
        .filter(|b| *b <= iters.max(traj.len() - 1))
        .collect();
    let mut rows = Vec::new();
    let mut w = std::io::BufWriter::new(fs::File::create(out_dir.join("compare.csv"))?);
    writeln!(w, "budget,trained_epsilon,integrator_epsilon")?;
    let mins = report.running_epsilon_min();
    for &b in &budgets {
        let trained = if b <= iters {
            mins[b]
        } else {
            *mins.last().expect("nonempty history")
        };
        let integ = if b < traj.len() {
            inst.epsilon_of(&traj.states()[b])
        } else {
            inst.epsilon_of(traj.last_state())
        };
        writeln!(w, "{b},{trained},{integ}")?;
        rows.push(json!({
            "budget": b,
            "trained_epsilon": json_f64(trained),
            "integrator_epsilon": json_f64(integ),
        }));
    }
    w.flush()?;

    let summary = json!({
        "command": "compare",
        "example": inst.id,
        "name": inst.name,
        "seeds": seeds,
        "best_seed": best_seed,
        "iters": iters,
        "step": args.step,
        "integrator_status": status_label(traj.status()),
        "epsilon_best": json_f64(report.epsilon_best),
        "best_solution": report.best_solution,
        "integrator_endpoint": inst.project(traj.last_state()),
        "integrator_epsilon": json_f64(inst.epsilon_of(traj.last_state())),
        "rows": rows,
        "wall_ms": start.elapsed().as_secs_f64() * 1e3,
        "outputs": {
            "compare": out_dir.join("compare.csv"),
            "summary": out_dir.join("summary.json"),
        },
    });
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

fn parse_vector(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad vector component `{v}`")))
        })
        .collect()
}

fn cmd_sweep(args: &SweepArgs) -> Result<serde_json::Value, CliError> {
    let file = load_file_config(&args.common.config)?;

    enum Axis {
        InitialPoint(Vec<Vec<f64>>),
        TimeRange(Vec<f64>),
    }
    let axis = match args.axis.as_str() {
        "initial-point" | "initial_point" => {
            let points: Result<Vec<Vec<f64>>, _> = args
                .values
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(parse_vector)
                .collect();
            Axis::InitialPoint(points?)
        }
        "time-range" | "time_range" => Axis::TimeRange(parse_vector(&args.values)?),
        other => {
            return Err(CliError::Usage(format!(
                "unknown axis `{other}` (initial-point|time-range)"
            )))
        }
    };

    let cells: Vec<ExampleOptions> = match &axis {
        Axis::InitialPoint(points) => points
            .iter()
            .map(|p| ExampleOptions {
                y0: Some(p.clone()),
                t_final: None,
            })
            .collect(),
        Axis::TimeRange(ts) => ts
            .iter()
            .map(|t| ExampleOptions {
                y0: None,
                t_final: Some(*t),
            })
            .collect(),
    };
    if cells.is_empty() {
        return Err(CliError::Usage("no sweep values supplied".into()));
    }
    let out_dir = resolve_out_dir(&args.common.out_dir, &file);
    fs::create_dir_all(&out_dir)?;

    let start = Instant::now();
    let mut pivot = std::io::BufWriter::new(fs::File::create(out_dir.join("sweep.csv"))?);
    writeln!(pivot, "cell,value,epsilon_best,best_iteration,best_solution")?;
    let mut cell_rows = Vec::new();
    for (idx, opts) in cells.iter().enumerate() {
        let inst = load_example_with(args.common.example, opts)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let rt = resolve_train_config(
            &file,
            args.seed,
            args.iters,
            args.batch,
            None,
            None,
            args.hidden,
            Some(inst.t_final),
            None,
            None,
        );
        let cell_dir = out_dir.join(format!("cell_{idx}"));
        fs::create_dir_all(&cell_dir)?;
        let report = run_training(&inst, &rt, Some(&cell_dir))?;
        let value = match &axis {
            Axis::InitialPoint(points) => points[idx]
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(";"),
            Axis::TimeRange(ts) => format!("{}", ts[idx]),
        };
        let solution = report
            .best_solution
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            pivot,
            "{idx},{value},{},{},{solution}",
            report.epsilon_best, report.best_iteration
        )?;
        cell_rows.push(json!({
            "cell": idx,
            "value": value,
            "epsilon_best": json_f64(report.epsilon_best),
            "best_iteration": report.best_iteration,
            "best_solution": report.best_solution,
        }));
    }
    pivot.flush()?;

    let summary = json!({
        "command": "sweep",
        "example": args.common.example,
        "axis": args.axis,
        "cells": cell_rows,
        "wall_ms": start.elapsed().as_secs_f64() * 1e3,
        "outputs": {
            "sweep": out_dir.join("sweep.csv"),
            "summary": out_dir.join("summary.json"),
        },
    });
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

fn cmd_list() -> Result<serde_json::Value, CliError> {
    let entries: Vec<serde_json::Value> = all_examples()
        .map_err(|e| CliError::Usage(e.to_string()))?
        .iter()
        .map(|inst| {
            json!({
                "id": inst.id,
                "name": inst.name,
                "n": inst.dim,
                "epsilon_kind": inst.epsilon_kind_label(),
                "reference": inst.reference,
            })
        })
        .collect();
    Ok(serde_json::Value::Array(entries))
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap uses exit code 2 for usage errors and 0 for --help/--version
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::List => cmd_list(),
        Command::Train(args) => cmd_train(args),
        Command::Integrate(args) => cmd_integrate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("serializable summary")
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
