use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use robust_alloc::{
    centralized_solve, certify, demo_problem, lyapunov_series, oracle_to_json, problem_from_json, problem_to_json,
    state_from_json, state_to_json, validate_problem, CertificationReportF64, Dynamics, IntegratorConfig,
    ProblemF64, ReferenceKind, Severity, FORMAT_VERSION,
};

const BUILTIN_DEMO: &str = "builtin:paper-demo";

#[derive(Parser)]
#[command(name = "robust-alloc", version, about = "Distributed robust resource allocation solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the distributed dynamics and write trajectory artifacts.
    Run(RunArgs),
    /// Certify a dumped state against the optimality conditions.
    Check(CheckArgs),
    /// Solve the problem centrally.
    Oracle(OracleArgs),
    /// Print the built-in demo instance as problem JSON.
    DumpDemo,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Problem JSON path or `builtin:paper-demo`.
    #[arg(long)]
    problem: String,
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    dt: f64,
    #[arg(long, default_value_t = 300.0, value_parser = positive)]
    t_end: f64,
    #[arg(long, default_value_t = 10)]
    record_every: usize,
    #[arg(long, value_parser = nonnegative)]
    early_stop_tol: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write final_state.json.
    #[arg(long)]
    dump_state: bool,
}

#[derive(clap::Args)]
struct CheckArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    problem: String,
    #[arg(long, default_value_t = 1e-2, value_parser = positive)]
    tol: f64,
}

#[derive(clap::Args)]
struct OracleArgs {
    #[arg(long)]
    problem: String,
    #[arg(long, default_value_t = 1e-6, value_parser = positive)]
    tol: f64,
    #[arg(long, default_value_t = 200_000)]
    max_iter: usize,
    /// Directory for oracle.json and oracle_state.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

fn nonnegative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a nonnegative number, got {s}"))
    }
}

fn load_problem(source: &str) -> Result<ProblemF64> {
    let problem = if source == BUILTIN_DEMO {
        demo_problem()
    } else {
        let text = fs::read_to_string(source).with_context(|| format!("reading problem {source}"))?;
        problem_from_json(&text).with_context(|| format!("parsing problem {source}"))?
    };
    let report = validate_problem(&problem);
    for finding in &report.findings {
        if finding.severity != Severity::Pass {
            eprintln!("{finding}");
        }
    }
    if !report.passed() {
        bail!("problem {source} failed validation");
    }
    Ok(problem)
}

#[derive(Serialize)]
struct BlockNorm {
    block: &'static str,
    sup: f64,
}

#[derive(Serialize)]
struct RunSummary {
    format_version: u32,
    problem: String,
    dt: f64,
    t_end: f64,
    steps: usize,
    final_time: f64,
    stopped_early: bool,
    wall_time_s: f64,
    final_x: Vec<f64>,
    lyapunov_reference: ReferenceKind,
    block_sup_norms: Vec<BlockNorm>,
    certification: CertificationReportF64,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let problem = load_problem(&args.problem)?;
    let config = IntegratorConfig {
        dt: args.dt,
        t_end: args.t_end,
        record_every: args.record_every,
        early_stop_tol: args.early_stop_tol,
    };
    config.validate()?;
    let started = Instant::now();
    let dynamics = Dynamics::new(&problem)?;
    let trajectory = dynamics
        .simulate(&robust_alloc::default_init(&problem), &config)
        .context("integration failed")?;
    let wall = started.elapsed().as_secs_f64();

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let series = lyapunov_series(&trajectory, None);
    let csv_path = args.out.join("trajectory.csv");
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    trajectory.write_csv(
        problem.n(),
        problem.m(),
        problem.q(),
        Some(&series.values),
        std::io::BufWriter::new(file),
    )?;

    let final_state = trajectory.final_state();
    let summary = RunSummary {
        format_version: FORMAT_VERSION,
        problem: args.problem.clone(),
        dt: args.dt,
        t_end: args.t_end,
        steps: trajectory.steps,
        final_time: trajectory.final_time(),
        stopped_early: trajectory.stopped_early,
        wall_time_s: wall,
        final_x: final_state.x.clone(),
        lyapunov_reference: series.reference,
        block_sup_norms: trajectory
            .block_sup_norms()
            .into_iter()
            .map(|(b, sup)| BlockNorm { block: b.name(), sup })
            .collect(),
        certification: certify(&problem, final_state)?,
    };
    write(&args.out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    if args.dump_state {
        let text = state_to_json(&problem, final_state, Some(trajectory.final_time()))?;
        write(&args.out.join("final_state.json"), &text)?;
    }
    println!(
        "t = {} after {} steps ({wall:.3} s); final x = {:?}",
        trajectory.final_time(),
        trajectory.steps,
        final_state.x
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode> {
    let problem = load_problem(&args.problem)?;
    let text = fs::read_to_string(&args.state).with_context(|| format!("reading state {}", args.state.display()))?;
    let state = state_from_json(&problem, &text).with_context(|| format!("loading state {}", args.state.display()))?;
    let report = certify(&problem, &state)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!();
    print!("{report}");
    let ok = report.passes(args.tol);
    println!("verdict (tol {}): {}", args.tol, if ok { "PASS" } else { "FAIL" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_oracle(args: OracleArgs) -> Result<ExitCode> {
    let problem = load_problem(&args.problem)?;
    let solution = centralized_solve(&problem, args.tol, args.max_iter).context("oracle failed")?;
    let text = oracle_to_json(&solution)?;
    if let Some(dir) = args.out {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("oracle.json"), &text)?;
        let state = solution.to_equilibrium_state(&problem)?;
        write(&dir.join("oracle_state.json"), &state_to_json(&problem, &state, None)?)?;
    }
    println!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Check(args) => cmd_check(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::DumpDemo => {
            println!("{}", problem_to_json(&demo_problem::<f64>())?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
