//! `splinetraj` command line: optimize, check, bench, sample.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splinetraj::driver::{run, write_trace, IterationTrace};
use splinetraj::frontend::bench::{aggregate, run_benchmark, status_label, to_csv, BenchConfig};
use splinetraj::io::{read_json, samples_csv, write_json, ProblemFile, TrajectoryFile};
use splinetraj::validator::{check, nearest_regions, sample, DEFAULT_TOL};
use splinetraj::Error;

#[derive(Parser)]
#[command(name = "splinetraj", version, about = "B-spline trajectory optimization through convex corridors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a problem file; writes the trajectory JSON and a sampled CSV.
    Optimize(OptimizeArgs),
    /// Measure violation ratios of a trajectory against a problem's corridor and limits.
    Check(CheckArgs),
    /// Run a batch of random-map scenarios and write one CSV row per run.
    Bench(BenchArgs),
    /// Sample a trajectory file to CSV.
    Sample(SampleArgs),
}

#[derive(Args)]
struct OptimizeArgs {
    problem: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Sampled CSV; defaults to the output path with a `.csv` extension.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Iteration trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Overrides the map seed of a random-map problem.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Sample step of the CSV (s).
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
}

#[derive(Args)]
struct CheckArgs {
    trajectory: PathBuf,
    problem: PathBuf,
    /// Sample step; defaults to duration / 5000.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// One JSON-lines trace per run is written here.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Overrides the base seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SampleArgs {
    trajectory: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Output CSV; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Command failure with its exit code.
enum Failure {
    /// Bad input, schema or I/O.
    Input(String),
    /// The optimizer found no feasible trajectory.
    Infeasible(String),
    /// `check` found violations.
    Violations,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Infeasible(_) => 2,
            Failure::Violations => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible(_)
            | Error::CorridorGap(_)
            | Error::AssignmentInfeasible(_)
            | Error::Unreachable
            | Error::OccupiedCell(_) => Failure::Infeasible(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Input(format!("{}: {e}", path.display()))
}

fn tracing_enabled() -> bool {
    std::env::var("STORM_TRACE").is_ok_and(|v| v == "1")
}

fn emit_trace(trace: &[IterationTrace]) {
    for t in trace {
        if let Ok(line) = serde_json::to_string(t) {
            eprintln!("{line}");
        }
    }
}

fn optimize(args: OptimizeArgs) -> Result<(), Failure> {
    let mut problem: ProblemFile = read_json(&args.problem).map_err(Failure::Input)?;
    if let (Some(seed), Some(map)) = (args.seed, problem.map.as_mut()) {
        map.seed = seed;
    }
    let opt = &mut problem.optimizer;
    if let Some(g) = args.gamma0 {
        opt.gamma0 = g;
    }
    if let Some(r) = args.rho {
        opt.rho = r;
    }
    if let Some(e) = args.epsilon {
        opt.epsilon = e;
    }
    let spec = problem.to_spec()?;
    let out = run(&spec)?;
    if tracing_enabled() {
        emit_trace(&out.trace);
    }
    if let Some(path) = &args.trace {
        write_trace(path, &out.trace).map_err(|e| io_err(path, e))?;
    }
    let file = TrajectoryFile::from_trajectory(&out.trajectory, Some(out.segment_regions.clone()));
    write_json(&args.out, &file).map_err(|e| io_err(&args.out, e))?;
    let samples_path = args.samples.unwrap_or_else(|| args.out.with_extension("csv"));
    let samples = sample(&out.trajectory, args.dt)?;
    std::fs::write(&samples_path, samples_csv(&samples)).map_err(|e| io_err(&samples_path, e))?;
    eprintln!(
        "{}: {} iterations, duration {:.4} s",
        status_label(out.termination),
        out.iterations,
        out.trajectory.duration()
    );
    Ok(())
}

fn check_cmd(args: CheckArgs) -> Result<(), Failure> {
    let file: TrajectoryFile = read_json(&args.trajectory).map_err(Failure::Input)?;
    let problem: ProblemFile = read_json(&args.problem).map_err(Failure::Input)?;
    let traj = file.to_trajectory().map_err(|e| Failure::Input(e.to_string()))?;
    let spec = problem.to_spec().map_err(|e| Failure::Input(e.to_string()))?;
    let regions = match &file.segment_regions {
        Some(r) => r.clone(),
        None => nearest_regions(&traj, &spec.corridor).map_err(|e| Failure::Input(e.to_string()))?,
    };
    let report = check(&traj, &spec.corridor, &regions, &spec.limits, args.dt, args.tol)
        .map_err(|e| Failure::Input(e.to_string()))?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Input(e.to_string()))?;
    println!("{text}");
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::Violations)
    }
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let mut config: BenchConfig = read_json(&args.config).map_err(Failure::Input)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let rows = run_benchmark(&config).map_err(|e| Failure::Input(e.to_string()))?;
    std::fs::write(&args.out, to_csv(&rows)).map_err(|e| io_err(&args.out, e))?;
    if let Some(dir) = &args.trace_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for r in &rows {
            let name = format!(
                "trial{:04}_gamma{}_rho{}_{}.jsonl",
                r.trial,
                r.gamma0,
                r.rho,
                if r.guidance { "guided" } else { "unguided" }
            );
            let path = dir.join(name);
            write_trace(&path, &r.trace).map_err(|e| io_err(&path, e))?;
        }
    }
    for a in aggregate(&rows) {
        eprintln!(
            "gamma0 {} rho {} guidance {}: {}/{} solved, {} converged, duration {:.4}, energy {:.4}, iterations {:.2}, median {:.1} ms",
            a.gamma0,
            a.rho,
            a.guidance,
            a.solved,
            a.runs,
            a.converged,
            a.mean_duration,
            a.mean_energy,
            a.mean_iterations,
            a.median_wall_ms
        );
    }
    Ok(())
}

fn sample_cmd(args: SampleArgs) -> Result<(), Failure> {
    let file: TrajectoryFile = read_json(&args.trajectory).map_err(Failure::Input)?;
    let traj = file.to_trajectory().map_err(|e| Failure::Input(e.to_string()))?;
    let samples = sample(&traj, args.dt).map_err(|e| Failure::Input(e.to_string()))?;
    let text = samples_csv(&samples);
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_err(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize(a) => optimize(a),
        Command::Check(a) => check_cmd(a),
        Command::Bench(a) => bench(a),
        Command::Sample(a) => sample_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Input(m) => eprintln!("error: {m}"),
                Failure::Infeasible(m) => eprintln!("infeasible: {m}"),
                Failure::Violations => eprintln!("violations found"),
            }
            ExitCode::from(f.code())
        }
    }
}
