//! `btc-kur`: mean-field integration, quantum-jump ensembles, activity bounds
//! and the KUR experiments from the command line.
//!
//! Exit codes: 0 success, 1 numerical or I/O failure, 2 invalid input,
//! 3 the run finished but an inequality check failed.

mod config;
mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use kur_core::harness::{aligned_step, AUTO_JUMP_PROBABILITY};
use kur_core::trajectories::max_stable_dt;
use kur_core::{
    check_inequality_chain, compute_bounds, integrate_mean_field, run_ensemble, run_size_sweep,
    run_time_sweep, run_verification, spin_coherent_state, BoundsRequest, ExactGrid,
    ExperimentConfig, KurError, LiouvillianContext, Magnetization, ModelParams, Quantities,
};

use manifest::{tag, CellSeed, OutputDir};

const OUT_DIR_ENV: &str = "BTC_KUR_OUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "btc-kur",
    version,
    about = "Kinetic uncertainty relation simulator for the boundary time crystal"
)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the mean-field equations.
    Meanfield(MeanFieldArgs),
    /// Run a quantum-jump ensemble and report jump-count statistics.
    Trajectories(TrajectoryArgs),
    /// Mean-field and exact activities and their bounds.
    Bounds(BoundsArgs),
    /// Run a KUR experiment from a preset or config file.
    #[command(subcommand)]
    Kur(KurCommand),
}

#[derive(Args, Debug, Clone, Copy)]
struct InitialArgs {
    /// Polar angle of the initial coherent state, from +z.
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Azimuth of the initial coherent state.
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
}

#[derive(Args, Debug)]
struct MeanFieldArgs {
    #[arg(long)]
    omega: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Initial magnetization as x,y,z. Overrides --theta/--phi.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    m0: Option<Vec<f64>>,
    #[command(flatten)]
    initial: InitialArgs,
    /// Also write the fundamental matrix.
    #[arg(long)]
    fundamental: bool,
    /// Output CSV (stdout when absent).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrajectoryArgs {
    #[arg(long = "N", alias = "n-spins")]
    n_spins: usize,
    #[arg(long)]
    omega: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long)]
    tau: f64,
    /// Checkpoint spacing; tau must be a multiple.
    #[arg(long, default_value_t = 0.1)]
    spacing: f64,
    #[arg(long, default_value_t = 1000)]
    n_traj: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Time step (chosen from the jump-probability target when absent).
    #[arg(long)]
    dt: Option<f64>,
    #[command(flatten)]
    initial: InitialArgs,
    /// Write per-trajectory counts instead of the summary.
    #[arg(long)]
    raw: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Quantity {
    J0,
    Jub,
    Bmb,
    BmbUb,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[arg(long = "N", alias = "n-spins")]
    n_spins: usize,
    #[arg(long)]
    omega: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long)]
    tau: f64,
    /// Grid spacing for mean-field-only output.
    #[arg(long, default_value_t = 0.05)]
    spacing: f64,
    /// Restrict to these quantities (default: all).
    #[arg(long, value_enum, value_delimiter = ',')]
    only: Vec<Quantity>,
    /// RK4 step of the exact evolution.
    #[arg(long, default_value_t = 2e-3)]
    exact_dt: f64,
    /// Exact steps per reported grid node.
    #[arg(long, default_value_t = 25)]
    exact_stride: usize,
    #[arg(long, default_value_t = 1e-3)]
    mean_field_dt: f64,
    #[command(flatten)]
    initial: InitialArgs,
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Also write run metadata as JSON.
    #[arg(long)]
    metadata: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum KurCommand {
    /// Fluctuations and bounds versus time.
    TimeSweep(ExperimentArgs),
    /// Fluctuations and bounds versus N.
    SizeSweep(ExperimentArgs),
    /// Exact activities against the mean-field bounds.
    Verify(ExperimentArgs),
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Built-in preset: fig2, fig3 or figS1.
    #[arg(long)]
    preset: Option<String>,
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set n_traj=200 --set initial.phi=0.5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long, env = OUT_DIR_ENV, default_value = "btc-kur-out")]
    out_dir: PathBuf,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
    /// Do not turn failed inequality checks into exit code 3.
    #[arg(long)]
    no_check: bool,
}

enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
    Check(String),
}

impl From<KurError> for Failure {
    fn from(e: KurError) -> Self {
        if e.is_numerical() || matches!(e, KurError::Io(_)) {
            Failure::Runtime(e.into())
        } else {
            Failure::Input(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<KurError>() {
            Ok(k) => k.into(),
            Err(e) => Failure::Runtime(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Meanfield(a) => meanfield(a),
        Command::Trajectories(a) => trajectories(a),
        Command::Bounds(a) => bounds(a),
        Command::Kur(k) => kur(k),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Outcome {
    match out {
        Some(path) => fs::write(path, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn meanfield(a: MeanFieldArgs) -> Outcome {
    let m0 = match &a.m0 {
        Some(v) if v.len() == 3 => Magnetization::new(v[0], v[1], v[2])?,
        Some(_) => return Err(Failure::Input(anyhow!("--m0 takes three components x,y,z"))),
        None => Magnetization::from_angles(a.initial.theta, a.initial.phi),
    };
    let p = ModelParams {
        omega: a.omega,
        kappa: a.kappa,
        n_spins: 1,
        tau: a.tau,
        dt: a.dt,
    };
    let mut traj = integrate_mean_field(m0, &p)?;
    if a.fundamental {
        traj = kur_core::fundamental_propagator(&traj, &p);
    }
    let bytes = traj.write_csv(Vec::new(), a.fundamental)?;
    emit(a.out.as_deref(), &bytes)
}

fn trajectories(a: TrajectoryArgs) -> Outcome {
    let ctx = LiouvillianContext::new(ModelParams {
        omega: a.omega,
        kappa: a.kappa,
        n_spins: a.n_spins,
        tau: a.tau,
        dt: a.dt.unwrap_or(1e-3),
    })?;
    let intervals = kur_core::activity::grid_intervals(a.tau, a.spacing)?;
    let checkpoints: Vec<f64> = (1..=intervals).map(|k| k as f64 * a.spacing).collect();
    let dt = match a.dt {
        Some(dt) => dt,
        None => aligned_step(a.spacing, max_stable_dt(&ctx, AUTO_JUMP_PROBABILITY)),
    };
    let psi = spin_coherent_state(ctx.space(), a.initial.theta, a.initial.phi);
    let stats = run_ensemble(&psi, &ctx, a.tau, dt, &checkpoints, a.n_traj, a.seed, a.raw)?;
    let bytes = if a.raw {
        stats.write_raw_csv(Vec::new())?
    } else {
        stats.write_summary_csv(Vec::new())?
    };
    emit(a.out.as_deref(), &bytes)
}

fn bounds(a: BoundsArgs) -> Outcome {
    let which = if a.only.is_empty() {
        Quantities::all()
    } else {
        Quantities {
            j0: a.only.contains(&Quantity::J0),
            jub: a.only.contains(&Quantity::Jub),
            bmb: a.only.contains(&Quantity::Bmb),
            bmb_ub: a.only.contains(&Quantity::BmbUb),
        }
    };
    let req = BoundsRequest {
        n_spins: a.n_spins,
        omega: a.omega,
        kappa: a.kappa,
        theta_bloch: a.initial.theta,
        phi: a.initial.phi,
        tau: a.tau,
        spacing: a.spacing,
        mean_field_dt: a.mean_field_dt,
        exact: which.needs_exact().then_some(ExactGrid {
            dt: a.exact_dt,
            stride: a.exact_stride,
        }),
    };
    let report = compute_bounds(&req, which)?;
    if let Some(path) = &a.metadata {
        report.write_metadata_json(fs::File::create(path)?)?;
    }
    let bytes = report.write_csv(Vec::new())?;
    emit(a.out.as_deref(), &bytes)
}

fn kur(cmd: KurCommand) -> Outcome {
    let (kind, args) = match cmd {
        KurCommand::TimeSweep(a) => ("time_sweep", a),
        KurCommand::SizeSweep(a) => ("size_sweep", a),
        KurCommand::Verify(a) => ("verification", a),
    };
    let mut table = config::load_table(args.preset.as_deref(), args.config.as_deref())
        .map_err(Failure::Input)?;
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("master_seed={seed}"));
    }
    if let Some(n) = args.n_traj {
        overrides.push(format!("n_traj={n}"));
    }
    config::apply_overrides(&mut table, &overrides).map_err(Failure::Input)?;
    let cfg = config::into_config(table, kind).map_err(Failure::Input)?;
    let echo = serde_json::to_value(&cfg).map_err(|e| Failure::Runtime(e.into()))?;
    if args.dry_run {
        println!(
            "{}",
            serde_json::to_string_pretty(&echo).map_err(|e| Failure::Runtime(e.into()))?
        );
        println!("output directory: {}", args.out_dir.display());
        return Ok(());
    }

    let mut out = OutputDir::create(&args.out_dir)?;
    let mut seeds = Vec::new();
    let mut problems = Vec::new();
    match &cfg {
        ExperimentConfig::TimeSweep(c) => {
            let mut chains = Vec::new();
            for cell in run_time_sweep(c)? {
                let name = format!("N{}_omega{}", cell.n_spins, tag(cell.omega));
                out.write(&format!("kur_{name}.csv"), &cell.write_csv(Vec::new())?)?;
                out.write(
                    &format!("bounds_{name}.csv"),
                    &cell.bounds.write_csv(Vec::new())?,
                )?;
                out.write(
                    &format!("counts_{name}.csv"),
                    &cell.ensemble.write_raw_csv(Vec::new())?,
                )?;
                let report = check_inequality_chain(&cell.rows, c.kappa, c.floor);
                if !report.passed() {
                    problems.push(format!(
                        "omega={}: {} chain violations",
                        cell.omega,
                        report.violations.len()
                    ));
                }
                seeds.push(CellSeed {
                    n_spins: cell.n_spins,
                    omega: cell.omega,
                    seed: cell.master_seed,
                });
                chains.push(serde_json::json!({ "omega": cell.omega, "report": report }));
            }
            out.write("chain.json", &to_json(&chains)?)?;
        }
        ExperimentConfig::SizeSweep(c) => {
            let sweep = run_size_sweep(c)?;
            out.write("size_sweep.csv", &sweep.write_csv(Vec::new())?)?;
            out.write("slopes.csv", &sweep.write_slopes_csv(Vec::new())?)?;
            for row in &sweep.rows {
                seeds.push(CellSeed {
                    n_spins: row.n_spins,
                    omega: row.omega,
                    seed: row.master_seed,
                });
            }
            for omega in &c.omegas {
                let rows: Vec<_> = sweep
                    .rows
                    .iter()
                    .filter(|r| r.omega == *omega)
                    .map(|r| r.kur)
                    .collect();
                let report = check_inequality_chain(&rows, c.kappa, 0.0);
                if !report.passed() {
                    problems.push(format!(
                        "omega={omega}: {} chain violations",
                        report.violations.len()
                    ));
                }
            }
        }
        ExperimentConfig::Verification(c) => {
            let mut deviation = String::from("omega,tau,relative_deviation\n");
            for cell in run_verification(c)? {
                let name = format!("N{}_omega{}", c.n_spins, tag(cell.omega));
                out.write(
                    &format!("bounds_{name}.csv"),
                    &cell.report.write_csv(Vec::new())?,
                )?;
                let mut meta = Vec::new();
                cell.report.write_metadata_json(&mut meta)?;
                out.write(&format!("bounds_{name}.json"), &meta)?;
                for (t, d) in &cell.deviation {
                    deviation.push_str(&format!(
                        "{},{},{}\n",
                        kur_core::io::fmt_f64(cell.omega),
                        kur_core::io::fmt_f64(*t),
                        kur_core::io::fmt_f64(*d)
                    ));
                }
                let v = cell.report.ordering_violations();
                if !v.is_empty() {
                    problems.push(format!(
                        "omega={}: {} ({} total)",
                        cell.omega,
                        v[0],
                        v.len()
                    ));
                }
            }
            out.write("deviation.csv", deviation.as_bytes())?;
        }
    }
    let manifest = out.finish(echo, seeds, rayon::current_num_threads())?;
    eprintln!("wrote {}", manifest.display());
    if problems.is_empty() || args.no_check {
        for p in &problems {
            eprintln!("warning: {p}");
        }
        Ok(())
    } else {
        Err(Failure::Check(problems.join("; ")))
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> std::result::Result<Vec<u8>, Failure> {
    serde_json::to_vec_pretty(v).map_err(|e| Failure::Runtime(anyhow!(e)))
}
