use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use ogdlds_core::certificate::{lemma_bound_check, proof_inequality_diagnostics};
use ogdlds_core::sim::{
    assumption_report, experiment_pathlength, experiment_tracking, write_json, write_sweep_csv,
    write_trajectory_csv, RunSummary,
};
use ogdlds_core::system::DEFAULT_RANK_TOL;
use ogdlds_core::{run_closed_loop, Error, RunConfig, RunRecord};

/// Online gradient descent control of linear systems: simulations,
/// experiments and regret certificates.
#[derive(Parser, Debug)]
#[command(name = "ogdlds", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one closed-loop simulation from a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Refuse to run when step sizes or assumptions fail.
        #[arg(long)]
        strict: bool,
    },
    /// Reproduce one of the simulation-study experiments.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Run a config and every diagnostic check, then print the certificate.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Report controllability, assumption and step-size checks only.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum Experiment {
    /// Setpoint tracking on the reference system, T = 30.
    Tracking(TrackingArgs),
    /// Total cost and regret bound against path length.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct TrackingArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value_t = 1000)]
    runs: usize,
    #[arg(long, default_value_t = 500)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Failures that are reported, not propagated as errors.
#[derive(Debug)]
struct CheckFailed(&'static str, u8);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(CheckFailed(_, code)) = err.downcast_ref() {
        return *code;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_assumption() => 2,
        Some(e) if e.is_numerical() => 3,
        _ => 1,
    }
}

fn print_run(rec: &RunRecord) {
    println!("horizon            {}", rec.horizon());
    println!("mu                 {}", rec.mu);
    println!("total cost         {:.6e}", rec.total_cost);
    println!("optimal cost       {:.6e}", rec.optimal_cost);
    println!("regret             {:.6e}", rec.regret);
    println!("comparator regret  {:.6e}", rec.comparator_regret);
    println!("path length        {:.6e}", rec.path.path_length);
    match &rec.bound {
        Some(b) => println!(
            "bound              {:.6e} ({})",
            b.bound,
            if b.passed { "holds" } else { "VIOLATED" }
        ),
        None => println!("bound              unavailable"),
    }
}

fn write_run(rec: &RunRecord, out: &Path, stem: &str) -> Result<()> {
    let csv = out.join(format!("{stem}.csv"));
    write_trajectory_csv(rec, &csv)?;
    write_json(&RunSummary::from_record(rec), out.join(format!("{stem}_summary.json")))?;
    info!("wrote {}", csv.display());
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        config = config.with_seed(seed);
    }
    Ok(config)
}

fn simulate(config: &Path, seed: Option<u64>, out: &Path, strict: bool) -> Result<()> {
    let mut config = load_config(config, seed)?;
    config.strict |= strict;
    let rec = run_closed_loop(&config)?;
    if !rec.assumptions.passed() {
        warn!("assumptions fail:\n{}", rec.assumptions);
    }
    write_run(&rec, out, "trajectory")?;
    print_run(&rec);
    if rec.bound.as_ref().is_some_and(|b| !b.passed) {
        return Err(CheckFailed("regret bound violated", 1).into());
    }
    Ok(())
}

fn tracking(args: &TrackingArgs) -> Result<()> {
    let rec = experiment_tracking(args.seed)?;
    write_run(&rec, &args.out, "tracking")?;
    print_run(&rec);
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let rec = experiment_pathlength(args.runs, args.horizon, args.seed)?;
    let csv = args.out.join("sweep.csv");
    write_sweep_csv(&rec.rows, &csv)?;
    write_json(&rec.fit, args.out.join("sweep_fit.json"))?;
    info!("wrote {}", csv.display());
    let ok = rec.rows.iter().filter(|r| r.bound_ok).count();
    println!("runs               {}", rec.rows.len());
    println!("horizon            {}", rec.horizon);
    println!("bound holds        {ok}/{}", rec.rows.len());
    if let Some(fit) = rec.fit {
        println!(
            "fit                total cost = {:.6} * path length + {:.6} (R^2 = {:.4})",
            fit.slope, fit.intercept, fit.r_squared
        );
    }
    if !rec.all_bounds_ok() {
        return Err(CheckFailed("regret bound violated on some runs", 1).into());
    }
    Ok(())
}

fn verify(config: &Path, seed: u64) -> Result<()> {
    let mut config = load_config(config, Some(seed))?;
    config.record_predictions = true;
    config.strict = true;
    let rec = run_closed_loop(&config)?;
    let sys = config.linear_system()?;
    let ctrb = sys.build_controllability(DEFAULT_RANK_TOL)?;
    let cert = rec
        .certificate
        .as_ref()
        .expect("strict runs always carry a certificate");

    let mut ok = true;
    let mut line = |name: &str, value: f64, tol: f64| {
        let pass = value <= tol;
        ok &= pass;
        println!(
            "  [{}] {name}: {value:.3e} (tol {tol:e})",
            if pass { "ok" } else { "FAIL" }
        );
    };
    println!("residuals");
    line("dynamics", rec.trace.dynamics_residual(&sys), 1e-9);
    line("prediction recursion", rec.trace.recursion_residual(&sys, &ctrb)?, 1e-9);
    line("stacked closed loop", rec.trace.stacked_identity_residual(&ctrb)?, 1e-9);
    let costs = config.costs(&config.schedule(&sys)?)?;
    line(
        "state correction feasibility",
        rec.trace.feasibility_residual(&ctrb, costs.as_slice(), config.gamma_x)?,
        1e-9,
    );

    let lemma = lemma_bound_check(&rec, cert)?;
    let chains = proof_inequality_diagnostics(&rec, cert)?;
    println!("inequalities\n{lemma}{chains}");
    ok &= lemma.passed() && chains.passed();
    let bound = rec.bound.as_ref().expect("certified runs carry a bound");
    println!(
        "bound\n  [{}] comparator regret {:.6e} <= {:.6e}",
        if bound.passed { "ok" } else { "FAIL" },
        bound.comparator_regret,
        bound.bound
    );
    ok &= bound.passed;
    println!("certificate\n{}", serde_json::to_string_pretty(cert)?);
    if ok {
        Ok(())
    } else {
        Err(CheckFailed("diagnostic checks failed", 1).into())
    }
}

fn check(config: &Path) -> Result<()> {
    let config = load_config(config, None)?;
    config.validate()?;
    let sys = config.linear_system()?;
    let ctrb = sys.build_controllability(DEFAULT_RANK_TOL)?;
    let schedule = config.schedule(&sys)?;
    let moduli = config.costs(&schedule)?.moduli();
    println!("controllability index {} (n = {}, m = {})", ctrb.mu, sys.n(), sys.m());
    println!("||A|| = {:.6}", ctrb.a_norm);
    let report = assumption_report(&sys, &ctrb, &moduli, config.gamma_v, config.gamma_x, &schedule);
    print!("{report}");
    if report.passed() {
        println!("all conditions hold");
        Ok(())
    } else {
        Err(CheckFailed("conditions fail", 2).into())
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            strict,
        } => simulate(config, *seed, out, *strict),
        Command::Experiment(Experiment::Tracking(args)) => tracking(args),
        Command::Experiment(Experiment::Sweep(args)) => sweep(args),
        Command::Verify { config, seed } => verify(config, *seed),
        Command::Check { config } => check(config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
