use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use effmass_core::config::ExperimentConfig;
use effmass_core::pipeline::{self, PipelineError, Run, Subcommand};
use effmass_core::report::write_outputs;

#[derive(Parser)]
#[command(name = "polaron-effmass", version, about = "Dynamic versus static effective mass on truncated particle-field models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: run.output_dir, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: run.threads, else all cores).
    #[arg(long, env = "POLARON_EFFMASS_THREADS")]
    threads: Option<usize>,
    /// Override solver.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Dispersion curve, mass fit, certificate and ceilings.
    Dispersion(Common),
    /// Coupled ground energies and the extrapolated static mass.
    Staticmass(Common),
    /// Full two-sided bound check and mass comparison.
    Sandwich(Common),
    /// Frame, solver and particle-only cross-checks.
    OracleCheck(Common),
    /// Headline numbers under truncation changes.
    Converge(Common),
    /// Schema and physics-range diagnostics; writes nothing.
    Validate(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = ExperimentConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.solver.seed = seed;
    }
    let threads = common.threads.or(cfg.run.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(effmass_core::config::ConfigError::Range { key: "threads".into(), message: "must be at least 1".into() }.into());
        }
        // a second call fails harmlessly when the pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(cfg)
}

fn summary(run: &Run) {
    if let Some(d) = &run.dispersion {
        println!("E0 = {:.12}  P_c = {:.4}  M_dyn = {:.10}", d.curve.e0, d.p_c, d.fit.mass);
    }
    if let Some(s) = &run.static_stage {
        let ex = &s.result.extrapolation;
        match s.result.mass {
            Some(m) => println!("e0 = {:.12} +- {:.2e}  M_stat = {m:.10}", ex.e0, ex.e0_err),
            None => println!("e0 = {:.12} +- {:.2e}  M_stat unavailable (fit rms {:.2e})", ex.e0, ex.e0_err, ex.rms),
        }
    }
    if let Some(sw) = &run.sandwich {
        for r in &sw.rows {
            println!(
                "lambda {:<6} L2 {:.10} L1 {:.10} e {:.10} U* {:.10}",
                r.lambda, r.l2, r.l1, r.e, r.u_star
            );
        }
        if let Some(rel) = sw.mass_rel_diff {
            println!("|M_dyn - M_stat| / M_dyn = {rel:.3e}");
        }
    }
    if let Some(rows) = &run.converge {
        for r in rows {
            println!("{:<8} n_max {} dk {} -> {}", r.variant, r.n_max, r.dk, if r.pass() { "PASS" } else { "FAIL" });
        }
    }
    for (name, pass) in run.verdicts() {
        println!("{name}: {}", if pass { "PASS" } else { "FAIL" });
    }
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
}

fn execute(sub: Subcommand, common: &Common) -> Result<bool, PipelineError> {
    let cfg = load(common)?;
    let out: PathBuf = common
        .out
        .clone()
        .or_else(|| cfg.run.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("out").to_path_buf());
    let run = pipeline::run(sub, &cfg)?;
    summary(&run);
    write_outputs(&run, &out)?;
    println!("{}: {} (outputs in {})", sub.name(), if run.pass() { "PASS" } else { "FAIL" }, out.display());
    Ok(run.pass())
}

fn validate(common: &Common) -> Result<bool, PipelineError> {
    let cfg = load(common)?;
    let v = pipeline::validate(&cfg)?;
    println!("config OK: {} modes, Fock dimension {}, estimated P_c = {:.4}", v.mode_count, v.fock_dim, v.p_c);
    for w in &v.warnings {
        println!("warning: {w}");
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Dispersion(c) => execute(Subcommand::Dispersion, c),
        Command::Staticmass(c) => execute(Subcommand::StaticMass, c),
        Command::Sandwich(c) => execute(Subcommand::Sandwich, c),
        Command::OracleCheck(c) => execute(Subcommand::OracleCheck, c),
        Command::Converge(c) => execute(Subcommand::Converge, c),
        Command::Validate(c) => validate(c),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
