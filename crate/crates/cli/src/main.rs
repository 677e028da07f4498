use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shapvar_cli::commands;
use shapvar_cli::{weld, CliError, RunConfig};

/// Shapley-effect sensitivity analysis for models with dependent inputs.
#[derive(Parser)]
#[command(name = "shapvar", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `estimator.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.prefix`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate Shapley effects and Sobol' indices.
    Analyze,
    /// Sweep `no`, `m` or a correlation and tabulate the estimates.
    Converge,
    /// Closed-form indices for linear Gaussian and interaction models.
    Analytic,
    /// Fit and save a kriging surrogate of the configured model.
    FitSurrogate,
    /// Compare the output variance with and without some inputs fixed.
    FixCheck,
    /// Built-in demonstrations.
    Demo {
        #[command(subcommand)]
        which: Demo,
    },
}

#[derive(Subcommand)]
enum Demo {
    /// Eleven-input weld inspection workflow on a synthetic response.
    Weld,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.command, &cli.config) {
        (Command::Demo { which: Demo::Weld }, None) => weld::demo_config(0),
        (_, Some(path)) => RunConfig::load(path)?,
        (_, None) => return Err(CliError::Config("--config is required".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.estimator.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.prefix = out.clone();
    }
    cfg.run = None;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    match cli.command {
        Command::Analyze => {
            let a = commands::analyze(&cfg)?;
            if let Some(q2) = a.surrogate.as_ref().and_then(|s| s.q2) {
                println!("surrogate Q2 = {q2:.4}");
            }
            for (name, (sh, ci)) in cfg.input_names().iter().zip(a.result.shapley.iter().zip(&a.result.shapley_ci)) {
                println!("{name:>8}  Sh = {sh:.4} +/- {ci:.4}");
            }
            println!("{} model evaluations; wrote {}", a.result.evaluations, a.indices_path.display());
        }
        Command::Converge => {
            let s = commands::converge(&cfg)?;
            println!("{} sweep points; wrote {}", s.points.len(), s.path.display());
        }
        Command::Analytic => {
            let (_, path) = commands::analytic(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::FitSurrogate => {
            let fit = commands::fit_surrogate(&cfg)?;
            match fit.q2 {
                Some(q2) => println!("Q2 = {q2:.4}"),
                None => println!("no test sample; Q2 not computed"),
            }
            println!("lengthscales {:?}; wrote {}", fit.model.lengthscales(), fit.path.display());
        }
        Command::FixCheck => {
            let (c, path) = commands::fix_check(&cfg)?;
            println!(
                "Var(Y) = {:.6e}, with inputs fixed {:.6e}, relative decrease {:.4}; wrote {}",
                c.variance_all,
                c.variance_fixed,
                c.relative_decrease,
                path.display()
            );
        }
        Command::Demo { which: Demo::Weld } => {
            let r = commands::demo_weld(&cfg)?;
            println!("synthetic response: values are illustrative, not physical");
            if let Some(q2) = r.q2 {
                println!("surrogate Q2 = {q2:.4}");
            }
            for (name, (sh, ci)) in cfg.input_names().iter().zip(r.result.shapley.iter().zip(&r.result.shapley_ci)) {
                println!("{name:>5}  Sh = {sh:.4} +/- {ci:.4}");
            }
            println!("{} surrogate evaluations", r.surrogate_evaluations);
            println!(
                "fixing C13, C33, C55: variance decrease {:.4} vs Shapley sum {:.4}",
                r.fix.relative_decrease, r.fixed_shapley_sum
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => Err(CliError::Runtime(e.into())),
        },
        None => run(&cli),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let CliError::Runtime(inner) = &e {
                for cause in inner.chain().skip(1) {
                    eprintln!("  caused by: {cause}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
