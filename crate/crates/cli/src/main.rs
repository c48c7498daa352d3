use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isoreal_cli::scenario::PROFILE_ENV;
use isoreal_cli::{
    load, run_scenario, runner, Tolerances, EXIT_INVALID, EXIT_OK, EXIT_TASK_FAILED,
};

#[derive(Parser)]
#[command(
    name = "isoreal",
    version,
    about = "Isotropic conductivity reconstruction from scenario files"
)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for summary.txt and exports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Tolerance profile: default, strict or fast.
    #[arg(long, global = true, env = PROFILE_ENV)]
    profile: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task of a scenario.
    Run { scenario: PathBuf },
    /// Trace one flow line of a scenario field.
    Trace {
        scenario: PathBuf,
        /// Start point, comma separated.
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            required = true
        )]
        point: Vec<f64>,
        /// Flow time; omit to run to the zero level set.
        #[arg(long)]
        tmax: Option<f64>,
        /// Field name, needed when the scenario declares several.
        #[arg(long)]
        field: Option<String>,
    },
    /// Parse and validate a scenario without running it.
    Check { scenario: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("cannot start {n} threads: {e}");
        }
    }
    let name = cli.profile.as_deref().unwrap_or("default");
    let Some(defaults) = Tolerances::profile(name) else {
        eprintln!("invalid scenario: {name:?} is not a tolerance profile (default, strict, fast)");
        return ExitCode::from(EXIT_INVALID);
    };
    let path = match &cli.command {
        Command::Run { scenario }
        | Command::Trace { scenario, .. }
        | Command::Check { scenario } => scenario,
    };
    let scenario = match load(path, defaults) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code());
        }
    };
    match cli.command {
        Command::Check { .. } => {
            println!(
                "{}: {} field(s), {} task(s), profile {}",
                scenario.name,
                scenario.fields.len(),
                scenario.tasks.len(),
                scenario.tolerances.profile
            );
            ExitCode::from(EXIT_OK)
        }
        Command::Run { .. } => {
            let outcome = run_scenario(&scenario, &cli.out);
            print!("{}", outcome.summary);
            ExitCode::from(if outcome.ok {
                EXIT_OK
            } else {
                EXIT_TASK_FAILED
            })
        }
        Command::Trace {
            point, tmax, field, ..
        } => {
            let name = match field {
                Some(f) => f,
                None if scenario.fields.len() == 1 => {
                    scenario.fields.keys().next().cloned().unwrap_or_default()
                }
                None => {
                    eprintln!("invalid scenario: several fields declared, pass --field");
                    return ExitCode::from(EXIT_INVALID);
                }
            };
            let Some(model) = scenario.fields.get(&name) else {
                eprintln!("invalid scenario: no field named {name:?}");
                return ExitCode::from(EXIT_INVALID);
            };
            let u = model.potential();
            if point.len() != u.dim() {
                eprintln!(
                    "invalid scenario: --point has {} coordinates, field {name} has dimension {}",
                    point.len(),
                    u.dim()
                );
                return ExitCode::from(EXIT_INVALID);
            }
            let t = &scenario.tolerances;
            let opts = isoreal::FlowOptions {
                tol_ode: t.tol_ode,
                tol_root: t.tol_root,
                ..isoreal::FlowOptions::default()
            };
            match runner::trace(&u, &point, tmax, &opts) {
                Ok(tr) => {
                    print!("{}", tr.to_table());
                    ExitCode::from(EXIT_OK)
                }
                Err(e) => {
                    eprintln!("trace failed: {e}");
                    ExitCode::from(EXIT_TASK_FAILED)
                }
            }
        }
    }
}
