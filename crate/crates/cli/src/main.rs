use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fermicool_cli::config::RunConfig;
use fermicool_cli::error::CliResult;
use fermicool_cli::exec;

#[derive(Parser)]
#[command(
    name = "fermicool",
    version,
    about = "Collective Raman sideband cooling of a trapped Fermi gas",
    long_about = "Simulates pulse-train Raman cooling of a spin-polarized Fermi gas in a \
                  harmonic or weakly anharmonic trap, with Pauli blocking and collectively \
                  suppressed spontaneous emission. Exit codes: 0 ok, 2 invalid \
                  configuration, 3 numerical abort, 4 i/o failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a cooling scenario and write trace/snapshot/plot artifacts.
    Run(RunArgs),
    /// Check the recoil matrix elements: completeness residuals and
    /// brute-force oracle agreement over an (m, kappa) grid.
    FcCheck(FcCheckArgs),
    /// Dump the dressed rate matrix and inhibition diagnostics for one
    /// pulse, evaluated at the scenario's initial state.
    RatesDump(RatesDumpArgs),
    /// Fit a temperature to a snapshot CSV and print it as one CSV row.
    Thermo(ThermoArgs),
}

#[derive(Args)]
struct ScenarioSource {
    /// Built-in scenario: fig1, fig2, fig3, or fig3-small.
    #[arg(long, value_name = "NAME", conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a TOML run configuration.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Dotted-path config override, e.g. numerics.refresh=2500 or
    /// stage.0.pulse.1.delta=-16. May be given repeatedly.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Check the configuration and print the constraint report, then exit
    /// without computing anything.
    #[arg(long)]
    validate_only: bool,
    /// Artifact directory (defaults to outputs.directory from the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FcCheckArgs {
    /// Highest level index probed.
    #[arg(long, default_value_t = 500)]
    n_max: usize,
    /// Largest recoil momentum probed, in ground-state-size units.
    #[arg(long, default_value_t = 2.0)]
    kappa_max: f64,
    /// Level-grid stride.
    #[arg(long, default_value_t = 25)]
    m_step: usize,
    /// Momentum-grid stride.
    #[arg(long, default_value_t = 0.25)]
    kappa_step: f64,
    /// Write fc_check.csv under DIR instead of stdout.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RatesDumpArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// 1-based stage selector.
    #[arg(long, default_value_t = 1)]
    stage: usize,
    /// 1-based pulse selector within the stage.
    #[arg(long, default_value_t = 1)]
    pulse: usize,
    /// Output directory (defaults to outputs.directory from the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ThermoArgs {
    /// Snapshot CSV (level_index, energy, degeneracy, occupation).
    snapshot: PathBuf,
}

fn load_config(source: &ScenarioSource, out: Option<&PathBuf>) -> CliResult<RunConfig> {
    let value = exec::load_value(
        source.preset.as_deref(),
        source.config.as_deref(),
        &source.overrides,
        out.map(|p| p.as_path()),
    )?;
    RunConfig::from_value(value)
}

fn provenance(source: &ScenarioSource) -> Vec<(String, String)> {
    let mut rows = vec![(
        "version".to_string(),
        env!("CARGO_PKG_VERSION").to_string(),
    )];
    if let Some(p) = &source.preset {
        rows.push(("preset".into(), p.clone()));
    }
    if let Some(c) = &source.config {
        rows.push(("config_file".into(), c.display().to_string()));
    }
    for o in &source.overrides {
        rows.push(("override".into(), o.clone()));
    }
    rows
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(args) => {
            let config = load_config(&args.source, args.out.as_ref())?;
            if args.validate_only {
                let resolved = config.resolve()?;
                print!("{}", resolved.report());
                return Ok(());
            }
            let outcome = exec::execute_run(&config, &provenance(&args.source))?;
            println!("{}", exec::summarize(&outcome));
            Ok(())
        }
        Command::FcCheck(args) => exec::fc_check(&exec::FcCheckParams {
            n_max: args.n_max,
            kappa_max: args.kappa_max,
            m_step: args.m_step,
            kappa_step: args.kappa_step,
            out: args.out,
        }),
        Command::RatesDump(args) => {
            let config = load_config(&args.source, None)?;
            exec::rates_dump(
                &config,
                &exec::RatesDumpParams {
                    stage: args.stage,
                    pulse: args.pulse,
                    out: args.out,
                },
            )
        }
        Command::Thermo(args) => exec::thermo(&args.snapshot),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
