use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use datamarket::harness::examples::{example3_default_axes, run_example1, run_example2, run_example3};
use datamarket::harness::suites::{run_property_suite, Suite, SuiteOptions, SuiteReport};
use datamarket::harness::sweep::{run_sweep, SweepOverrides, SweepSpec};
use datamarket::harness::{load_scenario_file, Population, Scenario};
use datamarket::mechanism::{expected_platform_payoff, run_optimal_mechanism, vcg_prices, Estimator};
use datamarket::welfare::{classify_efficiency, first_best, verify_first_best_condition};
use datamarket::{stackelberg_equilibrium, Error};

#[derive(Parser)]
#[command(name = "datamarket", version, about = "Equilibria, welfare and mechanisms for correlated data markets")]
struct Cli {
    /// Seed for Monte Carlo estimates (overrides the scenario).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the report or CSV here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tie tolerance for argmax searches (overrides the scenario).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Monte Carlo sample count (overrides the scenario).
    #[arg(long, global = true)]
    samples: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Known-value Stackelberg equilibrium.
    Solve { scenario: PathBuf },
    /// Surplus-maximizing profile and its efficiency diagnostics.
    FirstBest { scenario: PathBuf },
    /// Run a mechanism on reported valuations.
    Mechanism {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        /// Comma-separated reports; defaults to the known values or the
        /// distribution medians.
        #[arg(long, value_delimiter = ',')]
        reports: Option<Vec<f64>>,
    },
    /// Reproduce one of the worked examples.
    Example {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        number: u8,
    },
    /// Run a parameter sweep and emit CSV.
    Sweep { spec: PathBuf },
    /// Run property suites.
    Check {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        /// Drop the report term from optimal-mechanism payments.
        #[arg(long)]
        corrupt_payment: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Vcg,
    Optimal,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Structure,
    Equilibrium,
    Mechanism,
    All,
}

enum Failure {
    Validation(Error),
    Suite(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Validation(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Suite(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

fn emit(cli: &Cli, text: &str) -> Result<(), Failure> {
    match &cli.out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())).into())
}

fn emit_json(cli: &Cli, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize") + "\n";
    emit(cli, &text)
}

fn load(cli: &Cli, path: &Path) -> Result<Scenario, Failure> {
    let mut scenario = load_scenario_file(path)?;
    if let Some(seed) = cli.seed {
        scenario.options.seed = seed;
    }
    if let Some(samples) = cli.samples {
        scenario.options.samples = samples;
    }
    if let Some(tol) = cli.tol {
        if !(tol.is_finite() && tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("--tol must be finite and non-negative, got {tol}")).into());
        }
        scenario.options.tie_tol = tol;
    }
    eprintln!("# resolved scenario\n{}", scenario.to_toml());
    Ok(scenario)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Solve { scenario } => {
            let scenario = load(cli, scenario)?;
            let report = stackelberg_equilibrium(&scenario.known_instance()?, &scenario.solver_options())?;
            emit_json(cli, &report)
        }
        Command::FirstBest { scenario } => {
            let scenario = load(cli, scenario)?;
            let instance = scenario.known_instance()?;
            let opts = scenario.solver_options();
            let fb = first_best(&instance, &opts)?;
            let condition = verify_first_best_condition(&instance, fb.profile)?;
            let eq = stackelberg_equilibrium(&instance, &opts)?;
            let efficiency = classify_efficiency(&instance, instance.values(), eq.outcome.profile, &opts)?;
            emit_json(cli, &json!({ "first_best": fb, "condition": condition, "efficiency": efficiency }))
        }
        Command::Mechanism { scenario, kind, reports } => {
            let scenario = load(cli, scenario)?;
            mechanism(cli, &scenario, *kind, reports.clone())
        }
        Command::Example { number } => example(cli, *number),
        Command::Sweep { spec } => {
            let spec = SweepSpec::load(spec)?;
            let overrides = SweepOverrides { seed: cli.seed, samples: cli.samples, tie_tol: cli.tol };
            eprintln!("# sweep template\n{}", spec.template_toml());
            let csv = run_sweep(&spec, overrides)?.to_csv();
            match cli.out.as_ref().or(spec.output.as_ref()) {
                Some(path) => write_file(path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Check { scenario, suite, corrupt_payment } => {
            let scenario = load(cli, scenario)?;
            let suites = match suite {
                SuiteArg::Structure => vec![Suite::Structure],
                SuiteArg::Equilibrium => vec![Suite::Equilibrium],
                SuiteArg::Mechanism => vec![Suite::Mechanism],
                SuiteArg::All => match scenario.population {
                    Population::Known(_) => vec![Suite::Structure, Suite::Equilibrium, Suite::Mechanism],
                    Population::Bayesian(_) => vec![Suite::Structure, Suite::Mechanism],
                },
            };
            let options = SuiteOptions { corrupt_payment: *corrupt_payment };
            let reports = suites
                .into_iter()
                .map(|s| run_property_suite(&scenario, s, options))
                .collect::<Result<Vec<SuiteReport>, _>>()?;
            emit_json(cli, &reports)?;
            match reports.iter().find_map(|r| r.first_failure().map(|f| (r.suite, f))) {
                Some((suite, f)) => Err(Failure::Suite(format!("{suite:?} suite failed at {}: {}", f.name, f.detail))),
                None => Ok(()),
            }
        }
    }
}

fn mechanism(cli: &Cli, scenario: &Scenario, kind: Kind, reports: Option<Vec<f64>>) -> Result<(), Failure> {
    let opts = scenario.solver_options();
    match kind {
        Kind::Vcg => {
            let reports = match (reports, &scenario.population) {
                (Some(r), _) => r,
                (None, Population::Known(v)) => v.clone(),
                (None, Population::Bayesian(d)) => d.iter().map(|d| d.quantile(0.5)).collect(),
            };
            let reported = datamarket::KnownValueInstance::new(scenario.market.clone(), reports.clone())?;
            let out = vcg_prices(&reported, &opts)?;
            emit_json(cli, &json!({ "mechanism": "vcg", "reports": reports, "outcome": out }))
        }
        Kind::Optimal => {
            let instance = scenario.bayesian_instance()?;
            let reports = reports.unwrap_or_else(|| instance.distributions().iter().map(|d| d.quantile(0.5)).collect());
            let o = &scenario.options;
            let out = run_optimal_mechanism(&instance, &reports, o.payment_rule, &opts)?;
            let expected = expected_platform_payoff(&instance, o.samples, o.seed, Estimator::VirtualSurplus, &opts)?;
            emit_json(cli, &json!({ "mechanism": "optimal", "outcome": out, "expected_platform_payoff": expected }))
        }
    }
}

fn example(cli: &Cli, number: u8) -> Result<(), Failure> {
    match number {
        1 => {
            let rhos: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
            emit_json(cli, &run_example1(&rhos, 1.0)?)
        }
        2 => emit_json(cli, &run_example2()?),
        _ => {
            let (v_high, rho) = example3_default_axes();
            emit(cli, &run_example3(v_high, rho)?.to_csv())
        }
    }
}
