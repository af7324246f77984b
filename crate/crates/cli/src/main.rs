use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qwire_cli::{emit, run, Experiment, Format, RawConfig};

#[derive(Parser, Debug)]
#[command(name = "qwire", version, about = "Wavepacket quantum-wire experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Band energies and group velocities
    Dispersion(Common),
    /// Default packet parameters and truncation diagnostics
    Packet(Common),
    /// Centroid motion of the default packet
    Transit(Common),
    /// Measured against predicted width growth
    Broadening(Common),
    /// Self-overlap decay against the Fourier-Airy integral
    OverlapDecay(Common),
    /// Planned protocol and its error channels
    ErrorBudget(Common),
    /// Minimal wait between signals over ring sizes
    MinWaitSweep(Common),
    /// Power-law fit of the minimal wait against N
    RateFit(Common),
    /// Many-body protocol fidelities on a small ring
    OracleProtocol(Common),
    /// Encoding error norm against its overlap bound
    OracleBounds(Common),
    /// Interaction error of the t-J model against the free evolution
    #[command(name = "tj-check")]
    TjCheck(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a configuration key, e.g. `--set N=128`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

impl Command {
    fn split(&self) -> (Experiment, &Common) {
        match self {
            Command::Dispersion(c) => (Experiment::Dispersion, c),
            Command::Packet(c) => (Experiment::Packet, c),
            Command::Transit(c) => (Experiment::Transit, c),
            Command::Broadening(c) => (Experiment::Broadening, c),
            Command::OverlapDecay(c) => (Experiment::OverlapDecay, c),
            Command::ErrorBudget(c) => (Experiment::ErrorBudget, c),
            Command::MinWaitSweep(c) => (Experiment::MinWaitSweep, c),
            Command::RateFit(c) => (Experiment::RateFit, c),
            Command::OracleProtocol(c) => (Experiment::OracleProtocol, c),
            Command::OracleBounds(c) => (Experiment::OracleBounds, c),
            Command::TjCheck(c) => (Experiment::TjCheck, c),
        }
    }
}

fn execute(cli: Cli) -> Result<(), String> {
    let (experiment, common) = cli.command.split();
    let mut raw = match &common.config {
        Some(path) => qwire_cli::config::load_raw(path).map_err(|e| e.to_string())?,
        None => RawConfig::default(),
    };
    if let Some(named) = raw.get("experiment") {
        let parsed: Experiment = named.parse()?;
        if parsed != experiment {
            return Err(format!("config names experiment {parsed}, but the subcommand is {experiment}"));
        }
    }
    raw.set("experiment", experiment.name()).map_err(|e| e.to_string())?;
    for item in &common.overrides {
        let (key, value) = item.split_once('=').ok_or_else(|| format!("override `{item}` is not KEY=VALUE"))?;
        raw.set(key.trim(), value.trim()).map_err(|e| e.to_string())?;
    }
    if let Some(seed) = common.seed {
        raw.set("seed", &seed.to_string()).map_err(|e| e.to_string())?;
    }
    if let Some(out) = &common.out {
        raw.set("out", &out.display().to_string()).map_err(|e| e.to_string())?;
    }
    let config = raw.resolve().map_err(|e| e.to_string())?;

    let format = match (common.format, config.format.as_deref()) {
        (Some(OutputFormat::Json), _) | (None, Some("json")) => Format::Json,
        _ => Format::Csv,
    };
    let table = run(&config).map_err(|e| e.to_string())?;
    let out = config.out.as_ref().map(PathBuf::from);
    emit(&table, out.as_deref(), format).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
