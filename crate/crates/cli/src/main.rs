//! `helfrich`: flows, energies, sphere tables, transport distances and the
//! validation suite.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }
}

impl From<helfrich_core::Error> for CliError {
    fn from(e: helfrich_core::Error) -> Self {
        use helfrich_core::Error as E;
        match e {
            E::NotConverged { .. } | E::PivotLimit(_) | E::StepRejected(_) | E::NonFinite { .. } => {
                Self::numerical(e.to_string())
            }
            _ => Self::usage(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "helfrich", version, about = "Minimizing movements of the Canham-Helfrich energy on oriented varifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a flow from a TOML or JSON configuration.
    Flow {
        config: PathBuf,
        /// Output directory (overrides the `output` key).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy breakdown and bounds of a closed mesh, as JSON.
    Energy(EnergyArgs),
    /// Energies of k-covered spheres of mass m0.
    Spheres(SphereArgs),
    /// Transport distance between two particle varifolds stored as CSV.
    Transport(TransportArgs),
    /// Run the acceptance suite and print a pass/fail table.
    Validate(ValidateArgs),
}

#[derive(Args)]
pub struct ParamArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub h0: f64,
}

#[derive(Args)]
pub struct EnergyArgs {
    /// OFF or OBJ mesh; a unit icosphere (3 subdivisions) when omitted.
    pub mesh: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Prescribed mass; defaults to the mesh mass.
    #[arg(long)]
    pub m0: Option<f64>,
    /// Multiplicity of the outward sheet.
    #[arg(short = 'k', long = "theta-plus", default_value_t = 1)]
    pub theta_plus: u32,
    #[arg(long = "theta-minus", default_value_t = 0)]
    pub theta_minus: u32,
    /// Genus; inferred from the Euler characteristic when omitted.
    #[arg(long)]
    pub genus: Option<u32>,
}

#[derive(Args)]
pub struct SphereArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 4.0 * std::f64::consts::PI)]
    pub m0: f64,
    /// Largest multiplicity listed.
    #[arg(long)]
    pub k_max: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SolverArg {
    Exact,
    Entropic,
}

#[derive(Args)]
pub struct TransportArgs {
    pub source: PathBuf,
    pub target: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, value_enum, default_value_t = SolverArg::Exact)]
    pub solver: SolverArg,
    /// Relative entropic regularization.
    #[arg(long, default_value_t = 1e-2)]
    pub epsilon: f64,
    /// Also report the distance between the spatial marginals.
    #[arg(long)]
    pub spatial: bool,
    /// Write the optimal plan as CSV.
    #[arg(long)]
    pub plan: Option<PathBuf>,
}

#[derive(Args)]
pub struct ValidateArgs {
    /// Only the criteria that finish in well under a minute.
    #[arg(long)]
    pub quick: bool,
    /// Comma-separated criterion numbers.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u8>,
    /// Flip the mean-curvature sign convention before running.
    #[arg(long, hide = true)]
    pub corrupt_curvature_sign: bool,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("HELFRICH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::usage(format!("HELFRICH_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("HELFRICH_THREADS: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Flow { config, out } => commands::flow(&config, out.as_deref()),
        Command::Energy(a) => commands::energy(&a),
        Command::Spheres(a) => commands::spheres(&a),
        Command::Transport(a) => commands::transport(&a),
        Command::Validate(a) => commands::validate(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
