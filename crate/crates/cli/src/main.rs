//! `fdc`: propagate, analyse and correct quasi-periodic trajectories from
//! scenario files.

mod commands;
mod error;
mod output;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fdc_core::frames::FrameTag;
use fdc_core::refine::Method;

use commands::{Common, Shooting};
use error::CliError;

#[derive(Parser)]
#[command(name = "fdc", version, about = "Frequency-domain corrections for quasi-periodic orbits")]
struct Cli {
    /// Cap the worker pool (defaults to one thread per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutputArgs {
    /// Output directory; overrides `output.dir` in the scenario.
    #[arg(short, long)]
    out: Option<PathBuf>,

    /// Also write gnuplot-ready CSVs under `plots/`.
    #[arg(long)]
    emit_plots: bool,

    /// Do not list written files on stderr.
    #[arg(short, long)]
    quiet: bool,
}

impl OutputArgs {
    fn common(&self) -> Common {
        Common { out: self.out.clone(), emit_plots: self.emit_plots, quiet: self.quiet }
    }
}

#[derive(Args)]
struct SignalArgs {
    /// Signal CSV (`t,q`) or a scenario file (TOML/JSON).
    input: PathBuf,

    /// Signal index within the scenario.
    #[arg(long, default_value_t = 0)]
    signal: usize,

    /// Satellite index within the scenario.
    #[arg(long, default_value_t = 0)]
    satellite: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lnaff,
    Gmsc,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Lnaff => Method::Lnaff,
            MethodArg::Gmsc => Method::Gmsc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameArg {
    Brf,
    Eof,
    Mci,
}

impl From<FrameArg> for FrameTag {
    fn from(f: FrameArg) -> Self {
        match f {
            FrameArg::Brf => FrameTag::Brf,
            FrameArg::Eof => FrameTag::Eof,
            FrameArg::Mci => FrameTag::Mci,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Propagate one satellite and write its trajectory as CSV.
    Propagate {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        satellite: usize,
        /// Frame of the written states (defaults to the model frame).
        #[arg(long, value_enum)]
        frame: Option<FrameArg>,
        /// Also write the binary trajectory cache `trajectory.bin`.
        #[arg(long)]
        cache: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Windowed amplitude spectrum and detected peaks of a signal.
    Spectrum {
        #[command(flatten)]
        signal: SignalArgs,
        /// Largest number of peaks reported.
        #[arg(long, default_value_t = 10)]
        peaks: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Refine the leading frequency components of a signal.
    Refine {
        #[command(flatten)]
        signal: SignalArgs,
        /// Refinement method (defaults to the scenario's, else lnaff).
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Number of components (defaults to the scenario's, else 1).
        #[arg(long)]
        m: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Single-shooting correction onto frequency targets.
    CorrectSingle {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        satellite: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Multiple-shooting correction with continuity constraints.
    CorrectMulti {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        satellite: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Phase a constellation against its reference satellite.
    Constellation {
        scenario: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Propagate { scenario, satellite, frame, cache, output } => {
            commands::propagate_cmd(&output.common(), &scenario, satellite, frame.map(Into::into), cache)
        }
        Command::Spectrum { signal, peaks, output } => {
            commands::spectrum(&output.common(), &signal.input, signal.signal, signal.satellite, peaks)
        }
        Command::Refine { signal, method, m, output } => commands::refine(
            &output.common(),
            &signal.input,
            method.map(Into::into),
            m,
            signal.signal,
            signal.satellite,
        ),
        Command::CorrectSingle { scenario, satellite, output } => {
            commands::correct(&output.common(), &scenario, satellite, Shooting::Single)
        }
        Command::CorrectMulti { scenario, satellite, output } => {
            commands::correct(&output.common(), &scenario, satellite, Shooting::Multi)
        }
        Command::Constellation { scenario, output } => commands::constellation(&output.common(), &scenario),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fdc: {e}");
            e.exit_code()
        }
    }
}
