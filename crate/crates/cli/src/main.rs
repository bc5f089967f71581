use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod report;

/// Quantized Mamba2 inference, error analysis and accelerator cost model.
#[derive(Debug, Parser)]
#[command(name = "qmamba", version)]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantize a float checkpoint.
    Quantize(QuantizeArgs),
    /// Run prefill or decode.
    Run(RunArgs),
    /// Compare a float checkpoint against a quantized (or float) one.
    ErrorReport(ErrorReportArgs),
    /// Print the exponential PWL table as CSV.
    DumpPwl(DumpPwlArgs),
    /// Estimate accelerator cycles and throughput.
    Perf(PerfArgs),
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Calibration input (`tokens` or `hidden` tensor); a seeded synthetic
    /// sample otherwise.
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RunMode {
    Prefill,
    Decode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataPath {
    Quant,
    Ref,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: RunMode,
    #[arg(long)]
    input: PathBuf,
    /// Prefill: greedy tokens generated after the prompt. Decode: number of
    /// steps (default: one per input position).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "quant")]
    path: DataPath,
    /// Caches to continue from (decode only); zero caches otherwise.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Where to write the final caches.
    #[arg(long)]
    state_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ErrorReportArgs {
    #[arg(long)]
    weights_f: PathBuf,
    #[arg(long)]
    weights_q: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct DumpPwlArgs {
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PerfArgs {
    /// Model config JSON; overrides `--preset`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "mamba2-2.7b")]
    preset: String,
    /// Hardware config JSON; missing fields take the defaults.
    #[arg(long)]
    hw: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "decode")]
    mode: RunMode,
    /// Prompt length for prefill.
    #[arg(long, default_value_t = 1024)]
    len: u64,
    /// Cost a layer as its slowest module instead of the sum.
    #[arg(long)]
    overlap: bool,
    /// Board power in watts, for tokens/(s·W).
    #[arg(long)]
    power: Option<f64>,
    #[arg(long)]
    json: bool,
}

/// Inconsistent flags; exits with status 1 like a parse error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Quantize(a) => commands::quantize(a),
        Command::Run(a) => commands::run(a),
        Command::ErrorReport(a) => report::error_report(a),
        Command::DumpPwl(a) => commands::dump_pwl(a),
        Command::Perf(a) => commands::perf(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
