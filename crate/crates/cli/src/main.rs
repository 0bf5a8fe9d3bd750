use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tensorspike::harness::{self, EigRequest, SweepConfig};
use tensorspike::pipeline::{run_mpsnsga, RunConfig};
use tensorspike::verify::{run_verify, VerifyHooks};
use tensorspike::Error;

const OK: u8 = 0;
const FAILED: u8 = 1;
const VALIDATION: u8 = 2;
const RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "tensorspike", version, about = "Streaming recovery of spiked asymmetric tensors")]
struct Cli {
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (TENSORSPIKE_OUT takes precedence).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Parallel sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Replaces every seed in the config with ones derived from this.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Record every n-th step in traces.csv.
    #[arg(long, global = true)]
    trace_stride: Option<u64>,
    /// Add alignment columns to traces.
    #[arg(long, global = true)]
    instrument: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the estimator once.
    Run,
    /// Run a grid of configs and write sweep.csv.
    Sweep,
    /// Run the reference-level search only.
    #[command(name = "search-c3")]
    SearchC3,
    /// Top eigenvector of {"matrix": [[...]]}.
    Eig,
    /// Run the built-in self-checks.
    Verify {
        /// Multiply c1 by this factor in the schedule suites.
        #[arg(long, default_value_t = 1.0)]
        c1_scale: f64,
        /// Make the streaming suite's noise oracle return NaN.
        #[arg(long)]
        inject_nan: bool,
    },
}

fn code_for(e: &Error) -> u8 {
    if e.is_validation() {
        VALIDATION
    } else {
        RUNTIME
    }
}

fn config_path(cli: &Cli) -> Result<&Path, u8> {
    cli.config.as_deref().ok_or_else(|| {
        eprintln!("error: --config is required");
        VALIDATION
    })
}

fn out_dir(cli: &Cli) -> PathBuf {
    harness::resolve_out_dir(cli.out.clone(), std::env::var("TENSORSPIKE_OUT").ok(), "tensorspike-out")
}

fn apply_flags(cli: &Cli, config: &mut RunConfig) {
    if let Some(seed) = cli.seed {
        harness::reseed(config, seed);
    }
    if let Some(stride) = cli.trace_stride {
        config.trace_stride = stride;
    }
    if cli.instrument {
        config.instrument = true;
    }
}

fn load_run_config(cli: &Cli) -> Result<RunConfig, u8> {
    let path = config_path(cli)?;
    let mut config = harness::load_config(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        VALIDATION
    })?;
    apply_flags(cli, &mut config);
    Ok(config)
}

fn report(e: Error) -> u8 {
    eprintln!("error: {e}");
    code_for(&e)
}

fn cmd_run(cli: &Cli) -> Result<u8, u8> {
    let config = load_run_config(cli)?;
    let output = run_mpsnsga(&config).map_err(report)?;
    let dir = out_dir(cli);
    harness::write_run_outputs(&dir, &output, config.instrument).map_err(report)?;
    println!(
        "max_loss {:e} samples {} -> {}",
        output.report.loss.max_loss,
        output.report.resources.total_samples(),
        dir.display()
    );
    Ok(OK)
}

fn cmd_sweep(cli: &Cli) -> Result<u8, u8> {
    let path = config_path(cli)?;
    let mut sweep = SweepConfig::load(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        VALIDATION
    })?;
    apply_flags(cli, &mut sweep.base);
    let rows = harness::run_sweep(&sweep, cli.jobs).map_err(report)?;
    let dir = out_dir(cli);
    std::fs::create_dir_all(&dir).map_err(|e| report(e.into()))?;
    let file = std::fs::File::create(dir.join("sweep.csv")).map_err(|e| report(e.into()))?;
    harness::write_sweep_csv(std::io::BufWriter::new(file), &rows).map_err(report)?;
    println!("{} cells -> {}", rows.len(), dir.join("sweep.csv").display());
    Ok(OK)
}

fn cmd_search(cli: &Cli) -> Result<u8, u8> {
    let config = load_run_config(cli)?;
    let outcome = harness::search_c3(&config).map_err(report)?;
    print!("{}", harness::format_search(&outcome));
    Ok(OK)
}

fn cmd_eig(cli: &Cli) -> Result<u8, u8> {
    let path = config_path(cli)?;
    let text = std::fs::read_to_string(path).map_err(|e| report(e.into()))?;
    let req: EigRequest = serde_json::from_str(&text).map_err(|e| report(e.into()))?;
    let result = harness::eig(&req).map_err(report)?;
    println!("{}", serde_json::to_string_pretty(&result).map_err(|e| report(e.into()))?);
    Ok(OK)
}

fn cmd_verify(c1_scale: f64, inject_nan: bool) -> u8 {
    let summary = run_verify(&VerifyHooks { c1_scale, inject_nan });
    match serde_json::to_string_pretty(&summary) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("error: {e}"),
    }
    if summary.passed {
        OK
    } else {
        FAILED
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run => cmd_run(&cli),
        Command::Sweep => cmd_sweep(&cli),
        Command::SearchC3 => cmd_search(&cli),
        Command::Eig => cmd_eig(&cli),
        Command::Verify { c1_scale, inject_nan } => Ok(cmd_verify(*c1_scale, *inject_nan)),
    };
    ExitCode::from(result.unwrap_or_else(|code| code))
}
