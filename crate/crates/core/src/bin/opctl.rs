use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, ValueEnum};

use opctl::model::load_model;
use opctl::pipeline::{parse_target, run_pipeline, Command, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    /// Emit the transition matrix F and the admissible profile set C_z.
    Compile,
    /// Emit success thresholds s and the coupling rows Λ.
    Thresholds,
    /// Target set, invariant core, stabilizability verdict and gain family.
    Synthesize,
    /// Monte Carlo traces and the Lyapunov report.
    Simulate,
    /// Full chain; exit 0 iff stabilizable and the Lyapunov check passes.
    Verify,
}

/// Exit codes: 0 success, 1 verification failed or internal error,
/// 2 not stabilizable, 3 validation, 4 numeric.
#[derive(Debug, Parser)]
#[command(name = "opctl", version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,
    /// Directory for artifacts and report.json / report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the model's simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Restricted target core, e.g. `3` or `{1,3}`.
    #[arg(long)]
    target: Option<String>,
    /// Print the machine-readable report instead of the text summary.
    #[arg(long)]
    json: bool,
}

fn run(cli: Cli) -> opctl::error::Result<i32> {
    let command = match cli.command {
        Sub::Compile => Command::Compile,
        Sub::Thresholds => Command::Thresholds,
        Sub::Synthesize => Command::Synthesize,
        Sub::Simulate => Command::Simulate,
        Sub::Verify => Command::Verify,
    };
    let target = cli.target.as_deref().map(parse_target).transpose()?;
    let model = load_model(&cli.model)?;
    let opts = RunOptions {
        out: cli.out,
        seed: cli.seed,
        target,
    };
    let report = run_pipeline(&model, command, &opts)?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", report.render_text());
    }
    Ok(report.exit_code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(3),
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
