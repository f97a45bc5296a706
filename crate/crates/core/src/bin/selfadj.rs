use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use selfadj::cli::{self, Command, RunOptions};

/// Deficiency indices, self-adjoint boundary conditions and spectra of
/// ordinary differential expressions.
#[derive(Parser, Debug)]
#[command(name = "selfadj", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Problem description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Write the command's table here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Seed for randomized checks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Truncation distance toward infinite ends.
    #[arg(long)]
    max_x: Option<f64>,
}

fn write(path: &PathBuf, text: &str) -> bool {
    match std::fs::write(path, text) {
        Ok(()) => true,
        Err(e) => {
            eprintln!("selfadj: cannot write {}: {e}", path.display());
            false
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let outcome = match cli::load_config(&args.config) {
        Ok(cfg) => {
            let base_dir = args.config.parent().map(PathBuf::from).unwrap_or_default();
            let opts = RunOptions { seed: args.seed, max_x: args.max_x, base_dir };
            cli::run(&cfg, args.command, &opts)
        }
        Err(e) => cli::config_failure(args.command, &e),
    };
    if let Some(msg) = outcome.report.get("error").and_then(|e| e.get("message")).and_then(|m| m.as_str()) {
        eprintln!("selfadj: {msg}");
    }
    let text = cli::render_report(&outcome.report);
    let mut code = outcome.exit_code;
    match &args.json {
        Some(p) => {
            if !write(p, &text) {
                code = cli::EXIT_CONFIG;
            }
        }
        None => print!("{text}"),
    }
    if let (Some(p), Some(csv)) = (&args.csv, &outcome.csv) {
        if !write(p, csv) {
            code = cli::EXIT_CONFIG;
        }
    }
    ExitCode::from(code as u8)
}
