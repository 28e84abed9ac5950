use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use larx_cli::{run, CliError, CliResult, Command, OutputFormat, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "larx", version, about = "Latent-variable ARX estimation and forecast evaluation")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// CSV files; replaces the config's data list when given.
    #[arg(long)]
    data: Vec<PathBuf>,
    /// Output directory; defaults to the config's, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(args: Args) -> CliResult<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if !args.data.is_empty() {
        cfg.data = args.data;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(f) = args.format {
        cfg.format = f;
    }
    let dir = args.out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let outcome = run(args.command, &cfg)?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for a in &outcome.artifacts {
        let p = dir.join(&a.name);
        std::fs::write(&p, &a.contents).map_err(|e| CliError::io(&p, e))?;
    }
    match cfg.format {
        OutputFormat::Json => println!("{}", outcome.summary),
        OutputFormat::Csv => print!("{}", outcome.table),
    }
    if outcome.failed_checks > 0 {
        return Err(CliError::ChecksFailed(outcome.failed_checks));
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
