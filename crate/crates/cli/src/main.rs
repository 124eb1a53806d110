use clap::Parser;
use randcvx::GridSpec;
use randcvx_cli::spec::parse_grid;
use randcvx_cli::{
    check_suite, run_file, threads_from_env, write_atomic, CliError, CliResult, Overrides,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Runs one problem file, or the property suites over a corpus directory.
#[derive(Debug, Parser)]
#[command(name = "randcvx", version)]
struct Args {
    /// Problem file (JSON, schema "randcvx/1").
    #[arg(long, required_unless_present = "corpus")]
    input: Option<PathBuf>,
    /// Report path; the plot table, if any, goes next to it as .csv.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Conjugation grid as MIN:MAX:POINTS.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridSpec>,
    /// Corpus directory; without --input, runs check-suite on it.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

fn run(args: Args) -> CliResult<()> {
    let overrides = Overrides {
        seed: args.seed,
        tol: args.tol,
        grid: args.grid,
        corpus: args.corpus.clone(),
    };
    let (json, failures) = match &args.input {
        Some(input) => {
            let output = args
                .output
                .clone()
                .unwrap_or_else(|| input.with_extension("report.json"));
            let report = run_file(input, &output, &overrides)?;
            eprintln!("wrote {}", output.display());
            let failures = match report.result.get("failures") {
                Some(v) if report.operation == randcvx_cli::Operation::CheckSuite => {
                    v.as_u64().unwrap_or(0)
                }
                _ => 0,
            };
            (None, failures)
        }
        None => {
            let dir = args
                .corpus
                .as_ref()
                .expect("clap requires --corpus without --input");
            let summary = check_suite(dir, args.seed.unwrap_or(0), threads_from_env())?;
            for row in summary.rows.iter().filter(|r| !r.ok) {
                eprintln!("FAIL {}", row.file);
            }
            let json = serde_json::to_string_pretty(&summary).expect("summaries serialize") + "\n";
            (Some(json), summary.failures as u64)
        }
    };
    if let Some(json) = json {
        match &args.output {
            Some(out) => write_atomic(out, &json)?,
            None => print!("{json}"),
        }
    }
    if failures > 0 {
        return Err(CliError::SuiteFailed(failures as usize));
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
