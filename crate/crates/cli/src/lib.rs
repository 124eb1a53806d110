//! File-driven front end for the `randcvx` engine: one problem file in, one
//! report (and optionally a CSV table) out.

pub mod error;
pub mod ops;
pub mod report;
pub mod spec;
pub mod suite;

pub use error::{CliError, CliResult};
pub use ops::{dispatch, Outcome, Overrides, PlotTable, Resolved};
pub use report::Report;
pub use spec::{Operation, ProblemSpec, Suite};
pub use suite::{check_suite, SuiteRow, Summary, Verdict};

use std::path::{Path, PathBuf};
use std::time::Instant;

/// Cap on worker threads for `check-suite`.
pub const THREADS_ENV: &str = "RANDCVX_THREADS";

pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .parse()
        .ok()
        .filter(|t| *t > 0)
}

/// Runs one problem and returns its report together with any plot table.
pub fn run_spec(
    spec: &ProblemSpec,
    spec_dir: &Path,
    overrides: &Overrides,
) -> CliResult<(Report, Option<PlotTable>)> {
    let started = Instant::now();
    let cfg = Resolved::new(spec, overrides);
    let outcome = if spec.operation == Operation::CheckSuite {
        let dir = overrides
            .corpus
            .clone()
            .unwrap_or_else(|| spec_dir.join(spec.params.corpus.as_deref().unwrap_or(".")));
        let summary = check_suite(&dir, cfg.seed, threads_from_env())?;
        Outcome {
            verdict: Some(summary.failures == 0),
            result: ops::to_json(&summary),
            plot: None,
        }
    } else {
        dispatch(spec, &cfg)?
    };
    let atoms = spec.base.atoms().iter().map(|a| a.label.clone()).collect();
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    let plot = outcome.plot.clone();
    Ok((
        Report::new(spec.operation, cfg.seed, atoms, outcome, elapsed_ms),
        plot,
    ))
}

/// The plot table lives next to the report, with a `.csv` extension.
pub fn plot_path(output: &Path) -> PathBuf {
    output.with_extension("csv")
}

/// Writes via a sibling temporary file and a rename, so readers never see a
/// partial report.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Reads `input`, runs it and writes the report to `output`.
pub fn run_file(input: &Path, output: &Path, overrides: &Overrides) -> CliResult<Report> {
    let spec = ProblemSpec::load(input)?;
    let dir = input.parent().unwrap_or(Path::new("."));
    let (report, plot) = run_spec(&spec, dir, overrides)?;
    write_atomic(output, &report.to_json())?;
    if let Some(plot) = plot {
        write_atomic(&plot_path(output), &plot.to_csv())?;
    }
    Ok(report)
}
