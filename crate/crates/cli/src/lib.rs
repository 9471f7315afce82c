//! The `nlfit` command line: CSV in, JSON or CSV out.
//!
//! Exit codes are 0 on success, 1 when a computation fails (an error object is
//! written to stderr as one JSON line) and 2 on a usage error.

pub mod args;
pub mod commands;
pub mod error;
pub mod input;
pub mod output;

use std::io::Write;

pub use args::{parse_args, CliConfig, Command, Extras, OutputFormat};
pub use commands::run;
pub use error::{CliError, CliResult};
pub use input::read_csv;

/// Worker threads from the `NLFIT_THREADS` value; unset means 1.
pub fn threads_from_env(value: Option<&str>) -> CliResult<usize> {
    match value {
        None => Ok(1),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::usage("NLFIT_THREADS", format!("expected a positive integer, got `{s}`"))),
        },
    }
}

/// Parses, runs and reports. Returns the process exit code.
pub fn main_with<I, T>(argv: I, threads: Option<&str>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let result = threads_from_env(threads).and_then(|n| {
        let config = parse_args(argv)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
        // Buffered so the pool never touches the caller's writer.
        let mut buf = Vec::new();
        let r = pool.install(|| run(&config, &mut buf));
        stdout.write_all(&buf).map_err(|e| CliError::Io(format!("stdout: {e}")))?;
        r
    });
    match result {
        Ok(()) => 0,
        Err(CliError::Help(text)) => {
            let _ = stdout.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "{}", output::json_compact(&e.to_json()));
            e.exit_code()
        }
    }
}
