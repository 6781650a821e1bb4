mod args;
mod commands;
mod overlay;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, FileConfig};
use latticefind::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_ESTIMATION: u8 = 2;
const EXIT_IO: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Estimation { .. } | Error::Numerical(_) => EXIT_ESTIMATION,
        Error::Io(_) | Error::Format(_) => EXIT_IO,
    }
}

fn threads(flag: Option<usize>, file: Option<usize>) -> Result<Option<usize>, Error> {
    if let Some(n) = flag.or(file) {
        return Ok(Some(n));
    }
    match std::env::var("LATTICEFIND_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::invalid(format!("LATTICEFIND_THREADS must be a positive integer, got '{v}'"))),
        _ => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(n) = threads(cli.threads, file.threads)? {
        if n == 0 {
            return Err(Error::invalid("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::invalid(e.to_string()))?;
    }
    match &cli.command {
        Command::EstimateLattice(a) => commands::estimate(a, &file),
        Command::Detect(a) => commands::detect_cmd(a, &file, cli.verbose),
        Command::Simulate(a) => commands::simulate(a, &file),
        Command::Sweep(a) => commands::sweep(a, &file, cli.verbose),
        Command::Evaluate(a) => commands::evaluate(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Estimation { peaks, .. } = &e {
                eprintln!("{} spectral peak(s) found", peaks.len());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
