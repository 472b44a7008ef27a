//! Library side of the `geotransfer` binary: argument parsing, config
//! layering and the five subcommands.

mod args;
mod commands;
mod logging;
pub mod overrides;

use std::ffi::OsString;

use clap::Parser;
use geotransfer::Error;

pub use args::Cli;
pub use commands::{MARKER, METRICS_LOG, RESOLVED_CONFIG, RUN_LOG};

pub const EXIT_USAGE: i32 = 2;

/// Process exit code for an error category.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) => 3,
        Error::Config(_) => 4,
        Error::Format(_) => 5,
        Error::Mode(_) => 6,
        Error::Numerical(_) => 7,
        Error::Io { .. } => 8,
        Error::Image { .. } => 9,
        Error::Json(_) => 10,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit code. Failures end with `error[<category>]: <message>` on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    logging::init(cli.verbose);
    let result = match &cli.command {
        args::Command::MakeScene(a) => commands::make_scene(a),
        args::Command::Pretrain(a) => commands::pretrain_cmd(a),
        args::Command::Stylize(a) => commands::stylize_cmd(a),
        args::Command::Render(a) => commands::render_cmd(a),
        args::Command::Evaluate(a) => commands::evaluate_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            exit_code(&e)
        }
    }
}
