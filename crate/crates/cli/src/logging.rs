//! Process logger: warnings to stderr, everything (with timestamps) to the
//! active run's log file.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::SystemTime;

use log::{Level, LevelFilter, Log, Metadata, Record};

struct RunLogger {
    file: Mutex<Option<File>>,
    verbose: Mutex<bool>,
}

static LOGGER: OnceLock<RunLogger> = OnceLock::new();

fn logger() -> &'static RunLogger {
    LOGGER.get_or_init(|| RunLogger {
        file: Mutex::new(None),
        verbose: Mutex::new(false),
    })
}

impl Log for RunLogger {
    fn enabled(&self, metadata: &Metadata) -> bool {
        metadata.level() <= Level::Info
    }

    fn log(&self, record: &Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let verbose = *self.verbose.lock().unwrap();
        if record.level() <= Level::Warn || verbose {
            eprintln!("{}: {}", record.level().as_str().to_lowercase(), record.args());
        }
        if let Some(f) = self.file.lock().unwrap().as_mut() {
            let ts = humantime::format_rfc3339_millis(SystemTime::now());
            let _ = writeln!(f, "{ts} {:<5} {}: {}", record.level(), record.target(), record.args());
        }
    }

    fn flush(&self) {
        if let Some(f) = self.file.lock().unwrap().as_mut() {
            let _ = f.flush();
        }
    }
}

/// Installs the logger (once per process) and sets stderr verbosity.
pub fn init(verbose: bool) {
    let l = logger();
    *l.verbose.lock().unwrap() = verbose;
    if log::set_logger(l).is_ok() {
        log::set_max_level(LevelFilter::Info);
    }
}

/// Starts mirroring log records into `path` (truncated).
pub fn attach(path: &Path) -> std::io::Result<()> {
    let f = File::create(path)?;
    *logger().file.lock().unwrap() = Some(f);
    Ok(())
}

pub fn detach() {
    let l = logger();
    l.flush();
    *l.file.lock().unwrap() = None;
}
