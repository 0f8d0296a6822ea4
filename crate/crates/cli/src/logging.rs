use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use semitrace::{Error, Result};

/// Copies every log line to stderr and the run log.
struct Tee(Mutex<File>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stderr().write_all(buf)?;
        self.0.lock().expect("log file lock").write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.lock().expect("log file lock").flush()
    }
}

/// Level from `SEMITRACE_LOG` (default `info`).
pub fn init(path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let env = env_logger::Env::new().filter_or("SEMITRACE_LOG", "info");
    // A second call in the same process keeps the first logger.
    let _ = env_logger::Builder::from_env(env).target(env_logger::Target::Pipe(Box::new(Tee(Mutex::new(file))))).try_init();
    Ok(())
}
