//! One-writer-per-directory locking. A command takes the lock before
//! touching a run or dataset directory and releases it on exit (including
//! panics, via Drop); a crash that skips Drop leaves the file behind, which
//! the error message tells the user how to clear.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

pub const LOCK_FILE: &str = ".lock";

pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(CliError::Runtime(format!(
                    "{} is locked by another liseg command; if none is running, remove {}",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(CliError::Runtime(format!(
                "cannot create lock {}: {e}",
                path.display()
            ))),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
