//! Exit-code mapping and artifact writing.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::FORMAT_VERSION;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, missing file, malformed data: exit 2.
    #[error("{0}")]
    Input(String),
    /// Divergence or a failed gradient check: exit 3.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError::Numerical(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<mcsd_core::Error> for CliError {
    fn from(e: mcsd_core::Error) -> Self {
        match e {
            mcsd_core::Error::Diverged { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

/// Top-level JSON artifact: version, command, resolved config, then payload.
#[derive(Serialize)]
pub struct Envelope<'a, C: Serialize, P: Serialize> {
    pub format_version: u32,
    pub command: &'a str,
    pub config: &'a C,
    #[serde(flatten)]
    pub payload: P,
}

pub fn envelope<'a, C: Serialize, P: Serialize>(command: &'a str, config: &'a C, payload: P) -> Envelope<'a, C, P> {
    Envelope {
        format_version: FORMAT_VERSION,
        command,
        config,
        payload,
    }
}

/// Output directory; every file written is announced on stderr.
pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
        Ok(OutDir { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn text(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        std::fs::write(&path, body).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
        eprintln!("wrote {}", path.display());
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut body = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
        body.push('\n');
        self.text(name, &body)
    }

    /// Announces a file written by another routine.
    pub fn note(&self, name: &str) -> PathBuf {
        let path = self.path(name);
        eprintln!("wrote {}", path.display());
        path
    }
}

pub fn warn(warnings: &mut Vec<String>, msg: String) {
    eprintln!("warning: {msg}");
    warnings.push(msg);
}
