use std::fmt;
use std::path::Path;

/// Failure reported as one `error[category]: message` line.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(category: &'static str, message: String) -> Self {
        Self { category, message }
    }

    pub fn config(message: String) -> Self {
        Self::new("config", message)
    }

    pub fn invalid(message: String) -> Self {
        Self::new("invalid-argument", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        so2_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    }

    pub fn exit_code(&self) -> i32 {
        match self.category {
            "usage" | "config" | "invalid-argument" => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // keep it on one line whatever the source message looks like
        let msg = self.message.replace('\n', " ");
        write!(f, "error[{}]: {}", self.category, msg.trim())
    }
}

impl std::error::Error for CliError {}

impl From<so2_core::Error> for CliError {
    fn from(e: so2_core::Error) -> Self {
        match e {
            so2_core::Error::InvalidArgument(msg) => Self::invalid(msg),
            e => Self::new(e.category(), e.to_string()),
        }
    }
}
