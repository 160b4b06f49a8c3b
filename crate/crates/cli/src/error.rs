use std::fmt;
use std::path::Path;

/// A command failure: a stable class name plus a human readable detail.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub class: &'static str,
    pub detail: String,
}

impl CliError {
    pub fn new(class: &'static str, detail: impl Into<String>) -> Self {
        Self { class, detail: detail.into() }
    }

    pub fn parse(path: &Path, detail: impl fmt::Display) -> Self {
        Self::new("ParseError", format!("{}: {detail}", path.display()))
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new("IoError", format!("{}: {err}", path.display()))
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Self::new("InvalidConfig", detail)
    }
}

impl fmt::Display for CliError {
    /// Single line: `error[Class]: detail`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let detail = self.detail.replace(['\n', '\r'], " ");
        write!(f, "error[{}]: {}", self.class, detail)
    }
}

impl std::error::Error for CliError {}

impl From<ksmooth_core::Error> for CliError {
    fn from(e: ksmooth_core::Error) -> Self {
        Self::new(e.class(), e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
