use std::fmt;

/// Exit status 2 for bad input, 1 for failures inside the tool.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<hrnn::Error> for CliError {
    fn from(e: hrnn::Error) -> Self {
        match e {
            hrnn::Error::Contract(_) | hrnn::Error::Domain(_) => CliError::Internal(e.to_string()),
            other => CliError::User(other.to_string()),
        }
    }
}

/// Output-side failures are ours, not the user's.
pub fn write_err(path: &std::path::Path) -> impl Fn(hrnn::Error) -> CliError + '_ {
    move |e| CliError::Internal(format!("cannot write {}: {e}", path.display()))
}
