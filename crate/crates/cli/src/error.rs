use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("numeric abort: {message} (diagnostics written to {})", diagnostics.display())]
    Numeric { message: String, diagnostics: PathBuf },
    #[error("provenance mismatch: {0}")]
    Provenance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric { .. } => 3,
            CliError::Provenance(_) => 4,
        }
    }
}

impl From<proxyrca::Error> for CliError {
    fn from(e: proxyrca::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
