use thiserror::Error;

/// Failures surfaced by the front end, each tied to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<aerodeblur_core::Error> for CliError {
    fn from(e: aerodeblur_core::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use aerodeblur_core::Error;

    #[test]
    fn core_errors_map_to_exit_codes() {
        assert_eq!(CliError::from(Error::Diverged("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(Error::Numerical("x".into()).in_patch(2)).exit_code(), 3);
        assert_eq!(CliError::from(Error::InvalidParameter("x".into())).exit_code(), 2);
    }
}
