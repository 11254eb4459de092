use std::fmt;

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<specclip::Error> for CliError {
    fn from(e: specclip::Error) -> Self {
        use specclip::Error::*;
        match e {
            Parse(_) | Io(_) | InvalidSpec(_) | InvalidConstants(_) | NonPositiveThreshold(_) | InvalidShape { .. }
            | ShapeMismatch { .. } | RankTooLarge { .. } | EmptyMatrix | DimensionTooLarge { .. } => {
                CliError::config(e.to_string())
            }
            _ => CliError::numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(e.to_string())
    }
}
