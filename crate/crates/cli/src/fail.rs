use std::fmt::Display;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub err: anyhow::Error,
}

impl Failure {
    /// Input file or data missing.
    pub const MISSING: u8 = 1;
    pub const INVALID: u8 = 2;
    /// Some items of a batch failed.
    pub const PARTIAL: u8 = 3;

    pub fn missing(msg: impl Display) -> Self {
        Self::new(Self::MISSING, msg)
    }

    pub fn invalid(msg: impl Display) -> Self {
        Self::new(Self::INVALID, msg)
    }

    pub fn partial(msg: impl Display) -> Self {
        Self::new(Self::PARTIAL, msg)
    }

    fn new(code: u8, msg: impl Display) -> Self {
        Failure {
            code,
            err: anyhow::anyhow!("{msg}"),
        }
    }
}

/// Unreadable inputs and unwritable outputs are both I/O trouble the user
/// has to fix on disk, so they share the missing-input code.
impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure {
            code: Self::MISSING,
            err,
        }
    }
}
