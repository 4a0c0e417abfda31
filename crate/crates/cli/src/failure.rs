use std::fmt;
use std::path::Path;

/// Process exit codes.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CliResult<T> = Result<T, Failure>;

impl Failure {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Failure {
            code: EXIT_DATA,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

fn code_of(e: &notipkit::Error) -> u8 {
    use notipkit::Error::*;
    match e {
        InvalidParameter(_) => EXIT_USAGE,
        Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

impl From<notipkit::Error> for Failure {
    fn from(e: notipkit::Error) -> Self {
        Failure {
            code: code_of(&e),
            error: e.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_DATA,
            error: e.into(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure {
            code: EXIT_DATA,
            error: e.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Attach the offending file to an error.
pub trait AtPath<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T, E: Into<Failure>> AtPath<T> for Result<T, E> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| {
            let f: Failure = e.into();
            Failure {
                code: f.code,
                error: f.error.context(format!("{}", path.display())),
            }
        })
    }
}
