use std::fmt;
use std::process::ExitCode;

use sn_forecast::Error;

/// Why a command failed, which decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad arguments, missing or malformed input files: exit 2.
    Input,
    /// Divergence, non-finite values, model/data mismatch: exit 3.
    Runtime,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

pub type Outcome<T> = Result<T, Failure>;

pub fn input(msg: impl fmt::Display) -> Failure {
    Failure {
        kind: Kind::Input,
        error: anyhow::anyhow!("{msg}"),
    }
}

pub fn runtime(msg: impl fmt::Display) -> Failure {
    Failure {
        kind: Kind::Runtime,
        error: anyhow::anyhow!("{msg}"),
    }
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self.kind {
            Kind::Input => ExitCode::from(2),
            Kind::Runtime => ExitCode::from(3),
        }
    }

    pub fn context(self, ctx: impl fmt::Display) -> Self {
        Failure {
            kind: self.kind,
            error: self.error.context(ctx.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Argument(_)
            | Error::Domain(_)
            | Error::Parse { .. }
            | Error::EmptySeries(_)
            | Error::CorruptCheckpoint(_)
            | Error::UnsupportedVersion { .. }
            | Error::Io { .. } => Kind::Input,
            _ => Kind::Runtime,
        };
        Failure {
            kind,
            error: e.into(),
        }
    }
}
