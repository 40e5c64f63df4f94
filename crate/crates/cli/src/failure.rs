use std::fmt;
use std::process::ExitCode;

use splitseg::harness::HarnessError;
use splitseg::system::PipelineError;
use splitseg::{CodecError, WeightsError};

/// A command failure tagged with the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Io(anyhow::Error),
    Protocol(anyhow::Error),
    Verify(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Protocol(_) => 4,
            Failure::Verify(_) => 5,
        })
    }

    fn inner(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Io(e) | Failure::Protocol(e) | Failure::Verify(e) => e,
        }
    }

    pub fn verify(msg: impl fmt::Display) -> Self {
        Failure::Verify(anyhow::anyhow!("verification failed: {msg}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.inner())
    }
}

/// Attaches a context message and an exit class to a fallible result.
pub trait Classify<T> {
    fn usage(self, ctx: impl fmt::Display) -> Result<T, Failure>;
    fn io(self, ctx: impl fmt::Display) -> Result<T, Failure>;
    fn protocol(self, ctx: impl fmt::Display) -> Result<T, Failure>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn usage(self, ctx: impl fmt::Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into().context(ctx.to_string())))
    }

    fn io(self, ctx: impl fmt::Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::Io(e.into().context(ctx.to_string())))
    }

    fn protocol(self, ctx: impl fmt::Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::Protocol(e.into().context(ctx.to_string())))
    }
}

impl From<WeightsError> for Failure {
    fn from(e: WeightsError) -> Self {
        match e {
            WeightsError::Model(_) => Failure::Usage(e.into()),
            other => Failure::Io(other.into()),
        }
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Decode(_) => Failure::Protocol(e.into()),
            other => Failure::Usage(other.into()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Codec(c) => c.into(),
            other => Failure::Usage(other.into()),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Pipeline(p) => p.into(),
            e if e.is_protocol() => Failure::Protocol(e.into()),
            other => Failure::Usage(other.into()),
        }
    }
}
