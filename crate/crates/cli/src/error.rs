//! Exit-code classification.

use projctl::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    /// Target missed or coverage incomplete.
    Target,
    Hypothesis,
    Numerical,
    Config,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Target => 1,
            ExitKind::Hypothesis => 2,
            ExitKind::Numerical => 3,
            ExitKind::Config => 64,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::new(ExitKind::Config, message)
    }

    pub fn context(mut self, ctx: &str) -> Self {
        self.message = format!("{ctx}: {}", self.message);
        self
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn classify(e: &Error) -> ExitKind {
    match e {
        Error::HypothesisFailed(_) => ExitKind::Hypothesis,
        Error::OscillationBudgetExhausted { .. }
        | Error::CutoffBudgetExhausted { .. }
        | Error::SaturationInsufficient { .. }
        | Error::NoConvergence { .. } => ExitKind::Target,
        Error::RealityViolation { .. }
        | Error::NotDivergenceFree { .. }
        | Error::NegativeTime(_)
        | Error::TruncationMismatch { .. }
        | Error::OutsideTruncation(_)
        | Error::TargetOutsideTruncation
        | Error::InvalidArgument(_) => ExitKind::Config,
        _ => ExitKind::Numerical,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::new(classify(&e), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(ExitKind::Numerical, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new(ExitKind::Numerical, e.to_string())
    }
}
