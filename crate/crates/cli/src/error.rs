//! Error kinds reported on exit.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Io,
    NoTrades,
    NoEvents,
    Feed,
    Chain,
    Measures,
    Calibrate,
    Panel,
    Stylized,
    Simulation,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Config => "ConfigInvalid",
            Kind::Io => "Io",
            Kind::NoTrades => "NoTrades",
            Kind::NoEvents => "NoEvents",
            Kind::Feed => "Feed",
            Kind::Chain => "Chain",
            Kind::Measures => "Measures",
            Kind::Calibrate => "Calibrate",
            Kind::Panel => "Panel",
            Kind::Stylized => "Stylized",
            Kind::Simulation => "Simulation",
        }
    }

    /// Process exit status for this kind.
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 2,
            Kind::NoTrades | Kind::NoEvents => 3,
            _ => 1,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.as_str(), self.message)
    }
}

impl std::error::Error for CliError {}

pub fn fail(kind: Kind, message: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(CliError {
        kind,
        message: message.to_string(),
    })
}

/// Tags any error with a kind.
pub trait Tag<T> {
    fn tag(self, kind: Kind) -> anyhow::Result<T>;
}

impl<T, E: fmt::Display> Tag<T> for Result<T, E> {
    fn tag(self, kind: Kind) -> anyhow::Result<T> {
        self.map_err(|e| fail(kind, e))
    }
}

/// One JSON line for stderr, and the exit status.
pub fn report(err: &anyhow::Error) -> (String, i32) {
    let (kind, message) = match err.downcast_ref::<CliError>() {
        Some(e) => (e.kind, e.message.clone()),
        None => (Kind::Io, format!("{err:#}")),
    };
    let line = serde_json::json!({"error": kind.as_str(), "message": message}).to_string();
    (line, kind.exit_code())
}
