use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A module error raised while running a scenario.
    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: &'static str,
        #[source]
        source: tendon_core::Error,
    },

    #[error(transparent)]
    Core(#[from] tendon_core::Error),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    WebSocket(Box<tungstenite::Error>),
}

impl From<tungstenite::Error> for Error {
    fn from(e: tungstenite::Error) -> Self {
        Error::WebSocket(Box::new(e))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
