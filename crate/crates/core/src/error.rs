use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid expression: {0}")]
    InvalidExpression(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no admissible {phase} volume root at T = {temperature} K, p = {pressure} Pa")]
    NoVolumeRoot {
        temperature: f64,
        pressure: f64,
        phase: String,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}
