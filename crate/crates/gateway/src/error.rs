use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("template {template}: placeholder {{{name}}} is not bound")]
    MissingPlaceholder { template: String, name: String },

    #[error("template {template}: binding {name:?} matches no placeholder")]
    ExtraBinding { template: String, name: String },

    #[error("malformed template: {0}")]
    Template(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("unexpected response: {0}")]
    Response(String),

    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
