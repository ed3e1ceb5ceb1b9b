//! JSON decoding with located errors.

use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JsonError {
    /// Malformed JSON text.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    /// Well-formed JSON that does not match the expected shape.
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
}

impl JsonError {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        JsonError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Decodes `text`, separating syntax errors from shape errors.
pub fn from_str<T: DeserializeOwned>(text: &str) -> Result<T, JsonError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| JsonError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        JsonError::Schema {
            path: if path == "." { "$".to_string() } else { path },
            message: e.into_inner().to_string(),
        }
    })
}
