//! Lossless JSON interchange for models, schema `tm-json/1`. Keys are
//! emitted sorted; `import_json(export_json(m))` equals `m` structurally.

use serde_json::Value as Json;
use thiserror::Error;

use crate::model::Model;

pub const JSON_SCHEMA_VERSION: &str = "tm-json/1";

#[derive(Debug, Error)]
pub enum JsonError {
    #[error("document is not valid JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("missing schema version field `version`")]
    MissingVersion,
    #[error("unsupported schema version `{0}` (expected {JSON_SCHEMA_VERSION})")]
    VersionMismatch(String),
    #[error("malformed model document: {0}")]
    Malformed(String),
}

/// Serializes `model` with a `version` field. serde_json maps are
/// BTreeMap-backed, so keys come out sorted and the output is
/// byte-deterministic.
pub fn export_json(model: &Model) -> String {
    let mut value = serde_json::to_value(model).expect("models serialize infallibly");
    value
        .as_object_mut()
        .expect("a model serializes to an object")
        .insert(
            "version".to_string(),
            Json::String(JSON_SCHEMA_VERSION.to_string()),
        );
    let mut out = serde_json::to_string_pretty(&value).expect("serializable");
    out.push('\n');
    out
}

pub fn import_json(text: &str) -> Result<Model, JsonError> {
    let value: Json = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| JsonError::Malformed("top level must be an object".to_string()))?;
    match obj.get("version") {
        None => return Err(JsonError::MissingVersion),
        Some(Json::String(v)) if v == JSON_SCHEMA_VERSION => {}
        Some(v) => return Err(JsonError::VersionMismatch(v.to_string())),
    }
    serde_json::from_value(value).map_err(|e| JsonError::Malformed(e.to_string()))
}
