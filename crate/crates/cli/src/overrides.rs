use serde::de::DeserializeOwned;
use serde_json::Value;

/// A problem with user input: bad flags, unreadable config, unknown keys.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// Applies `key=value` overrides to a JSON document and deserializes it.
/// Keys are dotted paths and must already exist in the document.
pub fn apply_overrides<T: DeserializeOwned>(mut doc: Value, overrides: &[String], context: &str) -> Result<T, InputError> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| InputError(format!("override {item:?} is not KEY=VALUE")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| InputError(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
    }
    serde_json::from_value(doc).map_err(|e| InputError(format!("invalid config {context}: {e}")))
}
