//! Lenient extraction of a JSON object from model output.

use serde_json::{Map, Value};

/// Lowercases and collapses whitespace so that keys wrapped across lines
/// still match.
pub fn normalize_key(key: &str) -> String {
    key.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Parses the first JSON object in `raw`, tolerating code fences and prose
/// around it.
pub fn extract_object(raw: &str) -> Result<Map<String, Value>, String> {
    let trimmed = raw.trim();
    let mut candidates = vec![trimmed.to_string()];
    if let Some(inner) = strip_fence(trimmed) {
        candidates.push(inner);
    }
    if let (Some(start), Some(end)) = (trimmed.find('{'), trimmed.rfind('}')) {
        if start < end {
            candidates.push(trimmed[start..=end].to_string());
        }
    }
    let mut last_err = String::from("no JSON object found");
    for c in candidates {
        match serde_json::from_str::<Value>(&c) {
            Ok(Value::Object(map)) => return Ok(map),
            Ok(other) => last_err = format!("expected a JSON object, found {}", kind(&other)),
            Err(e) => last_err = format!("invalid JSON: {e}"),
        }
    }
    Err(last_err)
}

fn strip_fence(s: &str) -> Option<String> {
    let start = s.find("```")?;
    let after = &s[start + 3..];
    let body_start = after.find('\n').map_or(0, |k| k + 1);
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(body[..end].trim().to_string())
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Renames keys matching an expected key up to [`normalize_key`] to the
/// expected spelling. Returns the expected keys that are absent.
pub fn canonicalize_keys(map: &mut Map<String, Value>, expected: &[String]) -> Vec<String> {
    let mut missing = Vec::new();
    for want in expected {
        if map.contains_key(want) {
            continue;
        }
        let target = normalize_key(want);
        let found = map.keys().find(|k| normalize_key(k) == target).cloned();
        match found {
            Some(k) => {
                let v = map.remove(&k).expect("key just found");
                map.insert(want.clone(), v);
            }
            None => missing.push(want.clone()),
        }
    }
    missing
}
