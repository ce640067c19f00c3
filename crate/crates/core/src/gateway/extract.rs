//! Pulling schema-conformant JSON documents out of free-form model output.
//!
//! Models wrap JSON in code fences, prepend reasoning, or append sign-offs.
//! Extraction therefore scans candidates in order — fenced code blocks
//! first, then any balanced JSON value found in the raw text — and returns
//! the first one that satisfies the schema.

use serde_json::Value;
use std::fmt;

/// Minimal structural schema: enough to reject malformed model output with
/// a pointed error, nothing more.
#[derive(Debug, Clone)]
pub struct JsonSchema {
    pub id: String,
    pub root: SchemaNode,
}

#[derive(Debug, Clone)]
pub enum SchemaNode {
    /// Object with required and optional fields; unknown keys are allowed.
    Object {
        required: Vec<(String, SchemaNode)>,
        optional: Vec<(String, SchemaNode)>,
    },
    Array { items: Box<SchemaNode>, min_items: usize },
    String,
    Number,
    Integer,
    Bool,
    /// String restricted to the listed variants.
    OneOf(Vec<String>),
    Any,
}

impl JsonSchema {
    pub fn new(id: impl Into<String>, root: SchemaNode) -> Self {
        JsonSchema { id: id.into(), root }
    }

    pub fn check(&self, value: &Value) -> Result<(), String> {
        self.root.check(value, "$")
    }
}

impl SchemaNode {
    pub fn object(required: Vec<(&str, SchemaNode)>, optional: Vec<(&str, SchemaNode)>) -> Self {
        SchemaNode::Object {
            required: required.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            optional: optional.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn array(items: SchemaNode) -> Self {
        SchemaNode::Array { items: Box::new(items), min_items: 0 }
    }

    pub fn array_min(items: SchemaNode, min_items: usize) -> Self {
        SchemaNode::Array { items: Box::new(items), min_items }
    }

    pub fn one_of<const N: usize>(variants: [&str; N]) -> Self {
        SchemaNode::OneOf(variants.iter().map(|s| s.to_string()).collect())
    }

    fn check(&self, value: &Value, path: &str) -> Result<(), String> {
        match self {
            SchemaNode::Any => Ok(()),
            SchemaNode::String => value
                .is_string()
                .then_some(())
                .ok_or_else(|| format!("{path}: expected string")),
            SchemaNode::Number => value
                .is_number()
                .then_some(())
                .ok_or_else(|| format!("{path}: expected number")),
            SchemaNode::Integer => (value.is_i64() || value.is_u64())
                .then_some(())
                .ok_or_else(|| format!("{path}: expected integer")),
            SchemaNode::Bool => value
                .is_boolean()
                .then_some(())
                .ok_or_else(|| format!("{path}: expected boolean")),
            SchemaNode::OneOf(variants) => match value.as_str() {
                Some(s) if variants.iter().any(|v| v == s) => Ok(()),
                Some(s) => Err(format!("{path}: `{s}` is not one of {variants:?}")),
                None => Err(format!("{path}: expected one of {variants:?}")),
            },
            SchemaNode::Array { items, min_items } => {
                let arr = value
                    .as_array()
                    .ok_or_else(|| format!("{path}: expected array"))?;
                if arr.len() < *min_items {
                    return Err(format!("{path}: expected at least {min_items} items, got {}", arr.len()));
                }
                for (i, item) in arr.iter().enumerate() {
                    items.check(item, &format!("{path}[{i}]"))?;
                }
                Ok(())
            }
            SchemaNode::Object { required, optional } => {
                let obj = value
                    .as_object()
                    .ok_or_else(|| format!("{path}: expected object"))?;
                for (key, node) in required {
                    match obj.get(key) {
                        Some(v) => node.check(v, &format!("{path}.{key}"))?,
                        None => return Err(format!("{path}: missing required field `{key}`")),
                    }
                }
                for (key, node) in optional {
                    if let Some(v) = obj.get(key) {
                        node.check(v, &format!("{path}.{key}"))?;
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug)]
pub struct ExtractError {
    pub schema_id: String,
    /// Why each candidate was rejected; empty when no candidate was found.
    pub rejections: Vec<String>,
}

impl fmt::Display for ExtractError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rejections.is_empty() {
            write!(f, "no JSON document found (schema `{}`)", self.schema_id)
        } else {
            write!(
                f,
                "no candidate satisfied schema `{}`; first rejection: {}",
                self.schema_id, self.rejections[0]
            )
        }
    }
}

impl std::error::Error for ExtractError {}

/// Content of every ``` fenced block, in order. Language tags are ignored.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after_fence = &rest[open + 3..];
        let body_start = after_fence.find('\n').map(|i| i + 1).unwrap_or(after_fence.len());
        let body = &after_fence[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    blocks
}

/// Balanced JSON values (objects or arrays) found by scanning the text.
fn balanced_values(text: &str) -> Vec<Value> {
    let mut found = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' || bytes[i] == b'[' {
            let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
            match stream.next() {
                Some(Ok(v)) => {
                    let consumed = stream.byte_offset().max(1);
                    found.push(v);
                    i += consumed;
                    continue;
                }
                _ => {}
            }
        }
        // advance one UTF-8 character
        i += 1;
        while i < bytes.len() && (bytes[i] & 0xC0) == 0x80 {
            i += 1;
        }
    }
    found
}

/// Find the first schema-conformant JSON document embedded in model output.
pub fn extract_structured(text: &str, schema: &JsonSchema) -> Result<Value, ExtractError> {
    let mut rejections = Vec::new();
    let mut candidates: Vec<Value> = Vec::new();
    for block in fenced_blocks(text) {
        match serde_json::from_str::<Value>(block.trim()) {
            Ok(v) => candidates.push(v),
            Err(_) => candidates.extend(balanced_values(block)),
        }
    }
    candidates.extend(balanced_values(text));

    for candidate in candidates {
        match schema.check(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(why) => rejections.push(why),
        }
    }
    Err(ExtractError { schema_id: schema.id.clone(), rejections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn point_schema() -> JsonSchema {
        JsonSchema::new(
            "point",
            SchemaNode::object(
                vec![("x", SchemaNode::Number), ("y", SchemaNode::Number)],
                vec![("label", SchemaNode::String)],
            ),
        )
    }

    #[test]
    fn fenced_block_extracted() {
        let text = "Here you go:\n```json\n{\"x\": 1, \"y\": 2}\n```\nLet me know!";
        let doc = extract_structured(text, &point_schema()).unwrap();
        assert_eq!(doc, json!({"x": 1, "y": 2}));
    }

    #[test]
    fn bare_document_with_trailing_prose() {
        let text = "{\"x\": 1.5, \"y\": -2} — hope that helps";
        let doc = extract_structured(text, &point_schema()).unwrap();
        assert_eq!(doc["x"], json!(1.5));
    }

    #[test]
    fn first_conformant_candidate_wins() {
        let text = r#"
Thinking: {"x": "not a number", "y": 0}
Answer:
```json
{"x": 3, "y": 4}
```
"#;
        let doc = extract_structured(text, &point_schema()).unwrap();
        assert_eq!(doc, json!({"x": 3, "y": 4}));
    }

    #[test]
    fn wrong_type_reported_with_path() {
        let text = "{\"x\": \"one\", \"y\": 2}";
        let err = extract_structured(text, &point_schema()).unwrap_err();
        assert!(err.rejections[0].contains("$.x"), "got: {:?}", err.rejections);
    }

    #[test]
    fn no_json_at_all() {
        let err = extract_structured("I cannot help with that.", &point_schema()).unwrap_err();
        assert!(err.rejections.is_empty());
        assert!(err.to_string().contains("no JSON document"));
    }

    #[test]
    fn arrays_and_enums_check() {
        let schema = JsonSchema::new(
            "labels",
            SchemaNode::array_min(SchemaNode::one_of(["a", "b"]), 1),
        );
        assert!(extract_structured("[\"a\", \"b\", \"a\"]", &schema).is_ok());
        assert!(extract_structured("[]", &schema).is_err());
        assert!(extract_structured("[\"c\"]", &schema).is_err());
    }

    #[test]
    fn nested_json_inside_unfenced_prose_and_brackets() {
        let text = "data[0] = {\"x\": 9, \"y\": 10}";
        // the stray `[0]` parses as an array but fails the schema; the object succeeds
        let doc = extract_structured(text, &point_schema()).unwrap();
        assert_eq!(doc["x"], json!(9));
    }

    #[test]
    fn fence_without_language_tag() {
        let text = "```\n{\"x\": 0, \"y\": 0}\n```";
        assert!(extract_structured(text, &point_schema()).is_ok());
    }
}
