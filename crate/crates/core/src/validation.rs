//! Shared validation-report shape used by tree and scenario-config checks.

use serde::{Deserialize, Serialize};
use std::fmt;

/// One broken rule, anchored to the node id or field path that broke it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Node id or field path (e.g. `actors[2].behavior.id`).
    pub at: String,
    pub rule: String,
}

impl Violation {
    pub fn new(at: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            at: at.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.at, self.rule)
    }
}

pub fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
