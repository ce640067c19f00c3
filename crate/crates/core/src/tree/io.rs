//! JSON wire format for scenario trees.
//!
//! Nodes are stored as a JSON object keyed by id; the id is not repeated
//! inside the node body. Duplicate keys are a hard error (plain
//! `serde_json` would silently keep the last one).

use super::{NodeId, ScenarioTree, TreeError, TreeNode, TREE_SCHEMA_VERSION};
use std::path::Path;

/// Serde adapter for the `nodes` map.
pub(super) mod node_map {
    use super::{NodeId, TreeNode};
    use indexmap::IndexMap;
    use serde::de::{self, MapAccess, Visitor};
    use serde::ser::SerializeMap;
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S>(nodes: &IndexMap<NodeId, TreeNode>, ser: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
    {
        let mut map = ser.serialize_map(Some(nodes.len()))?;
        for (id, node) in nodes {
            map.serialize_entry(id, node)?;
        }
        map.end()
    }

    pub fn deserialize<'de, D>(de: D) -> Result<IndexMap<NodeId, TreeNode>, D::Error>
    where
        D: Deserializer<'de>,
    {
        struct NodeMapVisitor;

        impl<'de> Visitor<'de> for NodeMapVisitor {
            type Value = IndexMap<NodeId, TreeNode>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of node id to node")
            }

            fn visit_map<A>(self, mut access: A) -> Result<Self::Value, A::Error>
            where
                A: MapAccess<'de>,
            {
                let mut nodes = IndexMap::with_capacity(access.size_hint().unwrap_or(0));
                while let Some(id) = access.next_key::<NodeId>()? {
                    let mut node: TreeNode = access.next_value()?;
                    node.id = id.clone();
                    if nodes.insert(id.clone(), node).is_some() {
                        return Err(de::Error::custom(format!("duplicate node id `{id}`")));
                    }
                }
                Ok(nodes)
            }
        }

        de.deserialize_map(NodeMapVisitor)
    }
}

/// Pretty JSON with a trailing newline, stable across runs.
pub fn serialize_tree(tree: &ScenarioTree) -> String {
    let mut out = serde_json::to_string_pretty(tree).expect("tree serialization cannot fail");
    out.push('\n');
    out
}

pub fn deserialize_tree(text: &str) -> Result<ScenarioTree, TreeError> {
    let tree: ScenarioTree = serde_json::from_str(text).map_err(|e| TreeError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if tree.schema_version != TREE_SCHEMA_VERSION {
        return Err(TreeError::SchemaVersion {
            found: tree.schema_version,
            expected: TREE_SCHEMA_VERSION,
        });
    }
    Ok(tree)
}

pub fn read_tree(path: impl AsRef<Path>) -> Result<ScenarioTree, TreeError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TreeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    deserialize_tree(&text)
}

pub fn write_tree(path: impl AsRef<Path>, tree: &ScenarioTree) -> Result<(), TreeError> {
    let path = path.as_ref();
    std::fs::write(path, serialize_tree(tree)).map_err(|source| TreeError::Io {
        path: path.display().to_string(),
        source,
    })
}
