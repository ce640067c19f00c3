//! Scenario tree data model: validation, path enumeration, edits, pruning,
//! and serialization.
//!
//! A [`ScenarioTree`] is a rooted tree whose two top-level branches split
//! scenarios into Environmental and Interactional categories. Every
//! root-to-leaf path reads as one out-of-distribution scenario description.
//! Trees are immutable values: edits and pruning return new trees, so a tree
//! can be shared read-only across concurrent stages.

mod io;
mod prune;

pub use io::{deserialize_tree, read_tree, serialize_tree, write_tree};
pub use prune::prune_to_catalog;

use crate::validation::Violation;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

pub const TREE_SCHEMA_VERSION: u32 = 1;

/// Opaque node identifier, unique within a tree.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// The axes a node may refine. Configurable per tree; root and the two
/// category nodes are structural and carry no dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DimensionSet(pub BTreeSet<String>);

impl Default for DimensionSet {
    fn default() -> Self {
        DimensionSet(
            [
                "road-layout",
                "weather",
                "time-of-day",
                "static-object",
                "dynamic-actor",
                "actor-behavior",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        )
    }
}

impl DimensionSet {
    pub fn contains(&self, dim: &str) -> bool {
        self.0.contains(dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    #[serde(skip)]
    pub id: NodeId,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub asset_requirements: Vec<String>,
}

impl TreeNode {
    pub fn new(id: impl Into<NodeId>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            dimension: None,
            description: None,
            children: Vec::new(),
            asset_requirements: Vec::new(),
        }
    }

    pub fn with_dimension(mut self, dim: impl Into<String>) -> Self {
        self.dimension = Some(dim.into());
        self
    }

    pub fn with_description(mut self, text: impl Into<String>) -> Self {
        self.description = Some(text.into());
        self
    }

    pub fn with_requirements<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.asset_requirements = tags.into_iter().map(Into::into).collect();
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// The two top-level branches of every scenario tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySplit {
    pub environmental: NodeId,
    pub interactional: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Environmental,
    Interactional,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Environmental => "Environmental",
            Category::Interactional => "Interactional",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    pub schema_version: u32,
    /// Monotonically increasing edit counter.
    pub version: u64,
    pub root: NodeId,
    pub category_split: CategorySplit,
    #[serde(default)]
    pub dimensions: DimensionSet,
    #[serde(with = "io::node_map")]
    pub nodes: IndexMap<NodeId, TreeNode>,
}

/// Root-to-leaf path through a scenario tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreePath {
    pub node_ids: Vec<NodeId>,
    /// Concatenated node labels, root first.
    pub rendered: String,
}

impl TreePath {
    pub fn leaf_id(&self) -> &NodeId {
        self.node_ids.last().expect("paths are never empty")
    }
}

/// Payload for a node added or modified by an edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_requirements: Option<Vec<String>>,
}

/// One refinement step proposed for a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeEdit {
    /// Attach a new node under `parent`.
    AddNode { parent: NodeId, node: NodePatch },
    /// Update fields of an existing node.
    ModifyNode { id: NodeId, node: NodePatch },
    /// No structural change needed; `matched` already covers the proposal.
    NoneMatched { matched: Vec<NodeId> },
}

#[derive(Debug, thiserror::Error)]
pub enum TreeError {
    #[error("tree validation failed: {}", crate::validation::format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown node id `{0}`")]
    UnknownNode(NodeId),
    #[error("duplicate node id `{0}`")]
    DuplicateId(NodeId),
    #[error("edit rejected: {}", crate::validation::format_violations(violations))]
    EditRejected { violations: Vec<Violation> },
    #[error("tree parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported tree schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ScenarioTree {
    /// Smallest valid tree: a root plus the two category branches.
    pub fn skeleton() -> Self {
        let mut nodes = IndexMap::new();
        let mut root = TreeNode::new("root", "OOD driving scenario");
        root.children = vec![NodeId::from("environmental"), NodeId::from("interactional")];
        nodes.insert(root.id.clone(), root);
        let env = TreeNode::new("environmental", "Environmental");
        nodes.insert(env.id.clone(), env);
        let inter = TreeNode::new("interactional", "Interactional");
        nodes.insert(inter.id.clone(), inter);
        ScenarioTree {
            schema_version: TREE_SCHEMA_VERSION,
            version: 0,
            root: NodeId::from("root"),
            category_split: CategorySplit {
                environmental: NodeId::from("environmental"),
                interactional: NodeId::from("interactional"),
            },
            dimensions: DimensionSet::default(),
            nodes,
        }
    }

    pub fn node(&self, id: &NodeId) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.values().filter(|n| n.is_leaf()).count()
    }

    fn is_structural(&self, id: &NodeId) -> bool {
        *id == self.root
            || *id == self.category_split.environmental
            || *id == self.category_split.interactional
    }

    /// Check every tree invariant; an empty report means the tree is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();

        if self.node(&self.root).is_none() {
            violations.push(Violation::new(self.root.as_str(), "root id not present in nodes"));
            return violations;
        }

        // child references and single-parent
        let mut parent_of: IndexMap<&NodeId, &NodeId> = IndexMap::new();
        for (id, node) in &self.nodes {
            if node.id != *id {
                violations.push(Violation::new(
                    id.as_str(),
                    format!("node id field `{}` does not match its key", node.id),
                ));
            }
            if node.label.trim().is_empty() {
                violations.push(Violation::new(id.as_str(), "label must be non-empty"));
            }
            match &node.dimension {
                Some(dim) if !self.dimensions.contains(dim) => {
                    violations.push(Violation::new(
                        id.as_str(),
                        format!("dimension `{dim}` is not in the configured dimension set"),
                    ));
                }
                None if !self.is_structural(id) => {
                    violations.push(Violation::new(
                        id.as_str(),
                        "non-structural node must declare a dimension",
                    ));
                }
                _ => {}
            }
            let mut seen_children = BTreeSet::new();
            for child in &node.children {
                if self.node(child).is_none() {
                    violations.push(Violation::new(
                        id.as_str(),
                        format!("child `{child}` does not exist"),
                    ));
                    continue;
                }
                if !seen_children.insert(child) {
                    violations.push(Violation::new(
                        id.as_str(),
                        format!("child `{child}` listed more than once"),
                    ));
                    continue;
                }
                if *child == self.root {
                    violations.push(Violation::new(
                        id.as_str(),
                        "root must not appear as a child",
                    ));
                    continue;
                }
                if let Some(prev) = parent_of.insert(child, id) {
                    violations.push(Violation::new(
                        child.as_str(),
                        format!("multiple parents: `{prev}` and `{id}`"),
                    ));
                }
            }
        }

        // reachability from root (also rules out cycles among reachable nodes
        // because every node has at most one parent and root has none)
        let mut reachable = BTreeSet::new();
        let mut stack = vec![&self.root];
        while let Some(id) = stack.pop() {
            if !reachable.insert(id.clone()) {
                continue;
            }
            if let Some(node) = self.node(id) {
                for child in &node.children {
                    if self.nodes.contains_key(child) {
                        stack.push(child);
                    }
                }
            }
        }
        for id in self.nodes.keys() {
            if !reachable.contains(id) {
                violations.push(Violation::new(id.as_str(), "not reachable from root"));
            }
        }

        // top-level categories
        let root_children = &self.node(&self.root).expect("checked above").children;
        let expected: BTreeSet<&NodeId> = [
            &self.category_split.environmental,
            &self.category_split.interactional,
        ]
        .into_iter()
        .collect();
        let actual: BTreeSet<&NodeId> = root_children.iter().collect();
        if root_children.len() != 2 || actual != expected {
            violations.push(Violation::new(
                self.root.as_str(),
                "top-level children of root must be exactly the two category nodes",
            ));
        }

        violations
    }

    pub fn ensure_valid(&self) -> Result<(), TreeError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(TreeError::Invalid(violations))
        }
    }

    /// All root-to-leaf paths in depth-first order following child order.
    pub fn enumerate_paths(&self) -> Result<Vec<TreePath>, TreeError> {
        self.ensure_valid()?;
        let mut paths = Vec::new();
        let mut trail: Vec<NodeId> = Vec::new();
        self.collect_paths(&self.root, &mut trail, &mut paths);
        Ok(paths)
    }

    fn collect_paths(&self, id: &NodeId, trail: &mut Vec<NodeId>, out: &mut Vec<TreePath>) {
        let node = &self.nodes[id];
        trail.push(id.clone());
        if node.is_leaf() {
            let rendered = trail
                .iter()
                .map(|nid| self.nodes[nid].label.as_str())
                .collect::<Vec<_>>()
                .join(" / ");
            out.push(TreePath {
                node_ids: trail.clone(),
                rendered,
            });
        } else {
            for child in &node.children {
                self.collect_paths(child, trail, out);
            }
        }
        trail.pop();
    }

    /// Category of a root-to-leaf path, read off its top-level branch.
    pub fn path_category(&self, path: &TreePath) -> Option<Category> {
        let branch = path.node_ids.get(1)?;
        if *branch == self.category_split.environmental {
            Some(Category::Environmental)
        } else if *branch == self.category_split.interactional {
            Some(Category::Interactional)
        } else {
            None
        }
    }

    /// Whether `node_ids` is an existing root-to-leaf path.
    pub fn contains_path(&self, node_ids: &[NodeId]) -> bool {
        let Some(first) = node_ids.first() else {
            return false;
        };
        if *first != self.root {
            return false;
        }
        for pair in node_ids.windows(2) {
            match self.node(&pair[0]) {
                Some(parent) if parent.children.contains(&pair[1]) => {}
                _ => return false,
            }
        }
        self.node(node_ids.last().unwrap())
            .is_some_and(|n| n.is_leaf())
    }

    /// Build a [`TreePath`] from ids, rendering labels. Ids must form a
    /// root-to-leaf path.
    pub fn path_from_ids(&self, node_ids: &[NodeId]) -> Option<TreePath> {
        if !self.contains_path(node_ids) {
            return None;
        }
        let rendered = node_ids
            .iter()
            .map(|id| self.nodes[id].label.as_str())
            .collect::<Vec<_>>()
            .join(" / ");
        Some(TreePath {
            node_ids: node_ids.to_vec(),
            rendered,
        })
    }

    /// Apply one edit, returning the edited tree. The input is untouched;
    /// a rejected edit returns an error and no new tree.
    pub fn apply_edit(&self, edit: &TreeEdit) -> Result<ScenarioTree, TreeError> {
        match edit {
            TreeEdit::NoneMatched { .. } => Ok(self.clone()),
            TreeEdit::AddNode { parent, node } => {
                if self.node(parent).is_none() {
                    return Err(TreeError::UnknownNode(parent.clone()));
                }
                let label = node
                    .label
                    .clone()
                    .ok_or_else(|| TreeError::EditRejected {
                        violations: vec![Violation::new("edit.node.label", "add_node requires a label")],
                    })?;
                let id = match &node.id {
                    Some(id) => {
                        if self.nodes.contains_key(id) {
                            return Err(TreeError::DuplicateId(id.clone()));
                        }
                        id.clone()
                    }
                    None => self.fresh_id(&label),
                };
                let mut next = self.clone();
                let mut new_node = TreeNode::new(id.clone(), label);
                new_node.dimension = node.dimension.clone();
                new_node.description = node.description.clone();
                new_node.asset_requirements = node.asset_requirements.clone().unwrap_or_default();
                next.nodes.insert(id.clone(), new_node);
                next.nodes[parent].children.push(id);
                next.version += 1;
                let violations = next.validate();
                if violations.is_empty() {
                    Ok(next)
                } else {
                    Err(TreeError::EditRejected { violations })
                }
            }
            TreeEdit::ModifyNode { id, node } => {
                if self.node(id).is_none() {
                    return Err(TreeError::UnknownNode(id.clone()));
                }
                let mut next = self.clone();
                {
                    let target = &mut next.nodes[id];
                    if let Some(label) = &node.label {
                        target.label = label.clone();
                    }
                    if let Some(dim) = &node.dimension {
                        target.dimension = Some(dim.clone());
                    }
                    if let Some(desc) = &node.description {
                        target.description = Some(desc.clone());
                    }
                    if let Some(reqs) = &node.asset_requirements {
                        target.asset_requirements = reqs.clone();
                    }
                }
                next.version += 1;
                let violations = next.validate();
                if violations.is_empty() {
                    Ok(next)
                } else {
                    Err(TreeError::EditRejected { violations })
                }
            }
        }
    }

    /// Slug derived from a label, uniquified against existing ids.
    fn fresh_id(&self, label: &str) -> NodeId {
        let mut slug: String = label
            .to_lowercase()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
            .collect();
        while slug.contains("--") {
            slug = slug.replace("--", "-");
        }
        let slug = slug.trim_matches('-').to_string();
        let base = if slug.is_empty() { "node".to_string() } else { slug };
        let mut candidate = NodeId(base.clone());
        let mut n = 1;
        while self.nodes.contains_key(&candidate) {
            n += 1;
            candidate = NodeId(format!("{base}-{n}"));
        }
        candidate
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// root -> {environmental -> fog, interactional -> jaywalker}
    pub(crate) fn small_tree() -> ScenarioTree {
        let mut tree = ScenarioTree::skeleton();
        let fog = TreeNode::new("fog", "dense fog").with_dimension("weather");
        tree.nodes.insert(fog.id.clone(), fog);
        tree.nodes[&NodeId::from("environmental")]
            .children
            .push(NodeId::from("fog"));
        let jay =
            TreeNode::new("jaywalker", "pedestrian darts across").with_dimension("dynamic-actor");
        tree.nodes.insert(jay.id.clone(), jay);
        tree.nodes[&NodeId::from("interactional")]
            .children
            .push(NodeId::from("jaywalker"));
        tree
    }
}
