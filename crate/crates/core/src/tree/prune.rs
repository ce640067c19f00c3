//! Pruning a scenario tree down to what an asset catalog can actually stage.

use super::{NodeId, ScenarioTree, TreeError, TreeNode};
use crate::catalog::AssetCatalog;
use indexmap::IndexMap;
use std::collections::BTreeSet;

/// Drop every subtree whose asset requirements the catalog cannot satisfy,
/// then drop grouping nodes left without any leaf scenario. The root and the
/// two category nodes always survive. The version counter is carried over
/// unchanged: pruning is a projection, not an edit.
pub fn prune_to_catalog(
    tree: &ScenarioTree,
    catalog: &AssetCatalog,
) -> Result<ScenarioTree, TreeError> {
    tree.ensure_valid()?;
    let universe = catalog.tag_universe();
    let satisfiable =
        |node: &TreeNode| node.asset_requirements.iter().all(|t| universe.contains(t));

    // Kept ids plus their surviving children, in one DFS. A node survives if
    // its own requirements are satisfiable and either it was a leaf in the
    // input or at least one child survives. Structural nodes are exempt.
    fn keep(
        tree: &ScenarioTree,
        id: &NodeId,
        satisfiable: &dyn Fn(&TreeNode) -> bool,
        kept_children: &mut IndexMap<NodeId, Vec<NodeId>>,
    ) -> bool {
        let node = &tree.nodes[id];
        let structural = *id == tree.root
            || *id == tree.category_split.environmental
            || *id == tree.category_split.interactional;
        if !structural && !satisfiable(node) {
            return false;
        }
        let survivors: Vec<NodeId> = node
            .children
            .iter()
            .filter(|c| keep(tree, c, satisfiable, kept_children))
            .cloned()
            .collect();
        if !structural && !node.is_leaf() && survivors.is_empty() {
            return false;
        }
        kept_children.insert(id.clone(), survivors);
        true
    }

    let mut kept_children = IndexMap::new();
    keep(tree, &tree.root, &satisfiable, &mut kept_children);
    let kept_ids: BTreeSet<&NodeId> = kept_children.keys().collect();

    let mut nodes = IndexMap::with_capacity(kept_ids.len());
    for (id, node) in &tree.nodes {
        if !kept_ids.contains(id) {
            continue;
        }
        let mut node = node.clone();
        node.children = kept_children[id].clone();
        nodes.insert(id.clone(), node);
    }

    Ok(ScenarioTree {
        schema_version: tree.schema_version,
        version: tree.version,
        root: tree.root.clone(),
        category_split: tree.category_split.clone(),
        dimensions: tree.dimensions.clone(),
        nodes,
    })
}
