use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ExamplePair, NodeContent, NodeId, Provenance, Taxonomy, TaxonomyNode};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("taxonomy ids differ: {older} vs {newer}")]
    MismatchedTaxonomy { older: String, newer: String },
    #[error("diff does not apply: {0}")]
    DoesNotApply(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeField {
    Label,
    Description,
    Example,
    Rationale,
    Provenance,
    Children,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Text(String),
    Example(ExamplePair),
    Provenance(Provenance),
    Ids(Vec<NodeId>),
}

/// A node present only in the newer version. `parent` is `None` for roots;
/// `position` is its index in the parent's (or root) list in the newer version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddedNode {
    pub id: NodeId,
    pub path: Vec<String>,
    pub parent: Option<NodeId>,
    pub position: usize,
    #[serde(skip)]
    pub node: Option<TaxonomyNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedNode {
    pub id: NodeId,
    pub path: Vec<String>,
}

/// A single field change. `node` is `None` for a change of the root list order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modification {
    pub node: Option<NodeId>,
    pub field: NodeField,
    pub before: FieldValue,
    pub after: FieldValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyDiff {
    pub taxonomy_id: String,
    pub from_version: u32,
    pub to_version: u32,
    pub added: Vec<AddedNode>,
    pub removed: Vec<RemovedNode>,
    pub modified: Vec<Modification>,
    #[serde(skip)]
    header: Option<Header>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Header {
    domain: String,
    task: String,
    parent_version: Option<u32>,
    created_at: DateTime<Utc>,
}

impl TaxonomyDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }
}

/// Node-level difference between two versions of the same taxonomy. Nodes are
/// matched by id; unchanged nodes never appear. A child-list change that is fully
/// explained by additions and removals is not reported as a modification; pure
/// reorders (including of the root list) are.
pub fn diff_versions(older: &Taxonomy, newer: &Taxonomy) -> Result<TaxonomyDiff, DiffError> {
    if older.taxonomy_id != newer.taxonomy_id {
        return Err(DiffError::MismatchedTaxonomy {
            older: older.taxonomy_id.clone(),
            newer: newer.taxonomy_id.clone(),
        });
    }

    let old_ids: BTreeSet<&NodeId> = older.nodes.keys().collect();
    let new_ids: BTreeSet<&NodeId> = newer.nodes.keys().collect();
    let mut added_ids: BTreeSet<&NodeId> = new_ids.difference(&old_ids).copied().collect();
    let mut removed_ids: BTreeSet<&NodeId> = old_ids.difference(&new_ids).copied().collect();

    // A node whose level changed is treated as removed and re-added.
    for id in old_ids.intersection(&new_ids) {
        if older.nodes[*id].level() != newer.nodes[*id].level() {
            added_ids.insert(id);
            removed_ids.insert(id);
        }
    }

    let new_parents = newer.parent_map();
    let mut added = Vec::new();
    for id in newer.depth_first().iter().chain(newer.nodes.keys()) {
        if !added_ids.contains(id) || added.iter().any(|a: &AddedNode| &a.id == id) {
            continue;
        }
        let parent = new_parents.get(id).cloned();
        let siblings = match &parent {
            Some(p) => &newer.nodes[p].children,
            None => &newer.roots,
        };
        let position = siblings.iter().position(|s| s == id).unwrap_or(siblings.len());
        added.push(AddedNode {
            id: id.clone(),
            path: newer.path_of(id),
            parent,
            position,
            node: Some(newer.nodes[id].clone()),
        });
    }

    let removed = older
        .depth_first()
        .iter()
        .chain(older.nodes.keys())
        .filter(|id| removed_ids.contains(id))
        .fold(Vec::<RemovedNode>::new(), |mut acc, id| {
            if !acc.iter().any(|r| &r.id == id) {
                acc.push(RemovedNode {
                    id: id.clone(),
                    path: older.path_of(id),
                });
            }
            acc
        });

    let mut modified = Vec::new();
    let survivors = |list: &[NodeId], skip: &BTreeSet<&NodeId>| -> Vec<NodeId> {
        list.iter().filter(|id| !skip.contains(id)).cloned().collect()
    };
    if survivors(&older.roots, &removed_ids) != survivors(&newer.roots, &added_ids) {
        modified.push(Modification {
            node: None,
            field: NodeField::Children,
            before: FieldValue::Ids(older.roots.clone()),
            after: FieldValue::Ids(newer.roots.clone()),
        });
    }
    for id in old_ids.intersection(&new_ids) {
        if added_ids.contains(id) {
            continue;
        }
        let (a, b) = (&older.nodes[*id], &newer.nodes[*id]);
        let mut change = |field, before, after| {
            modified.push(Modification {
                node: Some((*id).clone()),
                field,
                before,
                after,
            })
        };
        match (&a.content, &b.content) {
            (NodeContent::Intention { label: x }, NodeContent::Intention { label: y }) if x != y => {
                change(NodeField::Label, FieldValue::Text(x.clone()), FieldValue::Text(y.clone()))
            }
            (NodeContent::Description { text: x }, NodeContent::Description { text: y }) if x != y => {
                change(NodeField::Description, FieldValue::Text(x.clone()), FieldValue::Text(y.clone()))
            }
            (NodeContent::Example(x), NodeContent::Example(y)) if x != y => {
                change(NodeField::Example, FieldValue::Example(x.clone()), FieldValue::Example(y.clone()))
            }
            _ => {}
        }
        if a.rationale != b.rationale {
            change(NodeField::Rationale, FieldValue::Text(a.rationale.clone()), FieldValue::Text(b.rationale.clone()));
        }
        if a.provenance != b.provenance {
            change(
                NodeField::Provenance,
                FieldValue::Provenance(a.provenance.clone()),
                FieldValue::Provenance(b.provenance.clone()),
            );
        }
        if survivors(&a.children, &removed_ids) != survivors(&b.children, &added_ids) {
            change(NodeField::Children, FieldValue::Ids(a.children.clone()), FieldValue::Ids(b.children.clone()));
        }
    }

    Ok(TaxonomyDiff {
        taxonomy_id: newer.taxonomy_id.clone(),
        from_version: older.version,
        to_version: newer.version,
        added,
        removed,
        modified,
        header: Some(Header {
            domain: newer.domain.clone(),
            task: newer.task.clone(),
            parent_version: newer.parent_version,
            created_at: newer.created_at,
        }),
    })
}

/// Applies `diff` to `older`, reproducing the version it was computed against.
pub fn apply_diff(older: &Taxonomy, diff: &TaxonomyDiff) -> Result<Taxonomy, DiffError> {
    if older.taxonomy_id != diff.taxonomy_id {
        return Err(DiffError::MismatchedTaxonomy {
            older: older.taxonomy_id.clone(),
            newer: diff.taxonomy_id.clone(),
        });
    }
    if older.version != diff.from_version {
        return Err(DiffError::DoesNotApply(format!(
            "diff starts at version {} but taxonomy is version {}",
            diff.from_version, older.version
        )));
    }
    let mut out = older.clone();
    out.version = diff.to_version;
    if let Some(h) = &diff.header {
        out.domain = h.domain.clone();
        out.task = h.task.clone();
        out.parent_version = h.parent_version;
        out.created_at = h.created_at;
    }

    let removed: BTreeSet<&NodeId> = diff.removed.iter().map(|r| &r.id).collect();
    for id in &removed {
        if out.nodes.remove(*id).is_none() {
            return Err(DiffError::DoesNotApply(format!("removed node {id} not present")));
        }
    }
    out.roots.retain(|id| !removed.contains(id));
    for node in out.nodes.values_mut() {
        node.children.retain(|id| !removed.contains(id));
    }

    let mut replaced_lists: BTreeSet<Option<NodeId>> = BTreeSet::new();
    for m in &diff.modified {
        let node = match &m.node {
            None => {
                let FieldValue::Ids(ids) = &m.after else {
                    return Err(DiffError::DoesNotApply("root change without id list".into()));
                };
                out.roots = ids.clone();
                replaced_lists.insert(None);
                continue;
            }
            Some(id) => out
                .nodes
                .get_mut(id)
                .ok_or_else(|| DiffError::DoesNotApply(format!("modified node {id} not present")))?,
        };
        match (m.field, &m.after, &mut node.content) {
            (NodeField::Label, FieldValue::Text(t), NodeContent::Intention { label }) => *label = t.clone(),
            (NodeField::Description, FieldValue::Text(t), NodeContent::Description { text }) => *text = t.clone(),
            (NodeField::Example, FieldValue::Example(p), NodeContent::Example(pair)) => *pair = p.clone(),
            (NodeField::Rationale, FieldValue::Text(t), _) => node.rationale = t.clone(),
            (NodeField::Provenance, FieldValue::Provenance(p), _) => node.provenance = p.clone(),
            (NodeField::Children, FieldValue::Ids(ids), _) => {
                node.children = ids.clone();
                replaced_lists.insert(Some(node.id.clone()));
            }
            (field, ..) => {
                return Err(DiffError::DoesNotApply(format!("field {field:?} does not fit node {}", node.id)));
            }
        }
    }

    let added_ids: BTreeSet<&NodeId> = diff.added.iter().map(|a| &a.id).collect();
    for a in &diff.added {
        let node = a
            .node
            .clone()
            .ok_or_else(|| DiffError::DoesNotApply(format!("added node {} carries no body", a.id)))?;
        out.nodes.insert(a.id.clone(), node);
    }
    // Insert into parents in ascending position so earlier inserts do not shift later ones.
    let mut inserts: BTreeMap<Option<NodeId>, Vec<(usize, NodeId)>> = BTreeMap::new();
    for a in &diff.added {
        let parent_is_new = a.parent.as_ref().is_some_and(|p| added_ids.contains(p));
        if parent_is_new || replaced_lists.contains(&a.parent) {
            continue;
        }
        inserts.entry(a.parent.clone()).or_default().push((a.position, a.id.clone()));
    }
    for (parent, mut items) in inserts {
        items.sort();
        let list = match &parent {
            None => &mut out.roots,
            Some(p) => {
                &mut out
                    .nodes
                    .get_mut(p)
                    .ok_or_else(|| DiffError::DoesNotApply(format!("parent {p} not present")))?
                    .children
            }
        };
        for (pos, id) in items {
            if pos > list.len() {
                return Err(DiffError::DoesNotApply(format!("position {pos} out of range for {id}")));
            }
            list.insert(pos, id);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::TaxonomyBuilder;

    fn base() -> Taxonomy {
        let mut b = TaxonomyBuilder::new("t", "legal", "email", Utc::now());
        let i = b.intention("Legal Argument Strengthening", "r");
        let d = b.description(&i, "Adding supporting legal precedents", "r");
        b.example(&d, "a", "b", "r");
        b.example(&d, "c", "d", "r");
        let d2 = b.description(&i, "Integrating factual evidence", "r");
        b.example(&d2, "e", "f", "r");
        b.build()
    }

    #[test]
    fn identity_diff_is_empty() {
        let t = base();
        let d = diff_versions(&t, &t).unwrap();
        assert!(d.is_empty());
        assert_eq!(apply_diff(&t, &d).unwrap(), t);
    }

    #[test]
    fn added_description_only() {
        let t = base();
        let mut newer = t.clone();
        newer.version = 2;
        newer.parent_version = Some(1);
        let id = NodeId::from("n99");
        newer.nodes.insert(
            id.clone(),
            TaxonomyNode {
                id: id.clone(),
                content: NodeContent::Description {
                    text: "Addressing Counterarguments".into(),
                },
                rationale: "anticipate weaknesses".into(),
                children: vec![],
                provenance: Provenance::generated(),
            },
        );
        newer.nodes.get_mut(&NodeId::from("n1")).unwrap().children.push(id.clone());
        let d = diff_versions(&t, &newer).unwrap();
        assert_eq!(d.added.len(), 1);
        assert_eq!(d.added[0].id, id);
        assert_eq!(d.added[0].path, ["Legal Argument Strengthening", "Addressing Counterarguments"]);
        assert!(d.removed.is_empty());
        assert!(d.modified.is_empty());
        assert_eq!(apply_diff(&t, &d).unwrap(), newer);
    }

    #[test]
    fn rationale_change() {
        let t = base();
        let mut newer = t.clone();
        newer.nodes.get_mut(&NodeId::from("n2")).unwrap().rationale = "better".into();
        let d = diff_versions(&t, &newer).unwrap();
        assert_eq!(
            d.modified,
            vec![Modification {
                node: Some(NodeId::from("n2")),
                field: NodeField::Rationale,
                before: FieldValue::Text("r".into()),
                after: FieldValue::Text("better".into()),
            }]
        );
        assert_eq!(apply_diff(&t, &d).unwrap(), newer);
    }

    #[test]
    fn reorder_is_modification() {
        let t = base();
        let mut newer = t.clone();
        newer.nodes.get_mut(&NodeId::from("n1")).unwrap().children.reverse();
        let d = diff_versions(&t, &newer).unwrap();
        assert!(d.added.is_empty() && d.removed.is_empty());
        assert_eq!(d.modified.len(), 1);
        assert_eq!(d.modified[0].field, NodeField::Children);
        assert_eq!(apply_diff(&t, &d).unwrap(), newer);
    }

    #[test]
    fn removal_of_subtree() {
        let t = base();
        let mut newer = t.clone();
        newer.nodes.get_mut(&NodeId::from("n1")).unwrap().children.retain(|c| c.0 != "n5");
        newer.nodes.remove(&NodeId::from("n5"));
        newer.nodes.remove(&NodeId::from("n6"));
        let d = diff_versions(&t, &newer).unwrap();
        assert_eq!(d.removed.len(), 2);
        assert!(d.modified.is_empty());
        assert_eq!(apply_diff(&t, &d).unwrap(), newer);
    }

    #[test]
    fn mismatched_ids() {
        let t = base();
        let mut other = t.clone();
        other.taxonomy_id = "other".into();
        assert!(matches!(diff_versions(&t, &other), Err(DiffError::MismatchedTaxonomy { .. })));
    }
}
