use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Level, NodeContent, NodeId, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    DuplicateLabel,
    EmptyRationale,
    BadChildLevel,
    DanglingChild,
    IdenticalExamplePair,
    /// Node listed as a child (or root) more than once.
    MultipleParents,
    /// Node present in the table but not reachable from any root.
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub node_id: NodeId,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, code: ViolationCode) -> usize {
        self.violations.iter().filter(|v| v.code == code).count()
    }

    /// One line per violation; empty string when clean.
    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| format!("{:?} at {}: {}", v.code, v.node_id, v.message))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Reports every structural invariant violation of `tax`. Never fails; problems
/// are collected, sorted by (node id, code).
pub fn validate_structure(tax: &Taxonomy) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |code, node_id: &NodeId, message: String| {
        violations.push(Violation {
            code,
            node_id: node_id.clone(),
            message,
        })
    };

    // Every reference (root entry or child entry) counts as one parent slot.
    let mut references: BTreeMap<&NodeId, usize> = BTreeMap::new();

    for root in &tax.roots {
        *references.entry(root).or_default() += 1;
        match tax.nodes.get(root) {
            None => push(ViolationCode::DanglingChild, root, "root id does not resolve".into()),
            Some(node) if node.level() != Level::Intention => push(
                ViolationCode::BadChildLevel,
                root,
                format!("root must be an intention, found {}", node.level()),
            ),
            Some(_) => {}
        }
    }

    for node in tax.nodes.values() {
        if node.rationale.trim().is_empty() {
            push(ViolationCode::EmptyRationale, &node.id, "rationale is empty".into());
        }
        if let NodeContent::Example(pair) = &node.content {
            if pair.original == pair.revised {
                push(
                    ViolationCode::IdenticalExamplePair,
                    &node.id,
                    "example original and revised text are identical".into(),
                );
            }
        }
        let expected = node.level().child_level();
        for child_id in &node.children {
            *references.entry(child_id).or_default() += 1;
            match (tax.nodes.get(child_id), expected) {
                (None, _) => push(
                    ViolationCode::DanglingChild,
                    &node.id,
                    format!("child {child_id} does not resolve"),
                ),
                (Some(child), None) => push(
                    ViolationCode::BadChildLevel,
                    &node.id,
                    format!("{} nodes are leaves but list child {} ({})", node.level(), child_id, child.level()),
                ),
                (Some(child), Some(level)) if child.level() != level => push(
                    ViolationCode::BadChildLevel,
                    &node.id,
                    format!("child {} is a {} but {} expected", child_id, child.level(), level),
                ),
                _ => {}
            }
        }

        if node.level() == Level::Intention {
            duplicate_siblings(tax, &node.children, &mut push);
        }
    }

    duplicate_siblings(tax, &tax.roots, &mut push);

    for (id, count) in &references {
        if *count > 1 && tax.nodes.contains_key(*id) {
            push(
                ViolationCode::MultipleParents,
                id,
                format!("referenced {count} times; every node needs exactly one parent"),
            );
        }
    }

    let reachable: BTreeSet<NodeId> = tax.depth_first().into_iter().collect();
    for id in tax.nodes.keys() {
        if !reachable.contains(id) {
            push(ViolationCode::Unreachable, id, "not reachable from any root".into());
        }
    }

    violations.sort_by(|a, b| (&a.node_id, a.code, &a.message).cmp(&(&b.node_id, b.code, &b.message)));
    ValidationReport { violations }
}

/// Flags every sibling after the first whose normalized text repeats.
fn duplicate_siblings(tax: &Taxonomy, siblings: &[NodeId], push: &mut impl FnMut(ViolationCode, &NodeId, String)) {
    let mut seen: BTreeMap<String, &NodeId> = BTreeMap::new();
    for id in siblings {
        let Some(node) = tax.nodes.get(id) else { continue };
        let Some(key) = node.normalized_key() else { continue };
        match seen.get(&key) {
            Some(first) => push(
                ViolationCode::DuplicateLabel,
                id,
                format!("\"{}\" duplicates {} after normalization", node.content.display_text(), first),
            ),
            None => {
                seen.insert(key, id);
            }
        }
    }
}
