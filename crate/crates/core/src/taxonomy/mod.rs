//! Versioned three-level taxonomy: intention → description → example pair.
//!
//! A [`Taxonomy`] is an immutable value. Every mutation path (expert revision,
//! merge) produces a new version whose `parent_version` points back at the one
//! it was derived from. Node ids are opaque and stable across versions, which is
//! what lets [`diff_versions`] match nodes.

mod codec;
mod diff;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use codec::{deserialize, format_timestamp, serialize, CodecError};
pub use diff::{apply_diff, diff_versions, AddedNode, DiffError, FieldValue, Modification, NodeField, RemovedNode, TaxonomyDiff};
pub use validate::{validate_structure, ValidationReport, Violation, ViolationCode};

/// Opaque node identifier, unique within a taxonomy and stable across its versions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

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

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Intention,
    Description,
    Example,
}

impl Level {
    /// The level every child of a node at `self` must have.
    pub fn child_level(self) -> Option<Level> {
        match self {
            Level::Intention => Some(Level::Description),
            Level::Description => Some(Level::Example),
            Level::Example => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Intention => "intention",
            Level::Description => "description",
            Level::Example => "example",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An original sentence and its revision, written `original → revised`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExamplePair {
    pub original: String,
    pub revised: String,
}

impl ExamplePair {
    pub fn new(original: impl Into<String>, revised: impl Into<String>) -> Self {
        ExamplePair {
            original: original.into(),
            revised: revised.into(),
        }
    }
}

impl fmt::Display for ExamplePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} → {}", self.original, self.revised)
    }
}

/// The level-specific payload of a node. The level is implied by the variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeContent {
    Intention { label: String },
    Description { text: String },
    Example(ExamplePair),
}

impl NodeContent {
    pub fn level(&self) -> Level {
        match self {
            NodeContent::Intention { .. } => Level::Intention,
            NodeContent::Description { .. } => Level::Description,
            NodeContent::Example(_) => Level::Example,
        }
    }

    /// Human-readable text of the node: label, description, or `original → revised`.
    pub fn display_text(&self) -> String {
        match self {
            NodeContent::Intention { label } => label.clone(),
            NodeContent::Description { text } => text.clone(),
            NodeContent::Example(pair) => pair.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceKind {
    Generated,
    ExpertRevision,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: ProvenanceKind,
    pub note: String,
}

impl Provenance {
    pub fn new(kind: ProvenanceKind, note: impl Into<String>) -> Self {
        Provenance {
            kind,
            note: note.into(),
        }
    }

    pub fn generated() -> Self {
        Provenance::new(ProvenanceKind::Generated, "")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyNode {
    pub id: NodeId,
    pub content: NodeContent,
    pub rationale: String,
    pub children: Vec<NodeId>,
    pub provenance: Provenance,
}

impl TaxonomyNode {
    pub fn level(&self) -> Level {
        self.content.level()
    }

    /// The text used for uniqueness checks: label or description, normalized.
    /// Examples have no normalized key; they are deduplicated on the exact pair.
    pub fn normalized_key(&self) -> Option<String> {
        match &self.content {
            NodeContent::Intention { label } => Some(normalize_label(label)),
            NodeContent::Description { text } => Some(normalize_label(text)),
            NodeContent::Example(_) => None,
        }
    }
}

/// One version of a taxonomy. Immutable once built; see the module docs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    pub taxonomy_id: String,
    pub domain: String,
    pub task: String,
    pub version: u32,
    pub parent_version: Option<u32>,
    pub created_at: DateTime<Utc>,
    pub roots: Vec<NodeId>,
    pub nodes: BTreeMap<NodeId, TaxonomyNode>,
}

impl Taxonomy {
    pub fn node(&self, id: &NodeId) -> Option<&TaxonomyNode> {
        self.nodes.get(id)
    }

    /// Root intention nodes in order; dangling root ids are skipped.
    pub fn intentions(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.roots.iter().filter_map(|id| self.nodes.get(id))
    }

    pub fn children_of<'a>(&'a self, node: &'a TaxonomyNode) -> impl Iterator<Item = &'a TaxonomyNode> + 'a {
        node.children.iter().filter_map(|id| self.nodes.get(id))
    }

    /// Node ids in depth-first order starting from the roots. Each id appears at
    /// most once even if the graph is not a forest.
    pub fn depth_first(&self) -> Vec<NodeId> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<&NodeId> = self.roots.iter().rev().collect();
        while let Some(id) = stack.pop() {
            if !seen.insert(id.clone()) {
                continue;
            }
            out.push(id.clone());
            if let Some(node) = self.nodes.get(id) {
                stack.extend(node.children.iter().rev());
            }
        }
        out
    }

    /// Counts of (intentions, descriptions, examples) reachable from the roots.
    pub fn level_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for id in self.depth_first() {
            match self.nodes.get(&id).map(TaxonomyNode::level) {
                Some(Level::Intention) => counts.0 += 1,
                Some(Level::Description) => counts.1 += 1,
                Some(Level::Example) => counts.2 += 1,
                None => {}
            }
        }
        counts
    }

    /// Finds the root intention whose label normalizes to the same text as `label`.
    pub fn find_intention(&self, label: &str) -> Option<&TaxonomyNode> {
        let wanted = normalize_label(label);
        self.intentions().find(|n| n.normalized_key().as_deref() == Some(wanted.as_str()))
    }

    /// Root intention labels in order.
    pub fn intention_labels(&self) -> Vec<String> {
        self.intentions()
            .filter_map(|n| match &n.content {
                NodeContent::Intention { label } => Some(label.clone()),
                _ => None,
            })
            .collect()
    }

    /// Parent of every node that has one. Nodes listed under several parents map
    /// to the first one encountered.
    pub fn parent_map(&self) -> BTreeMap<NodeId, NodeId> {
        let mut parents = BTreeMap::new();
        for node in self.nodes.values() {
            for child in &node.children {
                parents.entry(child.clone()).or_insert_with(|| node.id.clone());
            }
        }
        parents
    }

    /// Path of display texts from the root down to `id`, inclusive.
    pub fn path_of(&self, id: &NodeId) -> Vec<String> {
        let parents = self.parent_map();
        let mut path = Vec::new();
        let mut cursor = Some(id.clone());
        let mut guard = 0;
        while let Some(current) = cursor {
            if let Some(node) = self.nodes.get(&current) {
                path.push(node.content.display_text());
            }
            cursor = parents.get(&current).cloned();
            guard += 1;
            if guard > self.nodes.len() {
                break;
            }
        }
        path.reverse();
        path
    }

    /// Equality ignoring the version header (id, version, parent, timestamp) and
    /// node provenance. Used to compare trees produced along different routes.
    pub fn same_content(&self, other: &Taxonomy) -> bool {
        if self.domain != other.domain || self.task != other.task || self.roots != other.roots {
            return false;
        }
        if self.nodes.len() != other.nodes.len() {
            return false;
        }
        self.nodes.iter().all(|(id, a)| {
            other.nodes.get(id).is_some_and(|b| {
                a.content == b.content && a.rationale == b.rationale && a.children == b.children
            })
        })
    }
}

/// Canonicalizes a label for uniqueness checks: case-folded, trimmed, internal
/// whitespace runs collapsed to one space, terminal punctuation removed.
pub fn normalize_label(raw: &str) -> String {
    let collapsed = raw
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .trim_end_matches(|c: char| c == ' ' || c.is_ascii_punctuation() || matches!(c, '…' | '。' | '！' | '？'))
        .to_string()
}

/// Builds a short identifier `<prefix>-<hex>` from a digest of `parts`.
pub fn derive_id(prefix: &str, parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    format!("{prefix}-{}", &hex::encode(digest)[..12])
}

/// Incremental builder used by generation, tests and fixtures. Assigns sequential
/// node ids (`n1`, `n2`, ...) in insertion order.
#[derive(Debug, Clone)]
pub struct TaxonomyBuilder {
    tax: Taxonomy,
    next_id: usize,
    provenance: Provenance,
}

impl TaxonomyBuilder {
    pub fn new(taxonomy_id: impl Into<String>, domain: impl Into<String>, task: impl Into<String>, created_at: DateTime<Utc>) -> Self {
        TaxonomyBuilder {
            tax: Taxonomy {
                taxonomy_id: taxonomy_id.into(),
                domain: domain.into(),
                task: task.into(),
                version: 1,
                parent_version: None,
                created_at,
                roots: Vec::new(),
                nodes: BTreeMap::new(),
            },
            next_id: 1,
            provenance: Provenance::generated(),
        }
    }

    pub fn provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    fn fresh_id(&mut self) -> NodeId {
        loop {
            let id = NodeId(format!("n{}", self.next_id));
            self.next_id += 1;
            if !self.tax.nodes.contains_key(&id) {
                return id;
            }
        }
    }

    fn insert(&mut self, parent: Option<&NodeId>, content: NodeContent, rationale: &str) -> NodeId {
        let id = self.fresh_id();
        self.tax.nodes.insert(
            id.clone(),
            TaxonomyNode {
                id: id.clone(),
                content,
                rationale: rationale.to_string(),
                children: Vec::new(),
                provenance: self.provenance.clone(),
            },
        );
        match parent {
            Some(p) => {
                if let Some(parent) = self.tax.nodes.get_mut(p) {
                    parent.children.push(id.clone());
                }
            }
            None => self.tax.roots.push(id.clone()),
        }
        id
    }

    pub fn intention(&mut self, label: &str, rationale: &str) -> NodeId {
        self.insert(None, NodeContent::Intention { label: label.to_string() }, rationale)
    }

    pub fn description(&mut self, intention: &NodeId, text: &str, rationale: &str) -> NodeId {
        self.insert(Some(intention), NodeContent::Description { text: text.to_string() }, rationale)
    }

    pub fn example(&mut self, description: &NodeId, original: &str, revised: &str, rationale: &str) -> NodeId {
        self.insert(Some(description), NodeContent::Example(ExamplePair::new(original, revised)), rationale)
    }

    /// Inserts a node with an explicit id; used when copying nodes between trees.
    pub fn insert_with_id(&mut self, parent: Option<&NodeId>, node: TaxonomyNode) {
        let id = node.id.clone();
        self.tax.nodes.insert(id.clone(), node);
        match parent {
            Some(p) => {
                if let Some(parent) = self.tax.nodes.get_mut(p) {
                    parent.children.push(id);
                }
            }
            None => self.tax.roots.push(id),
        }
    }

    pub fn build(self) -> Taxonomy {
        self.tax
    }

    /// The tree as built so far, without consuming the builder.
    pub fn snapshot(&self) -> Taxonomy {
        self.tax.clone()
    }
}
