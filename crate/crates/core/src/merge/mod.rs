//! Merging several experts' finalized taxonomies for one domain and task.
//!
//! Pass 1 is a deterministic union: roots and sibling descriptions collapse on
//! their normalized text, examples on the exact pair. Pass 2, when a provider is
//! given, asks the model about near-duplicate pairs and applies each proposal
//! only if the tree still validates. Pass 3 re-validates the result.

mod semantic;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::gateway::{ChatProvider, GatewayError};
use crate::taxonomy::{
    derive_id, format_timestamp, normalize_label, serialize, validate_structure, Level, NodeContent, NodeId, Provenance, ProvenanceKind,
    Taxonomy, TaxonomyNode, ValidationReport,
};

use semantic::candidate_pairs;
pub use semantic::{edit_distance, parse_proposal, propose_semantic_merges, CandidatePair, MergeProposal, MERGE_TAG};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InputRef {
    pub taxonomy_id: String,
    pub version: u32,
}

impl std::fmt::Display for InputRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} v{}", self.taxonomy_id, self.version)
    }
}

/// A node of one input taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceRef {
    pub taxonomy_id: String,
    pub version: u32,
    pub node_id: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollapseReason {
    ExactNormalizedMatch,
    LlmProposedMerge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collapse {
    pub level: Level,
    pub surviving: NodeId,
    pub text: String,
    pub absorbed: Vec<SourceRef>,
    pub reason: CollapseReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedProposal {
    pub proposal: MergeProposal,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedProposal {
    pub left: NodeId,
    pub right: NodeId,
    pub raw: String,
    pub reason: String,
}

/// Two inputs from the same taxonomy lineage that hold different content under
/// the same node id. Both variants are kept; a human should look.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergentVariant {
    pub node_id: NodeId,
    pub variants: Vec<(InputRef, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub inputs: Vec<InputRef>,
    pub collapsed: Vec<Collapse>,
    pub added_from: BTreeMap<NodeId, String>,
    pub verification: ValidationReport,
    pub proposals_applied: Vec<MergeProposal>,
    pub proposals_skipped: Vec<SkippedProposal>,
    pub proposals_dropped: Vec<DroppedProposal>,
    pub divergent: Vec<DivergentVariant>,
}

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("merge needs at least one input")]
    NoInputs,
    /// `found` and `expected` read `domain/task`.
    #[error("input {index} ({taxonomy_id}) is for {found}, expected {expected}")]
    DomainMismatch {
        index: usize,
        taxonomy_id: String,
        found: String,
        expected: String,
    },
    #[error("input {index} ({taxonomy_id}) is invalid: {}", .report.summary())]
    InvalidInput { index: usize, taxonomy_id: String, report: ValidationReport },
    #[error("semantic merge call failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("merged taxonomy failed verification: {}", .0.summary())]
    Verification(ValidationReport),
}

#[derive(Debug, Clone, Default)]
pub struct MergeOptions {
    /// Id for the merged taxonomy; derived from the inputs when absent.
    pub taxonomy_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Source {
    input: usize,
    node: NodeId,
    rationale: String,
}

/// Working tree used while merging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct MNode {
    pub(crate) id: NodeId,
    pub(crate) content: NodeContent,
    sources: Vec<Source>,
    notes: Vec<String>,
    pub(crate) children: Vec<MNode>,
}

fn merge_key(content: &NodeContent) -> String {
    match content {
        NodeContent::Intention { label } => normalize_label(label),
        NodeContent::Description { text } => normalize_label(text),
        NodeContent::Example(pair) => format!("{}\u{0}{}", pair.original, pair.revised),
    }
}

fn set_text(content: &mut NodeContent, text: &str) {
    match content {
        NodeContent::Intention { label } => *label = text.to_string(),
        NodeContent::Description { text: t } => *t = text.to_string(),
        NodeContent::Example(_) => {}
    }
}

struct Ctx<'a> {
    inputs: &'a [Taxonomy],
    refs: Vec<InputRef>,
    used: BTreeSet<NodeId>,
    collapsed: Vec<Collapse>,
}

impl Ctx<'_> {
    fn alloc(&mut self, input: usize, preferred: &NodeId) -> NodeId {
        if self.used.insert(preferred.clone()) {
            return preferred.clone();
        }
        let r = &self.refs[input];
        let mut salt = 0u32;
        loop {
            let id = NodeId(derive_id("m", &[&r.taxonomy_id, &r.version.to_string(), preferred.as_str(), &salt.to_string()]));
            if self.used.insert(id.clone()) {
                return id;
            }
            salt += 1;
        }
    }

    fn source_ref(&self, s: &Source) -> SourceRef {
        SourceRef {
            taxonomy_id: self.refs[s.input].taxonomy_id.clone(),
            version: self.refs[s.input].version,
            node_id: s.node.clone(),
        }
    }

    fn import(&mut self, input: usize, id: &NodeId) -> MNode {
        let node = &self.inputs[input].nodes[id];
        let new_id = self.alloc(input, id);
        let children = node.children.clone();
        let mut m = MNode {
            id: new_id,
            content: node.content.clone(),
            sources: vec![Source {
                input,
                node: id.clone(),
                rationale: node.rationale.clone(),
            }],
            notes: Vec::new(),
            children: Vec::new(),
        };
        for c in &children {
            let child = self.import(input, c);
            m.children.push(child);
        }
        m
    }

    /// Adds `id` from `input` into `siblings`, collapsing onto an existing
    /// sibling with the same key.
    fn absorb(&mut self, siblings: &mut Vec<MNode>, input: usize, id: &NodeId) {
        let node = &self.inputs[input].nodes[id];
        let key = merge_key(&node.content);
        match siblings.iter().position(|s| merge_key(&s.content) == key) {
            Some(pos) => {
                let rationale = node.rationale.clone();
                let children = node.children.clone();
                let source = Source {
                    input,
                    node: id.clone(),
                    rationale,
                };
                let absorbed = self.source_ref(&source);
                let target = &mut siblings[pos];
                target.sources.push(source);
                self.collapsed.push(Collapse {
                    level: target.content.level(),
                    surviving: target.id.clone(),
                    text: target.content.display_text(),
                    absorbed: vec![absorbed],
                    reason: CollapseReason::ExactNormalizedMatch,
                });
                let mut kids = std::mem::take(&mut siblings[pos].children);
                for c in &children {
                    self.absorb(&mut kids, input, c);
                }
                siblings[pos].children = kids;
            }
            None => {
                let m = self.import(input, id);
                siblings.push(m);
            }
        }
    }
}

/// Unions `incoming` into `target` using the pass-1 collapse rules; ids of
/// `incoming` nodes that collapse disappear.
pub(crate) fn union_children(target: &mut Vec<MNode>, incoming: Vec<MNode>) {
    for node in incoming {
        let key = merge_key(&node.content);
        match target.iter().position(|t| merge_key(&t.content) == key) {
            Some(pos) => {
                let t = &mut target[pos];
                t.sources.extend(node.sources);
                t.notes.extend(node.notes);
                union_children(&mut t.children, node.children);
            }
            None => target.push(node),
        }
    }
}

fn combined_rationale(node: &MNode, refs: &[InputRef]) -> String {
    let mut distinct: Vec<&str> = Vec::new();
    for s in &node.sources {
        if !distinct.contains(&s.rationale.as_str()) {
            distinct.push(&s.rationale);
        }
    }
    let base = if distinct.len() == 1 {
        distinct[0].to_string()
    } else {
        let mut lines: Vec<String> = node
            .sources
            .iter()
            .map(|s| format!("[{}] {}", refs[s.input], s.rationale))
            .collect();
        lines.sort();
        lines.dedup();
        lines.join("\n")
    };
    node.notes.iter().fold(base, |acc, n| format!("{acc}\n[merge] {n}"))
}

fn provenance_note(node: &MNode, refs: &[InputRef]) -> String {
    let mut seen: Vec<String> = Vec::new();
    for s in &node.sources {
        let r = refs[s.input].to_string();
        if !seen.contains(&r) {
            seen.push(r);
        }
    }
    let mut note = format!("merged from {}", seen.join(", "));
    if !node.notes.is_empty() {
        note.push_str("; semantic merge");
    }
    note
}

fn build(roots: &[MNode], header: &Taxonomy, refs: &[InputRef]) -> Taxonomy {
    fn add(node: &MNode, refs: &[InputRef], out: &mut BTreeMap<NodeId, TaxonomyNode>) {
        out.insert(
            node.id.clone(),
            TaxonomyNode {
                id: node.id.clone(),
                content: node.content.clone(),
                rationale: combined_rationale(node, refs),
                children: node.children.iter().map(|c| c.id.clone()).collect(),
                provenance: Provenance::new(ProvenanceKind::Merge, provenance_note(node, refs)),
            },
        );
        for c in &node.children {
            add(c, refs, out);
        }
    }
    let mut nodes = BTreeMap::new();
    for r in roots {
        add(r, refs, &mut nodes);
    }
    Taxonomy {
        roots: roots.iter().map(|r| r.id.clone()).collect(),
        nodes,
        ..header.clone()
    }
}

fn find_divergent(inputs: &[Taxonomy], refs: &[InputRef]) -> Vec<DivergentVariant> {
    let mut by_node: BTreeMap<(String, NodeId), Vec<(InputRef, String)>> = BTreeMap::new();
    for (i, t) in inputs.iter().enumerate() {
        for (id, n) in &t.nodes {
            by_node
                .entry((t.taxonomy_id.clone(), id.clone()))
                .or_default()
                .push((refs[i].clone(), n.content.display_text()));
        }
    }
    by_node
        .into_iter()
        .filter_map(|((_, node_id), mut variants)| {
            variants.dedup_by(|a, b| a.1 == b.1);
            let texts: BTreeSet<&String> = variants.iter().map(|v| &v.1).collect();
            (texts.len() > 1).then_some(DivergentVariant { node_id, variants })
        })
        .collect()
}

/// Merges `inputs` into version 1 of a new taxonomy. The result does not depend
/// on the order of `inputs`.
pub fn merge(inputs: &[Taxonomy], provider: Option<&dyn ChatProvider>, options: &MergeOptions, clock: &Clock) -> Result<(Taxonomy, MergeReport), MergeError> {
    let first = inputs.first().ok_or(MergeError::NoInputs)?;
    for (index, t) in inputs.iter().enumerate() {
        if t.domain != first.domain || t.task != first.task {
            return Err(MergeError::DomainMismatch {
                index,
                taxonomy_id: t.taxonomy_id.clone(),
                found: format!("{}/{}", t.domain, t.task),
                expected: format!("{}/{}", first.domain, first.task),
            });
        }
        let report = validate_structure(t);
        if !report.is_clean() {
            return Err(MergeError::InvalidInput {
                index,
                taxonomy_id: t.taxonomy_id.clone(),
                report,
            });
        }
    }

    let mut sorted: Vec<(InputRef, Vec<u8>, &Taxonomy)> = inputs
        .iter()
        .map(|t| {
            let r = InputRef {
                taxonomy_id: t.taxonomy_id.clone(),
                version: t.version,
            };
            (r, serialize(t).unwrap_or_default(), t)
        })
        .collect();
    sorted.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    let ordered: Vec<Taxonomy> = sorted.iter().map(|(_, _, t)| (*t).clone()).collect();
    let refs: Vec<InputRef> = sorted.into_iter().map(|(r, _, _)| r).collect();

    let mut ctx = Ctx {
        inputs: &ordered,
        refs: refs.clone(),
        used: BTreeSet::new(),
        collapsed: Vec::new(),
    };
    let mut roots: Vec<MNode> = Vec::new();
    for (i, t) in ordered.iter().enumerate() {
        for r in &t.roots {
            ctx.absorb(&mut roots, i, r);
        }
    }
    let mut collapsed = ctx.collapsed;

    let created_at = clock.now();
    let taxonomy_id = options.taxonomy_id.clone().unwrap_or_else(|| {
        let mut parts: Vec<String> = vec!["merge".into(), first.domain.clone(), first.task.clone()];
        parts.extend(refs.iter().map(|r| r.to_string()));
        parts.push(format_timestamp(&created_at));
        let parts: Vec<&str> = parts.iter().map(String::as_str).collect();
        derive_id("tax", &parts)
    });
    let header = Taxonomy {
        taxonomy_id,
        domain: first.domain.clone(),
        task: first.task.clone(),
        version: 1,
        parent_version: None,
        created_at,
        roots: Vec::new(),
        nodes: BTreeMap::new(),
    };

    let mut applied = Vec::new();
    let mut skipped = Vec::new();
    let mut dropped = Vec::new();
    if let Some(provider) = provider {
        let pairs = candidate_pairs(&roots);
        let (proposals, bad) = propose_semantic_merges(&pairs, provider, &header.domain, &header.task)?;
        dropped = bad;
        for p in proposals {
            match semantic::apply_proposal(&roots, &p) {
                Err(reason) => skipped.push(SkippedProposal { proposal: p, reason }),
                Ok((candidate, absorbed)) => {
                    let report = validate_structure(&build(&candidate, &header, &refs));
                    if report.is_clean() {
                        roots = candidate;
                        collapsed.push(Collapse {
                            level: p.level,
                            surviving: p.left.clone(),
                            text: p.merged_text.clone(),
                            absorbed: absorbed.iter().map(|s| SourceRef {
                                taxonomy_id: refs[s.input].taxonomy_id.clone(),
                                version: refs[s.input].version,
                                node_id: s.node.clone(),
                            }).collect(),
                            reason: CollapseReason::LlmProposedMerge,
                        });
                        applied.push(p);
                    } else {
                        skipped.push(SkippedProposal {
                            proposal: p,
                            reason: format!("result fails validation: {}", report.summary()),
                        });
                    }
                }
            }
        }
    }

    let merged = build(&roots, &header, &refs);
    let verification = validate_structure(&merged);
    if !verification.is_clean() {
        return Err(MergeError::Verification(verification));
    }
    let mut added_from = BTreeMap::new();
    fn origins(node: &MNode, refs: &[InputRef], out: &mut BTreeMap<NodeId, String>) {
        if let Some(s) = node.sources.first() {
            out.insert(node.id.clone(), refs[s.input].taxonomy_id.clone());
        }
        for c in &node.children {
            origins(c, refs, out);
        }
    }
    for r in &roots {
        origins(r, &refs, &mut added_from);
    }

    let report = MergeReport {
        divergent: find_divergent(&ordered, &refs),
        inputs: refs,
        collapsed,
        added_from,
        verification,
        proposals_applied: applied,
        proposals_skipped: skipped,
        proposals_dropped: dropped,
    };
    Ok((merged, report))
}

impl MergeReport {
    /// Plain-text collapse table.
    pub fn render_table(&self) -> String {
        let mut out = String::from("inputs:\n");
        for i in &self.inputs {
            out.push_str(&format!("  {i}\n"));
        }
        out.push_str(&format!("{:<12} {:<14} {:<22} {:<40} absorbed\n", "level", "surviving", "reason", "text"));
        for c in &self.collapsed {
            let absorbed: Vec<String> = c
                .absorbed
                .iter()
                .map(|s| format!("{}@v{}:{}", s.taxonomy_id, s.version, s.node_id))
                .collect();
            let reason = match c.reason {
                CollapseReason::ExactNormalizedMatch => "exact-normalized",
                CollapseReason::LlmProposedMerge => "llm-proposed",
            };
            let mut text: String = c.text.chars().take(38).collect();
            if text.len() < c.text.len() {
                text.push('…');
            }
            out.push_str(&format!("{:<12} {:<14} {:<22} {:<40} {}\n", c.level.as_str(), c.surviving.as_str(), reason, text, absorbed.join(", ")));
        }
        for s in &self.proposals_skipped {
            out.push_str(&format!("skipped proposal {} + {}: {}\n", s.proposal.left, s.proposal.right, s.reason));
        }
        for d in &self.proposals_dropped {
            out.push_str(&format!("dropped proposal {} + {}: {}\n", d.left, d.right, d.reason));
        }
        for d in &self.divergent {
            out.push_str(&format!("divergent variants of {}: {}\n", d.node_id, d.variants.len()));
        }
        out.push_str(&format!("verification: {}\n", if self.verification.is_clean() { "clean".to_string() } else { self.verification.summary() }));
        out
    }
}
