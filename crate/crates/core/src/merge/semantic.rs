use serde::{Deserialize, Serialize};

use super::{merge_key, set_text, union_children, DroppedProposal, MNode, Source};
use crate::gateway::{ChatMessage, ChatProvider, ChatRequest, GatewayError};
use crate::generation::parse_tagged;
use crate::taxonomy::{Level, NodeContent, NodeId};

pub const MERGE_TAG: &str = "step3.merge";
const NO_MERGE: &str = "NO_MERGE";
const MAX_EDIT_DISTANCE: usize = 3;

/// Two same-level nodes that may overlap in meaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub level: Level,
    pub left: NodeId,
    pub right: NodeId,
    pub left_text: String,
    pub right_text: String,
    /// The intention both descriptions belong to.
    pub parent: Option<String>,
}

/// A model-proposed collapse of `right` into `left`, renamed to `merged_text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeProposal {
    pub level: Level,
    pub left: NodeId,
    pub right: NodeId,
    pub merged_text: String,
    pub rationale: String,
}

/// Levenshtein distance over chars.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn similar(a: &str, b: &str) -> bool {
    if a == b {
        return false;
    }
    let shares_token = a.split_whitespace().any(|t| b.split_whitespace().any(|u| u == t));
    shares_token || edit_distance(a, b) <= MAX_EDIT_DISTANCE
}

fn pairs_among(nodes: &[MNode], parent: Option<&str>, out: &mut Vec<CandidatePair>) {
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            if similar(&merge_key(&a.content), &merge_key(&b.content)) {
                out.push(CandidatePair {
                    level: a.content.level(),
                    left: a.id.clone(),
                    right: b.id.clone(),
                    left_text: a.content.display_text(),
                    right_text: b.content.display_text(),
                    parent: parent.map(str::to_string),
                });
            }
        }
    }
}

/// Near-duplicate roots, then near-duplicate sibling descriptions, in tree order.
pub(crate) fn candidate_pairs(roots: &[MNode]) -> Vec<CandidatePair> {
    let mut out = Vec::new();
    pairs_among(roots, None, &mut out);
    for r in roots {
        pairs_among(&r.children, Some(&r.content.display_text()), &mut out);
    }
    out
}

fn proposal_request(pair: &CandidatePair, domain: &str, task: &str) -> ChatRequest {
    let system = format!(
        "You help consolidate a taxonomy of edit intentions for the writing task of {task} in the domain of {domain}. \
         It was merged from several domain experts' versions. Decide whether two {level}s overlap in meaning and should become one.",
        level = pair.level
    );
    let context = match &pair.parent {
        Some(p) => format!("Both describe the intention: {p}\n"),
        None => String::new(),
    };
    let user = format!(
        "{context}First: {}\nSecond: {}\n\nIf they overlap, write the combined text between <merged> and </merged>, \
         the reason between <rationale> and </rationale>, then <end>. If they are distinct, answer {NO_MERGE}.",
        pair.left_text, pair.right_text
    );
    ChatRequest::new(MERGE_TAG, vec![ChatMessage::system(system), ChatMessage::user(user)])
}

/// Reads one model answer. `Ok(None)` means the model declined the merge.
pub fn parse_proposal(pair: &CandidatePair, raw: &str) -> Result<Option<MergeProposal>, String> {
    if raw.trim_start().starts_with(NO_MERGE) {
        return Ok(None);
    }
    let single = |open: &str, close: &str| -> Result<String, String> {
        let parsed = parse_tagged(raw, open, close, "<end>").map_err(|e| e.to_string())?;
        match parsed.items.as_slice() {
            [one] if !one.is_empty() => Ok(one.clone()),
            [] => Err(format!("no {open} element")),
            [_] => Err(format!("empty {open} element")),
            _ => Err(format!("more than one {open} element")),
        }
    };
    Ok(Some(MergeProposal {
        level: pair.level,
        left: pair.left.clone(),
        right: pair.right.clone(),
        merged_text: single("<merged>", "</merged>")?,
        rationale: single("<rationale>", "</rationale>")?,
    }))
}

/// One call per pair, in order. Unparseable answers are returned separately.
pub fn propose_semantic_merges(
    pairs: &[CandidatePair],
    provider: &dyn ChatProvider,
    domain: &str,
    task: &str,
) -> Result<(Vec<MergeProposal>, Vec<DroppedProposal>), GatewayError> {
    let mut proposals = Vec::new();
    let mut dropped = Vec::new();
    for pair in pairs {
        let raw = provider.complete(&proposal_request(pair, domain, task))?.content;
        match parse_proposal(pair, &raw) {
            Ok(Some(p)) => proposals.push(p),
            Ok(None) => {}
            Err(reason) => dropped.push(DroppedProposal {
                left: pair.left.clone(),
                right: pair.right.clone(),
                raw,
                reason,
            }),
        }
    }
    Ok((proposals, dropped))
}

fn siblings_of<'a>(roots: &'a mut Vec<MNode>, level: Level, left: &NodeId) -> Option<&'a mut Vec<MNode>> {
    match level {
        Level::Intention => Some(roots),
        Level::Description => roots.iter_mut().find(|r| r.children.iter().any(|c| &c.id == left)).map(|r| &mut r.children),
        Level::Example => None,
    }
}

/// Applies `p` to a copy of the working tree. Returns the new tree and the
/// sources that were folded into the surviving node.
pub(crate) fn apply_proposal(roots: &[MNode], p: &MergeProposal) -> Result<(Vec<MNode>, Vec<Source>), String> {
    let mut next = roots.to_vec();
    let siblings = siblings_of(&mut next, p.level, &p.left).ok_or_else(|| format!("{} is no longer present", p.left))?;
    let li = siblings.iter().position(|n| n.id == p.left).ok_or_else(|| format!("{} is no longer present", p.left))?;
    let ri = siblings.iter().position(|n| n.id == p.right).ok_or_else(|| format!("{} is no longer present or not a sibling", p.right))?;
    let absorbed = siblings.remove(ri);
    let li = if ri < li { li - 1 } else { li };
    let survivor = &mut siblings[li];
    if matches!(survivor.content, NodeContent::Example(_)) {
        return Err("examples are not merged semantically".into());
    }
    set_text(&mut survivor.content, &p.merged_text);
    let folded = absorbed.sources.clone();
    survivor.sources.extend(absorbed.sources);
    survivor.notes.extend(absorbed.notes);
    survivor.notes.push(p.rationale.clone());
    union_children(&mut survivor.children, absorbed.children);
    Ok((next, folded))
}
