use thiserror::Error;

use super::{render_transcript, Aspect, CreatorOutcome, Turn, CREATOR_TAG};
use crate::clock::Clock;
use crate::gateway::{ChatMessage, ChatRequest};
use crate::taxonomy::{deserialize, serialize, validate_structure, CodecError, Provenance, ProvenanceKind, Taxonomy, ValidationReport};

pub const NO_CHANGE: &str = "NO_CHANGE";
pub const BEGIN_TAXONOMY: &str = "BEGIN_TAXONOMY";
pub const END_TAXONOMY: &str = "END_TAXONOMY";
pub const FOLLOW_UP: &str = "FOLLOW_UP";

const CREATOR_SYSTEM: &str = "You are the Creator in a taxonomy validation dialogue. \
You revise a taxonomy of edit intentions based on a domain expert's feedback, relayed by the Interviewer.
Answer in exactly one of two forms:
1. If the feedback requires no change: a line containing only NO_CHANGE, followed by a short rationale.
2. Otherwise: a line containing only BEGIN_TAXONOMY, the complete revised taxonomy as a JSON document in the same format as the one given, a line containing only END_TAXONOMY, and then a paragraph explaining the change.
Keep the id of every node you do not remove. Give each new node a new unique id. Every node needs a non-empty rationale.
If the expert's reply leaves open questions on the current aspect, end with a line containing only FOLLOW_UP.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CreatorReply {
    NoChange { rationale: String, follow_up: bool },
    Revision { document: String, rationale: String, follow_up: bool },
}

#[derive(Debug, Error)]
pub enum CreatorParseError {
    #[error("output follows neither the NO_CHANGE nor the BEGIN_TAXONOMY/END_TAXONOMY form")]
    Protocol,
    #[error("BEGIN_TAXONOMY without a matching END_TAXONOMY")]
    Unterminated,
    #[error("revision has no rationale paragraph")]
    MissingRationale,
    #[error("revised document does not parse: {0}")]
    Document(CodecError),
    #[error("revised taxonomy fails validation: {}", .0.summary())]
    Validation(ValidationReport),
}

pub fn creator_request(current: &Taxonomy, aspect: Aspect, turns: &[Turn], reply: &str) -> Result<ChatRequest, CreatorParseError> {
    let doc = serialize(current).map_err(CreatorParseError::Document)?;
    let user = format!(
        "Domain: {}\nWriting task: {}\n\nCurrent taxonomy:\n{}\nConversation so far:\n{}\nAspect under review: {}\nQuestion: {}\nExpert reply: {}\n",
        current.domain,
        current.task,
        String::from_utf8_lossy(&doc),
        render_transcript(turns),
        aspect.name(),
        aspect.canonical_question(),
        reply.trim()
    );
    Ok(ChatRequest::new(CREATOR_TAG, vec![ChatMessage::system(CREATOR_SYSTEM), ChatMessage::user(user)]))
}

fn is_marker(line: &str, marker: &str) -> bool {
    line.trim() == marker
}

fn strip_fence(doc: &str) -> &str {
    let t = doc.trim();
    match (t.strip_prefix("```"), t.ends_with("```")) {
        (Some(rest), true) if rest.len() >= 3 => {
            let body = &rest[..rest.len() - 3];
            body.split_once('\n').map(|(_, b)| b).unwrap_or(body).trim()
        }
        _ => t,
    }
}

fn rationale_of(lines: &[&str]) -> (String, bool) {
    let follow_up = lines.iter().any(|l| is_marker(l, FOLLOW_UP));
    let text = lines
        .iter()
        .filter(|l| !is_marker(l, FOLLOW_UP))
        .copied()
        .collect::<Vec<_>>()
        .join("\n");
    (text.trim().to_string(), follow_up)
}

/// Splits raw Creator output into its protocol form. Only the framing is
/// checked here; the document is parsed by [`apply_creator_reply`].
pub fn parse_creator_output(raw: &str) -> Result<CreatorReply, CreatorParseError> {
    let lines: Vec<&str> = raw.lines().collect();
    let begin = lines.iter().position(|l| is_marker(l, BEGIN_TAXONOMY));
    let no_change = lines.iter().position(|l| is_marker(l, NO_CHANGE));
    match (no_change, begin) {
        (Some(n), b) if b.is_none_or(|b| n < b) => {
            let (rationale, follow_up) = rationale_of(&lines[n + 1..]);
            Ok(CreatorReply::NoChange { rationale, follow_up })
        }
        (_, Some(b)) => {
            let end = lines[b + 1..]
                .iter()
                .position(|l| is_marker(l, END_TAXONOMY))
                .map(|i| b + 1 + i)
                .ok_or(CreatorParseError::Unterminated)?;
            let document = strip_fence(&lines[b + 1..end].join("\n")).to_string();
            let (rationale, follow_up) = rationale_of(&lines[end + 1..]);
            if rationale.is_empty() {
                return Err(CreatorParseError::MissingRationale);
            }
            Ok(CreatorReply::Revision { document, rationale, follow_up })
        }
        _ => Err(CreatorParseError::Protocol),
    }
}

/// Turns a parsed reply into an outcome against `current`. A revision gets the
/// current header with the next version number; nodes it adds or rewrites are
/// marked as expert revisions, all others keep their provenance. A revision
/// whose content equals `current` counts as no change.
pub fn apply_creator_reply(current: &Taxonomy, reply: CreatorReply, note: &str, clock: &Clock) -> Result<CreatorOutcome, CreatorParseError> {
    let (document, rationale, follow_up) = match reply {
        CreatorReply::NoChange { rationale, follow_up } => {
            return Ok(CreatorOutcome {
                revised: None,
                change_rationale: rationale,
                no_change: true,
                follow_up,
            })
        }
        CreatorReply::Revision { document, rationale, follow_up } => (document, rationale, follow_up),
    };
    let mut revised = deserialize(document.as_bytes()).map_err(CreatorParseError::Document)?;
    revised.taxonomy_id = current.taxonomy_id.clone();
    revised.domain = current.domain.clone();
    revised.task = current.task.clone();
    revised.version = current.version + 1;
    revised.parent_version = Some(current.version);
    revised.created_at = clock.now();

    let report = validate_structure(&revised);
    if !report.is_clean() {
        return Err(CreatorParseError::Validation(report));
    }
    for (id, node) in revised.nodes.iter_mut() {
        match current.nodes.get(id) {
            Some(old) if old.content == node.content && old.rationale == node.rationale => {
                node.provenance = old.provenance.clone();
            }
            _ => node.provenance = Provenance::new(ProvenanceKind::ExpertRevision, note),
        }
    }
    if revised.same_content(current) {
        return Ok(CreatorOutcome {
            revised: None,
            change_rationale: rationale,
            no_change: true,
            follow_up,
        });
    }
    Ok(CreatorOutcome {
        revised: Some(revised),
        change_rationale: rationale,
        no_change: false,
        follow_up,
    })
}
