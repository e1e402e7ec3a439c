//! Dialogue-based validation of a taxonomy by one domain expert.
//!
//! Two model roles mediate between the expert and the taxonomy. The Interviewer
//! poses one question per review aspect; each expert reply is forwarded to the
//! Creator, which answers either `NO_CHANGE` or a complete revised taxonomy
//! document. Accepted revisions become new versions; the transcript records
//! every turn.

mod creator;

use std::collections::{BTreeMap, VecDeque};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::gateway::{ChatMessage, ChatProvider, ChatRequest, GatewayError};
use crate::taxonomy::{derive_id, format_timestamp, validate_structure, Taxonomy, ValidationReport};

pub use creator::{apply_creator_reply, creator_request, parse_creator_output, CreatorParseError, CreatorReply};

pub const INTERVIEWER_TAG: &str = "step2.interviewer";
pub const CREATOR_TAG: &str = "step2.creator";
/// Initial question plus one follow-up.
pub const MAX_ASKS_PER_ASPECT: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Aspect {
    Consistency,
    Clarity,
    Practicality,
    Comprehensiveness,
}

impl Aspect {
    pub const ALL: [Aspect; 4] = [Aspect::Consistency, Aspect::Clarity, Aspect::Practicality, Aspect::Comprehensiveness];

    pub fn canonical_question(self) -> &'static str {
        match self {
            Aspect::Consistency => "Do all descriptions for label not overlap in the meaning? If not, which description seems ambiguous/duplicate?",
            Aspect::Clarity => "Do the descriptions provide clear understanding? If not, which one is unclear and how should it be improved?",
            Aspect::Practicality => "Is there any description that is not typically considered in your domain? Which one?",
            Aspect::Comprehensiveness => "What do you think can be added as an additional description category if not comprehensive?",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Aspect::Consistency => "Consistency",
            Aspect::Clarity => "Clarity",
            Aspect::Practicality => "Practicality",
            Aspect::Comprehensiveness => "Comprehensiveness",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    Interviewer,
    Expert,
    Creator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(with = "rfc3339")]
    pub timestamp: DateTime<Utc>,
    pub version_after: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    AwaitingExpert,
    AwaitingCreator,
    /// Every aspect has been covered; only finalization remains.
    ReadyToFinalize,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub aspects: Vec<Aspect>,
    /// Ask the Interviewer model for a short contextual lead-in before each
    /// canonical question.
    pub interviewer_preamble: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            aspects: Aspect::ALL.to_vec(),
            interviewer_preamble: false,
        }
    }
}

/// Result of routing one expert reply through the Creator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreatorOutcome {
    pub revised: Option<Taxonomy>,
    pub change_rationale: String,
    pub no_change: bool,
    pub follow_up: bool,
}

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("taxonomy is not structurally valid: {}", .0.summary())]
    InvalidTaxonomy(ValidationReport),
    #[error("session is finalized")]
    SessionFinalized,
    #[error("no question is pending; every aspect has been covered")]
    NoPendingQuestion,
    #[error("expert reply is empty")]
    EmptyReply,
    #[error("creator output rejected: {0}")]
    CreatorParse(#[from] CreatorParseError),
    #[error("creator call failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("{remaining} aspect(s) still pending; finalize with override to stop early")]
    PendingAspects { remaining: usize },
    #[error("session record does not match taxonomy: {0}")]
    Mismatch(String),
}

/// One expert's validation session over one taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueSession {
    pub session_id: String,
    pub expert_id: String,
    pub start_version: u32,
    current: Taxonomy,
    aspect_queue: VecDeque<Aspect>,
    asked: BTreeMap<Aspect, u32>,
    pending_question: Option<String>,
    transcript: Vec<Turn>,
    state: SessionState,
    config: SessionConfig,
}

impl DialogueSession {
    /// Opens a session and posts the first question.
    pub fn start(
        tax: Taxonomy,
        expert_id: &str,
        config: SessionConfig,
        interviewer: Option<&dyn ChatProvider>,
        clock: &Clock,
    ) -> Result<Self, DialogueError> {
        let report = validate_structure(&tax);
        if !report.is_clean() {
            return Err(DialogueError::InvalidTaxonomy(report));
        }
        let started = clock.now();
        let session_id = derive_id(
            "ses",
            &[&tax.taxonomy_id, &tax.version.to_string(), expert_id, &format_timestamp(&started)],
        );
        let mut session = DialogueSession {
            session_id,
            expert_id: expert_id.to_string(),
            start_version: tax.version,
            current: tax,
            aspect_queue: config.aspects.iter().copied().collect(),
            asked: BTreeMap::new(),
            pending_question: None,
            transcript: Vec::new(),
            state: SessionState::AwaitingExpert,
            config,
        };
        session.post_next_question(interviewer, clock);
        Ok(session)
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn taxonomy_id(&self) -> &str {
        &self.current.taxonomy_id
    }

    pub fn current(&self) -> &Taxonomy {
        &self.current
    }

    pub fn current_version(&self) -> u32 {
        self.current.version
    }

    pub fn transcript(&self) -> &[Turn] {
        &self.transcript
    }

    pub fn aspect_queue(&self) -> Vec<Aspect> {
        self.aspect_queue.iter().copied().collect()
    }

    pub fn current_aspect(&self) -> Option<Aspect> {
        self.aspect_queue.front().copied()
    }

    /// The pending Interviewer question.
    pub fn next_question(&self) -> Result<&str, DialogueError> {
        match self.state {
            SessionState::Finalized => Err(DialogueError::SessionFinalized),
            _ => self.pending_question.as_deref().ok_or(DialogueError::NoPendingQuestion),
        }
    }

    /// Versions committed during this session, in order.
    pub fn version_chain(&self) -> Vec<u32> {
        self.transcript.iter().filter_map(|t| t.version_after).collect()
    }

    /// Routes an expert reply to the Creator. On any error the session is left
    /// exactly as it was, so the expert can retry.
    pub fn submit_expert_reply(&mut self, reply: &str, provider: &dyn ChatProvider, clock: &Clock) -> Result<CreatorOutcome, DialogueError> {
        match self.state {
            SessionState::Finalized => return Err(DialogueError::SessionFinalized),
            SessionState::ReadyToFinalize => return Err(DialogueError::NoPendingQuestion),
            SessionState::AwaitingExpert | SessionState::AwaitingCreator => {}
        }
        let Some(aspect) = self.current_aspect() else {
            return Err(DialogueError::NoPendingQuestion);
        };
        if reply.trim().is_empty() {
            return Err(DialogueError::EmptyReply);
        }
        let expert_turn = Turn {
            speaker: Speaker::Expert,
            text: reply.to_string(),
            timestamp: clock.now(),
            version_after: None,
        };

        self.state = SessionState::AwaitingCreator;
        let result = (|| {
            let mut turns = self.transcript.clone();
            turns.push(expert_turn.clone());
            let req = creator_request(&self.current, aspect, &turns, reply)?;
            let raw = provider.complete(&req)?.content;
            let parsed = parse_creator_output(&raw)?;
            let note = format!("session {}: {}", self.session_id, aspect.name());
            Ok::<_, DialogueError>(apply_creator_reply(&self.current, parsed, &note, clock)?)
        })();
        let outcome = match result {
            Ok(outcome) => outcome,
            Err(e) => {
                self.state = SessionState::AwaitingExpert;
                return Err(e);
            }
        };

        self.transcript.push(expert_turn);
        let version_after = outcome.revised.as_ref().map(|t| t.version);
        if let Some(revised) = &outcome.revised {
            self.current = revised.clone();
        }
        let creator_text = if outcome.no_change {
            format!("No change. {}", outcome.change_rationale).trim().to_string()
        } else {
            outcome.change_rationale.clone()
        };
        self.transcript.push(Turn {
            speaker: Speaker::Creator,
            text: creator_text,
            timestamp: clock.now(),
            version_after,
        });

        let asked = self.asked.get(&aspect).copied().unwrap_or(0);
        if !(outcome.follow_up && asked < MAX_ASKS_PER_ASPECT) {
            self.aspect_queue.pop_front();
        }
        self.pending_question = None;
        self.post_next_question(Some(provider), clock);
        Ok(outcome)
    }

    /// Closes the session and returns its final taxonomy version. Without
    /// `force`, every aspect must have been covered.
    pub fn finalize(&mut self, force: bool) -> Result<Taxonomy, DialogueError> {
        match self.state {
            SessionState::Finalized => return Err(DialogueError::SessionFinalized),
            SessionState::AwaitingExpert | SessionState::AwaitingCreator if !force => {
                return Err(DialogueError::PendingAspects {
                    remaining: self.aspect_queue.len(),
                })
            }
            _ => {}
        }
        self.state = SessionState::Finalized;
        self.pending_question = None;
        Ok(self.current.clone())
    }

    fn post_next_question(&mut self, interviewer: Option<&dyn ChatProvider>, clock: &Clock) {
        let Some(aspect) = self.current_aspect() else {
            self.state = SessionState::ReadyToFinalize;
            return;
        };
        *self.asked.entry(aspect).or_default() += 1;
        let canonical = aspect.canonical_question();
        let preamble = match interviewer {
            Some(p) if self.config.interviewer_preamble => self.interviewer_preamble(p, aspect),
            _ => None,
        };
        let question = match preamble {
            Some(lead) => format!("{lead}\n\n{canonical}"),
            None => canonical.to_string(),
        };
        self.transcript.push(Turn {
            speaker: Speaker::Interviewer,
            text: question.clone(),
            timestamp: clock.now(),
            version_after: None,
        });
        self.pending_question = Some(question);
        self.state = SessionState::AwaitingExpert;
    }

    fn interviewer_preamble(&self, provider: &dyn ChatProvider, aspect: Aspect) -> Option<String> {
        let system = format!(
            "You are the Interviewer in a review of a taxonomy of edit intentions for the writing task of {} in the domain of {}. \
             You ask a domain expert one question at a time. Write one or two sentences of context that lead into the next question. \
             Do not ask the question itself and do not propose changes.",
            self.current.task, self.current.domain
        );
        let mut user = format!("Aspect under review: {}\nNext question: {}\n\nIntentions:\n", aspect.name(), aspect.canonical_question());
        for label in self.current.intention_labels() {
            user.push_str(&format!("- {label}\n"));
        }
        user.push_str("\nConversation so far:\n");
        user.push_str(&render_transcript(&self.transcript));
        let req = ChatRequest::new(INTERVIEWER_TAG, vec![ChatMessage::system(system), ChatMessage::user(user)]);
        match provider.complete(&req) {
            Ok(r) if !r.content.trim().is_empty() => Some(r.content.trim().to_string()),
            Ok(_) => None,
            Err(e) => {
                tracing::warn!(%e, "interviewer preamble unavailable; asking the canonical question");
                None
            }
        }
    }

    /// Persistable form of the session. The taxonomy itself is referenced by id
    /// and version, not embedded.
    pub fn to_record(&self) -> SessionRecord {
        SessionRecord {
            session_id: self.session_id.clone(),
            expert_id: self.expert_id.clone(),
            taxonomy_id: self.current.taxonomy_id.clone(),
            turns: self.transcript.clone(),
            state: self.state,
            start_version: self.start_version,
            current_version: self.current.version,
            aspect_queue: self.aspect_queue.iter().copied().collect(),
            asked: self.asked.iter().map(|(a, n)| (*a, *n)).collect(),
            pending_question: self.pending_question.clone(),
            config: self.config.clone(),
        }
    }

    /// Rebuilds a session from its record and the taxonomy version it points at.
    pub fn from_record(record: SessionRecord, current: Taxonomy) -> Result<Self, DialogueError> {
        if record.taxonomy_id != current.taxonomy_id || record.current_version != current.version {
            return Err(DialogueError::Mismatch(format!(
                "record points at {} v{}, got {} v{}",
                record.taxonomy_id, record.current_version, current.taxonomy_id, current.version
            )));
        }
        Ok(DialogueSession {
            session_id: record.session_id,
            expert_id: record.expert_id,
            start_version: record.start_version,
            current,
            aspect_queue: record.aspect_queue.into_iter().collect(),
            asked: record.asked.into_iter().collect(),
            pending_question: record.pending_question,
            transcript: record.turns,
            state: record.state,
            config: record.config,
        })
    }
}

/// Session export. The first five fields form the public export shape; the rest
/// let a stored session resume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub expert_id: String,
    pub taxonomy_id: String,
    pub turns: Vec<Turn>,
    pub state: SessionState,
    pub start_version: u32,
    pub current_version: u32,
    pub aspect_queue: Vec<Aspect>,
    pub asked: Vec<(Aspect, u32)>,
    pub pending_question: Option<String>,
    pub config: SessionConfig,
}

pub(crate) fn render_transcript(turns: &[Turn]) -> String {
    if turns.is_empty() {
        return "(no turns yet)\n".into();
    }
    turns
        .iter()
        .map(|t| format!("[{:?}] {}\n", t.speaker, t.text))
        .collect()
}

mod rfc3339 {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::taxonomy::format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}
