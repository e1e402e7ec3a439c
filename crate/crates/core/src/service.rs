//! Store-backed operations shared by the command line and the HTTP API.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{
    agreement_report, annotation_units, canonicalize_records, llm_annotate, AgreementReport, AnnotationError, AnnotationRecord, AnnotationUnit,
    EditSpan, IcrError, UnitMode, WritingTemplate,
};
use crate::clock::Clock;
use crate::dialogue::{CreatorOutcome, DialogueError, DialogueSession, SessionConfig};
use crate::gateway::{ChatProvider, ChatRequest, ChatResponse, GatewayError};
use crate::generation::{GenerationContext, GenerationError, Generator, PromptTemplates};
use crate::merge::{merge, MergeError, MergeOptions, MergeReport};
use crate::store::{Store, StoreError};
use crate::taxonomy::{diff_versions, DiffError, Taxonomy, TaxonomyDiff};

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Merge(Box<MergeError>),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Icr(#[from] IcrError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{0}")]
    BadRequest(String),
}

impl From<MergeError> for WorkbenchError {
    fn from(e: MergeError) -> Self {
        WorkbenchError::Merge(Box::new(e))
    }
}

/// A taxonomy reference written `ID` (latest version) or `ID@vN`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxRef {
    pub id: String,
    pub version: Option<u32>,
}

impl FromStr for TaxRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('@') {
            None if !s.is_empty() => Ok(TaxRef { id: s.to_string(), version: None }),
            Some((id, v)) if !id.is_empty() => {
                let n = v.strip_prefix('v').unwrap_or(v);
                let version = n.parse::<u32>().map_err(|_| format!("bad version in taxonomy reference {s:?}"))?;
                Ok(TaxRef {
                    id: id.to_string(),
                    version: Some(version),
                })
            }
            _ => Err(format!("bad taxonomy reference {s:?}")),
        }
    }
}

/// Stand-in used when no model endpoint is configured.
pub struct NoProvider;

impl ChatProvider for NoProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        Err(GatewayError::provider(format!(
            "no model provider configured for {}; set WORKBENCH_LLM_BASE_URL or use a script",
            req.request_tag
        )))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TemplateEdits {
    pub template_id: String,
    pub edits: Vec<EditSpan>,
    pub markup: String,
    pub units: Vec<AnnotationUnit>,
}

pub struct Workbench {
    pub store: Arc<Store>,
    pub provider: Arc<dyn ChatProvider>,
    pub clock: Clock,
    pub templates: PromptTemplates,
    pub min_intentions: usize,
    pub session_config: SessionConfig,
}

impl Workbench {
    pub fn new(store: Arc<Store>, provider: Arc<dyn ChatProvider>, clock: Clock) -> Self {
        Workbench {
            store,
            provider,
            clock,
            templates: PromptTemplates::default(),
            min_intentions: crate::generation::DEFAULT_MIN_INTENTIONS,
            session_config: SessionConfig::default(),
        }
    }

    pub fn resolve(&self, r: &TaxRef) -> Result<Taxonomy, WorkbenchError> {
        Ok(self.store.resolve_taxonomy(&r.id, r.version)?)
    }

    /// Runs generation and stores the result as version 1, under `id` when given.
    pub fn generate(&self, domain: &str, task: &str, min_intentions: Option<usize>, id: Option<&str>) -> Result<Taxonomy, WorkbenchError> {
        if let Some(id) = id {
            crate::store::check_id(id)?;
        }
        let mut ctx = GenerationContext::new(domain, task);
        ctx.min_intentions = min_intentions.unwrap_or(self.min_intentions);
        let mut tax = Generator::new(self.provider.as_ref())
            .with_templates(self.templates.clone())
            .build_taxonomy(&ctx, &self.clock)?;
        if let Some(id) = id {
            tax.taxonomy_id = id.to_string();
        }
        self.store.put_taxonomy_version(&tax)?;
        Ok(tax)
    }

    /// Opens a session on the latest version of a taxonomy.
    pub fn start_session(&self, r: &TaxRef, expert_id: &str) -> Result<DialogueSession, WorkbenchError> {
        let latest = self
            .store
            .latest_version(&r.id)?
            .ok_or_else(|| StoreError::NotFound(format!("taxonomy {}", r.id)))?;
        if let Some(v) = r.version.filter(|&v| v != latest) {
            return Err(StoreError::VersionConflict {
                taxonomy_id: r.id.clone(),
                expected: latest,
                got: v,
            }
            .into());
        }
        if expert_id.trim().is_empty() {
            return Err(WorkbenchError::BadRequest("expert_id must be non-empty".into()));
        }
        let tax = self.store.get_taxonomy(&r.id, latest)?;
        let session = DialogueSession::start(tax, expert_id, self.session_config.clone(), Some(self.provider.as_ref()), &self.clock)?;
        self.store.create_session(&session.to_record())?;
        Ok(session)
    }

    pub fn load_session(&self, session_id: &str) -> Result<DialogueSession, WorkbenchError> {
        let record = self.store.get_session(session_id)?;
        let tax = self.store.get_taxonomy(&record.taxonomy_id, record.current_version)?;
        Ok(DialogueSession::from_record(record, tax)?)
    }

    /// Routes one expert reply; a revision is stored before the session is.
    pub fn reply(&self, session_id: &str, text: &str) -> Result<(CreatorOutcome, DialogueSession), WorkbenchError> {
        let lock = self.store.key_lock(&format!("session/{session_id}"));
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut session = self.load_session(session_id)?;
        let outcome = session.submit_expert_reply(text, self.provider.as_ref(), &self.clock)?;
        if let Some(revised) = &outcome.revised {
            self.store.put_taxonomy_version(revised)?;
        }
        self.store.put_session(&session.to_record())?;
        Ok((outcome, session))
    }

    pub fn finalize(&self, session_id: &str, force: bool) -> Result<(Taxonomy, DialogueSession), WorkbenchError> {
        let lock = self.store.key_lock(&format!("session/{session_id}"));
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut session = self.load_session(session_id)?;
        let tax = session.finalize(force)?;
        self.store.put_session(&session.to_record())?;
        Ok((tax, session))
    }

    /// Merges stored taxonomies and stores the result as version 1 of a new id.
    pub fn merge(&self, refs: &[TaxRef], out: Option<String>, semantic: bool) -> Result<(Taxonomy, MergeReport), WorkbenchError> {
        let inputs = refs.iter().map(|r| self.resolve(r)).collect::<Result<Vec<_>, _>>()?;
        let provider = semantic.then_some(self.provider.as_ref());
        let (tax, report) = merge(&inputs, provider, &MergeOptions { taxonomy_id: out }, &self.clock)?;
        self.store.put_taxonomy_version(&tax)?;
        Ok((tax, report))
    }

    pub fn diff(&self, id: &str, from: u32, to: u32) -> Result<TaxonomyDiff, WorkbenchError> {
        let a = self.store.get_taxonomy(id, from)?;
        let b = self.store.get_taxonomy(id, to)?;
        Ok(diff_versions(&a, &b)?)
    }

    pub fn add_template(&self, original: &str, revised: &str) -> Result<WritingTemplate, WorkbenchError> {
        let tpl = WritingTemplate::new(original, revised);
        self.store.put_template(&tpl)?;
        Ok(tpl)
    }

    pub fn template_edits(&self, template_id: &str, mode: UnitMode) -> Result<TemplateEdits, WorkbenchError> {
        let tpl = self.store.get_template(template_id)?;
        Ok(TemplateEdits {
            template_id: tpl.template_id.clone(),
            edits: tpl.edits(),
            markup: tpl.markup(),
            units: annotation_units(&tpl, mode),
        })
    }

    /// Validates labels against the taxonomy and stores one file per coder.
    pub fn add_annotations(&self, taxonomy: &TaxRef, records: &[AnnotationRecord]) -> Result<Vec<AnnotationRecord>, WorkbenchError> {
        if records.is_empty() {
            return Err(WorkbenchError::BadRequest("no annotation records".into()));
        }
        let tax = self.resolve(taxonomy)?;
        let records = canonicalize_records(records, &tax)?;
        let mut by_coder: std::collections::BTreeMap<(&str, &str), Vec<AnnotationRecord>> = Default::default();
        for r in &records {
            self.store.get_template(&r.template_id)?;
            by_coder.entry((&r.template_id, &r.coder_id)).or_default().push(r.clone());
        }
        for ((tpl, coder), recs) in by_coder {
            self.store.put_annotations(tpl, coder, &recs)?;
        }
        Ok(records)
    }

    pub fn llm_annotate(&self, template_id: &str, taxonomy: &TaxRef, coder_id: &str, mode: UnitMode) -> Result<Vec<AnnotationRecord>, WorkbenchError> {
        let tpl = self.store.get_template(template_id)?;
        let tax = self.resolve(taxonomy)?;
        let units = annotation_units(&tpl, mode);
        let records = llm_annotate(template_id, &units, &tax, self.provider.as_ref(), coder_id)?;
        self.store.put_annotations(template_id, coder_id, &records)?;
        Ok(records)
    }

    pub fn icr(&self, template_id: &str) -> Result<AgreementReport, WorkbenchError> {
        self.store.get_template(template_id)?;
        let records = self.store.get_annotations(template_id)?;
        Ok(agreement_report(&records)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxref_parsing() {
        assert_eq!("tax-1".parse::<TaxRef>().unwrap(), TaxRef { id: "tax-1".into(), version: None });
        assert_eq!("tax-1@v2".parse::<TaxRef>().unwrap().version, Some(2));
        assert_eq!("tax-1@3".parse::<TaxRef>().unwrap().version, Some(3));
        assert!("tax-1@vx".parse::<TaxRef>().is_err());
        assert!("@v1".parse::<TaxRef>().is_err());
        assert!("".parse::<TaxRef>().is_err());
    }
}
