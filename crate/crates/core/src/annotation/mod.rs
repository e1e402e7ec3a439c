//! Writing templates, their edit spans, and annotation of those edits with
//! taxonomy intentions by human and model coders.

mod edits;
pub mod icr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatProvider, ChatRequest, GatewayError};
use crate::generation::parse_tagged;
use crate::taxonomy::{derive_id, normalize_label, validate_structure, Taxonomy, ValidationReport};

pub use edits::{
    apply_edits, project_original, project_revised, render_edit_markup, sentence_edit_diff, sentence_ranges, tokenize, EditError, EditKind,
    EditSpan, Piece,
};
pub use icr::{agreement_report, cohen_kappa, fleiss_kappa, AgreementReport, CohenResult, FleissResult, IcrError, PairKind, PairwiseEntry};

pub const ANNOTATE_TAG: &str = "step3.annotate";

/// An original draft and its revision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WritingTemplate {
    pub template_id: String,
    pub original: String,
    pub revised: String,
}

impl WritingTemplate {
    pub fn new(original: impl Into<String>, revised: impl Into<String>) -> Self {
        let (original, revised) = (original.into(), revised.into());
        WritingTemplate {
            template_id: derive_id("tpl", &[&original, &revised]),
            original,
            revised,
        }
    }

    pub fn edits(&self) -> Vec<EditSpan> {
        sentence_edit_diff(&self.original, &self.revised)
    }

    pub fn markup(&self) -> String {
        render_edit_markup(&self.original, &self.edits()).expect("edits computed from the same original")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitMode {
    #[default]
    Edit,
    Sentence,
}

/// One thing a coder labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationUnit {
    pub index: usize,
    pub text: String,
    pub context: String,
}

fn sentence_texts(text: &str) -> Vec<String> {
    let pieces = tokenize(text);
    sentence_ranges(&pieces)
        .into_iter()
        .map(|r| pieces[r].iter().map(|p| p.raw.as_str()).collect::<String>().trim().to_string())
        .collect()
}

/// Units of a template: one per edit span, or one per changed sentence.
pub fn annotation_units(template: &WritingTemplate, mode: UnitMode) -> Vec<AnnotationUnit> {
    let original = sentence_texts(&template.original);
    let revised = sentence_texts(&template.revised);
    match mode {
        UnitMode::Edit => template
            .edits()
            .iter()
            .enumerate()
            .map(|(index, e)| {
                let (verb, sentences) = match e.kind {
                    EditKind::Addition => ("added", &revised),
                    EditKind::Deletion => ("deleted", &original),
                };
                AnnotationUnit {
                    index,
                    text: format!("{verb}: {}", e.text.trim()),
                    context: sentences.get(e.sentence_index).cloned().unwrap_or_default(),
                }
            })
            .collect(),
        UnitMode::Sentence => {
            let mut units = Vec::new();
            for s in revised.iter().filter(|s| !original.contains(s)) {
                units.push((format!("revised: {s}"), s.clone()));
            }
            for s in original.iter().filter(|s| !revised.contains(s)) {
                units.push((format!("original: {s}"), s.clone()));
            }
            units
                .into_iter()
                .enumerate()
                .map(|(index, (text, context))| AnnotationUnit { index, text, context })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoderKind {
    Human,
    #[serde(rename = "LLM")]
    Llm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub coder_id: String,
    pub coder_kind: CoderKind,
    pub template_id: String,
    pub unit_index: usize,
    pub label: String,
    pub note: Option<String>,
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("taxonomy is not structurally valid: {}", .0.summary())]
    InvalidTaxonomy(ValidationReport),
    #[error("no units to annotate")]
    NoUnits,
    #[error("unit {unit_index}: {label:?} is not an intention of the taxonomy")]
    UnknownLabel { unit_index: usize, label: String },
    #[error("annotation call failed: {0}")]
    Gateway(#[from] GatewayError),
}

/// The intention label `label` refers to after normalization, if exactly one.
pub fn resolve_label(tax: &Taxonomy, label: &str) -> Option<String> {
    let key = normalize_label(label);
    let mut hits = tax.intention_labels().into_iter().filter(|l| normalize_label(l) == key);
    match (hits.next(), hits.next()) {
        (Some(one), None) => Some(one),
        _ => None,
    }
}

/// Checks every record's label against `tax` and rewrites it to the
/// taxonomy's spelling.
pub fn canonicalize_records(records: &[AnnotationRecord], tax: &Taxonomy) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    records
        .iter()
        .map(|r| {
            let label = resolve_label(tax, &r.label).ok_or_else(|| AnnotationError::UnknownLabel {
                unit_index: r.unit_index,
                label: r.label.clone(),
            })?;
            Ok(AnnotationRecord { label, ..r.clone() })
        })
        .collect()
}

fn extract_label(raw: &str) -> String {
    if let Ok(parsed) = parse_tagged(raw, "<label>", "</label>", "<end>") {
        if let Some(first) = parsed.items.into_iter().next() {
            return first;
        }
    }
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    line.trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '“' | '”')).trim().to_string()
}

/// Labels each unit with one intention by asking the model, one call per unit.
/// An unrecognized answer gets one corrective follow-up.
pub fn llm_annotate(
    template_id: &str,
    units: &[AnnotationUnit],
    tax: &Taxonomy,
    provider: &dyn ChatProvider,
    coder_id: &str,
) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let report = validate_structure(tax);
    if !report.is_clean() {
        return Err(AnnotationError::InvalidTaxonomy(report));
    }
    if units.is_empty() {
        return Err(AnnotationError::NoUnits);
    }
    let labels = tax.intention_labels();
    let system = format!(
        "You annotate revisions of a {} in the domain of {} with the edit intention each revision serves.",
        tax.task, tax.domain
    );
    let mut list = String::new();
    for l in &labels {
        list.push_str(&format!("- {l}\n"));
    }
    let mut out = Vec::with_capacity(units.len());
    for unit in units {
        let user = format!(
            "Intention labels:\n{list}\nSentence:\n{}\n\nEdit:\n{}\n\nAnswer with exactly one label from the list and nothing else.",
            unit.context, unit.text
        );
        let mut messages = vec![ChatMessage::system(system.clone()), ChatMessage::user(user)];
        let mut answer = provider.complete(&ChatRequest::new(ANNOTATE_TAG, messages.clone()))?.content;
        let mut label = resolve_label(tax, &extract_label(&answer));
        if label.is_none() {
            messages.push(ChatMessage::assistant(if answer.trim().is_empty() { "(empty)".to_string() } else { answer.clone() }));
            messages.push(ChatMessage::user(format!(
                "\"{}\" is not one of the labels. Answer with exactly one label copied from the list.",
                extract_label(&answer)
            )));
            answer = provider.complete(&ChatRequest::new(ANNOTATE_TAG, messages))?.content;
            label = resolve_label(tax, &extract_label(&answer));
        }
        let label = label.ok_or_else(|| AnnotationError::UnknownLabel {
            unit_index: unit.index,
            label: extract_label(&answer),
        })?;
        out.push(AnnotationRecord {
            coder_id: coder_id.to_string(),
            coder_kind: CoderKind::Llm,
            template_id: template_id.to_string(),
            unit_index: unit.index,
            label,
            note: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptRule, ScriptedProvider};
    use crate::testutil::{legal_email, LEGAL_INTENTION};

    fn template() -> WritingTemplate {
        WritingTemplate::new(
            "The case we are handling has similarities with other cases. We will meet Monday.",
            "The case we are handling is similar to the Smith case. We will meet on Monday.",
        )
    }

    #[test]
    fn units_per_edit_and_sentence() {
        let t = template();
        let units = annotation_units(&t, UnitMode::Edit);
        assert_eq!(units.len(), t.edits().len());
        assert!(units.iter().any(|u| u.text == "added: on"));
        let s = annotation_units(&t, UnitMode::Sentence);
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn annotate_resolves_labels() {
        let t = template();
        let units = annotation_units(&t, UnitMode::Edit);
        let p = ScriptedProvider::new(vec![
            ScriptRule::new(ANNOTATE_TAG, LEGAL_INTENTION).uses(1),
            ScriptRule::new(ANNOTATE_TAG, "legal argument strengthening."),
        ]);
        let recs = llm_annotate(&t.template_id, &units, &legal_email(), &p, "gpt").unwrap();
        assert_eq!(recs.len(), units.len());
        assert!(recs.iter().all(|r| r.label == LEGAL_INTENTION && r.coder_kind == CoderKind::Llm));
        assert_eq!(p.call_count(), units.len());
    }

    #[test]
    fn annotate_unknown_after_retry() {
        let t = template();
        let units = annotation_units(&t, UnitMode::Edit);
        let p = ScriptedProvider::new(vec![ScriptRule::new(ANNOTATE_TAG, "Banana")]);
        let err = llm_annotate(&t.template_id, &units, &legal_email(), &p, "gpt").unwrap_err();
        assert!(matches!(err, AnnotationError::UnknownLabel { unit_index: 0, .. }));
        assert_eq!(p.call_count(), 2);
        assert!(matches!(llm_annotate(&t.template_id, &[], &legal_email(), &p, "gpt"), Err(AnnotationError::NoUnits)));
    }

    #[test]
    fn records_serialize_in_file_shape() {
        let r = AnnotationRecord {
            coder_id: "a".into(),
            coder_kind: CoderKind::Llm,
            template_id: "t".into(),
            unit_index: 0,
            label: "X".into(),
            note: None,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"coder_id":"a","coder_kind":"LLM","template_id":"t","unit_index":0,"label":"X","note":null}"#
        );
        let bad = AnnotationRecord { label: "Banana".into(), ..r.clone() };
        assert!(canonicalize_records(&[bad], &legal_email()).is_err());
        let ok = AnnotationRecord { label: "LEGAL argument strengthening".into(), ..r };
        assert_eq!(canonicalize_records(&[ok], &legal_email()).unwrap()[0].label, LEGAL_INTENTION);
    }
}
