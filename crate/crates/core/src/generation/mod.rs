//! Hierarchical taxonomy generation.
//!
//! Each level is produced by one prompt per parent: intentions first, then the
//! descriptions of every intention, then example pairs for every description.
//! Responses use the `<tag> item </tag> … <end>` list protocol. Every generated
//! element then gets its own follow-up call asking for the reasoning behind it.

mod tagged;
mod templates;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::gateway::{ChatMessage, ChatProvider, ChatRequest, GatewayError};
use crate::taxonomy::{derive_id, normalize_label, ExamplePair, Level, NodeId, Taxonomy, TaxonomyBuilder, validate_structure};

pub use tagged::{format_tagged, parse_tagged, TagError, TaggedParseResult};
pub use templates::{render, PromptTemplates, DESCRIPTION_TEMPLATE, EXAMPLE_TEMPLATE, INTENTION_TEMPLATE, RATIONALE_TEMPLATE};

pub const END_TAG: &str = "<end>";
pub const DEFAULT_MIN_INTENTIONS: usize = 10;
pub const DEFAULT_MIN_DESCRIPTIONS: usize = 2;
pub const DEFAULT_MIN_EXAMPLES: usize = 2;
pub const RATIONALE_TAG: &str = "step1.rationale";

/// Open and close tags used for items at `level`.
pub fn level_tags(level: Level) -> (&'static str, &'static str) {
    match level {
        Level::Intention => ("<label>", "</label>"),
        Level::Description => ("<description>", "</description>"),
        Level::Example => ("<example>", "</example>"),
    }
}

pub fn request_tag(level: Level) -> String {
    format!("step1.{level}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationContext {
    pub domain: String,
    pub task: String,
    pub min_intentions: usize,
    pub min_descriptions: usize,
    pub min_examples: usize,
    /// Ancestors of the element being expanded, outermost first.
    pub parent_chain: Vec<(Level, String)>,
}

impl GenerationContext {
    pub fn new(domain: impl Into<String>, task: impl Into<String>) -> Self {
        GenerationContext {
            domain: domain.into(),
            task: task.into(),
            min_intentions: DEFAULT_MIN_INTENTIONS,
            min_descriptions: DEFAULT_MIN_DESCRIPTIONS,
            min_examples: DEFAULT_MIN_EXAMPLES,
            parent_chain: Vec::new(),
        }
    }

    pub fn with_min_intentions(mut self, n: usize) -> Self {
        self.min_intentions = n;
        self
    }

    pub fn min_for(&self, level: Level) -> usize {
        match level {
            Level::Intention => self.min_intentions,
            Level::Description => self.min_descriptions,
            Level::Example => self.min_examples,
        }
    }

    fn child(&self, level: Level, text: &str) -> Self {
        let mut ctx = self.clone();
        ctx.parent_chain.push((level, text.to_string()));
        ctx
    }

    fn parent_text(&self) -> Option<String> {
        self.parent_chain.last().map(|(_, t)| t.clone())
    }

    fn render_parent(&self) -> String {
        self.parent_chain
            .iter()
            .map(|(level, text)| {
                let name = match level {
                    Level::Intention => "Intention",
                    Level::Description => "Description",
                    Level::Example => "Example",
                };
                format!("{name}: {text}")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid generation context: {0}")]
    InvalidContext(String),
    #[error("{level} prompt requires its ancestors in the parent chain")]
    MissingParent { level: Level },
    #[error("{level} generation{} returned {found} item(s), at least {required} required", under(.parent))]
    TooFewItems {
        level: Level,
        parent: Option<String>,
        found: usize,
        required: usize,
    },
    #[error("{level} generation{} returned duplicate items: {}", under(.parent), .duplicates.join(", "))]
    DuplicateItems {
        level: Level,
        parent: Option<String>,
        duplicates: Vec<String>,
    },
    #[error("{level} generation{} did not end with {END_TAG}", under(.parent))]
    MissingEndTag { level: Level, parent: Option<String> },
    #[error("{level} generation{}: {source}", under(.parent))]
    UnbalancedTags {
        level: Level,
        parent: Option<String>,
        source: TagError,
    },
    #[error("{level} generation{}: malformed item {item:?}: {reason}", under(.parent))]
    MalformedItem {
        level: Level,
        parent: Option<String>,
        item: String,
        reason: String,
    },
    #[error("empty rationale for {level} {item:?}")]
    EmptyRationale { level: Level, item: String },
    #[error("{step} call failed: {source}")]
    Gateway { step: String, source: GatewayError },
    #[error("generation aborted after building {} node(s): {source}", .partial.nodes.len())]
    AbortedPartial {
        partial: Box<Taxonomy>,
        source: Box<GenerationError>,
    },
    #[error("generated taxonomy failed validation: {0}")]
    Invalid(String),
}

fn under(parent: &Option<String>) -> String {
    parent.as_ref().map(|p| format!(" under {p:?}")).unwrap_or_default()
}

impl GenerationError {
    /// Violations worth one corrective retry.
    fn is_repairable(&self) -> bool {
        matches!(
            self,
            GenerationError::TooFewItems { .. }
                | GenerationError::DuplicateItems { .. }
                | GenerationError::MissingEndTag { .. }
                | GenerationError::UnbalancedTags { .. }
                | GenerationError::MalformedItem { .. }
        )
    }

    /// The innermost cause, looking through [`GenerationError::AbortedPartial`].
    pub fn root_cause(&self) -> &GenerationError {
        match self {
            GenerationError::AbortedPartial { source, .. } => source.root_cause(),
            other => other,
        }
    }
}

/// A generated element with the reasoning supplied for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedItem {
    pub text: String,
    pub rationale: String,
}

/// Drives generation against a provider with a given template set.
pub struct Generator<'a> {
    provider: &'a dyn ChatProvider,
    templates: PromptTemplates,
}

impl<'a> Generator<'a> {
    pub fn new(provider: &'a dyn ChatProvider) -> Self {
        Generator {
            provider,
            templates: PromptTemplates::default(),
        }
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn render_prompt(&self, ctx: &GenerationContext, level: Level) -> Result<ChatRequest, GenerationError> {
        render_prompt_with(&self.templates, ctx, level)
    }

    fn call(&self, req: &ChatRequest) -> Result<String, GenerationError> {
        self.provider
            .complete(req)
            .map(|r| r.content)
            .map_err(|source| GenerationError::Gateway {
                step: req.request_tag.clone(),
                source,
            })
    }

    /// Generates the items of one level under the context's parent chain,
    /// with a rationale for each.
    pub fn generate_level(&self, ctx: &GenerationContext, level: Level) -> Result<Vec<GeneratedItem>, GenerationError> {
        let mut req = self.render_prompt(ctx, level)?;
        let first = self.call(&req)?;
        let items = match check_items(ctx, level, &first) {
            Ok(items) => items,
            Err(e) if e.is_repairable() => {
                tracing::debug!(%e, "repair retry");
                req.messages.push(ChatMessage::assistant(if first.is_empty() { "(empty)".to_string() } else { first }));
                req.messages.push(ChatMessage::user(format!(
                    "Your previous response did not follow the output guidelines: {e}. \
                     Please answer again, following every guideline and ending with {END_TAG}."
                )));
                let second = self.call(&req)?;
                check_items(ctx, level, &second)?
            }
            Err(e) => return Err(e),
        };

        items
            .into_iter()
            .map(|text| {
                let rationale = self.rationale(ctx, level, &text)?;
                Ok(GeneratedItem { text, rationale })
            })
            .collect()
    }

    fn rationale(&self, ctx: &GenerationContext, level: Level, item: &str) -> Result<String, GenerationError> {
        let parent = if ctx.parent_chain.is_empty() {
            String::new()
        } else {
            format!("It sits under:\n{}\n", ctx.render_parent())
        };
        let prompt = render(
            &self.templates.rationale,
            &[("domain", &ctx.domain), ("task", &ctx.task), ("parent", &parent), ("level", level.as_str()), ("item", item)],
        );
        let raw = self.call(&ChatRequest::new(RATIONALE_TAG, vec![ChatMessage::user(prompt)]))?;
        let text = match parse_tagged(&raw, "<rationale>", "</rationale>", END_TAG) {
            Ok(r) if !r.items.is_empty() => r.items.join(" "),
            _ => raw.replace(END_TAG, ""),
        };
        let text = text.trim().to_string();
        if text.is_empty() {
            return Err(GenerationError::EmptyRationale {
                level,
                item: item.to_string(),
            });
        }
        Ok(text)
    }

    /// Generates a complete version-1 taxonomy. On failure the error carries the
    /// tree built so far.
    pub fn build_taxonomy(&self, ctx: &GenerationContext, clock: &Clock) -> Result<Taxonomy, GenerationError> {
        if ctx.domain.trim().is_empty() || ctx.task.trim().is_empty() {
            return Err(GenerationError::InvalidContext("domain and task must be non-empty".into()));
        }
        let created_at = clock.now();
        let taxonomy_id = derive_id("tax", &[&ctx.domain, &ctx.task, &crate::taxonomy::format_timestamp(&created_at)]);
        let mut builder = TaxonomyBuilder::new(taxonomy_id, ctx.domain.clone(), ctx.task.clone(), created_at);
        let root_ctx = GenerationContext {
            parent_chain: Vec::new(),
            ..ctx.clone()
        };

        let abort = |builder: &TaxonomyBuilder, e: GenerationError| GenerationError::AbortedPartial {
            partial: Box::new(builder.snapshot()),
            source: Box::new(e),
        };

        let intentions = self.generate_level(&root_ctx, Level::Intention).map_err(|e| abort(&builder, e))?;
        let intention_ids: Vec<(NodeId, String)> = intentions
            .iter()
            .map(|item| (builder.intention(&item.text, &item.rationale), item.text.clone()))
            .collect();

        for (intention_id, label) in intention_ids {
            let desc_ctx = root_ctx.child(Level::Intention, &label);
            let descriptions = self.generate_level(&desc_ctx, Level::Description).map_err(|e| abort(&builder, e))?;
            let desc_ids: Vec<(NodeId, String)> = descriptions
                .iter()
                .map(|item| (builder.description(&intention_id, &item.text, &item.rationale), item.text.clone()))
                .collect();
            for (desc_id, text) in desc_ids {
                let ex_ctx = desc_ctx.child(Level::Description, &text);
                let examples = self.generate_level(&ex_ctx, Level::Example).map_err(|e| abort(&builder, e))?;
                for item in examples {
                    let pair = split_example(&item.text).map_err(|reason| {
                        abort(
                            &builder,
                            GenerationError::MalformedItem {
                                level: Level::Example,
                                parent: Some(text.clone()),
                                item: item.text.clone(),
                                reason,
                            },
                        )
                    })?;
                    builder.example(&desc_id, &pair.original, &pair.revised, &item.rationale);
                }
            }
        }

        let taxonomy = builder.build();
        let report = validate_structure(&taxonomy);
        if !report.is_clean() {
            return Err(GenerationError::AbortedPartial {
                source: Box::new(GenerationError::Invalid(report.summary())),
                partial: Box::new(taxonomy),
            });
        }
        Ok(taxonomy)
    }
}

/// Renders the generation prompt for `level` under `ctx`.
pub fn render_prompt_with(templates: &PromptTemplates, ctx: &GenerationContext, level: Level) -> Result<ChatRequest, GenerationError> {
    if ctx.domain.trim().is_empty() || ctx.task.trim().is_empty() {
        return Err(GenerationError::InvalidContext("domain and task must be non-empty".into()));
    }
    let required = match level {
        Level::Intention => &[][..],
        Level::Description => &[Level::Intention][..],
        Level::Example => &[Level::Intention, Level::Description][..],
    };
    let chain_levels: Vec<Level> = ctx.parent_chain.iter().map(|(l, _)| *l).collect();
    if chain_levels.len() < required.len() || &chain_levels[chain_levels.len() - required.len()..] != required {
        return Err(GenerationError::MissingParent { level });
    }
    let min = ctx.min_for(level).to_string();
    let parent = ctx.render_parent();
    let prompt = render(
        templates.for_level(level),
        &[("domain", &ctx.domain), ("task", &ctx.task), ("parent", &parent), ("min_count", &min)],
    );
    Ok(ChatRequest::new(request_tag(level), vec![ChatMessage::user(prompt)]))
}

/// Renders with the built-in templates.
pub fn render_prompt(ctx: &GenerationContext, level: Level) -> Result<ChatRequest, GenerationError> {
    render_prompt_with(&PromptTemplates::default(), ctx, level)
}

/// Splits `original → revised` on the first arrow (`→`, or `->` as fallback).
pub fn split_example(item: &str) -> Result<ExamplePair, String> {
    let (original, revised) = item
        .split_once('→')
        .or_else(|| item.split_once("->"))
        .ok_or_else(|| "expected `original → revised`".to_string())?;
    let (original, revised) = (original.trim(), revised.trim());
    if original.is_empty() || revised.is_empty() {
        return Err("both sides of the arrow must be non-empty".into());
    }
    if original == revised {
        return Err("original and revised text are identical".into());
    }
    Ok(ExamplePair::new(original, revised))
}

fn check_items(ctx: &GenerationContext, level: Level, raw: &str) -> Result<Vec<String>, GenerationError> {
    let parent = ctx.parent_text();
    let (open, close) = level_tags(level);
    let parsed = parse_tagged(raw, open, close, END_TAG).map_err(|source| GenerationError::UnbalancedTags {
        level,
        parent: parent.clone(),
        source,
    })?;
    if !parsed.saw_end_tag {
        return Err(GenerationError::MissingEndTag { level, parent });
    }
    if let Some(empty) = parsed.items.iter().find(|i| i.is_empty()) {
        return Err(GenerationError::MalformedItem {
            level,
            parent,
            item: empty.clone(),
            reason: "empty item".into(),
        });
    }
    if level == Level::Example {
        for item in &parsed.items {
            split_example(item).map_err(|reason| GenerationError::MalformedItem {
                level,
                parent: parent.clone(),
                item: item.clone(),
                reason,
            })?;
        }
    }
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for item in &parsed.items {
        *seen.entry(normalize_label(item)).or_default() += 1;
    }
    let duplicates: Vec<String> = seen.into_iter().filter(|(_, n)| *n > 1).map(|(k, _)| k).collect();
    if !duplicates.is_empty() {
        return Err(GenerationError::DuplicateItems { level, parent, duplicates });
    }
    let required = ctx.min_for(level);
    if parsed.items.len() < required {
        return Err(GenerationError::TooFewItems {
            level,
            parent,
            found: parsed.items.len(),
            required,
        });
    }
    Ok(parsed.items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptRule, ScriptedProvider};

    fn labels(n: usize) -> String {
        let items: Vec<String> = (1..=n).map(|i| format!("Label {i}")).collect();
        format_tagged(&items, "<label>", "</label>", END_TAG)
    }

    fn ctx() -> GenerationContext {
        GenerationContext::new("legal", "email")
    }

    #[test]
    fn intention_prompt_carries_guidelines() {
        let req = render_prompt(&ctx(), Level::Intention).unwrap();
        let text = &req.messages[0].content;
        assert!(text.contains("mutually exclusive"));
        assert!(text.contains("collectively exhaustive"));
        assert!(text.contains("<end>"));
        assert!(text.contains("Target Engagement"));
        assert!(text.contains("writing task of email"));
        assert!(text.contains("domain: legal"));
        assert!(text.contains("more than 10 labels"));
        assert_eq!(req.request_tag, "step1.intention");
        assert_eq!(req.temperature, 0.0);
    }

    #[test]
    fn sub_level_requires_parent() {
        assert!(matches!(render_prompt(&ctx(), Level::Description), Err(GenerationError::MissingParent { .. })));
        let c = ctx().child(Level::Intention, "Legal Argument Strengthening");
        assert!(matches!(render_prompt(&c, Level::Example), Err(GenerationError::MissingParent { .. })));
        let req = render_prompt(&c, Level::Description).unwrap();
        assert!(req.messages[0].content.contains("Legal Argument Strengthening"));
        assert_eq!(req.request_tag, "step1.description");
    }

    #[test]
    fn twelve_labels_with_rationales() {
        let p = ScriptedProvider::new(vec![ScriptRule::new("step1.intention", labels(12)), ScriptRule::new(RATIONALE_TAG, "Because.")]);
        let items = Generator::new(&p).generate_level(&ctx(), Level::Intention).unwrap();
        assert_eq!(items.len(), 12);
        assert!(items.iter().all(|i| i.rationale == "Because."));
        assert_eq!(p.calls_tagged(RATIONALE_TAG), 12);
    }

    #[test]
    fn nine_labels_too_few() {
        let p = ScriptedProvider::new(vec![ScriptRule::new("step1.intention", labels(9)), ScriptRule::new(RATIONALE_TAG, "r")]);
        let err = Generator::new(&p).generate_level(&ctx(), Level::Intention).unwrap_err();
        assert!(matches!(err, GenerationError::TooFewItems { found: 9, required: 10, .. }), "{err}");
        // one repair retry was attempted
        assert_eq!(p.calls_tagged("step1.intention"), 2);
    }

    #[test]
    fn duplicates_after_normalization() {
        let raw = "<label>Clarity</label><label>clarity.</label><end>";
        let p = ScriptedProvider::new(vec![ScriptRule::new("step1.intention", raw)]);
        let err = Generator::new(&p).generate_level(&ctx().with_min_intentions(1), Level::Intention).unwrap_err();
        assert!(matches!(err, GenerationError::DuplicateItems { ref duplicates, .. } if duplicates == &["clarity"]));
    }

    #[test]
    fn repair_retry_recovers() {
        let p = ScriptedProvider::new(vec![
            ScriptRule::new("step1.intention", "<label>A</label>").uses(1),
            ScriptRule::new("step1.intention", "<label>A</label><end>").containing("did not end with"),
            ScriptRule::new(RATIONALE_TAG, "<rationale> tagged reason </rationale>"),
        ]);
        let items = Generator::new(&p).generate_level(&ctx().with_min_intentions(1), Level::Intention).unwrap();
        assert_eq!(items, [GeneratedItem { text: "A".into(), rationale: "tagged reason".into() }]);
        let log = p.call_log();
        assert_eq!(log[1].messages.len(), 3);
    }

    #[test]
    fn empty_rationale_rejected() {
        let p = ScriptedProvider::new(vec![ScriptRule::new("step1.intention", "<label>A</label><end>"), ScriptRule::new(RATIONALE_TAG, "  ")]);
        let err = Generator::new(&p).generate_level(&ctx().with_min_intentions(1), Level::Intention).unwrap_err();
        assert!(matches!(err, GenerationError::EmptyRationale { .. }));
    }

    #[test]
    fn example_split() {
        let pair = split_example("The case we are handling has similarities with other cases. → The case we are handling is similar to Smith v. Jones.").unwrap();
        assert_eq!(pair.original, "The case we are handling has similarities with other cases.");
        assert!(pair.revised.contains("Smith v. Jones"));
        assert_eq!(split_example("a -> b").unwrap(), ExamplePair::new("a", "b"));
        assert!(split_example("no arrow").is_err());
        assert!(split_example("same → same").is_err());
    }
}
