use serde::{Deserialize, Serialize};

/// Items extracted from a tagged model response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedParseResult {
    pub items: Vec<String>,
    pub saw_end_tag: bool,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TagError {
    #[error("tags must be non-empty and pairwise distinct")]
    BadTags,
    #[error("unbalanced tags: `{open}` at byte {offset} has no matching `{close}`")]
    UnbalancedTags { open: String, close: String, offset: usize },
}

/// Extracts the trimmed contents of every `open … close` span that precedes the
/// first `end` tag. Text outside spans, and everything after `end`, is ignored.
pub fn parse_tagged(raw: &str, open: &str, close: &str, end: &str) -> Result<TaggedParseResult, TagError> {
    if open.is_empty() || close.is_empty() || end.is_empty() || open == close || open == end || close == end {
        return Err(TagError::BadTags);
    }
    let (region, saw_end_tag) = match raw.find(end) {
        Some(pos) => (&raw[..pos], true),
        None => (raw, false),
    };

    let mut items = Vec::new();
    let mut cursor = 0;
    while let Some(rel) = region[cursor..].find(open) {
        let start = cursor + rel;
        let body_start = start + open.len();
        let next_open = region[body_start..].find(open).map(|p| body_start + p);
        let close_at = region[body_start..].find(close).map(|p| body_start + p);
        match (close_at, next_open) {
            (Some(c), Some(n)) if n < c => {
                return Err(TagError::UnbalancedTags {
                    open: open.into(),
                    close: close.into(),
                    offset: start,
                })
            }
            (Some(c), _) => {
                items.push(region[body_start..c].trim().to_string());
                cursor = c + close.len();
            }
            (None, _) => {
                return Err(TagError::UnbalancedTags {
                    open: open.into(),
                    close: close.into(),
                    offset: start,
                })
            }
        }
    }

    Ok(TaggedParseResult {
        items,
        saw_end_tag,
        raw: raw.to_string(),
    })
}

/// Formats items in the tagged list shape the prompts ask for, ending with `end`.
pub fn format_tagged(items: &[String], open: &str, close: &str, end: &str) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(open);
        out.push(' ');
        out.push_str(item);
        out.push(' ');
        out.push_str(close);
        out.push('\n');
    }
    out.push_str(end);
    out
}
