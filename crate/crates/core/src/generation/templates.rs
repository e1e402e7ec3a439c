use std::path::Path;

use crate::taxonomy::Level;

pub const INTENTION_TEMPLATE: &str = r#"You're a helpful assistant helping a user generate the labels of edit intentions in their writing task of {task}.
The user is a business professional in the following domain: {domain}.

### Output Guidelines:

- Suppose that the user revises their original text of {task} for better communications within their domain group (e.g., a marketing person for other team members in the marketing team; an HR worker writing for the HR team, etc.)
- Please consider intentions of revising contents, specifically for the domain of {domain}.
- In addition to domain-specific content-related taxonomy, include general syntactic revision intentions, such as grammar corrections, style coherency, clarity, etc.
- Please generate labels of feasible scenarios as much as you can. It should be more than {min_count} labels at least.
- For each generated intention, prepend the token <label> and append </label>.
- Please consider that all those generated labels must be mutually exclusive (e.g., no overlapping between labels).
- Please consider that all those generated labels must be collectively exhaustive (e.g., cover every possible case of revision intentions in practice).
- Once you finish generating all possible labels of revision intention of {task} for the domain of {domain}, end your response with the tag <end>.


### Example

Given the domain of marketing and the writing task of email, the example looks as follows:

```
<label> Target Engagement </label>
<label> Visual Content Integration </label>
<label> Data-Driven Insights Presentation </label>
....
<end>
```
### Output
"#;

pub const DESCRIPTION_TEMPLATE: &str = r#"You're a helpful assistant helping a user describe one edit intention in their writing task of {task}.
The user is a business professional in the following domain: {domain}.

The edit intention is:
{parent}

### Output Guidelines:

- Describe the concrete kinds of revisions that fall under this intention, specifically for the domain of {domain}.
- Each description is one sentence stating what the writer changes and why.
- Please generate at least {min_count} descriptions.
- For each generated description, prepend the token <description> and append </description>.
- Please consider that all those generated descriptions must be mutually exclusive (e.g., no overlapping between descriptions).
- Please consider that all those generated descriptions must be collectively exhaustive (e.g., cover every possible way this intention shows up in practice).
- Once you finish generating all descriptions, end your response with the tag <end>.


### Example

Given the intention "Target Engagement" for marketing emails, the example looks as follows:

```
<description> Personalizing the opening to the recipient's role and interests. </description>
<description> Adding a clear call-to-action that invites a reply. </description>
....
<end>
```
### Output
"#;

pub const EXAMPLE_TEMPLATE: &str = r#"You're a helpful assistant helping a user illustrate one edit intention in their writing task of {task}.
The user is a business professional in the following domain: {domain}.

The element to illustrate is:
{parent}

### Output Guidelines:

- Write pairs of an original sentence and its revised sentence, where the revision applies the description above.
- Write each pair on one line as: original sentence → revised sentence
- The original and the revised sentence must differ.
- Please generate at least {min_count} pairs.
- For each generated pair, prepend the token <example> and append </example>.
- Please consider that all those generated pairs must be mutually exclusive (e.g., no two pairs showing the same revision).
- Please consider that all those generated pairs must be collectively exhaustive (e.g., cover the typical situations for this description).
- Once you finish generating all pairs, end your response with the tag <end>.


### Example

Given the description "Adding a clear call-to-action that invites a reply." for marketing emails, the example looks as follows:

```
<example> Let us know what you think. → Reply by Friday to reserve your spot. </example>
<example> We hope you like the offer. → Click the link below to claim the offer today. </example>
....
<end>
```
### Output
"#;

pub const RATIONALE_TEMPLATE: &str = r#"You're a helpful assistant documenting a taxonomy of edit intentions for the writing task of {task} in the domain of {domain}.
{parent}
Explain in one or two sentences why the following {level} belongs in this taxonomy:
{item}

Answer with the reasoning only.
"#;

/// The four prompt skeletons used during generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub intention: String,
    pub description: String,
    pub example: String,
    pub rationale: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            intention: INTENTION_TEMPLATE.into(),
            description: DESCRIPTION_TEMPLATE.into(),
            example: EXAMPLE_TEMPLATE.into(),
            rationale: RATIONALE_TEMPLATE.into(),
        }
    }
}

impl PromptTemplates {
    /// Loads `intention.txt`, `description.txt`, `example.txt` and `rationale.txt`
    /// from `dir`; any missing file falls back to the built-in template.
    pub fn load_dir(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("template directory {} does not exist", dir.display()),
            ));
        }
        let read = |name: &str, fallback: &str| -> std::io::Result<String> {
            let path = dir.join(name);
            if path.exists() {
                std::fs::read_to_string(path)
            } else {
                Ok(fallback.to_string())
            }
        };
        Ok(PromptTemplates {
            intention: read("intention.txt", INTENTION_TEMPLATE)?,
            description: read("description.txt", DESCRIPTION_TEMPLATE)?,
            example: read("example.txt", EXAMPLE_TEMPLATE)?,
            rationale: read("rationale.txt", RATIONALE_TEMPLATE)?,
        })
    }

    pub fn for_level(&self, level: Level) -> &str {
        match level {
            Level::Intention => &self.intention,
            Level::Description => &self.description,
            Level::Example => &self.example,
        }
    }
}

/// Substitutes `{name}` placeholders. Unknown placeholders and stray braces are
/// left as written.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let substituted = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match substituted {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_known_and_unknown() {
        assert_eq!(render("{a} and {b} {", &[("a", "x")]), "x and {b} {");
        assert_eq!(render("{{a}}", &[("a", "x")]), "{x}");
    }

    #[test]
    fn load_dir_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("intention.txt"), "custom {domain}").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.intention, "custom {domain}");
        assert_eq!(t.example, EXAMPLE_TEMPLATE);
        assert!(PromptTemplates::load_dir(dir.path().join("missing")).is_err());
    }
}
