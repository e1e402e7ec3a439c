//! Canonical JSON file format for taxonomy versions.
//!
//! Nodes are written depth-first and object keys in a fixed order, so equal
//! taxonomies serialize to identical bytes. Root order is carried implicitly by
//! the order of intention nodes in the array.

use std::collections::BTreeMap;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{validate_structure, ExamplePair, Level, NodeContent, NodeId, Provenance, Taxonomy, TaxonomyNode, ValidationReport};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("refusing to serialize an invalid taxonomy: {}", .0.summary())]
    Invalid(ValidationReport),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTaxonomy {
    taxonomy_id: String,
    domain: String,
    task: String,
    version: u32,
    parent_version: Option<u32>,
    created_at: String,
    nodes: Vec<WireNode>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireNode {
    id: String,
    level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    example: Option<ExamplePair>,
    rationale: String,
    provenance: Provenance,
    children: Vec<String>,
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Canonical bytes for `tax`: pretty-printed UTF-8 JSON with a trailing newline.
pub fn serialize(tax: &Taxonomy) -> Result<Vec<u8>, CodecError> {
    let report = validate_structure(tax);
    if !report.is_clean() {
        return Err(CodecError::Invalid(report));
    }
    let nodes = tax
        .depth_first()
        .into_iter()
        .map(|id| {
            let node = &tax.nodes[&id];
            let (label, description, example) = match &node.content {
                NodeContent::Intention { label } => (Some(label.clone()), None, None),
                NodeContent::Description { text } => (None, Some(text.clone()), None),
                NodeContent::Example(pair) => (None, None, Some(pair.clone())),
            };
            WireNode {
                id: node.id.0.clone(),
                level: node.level(),
                label,
                description,
                example,
                rationale: node.rationale.clone(),
                provenance: node.provenance.clone(),
                children: node.children.iter().map(|c| c.0.clone()).collect(),
            }
        })
        .collect();
    let wire = WireTaxonomy {
        taxonomy_id: tax.taxonomy_id.clone(),
        domain: tax.domain.clone(),
        task: tax.task.clone(),
        version: tax.version,
        parent_version: tax.parent_version,
        created_at: format_timestamp(&tax.created_at),
        nodes,
    };
    let mut bytes = serde_json::to_vec_pretty(&wire).map_err(|e| CodecError::Schema(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parses a taxonomy document. Structural invariants are not checked here; run
/// [`validate_structure`] on the result.
pub fn deserialize(bytes: &[u8]) -> Result<Taxonomy, CodecError> {
    let wire: WireTaxonomy = serde_json::from_slice(bytes).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => CodecError::Schema(e.to_string()),
            _ => CodecError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
        }
    })?;

    let created_at = DateTime::parse_from_rfc3339(&wire.created_at)
        .map_err(|e| CodecError::Schema(format!("created_at is not RFC 3339: {e}")))?
        .with_timezone(&Utc);
    if wire.version == 0 {
        return Err(CodecError::Schema("version must be >= 1".into()));
    }

    let mut roots = Vec::new();
    let mut nodes = BTreeMap::new();
    for w in wire.nodes {
        let content = match (w.level, w.label, w.description, w.example) {
            (Level::Intention, Some(label), None, None) => NodeContent::Intention { label },
            (Level::Description, None, Some(text), None) => NodeContent::Description { text },
            (Level::Example, None, None, Some(pair)) => NodeContent::Example(pair),
            (level, ..) => {
                return Err(CodecError::Schema(format!(
                    "node {}: a {level} node must carry exactly the `{}` field",
                    w.id,
                    match level {
                        Level::Intention => "label",
                        Level::Description => "description",
                        Level::Example => "example",
                    }
                )))
            }
        };
        let id = NodeId(w.id);
        if content.level() == Level::Intention {
            roots.push(id.clone());
        }
        let node = TaxonomyNode {
            id: id.clone(),
            content,
            rationale: w.rationale,
            children: w.children.into_iter().map(NodeId).collect(),
            provenance: w.provenance,
        };
        if nodes.insert(id.clone(), node).is_some() {
            return Err(CodecError::Schema(format!("duplicate node id {id}")));
        }
    }

    Ok(Taxonomy {
        taxonomy_id: wire.taxonomy_id,
        domain: wire.domain,
        task: wire.task,
        version: wire.version,
        parent_version: wire.parent_version,
        created_at,
        roots,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{ProvenanceKind, TaxonomyBuilder};

    fn sample() -> Taxonomy {
        let ts = DateTime::parse_from_rfc3339("2024-03-01T12:00:00Z").unwrap().with_timezone(&Utc);
        let mut b = TaxonomyBuilder::new("tax-1", "legal", "email", ts);
        let i = b.intention("Clarity", "readers skim");
        let d = b.description(&i, "Shorten sentences", "long emails lose readers");
        b.example(&d, "We would like to ask you to reply.", "Please reply.", "direct");
        b.build()
    }

    #[test]
    fn key_order_is_fixed() {
        let text = String::from_utf8(serialize(&sample()).unwrap()).unwrap();
        let keys = ["\"taxonomy_id\"", "\"domain\"", "\"task\"", "\"version\"", "\"parent_version\"", "\"created_at\"", "\"nodes\""];
        let positions: Vec<_> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{text}");
        let node_keys = ["\"id\"", "\"level\"", "\"label\"", "\"rationale\"", "\"provenance\"", "\"children\""];
        let positions: Vec<_> = node_keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{text}");
        assert!(text.contains("\"created_at\": \"2024-03-01T12:00:00Z\""));
        assert!(text.ends_with("}\n"));
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let bytes = serialize(&t).unwrap();
        assert_eq!(deserialize(&bytes).unwrap(), t);
        assert_eq!(serialize(&deserialize(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn malformed_is_parse_error() {
        assert!(matches!(deserialize(b"{"), Err(CodecError::Parse { .. })));
    }

    #[test]
    fn wrong_shape_is_schema_error() {
        assert!(matches!(deserialize(b"{\"taxonomy_id\": 3}"), Err(CodecError::Schema(_))));
        let mut v: serde_json::Value = serde_json::from_slice(&serialize(&sample()).unwrap()).unwrap();
        v["nodes"][0]["description"] = "extra".into();
        let err = deserialize(&serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(matches!(err, CodecError::Schema(_)), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut v: serde_json::Value = serde_json::from_slice(&serialize(&sample()).unwrap()).unwrap();
        v["nodes"][1]["id"] = "n1".into();
        assert!(matches!(deserialize(&serde_json::to_vec(&v).unwrap()), Err(CodecError::Schema(_))));
    }

    #[test]
    fn invalid_taxonomy_not_serialized() {
        let mut t = sample();
        t.nodes.get_mut(&NodeId::from("n1")).unwrap().rationale.clear();
        assert!(matches!(serialize(&t), Err(CodecError::Invalid(_))));
    }

    #[test]
    fn provenance_wire_names() {
        let mut t = sample();
        t.nodes.get_mut(&NodeId::from("n2")).unwrap().provenance = Provenance::new(ProvenanceKind::ExpertRevision, "s1");
        let text = String::from_utf8(serialize(&t).unwrap()).unwrap();
        assert!(text.contains("\"kind\": \"expert_revision\""));
        assert!(text.contains("\"level\": \"description\""));
    }
}
