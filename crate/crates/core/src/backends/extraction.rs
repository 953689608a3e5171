//! Parser for the `("entity"<|>...)` / `("relationship"<|>...)` tuple format.

use serde::{Deserialize, Serialize};

pub const TUPLE_DELIMITER: &str = "<|>";
const RECORD_DELIMITER: &str = "##";
const COMPLETION_MARKER: &str = "<|COMPLETE|>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedEntity {
    pub name: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedRelation {
    pub source: String,
    pub target: String,
    pub description: String,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionRecord {
    pub chunk_id: String,
    pub entities: Vec<ExtractedEntity>,
    pub relations: Vec<ExtractedRelation>,
}

impl ExtractionRecord {
    pub fn empty(chunk_id: impl Into<String>) -> Self {
        Self {
            chunk_id: chunk_id.into(),
            entities: Vec::new(),
            relations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedExtraction {
    pub entities: Vec<ExtractedEntity>,
    pub relations: Vec<ExtractedRelation>,
    /// Non-blank records that were not well-formed tuples.
    pub skipped: usize,
}

impl ParsedExtraction {
    pub fn into_record(self, chunk_id: impl Into<String>) -> ExtractionRecord {
        ExtractionRecord {
            chunk_id: chunk_id.into(),
            entities: self.entities,
            relations: self.relations,
        }
    }
}

fn clean_field(s: &str) -> &str {
    s.trim().trim_matches('"').trim()
}

enum Tuple {
    Entity(ExtractedEntity),
    Relation(ExtractedRelation),
}

fn parse_tuple(record: &str) -> Option<Tuple> {
    let inner = record.strip_prefix('(')?.strip_suffix(')')?;
    // Some prompt variants close the last field with a stray '>'.
    let inner = inner.strip_suffix('>').unwrap_or(inner);
    let fields: Vec<&str> = inner.split(TUPLE_DELIMITER).map(clean_field).collect();
    match fields.first()?.to_ascii_lowercase().as_str() {
        "entity" if fields.len() == 4 || fields.len() == 3 => {
            let (name, ty) = (fields[1], fields[2]);
            if name.is_empty() || ty.is_empty() {
                return None;
            }
            Some(Tuple::Entity(ExtractedEntity {
                name: name.to_string(),
                entity_type: ty.to_uppercase(),
                description: fields.get(3).copied().unwrap_or("").to_string(),
            }))
        }
        "relationship" if fields.len() == 5 => {
            let (source, target) = (fields[1], fields[2]);
            let strength: f64 = fields[4].parse().ok()?;
            if source.is_empty() || target.is_empty() || !strength.is_finite() {
                return None;
            }
            Some(Tuple::Relation(ExtractedRelation {
                source: source.to_string(),
                target: target.to_string(),
                description: fields[3].to_string(),
                strength,
            }))
        }
        _ => None,
    }
}

/// Parses raw extraction output. Records are separated by newlines or `##`;
/// malformed records are skipped and counted, never fatal.
pub fn parse_extraction_output(raw: &str) -> ParsedExtraction {
    let mut out = ParsedExtraction::default();
    for line in raw.lines() {
        for record in line.split(RECORD_DELIMITER) {
            let record = record.trim().trim_end_matches(COMPLETION_MARKER).trim();
            if record.is_empty() {
                continue;
            }
            match parse_tuple(record) {
                Some(Tuple::Entity(e)) => out.entities.push(e),
                Some(Tuple::Relation(r)) => out.relations.push(r),
                None => out.skipped += 1,
            }
        }
    }
    out
}
