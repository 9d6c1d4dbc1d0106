//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between the fields of a triple's canonical text.
pub const FIELD_SEPARATOR: &str = " | ";

/// Which adapter produced a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Graph,
    Document,
    Table,
    Labeled,
    Keyword,
}

/// One `(subject, relation, object)` fact.
///
/// Fields are normalized on construction: tabs and newlines become single
/// spaces and surrounding whitespace is trimmed. Equality and hashing look at
/// the three fields only; `source_tag` is provenance and does not take part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgeTriple {
    subject: String,
    relation: String,
    object: String,
    source_tag: SourceTag,
}

fn normalize_field(name: &str, raw: &str) -> Result<String> {
    let cleaned: String = raw
        .chars()
        .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
        .collect();
    let cleaned = cleaned.trim();
    if cleaned.is_empty() {
        return Err(Error::InvalidTriple(format!("{name} is empty")));
    }
    // a field edge of " |" or "| " would fuse with the separator when rendered
    if cleaned.contains(FIELD_SEPARATOR) || cleaned.starts_with("| ") || cleaned.ends_with(" |") {
        return Err(Error::InvalidTriple(format!(
            "{name} {cleaned:?} contains the reserved separator {FIELD_SEPARATOR:?}"
        )));
    }
    Ok(cleaned.to_owned())
}

impl KnowledgeTriple {
    pub fn new(
        subject: impl AsRef<str>,
        relation: impl AsRef<str>,
        object: impl AsRef<str>,
        source_tag: SourceTag,
    ) -> Result<Self> {
        Ok(Self {
            subject: normalize_field("subject", subject.as_ref())?,
            relation: normalize_field("relation", relation.as_ref())?,
            object: normalize_field("object", object.as_ref())?,
            source_tag,
        })
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn relation(&self) -> &str {
        &self.relation
    }

    pub fn object(&self) -> &str {
        &self.object
    }

    pub fn source_tag(&self) -> SourceTag {
        self.source_tag
    }

    pub fn with_source_tag(mut self, tag: SourceTag) -> Self {
        self.source_tag = tag;
        self
    }

    pub fn fields(&self) -> [&str; 3] {
        [&self.subject, &self.relation, &self.object]
    }

    /// `"<subject> | <relation> | <object>"`.
    pub fn canonical_text(&self) -> String {
        format!(
            "{}{FIELD_SEPARATOR}{}{FIELD_SEPARATOR}{}",
            self.subject, self.relation, self.object
        )
    }

    /// Inverse of [`canonical_text`](Self::canonical_text).
    pub fn parse_canonical(text: &str, source_tag: SourceTag) -> Result<Self> {
        let parts: Vec<&str> = text.split(FIELD_SEPARATOR).collect();
        match parts.as_slice() {
            [s, r, o] => Self::new(s, r, o, source_tag),
            _ => Err(Error::InvalidTriple(format!(
                "{text:?} does not have exactly three fields"
            ))),
        }
    }
}

impl PartialEq for KnowledgeTriple {
    fn eq(&self, other: &Self) -> bool {
        self.fields() == other.fields()
    }
}

impl Eq for KnowledgeTriple {}

impl Hash for KnowledgeTriple {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.fields().hash(state);
    }
}

impl fmt::Display for KnowledgeTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_text())
    }
}

pub fn canonical_text(triple: &KnowledgeTriple) -> String {
    triple.canonical_text()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Seeker,
    Responder,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Seeker => "seeker",
            Speaker::Responder => "responder",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueTurn {
    pub speaker: Speaker,
    pub text: String,
    pub golden_knowledge: Option<Vec<KnowledgeTriple>>,
    pub golden_items: Option<Vec<String>>,
}

impl DialogueTurn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("turn text is empty".into()));
        }
        Ok(Self {
            speaker,
            text,
            golden_knowledge: None,
            golden_items: None,
        })
    }

    pub fn with_knowledge(mut self, knowledge: Vec<KnowledgeTriple>) -> Self {
        self.golden_knowledge = (!knowledge.is_empty()).then_some(knowledge);
        self
    }

    pub fn with_items(mut self, items: Vec<String>) -> Self {
        self.golden_items = (!items.is_empty()).then_some(items);
        self
    }

    pub fn is_responder(&self) -> bool {
        self.speaker == Speaker::Responder
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub topic: String,
    pub task_tag: String,
    pub domain_tag: String,
    pub turns: Vec<DialogueTurn>,
}

impl Dialogue {
    /// Indices of responder turns, in order.
    pub fn responder_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_responder())
            .map(|(i, _)| i)
    }
}
