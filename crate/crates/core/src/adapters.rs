//! Source adapters. Every knowledge source is reduced to [`KnowledgeTriple`]
//! values and every dialogue corpus to [`Dialogue`] values.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::store::KnowledgeStore;
use crate::text::tokenize_metric;
use crate::types::{Dialogue, DialogueTurn, KnowledgeTriple, SourceTag, Speaker, FIELD_SEPARATOR};

pub const DEFAULT_CELL_DELIMITER: &str = ";";
pub const FALLBACK_RELATION: &str = "states";
pub const KEYWORD_RELATION: &str = "keyword";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    Tsv,
    NTriples,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    open(path)?
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

pub fn load_triple_dump(path: impl AsRef<Path>, format: DumpFormat) -> Result<KnowledgeStore> {
    let path = path.as_ref();
    let reader = open(path)?;
    parse_triple_dump(reader, &path.display().to_string(), format)
}

/// Parse a triple dump from any reader. `origin` names the input in errors.
pub fn parse_triple_dump(reader: impl BufRead, origin: &str, format: DumpFormat) -> Result<KnowledgeStore> {
    let mut store = KnowledgeStore::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        let parsed = match format {
            DumpFormat::Tsv => parse_tsv_line(&line),
            DumpFormat::NTriples => parse_ntriples_line(&line),
        };
        match parsed {
            Ok(Some(triple)) => {
                store.insert(triple);
            }
            Ok(None) => {}
            Err(msg) => return Err(Error::parse(origin, lineno, msg)),
        }
    }
    Ok(store)
}

fn parse_tsv_line(line: &str) -> std::result::Result<Option<KnowledgeTriple>, String> {
    if line.is_empty() {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split('\t').collect();
    let [s, r, o] = fields.as_slice() else {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    };
    KnowledgeTriple::new(s, r, o, SourceTag::Graph)
        .map(Some)
        .map_err(|e| e.to_string())
}

/// Final path segment of an IRI with underscores read as spaces.
pub fn iri_label(iri: &str) -> String {
    let trimmed = iri.trim_end_matches(['/', '#']);
    let cut = trimmed.rfind(['/', '#']).map_or(0, |i| i + 1);
    trimmed[cut..].replace('_', " ")
}

enum Term {
    Iri(String),
    Literal(String),
}

struct NtCursor<'a> {
    rest: &'a str,
}

impl<'a> NtCursor<'a> {
    fn skip_ws(&mut self) {
        self.rest = self.rest.trim_start();
    }

    fn term(&mut self) -> std::result::Result<Term, String> {
        self.skip_ws();
        if let Some(body) = self.rest.strip_prefix('<') {
            let end = body.find('>').ok_or("unterminated IRI")?;
            let iri = &body[..end];
            self.rest = &body[end + 1..];
            Ok(Term::Iri(iri.to_owned()))
        } else if let Some(body) = self.rest.strip_prefix('"') {
            let mut out = String::new();
            let mut chars = body.char_indices();
            let end = loop {
                let (i, c) = chars.next().ok_or("unterminated literal")?;
                match c {
                    '"' => break i,
                    '\\' => {
                        let (_, esc) = chars.next().ok_or("dangling escape")?;
                        match esc {
                            't' => out.push('\t'),
                            'n' => out.push('\n'),
                            'r' => out.push('\r'),
                            '"' => out.push('"'),
                            '\\' => out.push('\\'),
                            'u' | 'U' => {
                                let width = if esc == 'u' { 4 } else { 8 };
                                let hex: String = (0..width).filter_map(|_| chars.next().map(|(_, h)| h)).collect();
                                let code = u32::from_str_radix(&hex, 16)
                                    .ok()
                                    .and_then(char::from_u32)
                                    .ok_or_else(|| format!("bad unicode escape \\{esc}{hex}"))?;
                                out.push(code);
                            }
                            other => return Err(format!("unknown escape \\{other}")),
                        }
                    }
                    c => out.push(c),
                }
            };
            self.rest = &body[end + 1..];
            // language tag or datatype are accepted and discarded
            if let Some(tagged) = self.rest.strip_prefix('@') {
                let len = tagged
                    .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-'))
                    .unwrap_or(tagged.len());
                self.rest = &tagged[len..];
            } else if let Some(typed) = self.rest.strip_prefix("^^") {
                self.rest = typed;
                match self.term()? {
                    Term::Iri(_) => {}
                    Term::Literal(_) => return Err("datatype must be an IRI".into()),
                }
            }
            Ok(Term::Literal(out))
        } else if self.rest.starts_with("_:") {
            Err("blank nodes are not supported".into())
        } else {
            Err(format!(
                "unexpected token at {:?}",
                self.rest.chars().take(16).collect::<String>()
            ))
        }
    }
}

fn parse_ntriples_line(line: &str) -> std::result::Result<Option<KnowledgeTriple>, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let mut cur = NtCursor { rest: trimmed };
    let field = |term: Term, what: &str| match term {
        Term::Iri(iri) => Ok(iri_label(&iri)),
        Term::Literal(_) if what != "object" => Err(format!("{what} must be an IRI")),
        Term::Literal(lit) => Ok(lit),
    };
    let subject = field(cur.term()?, "subject")?;
    let predicate = field(cur.term()?, "predicate")?;
    let object = field(cur.term()?, "object")?;
    cur.skip_ws();
    if cur.rest != "." {
        return Err("expected terminating '.'".into());
    }
    KnowledgeTriple::new(subject, predicate, object, SourceTag::Graph)
        .map(Some)
        .map_err(|e| e.to_string())
}

/// A grounding passage: a titled sequence of sentences.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PassageDoc {
    pub title: String,
    pub sentences: Vec<String>,
}

impl PassageDoc {
    pub fn new(title: impl Into<String>, sentences: Vec<String>) -> Result<Self> {
        let doc = Self {
            title: title.into(),
            sentences,
        };
        doc.validate()?;
        Ok(doc)
    }

    fn validate(&self) -> Result<()> {
        if self.title.trim().is_empty() {
            return Err(Error::InvalidInput("passage title is empty".into()));
        }
        if self.sentences.is_empty() {
            return Err(Error::InvalidInput(format!(
                "passage {:?} has no sentences",
                self.title
            )));
        }
        Ok(())
    }

    pub fn full_text(&self) -> String {
        let mut text = self.title.clone();
        for s in &self.sentences {
            text.push(' ');
            text.push_str(s);
        }
        text
    }
}

/// Turns a passage into triples. Implementations must emit at least one
/// triple per sentence.
pub trait TripleExtractor {
    fn extract(&self, doc: &PassageDoc) -> Vec<KnowledgeTriple>;
}

/// Splits a sentence around the first verb found in a fixed lexicon.
#[derive(Debug, Clone, Default)]
pub struct VerbLexiconExtractor {
    verbs: HashSet<String>,
}

impl VerbLexiconExtractor {
    pub fn new(verbs: impl IntoIterator<Item = impl AsRef<str>>) -> Self {
        Self {
            verbs: verbs
                .into_iter()
                .map(|v| tokenize_metric(v.as_ref()).join(" "))
                .filter(|v| !v.is_empty())
                .collect(),
        }
    }

    fn split(&self, sentence: &str) -> Option<KnowledgeTriple> {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        if words.len() < 3 {
            return None;
        }
        let verb_at = (1..words.len() - 1).find(|&i| self.verbs.contains(&tokenize_metric(words[i]).join(" ")))?;
        let strip = |s: &str| {
            s.trim_matches(|c: char| c.is_ascii_punctuation() && c != '\'' && c != ')')
                .to_owned()
        };
        let subject = words[..verb_at].join(" ");
        let object = strip(&words[verb_at + 1..].join(" "));
        let relation = strip(words[verb_at]);
        KnowledgeTriple::new(subject, relation, object, SourceTag::Document).ok()
    }
}

impl TripleExtractor for VerbLexiconExtractor {
    fn extract(&self, doc: &PassageDoc) -> Vec<KnowledgeTriple> {
        doc.sentences
            .iter()
            .filter_map(|sentence| self.split(sentence).or_else(|| fallback_triple(&doc.title, sentence)))
            .collect()
    }
}

/// Triples extracted offline by an external tool, keyed by passage title.
/// Passages with no entry fall back to one `states` triple per sentence.
#[derive(Debug, Clone, Default)]
pub struct PreExtracted {
    by_title: BTreeMap<String, Vec<KnowledgeTriple>>,
}

impl PreExtracted {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, title: impl Into<String>, triples: Vec<KnowledgeTriple>) {
        self.by_title.entry(title.into()).or_default().extend(triples);
    }
}

impl TripleExtractor for PreExtracted {
    fn extract(&self, doc: &PassageDoc) -> Vec<KnowledgeTriple> {
        match self.by_title.get(&doc.title) {
            Some(triples) if !triples.is_empty() => triples.clone(),
            _ => doc
                .sentences
                .iter()
                .filter_map(|s| fallback_triple(&doc.title, s))
                .collect(),
        }
    }
}

fn fallback_triple(title: &str, sentence: &str) -> Option<KnowledgeTriple> {
    // sentences are free text, so an embedded separator is softened rather than rejected
    let sentence = sentence.replace(FIELD_SEPARATOR, " / ");
    let sentence = sentence.trim_start_matches("| ").trim_end_matches(" |");
    KnowledgeTriple::new(title, FALLBACK_RELATION, sentence, SourceTag::Document).ok()
}

pub fn extract_document_triples(doc: &PassageDoc, extractor: &dyn TripleExtractor) -> Vec<KnowledgeTriple> {
    extractor
        .extract(doc)
        .into_iter()
        .map(|t| t.with_source_tag(SourceTag::Document))
        .collect()
}

pub fn load_passages(path: impl AsRef<Path>) -> Result<Vec<PassageDoc>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let mut docs = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: PassageDoc = serde_json::from_str(line).map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?;
        doc.validate()
            .map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

/// One database row: an entity and named column values.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub entity: String,
    pub columns: BTreeMap<String, String>,
}

/// One triple per (row, mapped column, cell value). Multi-valued cells are
/// split on `delimiter`; empty pieces are skipped.
pub fn load_tabular(
    rows: &[TableRow],
    relation_map: &BTreeMap<String, String>,
    delimiter: &str,
) -> Result<KnowledgeStore> {
    let mut store = KnowledgeStore::new();
    for row in rows {
        if row.entity.trim().is_empty() {
            return Err(Error::InvalidInput("table row with empty entity".into()));
        }
        for (column, relation) in relation_map {
            let Some(cell) = row.columns.get(column) else {
                continue;
            };
            let values: Vec<&str> = if delimiter.is_empty() {
                vec![cell.as_str()]
            } else {
                cell.split(delimiter).collect()
            };
            for value in values.into_iter().map(str::trim).filter(|v| !v.is_empty()) {
                store.insert(KnowledgeTriple::new(&row.entity, relation, value, SourceTag::Table)?);
            }
        }
    }
    Ok(store)
}

/// Read a CSV table with a header row whose first column holds the entity.
pub fn load_table_csv(path: impl AsRef<Path>) -> Result<Vec<TableRow>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let mut reader = csv::Reader::from_reader(open(path)?);
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::parse(&origin, line, e.to_string())
    };
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let entity = record.get(0).unwrap_or_default().to_owned();
        let columns = header
            .iter()
            .skip(1)
            .zip(record.iter().skip(1))
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.clone(), v.to_owned()))
            .collect();
        rows.push(TableRow { entity, columns });
    }
    Ok(rows)
}

/// `(entity, "keyword", kw)` for every keyword, order and duplicates kept.
pub fn load_keyword_source(entity: &str, keywords: &[String]) -> Result<Vec<KnowledgeTriple>> {
    if entity.trim().is_empty() {
        return Err(Error::InvalidInput("keyword source with empty entity".into()));
    }
    keywords
        .iter()
        .map(|kw| KnowledgeTriple::new(entity, KEYWORD_RELATION, kw, SourceTag::Keyword))
        .collect()
}

#[derive(Deserialize)]
struct KeywordRecord {
    entity: String,
    keywords: Vec<String>,
}

pub fn load_keyword_file(path: impl AsRef<Path>) -> Result<Vec<KnowledgeTriple>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: KeywordRecord = serde_json::from_str(line).map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?;
        let triples =
            load_keyword_source(&rec.entity, &rec.keywords).map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?;
        out.extend(triples);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
    #[serde(default)]
    knowledge: Option<Vec<[String; 3]>>,
    #[serde(default)]
    items: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct DialogueRecord {
    id: String,
    topic: String,
    task: String,
    domain: String,
    turns: Vec<TurnRecord>,
}

impl DialogueRecord {
    fn into_dialogue(self) -> Result<Dialogue> {
        let turns = self
            .turns
            .into_iter()
            .map(|t| {
                let knowledge = t
                    .knowledge
                    .unwrap_or_default()
                    .iter()
                    .map(|[s, r, o]| KnowledgeTriple::new(s, r, o, SourceTag::Labeled))
                    .collect::<Result<Vec<_>>>()?;
                Ok(DialogueTurn::new(t.speaker, t.text)?
                    .with_knowledge(knowledge)
                    .with_items(t.items.unwrap_or_default()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dialogue {
            id: self.id,
            topic: self.topic,
            task_tag: self.task,
            domain_tag: self.domain,
            turns,
        })
    }
}

pub fn load_dialogues(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    parse_dialogues(open(path)?, &path.display().to_string())
}

pub fn parse_dialogues(reader: impl BufRead, origin: &str) -> Result<Vec<Dialogue>> {
    let mut ids = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DialogueRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        let dialogue = rec
            .into_dialogue()
            .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        if !ids.insert(dialogue.id.clone()) {
            return Err(Error::parse(
                origin,
                lineno,
                format!("duplicate dialogue id {:?}", dialogue.id),
            ));
        }
        out.push(dialogue);
    }
    Ok(out)
}

/// Serialize dialogues back into the JSON-lines format read by [`load_dialogues`].
pub fn dialogue_to_json(d: &Dialogue) -> serde_json::Value {
    let turns: Vec<serde_json::Value> = d
        .turns
        .iter()
        .map(|t| {
            let mut obj = serde_json::json!({"speaker": t.speaker.as_str(), "text": t.text});
            if let Some(k) = &t.golden_knowledge {
                obj["knowledge"] = k.iter().map(|t| t.fields().to_vec()).collect::<Vec<_>>().into();
            }
            if let Some(items) = &t.golden_items {
                obj["items"] = items.clone().into();
            }
            obj
        })
        .collect();
    serde_json::json!({
        "id": d.id, "topic": d.topic, "task": d.task_tag, "domain": d.domain_tag, "turns": turns,
    })
}

/// Drop triples with any field whose metric tokens hit `wordlist`.
pub fn filter_profanity(triples: Vec<KnowledgeTriple>, wordlist: &HashSet<String>) -> Vec<KnowledgeTriple> {
    if wordlist.is_empty() {
        return triples;
    }
    triples
        .into_iter()
        .filter(|t| {
            !t.fields()
                .iter()
                .flat_map(|f| tokenize_metric(f))
                .any(|tok| wordlist.contains(&tok))
        })
        .collect()
}

/// One word per line, metric-normalized; blank lines and `#` comments skipped.
pub fn load_wordlist(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    Ok(read_lines(path.as_ref())?
        .iter()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| tokenize_metric(l))
        .collect())
}
