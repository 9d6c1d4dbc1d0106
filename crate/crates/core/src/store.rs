//! In-memory triple store with an entity index over subjects and objects.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::text::{contains_subsequence, tokenize_metric};
use crate::types::KnowledgeTriple;

pub type TripleId = usize;

#[derive(Debug, Default, Clone)]
struct EntityEntry {
    tokens: Vec<String>,
    triples: Vec<TripleId>,
}

/// Deduplicated collection of triples in insertion order.
///
/// Entity keys are the metric tokens of a subject or object joined with single
/// spaces. A second index maps each token to the entities containing it so
/// that contiguous-subsequence retrieval only inspects plausible entities.
#[derive(Debug, Default, Clone)]
pub struct KnowledgeStore {
    triples: Vec<KnowledgeTriple>,
    seen: HashSet<KnowledgeTriple>,
    entities: Vec<EntityEntry>,
    entity_ids: HashMap<String, usize>,
    token_index: HashMap<String, Vec<usize>>,
}

impl KnowledgeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triples(triples: impl IntoIterator<Item = KnowledgeTriple>) -> Self {
        let mut store = Self::new();
        store.extend(triples);
        store
    }

    /// Insert a triple unless an equal one is already stored. Returns whether
    /// it was inserted.
    pub fn insert(&mut self, triple: KnowledgeTriple) -> bool {
        if self.seen.contains(&triple) {
            return false;
        }
        let id = self.triples.len();
        let subject = tokenize_metric(triple.subject());
        let object = tokenize_metric(triple.object());
        self.index_entity(subject.clone(), id);
        if object != subject {
            self.index_entity(object, id);
        }
        self.seen.insert(triple.clone());
        self.triples.push(triple);
        true
    }

    pub fn extend(&mut self, triples: impl IntoIterator<Item = KnowledgeTriple>) {
        for t in triples {
            self.insert(t);
        }
    }

    pub fn merge(&mut self, other: KnowledgeStore) {
        self.extend(other.triples);
    }

    fn index_entity(&mut self, tokens: Vec<String>, id: TripleId) {
        let key = tokens.join(" ");
        let entity = match self.entity_ids.get(&key) {
            Some(&e) => e,
            None => {
                let e = self.entities.len();
                let mut distinct: Vec<&String> = tokens.iter().collect();
                distinct.sort();
                distinct.dedup();
                for tok in distinct {
                    self.token_index.entry(tok.clone()).or_default().push(e);
                }
                self.entity_ids.insert(key, e);
                self.entities.push(EntityEntry {
                    tokens,
                    triples: Vec::new(),
                });
                e
            }
        };
        self.entities[entity].triples.push(id);
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[KnowledgeTriple] {
        &self.triples
    }

    pub fn get(&self, id: TripleId) -> Option<&KnowledgeTriple> {
        self.triples.get(id)
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// Triple ids whose subject or object normalizes exactly to `entity`.
    pub fn lookup(&self, entity: &str) -> &[TripleId] {
        let key = tokenize_metric(entity).join(" ");
        self.entity_ids
            .get(&key)
            .map(|&e| self.entities[e].triples.as_slice())
            .unwrap_or(&[])
    }

    /// Distinct normalized subject keys.
    pub fn subject_entities(&self) -> HashSet<String> {
        self.triples
            .iter()
            .map(|t| tokenize_metric(t.subject()).join(" "))
            .collect()
    }

    /// Write as the tab-separated dump format, one triple per line.
    pub fn write_tsv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(out, "{}\t{}\t{}", t.subject(), t.relation(), t.object())?;
        }
        out.flush()
    }

    /// Ids of triples whose subject or object token sequence contains `query`
    /// contiguously, ascending. An empty query matches nothing.
    pub fn matching_ids(&self, query: &[String]) -> Vec<TripleId> {
        // every match contains every query token, so scan the rarest one
        let postings = query
            .iter()
            .map(|tok| self.token_index.get(tok).map(Vec::as_slice).unwrap_or(&[]))
            .min_by_key(|p| p.len());
        let Some(postings) = postings else {
            return Vec::new();
        };
        let mut ids = BTreeSet::new();
        for &e in postings {
            let entry = &self.entities[e];
            if contains_subsequence(&entry.tokens, query) {
                ids.extend(entry.triples.iter().copied());
            }
        }
        ids.into_iter().collect()
    }
}
