//! Three-stage knowledge extraction: entity retrieval, TF-IDF statistical
//! ranking, and semantic reranking with a pluggable similarity provider.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::adapters::PassageDoc;
use crate::error::{Error, Result};
use crate::simprov::SimilarityProvider;
use crate::store::KnowledgeStore;
use crate::text::tokenize_metric;
use crate::tfidf::TfidfIndex;
use crate::types::KnowledgeTriple;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub retrieve_cap: usize,
    pub stat_keep: usize,
    pub sem_threshold: f64,
    pub final_k: usize,
    pub passage_k: usize,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            retrieve_cap: 500,
            stat_keep: 50,
            sem_threshold: 0.35,
            final_k: 3,
            passage_k: 5,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.final_k == 0 || self.passage_k == 0 {
            return Err(Error::Config("final_k and passage_k must be positive".into()));
        }
        if !(self.final_k <= self.stat_keep && self.stat_keep <= self.retrieve_cap) {
            return Err(Error::Config(format!(
                "need final_k <= stat_keep <= retrieve_cap, got {} / {} / {}",
                self.final_k, self.stat_keep, self.retrieve_cap
            )));
        }
        if self.sem_threshold.is_nan() {
            return Err(Error::Config("sem_threshold is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTriple {
    pub triple: KnowledgeTriple,
    pub stat_score: Option<f64>,
    pub sem_score: Option<f64>,
}

/// Candidate counts after retrieval, statistical ranking and selection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct StageAudit {
    pub retrieved: usize,
    pub ranked: usize,
    pub selected: usize,
}

impl From<[usize; 3]> for StageAudit {
    fn from([retrieved, ranked, selected]: [usize; 3]) -> Self {
        Self {
            retrieved,
            ranked,
            selected,
        }
    }
}

impl From<StageAudit> for [usize; 3] {
    fn from(a: StageAudit) -> Self {
        [a.retrieved, a.ranked, a.selected]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeResult {
    pub selected: Vec<ScoredTriple>,
    pub grounded: bool,
    /// Highest semantic score seen, if any candidate reached that stage.
    pub best_sem_score: Option<f64>,
    pub audit: StageAudit,
}

impl CascadeResult {
    fn empty() -> Self {
        Self {
            selected: Vec::new(),
            grounded: false,
            best_sem_score: None,
            audit: StageAudit::default(),
        }
    }

    pub fn triples(&self) -> Vec<KnowledgeTriple> {
        self.selected.iter().map(|s| s.triple.clone()).collect()
    }
}

fn query_tokens(query: &str, what: &str) -> Result<Vec<String>> {
    let tokens = tokenize_metric(query);
    if tokens.is_empty() {
        return Err(Error::InvalidInput(format!("{what} is empty after tokenization")));
    }
    Ok(tokens)
}

/// Triples whose subject or object contains the query's tokens contiguously,
/// in store order, at most `cap`.
pub fn retrieve_candidates(entity_query: &str, store: &KnowledgeStore, cap: usize) -> Result<Vec<KnowledgeTriple>> {
    let tokens = query_tokens(entity_query, "entity query")?;
    Ok(store
        .matching_ids(&tokens)
        .into_iter()
        .take(cap)
        .filter_map(|id| store.get(id).cloned())
        .collect())
}

fn descending(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// TF-IDF cosine between the query and each candidate's canonical text. The
/// index is built over the candidates plus the query. Stable on ties.
pub fn statistical_rank(query: &str, candidates: &[KnowledgeTriple], keep: usize) -> Result<Vec<ScoredTriple>> {
    query_tokens(query, "ranking query")?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let mut docs: Vec<String> = candidates.iter().map(KnowledgeTriple::canonical_text).collect();
    docs.push(query.to_owned());
    let index = TfidfIndex::build(&docs)?;
    let q = candidates.len();

    let mut scored: Vec<(usize, f64)> = (0..candidates.len()).map(|i| (i, index.cosine(q, i))).collect();
    scored.sort_by(|a, b| descending(a.1, b.1));
    scored.truncate(keep);
    Ok(scored
        .into_iter()
        .map(|(i, s)| ScoredTriple {
            triple: candidates[i].clone(),
            stat_score: Some(s),
            sem_score: None,
        })
        .collect())
}

/// Rerank by semantic score; the turn is grounded when the best score meets
/// `threshold`. Any provider failure aborts the whole call.
pub fn semantic_rank(
    query: &str,
    candidates: Vec<ScoredTriple>,
    provider: &dyn SimilarityProvider,
    threshold: f64,
    final_k: usize,
) -> Result<CascadeResult> {
    let ranked = candidates.len();
    if candidates.is_empty() {
        return Ok(CascadeResult::empty());
    }
    let texts: Vec<String> = candidates.iter().map(|c| c.triple.canonical_text()).collect();
    let scores = provider
        .score_against(query, &texts)
        .map_err(|(index, source)| Error::Provider {
            index,
            text: texts.get(index).cloned().unwrap_or_default(),
            source,
        })?;

    let mut scored: Vec<ScoredTriple> = candidates
        .into_iter()
        .zip(scores)
        .map(|(c, s)| ScoredTriple {
            sem_score: Some(s),
            ..c
        })
        .collect();
    scored.sort_by(|a, b| {
        descending(
            a.sem_score.unwrap_or(f64::NEG_INFINITY),
            b.sem_score.unwrap_or(f64::NEG_INFINITY),
        )
        .then_with(|| {
            descending(
                a.stat_score.unwrap_or(f64::NEG_INFINITY),
                b.stat_score.unwrap_or(f64::NEG_INFINITY),
            )
        })
    });

    let best = scored[0].sem_score;
    let grounded = best.is_some_and(|b| b >= threshold);
    if grounded {
        scored.truncate(final_k);
    } else {
        scored.clear();
    }
    Ok(CascadeResult {
        audit: StageAudit {
            retrieved: ranked,
            ranked,
            selected: scored.len(),
        },
        selected: scored,
        grounded,
        best_sem_score: best,
    })
}

/// Run all three stages for one turn. With a response the query is the
/// context followed by the response; without one it is the context alone.
pub fn run_cascade(
    turn_context: &[String],
    response: Option<&str>,
    entity_query: &str,
    store: &KnowledgeStore,
    provider: &dyn SimilarityProvider,
    cfg: &CascadeConfig,
) -> Result<CascadeResult> {
    let query = compose_query(turn_context, response);
    let retrieved = retrieve_candidates(entity_query, store, cfg.retrieve_cap)?;
    if retrieved.is_empty() {
        return Ok(CascadeResult::empty());
    }
    let ranked = statistical_rank(&query, &retrieved, cfg.stat_keep)?;
    let ranked_len = ranked.len();
    let mut result = semantic_rank(&query, ranked, provider, cfg.sem_threshold, cfg.final_k)?;
    result.audit = StageAudit {
        retrieved: retrieved.len(),
        ranked: ranked_len,
        selected: result.selected.len(),
    };
    Ok(result)
}

pub fn compose_query(turn_context: &[String], response: Option<&str>) -> String {
    let mut parts: Vec<&str> = turn_context.iter().map(String::as_str).collect();
    parts.extend(response);
    parts.join(" ")
}

/// Top-`k` passages by TF-IDF cosine against the query, stable on ties.
pub fn retrieve_passages(query: &str, passages: &[PassageDoc], k: usize) -> Result<Vec<PassageDoc>> {
    Ok(rank_passages(query, passages, k)?
        .into_iter()
        .map(|(i, _)| passages[i].clone())
        .collect())
}

/// Like [`retrieve_passages`] but returns `(index, score)` pairs.
pub fn rank_passages(query: &str, passages: &[PassageDoc], k: usize) -> Result<Vec<(usize, f64)>> {
    query_tokens(query, "passage query")?;
    if passages.is_empty() {
        return Err(Error::InvalidInput("no passages to rank".into()));
    }
    let mut docs: Vec<String> = passages.iter().map(PassageDoc::full_text).collect();
    docs.push(query.to_owned());
    let index = TfidfIndex::build(&docs)?;
    let q = passages.len();
    let mut scored: Vec<(usize, f64)> = (0..passages.len()).map(|i| (i, index.cosine(q, i))).collect();
    scored.sort_by(|a, b| descending(a.1, b.1));
    scored.truncate(k);
    Ok(scored)
}
