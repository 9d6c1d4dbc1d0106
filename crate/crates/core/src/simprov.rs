//! Semantic similarity providers used by the reranking stage.
//!
//! Three implementations ship with the crate: a deterministic hashed
//! character-trigram model, a static word-vector file, and a client for a
//! remote embedding service with a content-hash cache in front of it.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::ProviderError;
use crate::text::tokenize_metric;

/// Scores the semantic similarity of two texts.
///
/// Implementations must be symmetric, return values in `[-1, 1]`, and score
/// any non-blank text as 1 against itself. They are shared across threads.
pub trait SimilarityProvider: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, a: &str, b: &str) -> Result<f64, ProviderError>;

    /// Score `query` against every candidate. On failure returns the index of
    /// the candidate that could not be scored.
    fn score_against(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, (usize, ProviderError)> {
        candidates
            .iter()
            .enumerate()
            .map(|(i, c)| self.score(query, c).map_err(|e| (i, e)))
            .collect()
    }
}

/// Text as seen by every provider: metric tokens joined by single spaces, or
/// the NFKC-lowercased trimmed text when it has no letters or digits.
pub fn normalize_for_similarity(text: &str) -> String {
    let tokens = tokenize_metric(text);
    if !tokens.is_empty() {
        return tokens.join(" ");
    }
    let folded: String = text.nfkc().flat_map(char::to_lowercase).collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub const TRIGRAM_DIM_BITS: u32 = 18;
const TRIGRAM_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Seeded FNV-1a, reduced to the trigram dimension.
fn trigram_bucket(gram: &str) -> u32 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = 0xcbf2_9ce4_8422_2325 ^ TRIGRAM_SEED;
    for byte in gram.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(PRIME);
    }
    (hash & ((1 << TRIGRAM_DIM_BITS) - 1)) as u32
}

/// Sorted sparse count vector of padded character trigrams.
pub fn trigram_vector(text: &str) -> Vec<(u32, f64)> {
    let normalized = normalize_for_similarity(text);
    if normalized.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = std::iter::once(' ')
        .chain(normalized.chars())
        .chain(std::iter::once(' '))
        .collect();
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut gram = String::with_capacity(12);
    for w in chars.windows(3) {
        gram.clear();
        gram.extend(w);
        *counts.entry(trigram_bucket(&gram)).or_insert(0.0) += 1.0;
    }
    counts.into_iter().collect()
}

fn sparse_cosine(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    let norm = |v: &[(u32, f64)]| v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    (dot / (norm(a) * norm(b))).clamp(-1.0, 1.0)
}

/// Cosine over hashed character-trigram counts. Offline and deterministic.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalProvider;

impl LexicalProvider {
    pub fn new() -> Self {
        Self
    }
}

pub fn lexical_provider() -> LexicalProvider {
    LexicalProvider
}

impl SimilarityProvider for LexicalProvider {
    fn name(&self) -> &str {
        "lexical"
    }

    fn score(&self, a: &str, b: &str) -> Result<f64, ProviderError> {
        Ok(sparse_cosine(&trigram_vector(a), &trigram_vector(b)))
    }

    fn score_against(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, (usize, ProviderError)> {
        let q = trigram_vector(query);
        Ok(candidates
            .iter()
            .map(|c| sparse_cosine(&q, &trigram_vector(c)))
            .collect())
    }
}

/// Mean of static token vectors, compared by cosine.
#[derive(Debug, Clone)]
pub struct VectorFileProvider {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl VectorFileProvider {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ProviderError::VectorFile {
            path: path.to_owned(),
            line: 0,
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|(line, message)| ProviderError::VectorFile {
            path: path.to_owned(),
            line,
            message,
        })
    }

    /// Parse `token v1 v2 ...` lines. Errors carry a 1-based line number.
    pub fn parse(text: &str) -> Result<Self, (usize, String)> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(|v| v.parse::<f64>().map_err(|e| (i + 1, format!("bad value {v:?}: {e}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            if values.is_empty() {
                return Err((i + 1, format!("token {token:?} has no values")));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err((i + 1, "non-finite value".into()));
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err((i + 1, format!("expected {d} values, found {}", values.len())));
                }
                _ => {}
            }
            let key = tokenize_metric(token).join(" ");
            vectors.entry(key).or_insert(values);
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mean vector of known tokens; zero when none is known.
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        let mut known = 0usize;
        for tok in tokenize_metric(text) {
            if let Some(v) = self.vectors.get(&tok) {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                known += 1;
            }
        }
        if known > 0 {
            for s in &mut sum {
                *s /= known as f64;
            }
        }
        sum
    }
}

pub fn vector_file_provider(path: impl AsRef<Path>) -> Result<VectorFileProvider, ProviderError> {
    VectorFileProvider::from_path(path)
}

impl SimilarityProvider for VectorFileProvider {
    fn name(&self) -> &str {
        "vectors"
    }

    fn score(&self, a: &str, b: &str) -> Result<f64, ProviderError> {
        Ok(dense_cosine(&self.embed(a), &self.embed(b)))
    }
}

pub type ContentHash = [u8; 32];

pub fn content_hash(normalized: &str) -> ContentHash {
    Sha256::digest(normalized.as_bytes()).into()
}

/// Embeddings keyed by the SHA-256 of normalized text.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: Mutex<HashMap<ContentHash, Arc<Vec<f64>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Look up a normalized text, counting the hit or miss.
    pub fn get(&self, normalized: &str) -> Option<Arc<Vec<f64>>> {
        let found = self.entries.lock().unwrap().get(&content_hash(normalized)).cloned();
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    /// Store unless already present; returns whichever value is cached.
    pub fn get_or_insert(&self, normalized: &str, vector: Vec<f64>) -> Arc<Vec<f64>> {
        self.entries
            .lock()
            .unwrap()
            .entry(content_hash(normalized))
            .or_insert_with(|| Arc::new(vector))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSettings {
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            timeout_ms: 10_000,
            max_retries: 3,
            backoff_ms: 100,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

enum Attempt {
    Retry(String),
    Fatal(ProviderError),
}

/// Client for `POST /embed` returning `{"vectors": [[...], ...]}`.
pub struct RemoteProvider {
    url: String,
    agent: ureq::Agent,
    cache: Arc<EmbeddingCache>,
    settings: RemoteSettings,
    dim: OnceLock<usize>,
    requests: AtomicU64,
}

pub fn remote_provider(endpoint_url: &str, cache: Arc<EmbeddingCache>, settings: RemoteSettings) -> RemoteProvider {
    RemoteProvider::new(endpoint_url, cache, settings)
}

impl RemoteProvider {
    pub fn new(endpoint_url: &str, cache: Arc<EmbeddingCache>, settings: RemoteSettings) -> Self {
        let base = endpoint_url.trim_end_matches('/');
        let url = if base.ends_with("/embed") {
            base.to_owned()
        } else {
            format!("{base}/embed")
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(settings.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url,
            agent,
            cache,
            settings,
            dim: OnceLock::new(),
            requests: AtomicU64::new(0),
        }
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn request_once(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, Attempt> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let response = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { texts })
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        if status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if status != 200 {
            return Err(Attempt::Fatal(ProviderError::Protocol(format!("HTTP {status}"))));
        }
        let body: EmbedResponse = response
            .into_body()
            .read_json()
            .map_err(|e| Attempt::Fatal(ProviderError::Protocol(format!("malformed body: {e}"))))?;
        self.validate(texts.len(), &body.vectors).map_err(Attempt::Fatal)?;
        Ok(body.vectors)
    }

    fn validate(&self, expected: usize, vectors: &[Vec<f64>]) -> Result<(), ProviderError> {
        if vectors.len() != expected {
            return Err(ProviderError::Protocol(format!(
                "asked for {expected} vectors, received {}",
                vectors.len()
            )));
        }
        let Some(first) = vectors.first() else { return Ok(()) };
        let dim = *self.dim.get_or_init(|| first.len());
        for (i, v) in vectors.iter().enumerate() {
            if v.is_empty() || v.len() != dim {
                return Err(ProviderError::Protocol(format!(
                    "vector {i} has length {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ProviderError::Protocol(format!("vector {i} has non-finite values")));
            }
        }
        Ok(())
    }

    fn fetch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.request_once(texts) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempts > self.settings.max_retries {
                        return Err(ProviderError::Network { attempts, message });
                    }
                    let backoff = self.settings.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                    thread::sleep(Duration::from_millis(backoff));
                }
            }
        }
    }

    /// Embed normalized texts, consulting the cache before the network. All
    /// misses go out in one batch.
    fn embed_normalized(&self, texts: &[String]) -> Result<Vec<Arc<Vec<f64>>>, ProviderError> {
        let mut found: Vec<Option<Arc<Vec<f64>>>> = texts.iter().map(|t| self.cache.get(t)).collect();
        let mut missing: Vec<String> = Vec::new();
        for (t, f) in texts.iter().zip(&found) {
            if f.is_none() && !missing.contains(t) {
                missing.push(t.clone());
            }
        }
        if !missing.is_empty() {
            let fetched = self.fetch(&missing)?;
            let stored: HashMap<&str, Arc<Vec<f64>>> = missing
                .iter()
                .zip(fetched)
                .map(|(t, v)| (t.as_str(), self.cache.get_or_insert(t, v)))
                .collect();
            for (t, f) in texts.iter().zip(found.iter_mut()) {
                if f.is_none() {
                    *f = stored.get(t.as_str()).cloned();
                }
            }
        }
        Ok(found.into_iter().map(|f| f.expect("every text resolved")).collect())
    }
}

impl SimilarityProvider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn score(&self, a: &str, b: &str) -> Result<f64, ProviderError> {
        let (a, b) = (normalize_for_similarity(a), normalize_for_similarity(b));
        if a.is_empty() || b.is_empty() {
            return Ok(0.0);
        }
        let v = self.embed_normalized(&[a, b])?;
        Ok(dense_cosine(&v[0], &v[1]))
    }

    fn score_against(&self, query: &str, candidates: &[String]) -> Result<Vec<f64>, (usize, ProviderError)> {
        let query = normalize_for_similarity(query);
        let normalized: Vec<String> = candidates.iter().map(|c| normalize_for_similarity(c)).collect();
        if query.is_empty() {
            return Ok(vec![0.0; candidates.len()]);
        }
        let mut batch = vec![query];
        batch.extend(normalized.iter().filter(|c| !c.is_empty()).cloned());
        let vectors = self.embed_normalized(&batch).map_err(|e| {
            // blame the first candidate that would have needed the network
            let culprit = normalized
                .iter()
                .position(|c| !c.is_empty() && self.cache.entries.lock().unwrap().get(&content_hash(c)).is_none())
                .unwrap_or(0);
            (culprit, e)
        })?;
        let q = &vectors[0];
        let mut rest = vectors[1..].iter();
        Ok(normalized
            .iter()
            .map(|c| {
                if c.is_empty() {
                    0.0
                } else {
                    dense_cosine(q, rest.next().expect("aligned"))
                }
            })
            .collect())
    }
}
