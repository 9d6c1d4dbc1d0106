#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use groundkit::simprov::trigram_vector;
use groundkit::{Dialogue, DialogueTurn, KnowledgeStore, KnowledgeTriple, SourceTag, Speaker};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn triple(s: &str, r: &str, o: &str) -> KnowledgeTriple {
    KnowledgeTriple::new(s, r, o, SourceTag::Graph).unwrap()
}

pub fn dialogue(id: &str, topic: &str, turns: &[(Speaker, String)]) -> Dialogue {
    Dialogue {
        id: id.into(),
        topic: topic.into(),
        task_tag: "synthetic".into(),
        domain_tag: "test".into(),
        turns: turns
            .iter()
            .map(|(s, t)| DialogueTurn::new(*s, t.clone()).unwrap())
            .collect(),
    }
}

const WORDS: &[&str] = &[
    "film", "director", "actor", "award", "river", "city", "music", "album", "novel", "author", "team", "league",
    "science", "planet", "history", "war", "king", "queen", "painting", "museum", "language", "island", "mountain",
    "festival", "recipe", "engine", "bridge", "theory", "election", "festival", "garden", "school",
];

pub fn word(rng: &mut ChaCha8Rng) -> &'static str {
    WORDS.choose(rng).unwrap()
}

pub fn sentence(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
}

/// `topics` entities with `per_topic` triples each; topic `i` is "Entity i".
pub fn synthetic_store(topics: usize, per_topic: usize, seed: u64) -> KnowledgeStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = KnowledgeStore::new();
    for t in 0..topics {
        for k in 0..per_topic {
            let object = format!("{} {} {k}", word(&mut rng), word(&mut rng));
            store.insert(triple(&format!("Entity {t}"), word(&mut rng), &object));
        }
    }
    store
}

/// Dialogues alternating seeker/responder, `responders` responder turns each.
/// Some responses paraphrase a store triple, the rest are random words.
pub fn synthetic_dialogues(
    count: usize,
    topics: usize,
    responders: usize,
    store: &KnowledgeStore,
    seed: u64,
) -> Vec<Dialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|d| {
            let topic = d % topics;
            let ids = store.lookup(&format!("Entity {topic}")).to_vec();
            let mut turns = Vec::new();
            for _ in 0..responders {
                turns.push((
                    Speaker::Seeker,
                    format!("tell me about entity {topic} {}", sentence(&mut rng, 3)),
                ));
                let response = if !ids.is_empty() && rng.random_bool(0.5) {
                    let t = store.get(*ids.choose(&mut rng).unwrap()).unwrap();
                    format!("{} {} {}", t.subject(), t.relation(), t.object())
                } else {
                    sentence(&mut rng, 6)
                };
                turns.push((Speaker::Responder, response));
            }
            dialogue(&format!("dlg{d:05}"), &format!("Entity {topic}"), &turns)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StubMode {
    /// Deterministic signed hashed-trigram embeddings of dimension 64.
    Good,
    /// Every vector after the first has the wrong length.
    WrongLength,
    /// Always HTTP 500.
    Fail,
    /// Unparseable body.
    Garbage,
}

pub struct StubServer {
    pub url: String,
    requests: Arc<AtomicU64>,
}

impl StubServer {
    pub fn start(mode: StubMode) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicU64::new(0));
        let counter = requests.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let counter = counter.clone();
                thread::spawn(move || serve(stream, mode, &counter));
            }
        });
        Self { url, requests }
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }
}

pub fn stub_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; 64];
    for (bucket, count) in trigram_vector(text) {
        let sign = if bucket & 0x40 == 0 { 1.0 } else { -1.0 };
        v[(bucket % 64) as usize] += sign * count;
    }
    v
}

fn serve(stream: TcpStream, mode: StubMode, counter: &AtomicU64) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut stream = stream;
    loop {
        let mut content_length = 0usize;
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        loop {
            let mut header = String::new();
            if reader.read_line(&mut header).unwrap_or(0) == 0 {
                return;
            }
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            if let Some((name, value)) = header.split_once(':') {
                if name.eq_ignore_ascii_case("content-length") {
                    content_length = value.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; content_length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        counter.fetch_add(1, Ordering::SeqCst);
        let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
        let texts: Vec<String> = request["texts"]
            .as_array()
            .map(|a| a.iter().filter_map(|t| t.as_str().map(str::to_owned)).collect())
            .unwrap_or_default();
        let (status, payload) = match mode {
            StubMode::Good => (
                200,
                json!({"vectors": texts.iter().map(|t| stub_embedding(t)).collect::<Vec<_>>()}).to_string(),
            ),
            StubMode::WrongLength => {
                let vectors: Vec<Vec<f64>> = texts
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let mut v = stub_embedding(t);
                        if i > 0 {
                            v.pop();
                        }
                        v
                    })
                    .collect();
                (200, json!({ "vectors": vectors }).to_string())
            }
            StubMode::Fail => (500, "{}".to_string()),
            StubMode::Garbage => (200, "{\"vectors\": [oops".to_string()),
        };
        let reason = if status == 200 { "OK" } else { "Internal Server Error" };
        let response = format!(
            "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
            payload.len()
        );
        if stream.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}

/// Random non-blank strings mixing ASCII, punctuation and a few non-ASCII letters.
pub fn random_text(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'c', 'd', 'e', 'o', 's', 't', 'x', 'z', 'A', 'Q', '0', '7', ' ', ' ', '.', ',', '!', '-', 'é', 'ß',
        'Ω', 'ﬁ', '日',
    ];
    loop {
        let len = rng.random_range(1..24);
        let s: String = (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect();
        if !s.trim().is_empty() {
            return s;
        }
    }
}

/// Brute-force TF-IDF ranking over dense vectors, written independently of
/// the library index. Inputs must be ASCII.
pub fn oracle_rank(query: &str, candidates: &[KnowledgeTriple], keep: usize) -> Vec<(usize, f64)> {
    fn tokens(s: &str) -> Vec<String> {
        s.to_ascii_lowercase()
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(String::from)
            .collect()
    }
    let mut docs: Vec<Vec<String>> = candidates
        .iter()
        .map(|t| tokens(&format!("{} | {} | {}", t.subject(), t.relation(), t.object())))
        .collect();
    docs.push(tokens(query));
    let mut vocab: Vec<String> = docs.iter().flatten().cloned().collect();
    vocab.sort();
    vocab.dedup();
    let n = docs.len() as f64;
    let dense: Vec<Vec<f64>> = docs
        .iter()
        .map(|doc| {
            let w: Vec<f64> = vocab
                .iter()
                .map(|term| {
                    let tf = doc.iter().filter(|t| *t == term).count() as f64;
                    let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
                    tf * (((1.0 + n) / (1.0 + df)).ln() + 1.0)
                })
                .collect();
            let mut sq = 0.0;
            for x in &w {
                sq += x * x;
            }
            let norm = sq.sqrt();
            w.iter().map(|x| if norm == 0.0 { 0.0 } else { x / norm }).collect()
        })
        .collect();
    let q = dense.last().unwrap();
    let mut scored: Vec<(usize, f64)> = dense[..candidates.len()]
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut dot = 0.0;
            for (a, b) in q.iter().zip(v) {
                dot += a * b;
            }
            (i, dot.clamp(0.0, 1.0))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(keep);
    scored
}

pub fn random_ranking_instance(rng: &mut ChaCha8Rng) -> (String, Vec<KnowledgeTriple>, usize) {
    const VOCAB: &[&str] = &[
        "obama", "paris", "spouse", "born", "city", "film", "award", "river", "music", "x1", "x2", "the",
    ];
    let pick = |rng: &mut ChaCha8Rng, k: usize| {
        (0..k)
            .map(|_| *VOCAB.choose(rng).unwrap())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let n = rng.random_range(1..=200);
    let candidates: Vec<KnowledgeTriple> = (0..n)
        .map(|_| {
            let (a, b, c) = (rng.random_range(1..3), rng.random_range(1..2), rng.random_range(1..4));
            triple(&pick(rng, a), &pick(rng, b), &pick(rng, c))
        })
        .collect();
    let qlen = rng.random_range(1..15);
    let query = pick(rng, qlen);
    let keep = rng.random_range(1..=n);
    (query, candidates, keep)
}
