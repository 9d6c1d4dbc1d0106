//! Training-example construction and the experiment harnesses built on it.
//!
//! An example's input is `context: <speaker>: <text> ... knowledge: <s | r | o> ; ...`
//! and its target is the responder turn verbatim.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{run_cascade, CascadeConfig, StageAudit};
use crate::error::{Error, Result};
use crate::simprov::SimilarityProvider;
use crate::store::KnowledgeStore;
use crate::text::{normalize_key, tokenize_length};
use crate::types::{Dialogue, KnowledgeTriple, SourceTag};

pub const DEFAULT_MAX_LEN: usize = 512;
const CONTEXT_HEADER: &str = "context:";
const KNOWLEDGE_HEADER: &str = "knowledge:";
const TRIPLE_JOINER: &str = " ; ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnowledgeOrigin {
    Golden,
    Retrieved,
    MixedGolden,
    MixedRetrieved,
    None,
}

impl KnowledgeOrigin {
    fn source_tag(self) -> SourceTag {
        match self {
            KnowledgeOrigin::Golden | KnowledgeOrigin::MixedGolden => SourceTag::Labeled,
            _ => SourceTag::Graph,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub input_text: String,
    pub target_text: String,
    pub knowledge: Vec<KnowledgeTriple>,
    pub knowledge_origin: KnowledgeOrigin,
    pub audit: Option<StageAudit>,
}

impl TrainingExample {
    pub fn key(&self) -> (String, usize) {
        (self.dialogue_id.clone(), self.turn_index)
    }
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    did: String,
    turn: usize,
    input: String,
    target: String,
    knowledge: Vec<[String; 3]>,
    origin: KnowledgeOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audit: Option<StageAudit>,
}

impl From<&TrainingExample> for ExampleRecord {
    fn from(ex: &TrainingExample) -> Self {
        Self {
            did: ex.dialogue_id.clone(),
            turn: ex.turn_index,
            input: ex.input_text.clone(),
            target: ex.target_text.clone(),
            knowledge: ex.knowledge.iter().map(|t| t.fields().map(str::to_owned)).collect(),
            origin: ex.knowledge_origin,
            audit: ex.audit,
        }
    }
}

impl TryFrom<ExampleRecord> for TrainingExample {
    type Error = Error;

    fn try_from(r: ExampleRecord) -> Result<Self> {
        let tag = r.origin.source_tag();
        let knowledge = r
            .knowledge
            .iter()
            .map(|[s, p, o]| KnowledgeTriple::new(s, p, o, tag))
            .collect::<Result<Vec<_>>>()?;
        if knowledge.is_empty() != (r.origin == KnowledgeOrigin::None) {
            return Err(Error::InvalidInput(format!(
                "origin {:?} inconsistent with {} knowledge triples",
                r.origin,
                knowledge.len()
            )));
        }
        Ok(Self {
            dialogue_id: r.did,
            turn_index: r.turn,
            input_text: r.input,
            target_text: r.target,
            knowledge,
            knowledge_origin: r.origin,
            audit: r.audit,
        })
    }
}

fn knowledge_segment(knowledge: &[KnowledgeTriple]) -> String {
    let joined: Vec<String> = knowledge.iter().map(KnowledgeTriple::canonical_text).collect();
    format!("{KNOWLEDGE_HEADER} {}", joined.join(TRIPLE_JOINER))
}

/// Build the example for the responder turn at `turn_index`, dropping whole
/// oldest context turns until the input fits in `max_len` length tokens.
pub fn build_example(
    dialogue: &Dialogue,
    turn_index: usize,
    knowledge: Vec<KnowledgeTriple>,
    origin: KnowledgeOrigin,
    max_len: usize,
) -> Result<TrainingExample> {
    let turn = dialogue.turns.get(turn_index).ok_or_else(|| {
        Error::InvalidInput(format!(
            "dialogue {:?} has no turn {turn_index} ({} turns)",
            dialogue.id,
            dialogue.turns.len()
        ))
    })?;
    if !turn.is_responder() {
        return Err(Error::InvalidInput(format!(
            "turn {turn_index} of dialogue {:?} is not a responder turn",
            dialogue.id
        )));
    }
    let origin = if knowledge.is_empty() {
        KnowledgeOrigin::None
    } else if origin == KnowledgeOrigin::None {
        return Err(Error::InvalidInput(
            "non-empty knowledge needs an origin other than none".into(),
        ));
    } else {
        origin
    };

    let segment = (!knowledge.is_empty()).then(|| knowledge_segment(&knowledge));
    let fixed = 1 + segment.as_deref().map_or(0, |s| tokenize_length(s).len());
    if fixed > max_len {
        return Err(Error::InvalidInput(format!(
            "knowledge segment needs {fixed} tokens, over the limit of {max_len}"
        )));
    }

    let rendered: Vec<String> = dialogue.turns[..turn_index]
        .iter()
        .map(|t| format!("{}: {}", t.speaker, tokenize_length(&t.text).join(" ")))
        .collect();
    let costs: Vec<usize> = rendered.iter().map(|r| tokenize_length(r).len()).collect();
    let mut total: usize = fixed + costs.iter().sum::<usize>();
    let mut first_kept = 0;
    while total > max_len {
        total -= costs[first_kept];
        first_kept += 1;
    }

    let mut input = String::from(CONTEXT_HEADER);
    for r in &rendered[first_kept..] {
        input.push(' ');
        input.push_str(r);
    }
    if let Some(seg) = &segment {
        input.push(' ');
        input.push_str(seg);
    }

    Ok(TrainingExample {
        dialogue_id: dialogue.id.clone(),
        turn_index,
        input_text: input,
        target_text: turn.text.clone(),
        knowledge,
        knowledge_origin: origin,
        audit: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BuildMode {
    /// Use the labeled knowledge carried by each responder turn.
    GoldenPassthrough,
    /// Run the cascade with the response in the query; drop ungrounded turns.
    #[default]
    Cascade,
    /// Run the cascade on context only and emit every responder turn.
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub cascade: CascadeConfig,
    pub max_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            cascade: CascadeConfig::default(),
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Turn counts and per-stage candidate-count histograms for one build.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub responder_turns: usize,
    pub emitted: usize,
    pub grounded: usize,
    pub abandoned: usize,
    pub retrieved_histogram: BTreeMap<usize, usize>,
    pub ranked_histogram: BTreeMap<usize, usize>,
    pub selected_histogram: BTreeMap<usize, usize>,
}

impl BuildReport {
    fn record(&mut self, audit: StageAudit) {
        *self.retrieved_histogram.entry(audit.retrieved).or_default() += 1;
        *self.ranked_histogram.entry(audit.ranked).or_default() += 1;
        *self.selected_histogram.entry(audit.selected).or_default() += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusBuild {
    pub examples: Vec<TrainingExample>,
    pub report: BuildReport,
}

enum TurnOutcome {
    Emitted(TrainingExample, Option<bool>),
    Abandoned(StageAudit),
    Skipped,
}

fn process_turn(
    dialogue: &Dialogue,
    index: usize,
    store: &KnowledgeStore,
    provider: &dyn SimilarityProvider,
    cfg: &CorpusConfig,
    mode: BuildMode,
) -> Result<TurnOutcome> {
    let turn = &dialogue.turns[index];
    let context: Vec<String> = dialogue.turns[..index].iter().map(|t| t.text.clone()).collect();
    match mode {
        BuildMode::GoldenPassthrough => {
            let Some(golden) = &turn.golden_knowledge else {
                return Ok(TurnOutcome::Skipped);
            };
            let knowledge: Vec<KnowledgeTriple> = golden.iter().take(cfg.cascade.final_k).cloned().collect();
            let ex = build_example(dialogue, index, knowledge, KnowledgeOrigin::Golden, cfg.max_len)?;
            Ok(TurnOutcome::Emitted(ex, None))
        }
        BuildMode::Cascade => {
            let result = run_cascade(
                &context,
                Some(&turn.text),
                &dialogue.topic,
                store,
                provider,
                &cfg.cascade,
            )?;
            if !result.grounded {
                return Ok(TurnOutcome::Abandoned(result.audit));
            }
            let mut ex = build_example(
                dialogue,
                index,
                result.triples(),
                KnowledgeOrigin::Retrieved,
                cfg.max_len,
            )?;
            ex.audit = Some(result.audit);
            Ok(TurnOutcome::Emitted(ex, Some(true)))
        }
        BuildMode::Inference => {
            let has_context = context.iter().any(|c| !crate::text::tokenize_metric(c).is_empty());
            let (knowledge, audit, grounded) = if has_context {
                let result = run_cascade(&context, None, &dialogue.topic, store, provider, &cfg.cascade)?;
                (result.triples(), result.audit, result.grounded)
            } else {
                (Vec::new(), StageAudit::default(), false)
            };
            let mut ex = build_example(dialogue, index, knowledge, KnowledgeOrigin::Retrieved, cfg.max_len)?;
            ex.audit = Some(audit);
            Ok(TurnOutcome::Emitted(ex, Some(grounded)))
        }
    }
}

/// Build examples for every responder turn, in dialogue then turn order.
/// Turns are processed on the current rayon pool; the output does not depend
/// on its size. The first failing turn (in corpus order) aborts the build.
pub fn build_corpus(
    dialogues: &[Dialogue],
    store: &KnowledgeStore,
    provider: &dyn SimilarityProvider,
    cfg: &CorpusConfig,
    mode: BuildMode,
) -> Result<CorpusBuild> {
    cfg.cascade.validate()?;
    let jobs: Vec<(usize, usize)> = dialogues
        .iter()
        .enumerate()
        .flat_map(|(d, dialogue)| dialogue.responder_indices().map(move |t| (d, t)))
        .collect();
    let outcomes: Vec<Result<TurnOutcome>> = jobs
        .par_iter()
        .map(|&(d, t)| process_turn(&dialogues[d], t, store, provider, cfg, mode))
        .collect();

    let mut report = BuildReport {
        responder_turns: jobs.len(),
        ..Default::default()
    };
    let mut examples = Vec::new();
    for outcome in outcomes {
        match outcome? {
            TurnOutcome::Emitted(ex, grounded) => {
                if let Some(audit) = ex.audit {
                    report.record(audit);
                }
                match grounded {
                    Some(true) => report.grounded += 1,
                    Some(false) => report.abandoned += 1,
                    None => {}
                }
                examples.push(ex);
            }
            TurnOutcome::Abandoned(audit) => {
                report.record(audit);
                report.abandoned += 1;
            }
            TurnOutcome::Skipped => {}
        }
    }
    report.emitted = examples.len();
    Ok(CorpusBuild { examples, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSpec {
    pub golden_percent: u32,
    pub seed: u64,
}

/// `round(percent / 100 * n)`, halves rounded up.
pub fn golden_count(percent: u32, n: usize) -> usize {
    (percent as usize * n + 50) / 100
}

fn key_label(key: &(String, usize)) -> String {
    format!("{}#{}", key.0, key.1)
}

/// Replace a seeded subset of retrieved examples with their golden variants.
/// Output follows the order of `retrieved`.
pub fn mix_knowledge(
    golden: &[TrainingExample],
    retrieved: &[TrainingExample],
    spec: &MixSpec,
) -> Result<Vec<TrainingExample>> {
    if spec.golden_percent > 100 {
        return Err(Error::InvalidInput(format!(
            "golden percent {} exceeds 100",
            spec.golden_percent
        )));
    }
    let mut golden_by_key: HashMap<(String, usize), &TrainingExample> = HashMap::new();
    for ex in golden {
        if golden_by_key.insert(ex.key(), ex).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate golden key {}",
                key_label(&ex.key())
            )));
        }
    }
    let retrieved_keys: Vec<(String, usize)> = retrieved.iter().map(TrainingExample::key).collect();
    let retrieved_set: HashSet<&(String, usize)> = retrieved_keys.iter().collect();
    if retrieved_set.len() != retrieved_keys.len() {
        return Err(Error::InvalidInput("duplicate keys in retrieved corpus".into()));
    }
    let mut missing: Vec<String> = retrieved_keys
        .iter()
        .filter(|k| !golden_by_key.contains_key(*k))
        .map(|k| format!("golden:{}", key_label(k)))
        .collect();
    missing.extend(
        golden
            .iter()
            .map(TrainingExample::key)
            .filter(|k| !retrieved_set.contains(k))
            .map(|k| format!("retrieved:{}", key_label(&k))),
    );
    if !missing.is_empty() {
        return Err(Error::Misaligned { missing });
    }

    let n = retrieved.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let chosen: HashSet<usize> = order.into_iter().take(golden_count(spec.golden_percent, n)).collect();

    Ok(retrieved
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (mut ex, origin) = if chosen.contains(&i) {
                ((*golden_by_key[&r.key()]).clone(), KnowledgeOrigin::MixedGolden)
            } else {
                (r.clone(), KnowledgeOrigin::MixedRetrieved)
            };
            if !ex.knowledge.is_empty() {
                ex.knowledge_origin = origin;
            }
            ex
        })
        .collect())
}

/// Seeded sample of `n` dialogues with pairwise-distinct topics, returned in
/// corpus order.
pub fn sample_few_shot(dialogues: &[Dialogue], n: usize, seed: u64) -> Result<Vec<Dialogue>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut topic_ids: HashMap<String, usize> = HashMap::new();
    for (i, d) in dialogues.iter().enumerate() {
        let key = normalize_key(&d.topic);
        let g = *topic_ids.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    if groups.len() < n {
        return Err(Error::InvalidInput(format!(
            "asked for {n} distinct topics but the corpus has {} ({} short)",
            groups.len(),
            n - groups.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut topics: Vec<usize> = (0..groups.len()).collect();
    topics.shuffle(&mut rng);
    let mut picked: Vec<usize> = topics[..n]
        .iter()
        .map(|&g| groups[g][rng.random_range(0..groups[g].len())])
        .collect();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| dialogues[i].clone()).collect())
}

/// `(covered, total)` distinct normalized subject entities.
pub fn coverage_counts(dialogues: &[Dialogue], store: &KnowledgeStore) -> Result<(usize, usize)> {
    if store.is_empty() {
        return Err(Error::InvalidInput("coverage needs a non-empty store".into()));
    }
    let subjects = store.subject_entities();
    let topics: HashSet<String> = dialogues.iter().map(|d| normalize_key(&d.topic)).collect();
    let covered = topics.iter().filter(|t| subjects.contains(*t)).count();
    Ok((covered, subjects.len()))
}

/// Percentage of store subjects that appear as a dialogue topic.
pub fn coverage_stats(dialogues: &[Dialogue], store: &KnowledgeStore) -> Result<f64> {
    let (covered, total) = coverage_counts(dialogues, store)?;
    Ok(100.0 * covered as f64 / total as f64)
}

pub fn write_corpus(mut out: impl Write, examples: &[TrainingExample]) -> std::io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut out, &ExampleRecord::from(ex))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn emit_corpus(path: impl AsRef<Path>, examples: &[TrainingExample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_corpus(BufWriter::new(file), examples).map_err(|e| Error::io(path, e))
}

pub fn parse_corpus(reader: impl BufRead, origin: &str) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let fail = |msg: String| {
            Error::parse(
                origin,
                lineno,
                if lineno > 1 {
                    format!("{msg} (last good line {})", lineno - 1)
                } else {
                    msg
                },
            )
        };
        let line = line.map_err(|e| fail(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ExampleRecord = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        out.push(TrainingExample::try_from(record).map_err(|e| fail(e.to_string()))?);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<TrainingExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simprov::LexicalProvider;
    use crate::types::{DialogueTurn, Speaker};
    use proptest::prelude::*;

    fn t(s: &str, r: &str, o: &str) -> KnowledgeTriple {
        KnowledgeTriple::new(s, r, o, SourceTag::Graph).unwrap()
    }

    fn dialogue(id: &str, topic: &str, turns: &[(Speaker, &str)]) -> Dialogue {
        Dialogue {
            id: id.into(),
            topic: topic.into(),
            task_tag: "task".into(),
            domain_tag: "domain".into(),
            turns: turns.iter().map(|(s, x)| DialogueTurn::new(*s, *x).unwrap()).collect(),
        }
    }

    use Speaker::{Responder as R, Seeker as S};

    #[test]
    fn example_format() {
        let d = dialogue("d", "Obama", &[(S, "Who is  Obama?"), (R, "He was president.")]);
        let ex = build_example(
            &d,
            1,
            vec![t("Barack Obama", "office", "President")],
            KnowledgeOrigin::Retrieved,
            512,
        )
        .unwrap();
        assert_eq!(
            ex.input_text,
            "context: seeker: Who is Obama? knowledge: Barack Obama | office | President"
        );
        assert_eq!(ex.target_text, "He was president.");
        assert_eq!(ex.knowledge_origin, KnowledgeOrigin::Retrieved);

        let ex = build_example(
            &d,
            1,
            vec![t("a", "r", "b"), t("c", "r", "d")],
            KnowledgeOrigin::Golden,
            512,
        )
        .unwrap();
        assert!(ex.input_text.ends_with("knowledge: a | r | b ; c | r | d"));
    }

    #[test]
    fn example_without_knowledge() {
        let d = dialogue("d", "x", &[(S, "hi"), (R, "hello")]);
        let ex = build_example(&d, 1, vec![], KnowledgeOrigin::Retrieved, 512).unwrap();
        assert_eq!(ex.input_text, "context: seeker: hi");
        assert!(!ex.input_text.contains("knowledge:"));
        assert_eq!(ex.knowledge_origin, KnowledgeOrigin::None);
    }

    #[test]
    fn example_errors() {
        let d = dialogue("d", "x", &[(S, "hi"), (R, "hello")]);
        assert!(build_example(&d, 0, vec![], KnowledgeOrigin::None, 512).is_err());
        assert!(build_example(&d, 5, vec![], KnowledgeOrigin::None, 512).is_err());
        assert!(build_example(&d, 1, vec![t("a", "r", "b")], KnowledgeOrigin::None, 512).is_err());
        // "context:" + "knowledge: a | r | b" = 7 tokens
        assert!(build_example(&d, 1, vec![t("a", "r", "b")], KnowledgeOrigin::Golden, 6).is_err());
        assert!(build_example(&d, 1, vec![t("a", "r", "b")], KnowledgeOrigin::Golden, 7).is_ok());
    }

    fn long_dialogue() -> Dialogue {
        // ten context turns costing 51 tokens each ("speaker:" + 50 words)
        let texts: Vec<String> = (0..10)
            .map(|i| (0..50).map(|w| format!("t{i}w{w}")).collect::<Vec<_>>().join(" "))
            .collect();
        let mut turns: Vec<(Speaker, &str)> = texts
            .iter()
            .enumerate()
            .map(|(i, x)| (if i % 2 == 0 { S } else { R }, x.as_str()))
            .collect();
        turns.push((R, "final answer"));
        dialogue("long", "x", &turns)
    }

    #[test]
    fn truncation_drops_oldest_whole_turns() {
        let d = long_dialogue();
        let k = vec![t("a", "r", "b")];
        // 7 fixed + 10 * 51 = 517 tokens untruncated
        let ex = build_example(&d, 10, k.clone(), KnowledgeOrigin::Golden, 512).unwrap();
        assert_eq!(tokenize_length(&ex.input_text).len(), 466);
        assert!(!ex.input_text.contains("t0w0"));
        assert!(ex.input_text.starts_with("context: responder: t1w0 "));
        assert!(ex.input_text.contains("t9w49"));
        assert!(ex.input_text.ends_with("knowledge: a | r | b"));

        let ex = build_example(&d, 10, k.clone(), KnowledgeOrigin::Golden, 466).unwrap();
        assert_eq!(tokenize_length(&ex.input_text).len(), 466);
        let ex = build_example(&d, 10, k.clone(), KnowledgeOrigin::Golden, 465).unwrap();
        assert_eq!(tokenize_length(&ex.input_text).len(), 415);
        assert!(ex.input_text.starts_with("context: seeker: t2w0 "));
        let ex = build_example(&d, 10, k, KnowledgeOrigin::Golden, 7).unwrap();
        assert_eq!(ex.input_text, "context: knowledge: a | r | b");
    }

    proptest! {
        #[test]
        fn truncation_keeps_a_suffix(lens in proptest::collection::vec(1usize..30, 1..12), max_len in 8usize..200) {
            let texts: Vec<String> = lens.iter().enumerate()
                .map(|(i, &n)| (0..n).map(|w| format!("u{i}x{w}")).collect::<Vec<_>>().join(" "))
                .collect();
            let mut turns: Vec<(Speaker, &str)> = texts.iter().map(|x| (S, x.as_str())).collect();
            turns.push((R, "resp"));
            let d = dialogue("p", "x", &turns);
            let ex = build_example(&d, texts.len(), vec![t("a", "r", "b")], KnowledgeOrigin::Golden, max_len).unwrap();
            prop_assert!(tokenize_length(&ex.input_text).len() <= max_len);
            let kept: Vec<usize> = (0..texts.len()).filter(|i| ex.input_text.contains(&format!(" u{i}x0 "))).collect();
            if let Some(&first) = kept.first() {
                prop_assert_eq!(kept, (first..texts.len()).collect::<Vec<_>>());
                // the next older turn would not have fit
                if first > 0 {
                    let extra = lens[first - 1] + 1;
                    prop_assert!(tokenize_length(&ex.input_text).len() + extra > max_len);
                }
            }
        }
    }

    fn examples(n: usize, origin: KnowledgeOrigin, tag: &str) -> Vec<TrainingExample> {
        (0..n)
            .map(|i| TrainingExample {
                dialogue_id: format!("d{}", i / 3),
                turn_index: i % 3,
                input_text: format!("context: seeker: q{i} knowledge: {tag} | r | {i}"),
                target_text: format!("answer {i}"),
                knowledge: vec![t(tag, "r", &i.to_string())],
                knowledge_origin: origin,
                audit: None,
            })
            .collect()
    }

    fn strip_origin(v: &[TrainingExample]) -> Vec<(String, usize, String, String)> {
        v.iter()
            .map(|e| {
                (
                    e.dialogue_id.clone(),
                    e.turn_index,
                    e.input_text.clone(),
                    e.target_text.clone(),
                )
            })
            .collect()
    }

    #[test]
    fn mix_boundaries() {
        let golden = examples(30, KnowledgeOrigin::Golden, "gold");
        let retrieved = examples(30, KnowledgeOrigin::Retrieved, "ret");
        let m0 = mix_knowledge(
            &golden,
            &retrieved,
            &MixSpec {
                golden_percent: 0,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(strip_origin(&m0), strip_origin(&retrieved));
        assert!(m0.iter().all(|e| e.knowledge_origin == KnowledgeOrigin::MixedRetrieved));
        let m100 = mix_knowledge(
            &golden,
            &retrieved,
            &MixSpec {
                golden_percent: 100,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(strip_origin(&m100), strip_origin(&golden));
        assert!(m100.iter().all(|e| e.knowledge_origin == KnowledgeOrigin::MixedGolden));
    }

    #[test]
    fn mix_half_of_thousand() {
        let golden = examples(1000, KnowledgeOrigin::Golden, "gold");
        let retrieved = examples(1000, KnowledgeOrigin::Retrieved, "ret");
        let spec = MixSpec {
            golden_percent: 50,
            seed: 7,
        };
        let mixed = mix_knowledge(&golden, &retrieved, &spec).unwrap();
        let n_golden = mixed
            .iter()
            .filter(|e| e.knowledge_origin == KnowledgeOrigin::MixedGolden)
            .count();
        assert_eq!(n_golden, 500);
        assert_eq!(mixed, mix_knowledge(&golden, &retrieved, &spec).unwrap());
        let other = mix_knowledge(
            &golden,
            &retrieved,
            &MixSpec {
                golden_percent: 50,
                seed: 8,
            },
        )
        .unwrap();
        assert_ne!(mixed, other);
    }

    #[test]
    fn mix_misaligned() {
        let golden = examples(5, KnowledgeOrigin::Golden, "gold");
        let retrieved = examples(4, KnowledgeOrigin::Retrieved, "ret");
        match mix_knowledge(
            &golden,
            &retrieved,
            &MixSpec {
                golden_percent: 50,
                seed: 1,
            },
        )
        .unwrap_err()
        {
            Error::Misaligned { missing } => assert_eq!(missing, vec!["retrieved:d1#1".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(mix_knowledge(
            &golden,
            &golden,
            &MixSpec {
                golden_percent: 101,
                seed: 1
            }
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn mix_count_is_exact(p in 0u32..=100, n in 0usize..300, seed in any::<u64>()) {
            let golden = examples(n, KnowledgeOrigin::Golden, "gold");
            let retrieved = examples(n, KnowledgeOrigin::Retrieved, "ret");
            let mixed = mix_knowledge(&golden, &retrieved, &MixSpec { golden_percent: p, seed }).unwrap();
            let got = mixed.iter().filter(|e| e.knowledge_origin == KnowledgeOrigin::MixedGolden).count();
            prop_assert_eq!(got, (p as f64 / 100.0 * n as f64).round() as usize);
        }
    }

    fn topic_corpus(topics: usize, per_topic: usize) -> Vec<Dialogue> {
        (0..topics * per_topic)
            .map(|i| {
                dialogue(
                    &format!("d{i}"),
                    &format!("Topic {}", i % topics),
                    &[(S, "q"), (R, "a")],
                )
            })
            .collect()
    }

    #[test]
    fn few_shot_sampling() {
        let corpus = topic_corpus(100, 1);
        let picked = sample_few_shot(&corpus, 10, 3).unwrap();
        assert_eq!(picked.len(), 10);
        let topics: HashSet<&str> = picked.iter().map(|d| d.topic.as_str()).collect();
        assert_eq!(topics.len(), 10);
        assert_eq!(picked, sample_few_shot(&corpus, 10, 3).unwrap());

        let corpus = topic_corpus(7, 3);
        let all = sample_few_shot(&corpus, 7, 11).unwrap();
        let topics: HashSet<&str> = all.iter().map(|d| d.topic.as_str()).collect();
        assert_eq!(topics.len(), 7);

        let err = sample_few_shot(&corpus, 9, 1).unwrap_err().to_string();
        assert!(err.contains("2 short"), "{err}");
    }

    #[test]
    fn topics_compare_normalized() {
        let corpus = vec![
            dialogue("a", "The Matrix", &[(R, "x")]),
            dialogue("b", "the matrix!", &[(R, "x")]),
        ];
        assert!(sample_few_shot(&corpus, 2, 0).is_err());
    }

    #[test]
    fn coverage() {
        let store = KnowledgeStore::from_triples((0..6).map(|i| t(&format!("Movie {i}"), "genre", "drama")));
        let ds: Vec<Dialogue> = ["movie 0", "Movie 1", "MOVIE 2", "Movie 2", "Unknown"]
            .iter()
            .enumerate()
            .map(|(i, topic)| dialogue(&i.to_string(), topic, &[(R, "x")]))
            .collect();
        assert_eq!(coverage_stats(&ds, &store).unwrap(), 50.0);
        assert_eq!(coverage_stats(&ds[4..], &store).unwrap(), 0.0);
        assert!(coverage_stats(&ds, &KnowledgeStore::new()).is_err());
    }

    #[test]
    fn corpus_round_trip_and_bytes() {
        let mut exs = examples(3, KnowledgeOrigin::Retrieved, "ret");
        exs[1].audit = Some(StageAudit {
            retrieved: 9,
            ranked: 5,
            selected: 1,
        });
        exs[2].knowledge.clear();
        exs[2].knowledge_origin = KnowledgeOrigin::None;
        let mut a = Vec::new();
        write_corpus(&mut a, &exs).unwrap();
        let mut b = Vec::new();
        write_corpus(&mut b, &exs).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with(r#"{"did":"d0","turn":1,"input":"#));
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .ends_with(r#""origin":"retrieved","audit":[9,5,1]}"#));
        let back = parse_corpus(text.as_bytes(), "mem").unwrap();
        assert_eq!(back, exs);
    }

    #[test]
    fn truncated_corpus_names_last_good_line() {
        let exs = examples(3, KnowledgeOrigin::Retrieved, "ret");
        let mut buf = Vec::new();
        write_corpus(&mut buf, &exs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 20];
        match parse_corpus(cut.as_bytes(), "mem").unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("last good line 2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corpus_all_below_threshold_is_empty() {
        let store = KnowledgeStore::from_triples([t("Obama", "spouse", "Michelle")]);
        let d = dialogue("d", "Obama", &[(S, "hi"), (R, "zzz qqq")]);
        let cfg = CorpusConfig {
            cascade: CascadeConfig {
                sem_threshold: 1.1,
                ..Default::default()
            },
            ..Default::default()
        };
        let built = build_corpus(&[d], &store, &LexicalProvider, &cfg, BuildMode::Cascade).unwrap();
        assert!(built.examples.is_empty());
        assert_eq!(built.report.abandoned, 1);
        assert_eq!(built.report.grounded, 0);
    }

    #[test]
    fn corpus_golden_passthrough() {
        let mut d = dialogue("d", "x", &[(S, "a"), (R, "b"), (S, "c"), (R, "d"), (S, "e"), (R, "f")]);
        for turn in d.turns.iter_mut().filter(|t| t.is_responder()) {
            turn.golden_knowledge = Some(vec![t("x", "r", &turn.text).with_source_tag(SourceTag::Labeled)]);
        }
        let built = build_corpus(
            &[d],
            &KnowledgeStore::new(),
            &LexicalProvider,
            &CorpusConfig::default(),
            BuildMode::GoldenPassthrough,
        )
        .unwrap();
        assert_eq!(built.examples.len(), 3);
        assert!(built
            .examples
            .iter()
            .all(|e| e.knowledge_origin == KnowledgeOrigin::Golden));
        let turns: Vec<usize> = built.examples.iter().map(|e| e.turn_index).collect();
        assert_eq!(turns, [1, 3, 5]);
    }

    #[test]
    fn corpus_one_of_two_grounded() {
        let store =
            KnowledgeStore::from_triples([t("Obama", "spouse", "Michelle Obama"), t("Obama", "born in", "Hawaii")]);
        let ds = vec![
            dialogue("d1", "Obama", &[(S, "tell me"), (R, "Obama spouse Michelle Obama")]),
            dialogue("d2", "Obama", &[(S, "ok"), (R, "xyzzy plugh")]),
        ];
        // brute force: best lexical score per turn over every store triple
        let best = |d: &Dialogue| {
            let query = format!("{} {}", d.turns[0].text, d.turns[1].text);
            store
                .triples()
                .iter()
                .map(|t| LexicalProvider.score(&query, &t.canonical_text()).unwrap())
                .fold(f64::MIN, f64::max)
        };
        assert!(best(&ds[0]) >= 0.35, "{}", best(&ds[0]));
        assert!(best(&ds[1]) < 0.35, "{}", best(&ds[1]));

        let built = build_corpus(
            &ds,
            &store,
            &LexicalProvider,
            &CorpusConfig::default(),
            BuildMode::Cascade,
        )
        .unwrap();
        assert_eq!(built.examples.len(), 1);
        let ex = &built.examples[0];
        assert_eq!((ex.dialogue_id.as_str(), ex.turn_index), ("d1", 1));
        assert_eq!(
            ex.audit,
            Some(StageAudit {
                retrieved: 2,
                ranked: 2,
                selected: 2
            })
        );
        assert_eq!(ex.knowledge[0], t("Obama", "spouse", "Michelle Obama"));
        assert_eq!(built.report.grounded, 1);
        assert_eq!(built.report.abandoned, 1);
    }

    #[test]
    fn inference_mode_emits_every_turn() {
        let store = KnowledgeStore::from_triples([t("Obama", "spouse", "Michelle Obama")]);
        let d = dialogue("d", "Obama", &[(R, "first"), (S, "who is obama spouse"), (R, "xyzzy")]);
        let built = build_corpus(
            &[d],
            &store,
            &LexicalProvider,
            &CorpusConfig::default(),
            BuildMode::Inference,
        )
        .unwrap();
        assert_eq!(built.examples.len(), 2);
        assert_eq!(built.examples[0].knowledge_origin, KnowledgeOrigin::None);
        assert_eq!(built.examples[0].input_text, "context:");
    }
}
