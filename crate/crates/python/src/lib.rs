//! Python bindings: triples, the store, the cascade, corpus building and
//! the evaluation metrics.

use std::path::PathBuf;

use groundkit::cascade::{self, CascadeConfig};
use groundkit::config::ProviderSpec;
use groundkit::corpus::{self, BuildMode, CorpusConfig, MixSpec, TrainingExample};
use groundkit::metrics::{self, EvalOptions, EvalRecord};
use groundkit::simprov::RemoteSettings;
use groundkit::{adapters, cli, text, Error, SourceTag};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyList;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        e if e.is_pipeline_failure() => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_tag(tag: &str) -> PyResult<SourceTag> {
    Ok(match tag {
        "graph" => SourceTag::Graph,
        "document" => SourceTag::Document,
        "table" => SourceTag::Table,
        "labeled" => SourceTag::Labeled,
        "keyword" => SourceTag::Keyword,
        other => return Err(PyValueError::new_err(format!("unknown source tag {other:?}"))),
    })
}

fn tag_name(tag: SourceTag) -> &'static str {
    match tag {
        SourceTag::Graph => "graph",
        SourceTag::Document => "document",
        SourceTag::Table => "table",
        SourceTag::Labeled => "labeled",
        SourceTag::Keyword => "keyword",
    }
}

#[pyclass(name = "KnowledgeTriple", frozen, eq, hash, from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PyTriple {
    inner: groundkit::KnowledgeTriple,
}

#[pymethods]
impl PyTriple {
    #[new]
    #[pyo3(signature = (subject, relation, object, source_tag = "graph"))]
    fn new(subject: &str, relation: &str, object: &str, source_tag: &str) -> PyResult<Self> {
        let inner =
            groundkit::KnowledgeTriple::new(subject, relation, object, parse_tag(source_tag)?).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        let inner = groundkit::KnowledgeTriple::parse_canonical(text, SourceTag::Graph).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn subject(&self) -> &str {
        self.inner.subject()
    }

    #[getter]
    fn relation(&self) -> &str {
        self.inner.relation()
    }

    #[getter]
    fn object(&self) -> &str {
        self.inner.object()
    }

    #[getter]
    fn source_tag(&self) -> &'static str {
        tag_name(self.inner.source_tag())
    }

    fn canonical_text(&self) -> String {
        self.inner.canonical_text()
    }

    fn fields(&self) -> (String, String, String) {
        let [s, r, o] = self.inner.fields();
        (s.to_owned(), r.to_owned(), o.to_owned())
    }

    fn __str__(&self) -> String {
        self.inner.canonical_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "KnowledgeTriple({:?}, {:?}, {:?}, source_tag={:?})",
            self.inner.subject(),
            self.inner.relation(),
            self.inner.object(),
            self.source_tag()
        )
    }
}

#[pyclass(name = "KnowledgeStore")]
struct PyStore {
    inner: groundkit::KnowledgeStore,
}

#[pymethods]
impl PyStore {
    #[new]
    #[pyo3(signature = (triples = Vec::new()))]
    fn new(triples: Vec<PyTriple>) -> Self {
        Self {
            inner: groundkit::KnowledgeStore::from_triples(triples.into_iter().map(|t| t.inner)),
        }
    }

    /// Load a TSV dump, or N-Triples when the extension is `.nt`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: cli::load_store(&path).map_err(to_py)?,
        })
    }

    fn insert(&mut self, triple: PyTriple) -> bool {
        self.inner.insert(triple.inner)
    }

    fn lookup(&self, entity: &str) -> Vec<PyTriple> {
        self.inner
            .lookup(entity)
            .iter()
            .filter_map(|&id| self.inner.get(id))
            .map(|t| PyTriple { inner: t.clone() })
            .collect()
    }

    fn retrieve(&self, entity_query: &str, cap: usize) -> PyResult<Vec<PyTriple>> {
        let found = cascade::retrieve_candidates(entity_query, &self.inner, cap).map_err(to_py)?;
        Ok(found.into_iter().map(|inner| PyTriple { inner }).collect())
    }

    fn triples(&self) -> Vec<PyTriple> {
        self.inner
            .triples()
            .iter()
            .map(|t| PyTriple { inner: t.clone() })
            .collect()
    }

    fn entity_count(&self) -> usize {
        self.inner.entity_count()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Dialogue", frozen, from_py_object)]
#[derive(Clone)]
struct PyDialogue {
    inner: groundkit::Dialogue,
}

#[pymethods]
impl PyDialogue {
    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn topic(&self) -> &str {
        &self.inner.topic
    }

    /// `(speaker, text)` pairs.
    #[getter]
    fn turns(&self) -> Vec<(&'static str, String)> {
        self.inner
            .turns
            .iter()
            .map(|t| (t.speaker.as_str(), t.text.clone()))
            .collect()
    }

    fn to_json<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &adapters::dialogue_to_json(&self.inner))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dialogue(id={:?}, topic={:?}, turns={})",
            self.inner.id,
            self.inner.topic,
            self.inner.turns.len()
        )
    }
}

fn dialogues(ds: &[PyDialogue]) -> Vec<groundkit::Dialogue> {
    ds.iter().map(|d| d.inner.clone()).collect()
}

#[pyfunction]
fn load_dialogues(path: PathBuf) -> PyResult<Vec<PyDialogue>> {
    let ds = adapters::load_dialogues(&path).map_err(to_py)?;
    Ok(ds.into_iter().map(|inner| PyDialogue { inner }).collect())
}

#[pyfunction]
fn parse_dialogues(text: &str) -> PyResult<Vec<PyDialogue>> {
    let ds = adapters::parse_dialogues(text.as_bytes(), "<string>").map_err(to_py)?;
    Ok(ds.into_iter().map(|inner| PyDialogue { inner }).collect())
}

#[pyfunction]
fn tokenize_metric(text: &str) -> Vec<String> {
    text::tokenize_metric(text)
}

#[pyfunction]
fn tokenize_length(text: &str) -> Vec<String> {
    text::tokenize_length(text).into_iter().map(str::to_owned).collect()
}

fn provider(spec: &str) -> PyResult<Box<dyn groundkit::SimilarityProvider>> {
    let spec: ProviderSpec = spec.parse().map_err(to_py)?;
    spec.instantiate(&RemoteSettings::default()).map_err(to_py)
}

/// Similarity of two texts under `provider` (`lexical`, `vectors:<path>` or `remote:<url>`).
#[pyfunction]
#[pyo3(signature = (a, b, provider = "lexical"))]
fn similarity(a: &str, b: &str, provider: &str) -> PyResult<f64> {
    self::provider(provider)?.score(a, b).map_err(|e| to_py(e.into()))
}

#[pyfunction]
fn statistical_rank(query: &str, candidates: Vec<PyTriple>, keep: usize) -> PyResult<Vec<(PyTriple, f64)>> {
    let cands: Vec<_> = candidates.into_iter().map(|t| t.inner).collect();
    let ranked = cascade::statistical_rank(query, &cands, keep).map_err(to_py)?;
    Ok(ranked
        .into_iter()
        .map(|s| (PyTriple { inner: s.triple }, s.stat_score.unwrap_or(0.0)))
        .collect())
}

fn cascade_config(threshold: Option<f64>, final_k: Option<usize>) -> CascadeConfig {
    let mut cfg = CascadeConfig::default();
    if let Some(t) = threshold {
        cfg.sem_threshold = t;
    }
    if let Some(k) = final_k {
        cfg.final_k = k;
    }
    cfg
}

/// Run the three-stage cascade for one turn. Returns a dict with `selected`
/// (`(triple, stat_score, sem_score)` tuples), `grounded`, `best_sem_score`
/// and `audit`.
#[pyfunction]
#[pyo3(signature = (context, response, entity_query, store, provider = "lexical", threshold = None, final_k = None))]
#[allow(clippy::too_many_arguments)]
fn run_cascade<'py>(
    py: Python<'py>,
    context: Vec<String>,
    response: Option<String>,
    entity_query: &str,
    store: &PyStore,
    provider: &str,
    threshold: Option<f64>,
    final_k: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let provider = self::provider(provider)?;
    let cfg = cascade_config(threshold, final_k);
    let r = cascade::run_cascade(
        &context,
        response.as_deref(),
        entity_query,
        &store.inner,
        provider.as_ref(),
        &cfg,
    )
    .map_err(to_py)?;
    let out = pyo3::types::PyDict::new(py);
    let selected = PyList::empty(py);
    for s in r.selected {
        selected.append((PyTriple { inner: s.triple }, s.stat_score, s.sem_score))?;
    }
    out.set_item("selected", selected)?;
    out.set_item("grounded", r.grounded)?;
    out.set_item("best_sem_score", r.best_sem_score)?;
    out.set_item("audit", (r.audit.retrieved, r.audit.ranked, r.audit.selected))?;
    Ok(out.into_any())
}

fn corpus_lines(examples: &[TrainingExample]) -> PyResult<Vec<String>> {
    let mut buf = Vec::new();
    corpus::write_corpus(&mut buf, examples).map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(String::from_utf8_lossy(&buf).lines().map(str::to_owned).collect())
}

fn records_to_py<'py>(py: Python<'py>, examples: &[TrainingExample]) -> PyResult<Vec<Bound<'py, PyAny>>> {
    let json = py.import("json")?;
    corpus_lines(examples)?
        .into_iter()
        .map(|l| json.call_method1("loads", (l,)))
        .collect()
}

fn parse_mode(mode: &str) -> PyResult<BuildMode> {
    Ok(match mode {
        "cascade" => BuildMode::Cascade,
        "golden-passthrough" => BuildMode::GoldenPassthrough,
        "inference" => BuildMode::Inference,
        other => return Err(PyValueError::new_err(format!("unknown build mode {other:?}"))),
    })
}

/// Build training examples. Returns `(examples, report)`; examples are the
/// corpus records as dicts. When `output` is given the corpus is also
/// written there.
#[pyfunction]
#[pyo3(signature = (dialogues, store, mode = "cascade", provider = "lexical", threshold = None, max_len = None, output = None))]
#[allow(clippy::too_many_arguments)]
fn build_corpus<'py>(
    py: Python<'py>,
    dialogues: Vec<PyDialogue>,
    store: &PyStore,
    mode: &str,
    provider: &str,
    threshold: Option<f64>,
    max_len: Option<usize>,
    output: Option<PathBuf>,
) -> PyResult<(Vec<Bound<'py, PyAny>>, Bound<'py, PyAny>)> {
    let provider = self::provider(provider)?;
    let mut cfg = CorpusConfig {
        cascade: cascade_config(threshold, None),
        ..Default::default()
    };
    if let Some(n) = max_len {
        cfg.max_len = n;
    }
    let ds = self::dialogues(&dialogues);
    let mode = parse_mode(mode)?;
    let built = py
        .detach(|| corpus::build_corpus(&ds, &store.inner, provider.as_ref(), &cfg, mode))
        .map_err(to_py)?;
    if let Some(out) = output {
        corpus::emit_corpus(out, &built.examples).map_err(to_py)?;
    }
    Ok((records_to_py(py, &built.examples)?, json_to_py(py, &built.report)?))
}

/// Mix two corpus files at `golden_percent` and write the result.
#[pyfunction]
fn mix_files(golden: PathBuf, retrieved: PathBuf, golden_percent: u32, seed: u64, output: PathBuf) -> PyResult<usize> {
    let g = corpus::load_corpus(golden).map_err(to_py)?;
    let r = corpus::load_corpus(retrieved).map_err(to_py)?;
    let mixed = corpus::mix_knowledge(&g, &r, &MixSpec { golden_percent, seed }).map_err(to_py)?;
    corpus::emit_corpus(output, &mixed).map_err(to_py)?;
    Ok(corpus::golden_count(golden_percent, r.len()))
}

#[pyfunction]
fn golden_count(percent: u32, n: usize) -> usize {
    corpus::golden_count(percent, n)
}

#[pyfunction]
fn sample_few_shot(dialogues: Vec<PyDialogue>, n: usize, seed: u64) -> PyResult<Vec<PyDialogue>> {
    let picked = corpus::sample_few_shot(&self::dialogues(&dialogues), n, seed).map_err(to_py)?;
    Ok(picked.into_iter().map(|inner| PyDialogue { inner }).collect())
}

#[pyfunction]
fn coverage(dialogues: Vec<PyDialogue>, store: &PyStore) -> PyResult<f64> {
    corpus::coverage_stats(&self::dialogues(&dialogues), &store.inner).map_err(to_py)
}

/// Corpus-level metrics. `knowledge` enables KF1, `items` enables Rec.
#[pyfunction]
#[pyo3(signature = (predictions, references, knowledge = None, items = None, smoothed_bleu = false))]
fn evaluate<'py>(
    py: Python<'py>,
    predictions: Vec<String>,
    references: Vec<String>,
    knowledge: Option<Vec<String>>,
    items: Option<Vec<Vec<String>>>,
    smoothed_bleu: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let n = predictions.len();
    if references.len() != n
        || knowledge.as_ref().is_some_and(|k| k.len() != n)
        || items.as_ref().is_some_and(|i| i.len() != n)
    {
        return Err(PyValueError::new_err("all inputs must have the same length"));
    }
    let mut knowledge = knowledge.map(Vec::into_iter);
    let mut items = items.map(Vec::into_iter);
    let records: Vec<EvalRecord> = predictions
        .into_iter()
        .zip(references)
        .map(|(p, r)| {
            let mut rec = EvalRecord::new(p, r);
            if let Some(k) = knowledge.as_mut().and_then(Iterator::next) {
                rec = rec.with_knowledge(k);
            }
            if let Some(i) = items.as_mut().and_then(Iterator::next) {
                rec = rec.with_items(i);
            }
            rec
        })
        .collect();
    let report = metrics::evaluate(&records, EvalOptions { smoothed_bleu }).map_err(to_py)?;
    json_to_py(py, &report)
}

#[pymodule]
#[pyo3(name = "groundkit")]
fn groundkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTriple>()?;
    m.add_class::<PyStore>()?;
    m.add_class::<PyDialogue>()?;
    m.add_function(wrap_pyfunction!(load_dialogues, m)?)?;
    m.add_function(wrap_pyfunction!(parse_dialogues, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize_metric, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize_length, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(statistical_rank, m)?)?;
    m.add_function(wrap_pyfunction!(run_cascade, m)?)?;
    m.add_function(wrap_pyfunction!(build_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(mix_files, m)?)?;
    m.add_function(wrap_pyfunction!(golden_count, m)?)?;
    m.add_function(wrap_pyfunction!(sample_few_shot, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
