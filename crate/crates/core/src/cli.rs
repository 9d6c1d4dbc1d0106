//! Command-line front end. Exit codes: 0 success, 1 input error,
//! 2 pipeline or provider error.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::adapters::{self, DumpFormat, VerbLexiconExtractor};
use crate::config::{ProviderSpec, RunConfig};
use crate::corpus::{self, BuildMode, MixSpec};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalOptions};
use crate::store::KnowledgeStore;

#[derive(Debug, Parser)]
#[command(
    name = "groundkit",
    version,
    about = "Build and evaluate knowledge-grounded dialogue corpora"
)]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load knowledge sources into a deduplicated TSV store.
    Ingest(IngestArgs),
    /// Run the cascade over dialogues and write a training corpus.
    Build(BuildArgs),
    /// Mix golden and retrieved corpora at several golden percentages.
    Mix(MixArgs),
    /// Sample dialogues with distinct topics.
    Sample(SampleArgs),
    /// Score predictions against references.
    Eval(EvalArgs),
    /// Topic coverage of a store by a dialogue corpus.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceFormat {
    Tsv,
    Ntriples,
    Keywords,
    Table,
    Passages,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum, default_value = "tsv")]
    pub format: SourceFormat,
    /// Input files; all are read with the same format.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Where to write the merged store as TSV.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Table column mapping, `column=relation` (repeatable).
    #[arg(long = "relation")]
    pub relations: Vec<String>,
    #[arg(long, default_value = adapters::DEFAULT_CELL_DELIMITER)]
    pub delimiter: String,
    /// Verb lexicon for passage extraction, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub verbs: Vec<String>,
    /// Word list; triples containing any listed word are dropped.
    #[arg(long)]
    pub profanity: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub dialogues: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// `lexical`, `vectors:<path>` or `remote:<url>`.
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    GoldenPassthrough,
    Cascade,
    Inference,
}

impl From<ModeArg> for BuildMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::GoldenPassthrough => BuildMode::GoldenPassthrough,
            ModeArg::Cascade => BuildMode::Cascade,
            ModeArg::Inference => BuildMode::Inference,
        }
    }
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub golden: PathBuf,
    #[arg(long)]
    pub retrieved: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,20,40,60,80,100")]
    pub percents: Vec<u32>,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub dialogues: PathBuf,
    #[arg(long, short)]
    pub n: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Also report add-one smoothed sentence BLEU-4.
    #[arg(long)]
    pub smoothed_bleu: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dialogues: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
}

/// Parse arguments, run, and return the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_pipeline_failure() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Ingest(a) => ingest(cli, &config, a),
        Command::Build(a) => build(cli, config, a),
        Command::Mix(a) => mix(cli, &config, a),
        Command::Sample(a) => sample(cli, &config, a),
        Command::Eval(a) => eval(cli, &config, a),
        Command::Stats(a) => stats(cli, &config, a),
    })
}

fn print_json(value: &Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    writeln!(out).map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn meta_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn write_meta(output: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    write_file(&meta_path(output), format!("{text}\n").as_bytes())
}

fn require_seed(config: &RunConfig, command: &str) -> Result<u64> {
    config
        .seed
        .ok_or_else(|| Error::Config(format!("{command} requires --seed (or \"seed\" in the config)")))
}

pub fn load_store(path: &Path) -> Result<KnowledgeStore> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("nt") => DumpFormat::NTriples,
        _ => DumpFormat::Tsv,
    };
    adapters::load_triple_dump(path, format)
}

fn ingest(cli: &Cli, config: &RunConfig, args: &IngestArgs) -> Result<()> {
    let mut store = KnowledgeStore::new();
    for input in &args.inputs {
        let triples: Vec<_> = match args.format {
            SourceFormat::Tsv => adapters::load_triple_dump(input, DumpFormat::Tsv)?.triples().to_vec(),
            SourceFormat::Ntriples => adapters::load_triple_dump(input, DumpFormat::NTriples)?
                .triples()
                .to_vec(),
            SourceFormat::Keywords => adapters::load_keyword_file(input)?,
            SourceFormat::Table => {
                let relation_map = parse_relations(&args.relations)?;
                let rows = adapters::load_table_csv(input)?;
                adapters::load_tabular(&rows, &relation_map, &args.delimiter)?
                    .triples()
                    .to_vec()
            }
            SourceFormat::Passages => {
                let extractor = VerbLexiconExtractor::new(&args.verbs);
                adapters::load_passages(input)?
                    .iter()
                    .flat_map(|doc| adapters::extract_document_triples(doc, &extractor))
                    .collect()
            }
        };
        store.extend(triples);
    }
    let profanity = args.profanity.as_ref().or(config.profanity.as_ref());
    let mut dropped = 0;
    if let Some(path) = profanity {
        let words = adapters::load_wordlist(path)?;
        let before = store.len();
        store = KnowledgeStore::from_triples(adapters::filter_profanity(store.triples().to_vec(), &words));
        dropped = before - store.len();
    }
    if let Some(out) = &args.output {
        let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
        store
            .write_tsv(io::BufWriter::new(file))
            .map_err(|e| Error::io(out, e))?;
    }
    if cli.json {
        print_json(&json!({
            "triples": store.len(),
            "entities": store.entity_count(),
            "dropped_profanity": dropped,
            "inputs": args.inputs,
            "output": args.output,
            "config": config,
        }))
    } else {
        println!("triples: {}", store.len());
        println!("entities: {}", store.entity_count());
        if dropped > 0 {
            println!("dropped (profanity): {dropped}");
        }
        Ok(())
    }
}

fn parse_relations(specs: &[String]) -> Result<BTreeMap<String, String>> {
    if specs.is_empty() {
        return Err(Error::Config(
            "table ingestion needs at least one --relation column=relation".into(),
        ));
    }
    specs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((c, r)) if !c.trim().is_empty() && !r.trim().is_empty() => {
                Ok((c.trim().to_owned(), r.trim().to_owned()))
            }
            _ => Err(Error::Config(format!("bad --relation {s:?}, expected column=relation"))),
        })
        .collect()
}

fn build(cli: &Cli, mut config: RunConfig, args: &BuildArgs) -> Result<()> {
    if let Some(p) = &args.store {
        config.store = Some(p.clone());
    }
    if let Some(p) = &args.dialogues {
        config.dialogues = Some(p.clone());
    }
    if let Some(p) = &args.output {
        config.output = Some(p.clone());
    }
    if let Some(m) = args.mode {
        config.mode = m.into();
    }
    if let Some(p) = &args.provider {
        config.provider = p.parse::<ProviderSpec>()?;
    }
    if let Some(t) = args.threshold {
        config.cascade.sem_threshold = t;
    }
    if let Some(n) = args.max_len {
        config.max_len = n;
    }
    config.validate()?;
    for w in config.warnings() {
        eprintln!("warning: {w}");
    }
    let dialogues_path = config
        .dialogues
        .clone()
        .ok_or_else(|| Error::Config("build needs dialogues".into()))?;
    let output = config
        .output
        .clone()
        .ok_or_else(|| Error::Config("build needs an output path".into()))?;

    let dialogues = adapters::load_dialogues(&dialogues_path)?;
    let mut store = match &config.store {
        Some(p) => load_store(p)?,
        None if config.mode == BuildMode::GoldenPassthrough => KnowledgeStore::new(),
        None => return Err(Error::Config("cascade builds need a store".into())),
    };
    if let Some(p) = &config.profanity {
        let words = adapters::load_wordlist(p)?;
        store = KnowledgeStore::from_triples(adapters::filter_profanity(store.triples().to_vec(), &words));
    }
    let provider = config.provider.instantiate(&config.remote)?;
    let built = corpus::build_corpus(
        &dialogues,
        &store,
        provider.as_ref(),
        &config.corpus_config(),
        config.mode,
    )?;
    corpus::emit_corpus(&output, &built.examples)?;

    let summary = json!({
        "output": output,
        "examples": built.examples.len(),
        "report": built.report,
        "config": config,
    });
    write_meta(&output, &summary)?;
    if cli.json {
        print_json(&summary)
    } else {
        let r = &built.report;
        println!("responder turns: {}", r.responder_turns);
        println!("examples: {}", r.emitted);
        println!("grounded: {}", r.grounded);
        println!("abandoned: {}", r.abandoned);
        println!("wrote {}", output.display());
        Ok(())
    }
}

fn mix(cli: &Cli, config: &RunConfig, args: &MixArgs) -> Result<()> {
    let seed = require_seed(config, "mix")?;
    let golden = corpus::load_corpus(&args.golden)?;
    let retrieved = corpus::load_corpus(&args.retrieved)?;
    fs::create_dir_all(&args.output_dir).map_err(|e| Error::io(&args.output_dir, e))?;
    let mut outputs = Vec::new();
    for &p in &args.percents {
        let mixed = corpus::mix_knowledge(
            &golden,
            &retrieved,
            &MixSpec {
                golden_percent: p,
                seed,
            },
        )?;
        let path = args.output_dir.join(format!("mix_{p:03}.jsonl"));
        corpus::emit_corpus(&path, &mixed)?;
        let golden_variants = corpus::golden_count(p, retrieved.len());
        let entry = json!({"percent": p, "path": path, "examples": mixed.len(), "golden_variants": golden_variants});
        write_meta(
            &path,
            &json!({"mix": entry, "seed": seed, "golden": args.golden, "retrieved": args.retrieved, "config": config}),
        )?;
        outputs.push(entry);
    }
    if cli.json {
        print_json(&json!({"outputs": outputs, "seed": seed, "config": config}))
    } else {
        for o in &outputs {
            println!(
                "{}% -> {} ({} golden of {})",
                o["percent"],
                o["path"].as_str().unwrap_or(""),
                o["golden_variants"],
                o["examples"]
            );
        }
        Ok(())
    }
}

fn sample(cli: &Cli, config: &RunConfig, args: &SampleArgs) -> Result<()> {
    let seed = require_seed(config, "sample")?;
    let dialogues = adapters::load_dialogues(&args.dialogues)?;
    let picked = corpus::sample_few_shot(&dialogues, args.n, seed)?;
    let mut text = String::new();
    for d in &picked {
        text.push_str(&adapters::dialogue_to_json(d).to_string());
        text.push('\n');
    }
    if let Some(out) = &args.output {
        write_file(out, text.as_bytes())?;
        write_meta(
            out,
            &json!({"n": args.n, "seed": seed, "source": args.dialogues, "config": config}),
        )?;
    }
    if cli.json {
        let ids: Vec<&str> = picked.iter().map(|d| d.id.as_str()).collect();
        print_json(&json!({"n": args.n, "seed": seed, "ids": ids, "output": args.output, "config": config}))
    } else if args.output.is_none() {
        print!("{text}");
        Ok(())
    } else {
        println!("sampled {} dialogues", picked.len());
        Ok(())
    }
}

fn eval(cli: &Cli, config: &RunConfig, args: &EvalArgs) -> Result<()> {
    let report = metrics::evaluate_file_with(
        &args.pred,
        &args.reference,
        EvalOptions {
            smoothed_bleu: args.smoothed_bleu,
        },
    )?;
    if cli.json {
        let mut value = serde_json::to_value(&report).map_err(|e| Error::InvalidInput(e.to_string()))?;
        value["config"] = serde_json::to_value(config).unwrap_or(Value::Null);
        print_json(&value)
    } else {
        print!("{report}");
        Ok(())
    }
}

fn stats(cli: &Cli, config: &RunConfig, args: &StatsArgs) -> Result<()> {
    let dialogues = adapters::load_dialogues(&args.dialogues)?;
    let store = load_store(&args.store)?;
    let (covered, total) = corpus::coverage_counts(&dialogues, &store)?;
    let percent = corpus::coverage_stats(&dialogues, &store)?;
    let topics: HashSet<String> = dialogues.iter().map(|d| crate::text::normalize_key(&d.topic)).collect();
    if cli.json {
        print_json(&json!({
            "dialogues": dialogues.len(),
            "distinct_topics": topics.len(),
            "store_subjects": total,
            "covered": covered,
            "coverage_percent": percent,
            "config": config,
        }))
    } else {
        println!("dialogues: {}", dialogues.len());
        println!("distinct topics: {}", topics.len());
        println!("store subjects: {total}");
        println!("covered: {covered}");
        println!("coverage: {percent:.2}%");
        Ok(())
    }
}
