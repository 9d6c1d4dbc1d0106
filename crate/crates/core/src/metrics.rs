//! Response-generation metrics: BLEU-4, ROUGE-L, unigram F1, knowledge F1,
//! Distinct-n and recommendation recall. All work on metric tokens.
//!
//! Macro averages are summed over sorted per-record values so that record
//! order and thread count cannot change the result.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::text::{contains_subsequence, tokenize_metric};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalRecord {
    pub prediction: String,
    pub reference: String,
    pub golden_knowledge_text: Option<String>,
    pub golden_items: Option<Vec<String>>,
}

impl EvalRecord {
    pub fn new(prediction: impl Into<String>, reference: impl Into<String>) -> Self {
        Self {
            prediction: prediction.into(),
            reference: reference.into(),
            ..Default::default()
        }
    }

    pub fn with_knowledge(mut self, knowledge: impl Into<String>) -> Self {
        self.golden_knowledge_text = Some(knowledge.into());
        self
    }

    pub fn with_items(mut self, items: Vec<String>) -> Self {
        self.golden_items = Some(items);
        self
    }
}

fn require_records(records: &[EvalRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to evaluate".into()));
    }
    Ok(())
}

fn order_free_mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram totals for one pair.
fn clipped_matches(pred: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let p = ngram_counts(pred, n);
    let r = ngram_counts(reference, n);
    let matched = p.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, pred.len().saturating_sub(n - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BleuComponents {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub bleu: f64,
}

/// Corpus-level BLEU-4 with its modified precisions and brevity penalty.
pub fn bleu4_components(records: &[EvalRecord]) -> Result<BleuComponents> {
    require_records(records)?;
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut pred_len, mut ref_len) = (0usize, 0usize);
    for r in records {
        let p = tokenize_metric(&r.prediction);
        let g = tokenize_metric(&r.reference);
        pred_len += p.len();
        ref_len += g.len();
        for n in 1..=4 {
            let (m, t) = clipped_matches(&p, &g, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    let precisions = std::array::from_fn(|i| {
        if totals[i] == 0 {
            0.0
        } else {
            matches[i] as f64 / totals[i] as f64
        }
    });
    let brevity_penalty = if pred_len == 0 {
        0.0
    } else if pred_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / pred_len as f64).exp()
    };
    let bleu = if matches.contains(&0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p: &f64| p.ln()).sum::<f64>() / 4.0;
        (brevity_penalty * log_mean.exp()).min(1.0)
    };
    Ok(BleuComponents {
        matches,
        totals,
        precisions,
        brevity_penalty,
        bleu,
    })
}

/// Unsmoothed corpus BLEU-4.
pub fn bleu4(records: &[EvalRecord]) -> Result<f64> {
    Ok(bleu4_components(records)?.bleu)
}

/// Mean sentence BLEU-4 with add-one smoothing on orders 2 to 4.
pub fn bleu4_smoothed(records: &[EvalRecord]) -> Result<f64> {
    require_records(records)?;
    let scores = records
        .par_iter()
        .map(|r| {
            let p = tokenize_metric(&r.prediction);
            let g = tokenize_metric(&r.reference);
            if p.is_empty() {
                return 0.0;
            }
            let mut log_sum = 0.0;
            for n in 1..=4 {
                let (m, t) = clipped_matches(&p, &g, n);
                let prec = if n == 1 {
                    if m == 0 {
                        return 0.0;
                    }
                    m as f64 / t as f64
                } else {
                    (m as f64 + 1.0) / (t as f64 + 1.0)
                };
                log_sum += prec.ln();
            }
            let bp = if p.len() > g.len() {
                1.0
            } else {
                (1.0 - g.len() as f64 / p.len() as f64).exp()
            };
            (bp * (log_sum / 4.0).exp()).min(1.0)
        })
        .collect();
    Ok(order_free_mean(scores))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn f_score(overlap: usize, pred_len: usize, target_len: usize) -> f64 {
    if overlap == 0 || pred_len == 0 || target_len == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred_len as f64;
    let r = overlap as f64 / target_len as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_l_pair(prediction: &str, reference: &str) -> f64 {
    let p = tokenize_metric(prediction);
    let r = tokenize_metric(reference);
    f_score(lcs_len(&p, &r), p.len(), r.len())
}

/// Macro-averaged ROUGE-L F1 (beta = 1).
pub fn rouge_l(records: &[EvalRecord]) -> Result<f64> {
    require_records(records)?;
    Ok(order_free_mean(
        records
            .par_iter()
            .map(|r| rouge_l_pair(&r.prediction, &r.reference))
            .collect(),
    ))
}

/// Multiset unigram-overlap F1 for one pair.
pub fn unigram_f1_pair(prediction: &str, target: &str) -> f64 {
    let p = tokenize_metric(prediction);
    let t = tokenize_metric(target);
    let mut remaining: HashMap<&str, usize> = HashMap::new();
    for tok in &t {
        *remaining.entry(tok).or_insert(0) += 1;
    }
    let mut overlap = 0;
    for tok in &p {
        if let Some(c) = remaining.get_mut(tok.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    f_score(overlap, p.len(), t.len())
}

pub fn unigram_f1(records: &[EvalRecord]) -> Result<f64> {
    require_records(records)?;
    Ok(order_free_mean(
        records
            .par_iter()
            .map(|r| unigram_f1_pair(&r.prediction, &r.reference))
            .collect(),
    ))
}

/// Unigram F1 against the grounding knowledge. Absent unless every record
/// carries knowledge text.
pub fn kf1(records: &[EvalRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let scores: Option<Vec<f64>> = records
        .iter()
        .map(|r| {
            r.golden_knowledge_text
                .as_deref()
                .map(|k| unigram_f1_pair(&r.prediction, k))
        })
        .collect();
    scores.map(order_free_mean)
}

/// Distinct n-grams over total n-grams of one response; 0 if shorter than n.
pub fn distinct_n_pair(prediction: &str, n: usize) -> f64 {
    let tokens = tokenize_metric(prediction);
    if n == 0 || tokens.len() < n {
        return 0.0;
    }
    let total = tokens.len() - n + 1;
    let distinct: HashSet<&[String]> = tokens.windows(n).collect();
    distinct.len() as f64 / total as f64
}

/// Sentence-level Distinct-n averaged over responses.
pub fn distinct_n(records: &[EvalRecord], n: usize) -> f64 {
    order_free_mean(records.par_iter().map(|r| distinct_n_pair(&r.prediction, n)).collect())
}

/// Lowercased metric tokens of a title with any trailing `(YYYY)` removed.
pub fn normalize_title(title: &str) -> Vec<String> {
    let trimmed = title.trim();
    let without_year = trimmed
        .strip_suffix(')')
        .and_then(|rest| rest.rsplit_once('('))
        .filter(|(_, year)| year.trim().len() == 4 && year.trim().chars().all(|c| c.is_ascii_digit()))
        .map_or(trimmed, |(head, _)| head);
    tokenize_metric(without_year)
}

pub fn item_mentioned(prediction: &str, item: &str) -> bool {
    let title = normalize_title(item);
    !title.is_empty() && contains_subsequence(&tokenize_metric(prediction), &title)
}

/// Fraction of records with items where at least one item is mentioned.
/// Records without items are excluded; absent when none has items.
pub fn rec_recall(records: &[EvalRecord]) -> Option<f64> {
    let scored: Vec<&EvalRecord> = records.iter().filter(|r| r.golden_items.is_some()).collect();
    if scored.is_empty() {
        return None;
    }
    let hits = scored
        .iter()
        .filter(|r| {
            r.golden_items
                .as_deref()
                .unwrap_or_default()
                .iter()
                .any(|item| item_mentioned(&r.prediction, item))
        })
        .count();
    Some(hits as f64 / scored.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_records: usize,
    pub bleu4: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu4_smoothed: Option<f64>,
    pub rouge_l: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kf1: Option<f64>,
    pub dist1: f64,
    pub dist2: f64,
    pub dist4: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rec: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub smoothed_bleu: bool,
}

pub fn evaluate(records: &[EvalRecord], opts: EvalOptions) -> Result<MetricReport> {
    require_records(records)?;
    if let Some(i) = records.iter().position(|r| r.reference.trim().is_empty()) {
        return Err(Error::InvalidInput(format!("reference {} is empty", i + 1)));
    }
    Ok(MetricReport {
        n_records: records.len(),
        bleu4: bleu4(records)?,
        bleu4_smoothed: opts.smoothed_bleu.then(|| bleu4_smoothed(records)).transpose()?,
        rouge_l: rouge_l(records)?,
        f1: unigram_f1(records)?,
        kf1: kf1(records),
        dist1: distinct_n(records, 1),
        dist2: distinct_n(records, 2),
        dist4: distinct_n(records, 4),
        rec: rec_recall(records),
    })
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<(&str, Option<f64>)> = vec![
            ("BLEU-4", Some(self.bleu4)),
            ("BLEU-4 (smoothed)", self.bleu4_smoothed),
            ("ROUGE-L", Some(self.rouge_l)),
            ("F1", Some(self.f1)),
            ("KF1", self.kf1),
            ("Dist-1", Some(self.dist1)),
            ("Dist-2", Some(self.dist2)),
            ("Dist-4", Some(self.dist4)),
            ("Rec", self.rec),
        ];
        writeln!(f, "{:<18} {:>10}", "metric", "value")?;
        writeln!(f, "{:<18} {:>10}", "records", self.n_records)?;
        for (name, value) in rows {
            match value {
                Some(v) => writeln!(f, "{name:<18} {v:>10.4}")?,
                None => writeln!(f, "{name:<18} {:>10}", "-")?,
            }
        }
        Ok(())
    }
}

struct LoadedLine {
    id: Option<String>,
    text: String,
    knowledge: Option<String>,
    items: Option<Vec<String>>,
}

fn json_text(obj: &Value, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str).map(str::to_owned))
}

fn json_knowledge(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Array(triples) => {
            let rendered: Vec<String> = triples
                .iter()
                .filter_map(|t| {
                    let parts: Vec<&str> = t.as_array()?.iter().filter_map(Value::as_str).collect();
                    Some(parts.join(" | "))
                })
                .collect();
            Some(rendered.join(" ; "))
        }
        _ => None,
    }
}

fn load_eval_lines(path: &Path, text_keys: &[&str]) -> Result<Vec<LoadedLine>> {
    let origin = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = content.lines().collect();
    let is_json = !lines.is_empty()
        && lines
            .iter()
            .filter(|l| !l.trim().is_empty())
            .all(|l| l.trim_start().starts_with('{'));
    if !is_json {
        return Ok(lines
            .into_iter()
            .map(|l| LoadedLine {
                id: None,
                text: l.to_owned(),
                knowledge: None,
                items: None,
            })
            .collect());
    }
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(line).map_err(|e| Error::parse(&origin, i + 1, e.to_string()))?;
        let text = json_text(&obj, text_keys)
            .ok_or_else(|| Error::parse(&origin, i + 1, format!("missing one of {text_keys:?}")))?;
        let id = match (obj.get("id"), obj.get("did"), obj.get("turn")) {
            (Some(Value::String(id)), _, _) => Some(id.clone()),
            (Some(Value::Number(id)), _, _) => Some(id.to_string()),
            (_, Some(Value::String(did)), Some(turn)) => Some(format!("{did}#{turn}")),
            _ => None,
        };
        let knowledge = obj.get("knowledge").and_then(json_knowledge).filter(|k| !k.is_empty());
        let items = obj.get("items").and_then(Value::as_array).map(|a| {
            a.iter()
                .filter_map(Value::as_str)
                .map(str::to_owned)
                .collect::<Vec<_>>()
        });
        out.push(LoadedLine {
            id,
            text,
            knowledge,
            items,
        });
    }
    Ok(out)
}

/// Align predictions with references and build records. Both inputs may be
/// plain text (one response per line) or JSON lines; when every JSON line on
/// both sides carries an id (`id`, or `did` + `turn`) alignment is by id,
/// otherwise by position.
pub fn load_eval_records(pred_path: impl AsRef<Path>, ref_path: impl AsRef<Path>) -> Result<Vec<EvalRecord>> {
    let preds = load_eval_lines(pred_path.as_ref(), &["prediction", "text", "response", "target"])?;
    let refs = load_eval_lines(ref_path.as_ref(), &["reference", "target", "text", "response"])?;
    let by_id = !preds.is_empty() && preds.iter().all(|p| p.id.is_some()) && refs.iter().all(|r| r.id.is_some());

    let pairs: Vec<(LoadedLine, LoadedLine)> = if by_id {
        let mut pred_map: HashMap<String, LoadedLine> = HashMap::new();
        for p in preds {
            let id = p.id.clone().unwrap_or_default();
            if pred_map.insert(id.clone(), p).is_some() {
                return Err(Error::InvalidInput(format!("duplicate prediction id {id}")));
            }
        }
        let mut missing = Vec::new();
        let mut pairs = Vec::new();
        for r in refs {
            let id = r.id.clone().unwrap_or_default();
            match pred_map.remove(&id) {
                Some(p) => pairs.push((p, r)),
                None => missing.push(format!("prediction:{id}")),
            }
        }
        let mut extra: Vec<String> = pred_map.into_keys().map(|k| format!("reference:{k}")).collect();
        extra.sort();
        missing.extend(extra);
        if !missing.is_empty() {
            return Err(Error::Misaligned { missing });
        }
        pairs
    } else {
        if preds.len() != refs.len() {
            return Err(Error::InvalidInput(format!(
                "{} predictions but {} references",
                preds.len(),
                refs.len()
            )));
        }
        preds.into_iter().zip(refs).collect()
    };

    Ok(pairs
        .into_iter()
        .map(|(p, r)| EvalRecord {
            prediction: p.text,
            reference: r.text,
            golden_knowledge_text: r.knowledge,
            golden_items: r.items,
        })
        .collect())
}

pub fn evaluate_file(pred_path: impl AsRef<Path>, ref_path: impl AsRef<Path>) -> Result<MetricReport> {
    evaluate_file_with(pred_path, ref_path, EvalOptions::default())
}

pub fn evaluate_file_with(
    pred_path: impl AsRef<Path>,
    ref_path: impl AsRef<Path>,
    opts: EvalOptions,
) -> Result<MetricReport> {
    evaluate(&load_eval_records(pred_path, ref_path)?, opts)
}
