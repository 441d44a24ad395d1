//! Runs a question set under all three answer conditions and writes a
//! comparison report with a blinded, per-question presentation order.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clients::ClientSet;
use crate::engine::{answer, Answer, Condition, Deps, EngineError, PipelineConfig, Question};
use crate::icon_db::IconManifest;
use crate::retrieval::{CorpusIndex, TokenCounter};
use crate::video_context::{load_transcript, Transcript, TranscriptError};
use crate::vision::VisualAnchor;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("question {id}: {message}")]
    Input { id: String, message: String },
    #[error("transcript {path}: {source}")]
    Transcript { path: String, source: TranscriptError },
    #[error("duplicate question id {0}")]
    DuplicateId(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub image_path: String,
    pub timestamp_s: f64,
    pub label: String,
}

/// One line of a question-set file. Paths are relative to that file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub id: String,
    pub video_ref: String,
    pub text: String,
    #[serde(default)]
    pub anchors: Vec<AnchorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asked_at_s: Option<f64>,
}

/// A question with its anchors decoded and its transcript loaded.
#[derive(Debug, Clone)]
pub struct EvalQuestion {
    pub question: Question,
    pub transcript: Arc<Transcript>,
}

pub fn parse_question_set(path: &Path) -> Result<Vec<QuestionSpec>, EvalError> {
    let raw = fs::read_to_string(path)?;
    let mut specs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let spec: QuestionSpec = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(spec.id.clone()) {
            return Err(EvalError::DuplicateId(spec.id));
        }
        specs.push(spec);
    }
    Ok(specs)
}

/// Parses the set and loads every transcript and anchor image it names.
/// Transcripts shared by several questions are read once.
pub fn load_question_set(path: &Path) -> Result<Vec<EvalQuestion>, EvalError> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let specs = parse_question_set(path)?;
    let mut transcripts: HashMap<PathBuf, Arc<Transcript>> = HashMap::new();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let tpath = base.join(&spec.video_ref);
        let transcript = match transcripts.get(&tpath) {
            Some(t) => t.clone(),
            None => {
                let t = load_transcript(&tpath)
                    .map_err(|source| EvalError::Transcript { path: tpath.display().to_string(), source })?;
                let t = Arc::new(t);
                transcripts.insert(tpath.clone(), t.clone());
                t
            }
        };
        let mut anchors = Vec::with_capacity(spec.anchors.len());
        for a in &spec.anchors {
            let input = |message: String| EvalError::Input { id: spec.id.clone(), message };
            let img = image::open(base.join(&a.image_path)).map_err(|e| input(format!("{}: {e}", a.image_path)))?;
            let anchor = VisualAnchor::from_crop(
                format!("{}/{}", spec.id, a.label),
                transcript.video_id.clone(),
                a.label.clone(),
                a.timestamp_s,
                img,
            )
            .map_err(|e| input(e.to_string()))?;
            anchors.push(anchor);
        }
        out.push(EvalQuestion {
            question: Question {
                id: spec.id,
                video_id: transcript.video_id.clone(),
                text: spec.text,
                anchors,
                asked_at_s: spec.asked_at_s,
            },
            transcript,
        });
    }
    Ok(out)
}

/// The order in which a question's three answers are shown to raters. It
/// depends only on the seed and the question id.
pub fn presentation_order(seed: u64, question_id: &str) -> [Condition; 3] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(question_id.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let mut order = Condition::ALL;
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub seed: u64,
    pub parallelism: usize,
    /// Keep wall-clock times in the report. Off by default so that reports
    /// from identical inputs are byte-identical.
    pub record_timing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { seed: 0, parallelism: DEFAULT_PARALLELISM, record_timing: false }
    }
}

/// Shared, read-only inputs for every question.
#[derive(Clone, Copy)]
pub struct EvalEnv<'a> {
    pub manifest: Option<&'a IconManifest>,
    pub index: Option<&'a CorpusIndex>,
    pub clients: &'a ClientSet,
    pub counter: &'a dyn TokenCounter,
    pub config: &'a PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: Condition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<Answer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub question_id: String,
    pub video_id: String,
    pub question_text: String,
    pub seed: u64,
    pub presentation_order: [Condition; 3],
    /// One result per condition, in the fixed condition order.
    pub results: Vec<ConditionResult>,
    pub failed: bool,
}

impl EvalItem {
    pub fn result(&self, condition: Condition) -> Option<&ConditionResult> {
        self.results.iter().find(|r| r.condition == condition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub answered: usize,
    pub failed: usize,
    pub mean_prompt_tokens: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_latency_ms: Option<f64>,
    pub over_word_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub question_id: String,
    pub condition: Condition,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub questions: usize,
    pub answers: usize,
    pub by_condition: BTreeMap<Condition, ConditionSummary>,
    pub failures: Vec<FailureEntry>,
    /// SHA-256 of the serialized items.
    pub determinism_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub schema_version: u32,
    pub seed: u64,
    pub parallelism: usize,
    pub fixture_mode: bool,
    pub embed_backend: String,
    pub index_chunks: Option<usize>,
    pub manifest_records: Option<usize>,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: EvalMetadata,
    pub aggregate: Aggregate,
    pub items: Vec<EvalItem>,
}

fn run_item(q: &EvalQuestion, env: &EvalEnv<'_>, options: &EvalOptions) -> EvalItem {
    let deps = Deps {
        manifest: env.manifest,
        index: env.index,
        transcript: Some(&q.transcript),
        clients: env.clients,
        counter: env.counter,
        config: env.config,
        cached_descriptions: None,
    };
    let results: Vec<ConditionResult> = Condition::ALL
        .iter()
        .map(|&condition| match answer(&q.question, condition, &deps) {
            Ok(mut a) => {
                if !options.record_timing {
                    a.trace.wall_time_ms = 0;
                }
                ConditionResult { condition, answer: Some(a), error: None }
            }
            Err(e) => {
                let message = match &e {
                    EngineError::Upstream { message, .. } => format!("upstream model failure: {message}"),
                    other => other.to_string(),
                };
                ConditionResult { condition, answer: None, error: Some(message) }
            }
        })
        .collect();
    let failed = results.iter().any(|r| r.error.is_some());
    EvalItem {
        question_id: q.question.id.clone(),
        video_id: q.question.video_id.clone(),
        question_text: q.question.text.clone(),
        seed: options.seed,
        presentation_order: presentation_order(options.seed, &q.question.id),
        results,
        failed,
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(items: &[EvalItem], config: &PipelineConfig, record_timing: bool) -> Result<Aggregate, EvalError> {
    let mut by_condition = BTreeMap::new();
    for condition in Condition::ALL {
        let answered: Vec<&Answer> =
            items.iter().filter_map(|i| i.result(condition)).filter_map(|r| r.answer.as_ref()).collect();
        let failed = items.iter().filter_map(|i| i.result(condition)).filter(|r| r.error.is_some()).count();
        by_condition.insert(
            condition,
            ConditionSummary {
                answered: answered.len(),
                failed,
                mean_prompt_tokens: mean(answered.iter().map(|a| a.trace.tokens.prompt_tokens as f64)).unwrap_or(0.0),
                mean_latency_ms: if record_timing {
                    mean(answered.iter().map(|a| a.trace.wall_time_ms as f64))
                } else {
                    None
                },
                over_word_limit: answered
                    .iter()
                    .filter(|a| a.text.split_whitespace().count() > config.answer_word_limit)
                    .count(),
            },
        );
    }
    let failures = items
        .iter()
        .flat_map(|i| {
            i.results.iter().filter_map(move |r| {
                r.error.as_ref().map(|e| FailureEntry {
                    question_id: i.question_id.clone(),
                    condition: r.condition,
                    error: e.clone(),
                })
            })
        })
        .collect();
    let answers = items.iter().flat_map(|i| &i.results).filter(|r| r.answer.is_some()).count();
    Ok(Aggregate {
        questions: items.len(),
        answers,
        by_condition,
        failures,
        determinism_hash: hex::encode(Sha256::digest(serde_json::to_vec(items)?)),
    })
}

/// Answers every question under every condition. Items run on a pool of
/// `options.parallelism` threads; the report keeps the input order.
pub fn run_eval(questions: &[EvalQuestion], env: &EvalEnv<'_>, options: &EvalOptions) -> Result<EvalReport, EvalError> {
    use rayon::prelude::*;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let items: Vec<EvalItem> = pool.install(|| questions.par_iter().map(|q| run_item(q, env, options)).collect());
    for item in items.iter().filter(|i| i.failed) {
        tracing::warn!(question = %item.question_id, "evaluation item failed");
    }
    Ok(EvalReport {
        metadata: EvalMetadata {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: options.seed,
            parallelism: options.parallelism,
            fixture_mode: env.clients.fixture_mode,
            embed_backend: env.clients.embed.backend_id(),
            index_chunks: env.index.map(CorpusIndex::len),
            manifest_records: env.manifest.map(IconManifest::len),
            config: env.config.clone(),
        },
        aggregate: aggregate(&items, env.config, options.record_timing)?,
        items,
    })
}

pub fn run_eval_file(path: &Path, env: &EvalEnv<'_>, options: &EvalOptions) -> Result<EvalReport, EvalError> {
    let questions = load_question_set(path)?;
    run_eval(&questions, env, options)
}

pub fn report_json(report: &EvalReport) -> Result<String, EvalError> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let mut f = fs::File::create(path)?;
    f.write_all(report_json(report)?.as_bytes())?;
    Ok(())
}

fn position_letter(i: usize) -> &'static str {
    ["A", "B", "C"][i]
}

/// One row per question and condition.
pub fn write_csv(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "question_id",
        "video_id",
        "condition",
        "position",
        "status",
        "prompt_tokens",
        "words",
        "warnings",
        "answer",
    ])?;
    for item in &report.items {
        for r in &item.results {
            let pos = item.presentation_order.iter().position(|c| *c == r.condition).unwrap_or(0);
            let (status, tokens, words, warnings, text) = match (&r.answer, &r.error) {
                (Some(a), _) => (
                    "ok",
                    a.trace.tokens.prompt_tokens.to_string(),
                    a.text.split_whitespace().count().to_string(),
                    a.trace.warnings.len().to_string(),
                    a.text.clone(),
                ),
                (None, e) => ("failed", String::new(), String::new(), String::new(), e.clone().unwrap_or_default()),
            };
            w.write_record([
                item.question_id.as_str(),
                item.video_id.as_str(),
                r.condition.as_str(),
                position_letter(pos),
                status,
                &tokens,
                &words,
                &warnings,
                &text,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Blank rating sheet: the three answers of each question in presentation
/// order, labelled A/B/C without their condition, with empty columns for
/// correctness, helpfulness and the favorite pick. The report's
/// `presentation_order` is the key.
pub fn write_annotation_sheet(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["question_id", "question", "position", "answer", "correctness_1_5", "helpfulness_1_5", "favorite"])?;
    for item in &report.items {
        for (pos, condition) in item.presentation_order.iter().enumerate() {
            let text = item
                .result(*condition)
                .and_then(|r| r.answer.as_ref())
                .map(|a| a.text.as_str())
                .unwrap_or("(no answer)");
            w.write_record([
                item.question_id.as_str(),
                item.question_text.as_str(),
                position_letter(pos),
                text,
                "",
                "",
                "",
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_a_permutation_and_stable() {
        for id in ["q1", "q2", "long question id"] {
            let a = presentation_order(7, id);
            assert_eq!(a, presentation_order(7, id));
            let mut sorted = a;
            sorted.sort();
            assert_eq!(sorted, Condition::ALL);
        }
    }

    #[test]
    fn seed_changes_some_orders() {
        let ids: Vec<String> = (0..50).map(|i| format!("q{i}")).collect();
        let a: Vec<_> = ids.iter().map(|id| presentation_order(1, id)).collect();
        let b: Vec<_> = ids.iter().map(|id| presentation_order(2, id)).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn orders_are_uniform() {
        // Chi-square goodness of fit over the 6 orderings, 5 degrees of
        // freedom; 15.086 is the 0.99 quantile.
        let n = 1200;
        let mut counts: HashMap<[Condition; 3], usize> = HashMap::new();
        for i in 0..n {
            *counts.entry(presentation_order(2024, &format!("question-{i}"))).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = n as f64 / 6.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 15.086, "chi2 = {chi2}");
    }

    #[test]
    fn question_set_parse_errors_carry_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.jsonl");
        fs::write(&p, "{\"id\":\"a\",\"video_ref\":\"v.json\",\"text\":\"x\"}\n\n{not json}\n").unwrap();
        match parse_question_set(&p) {
            Err(EvalError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "{\"id\":\"a\",\"video_ref\":\"v.json\",\"text\":\"x\"}\n{\"id\":\"a\",\"video_ref\":\"v.json\",\"text\":\"y\"}\n").unwrap();
        assert!(matches!(parse_question_set(&p), Err(EvalError::DuplicateId(_))));
    }
}
