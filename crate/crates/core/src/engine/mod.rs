//! Answer orchestration: describe anchors, retrieve articles, select video
//! context, assemble the prompt for the requested condition and call the
//! chat model.

pub mod config;
pub mod prompt;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{prompt_hash, ClientSet};
use crate::icon_db::IconManifest;
use crate::retrieval::{compose_query, query, select_within_budget_by, CorpusIndex, TokenCounter};
use crate::video_context::{context_for_anchors, select_context, ContextWindow, Sentence, Transcript};
use crate::vision::{describe_anchor, AnchorDescription, VisualAnchor};

pub use config::PipelineConfig;
pub use prompt::{build_prompt, AnchorLine, PartKind, PromptBundle, PromptInputs, PromptPart, VideoContextText};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    QuestionOnly,
    QuestionVideo,
    FullPipeline,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::QuestionOnly, Condition::QuestionVideo, Condition::FullPipeline];

    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::QuestionOnly => "question_only",
            Condition::QuestionVideo => "question_video",
            Condition::FullPipeline => "full_pipeline",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "question_only" | "question" => Ok(Condition::QuestionOnly),
            "question_video" | "video" => Ok(Condition::QuestionVideo),
            "full_pipeline" | "full" => Ok(Condition::FullPipeline),
            other => Err(format!("unknown condition {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Question {
    pub id: String,
    pub video_id: String,
    pub text: String,
    pub anchors: Vec<VisualAnchor>,
    /// Video time the question was asked at; used for context when there
    /// are no anchors.
    pub asked_at_s: Option<f64>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("contract violation: {0}")]
    Contract(&'static str),
    #[error("invalid question: {0}")]
    InvalidQuestion(String),
    #[error("{0} is not loaded")]
    MissingDependency(&'static str),
    #[error("chat model failed: {message}")]
    Upstream { message: String, trace: Box<Trace> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDescription {
    pub anchor_id: String,
    pub label: String,
    pub description: AnchorDescription,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedChunk {
    pub id: String,
    pub source_uri: String,
    pub cosine: f64,
    pub token_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenAccounting {
    pub prompt_token_limit: usize,
    pub reserved_output_tokens: usize,
    /// Tokens of the prompt with no article sections.
    pub non_article_tokens: usize,
    /// Tokens available for article sections, if selection ran.
    pub article_budget: Option<usize>,
    pub article_tokens: usize,
    pub prompt_tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub anchor_descriptions: Vec<LabeledDescription>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    /// Number of chunks returned by retrieval before budget selection.
    pub retrieved: usize,
    pub selected_chunks: Vec<SelectedChunk>,
    pub context_sentences: Vec<Sentence>,
    pub tokens: TokenAccounting,
    pub prompt_sha256: String,
    pub warnings: Vec<String>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub question_id: String,
    pub condition: Condition,
    pub text: String,
    pub trace: Trace,
}

/// Everything `answer` may need; which parts are required depends on the
/// condition.
#[derive(Clone, Copy)]
pub struct Deps<'a> {
    pub manifest: Option<&'a IconManifest>,
    pub index: Option<&'a CorpusIndex>,
    pub transcript: Option<&'a Transcript>,
    pub clients: &'a ClientSet,
    pub counter: &'a dyn TokenCounter,
    pub config: &'a PipelineConfig,
    /// Descriptions computed earlier, keyed by anchor id.
    pub cached_descriptions: Option<&'a HashMap<String, AnchorDescription>>,
}

/// Natural label order, so that `#Anchor2` sorts before `#Anchor10`.
pub fn sorted_anchors(anchors: &[VisualAnchor]) -> Vec<&VisualAnchor> {
    let mut v: Vec<&VisualAnchor> = anchors.iter().collect();
    v.sort_by(|a, b| crate::label_order(&a.label, &b.label));
    v
}

fn hashtags(text: &str) -> Vec<&str> {
    text.split(|c: char| c.is_whitespace() || matches!(c, ',' | '?' | '!' | ';' | ':' | '(' | ')' | '"'))
        .filter(|t| t.starts_with('#') && t.len() > 1)
        .map(|t| t.trim_end_matches('.'))
        .collect()
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn answer(question: &Question, condition: Condition, deps: &Deps<'_>) -> Result<Answer, EngineError> {
    let started = Instant::now();
    let config = deps.config;
    let mut trace = Trace {
        tokens: TokenAccounting {
            prompt_token_limit: config.prompt_token_limit,
            reserved_output_tokens: config.reserved_output_tokens,
            ..Default::default()
        },
        ..Default::default()
    };

    if question.text.trim().is_empty() {
        return Err(EngineError::InvalidQuestion("question text is empty".into()));
    }
    let mut labels = HashSet::new();
    for a in &question.anchors {
        if !labels.insert(a.label.as_str()) {
            return Err(EngineError::InvalidQuestion(format!("duplicate anchor label {}", a.label)));
        }
    }

    let anchors: Vec<&VisualAnchor> = match condition {
        Condition::QuestionOnly => {
            if !question.anchors.is_empty() {
                trace.warnings.push(format!(
                    "question_only ignores {} anchor(s)",
                    question.anchors.len()
                ));
            }
            Vec::new()
        }
        Condition::FullPipeline if question.anchors.is_empty() => {
            return Err(EngineError::Contract("full_pipeline requires at least one anchor"));
        }
        _ => sorted_anchors(&question.anchors),
    };
    if condition != Condition::QuestionOnly {
        for tag in hashtags(&question.text) {
            if !labels.contains(tag) {
                trace.warnings.push(format!("{tag} in question text matches no anchor"));
            }
        }
    }

    let context = match condition {
        Condition::QuestionOnly => None,
        _ => {
            let transcript = deps.transcript.ok_or(EngineError::MissingDependency("transcript"))?;
            let window = video_window(transcript, question, &anchors, &mut trace);
            if window.text.is_empty() {
                trace.warnings.push("no transcript sentences for this question; instructions left empty".into());
            }
            if window.before_first {
                trace.warnings.push("timestamp precedes the first transcript sentence; using the first sentence".into());
            }
            trace.context_sentences = window.sentences.clone();
            Some((transcript.title.clone(), window))
        }
    };

    if condition == Condition::FullPipeline {
        for anchor in &anchors {
            let cached = deps.cached_descriptions.and_then(|m| m.get(&anchor.id));
            let description = match cached {
                Some(d) => d.clone(),
                None => describe_anchor(
                    anchor,
                    deps.manifest,
                    deps.clients.caption.as_ref(),
                    deps.clients.ocr.as_ref(),
                    &config.software_profile,
                    &config.recognition(),
                ),
            };
            trace.warnings.extend(description.warnings.iter().cloned());
            trace.anchor_descriptions.push(LabeledDescription {
                anchor_id: anchor.id.clone(),
                label: anchor.label.clone(),
                description,
            });
        }
    }

    let bundle = match condition {
        Condition::FullPipeline => {
            let index = deps.index.ok_or(EngineError::MissingDependency("corpus index"))?;
            let (title, window) = context.as_ref().expect("context computed for full_pipeline");
            full_pipeline_prompt(question, index, title, window, deps, &mut trace)?
        }
        _ => {
            let inputs = PromptInputs {
                question_text: &question.text,
                context: context
                    .as_ref()
                    .map(|(title, w)| VideoContextText { title, transcript: &w.text }),
                anchors: None,
                sections: None,
            };
            let bundle = build_prompt(condition, &inputs, config, deps.counter)?;
            trace.tokens.non_article_tokens = bundle.token_count;
            bundle
        }
    };
    trace.tokens.prompt_tokens = bundle.token_count;
    trace.prompt_sha256 = prompt_hash(&bundle.text);

    let completion = deps
        .clients
        .chat
        .complete(&bundle.text, config.temperature, config.reserved_output_tokens);
    trace.wall_time_ms = started.elapsed().as_millis() as u64;
    let text = match completion {
        Ok(text) => text,
        Err(e) => {
            return Err(EngineError::Upstream { message: e.to_string(), trace: Box::new(trace) });
        }
    };
    let words = word_count(&text);
    if words > config.answer_word_limit {
        trace.warnings.push(format!(
            "answer has {words} words, over the {} word limit",
            config.answer_word_limit
        ));
    }
    Ok(Answer { question_id: question.id.clone(), condition, text, trace })
}

fn video_window(
    transcript: &Transcript,
    question: &Question,
    anchors: &[&VisualAnchor],
    trace: &mut Trace,
) -> ContextWindow {
    if !anchors.is_empty() {
        let owned: Vec<VisualAnchor> = anchors.iter().map(|a| (*a).clone()).collect();
        return context_for_anchors(transcript, &owned);
    }
    match question.asked_at_s {
        Some(t) => select_context(transcript, t),
        None => {
            trace.warnings.push("no anchors and no question time; video context is empty".into());
            ContextWindow::default()
        }
    }
}

fn full_pipeline_prompt(
    question: &Question,
    index: &CorpusIndex,
    title: &str,
    window: &ContextWindow,
    deps: &Deps<'_>,
    trace: &mut Trace,
) -> Result<PromptBundle, EngineError> {
    let config = deps.config;
    let descriptions: Vec<String> =
        trace.anchor_descriptions.iter().map(|d| d.description.composed.clone()).collect();
    let query_text = compose_query(&question.text, descriptions.iter().map(String::as_str));

    let ranked = if index.is_empty() {
        trace.warnings.push("corpus index is empty; no articles retrieved".into());
        Vec::new()
    } else {
        match query(index, &query_text, deps.clients.embed.as_ref(), config.retrieval_k) {
            Ok(r) => r,
            Err(e) => {
                trace.warnings.push(format!("retrieval failed: {e}"));
                Vec::new()
            }
        }
    };
    trace.query_text = Some(query_text);
    trace.retrieved = ranked.len();

    let anchor_lines: Vec<AnchorLine<'_>> = trace
        .anchor_descriptions
        .iter()
        .map(|d| AnchorLine { label: &d.label, description: &d.description.composed })
        .collect();
    let context = VideoContextText { title, transcript: &window.text };

    let skeleton = build_prompt(
        Condition::FullPipeline,
        &PromptInputs {
            question_text: &question.text,
            context: Some(context.clone()),
            anchors: Some(anchor_lines.clone()),
            sections: Some(Vec::new()),
        },
        config,
        deps.counter,
    )?;
    let budget = config
        .prompt_token_limit
        .saturating_sub(config.reserved_output_tokens)
        .saturating_sub(skeleton.token_count);
    let selected = select_within_budget_by(&ranked, budget, |c| {
        deps.counter.count(&prompt::section_line(config, &c.chunk.text))
    });
    let article_tokens: usize =
        selected.iter().map(|c| deps.counter.count(&prompt::section_line(config, &c.chunk.text))).sum();

    let bundle = build_prompt(
        Condition::FullPipeline,
        &PromptInputs {
            question_text: &question.text,
            context: Some(context),
            anchors: Some(anchor_lines),
            sections: Some(selected.iter().map(|c| c.chunk.text.as_str()).collect()),
        },
        config,
        deps.counter,
    )?;

    trace.selected_chunks = selected
        .iter()
        .map(|c| SelectedChunk {
            id: c.chunk.id.clone(),
            source_uri: c.chunk.source_uri.clone(),
            cosine: c.cosine,
            token_count: c.chunk.token_count,
        })
        .collect();
    trace.tokens.non_article_tokens = skeleton.token_count;
    trace.tokens.article_budget = Some(budget);
    trace.tokens.article_tokens = article_tokens;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_parsing() {
        assert_eq!("full".parse::<Condition>().unwrap(), Condition::FullPipeline);
        assert_eq!("question-video".parse::<Condition>().unwrap(), Condition::QuestionVideo);
        assert_eq!("QUESTION_ONLY".parse::<Condition>().unwrap(), Condition::QuestionOnly);
        assert!("both".parse::<Condition>().is_err());
    }

    #[test]
    fn hashtag_extraction() {
        assert_eq!(hashtags("What is #palette, and #Anchor1?"), ["#palette", "#Anchor1"]);
        assert!(hashtags("no tags # here").is_empty());
    }
}
