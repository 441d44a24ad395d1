//! Prompt templates for the three answer conditions.

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::{Condition, EngineError};
use crate::retrieval::TokenCounter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    Instruction,
    Articles,
    Tutorial,
    Question,
    Anchors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPart {
    pub kind: PartKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub text: String,
    pub token_count: usize,
    pub parts: Vec<PromptPart>,
}

/// Title and transcript excerpt for the "Tutorial:" line.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoContextText<'a> {
    pub title: &'a str,
    pub transcript: &'a str,
}

/// One "{label}: {description}" line of the visual anchor block.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLine<'a> {
    pub label: &'a str,
    pub description: &'a str,
}

/// Inputs for [`build_prompt`]; which ones are required depends on the
/// condition.
#[derive(Debug, Clone, Default)]
pub struct PromptInputs<'a> {
    pub question_text: &'a str,
    pub context: Option<VideoContextText<'a>>,
    /// Anchor lines in label order.
    pub anchors: Option<Vec<AnchorLine<'a>>>,
    /// Article sections in retrieval rank order.
    pub sections: Option<Vec<&'a str>>,
}

fn intro(config: &PipelineConfig) -> String {
    format!(
        "You need to answer questions about {} that people asked while watching a tutorial video. Please answer in {} words or less.",
        config.display_name(),
        config.answer_word_limit
    )
}

pub fn section_line(config: &PipelineConfig, section: &str) -> String {
    format!("{} article section: {section}\n", config.software_profile)
}

fn tutorial_line(ctx: &VideoContextText<'_>) -> String {
    format!("Tutorial: Title: {}. Instructions: {}\n", ctx.title, ctx.transcript)
}

pub fn build_prompt(
    condition: Condition,
    inputs: &PromptInputs<'_>,
    config: &PipelineConfig,
    counter: &dyn TokenCounter,
) -> Result<PromptBundle, EngineError> {
    let part = |kind, text: String| PromptPart { kind, text };
    let q = inputs.question_text;
    let parts = match condition {
        Condition::QuestionOnly => vec![
            part(PartKind::Instruction, format!("{} \n\n", intro(config))),
            part(PartKind::Question, format!("Question: {q}\n\n")),
        ],
        Condition::QuestionVideo => {
            let ctx = inputs.context.as_ref().ok_or(EngineError::Contract("question_video prompt needs video context"))?;
            vec![
                part(PartKind::Instruction, format!("{} \n\n", intro(config))),
                part(PartKind::Tutorial, tutorial_line(ctx)),
                part(PartKind::Question, format!("Question: {q}\n\n")),
            ]
        }
        Condition::FullPipeline => {
            let ctx = inputs.context.as_ref().ok_or(EngineError::Contract("full_pipeline prompt needs video context"))?;
            let anchors = inputs.anchors.as_ref().ok_or(EngineError::Contract("full_pipeline prompt needs anchor descriptions"))?;
            let sections = inputs.sections.as_ref().ok_or(EngineError::Contract("full_pipeline prompt needs article sections"))?;

            let mut articles = format!(
                "Use the below articles on the {} software to answer the subsequent question. If the answer cannot be found in the articles, write \"I could not find an answer.\"\n",
                config.software_profile
            );
            for s in sections {
                articles.push_str(&section_line(config, s));
            }
            articles.push('\n');

            let mut anchor_block = String::from("Visual Anchor: \n");
            for a in anchors {
                anchor_block.push_str(&format!("{}: {}\n", a.label, a.description));
            }
            anchor_block.push('\n');

            vec![
                part(
                    PartKind::Instruction,
                    format!(
                        "{} Each question is accompanied by relevant visual anchors, which are specific visual elements of interest in the video.\n\n\n",
                        intro(config)
                    ),
                ),
                part(PartKind::Articles, articles),
                part(PartKind::Tutorial, tutorial_line(ctx)),
                part(PartKind::Question, format!("Question: {q}\n")),
                part(PartKind::Anchors, anchor_block),
            ]
        }
    };
    let text: String = parts.iter().map(|p| p.text.as_str()).collect();
    Ok(PromptBundle { token_count: counter.count(&text), text, parts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::WhitespaceTokenCounter;

    fn full_inputs<'a>(sections: Vec<&'a str>) -> PromptInputs<'a> {
        PromptInputs {
            question_text: "What is #Anchor1?",
            context: Some(VideoContextText { title: "Box", transcript: "Draw a box." }),
            anchors: Some(vec![AnchorLine { label: "#Anchor1", description: "an icon." }]),
            sections: Some(sections),
        }
    }

    #[test]
    fn parts_concatenate_to_text() {
        let cfg = PipelineConfig::default();
        let b = build_prompt(Condition::FullPipeline, &full_inputs(vec!["A", "B"]), &cfg, &WhitespaceTokenCounter).unwrap();
        let joined: String = b.parts.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(joined, b.text);
        let kinds: Vec<_> = b.parts.iter().map(|p| p.kind).collect();
        let mut sorted = kinds.clone();
        sorted.sort();
        assert_eq!(kinds, sorted);
    }

    #[test]
    fn no_sections_keeps_fallback_instruction() {
        let cfg = PipelineConfig::default();
        let b = build_prompt(Condition::FullPipeline, &full_inputs(vec![]), &cfg, &WhitespaceTokenCounter).unwrap();
        assert!(b.text.contains("write \"I could not find an answer.\""));
        assert!(!b.text.contains("article section:"));
    }

    #[test]
    fn missing_context_is_contract_error() {
        let cfg = PipelineConfig::default();
        let inputs = PromptInputs { question_text: "q", ..Default::default() };
        assert!(matches!(
            build_prompt(Condition::QuestionVideo, &inputs, &cfg, &WhitespaceTokenCounter),
            Err(EngineError::Contract(_))
        ));
        let mut full = full_inputs(vec![]);
        full.anchors = None;
        assert!(matches!(
            build_prompt(Condition::FullPipeline, &full, &cfg, &WhitespaceTokenCounter),
            Err(EngineError::Contract(_))
        ));
    }

    #[test]
    fn word_limit_is_configurable() {
        let cfg = PipelineConfig { answer_word_limit: 30, ..Default::default() };
        let inputs = PromptInputs { question_text: "q", ..Default::default() };
        let b = build_prompt(Condition::QuestionOnly, &inputs, &cfg, &WhitespaceTokenCounter).unwrap();
        assert!(b.text.contains("Please answer in 30 words or less. \n"));
    }
}
