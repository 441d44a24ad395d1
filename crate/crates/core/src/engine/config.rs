use serde::{Deserialize, Serialize};

use crate::vision::RecognitionParams;

/// Every numeric knob of the pipeline. Defaults reproduce the published
/// setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub segmentation_trigger_px: u32,
    pub ncc_accept_threshold: f64,
    pub prefilter_k: usize,
    pub retrieval_k: usize,
    pub chunk_limit_tokens: usize,
    pub prompt_token_limit: usize,
    pub reserved_output_tokens: usize,
    pub answer_word_limit: usize,
    pub temperature: f64,
    pub software_profile: String,
    /// Prefix used in the opening instruction, e.g. "Autodesk Fusion 360".
    pub software_vendor: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segmentation_trigger_px: 100,
            ncc_accept_threshold: 0.5,
            prefilter_k: 5,
            retrieval_k: 50,
            chunk_limit_tokens: 1600,
            prompt_token_limit: 8192,
            reserved_output_tokens: 256,
            answer_word_limit: 50,
            temperature: 0.0,
            software_profile: "Fusion 360".to_string(),
            software_vendor: Some("Autodesk".to_string()),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("segmentation_trigger_px", self.segmentation_trigger_px as usize),
            ("prefilter_k", self.prefilter_k),
            ("retrieval_k", self.retrieval_k),
            ("chunk_limit_tokens", self.chunk_limit_tokens),
            ("prompt_token_limit", self.prompt_token_limit),
            ("answer_word_limit", self.answer_word_limit),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        if self.reserved_output_tokens >= self.prompt_token_limit {
            return Err("reserved_output_tokens must be below prompt_token_limit".into());
        }
        if !(0.0..1.0).contains(&self.ncc_accept_threshold) {
            return Err("ncc_accept_threshold must be in [0, 1)".into());
        }
        if self.software_profile.trim().is_empty() {
            return Err("software_profile must be set".into());
        }
        Ok(())
    }

    pub fn recognition(&self) -> RecognitionParams {
        RecognitionParams {
            segmentation_trigger_px: self.segmentation_trigger_px,
            accept_threshold: self.ncc_accept_threshold,
            prefilter_k: self.prefilter_k,
        }
    }

    /// Product name as written in the opening instruction.
    pub fn display_name(&self) -> String {
        match self.software_vendor.as_deref().map(str::trim).filter(|v| !v.is_empty()) {
            Some(vendor) => format!("{vendor} {}", self.software_profile),
            None => self.software_profile.clone(),
        }
    }
}
