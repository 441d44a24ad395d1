//! Model clients: captioning, OCR, embeddings and chat completion.
//!
//! Every client has a fixture backend (deterministic, offline) and an HTTP
//! backend. Fixture mode is selected by `AQUA_FIXTURE_DIR` and takes
//! precedence over configured endpoints.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use image::DynamicImage;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::content_hash;
use crate::retrieval::embed::HashedBagOfWords;

pub const ENV_FIXTURE_DIR: &str = "AQUA_FIXTURE_DIR";
pub const ENV_CAPTION_ENDPOINT: &str = "AQUA_CAPTION_ENDPOINT";
pub const ENV_OCR_ENDPOINT: &str = "AQUA_OCR_ENDPOINT";
pub const ENV_EMBED_ENDPOINT: &str = "AQUA_EMBED_ENDPOINT";
pub const ENV_LLM_ENDPOINT: &str = "AQUA_LLM_ENDPOINT";
pub const ENV_LLM_API_KEY: &str = "AQUA_LLM_API_KEY";

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("http error: {0}")]
    Http(String),
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("no {0} backend configured")]
    NotConfigured(&'static str),
}

pub trait CaptionClient: Send + Sync {
    fn caption(&self, image: &DynamicImage) -> Result<String, ClientError>;
}

pub trait OcrClient: Send + Sync {
    /// Recognized lines in reading order, newline separated.
    fn recognize_text(&self, image: &DynamicImage) -> Result<String, ClientError>;
}

pub trait EmbeddingClient: Send + Sync {
    fn backend_id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError>;
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str, temperature: f64, max_tokens: usize) -> Result<String, ClientError>;
}

/// Canned text keyed by image content hash. Unknown images yield an empty
/// string, which the description composer treats as "nothing recognized".
#[derive(Debug, Clone, Default)]
pub struct FixtureImageText {
    entries: BTreeMap<String, String>,
}

impl FixtureImageText {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self { entries }
    }

    pub fn from_file(path: &Path) -> Result<Self, ClientError> {
        Ok(Self::new(read_fixture_map(path)?))
    }

    fn lookup(&self, image: &DynamicImage) -> String {
        self.entries.get(&content_hash(image)).cloned().unwrap_or_default()
    }
}

impl CaptionClient for FixtureImageText {
    fn caption(&self, image: &DynamicImage) -> Result<String, ClientError> {
        Ok(self.lookup(image))
    }
}

impl OcrClient for FixtureImageText {
    fn recognize_text(&self, image: &DynamicImage) -> Result<String, ClientError> {
        Ok(self.lookup(image))
    }
}

/// Canned completions keyed by the SHA-256 of the prompt; the key `"*"` is
/// the fallback. Without a fallback, unknown prompts get a stable
/// placeholder naming the prompt hash.
#[derive(Debug, Clone, Default)]
pub struct FixtureChat {
    entries: BTreeMap<String, String>,
}

impl FixtureChat {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self { entries }
    }

    pub fn from_file(path: &Path) -> Result<Self, ClientError> {
        Ok(Self::new(read_fixture_map(path)?))
    }

    pub fn with_completion(mut self, prompt: &str, completion: impl Into<String>) -> Self {
        self.entries.insert(prompt_hash(prompt), completion.into());
        self
    }

    pub fn with_default(mut self, completion: impl Into<String>) -> Self {
        self.entries.insert("*".to_string(), completion.into());
        self
    }
}

impl ChatClient for FixtureChat {
    fn complete(&self, prompt: &str, _temperature: f64, _max_tokens: usize) -> Result<String, ClientError> {
        let key = prompt_hash(prompt);
        if let Some(text) = self.entries.get(&key).or_else(|| self.entries.get("*")) {
            return Ok(text.clone());
        }
        Ok(format!("[fixture completion for prompt {}]", &key[..12]))
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

fn read_fixture_map(path: &Path) -> Result<BTreeMap<String, String>, ClientError> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let raw = fs::read_to_string(path).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))
}

/// Client that always fails; stands in for an unconfigured backend so the
/// pipeline degrades instead of refusing to start.
#[derive(Debug, Clone, Copy)]
pub struct Unconfigured(pub &'static str);

impl CaptionClient for Unconfigured {
    fn caption(&self, _: &DynamicImage) -> Result<String, ClientError> {
        Err(ClientError::NotConfigured(self.0))
    }
}

impl OcrClient for Unconfigured {
    fn recognize_text(&self, _: &DynamicImage) -> Result<String, ClientError> {
        Err(ClientError::NotConfigured(self.0))
    }
}

impl ChatClient for Unconfigured {
    fn complete(&self, _: &str, _: f64, _: usize) -> Result<String, ClientError> {
        Err(ClientError::NotConfigured(self.0))
    }
}

/// Plain HTTP backend. Image endpoints receive PNG bytes and answer with
/// text; the embedding endpoint receives the text and answers with a JSON
/// float array; the chat endpoint receives
/// `{"prompt", "temperature", "max_tokens"}` and answers with text or
/// `{"text": ...}`.
#[derive(Clone)]
pub struct HttpClient {
    endpoint: String,
    api_key: Option<String>,
    timeout: Duration,
    agent: ureq::Agent,
    dim: usize,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self { endpoint: endpoint.into(), api_key: None, timeout, agent, dim: 0 }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// Expected embedding dimension; 0 accepts whatever the endpoint returns.
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    fn post(&self, content_type: &str, body: &[u8]) -> Result<String, ClientError> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", content_type);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => ClientError::Timeout(self.timeout),
            other => ClientError::Http(other.to_string()),
        })?;
        resp.body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn post_image(&self, image: &DynamicImage) -> Result<String, ClientError> {
        let mut png = Vec::new();
        image
            .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        self.post("image/png", &png)
    }
}

impl CaptionClient for HttpClient {
    fn caption(&self, image: &DynamicImage) -> Result<String, ClientError> {
        Ok(self.post_image(image)?.trim().to_string())
    }
}

impl OcrClient for HttpClient {
    fn recognize_text(&self, image: &DynamicImage) -> Result<String, ClientError> {
        Ok(self.post_image(image)?.trim().to_string())
    }
}

impl EmbeddingClient for HttpClient {
    fn backend_id(&self) -> String {
        format!("http:{}", self.endpoint)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        let body = self.post("text/plain; charset=utf-8", text.as_bytes())?;
        let v: Vec<f64> = serde_json::from_str(&body).map_err(|e| ClientError::Decode(e.to_string()))?;
        if self.dim != 0 && v.len() != self.dim {
            return Err(ClientError::Decode(format!("expected {} floats, got {}", self.dim, v.len())));
        }
        Ok(v)
    }
}

impl ChatClient for HttpClient {
    fn complete(&self, prompt: &str, temperature: f64, max_tokens: usize) -> Result<String, ClientError> {
        let payload = serde_json::json!({
            "prompt": prompt,
            "temperature": temperature,
            "max_tokens": max_tokens,
        });
        let body = self.post("application/json", payload.to_string().as_bytes())?;
        #[derive(Deserialize)]
        struct Completion {
            text: String,
        }
        match serde_json::from_str::<Completion>(&body) {
            Ok(c) => Ok(c.text),
            Err(_) => Ok(body),
        }
    }
}

/// The four clients the pipeline needs, plus whether they are fixtures.
#[derive(Clone)]
pub struct ClientSet {
    pub caption: Arc<dyn CaptionClient>,
    pub ocr: Arc<dyn OcrClient>,
    pub embed: Arc<dyn EmbeddingClient>,
    pub chat: Arc<dyn ChatClient>,
    pub fixture_mode: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ClientEndpoints {
    pub fixture_dir: Option<PathBuf>,
    pub caption: Option<String>,
    pub ocr: Option<String>,
    pub embed: Option<String>,
    pub llm: Option<String>,
    pub llm_api_key: Option<String>,
    pub timeout: Option<Duration>,
}

impl ClientEndpoints {
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        Self {
            fixture_dir: var(ENV_FIXTURE_DIR).map(PathBuf::from),
            caption: var(ENV_CAPTION_ENDPOINT),
            ocr: var(ENV_OCR_ENDPOINT),
            embed: var(ENV_EMBED_ENDPOINT),
            llm: var(ENV_LLM_ENDPOINT),
            llm_api_key: var(ENV_LLM_API_KEY),
            timeout: None,
        }
    }

    /// Fills unset fields from `other`.
    pub fn or(self, other: ClientEndpoints) -> Self {
        Self {
            fixture_dir: self.fixture_dir.or(other.fixture_dir),
            caption: self.caption.or(other.caption),
            ocr: self.ocr.or(other.ocr),
            embed: self.embed.or(other.embed),
            llm: self.llm.or(other.llm),
            llm_api_key: self.llm_api_key.or(other.llm_api_key),
            timeout: self.timeout.or(other.timeout),
        }
    }
}

impl ClientSet {
    /// Fixture directory layout: `captions.json` and `ocr.json` map image
    /// content hashes to text, `chat.json` maps prompt hashes (or `"*"`) to
    /// completions. Missing files mean empty maps. Embeddings use the hashed
    /// bag-of-words backend.
    pub fn fixture(dir: &Path) -> Result<Self, ClientError> {
        Ok(Self {
            caption: Arc::new(FixtureImageText::from_file(&dir.join("captions.json"))?),
            ocr: Arc::new(FixtureImageText::from_file(&dir.join("ocr.json"))?),
            embed: Arc::new(HashedBagOfWords::default()),
            chat: Arc::new(FixtureChat::from_file(&dir.join("chat.json"))?),
            fixture_mode: true,
        })
    }

    pub fn from_endpoints(endpoints: &ClientEndpoints) -> Result<Self, ClientError> {
        if let Some(dir) = &endpoints.fixture_dir {
            return Self::fixture(dir);
        }
        let timeout = endpoints.timeout.unwrap_or(DEFAULT_TIMEOUT);
        let http = |url: &String| HttpClient::new(url.clone(), timeout);
        let caption: Arc<dyn CaptionClient> = match &endpoints.caption {
            Some(url) => Arc::new(http(url)),
            None => Arc::new(Unconfigured("caption")),
        };
        let ocr: Arc<dyn OcrClient> = match &endpoints.ocr {
            Some(url) => Arc::new(http(url)),
            None => Arc::new(Unconfigured("ocr")),
        };
        let embed: Arc<dyn EmbeddingClient> = match &endpoints.embed {
            Some(url) => Arc::new(http(url)),
            None => Arc::new(HashedBagOfWords::default()),
        };
        let chat: Arc<dyn ChatClient> = match &endpoints.llm {
            Some(url) => Arc::new(http(url).with_api_key(endpoints.llm_api_key.clone())),
            None => Arc::new(Unconfigured("chat")),
        };
        Ok(Self { caption, ocr, embed, chat, fixture_mode: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_chat_prefers_exact_prompt() {
        let chat = FixtureChat::default().with_completion("hello", "exact").with_default("fallback");
        assert_eq!(chat.complete("hello", 0.0, 10).unwrap(), "exact");
        assert_eq!(chat.complete("other", 0.0, 10).unwrap(), "fallback");
    }

    #[test]
    fn fixture_chat_placeholder_is_stable() {
        let chat = FixtureChat::default();
        assert_eq!(chat.complete("q", 0.0, 1).unwrap(), chat.complete("q", 0.0, 1).unwrap());
    }

    #[test]
    fn fixture_text_keyed_by_pixels() {
        let img = DynamicImage::ImageLuma8(image::GrayImage::from_pixel(4, 4, image::Luma([9])));
        let mut map = BTreeMap::new();
        map.insert(content_hash(&img), "Extrude".to_string());
        let client = FixtureImageText::new(map);
        assert_eq!(client.caption(&img).unwrap(), "Extrude");
        let other = DynamicImage::ImageLuma8(image::GrayImage::from_pixel(4, 4, image::Luma([10])));
        assert_eq!(client.caption(&other).unwrap(), "");
    }

    #[test]
    fn missing_fixture_files_are_empty() {
        let dir = tempfile::tempdir().unwrap();
        let set = ClientSet::fixture(dir.path()).unwrap();
        assert!(set.fixture_mode);
    }
}
