use std::path::{Path, PathBuf};
use std::time::Duration;

use aqua_core::clients::ClientEndpoints;
use aqua_core::engine::PipelineConfig;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub caption: Option<String>,
    pub ocr: Option<String>,
    pub embed: Option<String>,
    pub llm: Option<String>,
    pub llm_api_key: Option<String>,
    pub timeout_s: Option<u64>,
}

/// Settings for `aqua serve`, read from TOML. Environment variables take
/// precedence over the file (see [`ServiceConfig::apply_env`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    /// Fixture-mode client directory; when set, no model endpoint is used.
    pub fixture_dir: Option<PathBuf>,
    pub max_image_bytes: usize,
    /// Allowed CORS origins; empty allows any origin.
    pub cors_origins: Vec<String>,
    pub endpoints: EndpointConfig,
    pub pipeline: PipelineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            fixture_dir: None,
            max_image_bytes: DEFAULT_MAX_IMAGE_BYTES,
            cors_origins: Vec::new(),
            endpoints: EndpointConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: Box<toml::de::Error> },
    #[error("invalid pipeline config: {0}")]
    Pipeline(String),
    #[error("data_dir {path} is not writable: {source}")]
    DataDir { path: PathBuf, source: std::io::Error },
}

impl ServiceConfig {
    /// Reads `path` (or the defaults when `None`), then applies environment
    /// overrides and validates the pipeline settings.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.into(), source })?;
                toml::from_str(&raw).map_err(|e| ConfigError::Toml { path: p.into(), source: Box::new(e) })?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.pipeline.validate().map_err(|e| ConfigError::Pipeline(e.to_string()))?;
        Ok(cfg)
    }

    /// `AQUA_LISTEN`, `AQUA_DATA_DIR`, `AQUA_FIXTURE_DIR` and the client
    /// endpoint variables override the corresponding fields.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        let var = |k: &str| var(k).filter(|v| !v.trim().is_empty());
        if let Some(v) = var("AQUA_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = var("AQUA_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("AQUA_FIXTURE_DIR") {
            self.fixture_dir = Some(v.into());
        }
        let e = &mut self.endpoints;
        for (key, slot) in [
            ("AQUA_CAPTION_ENDPOINT", &mut e.caption),
            ("AQUA_OCR_ENDPOINT", &mut e.ocr),
            ("AQUA_EMBED_ENDPOINT", &mut e.embed),
            ("AQUA_LLM_ENDPOINT", &mut e.llm),
            ("AQUA_LLM_API_KEY", &mut e.llm_api_key),
        ] {
            if let Some(v) = var(key) {
                *slot = Some(v);
            }
        }
    }

    pub fn client_endpoints(&self) -> ClientEndpoints {
        let e = &self.endpoints;
        ClientEndpoints {
            fixture_dir: self.fixture_dir.clone(),
            caption: e.caption.clone(),
            ocr: e.ocr.clone(),
            embed: e.embed.clone(),
            llm: e.llm.clone(),
            llm_api_key: e.llm_api_key.clone(),
            timeout: e.timeout_s.map(Duration::from_secs),
        }
    }

    pub fn icon_db_dir(&self) -> PathBuf {
        self.data_dir.join("icon_db")
    }

    pub fn index_path(&self) -> PathBuf {
        self.data_dir.join("index").join("index.jsonl")
    }

    /// Creates the data directory layout and checks that it is writable.
    pub fn prepare_data_dir(&self) -> Result<(), ConfigError> {
        let err = |source| ConfigError::DataDir { path: self.data_dir.clone(), source };
        for sub in ["videos", "anchors", "icon_db", "index"] {
            std::fs::create_dir_all(self.data_dir.join(sub)).map_err(err)?;
        }
        let probe = self.data_dir.join(".write-probe");
        std::fs::write(&probe, b"").map_err(err)?;
        std::fs::remove_file(&probe).map_err(err)?;
        Ok(())
    }
}
