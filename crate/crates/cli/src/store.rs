//! On-disk service state under `data_dir`:
//!
//! ```text
//! videos/{video_id}.json
//! anchors/{video_id}/{anchor_id}.json   metadata and cached description
//! anchors/{video_id}/{anchor_id}.png    the crop
//! icon_db/                              icon manifest
//! index/index.jsonl                     corpus index
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use aqua_core::video_context::{Sentence, Transcript};
use aqua_core::vision::{AnchorDescription, BoundingBox, VisualAnchor};
use image::DynamicImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub title: String,
    pub transcript: Transcript,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_uri: Option<String>,
    pub frame_size: (u32, u32),
}

impl VideoRecord {
    /// Id derived from the content, so that posting the same video twice
    /// yields the same id.
    pub fn content_id(title: &str, sentences: &[Sentence], source_uri: Option<&str>, frame_size: (u32, u32)) -> String {
        let payload = serde_json::json!({
            "title": title,
            "sentences": sentences,
            "source_uri": source_uri,
            "frame_size": frame_size,
        });
        let digest = Sha256::digest(payload.to_string().as_bytes());
        format!("v{}", &hex::encode(digest)[..16])
    }

    /// Equality of everything except the id.
    pub fn same_payload(&self, other: &VideoRecord) -> bool {
        self.title == other.title
            && self.transcript.sentences == other.transcript.sentences
            && self.source_uri == other.source_uri
            && self.frame_size == other.frame_size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub anchor_id: String,
    pub video_id: String,
    pub session: String,
    pub label: String,
    pub timestamp_s: f64,
    pub bbox: BoundingBox,
    pub content_hash: String,
    pub description: AnchorDescription,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Ids are used as file names; only a conservative character set is
/// accepted.
pub fn safe_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().expect("store paths have a parent");
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, StoreError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|source| StoreError::Json { path: path.to_path_buf(), source }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn to_json(value: &impl Serialize) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("store records serialize");
    v.push(b'\n');
    v
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn video_path(&self, id: &str) -> PathBuf {
        self.root.join("videos").join(format!("{id}.json"))
    }

    fn anchor_dir(&self, video_id: &str) -> PathBuf {
        self.root.join("anchors").join(video_id)
    }

    pub fn get_video(&self, id: &str) -> Result<Option<VideoRecord>, StoreError> {
        if !safe_id(id) {
            return Ok(None);
        }
        read_json(&self.video_path(id))
    }

    pub fn put_video(&self, record: &VideoRecord) -> Result<(), StoreError> {
        write_atomic(&self.video_path(&record.video_id), &to_json(record))
    }

    pub fn get_anchor(&self, video_id: &str, anchor_id: &str) -> Result<Option<AnchorRecord>, StoreError> {
        if !safe_id(video_id) || !safe_id(anchor_id) {
            return Ok(None);
        }
        read_json(&self.anchor_dir(video_id).join(format!("{anchor_id}.json")))
    }

    /// Anchors of a video in anchor-id order.
    pub fn list_anchors(&self, video_id: &str) -> Result<Vec<AnchorRecord>, StoreError> {
        let dir = self.anchor_dir(video_id);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut paths: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let mut out = Vec::with_capacity(paths.len());
        for p in paths {
            if let Some(r) = read_json(&p)? {
                out.push(r);
            }
        }
        Ok(out)
    }

    /// Writes the crop first and the metadata last, so a record on disk
    /// always has its image.
    pub fn put_anchor(&self, record: &AnchorRecord, image: &DynamicImage) -> Result<(), StoreError> {
        let dir = self.anchor_dir(&record.video_id);
        let png_path = dir.join(format!("{}.png", record.anchor_id));
        let mut png = Vec::new();
        image
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| StoreError::Image { path: png_path.clone(), message: e.to_string() })?;
        write_atomic(&png_path, &png)?;
        write_atomic(&dir.join(format!("{}.json", record.anchor_id)), &to_json(record))
    }

    pub fn anchor_image(&self, video_id: &str, anchor_id: &str) -> Result<DynamicImage, StoreError> {
        let path = self.anchor_dir(video_id).join(format!("{anchor_id}.png"));
        image::open(&path).map_err(|e| StoreError::Image { path, message: e.to_string() })
    }

    /// Rebuilds the pipeline anchor from its stored record and crop.
    pub fn load_visual_anchor(&self, record: &AnchorRecord) -> Result<VisualAnchor, StoreError> {
        let image = self.anchor_image(&record.video_id, &record.anchor_id)?;
        Ok(VisualAnchor {
            id: record.anchor_id.clone(),
            video_id: record.video_id.clone(),
            timestamp_s: record.timestamp_s,
            bbox: record.bbox,
            label: record.label.clone(),
            image,
            anchor_type: None,
            anchor_role: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(title: &str) -> VideoRecord {
        let sentences = vec![Sentence { text: "Hi.".into(), start_s: 0.0, end_s: 1.0 }];
        let id = VideoRecord::content_id(title, &sentences, None, (640, 360));
        VideoRecord {
            video_id: id.clone(),
            title: title.into(),
            transcript: Transcript { video_id: id, title: title.into(), sentences },
            source_uri: None,
            frame_size: (640, 360),
        }
    }

    #[test]
    fn content_id_depends_on_payload() {
        assert_eq!(record("a").video_id, record("a").video_id);
        assert_ne!(record("a").video_id, record("b").video_id);
        assert!(safe_id(&record("a").video_id));
    }

    #[test]
    fn video_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let r = record("a");
        store.put_video(&r).unwrap();
        assert_eq!(store.get_video(&r.video_id).unwrap(), Some(r));
        assert_eq!(store.get_video("missing").unwrap(), None);
        assert_eq!(store.get_video("../etc/passwd").unwrap(), None);
    }
}
