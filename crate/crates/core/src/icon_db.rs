//! The UI element database: named icon images harvested from help HTML and
//! from a dump of the application's command icons.
//!
//! On disk a manifest is a directory holding `manifest.jsonl` (a header line
//! followed by one line per record) and `images/<id>.png`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use image::DynamicImage;
use scraper::{Html, Node, Selector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use crate::imaging::{content_hash, normalize_color, GrayF};
use crate::vision::{compute_descriptor, DESCRIPTOR_DIM};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const IMAGE_DIR: &str = "images";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "gif"];

#[derive(Debug, Error)]
pub enum IconDbError {
    #[error("input directory not found: {0}")]
    MissingInput(PathBuf),
    #[error("manifest not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported manifest version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{path}:{line}:{column} (byte {offset}): {message}")]
    Parse { path: PathBuf, line: usize, column: usize, offset: usize, message: String },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IconSource {
    Documentation,
    CommandDump,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IconRecord {
    pub id: String,
    pub name: String,
    pub image: DynamicImage,
    pub source: IconSource,
    pub content_hash: String,
    /// Filled in by [`build_manifest`]; empty before that.
    pub descriptor: Vec<f64>,
}

/// Trims and collapses internal whitespace; case is preserved.
pub fn canonical_name(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl IconRecord {
    pub fn new(name: &str, image: DynamicImage, source: IconSource) -> Result<Self, IconDbError> {
        let name = canonical_name(name);
        if name.is_empty() {
            return Err(IconDbError::InvalidRecord("empty icon name".into()));
        }
        if image.width() == 0 || image.height() == 0 {
            return Err(IconDbError::InvalidRecord(format!("{name}: zero-area image")));
        }
        let image = normalize_color(image);
        let content_hash = content_hash(&image);
        let id = record_id(&name, &content_hash);
        Ok(Self { id, name, image, source, content_hash, descriptor: Vec::new() })
    }

    pub fn gray(&self) -> GrayF {
        GrayF::from_image(&self.image)
    }
}

fn record_id(name: &str, content_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    h.update([0u8]);
    h.update(content_hash.as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IconManifest {
    pub version: u32,
    pub software_profile: String,
    pub descriptor_dim: usize,
    pub counts_by_source: BTreeMap<IconSource, usize>,
    pub records: Vec<IconRecord>,
}

impl IconManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Records harvested from one input directory, plus the per-item warnings
/// for inputs that were skipped.
#[derive(Debug, Default)]
pub struct Harvest {
    pub records: Vec<IconRecord>,
    pub warnings: Vec<String>,
    /// Candidate items seen (list items, image files, unreadable files).
    pub inputs: usize,
}

fn sorted_files(root: &Path, exts: &[&str]) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    files
}

fn decode_image(path: &Path) -> Result<DynamicImage, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    let img = image::load_from_memory(&bytes).map_err(|e| e.to_string())?;
    if img.width() == 0 || img.height() == 0 {
        return Err("zero-area image".into());
    }
    Ok(img)
}

/// Harvests `(name, image)` pairs from help HTML: every `<li>` whose text
/// preceding its first `<img>` names the tool. Relative image paths resolve
/// against the HTML file's directory.
pub fn parse_docs_icons(html_root: &Path) -> Result<Harvest, IconDbError> {
    if !html_root.is_dir() {
        return Err(IconDbError::MissingInput(html_root.to_path_buf()));
    }
    let li = Selector::parse("li").expect("static selector");
    let mut harvest = Harvest::default();
    for file in sorted_files(html_root, &["html", "htm"]) {
        let raw = match fs::read(&file) {
            Ok(bytes) => bytes,
            Err(e) => {
                harvest.inputs += 1;
                harvest.warnings.push(format!("{}: unreadable: {e}", file.display()));
                continue;
            }
        };
        let Ok(text) = String::from_utf8(raw) else {
            harvest.inputs += 1;
            harvest.warnings.push(format!("{}: not valid UTF-8, skipped", file.display()));
            continue;
        };
        let doc = Html::parse_document(&text);
        let base = file.parent().unwrap_or(html_root);
        for (ordinal, item) in doc.select(&li).enumerate() {
            harvest.inputs += 1;
            let where_ = format!("{} li#{ordinal}", file.display());
            let mut name = String::new();
            let mut src = None;
            for node in item.descendants() {
                match node.value() {
                    Node::Text(t) => name.push_str(t),
                    Node::Element(el) if el.name() == "img" => {
                        src = el.attr("src").map(str::to_string);
                        break;
                    }
                    _ => {}
                }
            }
            let name = canonical_name(&name);
            let Some(src) = src else {
                harvest.warnings.push(format!("{where_}: no image"));
                continue;
            };
            if name.is_empty() {
                harvest.warnings.push(format!("{where_}: no name before image"));
                continue;
            }
            if src.contains("://") || src.starts_with("data:") {
                harvest.warnings.push(format!("{where_}: non-local image {src}"));
                continue;
            }
            let src = src.split(['?', '#']).next().unwrap_or_default();
            let path = base.join(src);
            match decode_image(&path).and_then(|img| {
                IconRecord::new(&name, img, IconSource::Documentation).map_err(|e| e.to_string())
            }) {
                Ok(record) => harvest.records.push(record),
                Err(e) => harvest.warnings.push(format!("{where_}: {}: {e}", path.display())),
            }
        }
    }
    Ok(harvest)
}

/// One record per decodable image file; the file stem is the command name.
pub fn import_command_icons(icons_root: &Path) -> Result<Harvest, IconDbError> {
    if !icons_root.is_dir() {
        return Err(IconDbError::MissingInput(icons_root.to_path_buf()));
    }
    let mut harvest = Harvest::default();
    for file in sorted_files(icons_root, IMAGE_EXTENSIONS) {
        harvest.inputs += 1;
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        match decode_image(&file)
            .and_then(|img| IconRecord::new(stem, img, IconSource::CommandDump).map_err(|e| e.to_string()))
        {
            Ok(record) => harvest.records.push(record),
            Err(e) => harvest.warnings.push(format!("{}: {e}", file.display())),
        }
    }
    Ok(harvest)
}

#[derive(Debug)]
pub struct BuiltManifest {
    pub manifest: IconManifest,
    pub duplicates: usize,
    pub warnings: Vec<String>,
}

/// Drops later records that repeat an earlier `(name, content_hash)`,
/// computes descriptors and tallies sources.
pub fn build_manifest(records: Vec<IconRecord>, profile: &str) -> BuiltManifest {
    let mut seen = HashSet::new();
    let mut kept = Vec::with_capacity(records.len());
    let mut duplicates = 0;
    let mut warnings = Vec::new();
    for mut record in records {
        if !seen.insert((record.name.clone(), record.content_hash.clone())) {
            duplicates += 1;
            continue;
        }
        let desc = compute_descriptor(&record.gray()).expect("records have non-zero area");
        if desc.degenerate {
            warnings.push(format!("{}: flat image, descriptor is degenerate", record.name));
        }
        record.descriptor = desc.values;
        kept.push(record);
    }
    if kept.is_empty() {
        warnings.push("manifest is empty".to_string());
    }
    let mut counts_by_source = BTreeMap::new();
    for r in &kept {
        *counts_by_source.entry(r.source).or_insert(0) += 1;
    }
    BuiltManifest {
        manifest: IconManifest {
            version: MANIFEST_VERSION,
            software_profile: profile.to_string(),
            descriptor_dim: DESCRIPTOR_DIM,
            counts_by_source,
            records: kept,
        },
        duplicates,
        warnings,
    }
}

/// Harvests the help pages (if given) and then the command icons (if
/// given), and builds one manifest from both. Harvest warnings come first
/// in the returned warnings.
pub fn build_from_sources(
    docs_root: Option<&Path>,
    commands_root: Option<&Path>,
    profile: &str,
) -> Result<BuiltManifest, IconDbError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (root, harvest_fn) in [
        (docs_root, parse_docs_icons as fn(&Path) -> Result<Harvest, IconDbError>),
        (commands_root, import_command_icons),
    ] {
        if let Some(root) = root {
            let h = harvest_fn(root)?;
            records.extend(h.records);
            warnings.extend(h.warnings);
        }
    }
    let mut built = build_manifest(records, profile);
    warnings.append(&mut built.warnings);
    built.warnings = warnings;
    Ok(built)
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    version: u32,
    software_profile: String,
    descriptor_dim: usize,
    counts: BTreeMap<IconSource, usize>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    name: String,
    source: IconSource,
    content_hash: String,
    image_path: String,
    descriptor: Vec<f64>,
}

pub fn save_manifest(manifest: &IconManifest, dir: &Path) -> Result<(), IconDbError> {
    let images = dir.join(IMAGE_DIR);
    fs::create_dir_all(&images)?;
    let mut out = BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE))?);
    let header = HeaderLine {
        version: manifest.version,
        software_profile: manifest.software_profile.clone(),
        descriptor_dim: manifest.descriptor_dim,
        counts: manifest.counts_by_source.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("serializable"))?;
    for r in &manifest.records {
        let rel = format!("{IMAGE_DIR}/{}.png", r.id);
        let mut png = Vec::new();
        r.image
            .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| IconDbError::Image { path: dir.join(&rel), message: e.to_string() })?;
        fs::write(dir.join(&rel), png)?;
        let line = RecordLine {
            id: r.id.clone(),
            name: r.name.clone(),
            source: r.source,
            content_hash: r.content_hash.clone(),
            image_path: rel,
            descriptor: r.descriptor.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("serializable"))?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<IconManifest, IconDbError> {
    let path = dir.join(MANIFEST_FILE);
    let file = match fs::File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(IconDbError::NotFound(path)),
        Err(e) => return Err(e.into()),
    };
    let mut offset = 0usize;
    let mut header: Option<HeaderLine> = None;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let parse_err = |e: serde_json::Error| IconDbError::Parse {
            path: path.clone(),
            line: line_no,
            column: e.column(),
            offset: offset + e.column().saturating_sub(1),
            message: e.to_string(),
        };
        if line.trim().is_empty() {
            offset += line.len() + 1;
            continue;
        }
        match &header {
            None => {
                // Peek at the version before the full header so future formats
                // report a version error rather than a schema error.
                let value: serde_json::Value = serde_json::from_str(&line).map_err(parse_err)?;
                let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
                if found != MANIFEST_VERSION {
                    return Err(IconDbError::Version { found, expected: MANIFEST_VERSION });
                }
                header = Some(serde_json::from_value(value).map_err(parse_err)?);
            }
            Some(h) => {
                let rec: RecordLine = serde_json::from_str(&line).map_err(parse_err)?;
                if rec.descriptor.len() != h.descriptor_dim {
                    return Err(IconDbError::InvalidRecord(format!(
                        "{}: descriptor has {} values, header says {}",
                        rec.id,
                        rec.descriptor.len(),
                        h.descriptor_dim
                    )));
                }
                let img_path = dir.join(&rec.image_path);
                let image = decode_image(&img_path)
                    .map_err(|message| IconDbError::Image { path: img_path.clone(), message })?;
                let image = normalize_color(image);
                if content_hash(&image) != rec.content_hash {
                    return Err(IconDbError::InvalidRecord(format!("{}: content hash mismatch", rec.id)));
                }
                records.push(IconRecord {
                    id: rec.id,
                    name: rec.name,
                    image,
                    source: rec.source,
                    content_hash: rec.content_hash,
                    descriptor: rec.descriptor,
                });
            }
        }
        offset += line.len() + 1;
    }
    let header = header.ok_or_else(|| IconDbError::Parse {
        path: path.clone(),
        line: 1,
        column: 1,
        offset: 0,
        message: "missing header line".into(),
    })?;
    Ok(IconManifest {
        version: header.version,
        software_profile: header.software_profile,
        descriptor_dim: header.descriptor_dim,
        counts_by_source: header.counts,
        records,
    })
}
