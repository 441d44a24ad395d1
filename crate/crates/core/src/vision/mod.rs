//! Visual anchor recognition: segmentation into candidate elements, icon
//! matching against the manifest, captioning and OCR, and the composed
//! textual description handed to retrieval and prompting.

pub mod descriptor;
pub mod ncc;
pub mod segment;

use image::DynamicImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{CaptionClient, OcrClient};
use crate::icon_db::{IconManifest, IconRecord};
use crate::imaging::GrayF;

pub use descriptor::{compute_descriptor, Descriptor, DESCRIPTOR_DIM};
pub use ncc::{ncc_score, sliding_ncc};
pub use segment::{segment_elements, segment_with_trigger, Segmentation, SEGMENTATION_TRIGGER_PX};

pub const NCC_ACCEPT_THRESHOLD: f64 = 0.5;
pub const PREFILTER_K: usize = 5;
const SLIDING_STRIDE_PX: usize = 8;

/// Placeholder used when caption, tools and OCR are all empty.
pub const NO_DESCRIPTION: &str = "(no visual description available)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("image has zero area")]
    EmptyImage,
    #[error("invalid anchor: {0}")]
    InvalidAnchor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn right(&self) -> u64 {
        u64::from(self.x) + u64::from(self.w)
    }

    pub fn bottom(&self) -> u64 {
        u64::from(self.y) + u64::from(self.h)
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.x >= self.x && other.y >= self.y && other.right() <= self.right() && other.bottom() <= self.bottom()
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= u64::from(width) && self.bottom() <= u64::from(height)
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        BoundingBox {
            x,
            y,
            w: (self.right().max(other.right()) - u64::from(x)) as u32,
            h: (self.bottom().max(other.bottom()) - u64::from(y)) as u32,
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = self.right().min(other.right()).saturating_sub(u64::from(self.x.max(other.x)));
        let iy = self.bottom().min(other.bottom()).saturating_sub(u64::from(self.y.max(other.y)));
        let inter = (ix * iy) as f64;
        let union = self.area() as f64 + other.area() as f64 - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorType {
    UiElement,
    Workspace,
    UiPlusWorkspace,
    Annotation,
    Misc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorRole {
    Necessary,
    Useful,
    Irrelevant,
}

/// A labeled, timestamped crop of a video frame that a question refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualAnchor {
    pub id: String,
    pub video_id: String,
    pub timestamp_s: f64,
    pub bbox: BoundingBox,
    pub label: String,
    pub image: DynamicImage,
    pub anchor_type: Option<AnchorType>,
    pub anchor_role: Option<AnchorRole>,
}

impl VisualAnchor {
    /// Builds an anchor whose box is the whole crop, for callers that have no
    /// frame coordinates (CLI, evaluation sets).
    pub fn from_crop(
        id: impl Into<String>,
        video_id: impl Into<String>,
        label: impl Into<String>,
        timestamp_s: f64,
        image: DynamicImage,
    ) -> Result<Self, VisionError> {
        let bbox = BoundingBox { x: 0, y: 0, w: image.width(), h: image.height() };
        let anchor = Self {
            id: id.into(),
            video_id: video_id.into(),
            timestamp_s,
            bbox,
            label: label.into(),
            image,
            anchor_type: None,
            anchor_role: None,
        };
        anchor.validate(None)?;
        Ok(anchor)
    }

    /// Checks the geometric invariants; `frame` is the source frame size
    /// when known.
    pub fn validate(&self, frame: Option<(u32, u32)>) -> Result<(), VisionError> {
        if !(self.timestamp_s >= 0.0 && self.timestamp_s.is_finite()) {
            return Err(VisionError::InvalidAnchor(format!("timestamp {} is negative", self.timestamp_s)));
        }
        if self.bbox.w == 0 || self.bbox.h == 0 {
            return Err(VisionError::EmptyImage);
        }
        if (self.image.width(), self.image.height()) != (self.bbox.w, self.bbox.h) {
            return Err(VisionError::InvalidAnchor(format!(
                "crop is {}x{} but box is {}x{}",
                self.image.width(),
                self.image.height(),
                self.bbox.w,
                self.bbox.h
            )));
        }
        if let Some((fw, fh)) = frame {
            if !self.bbox.fits_within(fw, fh) {
                return Err(VisionError::InvalidAnchor(format!("box {:?} exceeds frame {fw}x{fh}", self.bbox)));
            }
        }
        if self.label.trim().is_empty() {
            return Err(VisionError::InvalidAnchor("empty label".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub icon_name: String,
    pub icon_id: String,
    pub score: f64,
    pub candidate_box: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorDescription {
    pub caption: String,
    pub tool_names: Vec<String>,
    pub ocr_text: String,
    pub composed: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Tunables for recognition; defaults are the pipeline's published values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecognitionParams {
    pub segmentation_trigger_px: u32,
    pub accept_threshold: f64,
    pub prefilter_k: usize,
}

impl Default for RecognitionParams {
    fn default() -> Self {
        Self {
            segmentation_trigger_px: SEGMENTATION_TRIGGER_PX,
            accept_threshold: NCC_ACCEPT_THRESHOLD,
            prefilter_k: PREFILTER_K,
        }
    }
}

/// Shortlists the `k` manifest records whose descriptors are closest to the
/// patch's. Order: cosine descending, then name, then id.
pub fn prefilter<'m>(patch: &GrayF, manifest: &'m IconManifest, k: usize) -> Vec<(&'m IconRecord, f64)> {
    let Ok(desc) = compute_descriptor(patch) else {
        return Vec::new();
    };
    if desc.degenerate {
        return Vec::new();
    }
    let mut ranked: Vec<(&IconRecord, f64)> = manifest
        .records
        .iter()
        .map(|r| (r, descriptor::cosine(&desc.values, &r.descriptor)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| a.0.name.cmp(&b.0.name))
            .then_with(|| a.0.id.cmp(&b.0.id))
    });
    ranked.truncate(k);
    ranked
}

/// Best icon for a patch: descriptor prefilter to the top candidates, NCC
/// against each, accepted only when the best score exceeds the threshold.
pub fn match_icon(patch: &GrayF, manifest: &IconManifest) -> Option<MatchResult> {
    match_icon_with(patch, manifest, &RecognitionParams::default())
}

pub fn match_icon_with(patch: &GrayF, manifest: &IconManifest, params: &RecognitionParams) -> Option<MatchResult> {
    if manifest.records.is_empty() {
        tracing::warn!("icon match requested against an empty manifest");
        return None;
    }
    let whole = BoundingBox { x: 0, y: 0, w: patch.width() as u32, h: patch.height() as u32 };
    prefilter(patch, manifest, params.prefilter_k)
        .into_iter()
        .filter_map(|(record, _)| {
            let score = ncc_score(patch, &record.gray()).ok()?;
            Some((record, score))
        })
        .max_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| b.0.name.cmp(&a.0.name))
                .then_with(|| b.0.id.cmp(&a.0.id))
        })
        .filter(|(_, score)| *score > params.accept_threshold)
        .map(|(record, score)| MatchResult {
            icon_name: record.name.clone(),
            icon_id: record.id.clone(),
            score,
            candidate_box: whole,
        })
}

/// Matches every segmented element of the anchor; results follow box order
/// and keep only the first hit per icon name.
pub fn recognize(anchor: &VisualAnchor, manifest: &IconManifest) -> Result<Vec<MatchResult>, VisionError> {
    recognize_image(&anchor.image, manifest, &RecognitionParams::default())
}

pub fn recognize_image(
    image: &DynamicImage,
    manifest: &IconManifest,
    params: &RecognitionParams,
) -> Result<Vec<MatchResult>, VisionError> {
    let gray = GrayF::from_image(image);
    if gray.is_empty() {
        return Err(VisionError::EmptyImage);
    }
    let seg = segment_with_trigger(&gray, params.segmentation_trigger_px);
    let mut results: Vec<MatchResult> = Vec::new();
    for bbox in &seg.boxes {
        let crop = gray.crop(bbox.x as usize, bbox.y as usize, bbox.w as usize, bbox.h as usize);
        if let Some(mut m) = match_icon_with(&crop, manifest, params) {
            m.candidate_box = *bbox;
            if !results.iter().any(|r| r.icon_name == m.icon_name) {
                results.push(m);
            }
        }
    }
    if results.is_empty() && seg.fell_back {
        if let Some(m) = sliding_fallback(&gray, manifest, params) {
            results.push(m);
        }
    }
    Ok(results)
}

/// Searches the prefilter candidates at native size over the whole crop.
fn sliding_fallback(gray: &GrayF, manifest: &IconManifest, params: &RecognitionParams) -> Option<MatchResult> {
    prefilter(gray, manifest, params.prefilter_k)
        .into_iter()
        .filter_map(|(record, _)| {
            let tpl = record.gray();
            let (score, x, y) = sliding_ncc(gray, &tpl, SLIDING_STRIDE_PX)?;
            let bbox = BoundingBox { x: x as u32, y: y as u32, w: tpl.width() as u32, h: tpl.height() as u32 };
            Some((record, score, bbox))
        })
        .max_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| b.0.name.cmp(&a.0.name))
                .then_with(|| b.0.id.cmp(&a.0.id))
        })
        .filter(|(_, score, _)| *score > params.accept_threshold)
        .map(|(record, score, bbox)| MatchResult {
            icon_name: record.name.clone(),
            icon_id: record.id.clone(),
            score,
            candidate_box: bbox,
        })
}

/// `"{caption}. It includes the {profile} tools: {tools} and text: {ocr}."`
/// with the tools or text clause dropped when empty.
pub fn compose_description(caption: &str, tool_names: &[String], ocr_text: &str, profile: &str) -> String {
    let caption = caption.trim().trim_end_matches('.').trim_end();
    let ocr = flatten_ocr(ocr_text);
    let tools = tool_names.join(", ");

    let includes = match (tools.is_empty(), ocr.is_empty()) {
        (false, false) => Some(format!("It includes the {profile} tools: {tools} and text: {ocr}.")),
        (false, true) => Some(format!("It includes the {profile} tools: {tools}.")),
        (true, false) => Some(format!("It includes text: {ocr}.")),
        (true, true) => None,
    };
    match (caption.is_empty(), includes) {
        (true, None) => NO_DESCRIPTION.to_string(),
        (false, None) => format!("{caption}."),
        (true, Some(rest)) => rest,
        (false, Some(rest)) => format!("{caption}. {rest}"),
    }
}

/// OCR lines collapsed onto one line so the description stays a single
/// prompt line.
fn flatten_ocr(ocr_text: &str) -> String {
    ocr_text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Runs captioning, icon recognition and OCR on one anchor. Client failures
/// drop the affected clause and add a warning; they never fail the call.
pub fn describe_anchor(
    anchor: &VisualAnchor,
    manifest: Option<&IconManifest>,
    caption_client: &dyn CaptionClient,
    ocr_client: &dyn OcrClient,
    profile: &str,
    params: &RecognitionParams,
) -> AnchorDescription {
    let mut warnings = Vec::new();
    let caption = caption_client.caption(&anchor.image).unwrap_or_else(|e| {
        warnings.push(format!("{}: caption unavailable: {e}", anchor.label));
        String::new()
    });
    let tool_names = match manifest {
        Some(m) => match recognize_image(&anchor.image, m, params) {
            Ok(matches) => matches.into_iter().map(|m| m.icon_name).collect(),
            Err(e) => {
                warnings.push(format!("{}: recognition failed: {e}", anchor.label));
                Vec::new()
            }
        },
        None => {
            warnings.push(format!("{}: no icon manifest loaded", anchor.label));
            Vec::new()
        }
    };
    let ocr_text = ocr_client.recognize_text(&anchor.image).unwrap_or_else(|e| {
        warnings.push(format!("{}: ocr unavailable: {e}", anchor.label));
        String::new()
    });
    let composed = compose_description(&caption, &tool_names, &ocr_text, profile);
    AnchorDescription { caption, tool_names, ocr_text, composed, warnings }
}
