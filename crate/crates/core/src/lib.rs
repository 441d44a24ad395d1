//! Question answering over software tutorial videos where questions point
//! at regions of the video ("visual anchors").
//!
//! The pipeline recognizes UI elements in each anchor against an icon
//! database ([`icon_db`], [`vision`]), retrieves documentation and tutorial
//! chunks ([`retrieval`]), picks the transcript sentences around each
//! anchor ([`video_context`]) and assembles a prompt for a chat model
//! ([`engine`]). [`eval`] runs question sets under the three answer
//! conditions.

pub mod clients;
pub mod engine;
pub mod eval;
pub mod icon_db;
pub mod imaging;
pub mod retrieval;
pub mod synth;
pub mod video_context;
pub mod vision;

use std::cmp::Ordering;

pub use clients::{CaptionClient, ChatClient, ClientError, ClientSet, EmbeddingClient, OcrClient};
pub use engine::{answer, Answer, Condition, Deps, EngineError, PipelineConfig, Question};
pub use icon_db::{IconManifest, IconRecord, IconSource};
pub use retrieval::{ArticleChunk, CorpusIndex, TokenCounter, WhitespaceTokenCounter};
pub use video_context::{ContextWindow, Transcript};
pub use vision::{AnchorDescription, BoundingBox, MatchResult, VisualAnchor};

/// Orders labels with embedded numbers numerically (`#Anchor2` before
/// `#Anchor10`), falling back to plain string order.
pub fn label_order(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> Vec<Result<u128, &str>> {
        let mut parts = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        while start < s.len() {
            let digit = bytes[start].is_ascii_digit();
            let mut end = start;
            while end < s.len() && bytes[end].is_ascii_digit() == digit {
                end += 1;
            }
            let piece = &s[start..end];
            parts.push(if digit { piece.parse::<u128>().map_err(|_| piece) } else { Err(piece) });
            start = end;
        }
        parts
    }
    let (pa, pb) = (split(a), split(b));
    for (x, y) in pa.iter().zip(&pb) {
        let ord = match (x, y) {
            (Ok(m), Ok(n)) => m.cmp(n),
            (Ok(_), Err(_)) => Ordering::Less,
            (Err(_), Ok(_)) => Ordering::Greater,
            (Err(s), Err(t)) => s.cmp(t),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    pa.len().cmp(&pb.len()).then_with(|| a.cmp(b))
}
