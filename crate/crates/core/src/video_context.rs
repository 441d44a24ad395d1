//! Video title and the transcript sentences around each anchor's capture
//! time.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("transcript not found: {0}")]
    NotFound(String),
    #[error("invalid transcript: {0}")]
    Invalid(String),
    #[error("malformed WebVTT at line {line}: {message}")]
    Vtt { line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub video_id: String,
    pub title: String,
    #[serde(default)]
    pub sentences: Vec<Sentence>,
}

impl Transcript {
    /// Non-empty sentence text, non-negative times, `end >= start`, and
    /// starts in non-decreasing order.
    pub fn validate(&self) -> Result<(), TranscriptError> {
        for (i, s) in self.sentences.iter().enumerate() {
            if s.text.trim().is_empty() {
                return Err(TranscriptError::Invalid(format!("sentence {i} is empty")));
            }
            if !(s.start_s >= 0.0) || !(s.end_s >= s.start_s) {
                return Err(TranscriptError::Invalid(format!(
                    "sentence {i} has bad times {}..{}",
                    s.start_s, s.end_s
                )));
            }
        }
        if let Some(i) = self.sentences.windows(2).position(|w| w[1].start_s < w[0].start_s) {
            return Err(TranscriptError::Invalid(format!(
                "sentence {} starts before sentence {}",
                i + 1,
                i
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextWindow {
    pub sentences: Vec<Sentence>,
    pub text: String,
    /// Set when some timestamp preceded the first sentence and the first
    /// sentence was used instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub before_first: bool,
}

impl ContextWindow {
    fn from_sentences(sentences: Vec<Sentence>, before_first: bool) -> Self {
        let text = sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
        Self { sentences, text, before_first }
    }
}

/// Indices of the sentence window for time `t_s`: the last sentence starting
/// at or before `t_s` and the one preceding it. Times before the first
/// start select the first sentence alone.
fn window_indices(transcript: &Transcript, t_s: f64) -> (Vec<usize>, bool) {
    let n = transcript.sentences.len();
    if n == 0 {
        return (Vec::new(), false);
    }
    let after = transcript.sentences.partition_point(|s| s.start_s <= t_s);
    match after {
        0 => (vec![0], true),
        1 => (vec![0], false),
        i => (vec![i - 2, i - 1], false),
    }
}

pub fn select_context(transcript: &Transcript, t_s: f64) -> ContextWindow {
    let (idx, before_first) = window_indices(transcript, t_s);
    ContextWindow::from_sentences(idx.into_iter().map(|i| transcript.sentences[i].clone()).collect(), before_first)
}

/// Concatenates the per-timestamp windows in the given order. Sentences
/// already present in the immediately preceding window are not repeated.
pub fn context_for_times(transcript: &Transcript, times: &[f64]) -> ContextWindow {
    let mut picked: Vec<usize> = Vec::new();
    let mut previous: Vec<usize> = Vec::new();
    let mut before_first = false;
    for &t in times {
        let (idx, early) = window_indices(transcript, t);
        before_first |= early;
        for &i in &idx {
            if !previous.contains(&i) {
                picked.push(i);
            }
        }
        previous = idx;
    }
    ContextWindow::from_sentences(picked.into_iter().map(|i| transcript.sentences[i].clone()).collect(), before_first)
}

/// Context for a set of anchors, taken in label order.
pub fn context_for_anchors(transcript: &Transcript, anchors: &[crate::vision::VisualAnchor]) -> ContextWindow {
    let mut ordered: Vec<&crate::vision::VisualAnchor> = anchors.iter().collect();
    ordered.sort_by(|a, b| crate::label_order(&a.label, &b.label));
    let times: Vec<f64> = ordered.iter().map(|a| a.timestamp_s).collect();
    context_for_times(transcript, &times)
}

/// Reads a transcript from JSON (`{video_id, title, sentences}`) or WebVTT
/// (`.vtt`; title from the `WEBVTT` header line, video id from the file
/// stem).
pub fn load_transcript(path: &Path) -> Result<Transcript, TranscriptError> {
    let raw = match fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(TranscriptError::NotFound(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let is_vtt = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("vtt"));
    let transcript = if is_vtt {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("video");
        parse_webvtt(&raw, stem)?
    } else {
        serde_json::from_str(&raw)?
    };
    transcript.validate()?;
    Ok(transcript)
}

/// Cue text becomes a sentence; cue start and end become its times. Cue
/// identifiers, NOTE/STYLE/REGION blocks and inline tags are dropped.
pub fn parse_webvtt(raw: &str, video_id: &str) -> Result<Transcript, TranscriptError> {
    let raw = raw.trim_start_matches('\u{feff}');
    let mut lines = raw.lines().enumerate().peekable();
    let (_, first) = lines.next().ok_or(TranscriptError::Vtt { line: 1, message: "empty file".into() })?;
    if !first.starts_with("WEBVTT") {
        return Err(TranscriptError::Vtt { line: 1, message: "missing WEBVTT signature".into() });
    }
    let title = first.trim_start_matches("WEBVTT").trim_start_matches([' ', '\t', '-']).trim().to_string();

    let mut sentences = Vec::new();
    while let Some((idx, line)) = lines.next() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with("NOTE") || line.starts_with("STYLE") || line.starts_with("REGION") {
            while lines.peek().is_some_and(|(_, l)| !l.trim().is_empty()) {
                lines.next();
            }
            continue;
        }
        let timing = if line.contains("-->") {
            line.to_string()
        } else {
            match lines.next() {
                Some((_, l)) if l.contains("-->") => l.trim().to_string(),
                _ => {
                    // Header metadata (Kind:, Language:) before the first cue.
                    continue;
                }
            }
        };
        let (start, end) = parse_timing(&timing).ok_or_else(|| TranscriptError::Vtt {
            line: idx + 1,
            message: format!("bad cue timing {timing:?}"),
        })?;
        let mut text_lines = Vec::new();
        while let Some((_, l)) = lines.peek() {
            if l.trim().is_empty() {
                break;
            }
            text_lines.push(strip_tags(l.trim()));
            lines.next();
        }
        let text = text_lines.join(" ").split_whitespace().collect::<Vec<_>>().join(" ");
        if !text.is_empty() {
            sentences.push(Sentence { text, start_s: start, end_s: end });
        }
    }
    sentences.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Ok(Transcript { video_id: video_id.to_string(), title, sentences })
}

fn parse_timing(line: &str) -> Option<(f64, f64)> {
    let (a, rest) = line.split_once("-->")?;
    let b = rest.split_whitespace().next()?;
    Some((parse_timestamp(a.trim())?, parse_timestamp(b.trim())?))
}

fn parse_timestamp(ts: &str) -> Option<f64> {
    let parts: Vec<&str> = ts.split(':').collect();
    let (h, m, s) = match parts.as_slice() {
        [m, s] => (0.0, m.parse::<f64>().ok()?, *s),
        [h, m, s] => (h.parse::<f64>().ok()?, m.parse::<f64>().ok()?, *s),
        _ => return None,
    };
    let secs: f64 = s.replace(',', ".").parse().ok()?;
    Some(h * 3600.0 + m * 60.0 + secs)
}

fn strip_tags(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_tag = false;
    for c in line.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn transcript(starts: &[f64]) -> Transcript {
        Transcript {
            video_id: "v".into(),
            title: "T".into(),
            sentences: starts
                .iter()
                .enumerate()
                .map(|(i, &s)| Sentence { text: format!("s{i}"), start_s: s, end_s: s + 1.0 })
                .collect(),
        }
    }

    fn texts(w: &ContextWindow) -> Vec<&str> {
        w.sentences.iter().map(|s| s.text.as_str()).collect()
    }

    /// Linear scan: last index with start <= t, if any.
    fn oracle(starts: &[f64], t: f64) -> Vec<usize> {
        let mut last = None;
        for (i, &s) in starts.iter().enumerate() {
            if s <= t {
                last = Some(i);
            }
        }
        match (starts.is_empty(), last) {
            (true, _) => vec![],
            (false, None) | (false, Some(0)) => vec![0],
            (false, Some(i)) => vec![i - 1, i],
        }
    }

    #[test]
    fn middle_timestamp() {
        let w = select_context(&transcript(&[0.0, 5.0, 10.0]), 7.0);
        assert_eq!(texts(&w), ["s0", "s1"]);
        assert_eq!(w.text, "s0 s1");
    }

    #[test]
    fn at_zero_only_first() {
        assert_eq!(texts(&select_context(&transcript(&[0.0, 5.0, 10.0]), 0.0)), ["s0"]);
    }

    #[test]
    fn before_first_start_falls_back() {
        let w = select_context(&transcript(&[3.0, 5.0]), 1.0);
        assert_eq!(texts(&w), ["s0"]);
        assert!(w.before_first);
    }

    #[test]
    fn empty_transcript_empty_window() {
        let w = select_context(&transcript(&[]), 4.0);
        assert!(w.sentences.is_empty() && w.text.is_empty());
    }

    #[test]
    fn anchors_consecutive_duplicates_collapse() {
        let t = transcript(&[0.0, 5.0, 10.0]);
        assert_eq!(texts(&context_for_times(&t, &[7.0, 12.0])), ["s0", "s1", "s2"]);
        assert_eq!(texts(&context_for_times(&t, &[7.0, 7.0])), ["s0", "s1"]);
    }

    #[test]
    fn validation_catches_unsorted() {
        assert!(transcript(&[5.0, 0.0]).validate().is_err());
        assert!(transcript(&[0.0, 0.0, 3.0]).validate().is_ok());
    }

    #[test]
    fn webvtt_cues() {
        let raw = "WEBVTT - Sketching basics\nKind: captions\n\n1\n00:00:01.000 --> 00:00:04.500 align:start\n<v Speaker>Start a new sketch.</v>\n\nNOTE ignore me\nstill note\n\n00:05.000 --> 00:07.250\nPick the top plane\nand draw a circle.\n";
        let t = parse_webvtt(raw, "vid").unwrap();
        assert_eq!(t.title, "Sketching basics");
        assert_eq!(t.sentences.len(), 2);
        assert_eq!(t.sentences[0].text, "Start a new sketch.");
        assert_eq!(t.sentences[0].start_s, 1.0);
        assert_eq!(t.sentences[1].text, "Pick the top plane and draw a circle.");
        assert_eq!(t.sentences[1].end_s, 7.25);
    }

    #[test]
    fn webvtt_requires_signature() {
        assert!(parse_webvtt("hello", "v").is_err());
    }

    proptest! {
        #[test]
        fn matches_linear_scan(
            mut starts in proptest::collection::vec(0.0f64..100.0, 0..20),
            t in 0.0f64..120.0,
        ) {
            starts.sort_by(f64::total_cmp);
            let tr = transcript(&starts);
            let got: Vec<f64> = select_context(&tr, t).sentences.iter().map(|s| s.start_s).collect();
            let want: Vec<f64> = oracle(&starts, t).into_iter().map(|i| starts[i]).collect();
            prop_assert_eq!(got, want);
        }
    }
}
