use std::fs;
use std::path::Path;

use scraper::{Html, Node};
use walkdir::WalkDir;

use super::index::{ChunkKind, Document};
use super::RetrievalError;
use crate::video_context::{load_transcript, parse_webvtt};

/// Top-level directories whose files are tutorial transcripts; everything
/// else is documentation.
const TRANSCRIPT_DIRS: &[&str] = &["transcripts", "tutorials"];

/// Loads every supported file under `dir` in path order. HTML is reduced to
/// its visible text, transcripts (`.json`, `.vtt`) to their sentences, and
/// `.txt`/`.md` are read verbatim. Unreadable files are reported as
/// warnings.
pub fn load_corpus_dir(dir: &Path) -> Result<(Vec<Document>, Vec<String>), RetrievalError> {
    if !dir.is_dir() {
        return Err(RetrievalError::MissingCorpus(dir.to_path_buf()));
    }
    let mut docs = Vec::new();
    let mut warnings = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name().into_iter().filter_map(Result::ok) {
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let rel = path.strip_prefix(dir).unwrap_or(path);
        let uri = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let top = rel.components().next().map(|c| c.as_os_str().to_string_lossy().to_lowercase());
        let in_transcripts = rel.components().count() > 1 && top.is_some_and(|t| TRANSCRIPT_DIRS.contains(&t.as_str()));
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).unwrap_or_default();
        let loaded = match ext.as_str() {
            "html" | "htm" => fs::read_to_string(path).map(|s| html_text(&s)).map_err(|e| e.to_string()),
            "txt" | "md" => fs::read_to_string(path).map_err(|e| e.to_string()),
            "json" => load_transcript(path).map(|t| transcript_text(&t)).map_err(|e| e.to_string()),
            "vtt" => fs::read_to_string(path)
                .map_err(|e| e.to_string())
                .and_then(|raw| parse_webvtt(&raw, &uri).map_err(|e| e.to_string()))
                .map(|t| transcript_text(&t)),
            _ => continue,
        };
        let kind = if in_transcripts || matches!(ext.as_str(), "vtt" | "json") {
            ChunkKind::TutorialTranscript
        } else {
            ChunkKind::Documentation
        };
        match loaded {
            Ok(text) if text.trim().is_empty() => warnings.push(format!("{uri}: no text")),
            Ok(text) => docs.push(Document { uri, kind, text }),
            Err(e) => warnings.push(format!("{uri}: {e}")),
        }
    }
    Ok((docs, warnings))
}

fn transcript_text(t: &crate::video_context::Transcript) -> String {
    t.sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// Visible text of an HTML page, one paragraph per text node. Script and
/// style contents are skipped.
pub fn html_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    let mut paras = Vec::new();
    for node in doc.tree.root().descendants() {
        let Node::Text(text) = node.value() else { continue };
        let hidden = node.ancestors().any(|a| {
            a.value().as_element().is_some_and(|e| matches!(e.name(), "script" | "style" | "head"))
        });
        if hidden {
            continue;
        }
        let t = text.split_whitespace().collect::<Vec<_>>().join(" ");
        if !t.is_empty() {
            paras.push(t);
        }
    }
    paras.join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn html_visible_text_only() {
        let t = html_text("<html><head><title>x</title><style>p{}</style></head><body><h1>Extrude</h1><p>Adds  depth.</p><script>var a;</script></body></html>");
        assert_eq!(t, "Extrude\n\nAdds depth.");
    }

    #[test]
    fn corpus_kinds_by_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("docs")).unwrap();
        fs::create_dir_all(dir.path().join("transcripts")).unwrap();
        fs::write(dir.path().join("docs/a.html"), "<p>Fillet rounds edges.</p>").unwrap();
        fs::write(dir.path().join("transcripts/b.txt"), "Now press E.").unwrap();
        fs::write(dir.path().join("notes.bin"), [0u8, 1, 2]).unwrap();
        let (docs, warnings) = load_corpus_dir(dir.path()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].uri, "docs/a.html");
        assert_eq!(docs[0].kind, ChunkKind::Documentation);
        assert_eq!(docs[1].kind, ChunkKind::TutorialTranscript);
    }

    #[test]
    fn missing_corpus_dir() {
        assert!(matches!(
            load_corpus_dir(Path::new("/nonexistent/corpus")),
            Err(RetrievalError::MissingCorpus(_))
        ));
    }
}
