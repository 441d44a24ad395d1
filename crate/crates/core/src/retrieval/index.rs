use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::chunk::chunk_document;
use super::tokens::TokenCounter;
use super::RetrievalError;
use crate::clients::EmbeddingClient;
use crate::vision::descriptor::normalize_in_place;

pub const INDEX_FORMAT: &str = "aqua-index";
pub const INDEX_VERSION: u32 = 1;
pub const DEFAULT_RETRIEVAL_K: usize = 50;
/// Abort an index build when more than this fraction of documents fail.
const MAX_FAILURE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Documentation,
    TutorialTranscript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub uri: String,
    pub kind: ChunkKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleChunk {
    pub id: String,
    pub source_uri: String,
    pub kind: ChunkKind,
    pub token_count: usize,
    pub text: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    pub chunks: Vec<ArticleChunk>,
    pub dim: usize,
    pub embed_backend_id: String,
    /// Seconds since the Unix epoch, supplied by the caller so that builds
    /// can be reproduced byte for byte.
    pub built_at: u64,
}

impl CorpusIndex {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

#[derive(Debug)]
pub struct IndexBuild {
    pub index: CorpusIndex,
    pub warnings: Vec<String>,
}

/// Chunks and embeds each document in order. A document whose chunks cannot
/// all be embedded is skipped with a warning; the build aborts when more
/// than 10% of documents are skipped that way.
pub fn index_corpus(
    documents: &[Document],
    counter: &dyn TokenCounter,
    embedder: &dyn EmbeddingClient,
    chunk_limit: usize,
    built_at: u64,
) -> Result<IndexBuild, RetrievalError> {
    let mut chunks = Vec::new();
    let mut warnings = Vec::new();
    let mut failures = 0usize;
    let mut dim = embedder.dim();
    let mut seen_uris = HashSet::new();

    for doc in documents {
        if !seen_uris.insert(doc.uri.as_str()) {
            warnings.push(format!("{}: duplicate document uri, skipped", doc.uri));
            continue;
        }
        let texts = chunk_document(&doc.text, counter, chunk_limit);
        let mut doc_chunks = Vec::with_capacity(texts.len());
        let mut failed = None;
        for (ordinal, text) in texts.into_iter().enumerate() {
            let mut embedding = match embedder.embed(&text) {
                Ok(v) => v,
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            };
            if dim == 0 {
                dim = embedding.len();
            }
            if embedding.len() != dim {
                failed = Some(format!("embedding has {} dims, index has {dim}", embedding.len()));
                break;
            }
            if normalize_in_place(&mut embedding) == 0.0 {
                failed = Some(format!("chunk {ordinal} embeds to the zero vector"));
                break;
            }
            doc_chunks.push(ArticleChunk {
                id: format!("{}#{ordinal}", doc.uri),
                source_uri: doc.uri.clone(),
                kind: doc.kind,
                token_count: counter.count(&text),
                text,
                embedding,
            });
        }
        match failed {
            Some(reason) => {
                failures += 1;
                warnings.push(format!("{}: skipped: {reason}", doc.uri));
            }
            None => chunks.extend(doc_chunks),
        }
    }

    if !documents.is_empty() && failures as f64 > MAX_FAILURE_FRACTION * documents.len() as f64 {
        return Err(RetrievalError::TooManyFailures { failed: failures, total: documents.len(), warnings });
    }
    Ok(IndexBuild {
        index: CorpusIndex { chunks, dim, embed_backend_id: embedder.backend_id(), built_at },
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredChunk<'a> {
    pub chunk: &'a ArticleChunk,
    pub cosine: f64,
}

/// Cosine descending, then chunk id ascending.
pub fn rank_order(a: &ScoredChunk<'_>, b: &ScoredChunk<'_>) -> Ordering {
    b.cosine.total_cmp(&a.cosine).then_with(|| a.chunk.id.cmp(&b.chunk.id))
}

/// Exact top-`k` chunks by cosine similarity to the query text.
pub fn query<'a>(
    index: &'a CorpusIndex,
    query_text: &str,
    embedder: &dyn EmbeddingClient,
    k: usize,
) -> Result<Vec<ScoredChunk<'a>>, RetrievalError> {
    let mut q = embedder.embed(query_text).map_err(|e| RetrievalError::Embedding(e.to_string()))?;
    if normalize_in_place(&mut q) == 0.0 {
        return Err(RetrievalError::UnembeddableQuery);
    }
    if !index.is_empty() && q.len() != index.dim {
        return Err(RetrievalError::DimensionMismatch { expected: index.dim, found: q.len() });
    }
    Ok(query_embedding(index, &q, k))
}

/// Ranks against an already normalized query vector.
pub fn query_embedding<'a>(index: &'a CorpusIndex, q: &[f64], k: usize) -> Vec<ScoredChunk<'a>> {
    let mut scored: Vec<ScoredChunk<'a>> = index
        .chunks
        .iter()
        .map(|chunk| ScoredChunk { chunk, cosine: dot(q, &chunk.embedding) })
        .collect();
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Longest prefix whose token counts fit in `budget`; selection stops at the
/// first chunk that would overflow.
pub fn select_within_budget<'r, 'a>(ranked: &'r [ScoredChunk<'a>], budget: usize) -> &'r [ScoredChunk<'a>] {
    select_within_budget_by(ranked, budget, |c| c.chunk.token_count)
}

/// As [`select_within_budget`] with a caller-defined cost per item.
pub fn select_within_budget_by<T>(ranked: &[T], budget: usize, mut cost: impl FnMut(&T) -> usize) -> &[T] {
    let mut used = 0usize;
    for (i, item) in ranked.iter().enumerate() {
        let c = cost(item);
        match used.checked_add(c) {
            Some(total) if total <= budget => used = total,
            _ => return &ranked[..i],
        }
    }
    ranked
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    dim: usize,
    embed_backend_id: String,
    built_at: u64,
    chunks: usize,
}

pub fn save_index(index: &CorpusIndex, path: &Path) -> Result<(), RetrievalError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        let header = IndexHeader {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            dim: index.dim,
            embed_backend_id: index.embed_backend_id.clone(),
            built_at: index.built_at,
            chunks: index.chunks.len(),
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("serializable"))?;
        for chunk in &index.chunks {
            writeln!(out, "{}", serde_json::to_string(chunk).expect("serializable"))?;
        }
        out.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<CorpusIndex, RetrievalError> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(RetrievalError::NotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse = |line_no: usize, e: serde_json::Error| RetrievalError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    };
    let (_, first) = lines.next().ok_or_else(|| RetrievalError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty index file".into(),
    })?;
    let header: IndexHeader = serde_json::from_str(&first?).map_err(|e| parse(1, e))?;
    if header.format != INDEX_FORMAT || header.version != INDEX_VERSION {
        return Err(RetrievalError::Format(format!("{} v{}", header.format, header.version)));
    }
    let mut chunks = Vec::with_capacity(header.chunks);
    let mut ids = HashSet::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk: ArticleChunk = serde_json::from_str(&line).map_err(|e| parse(idx + 1, e))?;
        if chunk.embedding.len() != header.dim {
            return Err(RetrievalError::DimensionMismatch { expected: header.dim, found: chunk.embedding.len() });
        }
        if !ids.insert(chunk.id.clone()) {
            return Err(RetrievalError::Format(format!("duplicate chunk id {}", chunk.id)));
        }
        chunks.push(chunk);
    }
    if chunks.len() != header.chunks {
        return Err(RetrievalError::Format(format!(
            "header announces {} chunks, file has {}",
            header.chunks,
            chunks.len()
        )));
    }
    Ok(CorpusIndex { chunks, dim: header.dim, embed_backend_id: header.embed_backend_id, built_at: header.built_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::ClientError;
    use crate::retrieval::embed::HashedBagOfWords;
    use crate::retrieval::tokens::WhitespaceTokenCounter;

    fn docs() -> Vec<Document> {
        vec![
            Document { uri: "docs/extrude.html".into(), kind: ChunkKind::Documentation, text: "Extrude adds depth to a profile.\n\nSelect a sketch profile first.".into() },
            Document { uri: "docs/fillet.html".into(), kind: ChunkKind::Documentation, text: "Fillet rounds edges of a body.".into() },
            Document { uri: "tutorials/box.json".into(), kind: ChunkKind::TutorialTranscript, text: "Now we press E for extrude and drag the arrow up.".into() },
        ]
    }

    fn build() -> CorpusIndex {
        index_corpus(&docs(), &WhitespaceTokenCounter, &HashedBagOfWords::default(), 1600, 0).unwrap().index
    }

    #[test]
    fn empty_corpus_gives_empty_index() {
        let b = index_corpus(&[], &WhitespaceTokenCounter, &HashedBagOfWords::default(), 1600, 0).unwrap();
        assert!(b.index.is_empty());
        assert_eq!(b.index.dim, 256);
    }

    #[test]
    fn self_match_ranks_first() {
        let index = build();
        let hits = query(&index, "Fillet rounds edges of a body.", &HashedBagOfWords::default(), 50).unwrap();
        assert_eq!(hits[0].chunk.id, "docs/fillet.html#0");
        assert!((hits[0].cosine - 1.0).abs() < 1e-6);
        assert_eq!(hits.len(), 3);
    }

    #[test]
    fn k_is_capped() {
        let index = build();
        assert_eq!(query(&index, "extrude", &HashedBagOfWords::default(), 2).unwrap().len(), 2);
    }

    #[test]
    fn empty_query_is_unembeddable() {
        let index = build();
        assert!(matches!(
            query(&index, "", &HashedBagOfWords::default(), 5),
            Err(RetrievalError::UnembeddableQuery)
        ));
    }

    #[test]
    fn double_build_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        save_index(&build(), &a).unwrap();
        save_index(&build(), &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(load_index(&a).unwrap(), build());
    }

    #[test]
    fn load_rejects_dimension_disagreement() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.jsonl");
        save_index(&build(), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap().replacen("\"dim\":256", "\"dim\":128", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(load_index(&p), Err(RetrievalError::DimensionMismatch { .. })));
    }

    #[test]
    fn budget_examples() {
        let chunk = |n: usize| ArticleChunk {
            id: format!("c{n}"),
            source_uri: String::new(),
            kind: ChunkKind::Documentation,
            token_count: n,
            text: String::new(),
            embedding: vec![],
        };
        let make = |counts: &[usize]| counts.iter().map(|&n| chunk(n)).collect::<Vec<_>>();
        let a = make(&[4000, 3000, 2000]);
        let ranked: Vec<_> = a.iter().map(|c| ScoredChunk { chunk: c, cosine: 0.0 }).collect();
        assert_eq!(select_within_budget(&ranked, 8000).len(), 2);
        assert!(select_within_budget(&ranked, 0).is_empty());
        let b = make(&[5000, 4000, 100]);
        let ranked: Vec<_> = b.iter().map(|c| ScoredChunk { chunk: c, cosine: 0.0 }).collect();
        assert_eq!(select_within_budget(&ranked, 8192).len(), 1);
    }

    struct Flaky;
    impl EmbeddingClient for Flaky {
        fn backend_id(&self) -> String {
            "flaky".into()
        }
        fn dim(&self) -> usize {
            4
        }
        fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
            if text.contains("fail") {
                Err(ClientError::Http("500".into()))
            } else {
                Ok(vec![1.0, 0.0, 0.0, 0.0])
            }
        }
    }

    #[test]
    fn failures_skip_then_abort() {
        let mut docs: Vec<Document> = (0..20)
            .map(|i| Document { uri: format!("d{i}"), kind: ChunkKind::Documentation, text: format!("doc {i}") })
            .collect();
        docs[3].text = "please fail".into();
        let b = index_corpus(&docs, &WhitespaceTokenCounter, &Flaky, 100, 0).unwrap();
        assert_eq!(b.index.len(), 19);
        assert_eq!(b.warnings.len(), 1);
        docs[4].text = "fail too".into();
        docs[5].text = "fail three".into();
        assert!(matches!(
            index_corpus(&docs, &WhitespaceTokenCounter, &Flaky, 100, 0),
            Err(RetrievalError::TooManyFailures { failed: 3, total: 20, .. })
        ));
    }
}
