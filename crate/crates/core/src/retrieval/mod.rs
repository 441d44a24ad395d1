//! Documentation and tutorial retrieval: chunking, embedding, exact cosine
//! ranking and prompt-budget selection.

pub mod chunk;
pub mod corpus;
pub mod embed;
pub mod index;
pub mod tokens;

use std::path::PathBuf;

use thiserror::Error;

pub use chunk::{chunk_document, DEFAULT_CHUNK_LIMIT};
pub use corpus::load_corpus_dir;
pub use embed::HashedBagOfWords;
pub use index::{
    index_corpus, load_index, query, query_embedding, rank_order, save_index, select_within_budget,
    select_within_budget_by, ArticleChunk, ChunkKind, CorpusIndex, Document, IndexBuild, ScoredChunk,
    DEFAULT_RETRIEVAL_K,
};
pub use tokens::{TokenCounter, WhitespaceTokenCounter};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("unembeddable query")]
    UnembeddableQuery,
    #[error("embedding failed: {0}")]
    Embedding(String),
    #[error("embedding dimension {found} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{failed} of {total} documents failed to embed")]
    TooManyFailures { failed: usize, total: usize, warnings: Vec<String> },
    #[error("index not found: {0}")]
    NotFound(PathBuf),
    #[error("corpus directory not found: {0}")]
    MissingCorpus(PathBuf),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("unsupported index format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Loads `dir` with [`load_corpus_dir`] and indexes it. Loader warnings
/// precede indexing warnings.
pub fn build_index_from_dir(
    dir: &std::path::Path,
    counter: &dyn TokenCounter,
    embedder: &dyn crate::clients::EmbeddingClient,
    chunk_limit: usize,
    built_at: u64,
) -> Result<IndexBuild, RetrievalError> {
    let (docs, mut warnings) = load_corpus_dir(dir)?;
    let mut build = index_corpus(&docs, counter, embedder, chunk_limit, built_at)?;
    warnings.append(&mut build.warnings);
    build.warnings = warnings;
    Ok(build)
}

/// Query text: the question followed by each anchor description, separated
/// by single spaces. Descriptions are expected in label order.
pub fn compose_query<'a>(question: &'a str, descriptions: impl IntoIterator<Item = &'a str>) -> String {
    let mut parts = vec![question.trim()];
    parts.extend(descriptions.into_iter().map(str::trim).filter(|d| !d.is_empty()));
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_composition_order() {
        assert_eq!(
            compose_query("How do I do this with #Anchor1?", ["a menu.", " It includes text: Extrude. "]),
            "How do I do this with #Anchor1? a menu. It includes text: Extrude."
        );
    }
}
