//! Local search engine: sandboxed ingestion, text extraction, an inverted
//! index and TF-IDF retrieval.

mod extract;
mod index;
mod persist;
mod sandbox;
mod tokenize;

pub use extract::{html_to_text, ExtractError, Extractor, ExtractorRegistry, HtmlExtractor, PlainTextExtractor};
pub use index::{
    index_directory, DocRecord, IndexError, IndexReport, InvertedIndex, Posting, SearchHit, SNIPPET_CHARS,
};
pub use persist::{load_or_build, read_index, tree_fingerprint, write_index, PersistError, CACHE_MAGIC, CACHE_VERSION};
pub use sandbox::{SandboxError, SandboxRoot};
pub use tokenize::{tokenize, MAX_TOKEN_CHARS, MIN_TOKEN_CHARS};
