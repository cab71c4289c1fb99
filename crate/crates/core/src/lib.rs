//! Incremental hierarchical summary graphs for retrieval over growing corpora.
//!
//! Chunks are embedded, hashed with random hyperplanes, grouped into
//! size-bounded segments by hash code, and summarized layer by layer. New
//! chunks only re-summarize the segments their codes land in, plus ancestors.

pub mod bench;
pub mod build;
pub mod embed;
pub mod error;
pub mod graph;
pub mod lsh;
pub mod metrics;
pub mod partition;
pub mod persist;
pub mod remote;
pub mod retrieve;
pub mod summarize;
pub mod synth;
pub mod update;
pub mod verify;

pub use build::{
    build_graph, chunk_corpus, layer_stats, read_corpus, read_corpus_file, Document, LayerStats, Providers,
};
pub use embed::{Embedder, EmbedderConfig, EmbedderKind, Embedding, MockEmbedder};
pub use error::{Error, Result};
pub use graph::{BuildConfig, Chunk, GraphNode, LayeredGraph, NodeId, Origin, StopRule};
pub use lsh::{HashCode, Hyperplanes};
pub use metrics::{CostLedger, Phase, ReportFormat};
pub use partition::SizeBounds;
pub use persist::{load_snapshot, save_snapshot};
pub use retrieve::{answer, retrieve, top_k, Generator, Hit, MockGenerator, Mode, QueryConfig, RetrievalResult};
pub use summarize::{LlmConfig, MockSummarizer, Summarizer, TokenUsage};
pub use update::{affected_closure, insert_chunks, SharedIndex, UpdateReport};
pub use verify::{check_graph, verify_graph, Violation};
