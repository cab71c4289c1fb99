//! The layered summary graph and its configuration.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedderConfig, Embedding, DEFAULT_MOCK_DIM};
use crate::error::{Error, Result};
use crate::lsh::{sample_hyperplanes, HashCode, Hyperplanes};
use crate::partition::SizeBounds;
use crate::summarize::{token_count, LlmConfig, MIN_SUMMARY_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Monotonic id source owned by a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn new(next: u64) -> Self {
        Self { next }
    }

    pub fn allocate(&mut self) -> NodeId {
        let id = NodeId(self.next);
        self.next += 1;
        id
    }

    pub fn peek(&self) -> u64 {
        self.next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub id: NodeId,
    pub text: String,
    pub token_len: usize,
    pub source_doc: String,
    pub origin: Origin,
}

impl Chunk {
    pub fn new(id: NodeId, text: String, source_doc: String, origin: Origin) -> Self {
        Self {
            id,
            token_len: token_count(&text),
            text,
            source_doc,
            origin,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: NodeId,
    pub layer: usize,
    pub chunk: Chunk,
    pub embedding: Embedding,
    pub code: HashCode,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// The summarizer overshot its budget and the text was cut.
    pub truncated: bool,
}

/// When to stop adding summary layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopRule {
    /// Summarize while the top layer has more than one node; stop after
    /// summarizing a layer of at most `s_max` nodes.
    Smax,
    /// Summarize while the top layer has at least `dim + 1` nodes.
    Dim,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildConfig {
    pub bounds: SizeBounds,
    pub hyperplanes: usize,
    pub chunk_tokens: usize,
    pub summary_tokens: usize,
    /// Highest layer index allowed; a graph has at most `max_depth + 1` layers.
    pub max_depth: usize,
    pub seed: u64,
    pub stop_rule: StopRule,
    pub embedder: EmbedderConfig,
    pub summarizer: LlmConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            bounds: SizeBounds::new(4, 8).expect("default bounds are valid"),
            hyperplanes: 8,
            chunk_tokens: 128,
            summary_tokens: 96,
            max_depth: 5,
            seed: 0,
            stop_rule: StopRule::Smax,
            embedder: EmbedderConfig::mock(0, DEFAULT_MOCK_DIM),
            summarizer: LlmConfig::Mock,
        }
    }
}

impl BuildConfig {
    pub fn dim(&self) -> usize {
        self.embedder.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.hyperplanes == 0 {
            return Err(Error::Config("hyperplane count must be positive".into()));
        }
        if self.chunk_tokens < 16 {
            return Err(Error::Config(format!(
                "chunk budget must be >= 16 tokens (got {})",
                self.chunk_tokens
            )));
        }
        if self.summary_tokens < MIN_SUMMARY_BUDGET {
            return Err(Error::Config(format!(
                "summary budget must be >= {MIN_SUMMARY_BUDGET} tokens (got {})",
                self.summary_tokens
            )));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max depth must be at least 1".into()));
        }
        self.embedder.validate()?;
        self.summarizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredGraph {
    pub(crate) config: BuildConfig,
    pub(crate) hyperplanes: Hyperplanes,
    pub(crate) layers: Vec<Vec<NodeId>>,
    pub(crate) nodes: BTreeMap<NodeId, GraphNode>,
    pub(crate) ids: IdAllocator,
}

impl LayeredGraph {
    /// An unbuilt graph: hyperplanes sampled, no layers.
    pub fn new(config: BuildConfig) -> Result<Self> {
        config.validate()?;
        let hyperplanes = sample_hyperplanes(config.seed, config.dim(), config.hyperplanes)?;
        Ok(Self {
            config,
            hyperplanes,
            layers: Vec::new(),
            nodes: BTreeMap::new(),
            ids: IdAllocator::new(0),
        })
    }

    pub(crate) fn from_parts(
        config: BuildConfig,
        hyperplanes: Hyperplanes,
        layers: Vec<Vec<NodeId>>,
        nodes: BTreeMap<NodeId, GraphNode>,
        next_id: u64,
    ) -> Self {
        Self {
            config,
            hyperplanes,
            layers,
            nodes,
            ids: IdAllocator::new(next_id),
        }
    }

    pub fn config(&self) -> &BuildConfig {
        &self.config
    }

    pub fn hyperplanes(&self) -> &Hyperplanes {
        &self.hyperplanes
    }

    pub fn layers(&self) -> &[Vec<NodeId>] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }

    pub fn is_built(&self) -> bool {
        !self.layers.is_empty()
    }

    /// Index of the highest layer; `None` before build.
    pub fn top_layer(&self) -> Option<usize> {
        self.layers.len().checked_sub(1)
    }

    pub fn node(&self, id: NodeId) -> Option<&GraphNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn next_id(&self) -> u64 {
        self.ids.peek()
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> &mut GraphNode {
        self.nodes.get_mut(&id).expect("node id tracked by the graph")
    }

    /// Layer-0 nodes in insertion order.
    pub fn leaves(&self) -> impl Iterator<Item = &GraphNode> {
        self.layers.first().into_iter().flatten().map(|id| &self.nodes[id])
    }
}
