//! Static construction: chunk, embed, hash, segment, and summarize layer by
//! layer until the stop rule fires.

use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::graph::{BuildConfig, Chunk, GraphNode, IdAllocator, LayeredGraph, NodeId, Origin, StopRule};
use crate::lsh::{hash_vector, HashCode};
use crate::metrics::{CostLedger, Event, Phase};
use crate::partition::{assign_buckets, repartition};
use crate::summarize::{MockSummarizer, Summarizer, SummaryOutput, SummaryRequest};

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Reads JSONL records `{"id": ..., "text": ...}` in file order; blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| Error::Input(format!("corpus line {}: {e}", n + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file))
}

/// Splits every document into consecutive windows of `chunk_budget` tokens.
/// Chunk ids are assigned 0, 1, 2, ... in corpus order.
pub fn chunk_corpus(docs: &[Document], chunk_budget: usize) -> Result<Vec<Chunk>> {
    chunk_documents(docs, chunk_budget, &mut IdAllocator::new(0))
}

pub(crate) fn chunk_documents(docs: &[Document], chunk_budget: usize, ids: &mut IdAllocator) -> Result<Vec<Chunk>> {
    if chunk_budget < 16 {
        return Err(Error::Config(format!(
            "chunk budget must be >= 16 tokens (got {chunk_budget})"
        )));
    }
    if docs.is_empty() {
        return Err(Error::Input("corpus is empty".into()));
    }
    let mut chunks = Vec::new();
    for doc in docs {
        let tokens: Vec<&str> = doc.text.split_whitespace().collect();
        for window in tokens.chunks(chunk_budget) {
            chunks.push(Chunk::new(
                ids.allocate(),
                window.join(" "),
                doc.id.clone(),
                Origin::Original,
            ));
        }
    }
    if chunks.is_empty() {
        return Err(Error::Input("corpus contains no tokens".into()));
    }
    Ok(chunks)
}

/// The embedding and summarization backends a graph operation calls.
pub struct Providers {
    pub embedder: Box<dyn Embedder>,
    pub summarizer: Box<dyn Summarizer>,
}

impl Providers {
    pub fn new(embedder: Box<dyn Embedder>, summarizer: Box<dyn Summarizer>) -> Self {
        Self { embedder, summarizer }
    }

    /// Instantiates the providers named in `config`. `embed_cache` is where a
    /// remote embedder persists its response cache.
    pub fn from_config(config: &BuildConfig, embed_cache: Option<&Path>) -> Result<Self> {
        Ok(Self {
            embedder: config.embedder.build(embed_cache)?,
            summarizer: config.summarizer.summarizer()?,
        })
    }

    /// Offline providers: the mock embedder from `config` plus the extractive summarizer.
    pub fn mock(config: &BuildConfig) -> Result<Self> {
        let mut cfg = config.embedder.clone();
        if let crate::embed::EmbedderKind::Remote { .. } = cfg.kind {
            cfg.kind = crate::embed::EmbedderKind::Mock { seed: 0 };
        }
        Ok(Self {
            embedder: cfg.build(None)?,
            summarizer: Box::new(MockSummarizer),
        })
    }
}

const EMBED_BATCH: usize = 64;

/// Metered access to providers for one graph.
pub(crate) struct Pipeline<'a> {
    pub providers: &'a Providers,
    pub ledger: &'a CostLedger,
}

impl Pipeline<'_> {
    /// Embeds and hashes `texts`; costs are tagged with `layer`.
    pub fn embed_and_hash(
        &self,
        graph: &LayeredGraph,
        texts: &[&str],
        layer: usize,
    ) -> Result<Vec<(Embedding, HashCode)>> {
        let dim = graph.config.dim();
        let batches: Vec<Vec<Embedding>> = texts
            .par_chunks(EMBED_BATCH)
            .map(|batch| {
                let out = self.providers.embedder.embed_batch(batch)?;
                self.ledger.record(
                    Event::Embed {
                        texts: batch.len() as u64,
                    },
                    Default::default(),
                    Some(layer),
                )?;
                Ok(out)
            })
            .collect::<Result<_>>()?;
        batches
            .into_iter()
            .flatten()
            .map(|e| {
                if e.dim() != dim {
                    return Err(Error::provider(
                        format!("embedder returned dim {}, graph expects {dim}", e.dim()),
                        1,
                        false,
                    ));
                }
                let code = hash_vector(e.values(), &graph.hyperplanes)?;
                Ok((e, code))
            })
            .collect()
    }

    /// Summarizes each member list concurrently; results keep input order.
    pub fn summarize_all(&self, groups: &[Vec<String>], budget: usize, layer: usize) -> Result<Vec<SummaryOutput>> {
        groups
            .par_iter()
            .map(|members| {
                let req = SummaryRequest::new(members.clone(), budget)?;
                let out = self.providers.summarizer.summarize(&req)?;
                self.ledger.record(Event::Summarize, out.usage, Some(layer))?;
                Ok(out)
            })
            .collect()
    }

    /// Appends `chunks` to layer 0 after embedding and hashing them.
    pub fn add_leaves(&self, graph: &mut LayeredGraph, chunks: Vec<Chunk>) -> Result<Vec<NodeId>> {
        let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
        let coded = self.embed_and_hash(graph, &texts, 0)?;
        if graph.layers.is_empty() {
            graph.layers.push(Vec::new());
        }
        let mut ids = Vec::with_capacity(chunks.len());
        for (chunk, (embedding, code)) in chunks.into_iter().zip(coded) {
            let id = chunk.id;
            graph.nodes.insert(
                id,
                GraphNode {
                    id,
                    layer: 0,
                    chunk,
                    embedding,
                    code,
                    parent: None,
                    children: Vec::new(),
                    truncated: false,
                },
            );
            graph.layers[0].push(id);
            ids.push(id);
        }
        Ok(ids)
    }

    /// Creates summary nodes at `layer` for the given child lists, in order,
    /// using the pre-assigned `ids`. Children get their parent link set.
    pub fn create_parents(
        &self,
        graph: &mut LayeredGraph,
        layer: usize,
        ids: &[NodeId],
        child_lists: &[Vec<NodeId>],
    ) -> Result<Vec<GraphNode>> {
        let texts: Vec<Vec<String>> = child_lists
            .iter()
            .map(|kids| kids.iter().map(|k| graph.nodes[k].chunk.text.clone()).collect())
            .collect();
        let summaries = self.summarize_all(&texts, graph.config.summary_tokens, layer)?;
        let summary_texts: Vec<&str> = summaries.iter().map(|s| s.text.as_str()).collect();
        let coded = self.embed_and_hash(graph, &summary_texts, layer)?;
        let mut created = Vec::with_capacity(ids.len());
        for (((id, kids), summary), (embedding, code)) in ids.iter().zip(child_lists).zip(&summaries).zip(coded) {
            for k in kids {
                graph.node_mut(*k).parent = Some(*id);
            }
            created.push(GraphNode {
                id: *id,
                layer,
                chunk: Chunk::new(*id, summary.text.clone(), String::new(), Origin::Summary),
                embedding,
                code,
                parent: None,
                children: kids.clone(),
                truncated: summary.truncated,
            });
        }
        Ok(created)
    }

    /// Segments layer `layer` from scratch and adds the summary layer above it.
    pub fn summarize_layer(&self, graph: &mut LayeredGraph, layer: usize) -> Result<()> {
        let coded: Vec<(NodeId, HashCode)> = graph.layers[layer]
            .iter()
            .map(|id| (*id, graph.nodes[id].code.clone()))
            .collect();
        let buckets = assign_buckets(&coded)?;
        let segments = repartition(&buckets, graph.config.bounds, &mut graph.ids);
        let ids: Vec<NodeId> = segments.iter().map(|s| s.id).collect();
        let kids: Vec<Vec<NodeId>> = segments.into_iter().map(|s| s.member_ids).collect();
        let parents = self.create_parents(graph, layer + 1, &ids, &kids)?;
        graph.layers.push(ids);
        for p in parents {
            graph.nodes.insert(p.id, p);
        }
        Ok(())
    }

    /// Adds summary layers on top until the stop rule fires.
    pub fn grow(&self, graph: &mut LayeredGraph) -> Result<usize> {
        let mut added = 0;
        loop {
            let top = graph.layers.len() - 1;
            let n = graph.layers[top].len();
            if top >= graph.config.max_depth || n <= 1 {
                break;
            }
            if graph.config.stop_rule == StopRule::Dim && n < graph.config.dim() + 1 {
                break;
            }
            self.summarize_layer(graph, top)?;
            added += 1;
            if graph.config.stop_rule == StopRule::Smax && n <= graph.config.bounds.s_max() {
                break;
            }
        }
        Ok(added)
    }
}

/// Whether a top layer of `n` nodes warrants another summary layer during updates.
pub(crate) fn top_needs_growth(config: &BuildConfig, top: usize, n: usize) -> bool {
    if top >= config.max_depth {
        return false;
    }
    match config.stop_rule {
        StopRule::Smax => n > config.bounds.s_max(),
        StopRule::Dim => n > 1 && n > config.dim(),
    }
}

/// Builds the full graph for `docs`, metering every provider call under the
/// build phase of `ledger`.
pub fn build_graph(
    docs: &[Document],
    config: BuildConfig,
    providers: &Providers,
    ledger: &CostLedger,
) -> Result<LayeredGraph> {
    let mut graph = LayeredGraph::new(config)?;
    if providers.embedder.dim() != graph.config.dim() {
        return Err(Error::Config(format!(
            "embedder produces dim {}, config says {}",
            providers.embedder.dim(),
            graph.config.dim()
        )));
    }
    let _phase = ledger.begin(Phase::Build)?;
    let chunks = chunk_documents(docs, graph.config.chunk_tokens, &mut graph.ids)?;
    let pipeline = Pipeline { providers, ledger };
    pipeline.add_leaves(&mut graph, chunks)?;
    pipeline.grow(&mut graph)?;
    Ok(graph)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub layer: usize,
    pub nodes: usize,
    /// Mean size of the segments this layer is grouped into; `None` for the top layer.
    pub mean_segment_size: Option<f64>,
    pub tokens: usize,
}

pub fn layer_stats(graph: &LayeredGraph) -> Result<Vec<LayerStats>> {
    if !graph.is_built() {
        return Err(Error::Input("graph has no layers".into()));
    }
    Ok(graph
        .layers
        .iter()
        .enumerate()
        .map(|(l, ids)| {
            let tokens = ids.iter().map(|id| graph.nodes[id].chunk.token_len).sum();
            let mean_segment_size = graph
                .layers
                .get(l + 1)
                .and_then(|parents| (!parents.is_empty()).then(|| ids.len() as f64 / parents.len() as f64));
            LayerStats {
                layer: l,
                nodes: ids.len(),
                mean_segment_size,
                tokens,
            }
        })
        .collect())
}
