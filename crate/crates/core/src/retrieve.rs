//! Collapsed top-k search over every node, optional leaf/summary biasing,
//! context assembly under a token budget, and answer generation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{cosine, Embedder};
use crate::error::{Error, Result};
use crate::graph::{LayeredGraph, NodeId};
use crate::metrics::{CostLedger, Event, Phase};
use crate::remote::OpenAiClient;
use crate::summarize::{token_count, LlmConfig, TokenUsage};

/// Separator between retrieved texts in the assembled context.
pub const CONTEXT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Collapsed,
    /// `floor(p*k)` hits from the leaves, the rest from summaries.
    Detailed,
    /// `floor(p*k)` hits from summaries, the rest from the leaves.
    Summarized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryConfig {
    pub k: usize,
    pub budget_tokens: usize,
    pub mode: Mode,
    pub p: Option<f64>,
}

impl QueryConfig {
    pub fn collapsed(k: usize, budget_tokens: usize) -> Self {
        Self {
            k,
            budget_tokens,
            mode: Mode::Collapsed,
            p: None,
        }
    }

    pub fn biased(mode: Mode, k: usize, budget_tokens: usize, p: f64) -> Self {
        Self {
            k,
            budget_tokens,
            mode,
            p: Some(p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Input("k must be positive".into()));
        }
        if self.budget_tokens == 0 {
            return Err(Error::Input("token budget must be positive".into()));
        }
        if self.mode != Mode::Collapsed {
            match self.p {
                Some(p) if (0.0..=1.0).contains(&p) => {}
                Some(p) => return Err(Error::Input(format!("p must lie in [0, 1] (got {p})"))),
                None => return Err(Error::Input("biased modes require p".into())),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: NodeId,
    pub score: f64,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    pub context: String,
    pub answer: Option<String>,
    /// Set when retrieval succeeded but generation failed.
    pub answer_error: Option<String>,
    pub usage: TokenUsage,
}

fn rank(hits: &mut [Hit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
}

/// Exact cosine top-k over the nodes whose layer passes `layers` (all when `None`).
pub fn top_k(graph: &LayeredGraph, query: &[f32], k: usize, layers: Option<&BTreeSet<usize>>) -> Result<Vec<Hit>> {
    if k == 0 {
        return Err(Error::Input("k must be positive".into()));
    }
    if query.len() != graph.config.dim() {
        return Err(Error::Input(format!(
            "query has dim {}, graph has {}",
            query.len(),
            graph.config.dim()
        )));
    }
    let mut hits: Vec<Hit> = graph
        .nodes
        .values()
        .filter(|n| layers.is_none_or(|set| set.contains(&n.layer)))
        .map(|n| Hit {
            id: n.id,
            score: cosine(query, n.embedding.values()),
            layer: n.layer,
        })
        .collect();
    rank(&mut hits);
    hits.truncate(k);
    Ok(hits)
}

/// Leaf-pool and summary-pool hits for a biased query, with shortfall of
/// one pool filled from the other.
fn biased(graph: &LayeredGraph, query: &[f32], cfg: &QueryConfig) -> Result<Vec<Hit>> {
    let (mut leaves, mut upper): (Vec<Hit>, Vec<Hit>) = top_k(graph, query, usize::MAX, None)?
        .into_iter()
        .partition(|h| h.layer == 0);
    let primary = (cfg.p.unwrap_or(0.0) * cfg.k as f64).floor() as usize;
    let (first, second) = match cfg.mode {
        Mode::Summarized => (&mut upper, &mut leaves),
        _ => (&mut leaves, &mut upper),
    };
    let mut a = primary.min(first.len());
    let b = (cfg.k - a).min(second.len());
    if a + b < cfg.k {
        a = (cfg.k - b).min(first.len());
    }
    first.truncate(a);
    second.truncate(b);
    let mut hits: Vec<Hit> = first.drain(..).chain(second.drain(..)).collect();
    rank(&mut hits);
    Ok(hits)
}

/// Hit texts in rank order, stopping before the first one that would push
/// the total past `budget` tokens.
pub fn assemble_context(graph: &LayeredGraph, hits: &[Hit], budget: usize) -> String {
    let mut used = 0;
    let mut parts = Vec::new();
    for h in hits {
        let chunk = &graph.nodes[&h.id].chunk;
        if used + chunk.token_len > budget {
            break;
        }
        used += chunk.token_len;
        parts.push(chunk.text.as_str());
    }
    parts.join(CONTEXT_SEPARATOR)
}

fn retrieve_inner(
    graph: &LayeredGraph,
    query: &str,
    cfg: &QueryConfig,
    embedder: &dyn Embedder,
    ledger: &CostLedger,
) -> Result<RetrievalResult> {
    cfg.validate()?;
    if !graph.is_built() || graph.node_count() == 0 {
        return Err(Error::Input("graph is empty".into()));
    }
    let q = embedder.embed_text(query)?;
    ledger.record(Event::Embed { texts: 1 }, TokenUsage::default(), None)?;
    let hits = match cfg.mode {
        Mode::Collapsed => top_k(graph, q.values(), cfg.k, None)?,
        _ => biased(graph, q.values(), cfg)?,
    };
    let context = assemble_context(graph, &hits, cfg.budget_tokens);
    Ok(RetrievalResult {
        hits,
        context,
        answer: None,
        answer_error: None,
        usage: TokenUsage::default(),
    })
}

/// Retrieves hits and context for `query` under phase `query` of `ledger`.
pub fn retrieve(
    graph: &LayeredGraph,
    query: &str,
    cfg: &QueryConfig,
    embedder: &dyn Embedder,
    ledger: &CostLedger,
) -> Result<RetrievalResult> {
    let _phase = ledger.begin(Phase::Query)?;
    retrieve_inner(graph, query, cfg, embedder, ledger)
}

/// Retrieves, then asks `generator` to answer from the context. A generation
/// failure is reported in `answer_error` with the retrieval kept.
pub fn answer(
    graph: &LayeredGraph,
    query: &str,
    cfg: &QueryConfig,
    embedder: &dyn Embedder,
    generator: &dyn Generator,
    ledger: &CostLedger,
) -> Result<RetrievalResult> {
    let _phase = ledger.begin(Phase::Query)?;
    let mut result = retrieve_inner(graph, query, cfg, embedder, ledger)?;
    match generator.generate(query, &result.context) {
        Ok((text, usage)) => {
            ledger.record(Event::Generate, usage, None)?;
            result.answer = Some(text);
            result.usage = usage;
        }
        Err(e) => result.answer_error = Some(e.to_string()),
    }
    Ok(result)
}

pub fn query_prompt(query: &str, context: &str) -> String {
    format!("Given external context:{context}\nGive the best full answer amongst the option to question:{query}")
}

pub trait Generator: Send + Sync {
    fn generate(&self, query: &str, context: &str) -> Result<(String, TokenUsage)>;
}

/// Answers with `mock_answer(query, context)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockGenerator;

/// Lowercase hex SHA-256 of `query`, a zero byte, then `context`.
pub fn mock_answer(query: &str, context: &str) -> String {
    let mut h = Sha256::new();
    h.update(query.as_bytes());
    h.update([0u8]);
    h.update(context.as_bytes());
    hex::encode(h.finalize())
}

impl Generator for MockGenerator {
    fn generate(&self, query: &str, context: &str) -> Result<(String, TokenUsage)> {
        let prompt = token_count(&query_prompt(query, context)) as u64;
        Ok((mock_answer(query, context), TokenUsage::new(prompt, 1)))
    }
}

#[derive(Debug)]
pub struct RemoteGenerator {
    client: OpenAiClient,
    model: String,
}

impl RemoteGenerator {
    pub fn new(client: OpenAiClient, model: String) -> Self {
        Self { client, model }
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, query: &str, context: &str) -> Result<(String, TokenUsage)> {
        let prompt = query_prompt(query, context);
        let (text, usage) = self.client.chat(&self.model, &prompt, None)?;
        let usage = match usage {
            Some(u) => TokenUsage::new(u.prompt_tokens, u.completion_tokens),
            None => TokenUsage::new(token_count(&prompt) as u64, token_count(&text) as u64),
        };
        Ok((text, usage))
    }
}

/// The generator for an LLM config: mock or chat-completions.
pub fn generator_for(config: &LlmConfig) -> Result<Box<dyn Generator>> {
    Ok(match config.client()? {
        None => Box::new(MockGenerator),
        Some((client, model)) => Box::new(RemoteGenerator::new(client, model)),
    })
}
