//! Growth protocols comparing localized updates against rebuilding from scratch.
//!
//! `half-plus-ten`: build on the first half of the documents, then add the
//! rest in ten batches. `one-entry`: build on all but the last document, then
//! add that one. The rebuild strategy runs a fresh build over the cumulative
//! corpus at every stage.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::build::{build_graph, Document, Providers};
use crate::error::{Error, Result};
use crate::graph::{BuildConfig, LayeredGraph};
use crate::metrics::{CostLedger, Counters, Phase};
use crate::update::{insert_chunks, UpdateReport};

pub const BENCH_CSV_HEADER: &str =
    "strategy,stage,docs,chunks,llm_calls,prompt_tokens,completion_tokens,embed_calls,wall_ms,cum_llm_calls,cum_tokens,cum_embed_calls";

pub const INSERT_ROUNDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    HalfPlusTen,
    OneEntry,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-plus-ten" => Ok(Protocol::HalfPlusTen),
            "one-entry" => Ok(Protocol::OneEntry),
            _ => Err(Error::Usage(format!("unknown protocol {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Strategy {
    Incremental,
    Rebuild,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Incremental => "incremental",
            Strategy::Rebuild => "rebuild",
        }
    }
}

/// Which strategies to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Rebuild,
    Incremental,
    Both,
}

impl Baseline {
    fn strategies(&self) -> Vec<Strategy> {
        match self {
            Baseline::Rebuild => vec![Strategy::Rebuild],
            Baseline::Incremental => vec![Strategy::Incremental],
            Baseline::Both => vec![Strategy::Incremental, Strategy::Rebuild],
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rebuild" => Ok(Baseline::Rebuild),
            "incremental" => Ok(Baseline::Incremental),
            "both" => Ok(Baseline::Both),
            _ => Err(Error::Usage(format!("unknown baseline {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRow {
    pub strategy: Strategy,
    pub stage: usize,
    /// Documents indexed after this stage.
    pub docs: usize,
    /// Leaf chunks after this stage.
    pub chunks: usize,
    pub cost: Counters,
    /// Totals over stages 0..=stage.
    pub cumulative: Counters,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub rows: Vec<StageRow>,
    pub updates: Vec<UpdateReport>,
    /// Final graph of each strategy run.
    pub graphs: Vec<(Strategy, LayeredGraph)>,
}

impl BenchResult {
    pub fn final_cumulative(&self, strategy: Strategy) -> Option<Counters> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.strategy == strategy)
            .map(|r| r.cumulative)
    }

    pub fn graph(&self, strategy: Strategy) -> Option<&LayeredGraph> {
        self.graphs.iter().find(|(s, _)| *s == strategy).map(|(_, g)| g)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(BENCH_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.strategy.as_str(),
                r.stage,
                r.docs,
                r.chunks,
                r.cost.llm_calls,
                r.cost.prompt_tokens,
                r.cost.completion_tokens,
                r.cost.embed_calls,
                r.cost.wall_ms,
                r.cumulative.llm_calls,
                r.cumulative.total_tokens(),
                r.cumulative.embed_calls,
            );
        }
        out
    }
}

/// The initial documents and the insertion batches of `protocol`.
pub fn stages(docs: &[Document], protocol: Protocol) -> Result<(Vec<Document>, Vec<Vec<Document>>)> {
    match protocol {
        Protocol::HalfPlusTen => {
            let half = docs.len() / 2;
            let rest = &docs[half..];
            if half == 0 || rest.len() < INSERT_ROUNDS {
                return Err(Error::Input(format!(
                    "half-plus-ten needs at least {} documents (got {})",
                    2 * INSERT_ROUNDS,
                    docs.len()
                )));
            }
            let base = rest.len() / INSERT_ROUNDS;
            let extra = rest.len() % INSERT_ROUNDS;
            let mut batches = Vec::with_capacity(INSERT_ROUNDS);
            let mut start = 0;
            for i in 0..INSERT_ROUNDS {
                let len = base + usize::from(i < extra);
                batches.push(rest[start..start + len].to_vec());
                start += len;
            }
            Ok((docs[..half].to_vec(), batches))
        }
        Protocol::OneEntry => {
            if docs.len() < 2 {
                return Err(Error::Input("one-entry needs at least 2 documents".into()));
            }
            let (last, initial) = docs.split_last().expect("non-empty");
            Ok((initial.to_vec(), vec![vec![last.clone()]]))
        }
    }
}

fn add(total: &mut Counters, c: &Counters) {
    total.llm_calls += c.llm_calls;
    total.prompt_tokens += c.prompt_tokens;
    total.completion_tokens += c.completion_tokens;
    total.embed_calls += c.embed_calls;
    total.wall_ms += c.wall_ms;
}

pub fn run_bench(
    docs: &[Document],
    protocol: Protocol,
    baseline: Baseline,
    config: &BuildConfig,
    providers: &Providers,
) -> Result<BenchResult> {
    let (initial, batches) = stages(docs, protocol)?;
    let mut result = BenchResult {
        rows: Vec::new(),
        updates: Vec::new(),
        graphs: Vec::new(),
    };
    for strategy in baseline.strategies() {
        let mut cumulative = Counters::default();
        let mut corpus = initial.clone();
        let ledger = CostLedger::new();
        let mut graph = build_graph(&corpus, config.clone(), providers, &ledger)?;
        let mut push = |stage: usize, corpus_len: usize, graph: &LayeredGraph, cost: Counters| {
            add(&mut cumulative, &cost);
            result.rows.push(StageRow {
                strategy,
                stage,
                docs: corpus_len,
                chunks: graph.layers()[0].len(),
                cost,
                cumulative,
            });
        };
        push(0, corpus.len(), &graph, ledger.totals(Phase::Build));
        for (i, batch) in batches.iter().enumerate() {
            corpus.extend(batch.iter().cloned());
            let ledger = CostLedger::new();
            let cost = match strategy {
                Strategy::Incremental => {
                    let report = insert_chunks(&mut graph, batch, providers, &ledger)?;
                    result.updates.push(report);
                    ledger.totals(Phase::Update)
                }
                Strategy::Rebuild => {
                    graph = build_graph(&corpus, config.clone(), providers, &ledger)?;
                    ledger.totals(Phase::Build)
                }
            };
            push(i + 1, corpus.len(), &graph, cost);
        }
        result.graphs.push((strategy, graph));
    }
    Ok(result)
}
