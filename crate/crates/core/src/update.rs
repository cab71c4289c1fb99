//! Localized insertion: new chunks are hashed with the stored hyperplanes,
//! routed into existing segments, and only segments whose membership changed
//! are re-summarized, layer by layer up to the top.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::build::{chunk_documents, top_needs_growth, Document, Pipeline, Providers};
use crate::error::{Error, Result};
use crate::graph::{LayeredGraph, NodeId};
use crate::lsh::{hamming_distance, HashCode};
use crate::metrics::{CostLedger, Phase};
use crate::partition::{rebalance, Group};
use crate::summarize::TokenUsage;

/// Per-layer counts of one update. Index = layer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerCounts {
    /// Distinct codes at this layer that gained or lost a member.
    pub affected_buckets: usize,
    /// Segments of this layer summarized into a new parent.
    pub segments_resummarized: usize,
    pub nodes_deleted: usize,
    pub nodes_created: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateReport {
    pub inserted_chunk_ids: Vec<NodeId>,
    pub layers: Vec<LayerCounts>,
    pub usage: TokenUsage,
    pub llm_calls: u64,
    pub embed_calls: u64,
    /// Surviving nodes whose parent link changed, plus every created node.
    pub touched: BTreeSet<NodeId>,
    pub deleted: BTreeSet<NodeId>,
    pub new_layer_created: bool,
}

impl UpdateReport {
    pub fn total_resummarized(&self) -> usize {
        self.layers.iter().map(|l| l.segments_resummarized).sum()
    }

    fn layer(&mut self, l: usize) -> &mut LayerCounts {
        if self.layers.len() <= l {
            self.layers.resize(l + 1, LayerCounts::default());
        }
        &mut self.layers[l]
    }
}

/// The ids plus all their ancestors.
pub fn affected_closure(graph: &LayeredGraph, seeds: &[NodeId]) -> Result<BTreeSet<NodeId>> {
    let mut out = BTreeSet::new();
    for &seed in seeds {
        let mut cur = Some(seed);
        while let Some(id) = cur {
            let node = graph
                .node(id)
                .ok_or_else(|| Error::Input(format!("unknown node id {id}")))?;
            if !out.insert(id) {
                break;
            }
            cur = node.parent;
        }
    }
    Ok(out)
}

/// Inserts `docs` into `graph`. On error the graph is left untouched.
pub fn insert_chunks(
    graph: &mut LayeredGraph,
    docs: &[Document],
    providers: &Providers,
    ledger: &CostLedger,
) -> Result<UpdateReport> {
    let (next, report) = insert_staged(graph, docs, providers, ledger)?;
    *graph = next;
    Ok(report)
}

/// Runs the update on a copy of `graph` and returns the copy.
pub fn insert_staged(
    graph: &LayeredGraph,
    docs: &[Document],
    providers: &Providers,
    ledger: &CostLedger,
) -> Result<(LayeredGraph, UpdateReport)> {
    if !graph.is_built() {
        return Err(Error::Input("graph has not been built".into()));
    }
    if docs.is_empty() {
        return Err(Error::Input("no texts to insert".into()));
    }
    let mut staged = graph.clone();
    let _phase = ledger.begin(Phase::Update)?;
    let before = ledger.totals(Phase::Update);
    let chunks = chunk_documents(docs, staged.config.chunk_tokens, &mut staged.ids)?;
    let pipeline = Pipeline { providers, ledger };
    let inserted = pipeline.add_leaves(&mut staged, chunks)?;

    let mut report = UpdateReport {
        inserted_chunk_ids: inserted.clone(),
        ..Default::default()
    };
    report.touched.extend(inserted.iter().copied());
    report.layer(0).nodes_created = inserted.len();

    let mut added = inserted;
    let mut removed: BTreeMap<NodeId, HashCode> = BTreeMap::new();
    let mut layer = 0;
    while !(added.is_empty() && removed.is_empty()) {
        let top = staged.layers.len() - 1;
        let codes: BTreeSet<&HashCode> = added
            .iter()
            .map(|id| &staged.nodes[id].code)
            .chain(removed.values())
            .collect();
        report.layer(layer).affected_buckets = codes.len();
        if layer == top {
            break;
        }
        let (next_added, next_removed) = update_layer(&pipeline, &mut staged, layer, &added, &removed, &mut report)?;
        added = next_added;
        removed = next_removed;
        layer += 1;
    }

    let top = staged.layers.len() - 1;
    if top_needs_growth(&staged.config, top, staged.layers[top].len()) {
        pipeline.grow(&mut staged)?;
        for l in top + 1..staged.layers.len() {
            let n = staged.layers[l].len();
            report.layer(l).nodes_created = n;
            report.layer(l - 1).segments_resummarized += n;
            report.touched.extend(staged.layers[l].iter().copied());
            report.touched.extend(staged.layers[l - 1].iter().copied());
        }
        report.new_layer_created = staged.layers.len() > top + 1;
    }
    report.layer(staged.layers.len() - 1);

    let after = ledger.totals(Phase::Update);
    report.llm_calls = after.llm_calls - before.llm_calls;
    report.embed_calls = after.embed_calls - before.embed_calls;
    report.usage = TokenUsage::new(
        after.prompt_tokens - before.prompt_tokens,
        after.completion_tokens - before.completion_tokens,
    );
    Ok((staged, report))
}

/// Where an incoming node lands relative to the current segments of a layer.
enum Route {
    Into(usize),
    NewAfter(Option<usize>),
}

/// Applies `added`/`removed` at `layer` to the segments above it and
/// re-summarizes the segments that changed. Returns the nodes created and
/// deleted at `layer + 1`.
fn update_layer(
    pipeline: &Pipeline<'_>,
    g: &mut LayeredGraph,
    layer: usize,
    added: &[NodeId],
    removed: &BTreeMap<NodeId, HashCode>,
    report: &mut UpdateReport,
) -> Result<(Vec<NodeId>, BTreeMap<NodeId, HashCode>)> {
    let code_of = |g: &LayeredGraph, id: &NodeId| -> HashCode {
        removed.get(id).cloned().unwrap_or_else(|| g.nodes[id].code.clone())
    };

    // Segments are the child lists of the next layer, in layer order.
    let parents: Vec<NodeId> = g.layers[layer + 1].clone();
    let mut groups: Vec<Group> = parents
        .iter()
        .map(|p| Group {
            members: g.nodes[p].children.iter().map(|c| (*c, code_of(g, c))).collect(),
            affected: false,
            origin: Some(*p),
        })
        .collect();

    // Code -> (first segment, last segment) holding it, before removals.
    let mut span: BTreeMap<HashCode, (usize, usize)> = BTreeMap::new();
    for (i, grp) in groups.iter().enumerate() {
        for (_, code) in &grp.members {
            span.entry(code.clone()).and_modify(|s| s.1 = i).or_insert((i, i));
        }
    }

    for grp in &mut groups {
        let before = grp.members.len();
        grp.members.retain(|(id, _)| !removed.contains_key(id));
        if grp.members.len() != before {
            grp.affected = true;
        }
    }

    let mut incoming: BTreeMap<HashCode, Vec<NodeId>> = BTreeMap::new();
    for id in added {
        incoming.entry(g.nodes[id].code.clone()).or_default().push(*id);
    }

    let mut fresh: BTreeMap<Option<usize>, Vec<Group>> = BTreeMap::new();
    for (code, ids) in incoming {
        let route = if let Some(&(_, last)) = span.get(&code) {
            Route::Into(last)
        } else {
            let prev = span.range(..code.clone()).next_back();
            let next = span.range(code.clone()..).next();
            if ids.len() >= g.config.bounds.s_min() {
                Route::NewAfter(match (prev, next) {
                    (Some((_, s)), _) => Some(s.1),
                    (None, Some((_, s))) => s.0.checked_sub(1),
                    (None, None) => None,
                })
            } else {
                match (prev, next) {
                    (None, None) => Route::NewAfter(None),
                    (Some((_, s)), None) => Route::Into(s.1),
                    (None, Some((_, s))) => Route::Into(s.0),
                    (Some((pc, ps)), Some((nc, ns))) => {
                        if hamming_distance(&code, pc)? <= hamming_distance(&code, nc)? {
                            Route::Into(ps.1)
                        } else {
                            Route::Into(ns.0)
                        }
                    }
                }
            }
        };
        let members: Vec<(NodeId, HashCode)> = ids.iter().map(|id| (*id, code.clone())).collect();
        match route {
            Route::Into(i) => {
                let grp = &mut groups[i];
                for m in members {
                    let pos = grp.members.partition_point(|(_, c)| *c <= m.1);
                    grp.members.insert(pos, m);
                }
                grp.affected = true;
            }
            Route::NewAfter(after) => fresh.entry(after).or_default().push(Group {
                members,
                affected: true,
                origin: None,
            }),
        }
    }

    let mut ordered = Vec::with_capacity(groups.len() + fresh.len());
    ordered.extend(fresh.remove(&None).unwrap_or_default());
    for (i, grp) in groups.into_iter().enumerate() {
        ordered.push(grp);
        ordered.extend(fresh.remove(&Some(i)).unwrap_or_default());
    }

    let out = rebalance(ordered, g.config.bounds);

    let kept: BTreeSet<NodeId> = out
        .iter()
        .filter(|grp| !grp.affected)
        .filter_map(|grp| grp.origin)
        .collect();
    let dirty: Vec<&Group> = out.iter().filter(|grp| grp.affected || grp.origin.is_none()).collect();
    let new_ids: Vec<NodeId> = dirty.iter().map(|_| g.ids.allocate()).collect();
    let kids: Vec<Vec<NodeId>> = dirty
        .iter()
        .map(|grp| grp.members.iter().map(|(id, _)| *id).collect())
        .collect();
    let created = pipeline.create_parents(g, layer + 1, &new_ids, &kids)?;
    for k in kids.iter().flatten() {
        if !added.contains(k) {
            report.touched.insert(*k);
        }
    }

    let mut next_layer = Vec::with_capacity(out.len());
    let mut fresh_ids = new_ids.iter();
    for grp in &out {
        match grp.origin {
            Some(p) if !grp.affected => next_layer.push(p),
            _ => next_layer.push(*fresh_ids.next().expect("one id per dirty group")),
        }
    }
    g.layers[layer + 1] = next_layer;

    let mut gone = BTreeMap::new();
    for p in parents.iter().filter(|p| !kept.contains(p)) {
        let node = g.nodes.remove(p).expect("parent tracked by the graph");
        gone.insert(*p, node.code);
        report.deleted.insert(*p);
    }
    for node in created {
        report.touched.insert(node.id);
        g.nodes.insert(node.id, node);
    }

    report.layer(layer).segments_resummarized = new_ids.len();
    let up = report.layer(layer + 1);
    up.nodes_created = new_ids.len();
    up.nodes_deleted = gone.len();
    Ok((new_ids, gone))
}

/// A graph shared between one writer and any number of readers. Readers
/// hold the last committed snapshot; inserts serialize on the writer lock.
#[derive(Debug)]
pub struct SharedIndex {
    current: RwLock<Arc<LayeredGraph>>,
    writer: Mutex<()>,
}

impl SharedIndex {
    pub fn new(graph: LayeredGraph) -> Self {
        Self {
            current: RwLock::new(Arc::new(graph)),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<LayeredGraph> {
        self.current.read().clone()
    }

    pub fn insert(&self, docs: &[Document], providers: &Providers, ledger: &CostLedger) -> Result<UpdateReport> {
        let _w = self.writer.lock();
        let base = self.snapshot();
        let (next, report) = insert_staged(&base, docs, providers, ledger)?;
        *self.current.write() = Arc::new(next);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build::build_graph;
    use crate::graph::BuildConfig;
    use crate::partition::SizeBounds;
    use crate::verify::verify_graph;

    fn doc(i: usize) -> Document {
        let text = (0..20).map(|t| format!("d{i}w{t}")).collect::<Vec<_>>().join(" ");
        Document::new(format!("doc{i}"), text)
    }

    fn setup(n: usize) -> (LayeredGraph, Providers) {
        let cfg = BuildConfig {
            bounds: SizeBounds::new(2, 4).unwrap(),
            hyperplanes: 4,
            chunk_tokens: 32,
            summary_tokens: 16,
            ..BuildConfig::default()
        };
        let providers = Providers::mock(&cfg).unwrap();
        let docs: Vec<Document> = (0..n).map(doc).collect();
        let g = build_graph(&docs, cfg, &providers, &CostLedger::new()).unwrap();
        (g, providers)
    }

    #[test]
    fn closure_examples() {
        let (g, _) = setup(20);
        let top = g.layers().last().unwrap()[0];
        assert_eq!(affected_closure(&g, &[top]).unwrap(), BTreeSet::from([top]));
        let leaf = g.layers()[0][0];
        let chain = affected_closure(&g, &[leaf]).unwrap();
        assert_eq!(chain.len(), g.layers().len());
        let p = g.node(leaf).unwrap().parent.unwrap();
        let sibs = g.node(p).unwrap().children.clone();
        let both = affected_closure(&g, &sibs[..2]).unwrap();
        assert_eq!(both.len(), g.layers().len() + 1);
        assert!(affected_closure(&g, &[NodeId(99_999)]).is_err());
    }

    #[test]
    fn empty_insert_rejected() {
        let (mut g, providers) = setup(10);
        let before = g.clone();
        let err = insert_chunks(&mut g, &[], &providers, &CostLedger::new());
        assert!(matches!(err, Err(Error::Input(_))));
        assert_eq!(g, before);
    }

    #[test]
    fn single_insert_is_local_and_sound() {
        let (mut g, providers) = setup(40);
        for i in 0..30 {
            let ledger = CostLedger::new();
            let report = insert_chunks(&mut g, &[doc(1000 + i)], &providers, &ledger).unwrap();
            assert_eq!(report.inserted_chunk_ids.len(), 1);
            assert!(report.total_resummarized() >= 1);
            assert!(report.llm_calls as usize <= 3 * g.layers().len());
            assert_eq!(report.llm_calls as usize, report.total_resummarized());
            for l in 0..report.layers.len().saturating_sub(1) {
                assert_eq!(
                    report.layers[l].segments_resummarized,
                    report.layers[l + 1].nodes_created
                );
            }
            let violations = verify_graph(&g);
            assert!(violations.is_empty(), "{violations:?}");
        }
    }

    #[test]
    fn failed_provider_leaves_graph_untouched() {
        struct Failing;
        impl crate::summarize::Summarizer for Failing {
            fn summarize(&self, _: &crate::summarize::SummaryRequest) -> Result<crate::summarize::SummaryOutput> {
                Err(Error::provider("down", 5, true))
            }
        }
        let (mut g, mock) = setup(20);
        let before = g.clone();
        let providers = Providers::new(mock.embedder, Box::new(Failing));
        let err = insert_chunks(&mut g, &[doc(500)], &providers, &CostLedger::new());
        assert!(matches!(err, Err(Error::Provider { .. })));
        assert_eq!(g, before);
    }

    #[test]
    fn shared_index_readers_keep_snapshot() {
        let (g, providers) = setup(20);
        let index = SharedIndex::new(g);
        let old = index.snapshot();
        index.insert(&[doc(77)], &providers, &CostLedger::new()).unwrap();
        assert_eq!(index.snapshot().layers()[0].len(), old.layers()[0].len() + 1);
    }
}
