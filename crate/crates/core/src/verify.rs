//! Structural invariant checks over a graph.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{LayeredGraph, Origin};
use crate::lsh::{hash_vector, sample_hyperplanes, UNIT_NORM_TOLERANCE};
use crate::summarize::token_count;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.invariant, self.detail)
    }
}

/// Runs every check and returns all violations found.
pub fn verify_graph(g: &LayeredGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bad = |invariant: &'static str, detail: String| out.push(Violation { invariant, detail });
    let cfg = &g.config;

    if g.layers.is_empty() {
        bad("layer count", "graph has no layers".into());
        return out;
    }
    if g.layers.len() > cfg.max_depth + 1 {
        bad(
            "layer count",
            format!("{} layers exceed max depth {}", g.layers.len(), cfg.max_depth),
        );
    }
    for (l, ids) in g.layers.iter().enumerate() {
        if ids.is_empty() {
            bad("layer count", format!("layer {l} is empty"));
        }
    }

    let mut seen = BTreeSet::new();
    for (l, ids) in g.layers.iter().enumerate() {
        for id in ids {
            if !seen.insert(*id) {
                bad("id uniqueness", format!("node {id} listed twice"));
            }
            match g.nodes.get(id) {
                None => bad("id uniqueness", format!("node {id} in layer {l} has no record")),
                Some(n) if n.layer != l => bad(
                    "id uniqueness",
                    format!("node {id} listed in layer {l} but records layer {}", n.layer),
                ),
                _ => {}
            }
        }
    }
    for (id, n) in &g.nodes {
        if !seen.contains(id) {
            bad("id uniqueness", format!("node {id} is in no layer"));
        }
        if n.id != *id || n.chunk.id != *id {
            bad("id uniqueness", format!("node {id} carries a different id"));
        }
        if id.0 >= g.ids.peek() {
            bad(
                "id uniqueness",
                format!("node {id} is not below next id {}", g.ids.peek()),
            );
        }
    }
    if !out.is_empty() {
        return out;
    }

    let mut bad = |invariant: &'static str, detail: String| out.push(Violation { invariant, detail });
    let top = g.layers.len() - 1;
    for n in g.nodes.values() {
        let id = n.id;
        if n.chunk.token_len != token_count(&n.chunk.text) {
            bad("tree integrity", format!("node {id} token length is stale"));
        }
        if n.layer == 0 {
            if n.chunk.origin != Origin::Original || !n.children.is_empty() {
                bad(
                    "tree integrity",
                    format!("leaf {id} must be an original chunk without children"),
                );
            }
            if n.chunk.token_len == 0 || n.chunk.token_len > cfg.chunk_tokens {
                bad("budget safety", format!("leaf {id} has {} tokens", n.chunk.token_len));
            }
        } else {
            if n.chunk.origin != Origin::Summary || n.children.is_empty() {
                bad(
                    "tree integrity",
                    format!("node {id} at layer {} must summarize children", n.layer),
                );
            }
            if n.chunk.token_len > cfg.summary_tokens {
                bad(
                    "budget safety",
                    format!(
                        "summary {id} has {} tokens, budget {}",
                        n.chunk.token_len, cfg.summary_tokens
                    ),
                );
            }
        }
        for c in &n.children {
            match g.nodes.get(c) {
                Some(child) if child.layer + 1 == n.layer && child.parent == Some(id) => {}
                _ => bad("tree integrity", format!("child {c} of {id} does not link back")),
            }
        }
        match n.parent {
            None if n.layer != top => bad("tree integrity", format!("node {id} below the top has no parent")),
            Some(p) if n.layer == top => bad("tree integrity", format!("top node {id} has parent {p}")),
            Some(p) => match g.nodes.get(&p) {
                Some(parent) if parent.children.contains(&id) => {}
                _ => bad("tree integrity", format!("parent {p} of {id} does not list it")),
            },
            None => {}
        }
        if n.children
            .windows(2)
            .any(|w| g.nodes.get(&w[0]).map(|a| &a.code) > g.nodes.get(&w[1]).map(|b| &b.code))
        {
            bad("segment order", format!("children of {id} are not in code order"));
        }

        if n.embedding.dim() != cfg.dim() || (n.embedding.norm() - 1.0).abs() > UNIT_NORM_TOLERANCE {
            bad(
                "unit norm",
                format!(
                    "node {id} embedding has dim {} and norm {}",
                    n.embedding.dim(),
                    n.embedding.norm()
                ),
            );
        } else {
            match hash_vector(n.embedding.values(), &g.hyperplanes) {
                Ok(code) if code == n.code => {}
                _ => bad("hash code", format!("node {id} code does not match its embedding")),
            }
        }
    }

    for l in 0..top {
        let below = g.layers[l].len();
        let above = g.layers[l + 1].len();
        let s_min = cfg.bounds.s_min();
        if below < s_min {
            if above != 1 {
                bad(
                    "segment bounds",
                    format!("undersized layer {l} must have one parent, has {above}"),
                );
            }
        } else {
            for p in &g.layers[l + 1] {
                let size = g.nodes[p].children.len();
                if !cfg.bounds.contains(size) {
                    bad(
                        "segment bounds",
                        format!(
                            "segment {p} at layer {l} has {size} members, bounds {s_min}..={}",
                            cfg.bounds.s_max()
                        ),
                    );
                }
            }
            if above > below.div_ceil(s_min) {
                bad("layer decay", format!("layer {} has {above} nodes over {below}", l + 1));
            }
        }
    }

    match sample_hyperplanes(cfg.seed, cfg.dim(), cfg.hyperplanes) {
        Ok(h) if h == g.hyperplanes => {}
        _ => bad(
            "hash code",
            "stored hyperplanes do not match the configured seed".into(),
        ),
    }
    out
}

/// Fails with the first violation, if any.
pub fn check_graph(g: &LayeredGraph) -> Result<()> {
    match verify_graph(g).into_iter().next() {
        None => Ok(()),
        Some(v) => Err(Error::Integrity {
            invariant: v.invariant,
            detail: v.detail,
        }),
    }
}
