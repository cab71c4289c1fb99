use std::collections::BTreeSet;

use erarag::lsh::{hamming_distance, hash_vector, sample_hyperplanes};
use erarag::{
    build_graph, insert_chunks, retrieve, verify_graph, BuildConfig, CostLedger, Document, Embedder, EmbedderConfig,
    Embedding, HashCode, LayeredGraph, MockSummarizer, Providers, QueryConfig, SizeBounds,
};

fn words(tag: &str, n: usize) -> String {
    (0..n)
        .map(|i| format!("{tag}w{i} t{}", i % 9))
        .collect::<Vec<_>>()
        .join(" ")
}

fn hundred_chunk_graph() -> (LayeredGraph, Providers) {
    let cfg = BuildConfig {
        chunk_tokens: 32,
        summary_tokens: 32,
        ..BuildConfig::default()
    };
    let docs: Vec<Document> = (0..50)
        .map(|d| Document::new(format!("d{d}"), words(&format!("d{d}"), 32)))
        .collect();
    let providers = Providers::mock(&cfg).unwrap();
    let g = build_graph(&docs, cfg, &providers, &CostLedger::new()).unwrap();
    assert_eq!(g.layers()[0].len(), 100);
    (g, providers)
}

#[test]
fn single_insert_into_hundred_chunks() {
    let (mut g, providers) = hundred_chunk_graph();
    let layers = g.layers().len();
    let report = insert_chunks(
        &mut g,
        &[Document::new("new", "fresh words t1 t2 t3")],
        &providers,
        &CostLedger::new(),
    )
    .unwrap();
    assert_eq!(report.inserted_chunk_ids.len(), 1);
    assert!(report.total_resummarized() >= 1);
    assert!(report.llm_calls <= 3 * g.layers().len().max(layers) as u64);
    assert!(verify_graph(&g).is_empty());
}

#[test]
fn inserted_chunk_ranks_first_for_its_own_text() {
    let (mut g, providers) = hundred_chunk_graph();
    let text = "an entirely new passage about lighthouses t4 t5";
    let report = insert_chunks(&mut g, &[Document::new("lh", text)], &providers, &CostLedger::new()).unwrap();
    let res = retrieve(
        &g,
        text,
        &QueryConfig::collapsed(3, 1000),
        providers.embedder.as_ref(),
        &CostLedger::new(),
    )
    .unwrap();
    assert_eq!(res.hits[0].id, report.inserted_chunk_ids[0]);
    assert!((res.hits[0].score - 1.0).abs() < 1e-6);
}

/// Embeds "pt <angle>" tokens onto the unit circle; summaries average their points.
struct AngleEmbedder;

impl Embedder for AngleEmbedder {
    fn dim(&self) -> usize {
        2
    }

    fn embed_batch(&self, texts: &[&str]) -> erarag::Result<Vec<Embedding>> {
        Ok(texts
            .iter()
            .map(|t| {
                let (x, y) = t
                    .split_whitespace()
                    .filter_map(|w| w.parse::<f64>().ok())
                    .fold((0.0, 0.0), |(x, y), a| (x + a.cos(), y + a.sin()));
                let (x, y) = if x.hypot(y) < 1e-9 { (1.0, 0.0) } else { (x, y) };
                erarag::embed::normalize(&[x, y]).unwrap()
            })
            .collect())
    }
}

fn code_at(planes: &erarag::Hyperplanes, a: f64) -> HashCode {
    hash_vector(&[a.cos() as f32, a.sin() as f32], planes).unwrap()
}

#[test]
fn fresh_code_merges_into_hamming_nearest_neighbour() {
    let cfg = BuildConfig {
        bounds: SizeBounds::new(2, 3).unwrap(),
        hyperplanes: 3,
        chunk_tokens: 16,
        summary_tokens: 16,
        seed: 5,
        embedder: EmbedderConfig::mock(0, 2),
        ..BuildConfig::default()
    };
    let planes = sample_hyperplanes(cfg.seed, 2, 3).unwrap();

    // Arcs of constant code around the circle.
    let steps = 3600;
    let step = std::f64::consts::TAU / steps as f64;
    let mut arcs: Vec<(HashCode, f64, f64)> = Vec::new();
    for i in 0..steps {
        let a = i as f64 * step;
        let c = code_at(&planes, a);
        match arcs.last_mut() {
            Some(last) if last.0 == c => last.2 = a,
            _ => arcs.push((c, a, a)),
        }
    }
    if arcs.len() > 1 && arcs[0].0 == arcs.last().unwrap().0 {
        let (_, _, end) = arcs.pop().unwrap();
        arcs[0].1 = end - std::f64::consts::TAU;
    }
    assert_eq!(arcs.len(), 6);

    let (target_code, t0, t1) = arcs[2].clone();
    let docs: Vec<Document> = arcs
        .iter()
        .filter(|(c, _, _)| *c != target_code)
        .enumerate()
        .flat_map(|(i, (_, lo, hi))| {
            (1..=3).map(move |j| {
                let a = lo + (hi - lo) * j as f64 / 4.0;
                Document::new(format!("a{i}p{j}"), format!("pt {a}"))
            })
        })
        .collect();
    let providers = Providers::new(Box::new(AngleEmbedder), Box::new(MockSummarizer));
    let mut g = build_graph(&docs, cfg, &providers, &CostLedger::new()).unwrap();
    let leaf_codes: BTreeSet<HashCode> = g.leaves().map(|n| n.code.clone()).collect();
    assert!(!leaf_codes.contains(&target_code));

    let old_parents: BTreeSet<_> = g.layers()[1].iter().copied().collect();
    let mid = (t0 + t1) / 2.0;
    let report = insert_chunks(
        &mut g,
        &[Document::new("new", format!("pt {mid}"))],
        &providers,
        &CostLedger::new(),
    )
    .unwrap();
    assert!(verify_graph(&g).is_empty(), "{:?}", verify_graph(&g));

    let new_id = report.inserted_chunk_ids[0];
    let leaf = g.node(new_id).unwrap();
    assert_eq!(leaf.code, target_code);

    // Oracle: the Hamming-nearer of the codes just below and above; ties go below.
    let prev = leaf_codes.range(..target_code.clone()).next_back();
    let next = leaf_codes.range(target_code.clone()..).next();
    let want = match (prev, next) {
        (Some(p), Some(n)) => {
            if hamming_distance(&target_code, p).unwrap() <= hamming_distance(&target_code, n).unwrap() {
                p
            } else {
                n
            }
        }
        (Some(p), None) => p,
        (None, Some(n)) => n,
        (None, None) => unreachable!(),
    };
    let parent = g.node(leaf.parent.unwrap()).unwrap();
    let sibling_codes: BTreeSet<&HashCode> = parent.children.iter().map(|c| &g.node(*c).unwrap().code).collect();
    assert!(
        sibling_codes.contains(want),
        "joined {sibling_codes:?}, expected neighbour {want:?}"
    );
    assert!(
        !old_parents.contains(&parent.id),
        "the receiving segment is re-summarized under a fresh id"
    );
    assert!(report.layers[0].segments_resummarized >= 1);
    assert!(report.deleted.iter().any(|id| old_parents.contains(id)));
}
