use erarag::persist::{from_bytes, load_unverified, to_bytes, CONFIG_OFFSET, FORMAT_MAJOR, MAGIC};
use erarag::{
    build_graph, load_snapshot, save_snapshot, verify_graph, BuildConfig, CostLedger, Document, Error, LayeredGraph,
    Providers,
};

fn graph() -> LayeredGraph {
    let cfg = BuildConfig {
        chunk_tokens: 16,
        summary_tokens: 16,
        ..BuildConfig::default()
    };
    let docs: Vec<Document> = (0..12)
        .map(|d| {
            let words: Vec<String> = (0..64).map(|w| format!("k{}x{}", (d * 7 + w) % 23, w % 5)).collect();
            Document::new(format!("doc{d}"), words.join(" "))
        })
        .collect();
    let providers = Providers::mock(&cfg).unwrap();
    build_graph(&docs, cfg, &providers, &CostLedger::new()).unwrap()
}

#[test]
fn round_trip_preserves_nodes() {
    let g = graph();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.snap");
    save_snapshot(&g, &path, false).unwrap();
    let loaded = load_snapshot(&path).unwrap();
    assert_eq!(loaded.layers(), g.layers());
    assert_eq!(loaded.next_id(), g.next_id());
    assert_eq!(loaded.config(), g.config());
    assert_eq!(loaded.hyperplanes(), g.hyperplanes());
    for (a, b) in g.nodes().zip(loaded.nodes()) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.chunk.text, b.chunk.text);
        assert_eq!(a.embedding, b.embedding);
        assert_eq!(a.code, b.code);
        assert_eq!(a.parent, b.parent);
        assert_eq!(a.children, b.children);
    }
    let path2 = dir.path().join("g2.snap");
    save_snapshot(&loaded, &path2, false).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn refuses_to_overwrite_without_force() {
    let g = graph();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.snap");
    save_snapshot(&g, &path, false).unwrap();
    assert!(matches!(save_snapshot(&g, &path, false), Err(Error::Exists(_))));
    save_snapshot(&g, &path, true).unwrap();
}

#[test]
fn wrong_magic_is_a_format_error() {
    let mut bytes = to_bytes(&graph()).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    bytes[0] = b'X';
    assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
}

#[test]
fn newer_major_is_incompatible() {
    let mut bytes = to_bytes(&graph()).unwrap();
    bytes[8..10].copy_from_slice(&(FORMAT_MAJOR + 1).to_le_bytes());
    match from_bytes(&bytes) {
        Err(Error::Incompatible { found_major, .. }) => assert_eq!(found_major, FORMAT_MAJOR + 1),
        other => panic!("expected incompatibility, got {other:?}"),
    }
}

#[test]
fn truncated_snapshot_is_an_integrity_error() {
    let bytes = to_bytes(&graph()).unwrap();
    for cut in [bytes.len() - 1, bytes.len() / 2, 20] {
        assert!(
            matches!(from_bytes(&bytes[..cut]), Err(Error::Integrity { .. })),
            "cut at {cut}"
        );
    }
}

#[test]
fn trailing_bytes_are_rejected() {
    let mut bytes = to_bytes(&graph()).unwrap();
    bytes.push(0);
    assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
}

#[test]
fn tampered_bound_names_segment_bounds() {
    let g = graph();
    assert!(g.layers()[1..]
        .iter()
        .flatten()
        .any(|id| g.node(*id).unwrap().children.len() == 8));
    let mut bytes = to_bytes(&g).unwrap();
    assert_eq!(&bytes[CONFIG_OFFSET..CONFIG_OFFSET + 2], &[4, 8]);
    bytes[CONFIG_OFFSET + 1] = 7;
    match from_bytes(&bytes) {
        Err(Error::Integrity { invariant, .. }) => assert_eq!(invariant, "segment bounds"),
        other => panic!("expected segment bounds violation, got {other:?}"),
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.snap");
    std::fs::write(&path, &bytes).unwrap();
    let unverified = load_unverified(&path).unwrap();
    let v = verify_graph(&unverified);
    assert!(!v.is_empty());
    assert!(v.iter().all(|x| x.invariant == "segment bounds"));
}
