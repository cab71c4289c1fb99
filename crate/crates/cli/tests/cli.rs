use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn erarag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erarag")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(docs: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        let o = erarag(&[
            "synth",
            "--out",
            s(&corpus),
            "--docs",
            &docs.to_string(),
            "--chunk-tokens",
            "32",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn build(&self, out: &str) -> Output {
        erarag(&[
            "build",
            "--corpus",
            s(&self.path("corpus.jsonl")),
            "--out",
            s(&self.path(out)),
            "--chunk-tokens",
            "32",
            "--summary-tokens",
            "32",
        ])
    }
}

/// Drops the wall-time column from ledger CSV output.
fn without_wall_time(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn build_is_deterministic_and_refuses_overwrite() {
    let f = Fixture::new(20);
    let a = f.build("a.snap");
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert!(String::from_utf8_lossy(&a.stderr).contains("layers: 80 "));
    let b = f.build("b.snap");
    assert_eq!(without_wall_time(&stdout(&a)), without_wall_time(&stdout(&b)));
    assert_eq!(
        std::fs::read(f.path("a.snap")).unwrap(),
        std::fs::read(f.path("b.snap")).unwrap()
    );
    assert_eq!(code(&f.build("a.snap")), 1);
}

#[test]
fn usage_errors_exit_two() {
    let f = Fixture::new(20);
    assert_eq!(code(&erarag(&["build", "--out", s(&f.path("x.snap"))])), 2);
    let smin = erarag(&[
        "build",
        "--corpus",
        s(&f.path("corpus.jsonl")),
        "--out",
        s(&f.path("x.snap")),
        "--smin",
        "1",
    ]);
    assert_eq!(code(&smin), 2);
    assert_eq!(code(&erarag(&["verify", "--graph", ""])), 2);

    assert_eq!(code(&f.build("g.snap")), 0);
    let g = f.path("g.snap");
    assert_eq!(code(&erarag(&["query", "--graph", s(&g), "--q", "x", "--k", "0"])), 2);
    assert_eq!(code(&erarag(&["query", "--graph", s(&g), "--q", "x", "--p", "0.5"])), 2);
    assert_eq!(
        code(&erarag(&["query", "--graph", s(&g), "--q", "x", "--mode", "detailed"])),
        2
    );
}

#[test]
fn query_stats_and_verify() {
    let f = Fixture::new(20);
    assert_eq!(code(&f.build("g.snap")), 0);
    let g = f.path("g.snap");
    let q = [
        "query",
        "--graph",
        s(&g),
        "--q",
        "d3c1u5 d3c1u9 d3c1u17",
        "--k",
        "3",
        "--answer",
    ];
    let a = erarag(&q);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let out = stdout(&a);
    assert_eq!(out, stdout(&erarag(&q)));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "rank,id,layer,score");
    assert!(lines[1].starts_with("1,"));
    assert!(out.contains("--- context ---") && out.contains("--- answer ---"));

    let detailed = stdout(&erarag(&[
        "query",
        "--graph",
        s(&g),
        "--q",
        "d3c1u5",
        "--k",
        "10",
        "--mode",
        "detailed",
        "--p",
        "0.8",
    ]));
    let leaf_hits = detailed
        .lines()
        .skip(1)
        .take(10)
        .filter(|l| l.split(',').nth(2) == Some("0"))
        .count();
    assert_eq!(leaf_hits, 8);

    let stats = erarag(&["stats", "--graph", s(&g)]);
    assert_eq!(code(&stats), 0);
    assert!(stdout(&stats).starts_with("layer,nodes,mean_segment_size,tokens\n0,80,"));

    let v = erarag(&["verify", "--graph", s(&g)]);
    assert_eq!(code(&v), 0);
    assert!(stdout(&v).starts_with("ok: "));
}

#[test]
fn tampered_snapshot_names_the_violation() {
    let f = Fixture::new(20);
    assert_eq!(code(&f.build("g.snap")), 0);
    let mut bytes = std::fs::read(f.path("g.snap")).unwrap();
    // s_max sits right after s_min at the start of the config section
    assert_eq!(&bytes[12..14], &[4, 8]);
    bytes[13] = 7;
    let bad = f.path("bad.snap");
    std::fs::write(&bad, bytes).unwrap();
    let v = erarag(&["verify", "--graph", s(&bad)]);
    assert_eq!(code(&v), 1);
    assert!(stdout(&v).contains("segment bounds"));
    assert_eq!(code(&erarag(&["stats", "--graph", s(&bad)])), 1);
}

#[test]
fn insert_reports_and_checks_locality() {
    let f = Fixture::new(20);
    assert_eq!(code(&f.build("g.snap")), 0);
    let extra = f.path("extra.jsonl");
    std::fs::write(&extra, "{\"id\":\"n1\",\"text\":\"brand new words about otters\"}\n").unwrap();
    let o = erarag(&[
        "insert",
        "--graph",
        s(&f.path("g.snap")),
        "--corpus",
        s(&extra),
        "--out",
        s(&f.path("g2.snap")),
        "--verify-locality",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("locality: ok"), "{out}");
    assert_eq!(code(&erarag(&["verify", "--graph", s(&f.path("g2.snap"))])), 0);

    let empty = f.path("empty.jsonl");
    std::fs::write(&empty, "\n").unwrap();
    let o = erarag(&[
        "insert",
        "--graph",
        s(&f.path("g.snap")),
        "--corpus",
        s(&empty),
        "--out",
        s(&f.path("g3.snap")),
    ]);
    assert_ne!(code(&o), 0);
    assert!(!f.path("g3.snap").exists());
}

#[test]
fn bench_emits_eleven_rows_per_strategy() {
    let f = Fixture::new(30);
    let csv = f.path("bench.csv");
    let o = erarag(&[
        "bench",
        "--protocol",
        "half-plus-ten",
        "--corpus",
        s(&f.path("corpus.jsonl")),
        "--out",
        s(&csv),
        "--chunk-tokens",
        "32",
        "--summary-tokens",
        "32",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("incremental,")).count(), 11);
    assert_eq!(rows.iter().filter(|r| r.starts_with("rebuild,")).count(), 11);

    let o = erarag(&[
        "bench",
        "--protocol",
        "one-entry",
        "--corpus",
        s(&f.path("corpus.jsonl")),
        "--chunk-tokens",
        "32",
        "--summary-tokens",
        "32",
    ]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("incremental,1,")).count(), 1);
}
