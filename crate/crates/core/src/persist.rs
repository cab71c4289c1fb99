//! Binary snapshots.
//!
//! Layout, in order:
//!
//! | field | encoding |
//! |---|---|
//! | magic | `ERAGRAPH` |
//! | version | major u16 LE, minor u16 LE |
//! | bounds | s_min, s_max (varint) |
//! | budgets | hyperplane count, chunk tokens, summary tokens, max depth (varint) |
//! | seed | u64 LE |
//! | stop rule | u8 (0 smax, 1 dim) |
//! | embedder | u8 tag, dim varint, then mock seed u64 LE or endpoint/model/key-env strings |
//! | summarizer | u8 tag, then endpoint/model/key-env strings for remote |
//! | hyperplanes | seed u64 LE, dim, count (varint), count*dim f32 LE row-major |
//! | next id | varint |
//! | layers | count, then per layer a length and node ids (varints) |
//! | nodes | count, then each node as written by [`encode_node`], ascending id |
//!
//! Varints are unsigned LEB128; strings are a varint byte length plus UTF-8.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::embed::{EmbedderConfig, EmbedderKind, Embedding};
use crate::error::{Error, Result};
use crate::graph::{BuildConfig, Chunk, GraphNode, LayeredGraph, NodeId, Origin, StopRule};
use crate::lsh::{HashCode, Hyperplanes};
use crate::partition::SizeBounds;
use crate::summarize::LlmConfig;
use crate::verify::check_graph;

pub const MAGIC: &[u8; 8] = b"ERAGRAPH";
pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;
/// Byte offset of the config section (s_min is the first field).
pub const CONFIG_OFFSET: usize = 12;

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_varint(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn truncated(what: &str) -> Error {
    Error::Integrity {
        invariant: "snapshot length",
        detail: format!("file ends inside {what}"),
    }
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn varint(&mut self, what: &str) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8(what)?;
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::Format(format!("varint too long in {what}")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.varint(what)?).map_err(|_| Error::Format(format!("{what} out of range")))
    }

    /// A length that must fit in the remaining bytes at `min_each` bytes per item.
    fn count(&mut self, what: &str, min_each: usize) -> Result<usize> {
        let n = self.usize(what)?;
        if n.saturating_mul(min_each) > self.buf.len() - self.pos {
            return Err(truncated(what));
        }
        Ok(n)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.count(what, 1)?;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| truncated(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn put_remote(out: &mut Vec<u8>, endpoint: &str, model: &str, key_env: &str) {
    put_str(out, endpoint);
    put_str(out, model);
    put_str(out, key_env);
}

fn encode_config(out: &mut Vec<u8>, c: &BuildConfig) {
    put_varint(out, c.bounds.s_min() as u64);
    put_varint(out, c.bounds.s_max() as u64);
    put_varint(out, c.hyperplanes as u64);
    put_varint(out, c.chunk_tokens as u64);
    put_varint(out, c.summary_tokens as u64);
    put_varint(out, c.max_depth as u64);
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.push(match c.stop_rule {
        StopRule::Smax => 0,
        StopRule::Dim => 1,
    });
    match &c.embedder.kind {
        EmbedderKind::Mock { seed } => {
            out.push(0);
            put_varint(out, c.embedder.dim as u64);
            out.extend_from_slice(&seed.to_le_bytes());
        }
        EmbedderKind::Remote {
            endpoint,
            model,
            api_key_env,
        } => {
            out.push(1);
            put_varint(out, c.embedder.dim as u64);
            put_remote(out, endpoint, model, api_key_env);
        }
    }
    match &c.summarizer {
        LlmConfig::Mock => out.push(0),
        LlmConfig::Remote {
            endpoint,
            model,
            api_key_env,
        } => {
            out.push(1);
            put_remote(out, endpoint, model, api_key_env);
        }
    }
}

fn decode_config(r: &mut Reader<'_>) -> Result<BuildConfig> {
    let s_min = r.usize("s_min")?;
    let s_max = r.usize("s_max")?;
    let bounds = SizeBounds::new(s_min, s_max)?;
    let hyperplanes = r.usize("hyperplane count")?;
    let chunk_tokens = r.usize("chunk budget")?;
    let summary_tokens = r.usize("summary budget")?;
    let max_depth = r.usize("max depth")?;
    let seed = r.u64("seed")?;
    let stop_rule = match r.u8("stop rule")? {
        0 => StopRule::Smax,
        1 => StopRule::Dim,
        t => return Err(Error::Format(format!("unknown stop rule tag {t}"))),
    };
    let embedder = match r.u8("embedder tag")? {
        0 => {
            let dim = r.usize("embedding dim")?;
            EmbedderConfig::mock(r.u64("mock seed")?, dim)
        }
        1 => {
            let dim = r.usize("embedding dim")?;
            EmbedderConfig {
                kind: EmbedderKind::Remote {
                    endpoint: r.string("endpoint")?,
                    model: r.string("model")?,
                    api_key_env: r.string("key env")?,
                },
                dim,
            }
        }
        t => return Err(Error::Format(format!("unknown embedder tag {t}"))),
    };
    let summarizer = match r.u8("summarizer tag")? {
        0 => LlmConfig::Mock,
        1 => LlmConfig::Remote {
            endpoint: r.string("endpoint")?,
            model: r.string("model")?,
            api_key_env: r.string("key env")?,
        },
        t => return Err(Error::Format(format!("unknown summarizer tag {t}"))),
    };
    let config = BuildConfig {
        bounds,
        hyperplanes,
        chunk_tokens,
        summary_tokens,
        max_depth,
        seed,
        stop_rule,
        embedder,
        summarizer,
    };
    config.validate()?;
    Ok(config)
}

/// Canonical bytes of one node; used for snapshot bodies and locality diffs.
pub fn encode_node(n: &GraphNode) -> Vec<u8> {
    let mut out = Vec::new();
    put_varint(&mut out, n.id.0);
    put_varint(&mut out, n.layer as u64);
    put_str(&mut out, &n.chunk.text);
    put_str(&mut out, &n.chunk.source_doc);
    out.push(match n.chunk.origin {
        Origin::Original => 0,
        Origin::Summary => 1,
    });
    out.push(u8::from(n.truncated));
    put_varint(&mut out, n.parent.map_or(0, |p| p.0 + 1));
    put_varint(&mut out, n.children.len() as u64);
    for c in &n.children {
        put_varint(&mut out, c.0);
    }
    out.extend_from_slice(&n.code.to_bytes());
    for v in n.embedding.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_node(r: &mut Reader<'_>, config: &BuildConfig) -> Result<GraphNode> {
    let id = NodeId(r.varint("node id")?);
    let layer = r.usize("node layer")?;
    let text = r.string("node text")?;
    let source_doc = r.string("source doc")?;
    let origin = match r.u8("origin")? {
        0 => Origin::Original,
        1 => Origin::Summary,
        t => return Err(Error::Format(format!("unknown origin tag {t}"))),
    };
    let truncated = match r.u8("truncated flag")? {
        0 => false,
        1 => true,
        t => return Err(Error::Format(format!("bad truncated flag {t}"))),
    };
    let parent = match r.varint("parent")? {
        0 => None,
        p => Some(NodeId(p - 1)),
    };
    let n_children = r.count("children", 1)?;
    let children = (0..n_children)
        .map(|_| r.varint("child id").map(NodeId))
        .collect::<Result<Vec<_>>>()?;
    let code_bytes = r.take(config.hyperplanes.div_ceil(8), "hash code")?;
    let code = HashCode::from_bytes(config.hyperplanes, code_bytes).map_err(|e| Error::Format(e.to_string()))?;
    let embedding = Embedding::from_stored(r.f32s(config.dim(), "embedding")?);
    Ok(GraphNode {
        id,
        layer,
        chunk: Chunk::new(id, text, source_doc, origin),
        embedding,
        code,
        parent,
        children,
        truncated,
    })
}

/// Serializes a built graph.
pub fn to_bytes(g: &LayeredGraph) -> Result<Vec<u8>> {
    if !g.is_built() {
        return Err(Error::Input("cannot snapshot an unbuilt graph".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_MAJOR.to_le_bytes());
    out.extend_from_slice(&FORMAT_MINOR.to_le_bytes());
    debug_assert_eq!(out.len(), CONFIG_OFFSET);
    encode_config(&mut out, &g.config);

    let h = &g.hyperplanes;
    out.extend_from_slice(&h.seed().to_le_bytes());
    put_varint(&mut out, h.dim() as u64);
    put_varint(&mut out, h.count() as u64);
    for v in h.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }

    put_varint(&mut out, g.next_id());
    put_varint(&mut out, g.layers.len() as u64);
    for layer in &g.layers {
        put_varint(&mut out, layer.len() as u64);
        for id in layer {
            put_varint(&mut out, id.0);
        }
    }
    put_varint(&mut out, g.nodes.len() as u64);
    for n in g.nodes.values() {
        out.extend_from_slice(&encode_node(n));
    }
    Ok(out)
}

/// Parses and verifies a snapshot.
pub fn from_bytes(bytes: &[u8]) -> Result<LayeredGraph> {
    let graph = from_bytes_unverified(bytes)?;
    check_graph(&graph)?;
    Ok(graph)
}

/// Parses a snapshot without running the invariant checks.
pub fn from_bytes_unverified(bytes: &[u8]) -> Result<LayeredGraph> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a graph snapshot (bad magic)".into()));
    }
    r.pos = MAGIC.len();
    let major = r.u16("version")?;
    let minor = r.u16("version")?;
    if major != FORMAT_MAJOR {
        return Err(Error::Incompatible {
            found_major: major,
            found_minor: minor,
            supported_major: FORMAT_MAJOR,
        });
    }
    let config = decode_config(&mut r)?;

    let seed = r.u64("hyperplane seed")?;
    let dim = r.usize("hyperplane dim")?;
    let count = r.usize("hyperplane count")?;
    if dim != config.dim() || count != config.hyperplanes || seed != config.seed {
        return Err(Error::Format("hyperplane header disagrees with config".into()));
    }
    let planes = r.f32s(dim * count, "hyperplanes")?;
    let hyperplanes = Hyperplanes::from_parts(seed, dim, count, planes)?;

    let next_id = r.varint("next id")?;
    let n_layers = r.count("layers", 1)?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let n = r.count("layer", 1)?;
        layers.push(
            (0..n)
                .map(|_| r.varint("layer id").map(NodeId))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let n_nodes = r.count("nodes", 1)?;
    let mut nodes = BTreeMap::new();
    let mut last = None;
    for _ in 0..n_nodes {
        let node = decode_node(&mut r, &config)?;
        if last.is_some_and(|l| node.id <= l) {
            return Err(Error::Format(format!("node {} out of order", node.id)));
        }
        last = Some(node.id);
        nodes.insert(node.id, node);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(LayeredGraph::from_parts(config, hyperplanes, layers, nodes, next_id))
}

/// Writes `g` to `path`; an existing file is replaced only with `force`.
pub fn save_snapshot(g: &LayeredGraph, path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Exists(path.to_path_buf()));
    }
    let bytes = to_bytes(g)?;
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<LayeredGraph> {
    from_bytes(&fs::read(path)?)
}

pub fn load_unverified(path: &Path) -> Result<LayeredGraph> {
    from_bytes_unverified(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn varint_round_trip() {
        for v in [0u64, 1, 127, 128, 300, 1 << 35, u64::MAX] {
            let mut out = Vec::new();
            put_varint(&mut out, v);
            let mut r = Reader { buf: &out, pos: 0 };
            assert_eq!(r.varint("v").unwrap(), v);
            assert_eq!(r.pos, out.len());
        }
        let mut out = Vec::new();
        put_varint(&mut out, 300);
        assert_eq!(out, vec![0xac, 0x02]);
    }
}
