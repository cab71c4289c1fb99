//! Unit-norm text embeddings behind an [`Embedder`] provider.
//!
//! [`MockEmbedder`] is deterministic and offline: every whitespace token owns
//! a standard-normal vector drawn from `ChaCha20` keyed by
//! `SHA-256("erarag/mock-embed/v1" ‖ seed_le ‖ token)`; a text embeds to the
//! normalized count-weighted sum of its token vectors. Texts that share most
//! of their tokens therefore land close together.
//!
//! [`RemoteEmbedder`] talks to an OpenAI-compatible service and memoizes
//! responses in an [`EmbeddingCache`].

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lsh::dot;
use crate::remote::OpenAiClient;

const MOCK_STREAM: &[u8] = b"erarag/mock-embed/v1";

/// Texts per `/v1/embeddings` request.
pub const REMOTE_BATCH: usize = 64;

pub const DEFAULT_MOCK_DIM: usize = 64;

/// A vector with `|values|₂ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// Wraps stored values without renormalizing; used by the snapshot loader,
    /// which checks norms as part of verification.
    pub fn from_stored(values: Vec<f32>) -> Self {
        Self(values)
    }

    /// Cosine similarity, computed in f64.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        cosine(&self.0, &other.0)
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    dot(a, b) / denom
}

/// Scales `v` to unit length.
pub fn normalize(v: &[f64]) -> Result<Embedding> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Input(format!("cannot normalize a vector of norm {norm}")));
    }
    Ok(Embedding(v.iter().map(|x| (x / norm) as f32).collect()))
}

/// Produces embeddings for text.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Embeds every text, preserving order. Empty texts are rejected.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>>;

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        Ok(self
            .embed_batch(&[text])?
            .pop()
            .expect("one text in, one embedding out"))
    }
}

fn reject_empty(texts: &[&str]) -> Result<()> {
    if let Some(i) = texts.iter().position(|t| t.split_whitespace().next().is_none()) {
        return Err(Error::Input(format!("text {i} is empty")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderKind {
    Mock {
        seed: u64,
    },
    Remote {
        /// Endpoint root; empty means "read `ERA_API_BASE`".
        endpoint: String,
        model: String,
        /// Name of the environment variable carrying the bearer token.
        api_key_env: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
}

impl EmbedderConfig {
    pub fn mock(seed: u64, dim: usize) -> Self {
        Self {
            kind: EmbedderKind::Mock { seed },
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            EmbedderKind::Mock { .. } if self.dim < 2 => Err(Error::Config(format!(
                "mock embedder needs dim >= 2 (got {})",
                self.dim
            ))),
            EmbedderKind::Remote { model, .. } if model.is_empty() => {
                Err(Error::Config("remote embedder needs a model name".into()))
            }
            _ if self.dim == 0 => Err(Error::Config("embedding dim must be positive".into())),
            _ => Ok(()),
        }
    }

    /// Instantiates the provider. `cache_path` is used by the remote kind only.
    pub fn build(&self, cache_path: Option<&Path>) -> Result<Box<dyn Embedder>> {
        self.validate()?;
        Ok(match &self.kind {
            EmbedderKind::Mock { seed } => Box::new(MockEmbedder::new(*seed, self.dim)?),
            EmbedderKind::Remote {
                endpoint,
                model,
                api_key_env,
            } => {
                let client = OpenAiClient::from_env(endpoint, api_key_env)?;
                let cache = match cache_path {
                    Some(p) => EmbeddingCache::open(p)?,
                    None => EmbeddingCache::in_memory(),
                };
                Box::new(RemoteEmbedder::new(client, model.clone(), self.dim, cache))
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    seed: u64,
    dim: usize,
}

impl MockEmbedder {
    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("mock embedder needs dim >= 2 (got {dim})")));
        }
        Ok(Self { seed, dim })
    }

    fn token_vector(&self, token: &str, scale: f64, acc: &mut [f64]) {
        let mut hasher = Sha256::new();
        hasher.update(MOCK_STREAM);
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let mut rng = ChaCha20Rng::from_seed(hasher.finalize().into());
        for slot in acc.iter_mut() {
            *slot += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }

    fn embed_one(&self, text: &str) -> Result<Embedding> {
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for tok in text.split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
        let mut acc = vec![0f64; self.dim];
        for (tok, n) in counts {
            self.token_vector(tok, n as f64, &mut acc);
        }
        normalize(&acc).map_err(|_| Error::provider("mock embedding has zero norm", 1, false))
    }
}

impl Embedder for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        reject_empty(texts)?;
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

type Digest32 = [u8; 32];

/// Content-addressed embedding memo, optionally backed by an append-only file.
///
/// File record layout: `digest[32] ‖ dim: u32 LE ‖ dim × f32 LE`, where
/// `digest = SHA-256(model ‖ 0x00 ‖ text)`.
#[derive(Debug)]
pub struct EmbeddingCache {
    entries: Mutex<HashMap<Digest32, Vec<f32>>>,
    log: Mutex<Option<File>>,
    path: Option<PathBuf>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(HashMap::new()),
            log: Mutex::new(None),
            path: None,
        }
    }

    /// Loads any existing records at `path` and appends new ones there.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let mut reader = BufReader::new(File::open(path)?);
            let mut bytes = Vec::new();
            reader.read_to_end(&mut bytes)?;
            let mut rest = bytes.as_slice();
            while rest.len() >= 36 {
                let digest: Digest32 = rest[..32].try_into().unwrap();
                let dim = u32::from_le_bytes(rest[32..36].try_into().unwrap()) as usize;
                let need = 36 + dim * 4;
                if rest.len() < need {
                    break;
                }
                let values = rest[36..need]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                entries.insert(digest, values);
                rest = &rest[need..];
            }
            if !rest.is_empty() {
                log::warn!(
                    "ignoring {} trailing bytes of a partial record in {}",
                    rest.len(),
                    path.display()
                );
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: Mutex::new(entries),
            log: Mutex::new(Some(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn digest(model: &str, text: &str) -> Digest32 {
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        h.finalize().into()
    }

    pub fn get(&self, digest: &Digest32) -> Option<Vec<f32>> {
        self.entries.lock().get(digest).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, digest: Digest32, values: &[f32]) -> Result<()> {
        let mut log = self.log.lock();
        let mut entries = self.entries.lock();
        if entries.contains_key(&digest) {
            return Ok(());
        }
        if let Some(file) = log.as_mut() {
            let mut rec = Vec::with_capacity(36 + values.len() * 4);
            rec.extend_from_slice(&digest);
            rec.extend_from_slice(&(values.len() as u32).to_le_bytes());
            for v in values {
                rec.extend_from_slice(&v.to_le_bytes());
            }
            file.write_all(&rec)?;
        }
        entries.insert(digest, values.to_vec());
        Ok(())
    }
}

/// Embedder backed by an OpenAI-compatible `/v1/embeddings` service.
#[derive(Debug)]
pub struct RemoteEmbedder {
    client: OpenAiClient,
    model: String,
    dim: usize,
    cache: EmbeddingCache,
}

impl RemoteEmbedder {
    pub fn new(client: OpenAiClient, model: String, dim: usize, cache: EmbeddingCache) -> Self {
        Self {
            client,
            model,
            dim,
            cache,
        }
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        reject_empty(texts)?;
        let digests: Vec<Digest32> = texts.iter().map(|t| EmbeddingCache::digest(&self.model, t)).collect();
        let mut out: Vec<Option<Embedding>> = digests.iter().map(|d| self.cache.get(d).map(Embedding)).collect();

        let mut missing: Vec<usize> = Vec::new();
        for (i, slot) in out.iter().enumerate() {
            // identical texts in one batch are fetched once
            if slot.is_none() && !missing.iter().any(|&j| digests[j] == digests[i]) {
                missing.push(i);
            }
        }
        for batch in missing.chunks(REMOTE_BATCH) {
            let inputs: Vec<&str> = batch.iter().map(|&i| texts[i]).collect();
            let raw = self.client.embeddings(&self.model, &inputs)?;
            for (&i, values) in batch.iter().zip(raw) {
                if values.len() != self.dim {
                    return Err(Error::provider(
                        format!("expected {}-dim embedding, got {}", self.dim, values.len()),
                        1,
                        false,
                    ));
                }
                let wide: Vec<f64> = values.iter().map(|x| *x as f64).collect();
                let emb = normalize(&wide).map_err(|_| Error::provider("provider returned a zero vector", 1, false))?;
                self.cache.insert(digests[i], emb.values())?;
            }
        }
        for (slot, d) in out.iter_mut().zip(&digests) {
            if slot.is_none() {
                *slot = self.cache.get(d).map(Embedding);
            }
        }
        Ok(out.into_iter().map(|e| e.expect("every digest fetched")).collect())
    }
}
