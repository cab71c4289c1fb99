//! Seeded synthetic corpora with known answer chunks, for benchmarks and
//! retrieval-quality probes.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::build::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub docs: usize,
    pub chunks_per_doc: usize,
    /// Tokens per chunk; documents are exact multiples, so chunk boundaries are known.
    pub chunk_tokens: usize,
    pub topics: usize,
    /// Size of each topic's shared vocabulary.
    pub topic_vocab: usize,
    /// Share of tokens drawn from the topic vocabulary; the rest are unique to the chunk.
    pub topic_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            docs: 250,
            chunks_per_doc: 4,
            chunk_tokens: 128,
            topics: 16,
            topic_vocab: 64,
            topic_share: 0.5,
        }
    }
}

/// A query whose single correct chunk is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub query: String,
    /// Exact text of the answer chunk.
    pub answer_text: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub docs: Vec<Document>,
    /// Per document, the text of each of its chunks.
    pub chunks: Vec<Vec<String>>,
}

fn chunk_word(doc: usize, chunk: usize, i: usize) -> String {
    format!("d{doc}c{chunk}u{i}")
}

pub fn synthetic_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.docs == 0 || cfg.chunks_per_doc == 0 || cfg.chunk_tokens == 0 || cfg.topics == 0 || cfg.topic_vocab == 0 {
        return Err(Error::Config("synthetic corpus sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.topic_share) {
        return Err(Error::Config("topic share must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut docs = Vec::with_capacity(cfg.docs);
    let mut chunks = Vec::with_capacity(cfg.docs);
    for d in 0..cfg.docs {
        let topic = rng.random_range(0..cfg.topics);
        let mut texts = Vec::with_capacity(cfg.chunks_per_doc);
        for c in 0..cfg.chunks_per_doc {
            let words: Vec<String> = (0..cfg.chunk_tokens)
                .map(|i| {
                    if rng.random_bool(cfg.topic_share) {
                        format!("t{topic}v{}", rng.random_range(0..cfg.topic_vocab))
                    } else {
                        chunk_word(d, c, i)
                    }
                })
                .collect();
            texts.push(words.join(" "));
        }
        docs.push(Document::new(format!("doc{d:05}"), texts.join(" ")));
        chunks.push(texts);
    }
    Ok(SynthCorpus { docs, chunks })
}

impl SynthCorpus {
    /// `n` probes over distinct chunks; each query is `tokens` words sampled
    /// from the answer chunk's unique words.
    pub fn probes(&self, seed: u64, n: usize, tokens: usize) -> Vec<Probe> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let all: Vec<(usize, usize)> = self
            .chunks
            .iter()
            .enumerate()
            .flat_map(|(d, cs)| (0..cs.len()).map(move |c| (d, c)))
            .collect();
        all.choose_multiple(&mut rng, n.min(all.len()))
            .map(|&(d, c)| {
                let text = &self.chunks[d][c];
                let unique: Vec<&str> = text.split_whitespace().filter(|w| w.starts_with('d')).collect();
                let query: Vec<&str> = unique
                    .choose_multiple(&mut rng, tokens.min(unique.len()))
                    .copied()
                    .collect();
                Probe {
                    query: query.join(" "),
                    answer_text: text.clone(),
                    doc_id: self.docs[d].id.clone(),
                }
            })
            .filter(|p| !p.query.is_empty())
            .collect()
    }
}
