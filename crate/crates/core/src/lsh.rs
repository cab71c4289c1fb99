//! Random-hyperplane hashing.
//!
//! Each hyperplane contributes one bit: `1` when the embedding lies on the
//! non-negative side (`v·h ≥ 0`), `0` otherwise. Hyperplanes are sampled once
//! from a seeded stream and stored with the graph so later inserts hash into
//! the same buckets.
//!
//! The sampling stream is `ChaCha20` keyed by `SHA-256("erarag/hyperplanes/v1" ‖ seed_le)`;
//! entries are standard normal (`rand_distr::StandardNormal`, f64) rounded to f32.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const HYPERPLANE_STREAM: &[u8] = b"erarag/hyperplanes/v1";

/// Tolerance on `|v|₂ − 1` accepted by [`hash_vector`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// A frozen set of random hyperplanes, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplanes {
    seed: u64,
    dim: usize,
    count: usize,
    planes: Vec<f32>,
}

impl Hyperplanes {
    /// Reassembles hyperplanes from stored parts, e.g. when loading a snapshot.
    pub fn from_parts(seed: u64, dim: usize, count: usize, planes: Vec<f32>) -> Result<Self> {
        if dim == 0 || count == 0 {
            return Err(Error::Config(format!(
                "hyperplanes need dim >= 1 and count >= 1 (got dim={dim}, count={count})"
            )));
        }
        if planes.len() != dim * count {
            return Err(Error::Input(format!(
                "expected {} hyperplane entries, got {}",
                dim * count,
                planes.len()
            )));
        }
        Ok(Self {
            seed,
            dim,
            count,
            planes,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Row `j` of the matrix.
    pub fn row(&self, j: usize) -> &[f32] {
        &self.planes[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.planes.chunks_exact(self.dim)
    }

    /// The flat row-major matrix.
    pub fn as_slice(&self) -> &[f32] {
        &self.planes
    }
}

/// Draws `count` hyperplanes in `R^dim` from the stream keyed by `seed`.
pub fn sample_hyperplanes(seed: u64, dim: usize, count: usize) -> Result<Hyperplanes> {
    if dim == 0 || count == 0 {
        return Err(Error::Config(format!(
            "hyperplanes need dim >= 1 and count >= 1 (got dim={dim}, count={count})"
        )));
    }
    let mut hasher = Sha256::new();
    hasher.update(HYPERPLANE_STREAM);
    hasher.update(seed.to_le_bytes());
    let mut rng = ChaCha20Rng::from_seed(hasher.finalize().into());

    let mut planes = Vec::with_capacity(dim * count);
    for _ in 0..count {
        loop {
            let row: Vec<f32> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
            // a zero row has no orientation; redraw (probability ~0)
            if row.iter().any(|x| *x != 0.0) {
                planes.extend_from_slice(&row);
                break;
            }
        }
    }
    Ok(Hyperplanes {
        seed,
        dim,
        count,
        planes,
    })
}

/// Fixed-length bit string; bit `j` belongs to hyperplane `j`.
///
/// Bits are packed most-significant first, so the derived ordering on equal
/// lengths is the ordering of [`HashCode::as_ordinal`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashCode {
    len: usize,
    words: Vec<u64>,
}

impl HashCode {
    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut len = 0;
        let mut words = Vec::new();
        for bit in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if bit {
                *words.last_mut().unwrap() |= 1u64 << (63 - len % 64);
            }
            len += 1;
        }
        Self { len, words }
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Input(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_bits(bits))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, j: usize) -> bool {
        assert!(j < self.len, "bit {j} out of range for {}-bit code", self.len);
        self.words[j / 64] >> (63 - j % 64) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|j| self.bit(j))
    }

    /// The bits read as a big-endian unsigned integer, when it fits in 128 bits.
    pub fn as_ordinal(&self) -> Option<u128> {
        if self.len > 128 {
            return None;
        }
        Some(self.bits().fold(0u128, |acc, b| (acc << 1) | b as u128))
    }

    /// Packs the bits into `ceil(len / 8)` bytes, most significant bit first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8);
        self.words.iter().flat_map(|w| w.to_be_bytes()).take(n).collect()
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Input(format!(
                "{len}-bit code needs {} bytes, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let bits = (0..len).map(|j| bytes[j / 8] >> (7 - j % 8) & 1 == 1);
        let code = Self::from_bits(bits);
        if code.to_bytes() != bytes {
            return Err(Error::Input("non-zero padding bits in hash code".into()));
        }
        Ok(code)
    }
}

impl fmt::Display for HashCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Hashes a unit vector against the hyperplanes.
pub fn hash_vector(v: &[f32], planes: &Hyperplanes) -> Result<HashCode> {
    if v.len() != planes.dim {
        return Err(Error::Input(format!(
            "vector has dimension {}, hyperplanes expect {}",
            v.len(),
            planes.dim
        )));
    }
    let norm = dot(v, v).sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::Input(format!(
            "vector norm {norm} is not within {UNIT_NORM_TOLERANCE} of 1"
        )));
    }
    Ok(HashCode::from_bits(planes.rows().map(|h| dot(v, h) >= 0.0)))
}

/// Number of differing bits.
pub fn hamming_distance(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::Input(format!(
            "hash codes differ in length ({} vs {})",
            a.len, b.len
        )));
    }
    Ok(a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum())
}

fn check_angle(theta: f64) -> Result<()> {
    if !(0.0..=std::f64::consts::PI).contains(&theta) {
        return Err(Error::Input(format!("angle {theta} outside [0, pi]")));
    }
    Ok(())
}

/// `(1 + cos θ) / 2`: the same-side probability model used when reasoning
/// about bucket collisions.
///
/// This is exact only at θ ∈ {0, π/2, π}. For Gaussian hyperplanes the
/// realised per-bit agreement rate is [`angular_collision_probability`].
pub fn collision_probability(theta: f64) -> Result<f64> {
    check_angle(theta)?;
    Ok((1.0 + theta.cos()) / 2.0)
}

/// `1 − θ/π`: the probability that a rotation-invariant random hyperplane
/// puts two vectors at angle θ on the same side.
pub fn angular_collision_probability(theta: f64) -> Result<f64> {
    check_angle(theta)?;
    Ok(1.0 - theta / std::f64::consts::PI)
}
