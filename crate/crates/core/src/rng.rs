//! Deterministic random-number streams.
//!
//! One 64-bit master seed is shared by a whole run. Every consumer derives
//! its own independent stream from a label (a purpose tag plus indices), so
//! results do not depend on scheduling order or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// FNV-1a over the tag bytes and the little-endian index words.
fn label_hash(tag: &str, indices: &[u64]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    for ix in indices {
        for b in ix.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

/// Factory for labelled RNG streams under one master seed.
#[derive(Clone, Copy, Debug)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Streams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Independent stream for `(tag, indices)`. Same label, same stream.
    pub fn stream(&self, tag: &str, indices: &[u64]) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(label_hash(tag, indices));
        rng
    }

    /// Human-readable form of a label, recorded in run metadata.
    pub fn label(tag: &str, indices: &[u64]) -> String {
        let mut s = String::from(tag);
        for ix in indices {
            s.push('/');
            s.push_str(&ix.to_string());
        }
        s
    }
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}
