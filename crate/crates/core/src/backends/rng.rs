use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic stream for one call site.
///
/// Seeded from `(seed, source_id, tag)` only, so a sample draws the same
/// numbers no matter which thread or in what order it is processed.
pub fn stream_rng(seed: u64, source_id: &str, tag: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((source_id.len() as u64).to_le_bytes());
    h.update(source_id.as_bytes());
    h.update(tag.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Identifier for an image that arrived without a source id.
pub fn content_id(pixels: &[u8]) -> String {
    format!("sha256:{}", sha256_hex(pixels))
}
