//! Seed derivation from structured identifiers.
//!
//! Seeds are hashed from named parts rather than positional indices, so
//! reordering claims or adding agents never shifts anyone else's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(parts: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let out = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&out);
    bytes
}

/// 64-bit seed from an ordered list of identifiers.
pub fn derive_seed(parts: &[&str]) -> u64 {
    let bytes = digest(parts);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}

/// Hex fingerprint (first 16 bytes of SHA-256) of an ordered list of parts.
pub fn fingerprint(parts: &[&str]) -> String {
    digest(parts)[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// The named stream for one agent within one run.
pub fn agent_stream(run_seed: u64, agent_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&["agent", &run_seed.to_string(), agent_id]))
}
