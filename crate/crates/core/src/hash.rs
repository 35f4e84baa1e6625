//! FNV-1a hashing, shared by the tokenizer, seed derivation, and the
//! frozen-weights checksum.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive an independent stream seed from a base seed and a purpose tag, so
/// every random matrix in the artifact is keyed by the single config seed.
pub(crate) fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = fnv1a64(&seed.to_le_bytes());
    for &b in tag.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Checksum a slice of f64 values by their bit patterns.
pub(crate) fn checksum_f64(values: impl IntoIterator<Item = f64>) -> u64 {
    let mut h = FNV_OFFSET;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}
