use xxhash_rust::xxh3::xxh3_64_with_seed;

/// Stable 64-bit hash of a sequence of byte fields.
///
/// Fields are length-prefixed so that `("ab", "c")` and `("a", "bc")` differ.
pub(crate) fn stable_hash(seed: u64, fields: &[&[u8]]) -> u64 {
    let mut buf = Vec::with_capacity(fields.iter().map(|f| f.len() + 8).sum());
    for field in fields {
        buf.extend_from_slice(&(field.len() as u64).to_le_bytes());
        buf.extend_from_slice(field);
    }
    xxh3_64_with_seed(&buf, seed)
}

pub(crate) fn hash_str(seed: u64, s: &str) -> u64 {
    xxh3_64_with_seed(s.as_bytes(), seed)
}
