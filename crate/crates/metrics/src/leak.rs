//! Train/test leak detection by content fingerprint.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

/// SHA-256 over the little-endian bytes of `values`.
pub fn fingerprint(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Pairs `(test_index, train_index)` whose content is identical.
pub fn find_leaks(train: &[String], test: &[String]) -> Vec<(usize, usize)> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, f) in train.iter().enumerate() {
        seen.entry(f.as_str()).or_insert(i);
    }
    test.iter()
        .enumerate()
        .filter_map(|(j, f)| seen.get(f.as_str()).map(|&i| (j, i)))
        .collect()
}
