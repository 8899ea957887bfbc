use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

/// Fixed-width 0/1 feature vectors derived from molecule ids.
///
/// The id is split into alphanumeric tokens and each token sets one bit, so
/// ids sharing substructure (for instance a depth tag) share bits. This is a
/// stand-in for real molecular fingerprints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedFeaturizer {
    pub dim: usize,
}

impl HashedFeaturizer {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature width must be positive");
        Self { dim }
    }

    pub fn features(&self, molecule: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for token in molecule
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let mut h = FnvHasher::default();
            h.write(token.as_bytes());
            out[(h.finish() % self.dim as u64) as usize] = 1.0;
        }
        out
    }
}
