use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Key material for a stream, derived only from its inputs.
pub fn derive_seed(master: u64, node: &str, purpose: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    // Length prefixes keep ("ab","c") and ("a","bc") apart.
    h.update((node.len() as u64).to_le_bytes());
    h.update(node.as_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    seed
}

pub fn rng_stream(master: u64, node: &str, purpose: &str) -> SimRng {
    SimRng::from_seed(derive_seed(master, node, purpose))
}

/// Lazily created per-(node, purpose) streams of one replication.
#[derive(Debug, Clone)]
pub struct RngStreams {
    master: u64,
    streams: BTreeMap<(String, String), SimRng>,
}

impl RngStreams {
    pub fn new(master: u64) -> Self {
        Self { master, streams: BTreeMap::new() }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn get(&mut self, node: &str, purpose: &str) -> &mut SimRng {
        let master = self.master;
        self.streams.entry((node.to_owned(), purpose.to_owned())).or_insert_with(|| rng_stream(master, node, purpose))
    }
}
