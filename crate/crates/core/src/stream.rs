//! Keyed random streams.
//!
//! Every random draw in a simulation comes from a stream keyed by
//! `(master_seed, domain, round, client)`. The key is hashed with SHA-256 and
//! the digest seeds a ChaCha generator, so results never depend on the order
//! in which workers happen to run.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// The random stream type used throughout the crate.
pub type Stream = ChaCha12Rng;

/// Purpose of a derived stream. Streams of different domains never collide
/// even at equal indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    DataGen,
    InitTrial,
    ClientRound,
    MechanismNoise,
    Sampling,
}

impl Domain {
    fn tag(self) -> &'static [u8] {
        match self {
            Domain::DataGen => b"data_gen",
            Domain::InitTrial => b"init_trial",
            Domain::ClientRound => b"client_round",
            Domain::MechanismNoise => b"mechanism_noise",
            Domain::Sampling => b"sampling",
        }
    }
}

/// Derive the stream for `(master_seed, domain, round, client)`.
pub fn derive_stream(master_seed: u64, domain: Domain, round: u64, client: u64) -> Stream {
    let mut hasher = Sha256::new();
    hasher.update(b"centaur/stream/v1");
    hasher.update(master_seed.to_le_bytes());
    let tag = domain.tag();
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag);
    hasher.update(round.to_le_bytes());
    hasher.update(client.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}

/// Derive a 64-bit sub-seed, e.g. for the `trial`-th repetition of an experiment.
pub fn derive_seed(master_seed: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"centaur/seed/v1");
    hasher.update(master_seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Split an independent child stream off `parent` by drawing a fresh 256-bit seed.
pub fn child_stream<R: rand::Rng + ?Sized>(parent: &mut R) -> Stream {
    let mut seed = [0u8; 32];
    parent.fill_bytes(&mut seed);
    ChaCha12Rng::from_seed(seed)
}
