//! Per-path random streams.
//!
//! Every path owns one ChaCha8 key derived from `(master seed, path index)`;
//! each noise source reads its own ChaCha stream under that key, so a path's
//! draws do not depend on scheduling or on how many draws another source made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Noise sources with independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Source {
    Gaussian = 0,
    BranchingJumps = 1,
    ImmigrationJumps = 2,
    Disassembly = 3,
    Stable = 4,
    Sampling = 5,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_key(master: u64, path: u64) -> u64 {
    splitmix64(splitmix64(master) ^ path.wrapping_mul(0xD605_BBB5_8C8A_BE9B))
}

pub fn stream(master: u64, path: u64, source: Source) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(path_key(master, path));
    rng.set_stream(source as u64);
    rng
}

/// The full set of streams one path consumes.
pub struct PathStreams {
    pub gauss: ChaCha8Rng,
    pub mu: ChaCha8Rng,
    pub nu: ChaCha8Rng,
    pub split: ChaCha8Rng,
    pub stable: ChaCha8Rng,
}

impl PathStreams {
    pub fn new(master: u64, path: u64) -> Self {
        PathStreams {
            gauss: stream(master, path, Source::Gaussian),
            mu: stream(master, path, Source::BranchingJumps),
            nu: stream(master, path, Source::ImmigrationJumps),
            split: stream(master, path, Source::Disassembly),
            stable: stream(master, path, Source::Stable),
        }
    }
}
