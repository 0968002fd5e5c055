//! Seed derivation for reproducible runs.
//!
//! One master seed fans out into independent child generators, one per
//! purpose and element. A child seed depends only on `(master, purpose,
//! index)`, so adding draws to one stream never shifts another.
//!
//! Purpose offsets are fixed and part of the reproducibility contract:
//!
//! | purpose       | offset |
//! |---------------|--------|
//! | `Source`      | 1      |
//! | `Split`       | 2      |
//! | `Attenuation` | 3      |
//! | `Accept`      | 4      |
//! | `Dark`        | 5      |
//! | `Jitter`      | 6      |
//! | `Crosstalk`   | 7      |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Source = 1,
    Split = 2,
    Attenuation = 3,
    Accept = 4,
    Dark = 5,
    Jitter = 6,
    Crosstalk = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn child_seed(master: u64, purpose: Purpose, index: u64) -> u64 {
    let tag = ((purpose as u64) << 32) | (index & 0xFFFF_FFFF);
    splitmix64(splitmix64(master) ^ splitmix64(tag))
}

pub fn child_rng(master: u64, purpose: Purpose, index: u64) -> SimRng {
    SimRng::seed_from_u64(child_seed(master, purpose, index))
}
