//! Data patterns written before a test and the deterministic stream helpers every sampler uses.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::LabError;

/// The random stream type threaded through all sampling operations.
pub type SimRng = ChaCha8Rng;

/// Test data patterns. Byte values per row parity follow the usual naming:
/// solid (SO), column stripe (CO), checkered (CH), row stripe (RS), and a fixed random fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DataPattern {
    SO0,
    SO1,
    CO0,
    CO1,
    CH0,
    CH1,
    RS0,
    RS1,
    Random,
}

impl DataPattern {
    pub const ALL: [DataPattern; 9] = [
        DataPattern::SO0,
        DataPattern::SO1,
        DataPattern::CO0,
        DataPattern::CO1,
        DataPattern::CH0,
        DataPattern::CH1,
        DataPattern::RS0,
        DataPattern::RS1,
        DataPattern::Random,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn mask_bit(self) -> u16 {
        1 << self.index()
    }

    /// Byte written to every byte of `row` (ignored for `Random`).
    pub fn byte_for_row(self, row: u32) -> u8 {
        let even = row % 2 == 0;
        match self {
            DataPattern::SO0 => 0x00,
            DataPattern::SO1 => 0xFF,
            DataPattern::CO0 => 0x55,
            DataPattern::CO1 => 0xAA,
            DataPattern::CH0 => if even { 0x55 } else { 0xAA },
            DataPattern::CH1 => if even { 0xAA } else { 0x55 },
            DataPattern::RS0 => if even { 0x00 } else { 0xFF },
            DataPattern::RS1 => if even { 0xFF } else { 0x00 },
            DataPattern::Random => 0,
        }
    }

    /// Stored value of bit `bit` of `row` in `bank`; `Random` is a fixed hash of the position.
    pub fn bit_at(self, bank: u32, row: u32, bit: u32) -> bool {
        match self {
            DataPattern::Random => {
                mix64(hash3(0x5eed_da7a, bank as u64, ((row as u64) << 32) | bit as u64)) & 1 == 1
            }
            p => (p.byte_for_row(row) >> (bit % 8)) & 1 == 1,
        }
    }
}

impl fmt::Display for DataPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DataPattern::Random => "RANDOM",
            p => return write!(f, "{p:?}"),
        };
        f.write_str(s)
    }
}

impl FromStr for DataPattern {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DataPattern::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| LabError::Config(format!("unknown data pattern '{s}'")))
    }
}

/// SplitMix64 finalizer, used as a keyed hash for lazily derived chip parameters.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn hash3(a: u64, b: u64, c: u64) -> u64 {
    mix64(mix64(mix64(a) ^ b) ^ c)
}

/// Uniform value in [0, 1) from a hash.
pub fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Independent stream for (`seed`, `tag`, `index`).
pub fn stream(seed: u64, tag: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(hash3(seed, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in DataPattern::ALL {
            assert_eq!(p.to_string().parse::<DataPattern>().unwrap(), p);
        }
        assert!("XX".parse::<DataPattern>().is_err());
    }

    #[test]
    fn stripe_bytes() {
        assert_eq!(DataPattern::CO0.byte_for_row(3), 0x55);
        assert_eq!(DataPattern::CH0.byte_for_row(1), 0xAA);
        assert_eq!(DataPattern::RS1.byte_for_row(0), 0xFF);
        assert!(DataPattern::CO0.bit_at(0, 0, 0));
        assert!(!DataPattern::CO0.bit_at(0, 0, 1));
    }

    #[test]
    fn unit_range() {
        assert!(unit_f64(u64::MAX) < 1.0);
        assert_eq!(unit_f64(0), 0.0);
    }
}
