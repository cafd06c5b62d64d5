//! Seeded synthetic DRAM chips and the failure samplers built on them.
//!
//! Per-cell parameters are not stored. They are re-derived on demand from a keyed hash of
//! (chip seed, coordinates), so a chip serializes to a few kilobytes yet every query is
//! reproducible. Only the per-subarray weak bitline sets are materialized.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{aggressor_rows, DramGeometry, Location, RowRemapScheme};
use crate::pattern::{hash3, stream, DataPattern, SimRng};

/// Activation failures vanish at or above this tRCD.
pub const SAFE_TRCD_NS: f64 = 14.0;
/// tRCD at which `WeakCell::fprob` is defined.
pub const REFERENCE_TRCD_NS: f64 = 10.0;
/// Temperature at which `WeakCell::fprob` is defined.
pub const REFERENCE_TEMP_C: f64 = 55.0;
pub const TEMP_RANGE_C: (f64, f64) = (40.0, 70.0);
/// Hammer count at which `HammerParams::density_at_ref` is defined (top of the usual sweep).
pub const HAMMER_REF_HC: f64 = 150_000.0;
/// On-die ECC word size in data bits.
pub const ECC_WORD_BITS: u32 = 128;

const TAG_WEAK_COLS: u64 = 0x11;
const TAG_BITLINES: u64 = 0x12;
const TAG_CELLS: u64 = 0x13;
const TAG_HAMMER: u64 = 0x14;
const TAG_WEAKEST: u64 = 0x15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Manufacturer {
    A,
    B,
    C,
}

impl FromStr for Manufacturer {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Manufacturer::A),
            "B" => Ok(Manufacturer::B),
            "C" => Ok(Manufacturer::C),
            _ => Err(LabError::Config(format!("unknown manufacturer '{s}'"))),
        }
    }
}

impl fmt::Display for Manufacturer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TypeNode {
    Ddr3Old,
    Ddr3New,
    Ddr4Old,
    Ddr4New,
    #[serde(rename = "lpddr4-1x")]
    Lpddr4_1x,
    #[serde(rename = "lpddr4-1y")]
    Lpddr4_1y,
}

impl TypeNode {
    pub const ALL: [TypeNode; 6] = [
        TypeNode::Ddr3Old,
        TypeNode::Ddr3New,
        TypeNode::Ddr4Old,
        TypeNode::Ddr4New,
        TypeNode::Lpddr4_1x,
        TypeNode::Lpddr4_1y,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TypeNode::Ddr3Old => "ddr3-old",
            TypeNode::Ddr3New => "ddr3-new",
            TypeNode::Ddr4Old => "ddr4-old",
            TypeNode::Ddr4New => "ddr4-new",
            TypeNode::Lpddr4_1x => "lpddr4-1x",
            TypeNode::Lpddr4_1y => "lpddr4-1y",
        }
    }

    /// Geometry and timing preset family.
    pub fn family(self) -> &'static str {
        match self {
            TypeNode::Ddr3Old | TypeNode::Ddr3New => "ddr3",
            TypeNode::Ddr4Old | TypeNode::Ddr4New => "ddr4",
            TypeNode::Lpddr4_1x | TypeNode::Lpddr4_1y => "lpddr4",
        }
    }

    pub fn is_lpddr4(self) -> bool {
        self.family() == "lpddr4"
    }
}

impl FromStr for TypeNode {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        TypeNode::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| LabError::Config(format!("unknown type-node '{s}'")))
    }
}

impl fmt::Display for TypeNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What on-die ECC does with a word holding two or more flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EccMultiFlipPolicy {
    /// Leave the flips untouched.
    #[default]
    PassThrough,
    /// Flip one extra bit at the position named by the XOR syndrome of the flipped positions.
    Miscorrect,
    /// Correct the lowest flipped bit only.
    PartialCorrect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HammerResponse {
    /// Zero below the threshold, then 1 - (threshold / hc)^steepness / 2.
    Onset { steepness: f64 },
    /// Flip iff hc >= threshold.
    Step,
}

/// Mixture weights for a weak cell's base failure probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FprobMixture {
    /// Cells that fail almost always: fprob in [0.9, 1].
    pub high: f64,
    /// Share of `high` cells pinned to exactly 1.
    pub high_exact_one: f64,
    /// Metastable cells: fprob within 0.0005 of 0.5.
    pub band: f64,
    // The remainder fail rarely: fprob = 0.1 * Beta(0.7, 3).
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HammerParams {
    pub hc_first_min: f64,
    /// Vulnerable cells per bit whose threshold is at most `HAMMER_REF_HC`.
    pub density_at_ref: f64,
    /// Power-law exponent of the threshold CDF.
    pub exponent: f64,
    pub response: HammerResponse,
    /// Sensitizing probability per pattern; the worst-case pattern carries the largest weight.
    pub pattern_weights: BTreeMap<DataPattern, f64>,
    pub worst_pattern: DataPattern,
    /// Farthest physical row offset from the victim that can flip.
    pub max_offset: u32,
    /// Disturbance ratio per additional two rows of distance.
    pub offset_decay: f64,
    pub remap: RowRemapScheme,
    pub on_die_ecc: bool,
    pub ecc_policy: EccMultiFlipPolicy,
}

impl HammerParams {
    /// Highest threshold ever drawn; cells above it could not flip in any supported sweep.
    pub fn max_threshold(&self) -> f64 {
        (2.0 * HAMMER_REF_HC).max(4.0 * self.hc_first_min)
    }

    /// Expected vulnerable cells per bit.
    pub fn cells_per_bit(&self) -> f64 {
        let lo = (self.hc_first_min / HAMMER_REF_HC).powf(self.exponent);
        let hi = (self.max_threshold() / HAMMER_REF_HC).powf(self.exponent);
        self.density_at_ref * (hi - lo)
    }

    fn sample_threshold(&self, u: f64) -> f64 {
        let lo = self.hc_first_min.powf(self.exponent);
        let hi = self.max_threshold().powf(self.exponent);
        (lo + u * (hi - lo)).powf(1.0 / self.exponent)
    }

    /// Per-cell flip probability under a disturbance of `hc` hammers.
    pub fn flip_probability(&self, hc: f64, threshold: f64) -> f64 {
        if hc <= 0.0 {
            return 0.0;
        }
        match self.response {
            HammerResponse::Step => {
                if hc >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
            HammerResponse::Onset { steepness } => {
                if hc < threshold {
                    0.0
                } else {
                    1.0 - 0.5 * (threshold / hc).powf(steepness)
                }
            }
        }
    }

    /// Disturbance, as a fraction of the hammer count, felt by the physical row at `offset`
    /// from a double-sided victim. Zero for aggressors, odd offsets and rows past `max_offset`.
    pub fn offset_weight(&self, offset: i64) -> f64 {
        if offset.unsigned_abs() > self.max_offset as u64 || offset % 2 != 0 {
            return 0.0;
        }
        let w = |d: u64| match d {
            1 => 0.5,
            3 => 0.5 * self.offset_decay,
            5 => 0.5 * self.offset_decay * self.offset_decay,
            _ => 0.0,
        };
        w((offset - 1).unsigned_abs()) + w((offset + 1).unsigned_abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufacturerProfile {
    pub name: Manufacturer,
    pub type_node: TypeNode,
    pub weak_subarray_col_fraction: f64,
    /// Bank-to-bank spread reported for the fraction; only used when `bank_variation` is set.
    pub weak_subarray_col_sigma: f64,
    pub bank_variation: bool,
    pub rows_per_subarray: u32,
    /// Share of bitlines in a weak subarray column that are weak.
    pub weak_bitline_fraction: f64,
    /// Share of cells on a weak bitline that are weak.
    pub weak_cell_fraction: f64,
    pub fprob_mixture: FprobMixture,
    pub sensitizing_pattern_weights: BTreeMap<DataPattern, f64>,
    /// Pattern that sensitizes every metastable cell.
    pub trng_pattern: DataPattern,
    pub rng_cell_word_density_max: u32,
    /// Per-cell temperature odds factor is LogNormal(mu, sigma).
    pub temp_odds_mu: f64,
    pub temp_odds_sigma: f64,
    pub hammer: HammerParams,
}

fn lowest_hc_first(mfr: Manufacturer, node: TypeNode) -> Option<f64> {
    use Manufacturer::*;
    use TypeNode::*;
    let k = match (node, mfr) {
        (Ddr3Old, A) => 69.2,
        (Ddr3Old, B) => 157.0,
        (Ddr3Old, C) => 155.0,
        (Ddr3New, A) => 85.0,
        (Ddr3New, B) => 22.4,
        (Ddr3New, C) => 24.0,
        (Ddr4Old, A) => 17.5,
        (Ddr4Old, B) => 30.0,
        (Ddr4Old, C) => 87.0,
        (Ddr4New, A) => 10.0,
        (Ddr4New, B) => 25.0,
        (Ddr4New, C) => 40.0,
        (Lpddr4_1x, A) => 43.2,
        (Lpddr4_1x, B) => 16.8,
        (Lpddr4_1y, A) => 4.8,
        (Lpddr4_1y, C) => 9.6,
        _ => return None,
    };
    Some(k * 1000.0)
}

fn worst_hammer_pattern(mfr: Manufacturer, node: TypeNode) -> DataPattern {
    use DataPattern::*;
    use Manufacturer::*;
    use TypeNode::*;
    match (node, mfr) {
        (Ddr3New, B) | (Ddr3New, C) => CH0,
        (Ddr4Old, A) | (Ddr4Old, B) => RS1,
        (Ddr4Old, C) => RS0,
        (Ddr4New, A) | (Ddr4New, B) => RS0,
        (Ddr4New, C) => CH1,
        (Lpddr4_1x, A) => CH1,
        (Lpddr4_1x, B) => CH0,
        (Lpddr4_1y, _) => RS1,
        // No published worst case; the DDR3 family default.
        _ => CH0,
    }
}

impl ManufacturerProfile {
    /// Calibrated profile for one manufacturer and type-node. Combinations without tested
    /// chips are unavailable.
    pub fn preset(mfr: Manufacturer, node: TypeNode) -> Result<Self> {
        let hc_first_min = lowest_hc_first(mfr, node).ok_or_else(|| {
            LabError::Unavailable(format!("no {node} chips from manufacturer {mfr}"))
        })?;
        let (frac, sigma, rows, trng_pattern) = match mfr {
            Manufacturer::A => (0.037, 0.12, 1024, DataPattern::SO0),
            Manufacturer::B => (0.025, 0.065, 512, DataPattern::CH0),
            Manufacturer::C => (0.022, 0.043, 512, DataPattern::SO0),
        };
        let mut act_weights = BTreeMap::new();
        for p in DataPattern::ALL {
            act_weights.insert(p, 0.6);
        }
        act_weights.insert(DataPattern::Random, 0.9);
        let solid_strong = match mfr {
            Manufacturer::A | Manufacturer::B => DataPattern::SO0,
            Manufacturer::C => DataPattern::SO1,
        };
        act_weights.insert(solid_strong, 0.85);

        let worst = worst_hammer_pattern(mfr, node);
        let mut hammer_weights = BTreeMap::new();
        for p in DataPattern::ALL {
            hammer_weights.insert(p, 0.55);
        }
        hammer_weights.insert(DataPattern::Random, 0.7);
        hammer_weights.insert(worst, 0.95);

        let density_at_ref = match node {
            TypeNode::Ddr3Old => 2e-5,
            TypeNode::Ddr3New => 1e-4,
            TypeNode::Ddr4Old => 2e-4,
            TypeNode::Ddr4New => 4e-4,
            TypeNode::Lpddr4_1x => 5e-4,
            TypeNode::Lpddr4_1y => 1e-3,
        };
        let max_offset = match node {
            TypeNode::Lpddr4_1y => 6,
            TypeNode::Lpddr4_1x => 4,
            _ => 2,
        };
        let remap = if (mfr, node) == (Manufacturer::B, TypeNode::Lpddr4_1x) {
            RowRemapScheme::Paired
        } else {
            RowRemapScheme::Identity
        };
        Ok(ManufacturerProfile {
            name: mfr,
            type_node: node,
            weak_subarray_col_fraction: frac,
            weak_subarray_col_sigma: sigma,
            bank_variation: false,
            rows_per_subarray: rows,
            weak_bitline_fraction: 0.75,
            weak_cell_fraction: 0.35,
            fprob_mixture: FprobMixture { high: 0.55, high_exact_one: 0.5, band: 0.02 },
            sensitizing_pattern_weights: act_weights,
            trng_pattern,
            rng_cell_word_density_max: 4,
            temp_odds_mu: 0.2,
            temp_odds_sigma: 0.3,
            hammer: HammerParams {
                hc_first_min,
                density_at_ref,
                exponent: 2.5,
                response: HammerResponse::Onset { steepness: 16.0 },
                pattern_weights: hammer_weights,
                worst_pattern: worst,
                max_offset,
                offset_decay: 0.35,
                remap,
                on_die_ecc: node.is_lpddr4(),
                ecc_policy: EccMultiFlipPolicy::PassThrough,
            },
        })
    }

    /// Type-node used for activation-failure work: the LPDDR4 node available for `mfr`.
    pub fn activation_default(mfr: Manufacturer) -> Self {
        let node = match mfr {
            Manufacturer::B => TypeNode::Lpddr4_1x,
            _ => TypeNode::Lpddr4_1y,
        };
        Self::preset(mfr, node).expect("LPDDR4 preset exists for every manufacturer")
    }

    /// Geometry preset of this profile's family with the profile's subarray height.
    pub fn default_geometry(&self) -> DramGeometry {
        DramGeometry::preset(self.type_node.family())
            .expect("family preset")
            .with_rows_per_subarray(self.rows_per_subarray)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let m = &self.fprob_mixture;
        let h = &self.hammer;
        let checks = [
            (unit(self.weak_subarray_col_fraction), "weak_subarray_col_fraction in [0,1]"),
            (self.weak_subarray_col_sigma >= 0.0, "weak_subarray_col_sigma >= 0"),
            (unit(self.weak_bitline_fraction), "weak_bitline_fraction in [0,1]"),
            (unit(self.weak_cell_fraction), "weak_cell_fraction in [0,1]"),
            (unit(m.high) && unit(m.band) && unit(m.high_exact_one), "mixture weights in [0,1]"),
            (m.high + m.band <= 1.0 + 1e-12, "mixture weights sum <= 1"),
            (
                self.sensitizing_pattern_weights.values().all(|&w| unit(w)),
                "pattern weights in [0,1]",
            ),
            (h.pattern_weights.values().all(|&w| unit(w)), "hammer pattern weights in [0,1]"),
            (self.rng_cell_word_density_max <= 64, "rng density <= word bits"),
            (self.temp_odds_sigma >= 0.0, "temp_odds_sigma >= 0"),
            (h.hc_first_min > 0.0, "hc_first_min > 0"),
            (h.density_at_ref >= 0.0 && h.exponent > 0.0, "hammer density and exponent"),
            (unit(h.offset_decay), "offset_decay in [0,1]"),
            (h.max_offset % 2 == 0 && h.max_offset <= 6, "max_offset even and <= 6"),
            (
                match h.response {
                    HammerResponse::Onset { steepness } => steepness > 0.0,
                    HammerResponse::Step => true,
                },
                "onset steepness > 0",
            ),
            (!h.on_die_ecc || self.type_node.is_lpddr4(), "on-die ECC only on LPDDR4"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(LabError::Config(format!("manufacturer profile: {what}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellClass {
    High,
    Band,
    Low,
}

/// A cell that can fail under reduced tRCD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakCell {
    /// Bit position within the cacheline.
    pub bit: u16,
    pub class: CellClass,
    /// Failure probability at the reference tRCD and temperature.
    pub fprob: f64,
    pub pattern_mask: u16,
    /// Odds multiplier per 5 °C above the reference temperature.
    pub temp_factor: f64,
}

/// A RowHammer-vulnerable cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HammerCell {
    /// Bit position within the row.
    pub bit: u32,
    pub threshold: f64,
    pub pattern_mask: u16,
}

/// (bank, row, bit-within-row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellCoord {
    pub bank: u32,
    pub row: u32,
    pub bit: u32,
}

/// (bank, subarray, column) in cacheline units.
pub type SubarrayColumn = (u32, u32, u32);

const CHIP_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticChip {
    pub format: u32,
    pub profile: ManufacturerProfile,
    pub geo: DramGeometry,
    pub seed: u64,
    /// Weak bitlines (bit index within the cacheline) per weak subarray column.
    #[serde(with = "crate::serde_pairs")]
    pub weak_bitlines: BTreeMap<SubarrayColumn, Vec<u16>>,
    /// Hand-placed cells; when `explicit` is set these replace the synthesized population.
    pub explicit: bool,
    #[serde(with = "crate::serde_pairs")]
    pub explicit_cells: BTreeMap<(u32, u32, u32), Vec<WeakCell>>,
    #[serde(with = "crate::serde_pairs")]
    pub explicit_hammer: BTreeMap<(u32, u32), Vec<HammerCell>>,
    /// Row holding the cells pinned to `hc_first_min`, and their bits.
    pub weakest_hammer: Option<(u32, u32, Vec<u32>)>,
}

/// Build a chip from a manufacturer profile. Deterministic in `seed`.
pub fn synthesize_chip(profile: &ManufacturerProfile, geo: &DramGeometry, seed: u64) -> Result<SyntheticChip> {
    profile.validate()?;
    geo.validate()?;
    profile.hammer.remap.validate(geo)?;
    if profile.rows_per_subarray != geo.rows_per_subarray {
        return Err(LabError::Config(format!(
            "profile expects {} rows per subarray, geometry has {}",
            profile.rows_per_subarray, geo.rows_per_subarray
        )));
    }
    let mut weak_bitlines = BTreeMap::new();
    let cols = geo.cachelines_per_row();
    for bank in 0..geo.total_banks() {
        let mut rng = stream(seed, TAG_WEAK_COLS, bank as u64);
        let mut frac = profile.weak_subarray_col_fraction;
        if profile.bank_variation && profile.weak_subarray_col_sigma > 0.0 {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            frac = (frac * (1.0 + profile.weak_subarray_col_sigma * z)).clamp(0.0, 1.0);
        }
        for sa in 0..geo.subarrays_per_bank() {
            for col in 0..cols {
                if rng.random::<f64>() < frac {
                    let mut brng = stream(seed, TAG_BITLINES, hash3(bank as u64, sa as u64, col as u64));
                    let bits: Vec<u16> = (0..geo.cacheline_bits() as u16)
                        .filter(|_| brng.random::<f64>() < profile.weak_bitline_fraction)
                        .collect();
                    if !bits.is_empty() {
                        weak_bitlines.insert((bank, sa, col), bits);
                    }
                }
            }
        }
    }
    let weakest_hammer = if profile.hammer.density_at_ref > 0.0 || profile.hammer.hc_first_min > 0.0 {
        Some(pick_weakest(profile, geo, seed))
    } else {
        None
    };
    Ok(SyntheticChip {
        format: CHIP_FORMAT,
        profile: profile.clone(),
        geo: *geo,
        seed,
        weak_bitlines,
        explicit: false,
        explicit_cells: BTreeMap::new(),
        explicit_hammer: BTreeMap::new(),
        weakest_hammer,
    })
}

fn pick_weakest(profile: &ManufacturerProfile, geo: &DramGeometry, seed: u64) -> (u32, u32, Vec<u32>) {
    let mut rng = stream(seed, TAG_WEAKEST, 0);
    let bank = rng.random_range(0..geo.total_banks());
    let scheme = profile.hammer.remap;
    let margin = scheme.aggressor_distance() + profile.hammer.max_offset * scheme.aggressor_distance();
    let row = if geo.rows_per_bank > 2 * margin {
        rng.random_range(margin..geo.rows_per_bank - margin)
    } else {
        geo.rows_per_bank / 2
    };
    let bit = rng.random_range(0..geo.row_bits());
    let mut bits = vec![bit];
    if profile.hammer.on_die_ecc {
        // A lone flip would be corrected; pin a partner in the same ECC word.
        let word = bit / ECC_WORD_BITS * ECC_WORD_BITS;
        let off = (bit - word + 1 + rng.random_range(0..ECC_WORD_BITS - 1)) % ECC_WORD_BITS;
        bits.push(word + off);
    }
    bits.sort_unstable();
    (bank, row, bits)
}

impl SyntheticChip {
    /// Chip whose weak and hammer cells are exactly the ones given.
    pub fn with_explicit_cells(
        profile: &ManufacturerProfile,
        geo: &DramGeometry,
        seed: u64,
        cells: BTreeMap<(u32, u32, u32), Vec<WeakCell>>,
        hammer: BTreeMap<(u32, u32), Vec<HammerCell>>,
    ) -> Result<Self> {
        let mut profile = profile.clone();
        profile.rows_per_subarray = geo.rows_per_subarray;
        let mut chip = synthesize_chip(&profile, geo, seed)?;
        chip.weak_bitlines.clear();
        for (&(bank, row, cl), list) in &cells {
            let key = (bank, row / geo.rows_per_subarray, cl);
            let entry = chip.weak_bitlines.entry(key).or_default();
            for c in list {
                if !entry.contains(&c.bit) {
                    entry.push(c.bit);
                }
            }
            entry.sort_unstable();
        }
        chip.explicit = true;
        chip.explicit_cells = cells;
        chip.explicit_hammer = hammer;
        chip.weakest_hammer = None;
        Ok(chip)
    }

    /// Weak cells of one cacheline, sorted by bit.
    pub fn weak_cells(&self, bank: u32, row: u32, cacheline: u32) -> Vec<WeakCell> {
        if self.explicit {
            return self.explicit_cells.get(&(bank, row, cacheline)).cloned().unwrap_or_default();
        }
        let sa = row / self.geo.rows_per_subarray;
        let Some(bitlines) = self.weak_bitlines.get(&(bank, sa, cacheline)) else {
            return Vec::new();
        };
        let p = &self.profile;
        let key = hash3(bank as u64, row as u64, cacheline as u64);
        let mut rng = stream(self.seed, TAG_CELLS, key);
        let low = Beta::new(0.7, 3.0).expect("valid beta");
        let temp = LogNormal::new(p.temp_odds_mu, p.temp_odds_sigma.max(1e-12)).expect("valid lognormal");
        let mut cells = Vec::new();
        let mut band_per_word: BTreeMap<u16, u32> = BTreeMap::new();
        for &bit in bitlines {
            // Fixed draw count per bitline keeps streams aligned regardless of branch taken.
            let u_weak: f64 = rng.random();
            let u_class: f64 = rng.random();
            let u_val: f64 = rng.random();
            let low_val: f64 = 0.1 * low.sample(&mut rng);
            let tf: f64 = temp.sample(&mut rng);
            let mask_draws: [f64; 9] = rng.random();
            if u_weak >= p.weak_cell_fraction {
                continue;
            }
            let m = &p.fprob_mixture;
            let mut class = if u_class < m.high {
                CellClass::High
            } else if u_class < m.high + m.band {
                CellClass::Band
            } else {
                CellClass::Low
            };
            if class == CellClass::Band {
                let word = bit / 64;
                let n = band_per_word.entry(word).or_insert(0);
                if *n >= p.rng_cell_word_density_max {
                    class = CellClass::Low;
                } else {
                    *n += 1;
                }
            }
            let mut mask = 0u16;
            for (i, pat) in DataPattern::ALL.iter().enumerate() {
                let w = p.sensitizing_pattern_weights.get(pat).copied().unwrap_or(0.0);
                if mask_draws[i] < w {
                    mask |= pat.mask_bit();
                }
            }
            let (fprob, temp_factor) = match class {
                CellClass::High => {
                    let v = if u_val < m.high_exact_one {
                        1.0
                    } else {
                        1.0 - 0.1 * (u_val - m.high_exact_one) / (1.0 - m.high_exact_one).max(1e-12)
                    };
                    (v.clamp(0.9, 1.0), tf)
                }
                CellClass::Band => {
                    mask |= p.trng_pattern.mask_bit();
                    (0.5 + 0.001 * (u_val - 0.5), 1.0)
                }
                CellClass::Low => (low_val.max(1e-6), tf),
            };
            cells.push(WeakCell { bit, class, fprob, pattern_mask: mask, temp_factor });
        }
        cells
    }

    /// Failure probability of `cell` under the given conditions.
    pub fn effective_fprob(&self, cell: &WeakCell, trcd_ns: f64, temperature_c: f64, pattern: DataPattern) -> f64 {
        if cell.pattern_mask & pattern.mask_bit() == 0 {
            return 0.0;
        }
        let factor = trcd_factor(trcd_ns);
        if factor == 0.0 {
            return 0.0;
        }
        let p = (cell.fprob * factor).min(1.0);
        if p >= 1.0 {
            return 1.0;
        }
        let odds = p / (1.0 - p) * cell.temp_factor.powf((temperature_c - REFERENCE_TEMP_C) / 5.0);
        odds / (1.0 + odds)
    }

    /// Subarray columns that contain weak bitlines, in key order.
    pub fn ground_truth_weak_columns(&self) -> impl Iterator<Item = SubarrayColumn> + '_ {
        self.weak_bitlines.keys().copied()
    }

    /// All (bank, row, cacheline) triples that can hold weak cells, in column order:
    /// cacheline outermost, then bank, then row.
    pub fn weak_cachelines_column_order(&self) -> Vec<(u32, u32, u32)> {
        let mut v: Vec<(u32, u32, u32)> = if self.explicit {
            self.explicit_cells.keys().map(|&(b, r, c)| (c, b, r)).collect()
        } else {
            let rps = self.geo.rows_per_subarray;
            self.weak_bitlines
                .keys()
                .flat_map(|&(b, sa, c)| (sa * rps..(sa + 1) * rps).map(move |r| (c, b, r)))
                .collect()
        };
        v.sort_unstable();
        v.into_iter().map(|(c, b, r)| (b, r, c)).collect()
    }

    /// Vulnerable cells of one logical row, sorted by bit.
    pub fn hammer_cells(&self, bank: u32, row: u32) -> Vec<HammerCell> {
        if self.explicit {
            return self.explicit_hammer.get(&(bank, row)).cloned().unwrap_or_default();
        }
        let h = &self.profile.hammer;
        let row_bits = self.geo.row_bits();
        let mut rng = stream(self.seed, TAG_HAMMER, hash3(bank as u64, row as u64, 0));
        let lambda = h.cells_per_bit() * row_bits as f64;
        let n = if lambda > 0.0 {
            Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize
        } else {
            0
        };
        let mut cells = Vec::with_capacity(n + 2);
        for _ in 0..n {
            let bit = rng.random_range(0..row_bits);
            let threshold = h.sample_threshold(rng.random());
            let draws: [f64; 9] = rng.random();
            let mut mask = h.worst_pattern.mask_bit();
            for (i, pat) in DataPattern::ALL.iter().enumerate() {
                if draws[i] < h.pattern_weights.get(pat).copied().unwrap_or(0.0) {
                    mask |= pat.mask_bit();
                }
            }
            cells.push(HammerCell { bit, threshold, pattern_mask: mask });
        }
        if let Some((wb, wr, bits)) = &self.weakest_hammer {
            if *wb == bank && *wr == row {
                for &bit in bits {
                    cells.push(HammerCell { bit, threshold: h.hc_first_min, pattern_mask: 0x1FF });
                }
            }
        }
        cells.sort_by(|a, b| a.bit.cmp(&b.bit).then(a.threshold.total_cmp(&b.threshold)));
        cells.dedup_by_key(|c| c.bit);
        cells
    }

    /// The lowest hammer threshold anywhere in the chip, if any cells exist.
    pub fn weakest_hammer_row(&self) -> Option<(u32, u32)> {
        if self.explicit {
            return self
                .explicit_hammer
                .iter()
                .filter_map(|(k, v)| v.iter().map(|c| c.threshold).reduce(f64::min).map(|t| (t, *k)))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, k)| k);
        }
        self.weakest_hammer.as_ref().map(|(b, r, _)| (*b, *r))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("chip serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let chip: SyntheticChip =
            serde_json::from_str(s).map_err(|e| LabError::Corrupt(format!("chip file: {e}")))?;
        if chip.format != CHIP_FORMAT {
            return Err(LabError::VersionMismatch { found: chip.format, expected: CHIP_FORMAT });
        }
        chip.profile.validate()?;
        chip.geo.validate()?;
        Ok(chip)
    }
}

/// Multiplier on a cell's reference failure probability as a function of tRCD.
/// Piecewise linear through (6, 4), (8, 2), (10, 1), (12, 0.5), (14, 0).
pub fn trcd_factor(trcd_ns: f64) -> f64 {
    const KNOTS: [(f64, f64); 5] = [(6.0, 4.0), (8.0, 2.0), (10.0, 1.0), (12.0, 0.5), (14.0, 0.0)];
    if trcd_ns >= SAFE_TRCD_NS {
        return 0.0;
    }
    if trcd_ns <= KNOTS[0].0 {
        return KNOTS[0].1;
    }
    for w in KNOTS.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        if trcd_ns <= x1 {
            return y0 + (y1 - y0) * (trcd_ns - x0) / (x1 - x0);
        }
    }
    0.0
}

pub fn check_temperature(temperature_c: f64) -> Result<()> {
    if !(TEMP_RANGE_C.0..=TEMP_RANGE_C.1).contains(&temperature_c) {
        return Err(LabError::Range(format!(
            "temperature {temperature_c} °C outside [{}, {}]",
            TEMP_RANGE_C.0, TEMP_RANGE_C.1
        )));
    }
    Ok(())
}

/// Bits of the accessed cacheline that flip on a reduced-tRCD first access after activation.
pub fn sample_activation_read(
    chip: &SyntheticChip,
    loc: &Location,
    trcd_ns: f64,
    temperature_c: f64,
    pattern: DataPattern,
    rng: &mut SimRng,
) -> Result<Vec<u32>> {
    check_temperature(temperature_c)?;
    if !(trcd_ns > 0.0) {
        return Err(LabError::Argument("trcd must be positive".into()));
    }
    loc.validate(&chip.geo)?;
    if trcd_ns >= SAFE_TRCD_NS {
        return Ok(Vec::new());
    }
    let bank = loc.flat_bank(&chip.geo);
    let mut out = Vec::new();
    for cell in chip.weak_cells(bank, loc.row, loc.cacheline_index) {
        let p = chip.effective_fprob(&cell, trcd_ns, temperature_c, pattern);
        if p > 0.0 && rng.random::<f64>() < p {
            out.push(cell.bit as u32);
        }
    }
    Ok(out)
}

/// Disturbance in hammers felt by each row near a double-sided victim:
/// `(logical row, disturbance)` for rows that can flip.
pub fn hammer_disturbance(chip: &SyntheticChip, victim: u32, hc: f64) -> Result<Vec<(u32, f64)>> {
    let h = &chip.profile.hammer;
    let scheme = h.remap;
    aggressor_rows(victim, scheme, chip.geo.rows_per_bank)?;
    let phys = scheme.physical_row(victim) as i64;
    let n_phys = scheme.physical_rows(chip.geo.rows_per_bank) as i64;
    let mut out = Vec::new();
    let max = h.max_offset as i64;
    let mut off = -max;
    while off <= max {
        let w = h.offset_weight(off);
        let q = phys + off;
        if w > 0.0 && (0..n_phys).contains(&q) {
            for r in scheme.logical_rows(q as u32) {
                out.push((r, w * hc));
            }
        }
        off += 2;
    }
    Ok(out)
}

/// Cells flipped by hammering both aggressors of `victim` `hc` times with `pattern` stored.
/// Returns raw (pre-ECC) flips; see [`apply_ecc_to_flips`].
pub fn sample_hammer(
    chip: &SyntheticChip,
    bank: u32,
    victim: u32,
    hc: f64,
    pattern: DataPattern,
    rng: &mut SimRng,
) -> Result<Vec<CellCoord>> {
    sample_hammer_with(chip, bank, victim, hc, pattern, rng, |r| chip.hammer_cells(bank, r))
}

/// As [`sample_hammer`] with a caller-supplied cell lookup (e.g. a per-bank cache).
pub fn sample_hammer_with<F, C>(
    chip: &SyntheticChip,
    bank: u32,
    victim: u32,
    hc: f64,
    pattern: DataPattern,
    rng: &mut SimRng,
    cells_of: F,
) -> Result<Vec<CellCoord>>
where
    F: Fn(u32) -> C,
    C: AsRef<[HammerCell]>,
{
    if hc <= 0.0 {
        aggressor_rows(victim, chip.profile.hammer.remap, chip.geo.rows_per_bank)?;
        return Ok(Vec::new());
    }
    let h = &chip.profile.hammer;
    let mut out = Vec::new();
    for (row, d) in hammer_disturbance(chip, victim, hc)? {
        sample_row_cells(h, cells_of(row).as_ref(), d, pattern, rng, |bit| {
            out.push(CellCoord { bank, row, bit })
        });
    }
    Ok(out)
}

/// Flip each sensitized cell with its probability under disturbance `d`.
pub fn sample_row_cells(
    h: &HammerParams,
    cells: &[HammerCell],
    d: f64,
    pattern: DataPattern,
    rng: &mut SimRng,
    mut emit: impl FnMut(u32),
) {
    for c in cells {
        if c.pattern_mask & pattern.mask_bit() == 0 {
            continue;
        }
        let p = h.flip_probability(d, c.threshold);
        if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
            emit(c.bit);
        }
    }
}

/// Visible flips within one ECC word given the raw flipped bit offsets (0..128).
pub fn apply_on_die_ecc(flips: &[u32], policy: EccMultiFlipPolicy) -> Vec<u32> {
    match flips.len() {
        0 | 1 => Vec::new(),
        _ => match policy {
            EccMultiFlipPolicy::PassThrough => flips.to_vec(),
            EccMultiFlipPolicy::PartialCorrect => {
                let lowest = *flips.iter().min().expect("non-empty");
                flips.iter().copied().filter(|&b| b != lowest).collect()
            }
            EccMultiFlipPolicy::Miscorrect => {
                let syndrome = flips.iter().fold(0u32, |a, &b| a ^ b) % ECC_WORD_BITS;
                let mut v: Vec<u32> = flips.to_vec();
                if let Some(i) = v.iter().position(|&b| b == syndrome) {
                    v.remove(i);
                } else {
                    v.push(syndrome);
                }
                v.sort_unstable();
                v
            }
        },
    }
}

/// Apply on-die ECC word by word when the chip's profile enables it.
pub fn apply_ecc_to_flips(chip: &SyntheticChip, flips: Vec<CellCoord>) -> Vec<CellCoord> {
    let h = &chip.profile.hammer;
    if !h.on_die_ecc {
        return flips;
    }
    let mut words: BTreeMap<(u32, u32, u32), Vec<u32>> = BTreeMap::new();
    for f in flips {
        words
            .entry((f.bank, f.row, f.bit / ECC_WORD_BITS))
            .or_default()
            .push(f.bit % ECC_WORD_BITS);
    }
    let mut out = Vec::new();
    for ((bank, row, w), bits) in words {
        for b in apply_on_die_ecc(&bits, h.ecc_policy) {
            out.push(CellCoord { bank, row, bit: w * ECC_WORD_BITS + b });
        }
    }
    out
}
