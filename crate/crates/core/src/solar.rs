//! Variable-latency reads, column reordering and reduced-latency writes driven by a weak
//! subarray column profile.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::characterize::WeakColumnProfile;
use crate::chipsynth::{sample_activation_read, SyntheticChip};
use crate::error::{LabError, Result};
use crate::geometry::{DramGeometry, Location, TimingParams};
use crate::pattern::{DataPattern, SimRng};

pub const TRCD_DEFAULT_CYCLES: u32 = 29;
pub const TRCD_REDUCED_READ_CYCLES: u32 = 18;
pub const TRCD_WRITE_CYCLES: u32 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolarMode {
    Baseline,
    Vlc,
    /// VLC with column reordering.
    Rsc,
    Rlw,
    Solar,
    /// Weakness widened to the whole global column; no reduced writes.
    Flydram,
}

impl SolarMode {
    pub const ALL: [SolarMode; 6] =
        [SolarMode::Baseline, SolarMode::Vlc, SolarMode::Rsc, SolarMode::Rlw, SolarMode::Solar, SolarMode::Flydram];

    /// (vlc, rsc, rlw, flydram_compat)
    pub fn flags(self) -> (bool, bool, bool, bool) {
        match self {
            SolarMode::Baseline => (false, false, false, false),
            SolarMode::Vlc => (true, false, false, false),
            SolarMode::Rsc => (true, true, false, false),
            SolarMode::Rlw => (false, false, true, false),
            SolarMode::Solar => (true, true, true, false),
            SolarMode::Flydram => (true, false, false, true),
        }
    }
}

impl std::fmt::Display for SolarMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolarMode::Baseline => "baseline",
            SolarMode::Vlc => "vlc",
            SolarMode::Rsc => "rsc",
            SolarMode::Rlw => "rlw",
            SolarMode::Solar => "solar",
            SolarMode::Flydram => "flydram",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SolarMode {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        SolarMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| LabError::Config(format!("unknown solar mode '{s}'")))
    }
}

/// Per-bank map from logical cacheline index to physical global column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnReorderMap {
    pub perms: Vec<Vec<u32>>,
}

impl ColumnReorderMap {
    pub fn identity(banks: u32, columns: u32) -> Self {
        ColumnReorderMap { perms: vec![(0..columns).collect(); banks as usize] }
    }

    pub fn map(&self, bank: u32, cacheline: u32) -> u32 {
        self.perms[bank as usize][cacheline as usize]
    }

    pub fn is_bijective(&self) -> bool {
        self.perms.iter().all(|p| {
            let mut s = p.clone();
            s.sort_unstable();
            s.iter().enumerate().all(|(i, &v)| i as u32 == v)
        })
    }
}

/// Swap cacheline 0 with the global column holding the fewest weak subarray columns.
pub fn build_reorder_map(profile: &WeakColumnProfile) -> ColumnReorderMap {
    let mut map = ColumnReorderMap::identity(profile.banks, profile.columns);
    for bank in 0..profile.banks {
        let strongest = (0..profile.columns)
            .min_by_key(|&c| (profile.weak_count_in_global_column(bank, c), c))
            .unwrap_or(0);
        map.perms[bank as usize].swap(0, strongest as usize);
    }
    map
}

/// Lookup-table size: one bit per subarray column.
pub fn profile_storage_bits(geo: &DramGeometry) -> u64 {
    geo.total_banks() as u64 * geo.subarrays_per_bank() as u64 * geo.cachelines_per_row() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolarConfig {
    pub trcd_default_cycles: u32,
    pub trcd_reduced_read_cycles: u32,
    pub trcd_write_cycles: u32,
    pub geo: DramGeometry,
    pub profile: WeakColumnProfile,
    pub reorder: ColumnReorderMap,
    pub vlc: bool,
    pub rsc: bool,
    pub rlw: bool,
    pub flydram_compat: bool,
}

impl SolarConfig {
    pub fn new(geo: &DramGeometry, profile: WeakColumnProfile, mode: SolarMode) -> Result<Self> {
        if !profile.matches_geometry(geo) {
            return Err(LabError::Config("weak-column profile does not match geometry".into()));
        }
        let (vlc, rsc, rlw, flydram_compat) = mode.flags();
        let reorder = if rsc {
            build_reorder_map(&profile)
        } else {
            ColumnReorderMap::identity(profile.banks, profile.columns)
        };
        let cfg = SolarConfig {
            trcd_default_cycles: TRCD_DEFAULT_CYCLES,
            trcd_reduced_read_cycles: TRCD_REDUCED_READ_CYCLES,
            trcd_write_cycles: TRCD_WRITE_CYCLES,
            geo: *geo,
            profile,
            reorder,
            vlc,
            rsc,
            rlw,
            flydram_compat,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.trcd_write_cycles < self.trcd_reduced_read_cycles
            && self.trcd_reduced_read_cycles < self.trcd_default_cycles)
        {
            return Err(LabError::Config("need write < reduced read < default tRCD".into()));
        }
        if !self.reorder.is_bijective() || self.reorder.perms.len() != self.profile.banks as usize {
            return Err(LabError::Config("column reorder map is not a per-bank permutation".into()));
        }
        Ok(())
    }

    /// Global column that a logical cacheline is stored in.
    pub fn physical_column(&self, flat_bank: u32, cacheline: u32) -> u32 {
        self.reorder.map(flat_bank, cacheline)
    }

    fn strong(&self, flat_bank: u32, subarray: u32, column: u32) -> bool {
        if self.flydram_compat {
            self.profile.weak_count_in_global_column(flat_bank, column) == 0
        } else {
            !self.profile.is_weak(flat_bank, subarray, column)
        }
    }
}

/// tRCD in cycles for one access. Open-row accesses return the default, which the timing
/// model ignores.
pub fn trcd_for_access(cfg: &SolarConfig, loc: &Location, is_write: bool, row_was_closed: bool) -> u32 {
    if !row_was_closed {
        return cfg.trcd_default_cycles;
    }
    if is_write {
        return if cfg.rlw { cfg.trcd_write_cycles } else { cfg.trcd_default_cycles };
    }
    if !cfg.vlc {
        return cfg.trcd_default_cycles;
    }
    let bank = loc.flat_bank(&cfg.geo);
    let col = cfg.physical_column(bank, loc.cacheline_index);
    if cfg.strong(bank, loc.subarray, col) {
        cfg.trcd_reduced_read_cycles
    } else {
        cfg.trcd_default_cycles
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SafetyReport {
    pub accesses: u64,
    pub reduced: u64,
    /// Reads that returned at least one flipped bit.
    pub corruptions: u64,
}

impl SafetyReport {
    pub fn reduced_fraction(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.reduced as f64 / self.accesses as f64
        }
    }
}

/// Read `accesses` uniformly random cachelines, each from a closed row, with the tRCD chosen
/// by `cfg`, and count reads that come back corrupted.
pub fn simulate_read_safety(
    chip: &SyntheticChip,
    cfg: &SolarConfig,
    timing: &TimingParams,
    accesses: u64,
    temperature_c: f64,
    rng: &mut SimRng,
) -> Result<SafetyReport> {
    let geo = &chip.geo;
    if *geo != cfg.geo {
        return Err(LabError::Config("solar config built for a different geometry".into()));
    }
    let mut rep = SafetyReport::default();
    for _ in 0..accesses {
        let bank = rng.random_range(0..geo.total_banks());
        let row = rng.random_range(0..geo.rows_per_bank);
        let cl = rng.random_range(0..geo.cachelines_per_row());
        let loc = geo.location(bank, row, cl);
        let cycles = trcd_for_access(cfg, &loc, false, true);
        rep.accesses += 1;
        if cycles < cfg.trcd_default_cycles {
            rep.reduced += 1;
        }
        let phys = geo.location(bank, row, cfg.physical_column(bank, cl));
        let flips = sample_activation_read(
            chip,
            &phys,
            timing.cycles_to_ns(cycles),
            temperature_c,
            DataPattern::Random,
            rng,
        )?;
        if !flips.is_empty() {
            rep.corruptions += 1;
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo() -> DramGeometry {
        DramGeometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 1,
            rows_per_bank: 2048,
            rows_per_subarray: 512,
            row_size_bytes: 128,
            cacheline_bytes: 32,
            word_bits: 64,
        }
    }

    #[test]
    fn storage_examples() {
        let mut g = DramGeometry::preset("lpddr4").unwrap();
        g.rows_per_bank = 64 * 512;
        assert_eq!(profile_storage_bits(&g), 32768);
        assert_eq!(profile_storage_bits(&g) / 8, 4096);
        let unit = DramGeometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 1,
            rows_per_bank: 4,
            rows_per_subarray: 4,
            row_size_bytes: 32,
            cacheline_bytes: 32,
            word_bits: 64,
        };
        assert_eq!(profile_storage_bits(&unit), 1);
        g.banks_per_rank *= 2;
        assert_eq!(profile_storage_bits(&g), 65536);
    }

    #[test]
    fn trcd_examples() {
        let g = geo();
        let mut prof = WeakColumnProfile::for_geometry(&g);
        prof.set_weak(0, 1, 2);
        let cfg = SolarConfig::new(&g, prof.clone(), SolarMode::Solar).unwrap();
        let weak = g.location(0, 600, 2);
        let strong = g.location(0, 10, 2);
        // RSC moves cacheline 0 to column 0 (still strongest; tie at zero weak counts).
        assert_eq!(trcd_for_access(&cfg, &weak, true, true), 7);
        assert_eq!(trcd_for_access(&cfg, &weak, false, true), 29);
        assert_eq!(trcd_for_access(&cfg, &strong, false, true), 18);
        assert_eq!(trcd_for_access(&cfg, &weak, false, false), 29);

        let fly = SolarConfig::new(&g, prof.clone(), SolarMode::Flydram).unwrap();
        assert_eq!(trcd_for_access(&fly, &strong, false, true), 29);
        assert_eq!(trcd_for_access(&fly, &weak, true, true), 29);

        let base = SolarConfig::new(&g, prof, SolarMode::Baseline).unwrap();
        assert_eq!(trcd_for_access(&base, &strong, false, true), 29);

        let empty = SolarConfig::new(&g, WeakColumnProfile::for_geometry(&g), SolarMode::Vlc).unwrap();
        for row in [0, 700, 2047] {
            for cl in 0..4 {
                assert_eq!(trcd_for_access(&empty, &g.location(0, row, cl), false, true), 18);
            }
        }
    }

    #[test]
    fn reorder_examples() {
        let g = geo();
        let uniform = WeakColumnProfile::for_geometry(&g);
        assert_eq!(build_reorder_map(&uniform), ColumnReorderMap::identity(1, 4));

        let mut p = WeakColumnProfile::for_geometry(&g);
        for sa in 0..4 {
            for c in [0, 1, 3] {
                p.set_weak(0, sa, c);
            }
        }
        let m = build_reorder_map(&p);
        assert_eq!(m.perms[0], vec![2, 1, 0, 3]);
        assert!(m.is_bijective());
    }

    #[test]
    fn mode_round_trip() {
        for m in SolarMode::ALL {
            assert_eq!(m.to_string().parse::<SolarMode>().unwrap(), m);
        }
        assert!("fast".parse::<SolarMode>().is_err());
    }

    #[test]
    fn mismatched_profile_rejected() {
        let g = geo();
        let p = WeakColumnProfile::empty(2, 4, 4);
        assert!(SolarConfig::new(&g, p, SolarMode::Solar).is_err());
    }
}
