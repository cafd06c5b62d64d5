//! DRAM organization, address decomposition, row adjacency and timing vocabulary.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Physical organization of one simulated memory system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramGeometry {
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub banks_per_rank: u32,
    pub rows_per_bank: u32,
    pub rows_per_subarray: u32,
    pub row_size_bytes: u32,
    pub cacheline_bytes: u32,
    pub word_bits: u32,
}

impl DramGeometry {
    /// Named desk-scale presets: `ddr3`, `ddr4`, `lpddr4`.
    pub fn preset(name: &str) -> Result<Self> {
        let geo = match name {
            "ddr3" => DramGeometry {
                channels: 1,
                ranks_per_channel: 1,
                banks_per_rank: 8,
                rows_per_bank: 8192,
                rows_per_subarray: 512,
                row_size_bytes: 8192,
                cacheline_bytes: 64,
                word_bits: 64,
            },
            "ddr4" => DramGeometry {
                channels: 1,
                ranks_per_channel: 1,
                banks_per_rank: 16,
                rows_per_bank: 16384,
                rows_per_subarray: 512,
                row_size_bytes: 8192,
                cacheline_bytes: 64,
                word_bits: 64,
            },
            "lpddr4" => DramGeometry {
                channels: 1,
                ranks_per_channel: 1,
                banks_per_rank: 8,
                rows_per_bank: 4096,
                rows_per_subarray: 512,
                row_size_bytes: 2048,
                cacheline_bytes: 32,
                word_bits: 64,
            },
            other => return Err(LabError::Config(format!("unknown geometry preset '{other}'"))),
        };
        Ok(geo)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.channels,
            self.ranks_per_channel,
            self.banks_per_rank,
            self.rows_per_bank,
            self.rows_per_subarray,
            self.row_size_bytes,
            self.cacheline_bytes,
            self.word_bits,
        ];
        if counts.iter().any(|&c| c == 0) {
            return Err(LabError::Config("geometry counts must be >= 1".into()));
        }
        if self.rows_per_bank % self.rows_per_subarray != 0 {
            return Err(LabError::Config(
                "rows_per_bank must be divisible by rows_per_subarray".into(),
            ));
        }
        if self.row_size_bytes % self.cacheline_bytes != 0 {
            return Err(LabError::Config(
                "row_size_bytes must be divisible by cacheline_bytes".into(),
            ));
        }
        if (self.cacheline_bytes * 8) % self.word_bits != 0 {
            return Err(LabError::Config("cacheline must hold whole words".into()));
        }
        Ok(())
    }

    pub fn with_rows_per_subarray(mut self, rows: u32) -> Self {
        self.rows_per_subarray = rows;
        self
    }

    /// Banks across all channels and ranks; the flat bank index ranges over this.
    pub fn total_banks(&self) -> u32 {
        self.channels * self.ranks_per_channel * self.banks_per_rank
    }

    pub fn subarrays_per_bank(&self) -> u32 {
        self.rows_per_bank / self.rows_per_subarray
    }

    pub fn cachelines_per_row(&self) -> u32 {
        self.row_size_bytes / self.cacheline_bytes
    }

    pub fn cacheline_bits(&self) -> u32 {
        self.cacheline_bytes * 8
    }

    pub fn row_bits(&self) -> u32 {
        self.row_size_bytes * 8
    }

    pub fn words_per_row(&self) -> u32 {
        self.row_bits() / self.word_bits
    }

    pub fn bank_bytes(&self) -> u64 {
        self.rows_per_bank as u64 * self.row_size_bytes as u64
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.total_banks() as u64 * self.bank_bytes()
    }

    pub fn flat_bank(&self, channel: u32, rank: u32, bank: u32) -> u32 {
        (channel * self.ranks_per_channel + rank) * self.banks_per_rank + bank
    }

    /// Inverse of [`flat_bank`](Self::flat_bank): `(channel, rank, bank)`.
    pub fn split_bank(&self, flat: u32) -> (u32, u32, u32) {
        let bank = flat % self.banks_per_rank;
        let cr = flat / self.banks_per_rank;
        (cr / self.ranks_per_channel, cr % self.ranks_per_channel, bank)
    }

    pub fn location(&self, flat_bank: u32, row: u32, cacheline: u32) -> Location {
        let (channel, rank, bank) = self.split_bank(flat_bank);
        Location {
            channel,
            rank,
            bank,
            subarray: row / self.rows_per_subarray,
            row,
            column_byte: cacheline * self.cacheline_bytes,
            cacheline_index: cacheline,
        }
    }
}

/// A decoded byte address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub channel: u32,
    pub rank: u32,
    pub bank: u32,
    pub subarray: u32,
    pub row: u32,
    pub column_byte: u32,
    pub cacheline_index: u32,
}

impl Location {
    pub fn flat_bank(&self, geo: &DramGeometry) -> u32 {
        geo.flat_bank(self.channel, self.rank, self.bank)
    }

    pub fn validate(&self, geo: &DramGeometry) -> Result<()> {
        let ok = self.channel < geo.channels
            && self.rank < geo.ranks_per_channel
            && self.bank < geo.banks_per_rank
            && self.row < geo.rows_per_bank
            && self.subarray == self.row / geo.rows_per_subarray
            && self.column_byte < geo.row_size_bytes
            && self.cacheline_index == self.column_byte / geo.cacheline_bytes;
        if ok {
            Ok(())
        } else {
            Err(LabError::Bounds(format!("location {self:?} outside geometry")))
        }
    }
}

/// Row-major decode: channel, rank, bank, row, column from most to least significant.
pub fn decode_address(addr: u64, geo: &DramGeometry) -> Result<Location> {
    if addr >= geo.capacity_bytes() {
        return Err(LabError::Bounds(format!(
            "address {addr:#x} beyond capacity {:#x}",
            geo.capacity_bytes()
        )));
    }
    let row_size = geo.row_size_bytes as u64;
    let column_byte = (addr % row_size) as u32;
    let global_row = addr / row_size;
    let row = (global_row % geo.rows_per_bank as u64) as u32;
    let flat = (global_row / geo.rows_per_bank as u64) as u32;
    let (channel, rank, bank) = geo.split_bank(flat);
    Ok(Location {
        channel,
        rank,
        bank,
        subarray: row / geo.rows_per_subarray,
        row,
        column_byte,
        cacheline_index: column_byte / geo.cacheline_bytes,
    })
}

pub fn encode_address(loc: &Location, geo: &DramGeometry) -> u64 {
    let flat = loc.flat_bank(geo) as u64;
    (flat * geo.rows_per_bank as u64 + loc.row as u64) * geo.row_size_bytes as u64
        + loc.column_byte as u64
}

/// Logical-to-physical row mapping inside a bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowRemapScheme {
    Identity,
    /// Logical rows 2k and 2k+1 share one physical wordline.
    Paired,
}

impl RowRemapScheme {
    pub fn validate(&self, geo: &DramGeometry) -> Result<()> {
        if *self == RowRemapScheme::Paired && geo.rows_per_bank % 2 != 0 {
            return Err(LabError::Config("paired remap needs an even row count".into()));
        }
        Ok(())
    }

    pub fn physical_row(&self, logical: u32) -> u32 {
        match self {
            RowRemapScheme::Identity => logical,
            RowRemapScheme::Paired => logical / 2,
        }
    }

    pub fn physical_rows(&self, rows_per_bank: u32) -> u32 {
        match self {
            RowRemapScheme::Identity => rows_per_bank,
            RowRemapScheme::Paired => rows_per_bank / 2,
        }
    }

    /// Logical rows sharing physical row `phys`.
    pub fn logical_rows(&self, phys: u32) -> Vec<u32> {
        match self {
            RowRemapScheme::Identity => vec![phys],
            RowRemapScheme::Paired => vec![2 * phys, 2 * phys + 1],
        }
    }

    /// Row distance that separates a logical victim from its aggressors.
    pub fn aggressor_distance(&self) -> u32 {
        match self {
            RowRemapScheme::Identity => 1,
            RowRemapScheme::Paired => 2,
        }
    }
}

/// Logical rows that must be hammered to disturb `victim` double-sided.
pub fn aggressor_rows(victim: u32, scheme: RowRemapScheme, rows_per_bank: u32) -> Result<(u32, u32)> {
    let d = scheme.aggressor_distance();
    if victim < d || victim + d >= rows_per_bank {
        return Err(LabError::Edge(victim));
    }
    Ok((victim - d, victim + d))
}

/// Timing parameters in nanoseconds unless the name says otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingParams {
    pub t_rcd_ns: f64,
    pub t_ras_ns: f64,
    pub t_rp_ns: f64,
    pub t_rc_ns: f64,
    pub t_refw_ms: f64,
    pub t_refi_us: f64,
    pub clock_period_ns: f64,
    /// Read latency from column command to first data.
    pub t_cl_ns: f64,
    /// Data burst duration.
    pub t_burst_ns: f64,
    /// Per-tick refresh blackout.
    pub t_rfc_ns: f64,
}

impl TimingParams {
    pub fn preset(name: &str) -> Result<Self> {
        let t = match name {
            "ddr3" => TimingParams {
                t_rcd_ns: 13.75,
                t_ras_ns: 35.0,
                t_rp_ns: 13.75,
                t_rc_ns: 52.5,
                t_refw_ms: 64.0,
                t_refi_us: 7.8125,
                clock_period_ns: 1.25,
                t_cl_ns: 13.75,
                t_burst_ns: 5.0,
                t_rfc_ns: 260.0,
            },
            "ddr4" => TimingParams {
                t_rcd_ns: 13.75,
                t_ras_ns: 32.0,
                t_rp_ns: 13.75,
                t_rc_ns: 50.0,
                t_refw_ms: 64.0,
                t_refi_us: 7.8125,
                clock_period_ns: 0.833,
                t_cl_ns: 13.75,
                t_burst_ns: 3.332,
                t_rfc_ns: 350.0,
            },
            "lpddr4" => TimingParams {
                t_rcd_ns: 18.125,
                t_ras_ns: 41.875,
                t_rp_ns: 18.0,
                t_rc_ns: 60.0,
                t_refw_ms: 32.0,
                t_refi_us: 3.90625,
                clock_period_ns: 0.625,
                t_cl_ns: 17.5,
                t_burst_ns: 5.0,
                t_rfc_ns: 180.0,
            },
            other => return Err(LabError::Config(format!("unknown timing preset '{other}'"))),
        };
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.t_rcd_ns,
            self.t_ras_ns,
            self.t_rp_ns,
            self.t_rc_ns,
            self.t_refw_ms,
            self.t_refi_us,
            self.clock_period_ns,
            self.t_cl_ns,
            self.t_burst_ns,
            self.t_rfc_ns,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(LabError::Config("timing parameters must be positive".into()));
        }
        if self.t_rc_ns + 1e-9 < self.t_ras_ns + self.t_rp_ns {
            return Err(LabError::Config("t_rc must be >= t_ras + t_rp".into()));
        }
        Ok(())
    }

    pub fn t_refw_ns(&self) -> f64 {
        self.t_refw_ms * 1e6
    }

    pub fn t_refi_ns(&self) -> f64 {
        self.t_refi_us * 1e3
    }

    /// Refresh commands per refresh window, rounded to the nearest integer (8192 for all presets).
    pub fn refresh_intervals_per_window(&self) -> u64 {
        (self.t_refw_ns() / self.t_refi_ns()).round() as u64
    }

    pub fn cycles_to_ns(&self, cycles: u32) -> f64 {
        cycles as f64 * self.clock_period_ns
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DramGeometry {
        DramGeometry {
            channels: 2,
            ranks_per_channel: 2,
            banks_per_rank: 4,
            rows_per_bank: 64,
            rows_per_subarray: 16,
            row_size_bytes: 256,
            cacheline_bytes: 32,
            word_bits: 64,
        }
    }

    #[test]
    fn zero_address_decodes_to_origin() {
        let loc = decode_address(0, &tiny()).unwrap();
        assert_eq!(loc, tiny().location(0, 0, 0));
    }

    #[test]
    fn row_stride_moves_one_row_same_bank() {
        let geo = tiny();
        let loc = decode_address(geo.row_size_bytes as u64, &geo).unwrap();
        assert_eq!((loc.bank, loc.row, loc.column_byte), (0, 1, 0));
    }

    #[test]
    fn out_of_range_address_is_error() {
        let geo = tiny();
        assert!(matches!(
            decode_address(geo.capacity_bytes(), &geo),
            Err(LabError::Bounds(_))
        ));
    }

    #[test]
    fn exhaustive_round_trip_one_bank() {
        let geo = DramGeometry { channels: 1, ranks_per_channel: 1, banks_per_rank: 1, ..tiny() };
        for addr in 0..geo.capacity_bytes() {
            let loc = decode_address(addr, &geo).unwrap();
            loc.validate(&geo).unwrap();
            assert_eq!(encode_address(&loc, &geo), addr);
        }
    }

    #[test]
    fn aggressor_examples() {
        assert_eq!(aggressor_rows(5, RowRemapScheme::Identity, 64).unwrap(), (4, 6));
        assert_eq!(aggressor_rows(5, RowRemapScheme::Paired, 64).unwrap(), (3, 7));
        assert!(matches!(
            aggressor_rows(0, RowRemapScheme::Identity, 64),
            Err(LabError::Edge(0))
        ));
        assert!(aggressor_rows(63, RowRemapScheme::Identity, 64).is_err());
    }

    #[test]
    fn presets_validate() {
        for name in ["ddr3", "ddr4", "lpddr4"] {
            DramGeometry::preset(name).unwrap().validate().unwrap();
            let t = TimingParams::preset(name).unwrap();
            t.validate().unwrap();
            assert_eq!(t.refresh_intervals_per_window(), 8192);
        }
        let lp = TimingParams::preset("lpddr4").unwrap();
        assert!((lp.cycles_to_ns(29) - 18.125).abs() < 1e-12);
    }

    #[test]
    fn bad_geometry_rejected() {
        let mut g = tiny();
        g.rows_per_subarray = 15;
        assert!(g.validate().is_err());
        let mut g = tiny();
        g.cacheline_bytes = 48;
        assert!(g.validate().is_err());
    }
}
