//! Latency-failure PUF: evaluation with counter-buffer filtering, cost model, enrollment and
//! Jaccard-threshold authentication.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::characterize::jaccard;
use crate::chipsynth::{check_temperature, SyntheticChip, REFERENCE_TEMP_C, REFERENCE_TRCD_NS};
use crate::error::{LabError, Result};
use crate::geometry::{decode_address, DramGeometry};
use crate::pattern::{stream, DataPattern, SimRng};

pub const DEFAULT_SEGMENT_BYTES: u32 = 8192;
pub const DEFAULT_ITERATIONS: u32 = 100;
pub const DEFAULT_FILTER_FRACTION: f64 = 0.10;
/// Time for one reduced-tRCD cacheline access including the forced precharge and barrier.
pub const PER_ACCESS_US: f64 = 3.4;
/// Distinct failing cells a segment needs to be usable.
pub const GOOD_SEGMENT_MIN_FAILS: usize = 512;
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.65;
pub const TEMP_BUCKET_C: f64 = 5.0;
/// Mean measured evaluation time for an 8 KiB segment; documentation only.
pub const MEASURED_EVAL_MS: f64 = 88.2;

const TAG_GOOD: u64 = 0x31;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PufChallenge {
    pub segment_id: u64,
    pub segment_bytes: u32,
    pub trcd_ns: f64,
    pub n_iterations: u32,
    pub temperature_c: f64,
    pub pattern: DataPattern,
}

impl PufChallenge {
    /// 8 KiB segment, 100 iterations at the reference tRCD and temperature.
    pub fn reference(segment_id: u64) -> Self {
        PufChallenge {
            segment_id,
            segment_bytes: DEFAULT_SEGMENT_BYTES,
            trcd_ns: REFERENCE_TRCD_NS,
            n_iterations: DEFAULT_ITERATIONS,
            temperature_c: REFERENCE_TEMP_C,
            pattern: DataPattern::Random,
        }
    }

    pub fn at_temperature(mut self, t: f64) -> Self {
        self.temperature_c = t;
        self
    }

    fn validate(&self, geo: &DramGeometry) -> Result<()> {
        let s = self.segment_bytes;
        if s == 0 || s % 32 != 0 {
            return Err(LabError::Config("segment size must be a positive multiple of 32".into()));
        }
        if s % geo.row_size_bytes != 0 && geo.row_size_bytes % s != 0 {
            return Err(LabError::Config("segment must tile rows evenly".into()));
        }
        if s as u64 > geo.bank_bytes() {
            return Err(LabError::Config("segment larger than a bank".into()));
        }
        if self.n_iterations == 0 {
            return Err(LabError::Config("n_iterations must be >= 1".into()));
        }
        if (self.segment_id + 1) * s as u64 > geo.capacity_bytes() {
            return Err(LabError::Bounds(format!("segment {} beyond capacity", self.segment_id)));
        }
        check_temperature(self.temperature_c)
    }
}

/// Number of aligned segments in the geometry.
pub fn segment_count(geo: &DramGeometry, segment_bytes: u32) -> u64 {
    geo.capacity_bytes() / segment_bytes as u64
}

/// The bank, rows and cacheline range a segment covers.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSpan {
    pub bank: u32,
    pub rows: std::ops::Range<u32>,
    pub cachelines: std::ops::Range<u32>,
}

pub fn segment_span(geo: &DramGeometry, segment_id: u64, segment_bytes: u32) -> Result<SegmentSpan> {
    let loc = decode_address(segment_id * segment_bytes as u64, geo)?;
    let bank = loc.flat_bank(geo);
    if segment_bytes >= geo.row_size_bytes {
        let n = segment_bytes / geo.row_size_bytes;
        Ok(SegmentSpan { bank, rows: loc.row..loc.row + n, cachelines: 0..geo.cachelines_per_row() })
    } else {
        let c0 = loc.cacheline_index;
        Ok(SegmentSpan {
            bank,
            rows: loc.row..loc.row + 1,
            cachelines: c0..c0 + segment_bytes / geo.cacheline_bytes,
        })
    }
}

/// Counters, one per segment bit, each `width` bits wide.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterBuffer {
    pub width: u32,
    pub n_iterations: u32,
    pub counters: Vec<u16>,
}

impl CounterBuffer {
    pub fn new(segment_bytes: u32, n_iterations: u32) -> Self {
        CounterBuffer {
            width: counter_width(n_iterations),
            n_iterations,
            counters: vec![0; segment_bytes as usize * 8],
        }
    }

    pub fn increment(&mut self, pos: u32) {
        let c = &mut self.counters[pos as usize];
        *c = (*c + 1).min(self.n_iterations.min(u16::MAX as u32) as u16);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PufResponse {
    pub bits: BTreeSet<u32>,
    pub challenge: PufChallenge,
}

/// Positions (segment-relative bit index) of the segment's weak cells with their failure
/// probability under the challenge, in column order.
fn segment_cells(chip: &SyntheticChip, ch: &PufChallenge) -> Result<Vec<(u32, f64)>> {
    let geo = &chip.geo;
    let span = segment_span(geo, ch.segment_id, ch.segment_bytes)?;
    let cl_bits = geo.cacheline_bits();
    let mut out = Vec::new();
    for cl in span.cachelines.clone() {
        for row in span.rows.clone() {
            let sa = row / geo.rows_per_subarray;
            if !chip.explicit && !chip.weak_bitlines.contains_key(&(span.bank, sa, cl)) {
                continue;
            }
            let row_off = (row - span.rows.start) * geo.row_bits();
            let cl_off = (cl - span.cachelines.start) * cl_bits;
            for cell in chip.weak_cells(span.bank, row, cl) {
                let p = chip.effective_fprob(&cell, ch.trcd_ns, ch.temperature_c, ch.pattern);
                if p > 0.0 {
                    out.push((row_off + cl_off + cell.bit as u32, p));
                }
            }
        }
    }
    Ok(out)
}

fn run_counters(chip: &SyntheticChip, ch: &PufChallenge, rng: &mut SimRng) -> Result<CounterBuffer> {
    let cells = segment_cells(chip, ch)?;
    let mut buf = CounterBuffer::new(ch.segment_bytes, ch.n_iterations);
    for _ in 0..ch.n_iterations {
        for &(pos, p) in &cells {
            if p >= 1.0 || rng.random::<f64>() < p {
                buf.increment(pos);
            }
        }
    }
    Ok(buf)
}

/// Evaluate a challenge: repeated column-order reduced-tRCD reads, counted and filtered.
pub fn evaluate_puf(chip: &SyntheticChip, challenge: &PufChallenge, rng: &mut SimRng) -> Result<PufResponse> {
    evaluate_puf_reserved(chip, challenge, &BTreeSet::new(), rng)
}

/// As [`evaluate_puf`], refusing segments that overlap `reserved` (bank, row) pairs.
pub fn evaluate_puf_reserved(
    chip: &SyntheticChip,
    challenge: &PufChallenge,
    reserved: &BTreeSet<(u32, u32)>,
    rng: &mut SimRng,
) -> Result<PufResponse> {
    challenge.validate(&chip.geo)?;
    let span = segment_span(&chip.geo, challenge.segment_id, challenge.segment_bytes)?;
    if span.rows.clone().any(|r| reserved.contains(&(span.bank, r))) {
        return Err(LabError::Config(format!(
            "segment {} overlaps reserved rows",
            challenge.segment_id
        )));
    }
    let buf = run_counters(chip, challenge, rng)?;
    Ok(PufResponse {
        bits: filter_counters(&buf.counters, challenge.n_iterations, DEFAULT_FILTER_FRACTION),
        challenge: *challenge,
    })
}

/// Positions whose counter is strictly greater than `threshold_fraction × n_iterations`.
pub fn filter_counters(counters: &[u16], n_iterations: u32, threshold_fraction: f64) -> BTreeSet<u32> {
    let limit = threshold_fraction * n_iterations as f64;
    counters
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0 && c as f64 > limit)
        .map(|(i, _)| i as u32)
        .collect()
}

/// Estimated evaluation time: iterations × accesses per sweep × per-access time.
pub fn eval_time_estimate(segment_bytes: u32, n_iterations: u32, per_access_us: f64) -> Result<Duration> {
    if segment_bytes % 32 != 0 {
        return Err(LabError::Argument("segment size must be a multiple of 32 bytes".into()));
    }
    let us = n_iterations as f64 * (segment_bytes / 32) as f64 * per_access_us;
    Ok(Duration::from_nanos((us * 1000.0).round() as u64))
}

/// Bits per counter: enough to hold the value `n_iterations` itself.
pub fn counter_width(n_iterations: u32) -> u32 {
    32 - n_iterations.leading_zeros()
}

pub fn counter_buffer_bits(segment_bytes: u32, n_iterations: u32) -> Result<u64> {
    if n_iterations == 0 {
        return Err(LabError::Argument("n_iterations must be >= 1".into()));
    }
    Ok(segment_bytes as u64 * 8 * counter_width(n_iterations) as u64)
}

/// Segment plus counter buffer, in bytes.
pub fn mem_total(segment_bytes: u32, n_iterations: u32) -> Result<u64> {
    Ok(segment_bytes as u64 + counter_buffer_bits(segment_bytes, n_iterations)? / 8)
}

/// Distinct cells that fail at least once under the reference challenge.
pub fn segment_fail_count(chip: &SyntheticChip, segment_id: u64) -> Result<usize> {
    let ch = PufChallenge::reference(segment_id);
    ch.validate(&chip.geo)?;
    let mut rng = stream(chip.seed, TAG_GOOD, segment_id);
    let buf = run_counters(chip, &ch, &mut rng)?;
    Ok(buf.counters.iter().filter(|&&c| c > 0).count())
}

pub fn segment_good(chip: &SyntheticChip, segment_id: u64) -> Result<bool> {
    Ok(segment_fail_count(chip, segment_id)? >= GOOD_SEGMENT_MIN_FAILS)
}

pub fn temperature_bucket(t: f64) -> i32 {
    ((t / TEMP_BUCKET_C).round() * TEMP_BUCKET_C) as i32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenKeyStore {
    pub match_threshold: f64,
    #[serde(with = "crate::serde_pairs")]
    pub keys: BTreeMap<(String, u64, i32), PufResponse>,
}

impl Default for GoldenKeyStore {
    fn default() -> Self {
        GoldenKeyStore { match_threshold: DEFAULT_MATCH_THRESHOLD, keys: BTreeMap::new() }
    }
}

impl GoldenKeyStore {
    pub fn with_threshold(match_threshold: f64) -> Result<Self> {
        if !(match_threshold > 0.0 && match_threshold <= 1.0) {
            return Err(LabError::Config("match threshold must be in (0, 1]".into()));
        }
        Ok(GoldenKeyStore { match_threshold, keys: BTreeMap::new() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AuthOutcome {
    Accept { jaccard: f64 },
    Reject { jaccard: f64 },
    /// Nothing enrolled for this device and segment.
    UnknownSegment,
}

impl AuthOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, AuthOutcome::Accept { .. })
    }
}

/// Evaluate each segment at each temperature and store the responses as golden keys.
pub fn enroll(
    chip: &SyntheticChip,
    device: &str,
    segments: &[u64],
    temperatures: &[f64],
    store: &mut GoldenKeyStore,
    rng: &mut SimRng,
) -> Result<()> {
    for &seg in segments {
        for &t in temperatures {
            let resp = evaluate_puf(chip, &PufChallenge::reference(seg).at_temperature(t), rng)?;
            store.keys.insert((device.to_string(), seg, temperature_bucket(t)), resp);
        }
    }
    Ok(())
}

/// Compare a response with the golden key of the claimed device at the nearest enrolled
/// temperature bucket.
pub fn authenticate(device: &str, response: &PufResponse, store: &GoldenKeyStore) -> AuthOutcome {
    let seg = response.challenge.segment_id;
    let want = temperature_bucket(response.challenge.temperature_c);
    let golden = store
        .keys
        .range((device.to_string(), seg, i32::MIN)..=(device.to_string(), seg, i32::MAX))
        .min_by_key(|((_, _, b), _)| ((b - want).abs(), *b))
        .map(|(_, v)| v);
    match golden {
        None => AuthOutcome::UnknownSegment,
        Some(g) => {
            let j = jaccard(&response.bits, &g.bits);
            if j >= store.match_threshold {
                AuthOutcome::Accept { jaccard: j }
            } else {
                AuthOutcome::Reject { jaccard: j }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chipsynth::{CellClass, Manufacturer, ManufacturerProfile, WeakCell};

    fn geo() -> DramGeometry {
        DramGeometry {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 1,
            rows_per_bank: 512,
            rows_per_subarray: 512,
            row_size_bytes: 2048,
            cacheline_bytes: 32,
            word_bits: 64,
        }
    }

    fn chip_with(cells: BTreeMap<(u32, u32, u32), Vec<WeakCell>>) -> SyntheticChip {
        let p = ManufacturerProfile::activation_default(Manufacturer::B);
        SyntheticChip::with_explicit_cells(&p, &geo(), 3, cells, BTreeMap::new()).unwrap()
    }

    fn cell(bit: u16, fprob: f64) -> WeakCell {
        WeakCell { bit, class: CellClass::High, fprob, pattern_mask: 0x1FF, temp_factor: 1.0 }
    }

    #[test]
    fn cost_model_examples() {
        assert_eq!(eval_time_estimate(8192, 100, PER_ACCESS_US).unwrap(), Duration::from_micros(87_040));
        assert_eq!(eval_time_estimate(32, 1, PER_ACCESS_US).unwrap(), Duration::from_nanos(3_400));
        assert!(eval_time_estimate(33, 1, PER_ACCESS_US).is_err());
        assert_eq!(counter_buffer_bits(8192, 100).unwrap(), 56 * 1024 * 8);
        assert_eq!(mem_total(8192, 100).unwrap(), 64 * 1024);
        assert_eq!(counter_buffer_bits(8192, 1).unwrap(), 8192 * 8);
        assert_eq!(mem_total(0, 100).unwrap(), 0);
        assert!(counter_buffer_bits(8192, 0).is_err());
    }

    #[test]
    fn filter_boundaries() {
        let set = |v: &[u32]| v.iter().copied().collect::<BTreeSet<u32>>();
        assert_eq!(filter_counters(&[100, 10, 11, 0], 100, 0.10), set(&[0, 2]));
        assert_eq!(filter_counters(&[1, 0, 5], 100, 0.0), set(&[0, 2]));
    }

    #[test]
    fn zero_weak_segment_is_empty_and_not_good() {
        let chip = chip_with(BTreeMap::new());
        let mut rng = stream(1, 0, 0);
        let r = evaluate_puf(&chip, &PufChallenge::reference(0), &mut rng).unwrap();
        assert!(r.bits.is_empty());
        assert!(!segment_good(&chip, 0).unwrap());
    }

    #[test]
    fn filter_drops_rare_cell() {
        let mut cells = BTreeMap::new();
        cells.insert((0, 1, 4), vec![cell(7, 1.0), cell(8, 0.05)]);
        let chip = chip_with(cells);
        let mut rng = stream(5, 0, 0);
        let mut exact = 0;
        let trials = 300;
        // Segment 0 covers rows 0..4; row 1 cacheline 4 bit 7 sits at 16384 + 4*256 + 7.
        let want: BTreeSet<u32> = [16384 + 1024 + 7].into_iter().collect();
        for _ in 0..trials {
            let r = evaluate_puf(&chip, &PufChallenge::reference(0), &mut rng).unwrap();
            if r.bits == want {
                exact += 1;
            }
        }
        // P(Binomial(100, 0.05) >= 11) is about 0.011.
        assert!(exact as f64 / trials as f64 >= 0.97, "{exact}/{trials}");
    }

    #[test]
    fn good_segment_boundary() {
        let mut cells = BTreeMap::new();
        // 512 certain cells spread over rows 4..8 (segment 1).
        for k in 0..512u32 {
            let row = 4 + k / 128;
            let cl = (k % 128) / 2;
            let bit = (k % 2) as u16 * 100;
            cells.entry((0, row, cl)).or_insert_with(Vec::new).push(cell(bit, 1.0));
        }
        let chip = chip_with(cells);
        assert_eq!(segment_fail_count(&chip, 1).unwrap(), 512);
        assert!(segment_good(&chip, 1).unwrap());
        assert!(!segment_good(&chip, 0).unwrap());
    }

    #[test]
    fn reserved_rows_rejected() {
        let chip = chip_with(BTreeMap::new());
        let mut rng = stream(1, 0, 0);
        let reserved: BTreeSet<(u32, u32)> = [(0, 2)].into_iter().collect();
        assert!(evaluate_puf_reserved(&chip, &PufChallenge::reference(0), &reserved, &mut rng).is_err());
        assert!(evaluate_puf_reserved(&chip, &PufChallenge::reference(1), &reserved, &mut rng).is_ok());
    }

    #[test]
    fn enroll_and_authenticate() {
        let mut cells = BTreeMap::new();
        cells.insert((0, 0, 0), vec![cell(1, 1.0), cell(2, 1.0)]);
        cells.insert((0, 4, 0), vec![cell(3, 1.0)]);
        let chip = chip_with(cells);
        let mut store = GoldenKeyStore::default();
        let mut rng = stream(9, 0, 0);
        enroll(&chip, "dev", &[0], &[50.0, 60.0], &mut store, &mut rng).unwrap();
        let r = evaluate_puf(&chip, &PufChallenge::reference(0).at_temperature(58.0), &mut rng).unwrap();
        assert_eq!(authenticate("dev", &r, &store), AuthOutcome::Accept { jaccard: 1.0 });
        let other = evaluate_puf(&chip, &PufChallenge::reference(1), &mut rng).unwrap();
        assert_eq!(authenticate("dev", &other, &store), AuthOutcome::UnknownSegment);
        let empty = PufResponse { bits: BTreeSet::new(), challenge: PufChallenge::reference(0) };
        assert_eq!(authenticate("dev", &empty, &store), AuthOutcome::Reject { jaccard: 0.0 });
        assert_eq!(authenticate("nobody", &r, &store), AuthOutcome::UnknownSegment);
    }

    #[test]
    fn buckets() {
        assert_eq!(temperature_bucket(57.4), 55);
        assert_eq!(temperature_bucket(57.6), 60);
        assert!(GoldenKeyStore::with_threshold(0.0).is_err());
    }
}
