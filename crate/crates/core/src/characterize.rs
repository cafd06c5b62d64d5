//! Testing routines and metrics: activation-failure sweeps, coverage, F_prob, Jaccard,
//! weak-column profiling and RowHammer characterization.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chipsynth::{
    apply_ecc_to_flips, check_temperature, sample_row_cells, CellCoord, HammerCell, SyntheticChip,
    REFERENCE_TRCD_NS,
};
use crate::error::{LabError, Result};
use crate::geometry::{aggressor_rows, DramGeometry, TimingParams};
use crate::pattern::{DataPattern, SimRng};

/// Hard cap on profiling iterations per (pattern, temperature) pass.
pub const MAX_PROFILE_ITERATIONS: u32 = 2000;
/// A RowHammer test of one row must finish inside this window.
pub const HAMMER_WINDOW_MS: f64 = 32.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitmapMeta {
    pub pattern: DataPattern,
    pub trcd_ns: f64,
    pub temperature_c: f64,
    pub iterations: u32,
}

/// Failure coordinates observed in one test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureBitmap {
    pub cells: BTreeSet<CellCoord>,
    pub meta: BitmapMeta,
}

impl FailureBitmap {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// A weak cell scheduled for sampling, with its failure probability under fixed conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedCell {
    pub coord: CellCoord,
    pub cacheline: u32,
    pub p: f64,
}

/// Every weak cell the column-order sweep touches, with its effective failure probability.
/// Strong cells never fail, so skipping them leaves the outcome distribution unchanged.
pub fn activation_plan(
    chip: &SyntheticChip,
    pattern: DataPattern,
    trcd_ns: f64,
    temperature_c: f64,
    filter: impl Fn(u32, u32, u32) -> bool,
) -> Vec<PlannedCell> {
    let cl_bits = chip.geo.cacheline_bits();
    let mut plan = Vec::new();
    for (bank, row, cl) in chip.weak_cachelines_column_order() {
        if !filter(bank, row, cl) {
            continue;
        }
        for cell in chip.weak_cells(bank, row, cl) {
            let p = chip.effective_fprob(&cell, trcd_ns, temperature_c, pattern);
            if p > 0.0 {
                plan.push(PlannedCell {
                    coord: CellCoord { bank, row, bit: cl * cl_bits + cell.bit as u32 },
                    cacheline: cl,
                    p,
                });
            }
        }
    }
    plan
}

fn default_trcd(chip: &SyntheticChip) -> f64 {
    TimingParams::preset(chip.profile.type_node.family()).map(|t| t.t_rcd_ns).unwrap_or(18.0)
}

/// Column-order activation failure test repeated `iterations` times; returns the union.
pub fn run_activation_failure_test(
    chip: &SyntheticChip,
    pattern: DataPattern,
    reduced_trcd_ns: f64,
    temperature_c: f64,
    iterations: u32,
    rng: &mut SimRng,
) -> Result<FailureBitmap> {
    let counts = activation_fail_counts(chip, pattern, reduced_trcd_ns, temperature_c, iterations, rng)?;
    Ok(FailureBitmap {
        cells: counts.keys().copied().collect(),
        meta: BitmapMeta { pattern, trcd_ns: reduced_trcd_ns, temperature_c, iterations },
    })
}

/// Per-cell failure counts over `iterations` column-order sweeps.
pub fn activation_fail_counts(
    chip: &SyntheticChip,
    pattern: DataPattern,
    reduced_trcd_ns: f64,
    temperature_c: f64,
    iterations: u32,
    rng: &mut SimRng,
) -> Result<BTreeMap<CellCoord, u32>> {
    check_temperature(temperature_c)?;
    if !(reduced_trcd_ns > 0.0 && reduced_trcd_ns < default_trcd(chip)) {
        return Err(LabError::Argument(format!(
            "reduced tRCD {reduced_trcd_ns} ns must be below the default"
        )));
    }
    let plan = activation_plan(chip, pattern, reduced_trcd_ns, temperature_c, |_, _, _| true);
    let mut counts = BTreeMap::new();
    for _ in 0..iterations {
        for c in &plan {
            if c.p >= 1.0 || rng.random::<f64>() < c.p {
                *counts.entry(c.coord).or_insert(0u32) += 1;
            }
        }
    }
    Ok(counts)
}

/// Local bitline of a cell: (bank, subarray, bit within row).
pub fn bitline_of(c: &CellCoord, geo: &DramGeometry) -> (u32, u32, u32) {
    (c.bank, c.row / geo.rows_per_subarray, c.bit)
}

/// Share of all failing bitlines (union over patterns) that each bitmap finds.
pub fn coverage(bitmaps: &[FailureBitmap], geo: &DramGeometry) -> Result<Vec<f64>> {
    if bitmaps.is_empty() {
        return Err(LabError::Argument("coverage needs at least one pattern".into()));
    }
    let sets: Vec<BTreeSet<(u32, u32, u32)>> = bitmaps
        .iter()
        .map(|b| b.cells.iter().map(|c| bitline_of(c, geo)).collect())
        .collect();
    let union: BTreeSet<_> = sets.iter().flatten().copied().collect();
    if union.is_empty() {
        return Ok(vec![0.0; sets.len()]);
    }
    Ok(sets.iter().map(|s| s.len() as f64 / union.len() as f64).collect())
}

/// Failure probability of a local bitline from its cells' fail counts.
pub fn fprob(fail_counts: &[u32], iterations: u32, cells_per_bitline: u32) -> Result<f64> {
    if iterations == 0 || cells_per_bitline == 0 {
        return Err(LabError::Argument("iterations and cells_per_bitline must be >= 1".into()));
    }
    let total: u64 = fail_counts.iter().map(|&c| c as u64).sum();
    Ok(total as f64 / (iterations as f64 * cells_per_bitline as f64))
}

/// |a ∩ b| / |a ∪ b|, with two empty sets defined as identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn jaccard_bitmaps(a: &FailureBitmap, b: &FailureBitmap) -> f64 {
    jaccard(&a.cells, &b.cells)
}

/// Per-bank bit-vector over (subarray, column): set means the column needs default tRCD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "SparseProfile", try_from = "SparseProfile")]
pub struct WeakColumnProfile {
    pub banks: u32,
    pub subarrays_per_bank: u32,
    pub columns: u32,
    bits: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SparseProfile {
    banks: u32,
    subarrays_per_bank: u32,
    columns: u32,
    weak: Vec<(u32, u32, u32)>,
}

impl From<WeakColumnProfile> for SparseProfile {
    fn from(p: WeakColumnProfile) -> Self {
        SparseProfile {
            banks: p.banks,
            subarrays_per_bank: p.subarrays_per_bank,
            columns: p.columns,
            weak: p.weak_columns().collect(),
        }
    }
}

impl TryFrom<SparseProfile> for WeakColumnProfile {
    type Error = String;
    fn try_from(s: SparseProfile) -> std::result::Result<Self, String> {
        let mut p = WeakColumnProfile::empty(s.banks, s.subarrays_per_bank, s.columns);
        for (b, sa, c) in s.weak {
            if b >= s.banks || sa >= s.subarrays_per_bank || c >= s.columns {
                return Err(format!("weak column ({b},{sa},{c}) outside profile"));
            }
            p.set_weak(b, sa, c);
        }
        Ok(p)
    }
}

impl WeakColumnProfile {
    pub fn empty(banks: u32, subarrays_per_bank: u32, columns: u32) -> Self {
        let n = banks as usize * subarrays_per_bank as usize * columns as usize;
        WeakColumnProfile { banks, subarrays_per_bank, columns, bits: vec![0; n.div_ceil(64)] }
    }

    pub fn for_geometry(geo: &DramGeometry) -> Self {
        Self::empty(geo.total_banks(), geo.subarrays_per_bank(), geo.cachelines_per_row())
    }

    /// The chip's true weak columns: a complete profile.
    pub fn ground_truth(chip: &SyntheticChip) -> Self {
        let mut p = Self::for_geometry(&chip.geo);
        for (b, sa, c) in chip.ground_truth_weak_columns() {
            p.set_weak(b, sa, c);
        }
        p
    }

    fn index(&self, bank: u32, subarray: u32, column: u32) -> usize {
        ((bank as usize * self.subarrays_per_bank as usize) + subarray as usize) * self.columns as usize
            + column as usize
    }

    pub fn set_weak(&mut self, bank: u32, subarray: u32, column: u32) {
        let i = self.index(bank, subarray, column);
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn is_weak(&self, bank: u32, subarray: u32, column: u32) -> bool {
        let i = self.index(bank, subarray, column);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    /// Weak subarray columns sharing global column `column` in `bank`.
    pub fn weak_count_in_global_column(&self, bank: u32, column: u32) -> u32 {
        (0..self.subarrays_per_bank).filter(|&sa| self.is_weak(bank, sa, column)).count() as u32
    }

    pub fn count_weak(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn weak_columns(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        let (spb, cols) = (self.subarrays_per_bank, self.columns);
        (0..self.banks).flat_map(move |b| {
            (0..spb).flat_map(move |sa| (0..cols).map(move |c| (b, sa, c)))
        })
        .filter(|&(b, sa, c)| self.is_weak(b, sa, c))
    }

    pub fn matches_geometry(&self, geo: &DramGeometry) -> bool {
        self.banks == geo.total_banks()
            && self.subarrays_per_bank == geo.subarrays_per_bank()
            && self.columns == geo.cachelines_per_row()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBuild {
    pub profile: WeakColumnProfile,
    /// Iterations summed over all (pattern, temperature) passes.
    pub iterations_used: u32,
    /// Iterations per pass, in (pattern, temperature) order.
    pub pass_iterations: Vec<u32>,
}

/// Repeat the activation test per (pattern, temperature) until, in every bank, an iteration
/// shows at most one failing bit on a never-before-failing local bitline.
pub fn build_weak_profile(
    chip: &SyntheticChip,
    patterns: &[DataPattern],
    temperatures: &[f64],
    rng: &mut SimRng,
) -> Result<ProfileBuild> {
    build_weak_profile_at(chip, patterns, temperatures, REFERENCE_TRCD_NS, rng)
}

pub fn build_weak_profile_at(
    chip: &SyntheticChip,
    patterns: &[DataPattern],
    temperatures: &[f64],
    trcd_ns: f64,
    rng: &mut SimRng,
) -> Result<ProfileBuild> {
    if patterns.is_empty() || temperatures.is_empty() {
        return Err(LabError::Argument("need at least one pattern and temperature".into()));
    }
    let geo = &chip.geo;
    let mut profile = WeakColumnProfile::for_geometry(geo);
    let mut seen: BTreeSet<(u32, u32, u32)> = BTreeSet::new();
    let mut pass_iterations = Vec::new();
    for &pattern in patterns {
        for &t in temperatures {
            check_temperature(t)?;
            let plan = activation_plan(chip, pattern, trcd_ns, t, |_, _, _| true);
            let mut active = vec![true; geo.total_banks() as usize];
            let mut iters = 0;
            while iters < MAX_PROFILE_ITERATIONS && active.iter().any(|&a| a) {
                iters += 1;
                let mut fresh = vec![0u32; active.len()];
                let mut found = Vec::new();
                for c in &plan {
                    if !active[c.coord.bank as usize] {
                        continue;
                    }
                    if c.p >= 1.0 || rng.random::<f64>() < c.p {
                        found.push(*c);
                        if !seen.contains(&bitline_of(&c.coord, geo)) {
                            fresh[c.coord.bank as usize] += 1;
                        }
                    }
                }
                for c in found {
                    seen.insert(bitline_of(&c.coord, geo));
                    profile.set_weak(c.coord.bank, c.coord.row / geo.rows_per_subarray, c.cacheline);
                }
                for (b, a) in active.iter_mut().enumerate() {
                    if *a && fresh[b] <= 1 {
                        *a = false;
                    }
                }
            }
            pass_iterations.push(iters);
        }
    }
    Ok(ProfileBuild { profile, iterations_used: pass_iterations.iter().sum(), pass_iterations })
}

/// One (pattern, hc) point of a RowHammer sweep with per-cell flip counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammerResult {
    pub pattern: DataPattern,
    pub hc: f64,
    pub iterations: u32,
    #[serde(with = "crate::serde_pairs")]
    pub counts: BTreeMap<CellCoord, u32>,
}

impl HammerResult {
    pub fn bitmap(&self) -> FailureBitmap {
        FailureBitmap {
            cells: self.counts.keys().copied().collect(),
            meta: BitmapMeta {
                pattern: self.pattern,
                trcd_ns: f64::NAN,
                temperature_c: f64::NAN,
                iterations: self.iterations,
            },
        }
    }
}

/// Rows tested and repetitions for a RowHammer sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HammerScope {
    /// Banks to test; all banks when empty.
    pub banks: Vec<u32>,
    /// Victim row range within each bank; all interior rows when `None`.
    pub rows: Option<std::ops::Range<u32>>,
    pub iterations: u32,
}

/// Vulnerable cells of every row in a bank, generated once.
pub struct BankHammerCache {
    rows: Vec<Vec<HammerCell>>,
}

impl BankHammerCache {
    pub fn new(chip: &SyntheticChip, bank: u32) -> Self {
        BankHammerCache { rows: (0..chip.geo.rows_per_bank).map(|r| chip.hammer_cells(bank, r)).collect() }
    }

    pub fn row(&self, row: u32) -> &[HammerCell] {
        &self.rows[row as usize]
    }
}

pub fn check_hammer_window(hc: f64, timing: &TimingParams) -> Result<()> {
    if !(hc >= 0.0) || hc * 2.0 * timing.t_rc_ns > HAMMER_WINDOW_MS * 1e6 {
        return Err(LabError::Config(format!(
            "hammer count {hc} exceeds the {HAMMER_WINDOW_MS} ms test window"
        )));
    }
    Ok(())
}

/// Double-sided hammer test of every interior victim row, per pattern and hammer count.
pub fn run_rowhammer_characterization(
    chip: &SyntheticChip,
    timing: &TimingParams,
    patterns: &[DataPattern],
    hc_sweep: &[f64],
    rng: &mut SimRng,
) -> Result<Vec<HammerResult>> {
    run_rowhammer_characterization_scoped(
        chip,
        timing,
        patterns,
        hc_sweep,
        &HammerScope { iterations: 1, ..Default::default() },
        rng,
    )
}

pub fn run_rowhammer_characterization_scoped(
    chip: &SyntheticChip,
    timing: &TimingParams,
    patterns: &[DataPattern],
    hc_sweep: &[f64],
    scope: &HammerScope,
    rng: &mut SimRng,
) -> Result<Vec<HammerResult>> {
    for &hc in hc_sweep {
        check_hammer_window(hc, timing)?;
    }
    let banks: Vec<u32> =
        if scope.banks.is_empty() { (0..chip.geo.total_banks()).collect() } else { scope.banks.clone() };
    let caches: Vec<(u32, BankHammerCache)> =
        banks.iter().map(|&b| (b, BankHammerCache::new(chip, b))).collect();
    let iterations = scope.iterations.max(1);
    let mut out = Vec::new();
    for &pattern in patterns {
        for &hc in hc_sweep {
            let mut counts = BTreeMap::new();
            for _ in 0..iterations {
                for (bank, cache) in &caches {
                    for flip in hammer_bank_once(chip, *bank, cache, hc, pattern, scope.rows.clone(), rng) {
                        *counts.entry(flip).or_insert(0u32) += 1;
                    }
                }
            }
            out.push(HammerResult { pattern, hc, iterations, counts });
        }
    }
    Ok(out)
}

/// Hammer each victim in the bank once; returns visible (post-ECC) flips, de-duplicated.
fn hammer_bank_once(
    chip: &SyntheticChip,
    bank: u32,
    cache: &BankHammerCache,
    hc: f64,
    pattern: DataPattern,
    rows: Option<std::ops::Range<u32>>,
    rng: &mut SimRng,
) -> BTreeSet<CellCoord> {
    let h = &chip.profile.hammer;
    let rows = rows.unwrap_or(0..chip.geo.rows_per_bank);
    let mut all = BTreeSet::new();
    for victim in rows {
        if aggressor_rows(victim, h.remap, chip.geo.rows_per_bank).is_err() {
            continue;
        }
        let mut flips = Vec::new();
        let Ok(dist) = crate::chipsynth::hammer_disturbance(chip, victim, hc) else { continue };
        for (row, d) in dist {
            sample_row_cells(h, cache.row(row), d, pattern, rng, |bit| {
                flips.push(CellCoord { bank, row, bit })
            });
        }
        all.extend(apply_ecc_to_flips(chip, flips));
    }
    all
}

/// Does any victim row in scope flip at `hc`?
fn any_flip(
    chip: &SyntheticChip,
    caches: &[(u32, BankHammerCache)],
    hc: f64,
    pattern: DataPattern,
    rows: Option<std::ops::Range<u32>>,
    rng: &mut SimRng,
) -> bool {
    caches
        .iter()
        .any(|(b, c)| !hammer_bank_once(chip, *b, c, hc, pattern, rows.clone(), rng).is_empty())
}

/// Geometric grid (×1.25) from `lo` up to `hi`, then bisection until the bracket is within 5%.
/// A point counts as flipping if any of `scope.iterations` repetitions flips.
/// Returns `None` when nothing flips at `hi`.
pub fn find_hc_first(
    chip: &SyntheticChip,
    timing: &TimingParams,
    pattern: DataPattern,
    lo: f64,
    hi: f64,
    scope: &HammerScope,
    rng: &mut SimRng,
) -> Result<Option<f64>> {
    check_hammer_window(hi, timing)?;
    if !(lo > 0.0 && lo <= hi) {
        return Err(LabError::Argument("need 0 < lo <= hi".into()));
    }
    let banks: Vec<u32> =
        if scope.banks.is_empty() { (0..chip.geo.total_banks()).collect() } else { scope.banks.clone() };
    let caches: Vec<(u32, BankHammerCache)> =
        banks.iter().map(|&b| (b, BankHammerCache::new(chip, b))).collect();
    let reps = scope.iterations.max(1);
    let flips_at = |hc: f64, rng: &mut SimRng| {
        (0..reps).any(|_| any_flip(chip, &caches, hc, pattern, scope.rows.clone(), rng))
    };
    let mut below = 0.0;
    let mut hc = lo;
    let mut above = None;
    loop {
        if flips_at(hc, rng) {
            above = Some(hc);
            break;
        }
        below = hc;
        if hc >= hi {
            break;
        }
        hc = (hc * 1.25).min(hi);
    }
    let Some(mut up) = above else { return Ok(None) };
    if below > 0.0 {
        while up / below > 1.05 {
            let mid = (up * below).sqrt();
            if flips_at(mid, rng) {
                up = mid;
            } else {
                below = mid;
            }
        }
    }
    Ok(Some(up))
}

/// Per-cell empirical flip probability against hammer count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCurve {
    pub cell: CellCoord,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcProfile {
    pub hc_first: Option<f64>,
    pub hc_second: Option<f64>,
    pub hc_third: Option<f64>,
    pub worst_pattern: DataPattern,
    pub curves: Vec<CellCurve>,
}

/// Pattern with the most flips at the largest hammer count; ties go to enum order.
pub fn worst_case_pattern(results: &[HammerResult]) -> Option<DataPattern> {
    let max_hc = results.iter().map(|r| r.hc).fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<(usize, DataPattern)> = None;
    for r in results.iter().filter(|r| r.hc == max_hc) {
        let n = r.counts.len();
        match best {
            Some((bn, bp)) if bn > n || (bn == n && bp <= r.pattern) => {}
            _ => best = Some((n, r.pattern)),
        }
    }
    best.map(|(_, p)| p)
}

/// Lowest hammer counts at which some 64-bit word shows 1, 2 and 3 flips, plus cell curves.
pub fn extract_hc_profile(results: &[HammerResult]) -> Result<HcProfile> {
    let mut hc_n: [Option<f64>; 3] = [None; 3];
    for r in results {
        let mut per_word: BTreeMap<(u32, u32, u32), usize> = BTreeMap::new();
        for c in r.counts.keys() {
            *per_word.entry((c.bank, c.row, c.bit / 64)).or_insert(0) += 1;
        }
        let most = per_word.values().copied().max().unwrap_or(0);
        for (k, slot) in hc_n.iter_mut().enumerate() {
            if most > k && slot.is_none_or(|v| r.hc < v) {
                *slot = Some(r.hc);
            }
        }
    }
    if hc_n[0].is_none() {
        return Err(LabError::NotRowHammerable);
    }
    let worst = worst_case_pattern(results).expect("non-empty results");
    let mut worst_results: Vec<&HammerResult> = results.iter().filter(|r| r.pattern == worst).collect();
    worst_results.sort_by(|a, b| a.hc.total_cmp(&b.hc));
    let cells: BTreeSet<CellCoord> = worst_results.iter().flat_map(|r| r.counts.keys().copied()).collect();
    let curves = cells
        .into_iter()
        .map(|cell| CellCurve {
            cell,
            points: worst_results
                .iter()
                .map(|r| (r.hc, r.counts.get(&cell).copied().unwrap_or(0) as f64 / r.iterations as f64))
                .collect(),
        })
        .collect();
    Ok(HcProfile { hc_first: hc_n[0], hc_second: hc_n[1], hc_third: hc_n[2], worst_pattern: worst, curves })
}
