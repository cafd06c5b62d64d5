//! RowHammer mitigation mechanisms behind one per-bank policy interface, PARA's probability
//! solver, and replay of activation streams against a chip's hammer model.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chipsynth::{apply_ecc_to_flips, sample_row_cells, CellCoord, HammerCell, SyntheticChip};
use crate::error::{LabError, Result};
use crate::geometry::{RowRemapScheme, TimingParams};
use crate::pattern::SimRng;

/// Lowest HC_first that increased refresh and TWiCe scale to.
pub const MIN_SCALABLE_HC_FIRST: u64 = 32_768;
/// The only HC_first at which ProHIT and MRLoc have published parameters.
pub const PROHIT_MRLOC_HC_FIRST: u64 = 2000;
pub const PARA_BER_TARGET: f64 = 1e-15;
pub const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationKind {
    None,
    IncreasedRefresh,
    Para,
    Prohit,
    Mrloc,
    Twice,
    TwiceIdeal,
    Ideal,
}

impl MitigationKind {
    pub const ALL: [MitigationKind; 8] = [
        MitigationKind::None,
        MitigationKind::IncreasedRefresh,
        MitigationKind::Para,
        MitigationKind::Prohit,
        MitigationKind::Mrloc,
        MitigationKind::Twice,
        MitigationKind::TwiceIdeal,
        MitigationKind::Ideal,
    ];

    /// Mechanisms designed to leave no flips at their configured HC_first.
    pub const ZERO_FLIP: [MitigationKind; 5] = [
        MitigationKind::IncreasedRefresh,
        MitigationKind::Para,
        MitigationKind::Twice,
        MitigationKind::TwiceIdeal,
        MitigationKind::Ideal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MitigationKind::None => "none",
            MitigationKind::IncreasedRefresh => "increased_refresh",
            MitigationKind::Para => "para",
            MitigationKind::Prohit => "prohit",
            MitigationKind::Mrloc => "mrloc",
            MitigationKind::Twice => "twice",
            MitigationKind::TwiceIdeal => "twice_ideal",
            MitigationKind::Ideal => "ideal",
        }
    }
}

impl std::fmt::Display for MitigationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MitigationKind {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        MitigationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| LabError::Config(format!("unknown mitigation '{s}'")))
    }
}

/// ProHIT table sizes and probabilities. No defaults exist for these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProhitParams {
    pub hot_entries: usize,
    pub cold_entries: usize,
    /// Chance a victim of an activation enters the tables.
    pub p_insert: f64,
    /// Chance a full cold table evicts its oldest entry instead of a random one.
    pub p_evict: f64,
    /// Chance a refresh tick refreshes the top hot entry instead of a random cold entry.
    pub p_top: f64,
}

/// MRLoc queue length and refresh probability range. No defaults exist for these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrlocParams {
    pub queue_len: usize,
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigationConfig {
    pub kind: MitigationKind,
    pub hc_first: u64,
    /// PARA refresh probability; solved from `hc_first` when absent.
    #[serde(default)]
    pub para_p: Option<f64>,
    #[serde(default)]
    pub prohit: Option<ProhitParams>,
    #[serde(default)]
    pub mrloc: Option<MrlocParams>,
}

impl MitigationConfig {
    pub fn new(kind: MitigationKind, hc_first: u64) -> Self {
        MitigationConfig { kind, hc_first, para_p: None, prohit: None, mrloc: None }
    }
}

/// Rows to refresh now, in one bank.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RefreshAction {
    pub rows: Vec<u32>,
}

impl RefreshAction {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Bank time consumed, one row cycle per target.
    pub fn cost_ns(&self, t_rc_ns: f64) -> f64 {
        self.rows.len() as f64 * t_rc_ns
    }
}

/// Expected number of `l`-long refresh-free runs in `n` adjacent activations, each of which
/// refreshes the victim with probability `p`.
pub fn para_run_rate(p: f64, l: f64, n: f64) -> f64 {
    if p >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - p;
    (l * q.ln()).exp() * (1.0 + (n - l).max(0.0) * p)
}

/// Smallest PARA probability with P(some victim run reaches hc_first hammers within `n`
/// activations) at most `ber_target`.
pub fn para_probability_for(hc_first: u64, ber_target: f64, n: f64) -> Result<f64> {
    if hc_first < 2 {
        return Err(LabError::Argument("PARA needs hc_first >= 2".into()));
    }
    if !(ber_target > 0.0 && ber_target < 1.0) {
        return Err(LabError::Argument("BER target must be in (0, 1)".into()));
    }
    // Double-sided: hc_first hammers take 2 × hc_first adjacent activations.
    let l = 2.0 * hc_first as f64;
    let target = -(-ber_target).ln_1p();
    let ln_rate = |p: f64| l * (1.0 - p).ln() + (1.0 + (n - l).max(0.0) * p).ln();
    // The run rate peaks near 1/l and falls after; search the falling branch.
    let mut lo = (1.0 / l - 1.0 / n.max(l)).max(1e-300);
    let mut hi = 1.0;
    if ln_rate(lo) <= target.ln() {
        return Ok(lo);
    }
    while (hi - lo) / hi > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if ln_rate(mid) <= target.ln() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// PARA probability for one hour of back-to-back activations at one per `t_rc_ns`.
pub fn para_probability(hc_first: u64, ber_target: f64, t_rc_ns: f64) -> Result<f64> {
    para_probability_for(hc_first, ber_target, SECONDS_PER_HOUR * 1e9 / t_rc_ns)
}

/// Refresh window needed by increased refresh: `hc_first × t_RC`.
pub fn increased_refresh_window(hc_first: u64, t_rc_ns: f64) -> Result<f64> {
    if hc_first == 0 {
        return Err(LabError::Argument("hc_first must be positive".into()));
    }
    if hc_first < MIN_SCALABLE_HC_FIRST {
        return Err(LabError::Unsupported(format!(
            "increased refresh does not scale to hc_first {hc_first} < {MIN_SCALABLE_HC_FIRST}"
        )));
    }
    Ok(hc_first as f64 * t_rc_ns)
}

#[derive(Debug, Clone, Default)]
struct Prohit {
    hot: Vec<u32>,
    cold: VecDeque<u32>,
}

#[derive(Debug, Clone)]
enum Mechanism {
    None,
    IncreasedRefresh { rows_per_tick: f64, acc: f64, next: u32 },
    Para { p: f64 },
    Prohit { params: ProhitParams, tables: Prohit },
    Mrloc { params: MrlocParams, queue: VecDeque<u32> },
    /// Per victim: (adjacent activations, lifetime in refresh ticks).
    Twice { t_rh: f64, prune_rate: f64, table: HashMap<u32, (u32, u32)> },
    Ideal { limit: u32, counts: HashMap<u32, u32> },
}

/// One bank's mitigation state.
#[derive(Debug, Clone)]
pub struct MitigationState {
    pub kind: MitigationKind,
    pub hc_first: u64,
    rows_per_bank: u32,
    scheme: RowRemapScheme,
    mech: Mechanism,
}

impl MitigationState {
    pub fn new(cfg: &MitigationConfig, rows_per_bank: u32, scheme: RowRemapScheme, timing: &TimingParams) -> Result<Self> {
        let unit = |v: f64, what: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(LabError::Config(format!("{what} must be in [0, 1]")))
            }
        };
        if cfg.kind != MitigationKind::None && cfg.hc_first < 2 {
            return Err(LabError::Config("hc_first must be >= 2".into()));
        }
        if matches!(cfg.kind, MitigationKind::Prohit | MitigationKind::Mrloc) && cfg.hc_first != PROHIT_MRLOC_HC_FIRST {
            return Err(LabError::Unsupported(format!(
                "{} is only modeled at hc_first = {PROHIT_MRLOC_HC_FIRST}",
                cfg.kind
            )));
        }
        let intervals = timing.refresh_intervals_per_window() as f64;
        let mech = match cfg.kind {
            MitigationKind::None => Mechanism::None,
            MitigationKind::IncreasedRefresh => {
                let window = increased_refresh_window(cfg.hc_first, timing.t_rc_ns)?;
                Mechanism::IncreasedRefresh {
                    rows_per_tick: rows_per_bank as f64 * timing.t_refi_ns() / window,
                    acc: 0.0,
                    next: 0,
                }
            }
            MitigationKind::Para => {
                let p = match cfg.para_p {
                    Some(p) => p,
                    None => para_probability(cfg.hc_first, PARA_BER_TARGET, timing.t_rc_ns)?,
                };
                unit(p, "para_p")?;
                Mechanism::Para { p }
            }
            MitigationKind::Prohit => {
                let params = cfg
                    .prohit
                    .ok_or_else(|| LabError::Config("prohit parameters are required".into()))?;
                unit(params.p_insert, "p_insert")?;
                unit(params.p_evict, "p_evict")?;
                unit(params.p_top, "p_top")?;
                if params.hot_entries == 0 || params.cold_entries == 0 {
                    return Err(LabError::Config("prohit tables need at least one entry".into()));
                }
                Mechanism::Prohit { params, tables: Prohit::default() }
            }
            MitigationKind::Mrloc => {
                let params =
                    cfg.mrloc.ok_or_else(|| LabError::Config("mrloc parameters are required".into()))?;
                unit(params.p_min, "p_min")?;
                unit(params.p_max, "p_max")?;
                if params.queue_len == 0 || params.p_min > params.p_max {
                    return Err(LabError::Config("mrloc needs queue_len >= 1 and p_min <= p_max".into()));
                }
                Mechanism::Mrloc { params, queue: VecDeque::new() }
            }
            MitigationKind::Twice | MitigationKind::TwiceIdeal => {
                let t_rh = cfg.hc_first as f64 / 4.0;
                if cfg.kind == MitigationKind::Twice && t_rh < intervals {
                    return Err(LabError::Unsupported(format!(
                        "TWiCe does not scale: t_RH {t_rh} is below {intervals} refresh intervals per window"
                    )));
                }
                Mechanism::Twice { t_rh, prune_rate: t_rh / intervals, table: HashMap::new() }
            }
            MitigationKind::Ideal => {
                Mechanism::Ideal { limit: (cfg.hc_first - 1) as u32, counts: HashMap::new() }
            }
        };
        Ok(MitigationState { kind: cfg.kind, hc_first: cfg.hc_first, rows_per_bank, scheme, mech })
    }

    /// Rows physically adjacent to `row`.
    pub fn victims(&self, row: u32) -> Vec<u32> {
        neighbors(row, self.scheme, self.rows_per_bank)
    }

    pub fn on_activate(&mut self, row: u32, _now_ns: f64, rng: &mut SimRng) -> RefreshAction {
        let victims = self.victims(row);
        let mut out = Vec::new();
        match &mut self.mech {
            Mechanism::None | Mechanism::IncreasedRefresh { .. } => {}
            Mechanism::Para { p } => {
                for v in victims {
                    if rng.random_bool(*p) {
                        out.push(v);
                    }
                }
            }
            Mechanism::Prohit { params, tables } => {
                for v in victims {
                    if !rng.random_bool(params.p_insert) {
                        continue;
                    }
                    if let Some(i) = tables.hot.iter().position(|&x| x == v) {
                        if i > 0 {
                            tables.hot.swap(i, i - 1);
                        }
                    } else if let Some(i) = tables.cold.iter().position(|&x| x == v) {
                        tables.cold.remove(i);
                        if tables.hot.len() == params.hot_entries {
                            let demoted = tables.hot.pop().expect("full table");
                            tables.cold.push_back(demoted);
                        }
                        tables.hot.push(v);
                    } else {
                        if tables.cold.len() >= params.cold_entries {
                            if rng.random_bool(params.p_evict) {
                                tables.cold.pop_front();
                            } else {
                                let i = rng.random_range(0..tables.cold.len());
                                tables.cold.remove(i);
                            }
                        }
                        tables.cold.push_back(v);
                    }
                }
            }
            Mechanism::Mrloc { params, queue } => {
                for v in victims {
                    let p = match queue.iter().position(|&x| x == v) {
                        Some(rank) => {
                            queue.remove(rank);
                            let recency = 1.0 - rank as f64 / params.queue_len as f64;
                            params.p_min + (params.p_max - params.p_min) * recency
                        }
                        None => params.p_min,
                    };
                    if queue.len() == params.queue_len {
                        queue.pop_back();
                    }
                    queue.push_front(v);
                    if rng.random_bool(p) {
                        out.push(v);
                    }
                }
            }
            Mechanism::Twice { t_rh, table, .. } => {
                for v in victims {
                    let e = table.entry(v).or_insert((0, 0));
                    e.0 += 1;
                    if e.0 as f64 > *t_rh {
                        table.remove(&v);
                        out.push(v);
                    }
                }
            }
            Mechanism::Ideal { limit, counts } => {
                counts.remove(&row);
                for v in victims {
                    let c = counts.entry(v).or_insert(0);
                    *c += 1;
                    if *c >= *limit {
                        counts.remove(&v);
                        out.push(v);
                    }
                }
            }
        }
        RefreshAction { rows: out }
    }

    /// A refresh command boundary; `auto_refreshed` lists the rows the regular refresh just
    /// covered in this bank.
    pub fn on_refresh_tick(&mut self, auto_refreshed: &[u32], rng: &mut SimRng) -> RefreshAction {
        let rows = self.rows_per_bank;
        let mut out = Vec::new();
        match &mut self.mech {
            Mechanism::None | Mechanism::Para { .. } | Mechanism::Mrloc { .. } => {}
            Mechanism::IncreasedRefresh { rows_per_tick, acc, next } => {
                *acc += *rows_per_tick;
                while *acc >= 1.0 {
                    *acc -= 1.0;
                    out.push(*next);
                    *next = (*next + 1) % rows;
                }
            }
            Mechanism::Prohit { params, tables } => {
                if !tables.hot.is_empty() && (tables.cold.is_empty() || rng.random_bool(params.p_top)) {
                    out.push(tables.hot.remove(0));
                } else if !tables.cold.is_empty() {
                    let i = rng.random_range(0..tables.cold.len());
                    out.push(tables.cold.remove(i).expect("index in range"));
                }
            }
            Mechanism::Twice { prune_rate, table, .. } => {
                for r in auto_refreshed {
                    table.remove(r);
                }
                table.retain(|_, (count, life)| {
                    *life += 1;
                    *count as f64 >= *prune_rate * *life as f64
                });
            }
            Mechanism::Ideal { counts, .. } => {
                for r in auto_refreshed {
                    counts.remove(r);
                }
            }
        }
        RefreshAction { rows: out }
    }

    /// Counter entries currently held (TWiCe table, ideal counters, ProHIT tables, MRLoc queue).
    pub fn tracked_rows(&self) -> usize {
        match &self.mech {
            Mechanism::None | Mechanism::Para { .. } | Mechanism::IncreasedRefresh { .. } => 0,
            Mechanism::Prohit { tables, .. } => tables.hot.len() + tables.cold.len(),
            Mechanism::Mrloc { queue, .. } => queue.len(),
            Mechanism::Twice { table, .. } => table.len(),
            Mechanism::Ideal { counts, .. } => counts.len(),
        }
    }

    /// TWiCe's un-pruned adjacent-activation count for `row`.
    pub fn twice_count(&self, row: u32) -> Option<u32> {
        match &self.mech {
            Mechanism::Twice { table, .. } => table.get(&row).map(|e| e.0),
            _ => None,
        }
    }

    pub fn para_p(&self) -> Option<f64> {
        match self.mech {
            Mechanism::Para { p } => Some(p),
            _ => None,
        }
    }
}

/// Logical rows physically adjacent (distance 1) to `row`, excluding rows sharing its wordline.
pub fn neighbors(row: u32, scheme: RowRemapScheme, rows_per_bank: u32) -> Vec<u32> {
    let phys = scheme.physical_row(row) as i64;
    let n = scheme.physical_rows(rows_per_bank) as i64;
    let mut out = Vec::with_capacity(2);
    for q in [phys - 1, phys + 1] {
        if (0..n).contains(&q) {
            out.extend(scheme.logical_rows(q as u32).into_iter().filter(|&r| r < rows_per_bank));
        }
    }
    out
}

/// Rows the regular refresh covers at tick `k` (round-robin over one window).
pub fn auto_refresh_rows(k: u64, rows_per_bank: u32, intervals: u64) -> std::ops::Range<u32> {
    let k = k % intervals;
    let start = (k * rows_per_bank as u64).div_ceil(intervals) as u32;
    let end = ((k + 1) * rows_per_bank as u64).div_ceil(intervals) as u32;
    start..end
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub time_ns: f64,
    pub bank: u32,
    pub row: u32,
}

/// Back-to-back double-sided hammering of `victim` for `duration_ns`, one activation per
/// row cycle, optionally interleaved with random background activations in other rows.
pub fn double_sided_attack(
    bank: u32,
    victim: u32,
    scheme: RowRemapScheme,
    rows_per_bank: u32,
    timing: &TimingParams,
    duration_ns: f64,
    background_every: Option<u32>,
    rng: &mut SimRng,
) -> Result<Vec<Activation>> {
    let (a, b) = crate::geometry::aggressor_rows(victim, scheme, rows_per_bank)?;
    let n = (duration_ns / timing.t_rc_ns) as u64;
    let mut out = Vec::with_capacity(n as usize);
    let mut side = false;
    for i in 0..n {
        let time_ns = i as f64 * timing.t_rc_ns;
        let row = match background_every {
            Some(k) if k > 0 && i % k as u64 == k as u64 - 1 => rng.random_range(0..rows_per_bank),
            _ => {
                side = !side;
                if side {
                    a
                } else {
                    b
                }
            }
        };
        out.push(Activation { time_ns, bank, row });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SafetyOutcome {
    /// Distinct cells with a visible flip.
    pub flips: u64,
    pub mitigation_refreshes: u64,
}

struct Exposure<'a> {
    chip: &'a SyntheticChip,
    counts: HashMap<(u32, u32), u32>,
    cells: HashMap<(u32, u32), Vec<HammerCell>>,
    raw: BTreeSet<CellCoord>,
}

impl Exposure<'_> {
    fn bump(&mut self, bank: u32, row: u32) {
        *self.counts.entry((bank, row)).or_insert(0) += 1;
    }

    /// End the row's exposure epoch: sample flips at its accumulated hammer count and reset.
    fn close(&mut self, bank: u32, row: u32, rng: &mut SimRng) {
        let Some(c) = self.counts.remove(&(bank, row)) else { return };
        let chip = self.chip;
        let cells = self.cells.entry((bank, row)).or_insert_with(|| chip.hammer_cells(bank, row));
        let h = &chip.profile.hammer;
        let raw = &mut self.raw;
        sample_row_cells(h, cells, c as f64 / 2.0, h.worst_pattern, rng, |bit| {
            raw.insert(CellCoord { bank, row, bit });
        });
    }
}

/// Replay activations through the mechanism (one state per bank) and the chip's hammer model.
/// A row's exposure is half the activations of its physical neighbours since it was last
/// refreshed or activated; flips use the chip's worst-case data pattern and on-die ECC.
pub fn evaluate_safety(
    chip: &SyntheticChip,
    cfg: &MitigationConfig,
    timing: &TimingParams,
    activations: &[Activation],
    rng: &mut SimRng,
) -> Result<SafetyOutcome> {
    let geo = &chip.geo;
    let scheme = chip.profile.hammer.remap;
    let rows = geo.rows_per_bank;
    let intervals = timing.refresh_intervals_per_window();
    let t_refi = timing.t_refi_ns();
    let mut states: BTreeMap<u32, MitigationState> = BTreeMap::new();
    for a in activations {
        if a.bank >= geo.total_banks() || a.row >= rows {
            return Err(LabError::Bounds(format!("activation {a:?} outside geometry")));
        }
        if !states.contains_key(&a.bank) {
            states.insert(a.bank, MitigationState::new(cfg, rows, scheme, timing)?);
        }
    }
    let mut exp = Exposure { chip, counts: HashMap::new(), cells: HashMap::new(), raw: BTreeSet::new() };
    let mut refreshes = 0u64;
    let mut tick = 1u64;
    let mut last = f64::NEG_INFINITY;
    for a in activations {
        if a.time_ns < last {
            return Err(LabError::Argument("activations must be in time order".into()));
        }
        last = a.time_ns;
        while tick as f64 * t_refi <= a.time_ns {
            let auto: Vec<u32> = auto_refresh_rows(tick - 1, rows, intervals).collect();
            for (&bank, st) in states.iter_mut() {
                for &r in &auto {
                    exp.close(bank, r, rng);
                }
                let act = st.on_refresh_tick(&auto, rng);
                refreshes += act.rows.len() as u64;
                for r in act.rows {
                    exp.close(bank, r, rng);
                }
            }
            tick += 1;
        }
        let st = states.get_mut(&a.bank).expect("state created above");
        exp.close(a.bank, a.row, rng);
        for v in st.victims(a.row) {
            exp.bump(a.bank, v);
        }
        let act = st.on_activate(a.row, a.time_ns, rng);
        refreshes += act.rows.len() as u64;
        for r in act.rows {
            exp.close(a.bank, r, rng);
        }
    }
    let mut open: Vec<(u32, u32)> = exp.counts.keys().copied().collect();
    open.sort_unstable();
    for (b, r) in open {
        exp.close(b, r, rng);
    }
    let visible = apply_ecc_to_flips(chip, exp.raw.iter().copied().collect());
    Ok(SafetyOutcome { flips: visible.len() as u64, mitigation_refreshes: refreshes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::stream;

    fn timing() -> TimingParams {
        TimingParams::preset("ddr4").unwrap()
    }

    fn state(kind: MitigationKind, hc: u64) -> MitigationState {
        MitigationState::new(&MitigationConfig::new(kind, hc), 1024, RowRemapScheme::Identity, &timing()).unwrap()
    }

    #[test]
    fn none_never_refreshes() {
        let mut s = state(MitigationKind::None, 1000);
        let mut rng = stream(1, 0, 0);
        for r in 0..100 {
            assert!(s.on_activate(r, 0.0, &mut rng).is_empty());
            assert!(s.on_refresh_tick(&[r], &mut rng).is_empty());
        }
    }

    #[test]
    fn ideal_counter_trace() {
        let mut s = state(MitigationKind::Ideal, 10);
        let mut rng = stream(1, 0, 0);
        // Row 51 is an aggressor of 50 and 52.
        for i in 1..=8 {
            assert!(s.on_activate(51, i as f64, &mut rng).is_empty(), "activation {i}");
        }
        assert_eq!(s.on_activate(51, 9.0, &mut rng).rows, vec![50, 52]);
        assert!(s.on_activate(51, 10.0, &mut rng).is_empty());
    }

    #[test]
    fn ideal_reset_by_own_activation_and_auto_refresh() {
        let mut s = state(MitigationKind::Ideal, 4);
        let mut rng = stream(1, 0, 0);
        s.on_activate(51, 0.0, &mut rng);
        s.on_activate(51, 0.0, &mut rng);
        s.on_activate(50, 0.0, &mut rng);
        s.on_refresh_tick(&[52], &mut rng);
        // Counters for 50 and 52 restart; 51 reached 1 from the activation of 50.
        assert!(s.on_activate(51, 0.0, &mut rng).is_empty());
        assert!(s.on_activate(51, 0.0, &mut rng).is_empty());
        assert_eq!(s.on_activate(51, 0.0, &mut rng).rows, vec![50, 52]);
    }

    #[test]
    fn para_saturated() {
        let mut cfg = MitigationConfig::new(MitigationKind::Para, 1000);
        cfg.para_p = Some(1.0);
        let mut s = MitigationState::new(&cfg, 1024, RowRemapScheme::Identity, &timing()).unwrap();
        let mut rng = stream(1, 0, 0);
        for _ in 0..20 {
            assert_eq!(s.on_activate(7, 0.0, &mut rng).rows, vec![6, 8]);
        }
        assert_eq!(s.on_activate(0, 0.0, &mut rng).rows, vec![1]);
        cfg.para_p = Some(1.5);
        assert!(MitigationState::new(&cfg, 1024, RowRemapScheme::Identity, &timing()).is_err());
    }

    #[test]
    fn para_probability_shape() {
        let t = timing();
        let p2 = para_probability(2, PARA_BER_TARGET, t.t_rc_ns).unwrap();
        let p1k = para_probability(1024, PARA_BER_TARGET, t.t_rc_ns).unwrap();
        let p1m = para_probability(1 << 20, PARA_BER_TARGET, t.t_rc_ns).unwrap();
        let p1g = para_probability(1 << 30, PARA_BER_TARGET, t.t_rc_ns).unwrap();
        assert!(p2 > p1k && p1k > p1m && p1m > p1g);
        assert!(p1g < 1e-7);
        let n = SECONDS_PER_HOUR * 1e9 / t.t_rc_ns;
        assert!(para_run_rate(p1k, 2048.0, n) <= PARA_BER_TARGET * 1.000001);
        assert!(para_run_rate(p1k * 0.999, 2048.0, n) > PARA_BER_TARGET);
        assert!(para_probability(1, PARA_BER_TARGET, t.t_rc_ns).is_err());
    }

    #[test]
    fn increased_refresh_examples() {
        assert!((increased_refresh_window(65_536, 50.0).unwrap() - 3_276_800.0).abs() < 1e-6);
        assert!(increased_refresh_window(32_768, 50.0).is_ok());
        assert!(matches!(increased_refresh_window(4_800, 50.0), Err(LabError::Unsupported(_))));
        assert!(matches!(
            MitigationState::new(
                &MitigationConfig::new(MitigationKind::IncreasedRefresh, 4_800),
                1024,
                RowRemapScheme::Identity,
                &timing()
            ),
            Err(LabError::Unsupported(_))
        ));
    }

    #[test]
    fn increased_refresh_covers_bank_in_window() {
        let t = timing();
        let mut s = state(MitigationKind::IncreasedRefresh, 65_536);
        let mut rng = stream(1, 0, 0);
        let ticks = (increased_refresh_window(65_536, t.t_rc_ns).unwrap() / t.t_refi_ns()).ceil() as usize;
        let mut seen = BTreeSet::new();
        for _ in 0..ticks {
            seen.extend(s.on_refresh_tick(&[], &mut rng).rows);
        }
        assert_eq!(seen.len(), 1024);
    }

    #[test]
    fn twice_bounds() {
        let t = timing();
        let cfg = MitigationConfig::new(MitigationKind::Twice, 16_384);
        assert!(matches!(
            MitigationState::new(&cfg, 1024, RowRemapScheme::Identity, &t),
            Err(LabError::Unsupported(_))
        ));
        assert!(MitigationState::new(&MitigationConfig::new(MitigationKind::TwiceIdeal, 128), 1024, RowRemapScheme::Identity, &t).is_ok());
        assert!(MitigationState::new(&MitigationConfig::new(MitigationKind::Twice, 32_768), 1024, RowRemapScheme::Identity, &t).is_ok());
    }

    #[test]
    fn twice_refreshes_past_threshold_and_prunes() {
        let mut s = state(MitigationKind::TwiceIdeal, 40);
        let mut rng = stream(1, 0, 0);
        for _ in 0..10 {
            assert!(s.on_activate(51, 0.0, &mut rng).is_empty());
        }
        assert_eq!(s.on_activate(51, 0.0, &mut rng).rows, vec![50, 52]);
        s.on_activate(200, 0.0, &mut rng);
        assert_eq!(s.twice_count(199), Some(1));
        // Pruning rate is 10/8192 per tick; one count survives 819 ticks.
        for _ in 0..819 {
            s.on_refresh_tick(&[], &mut rng);
        }
        assert_eq!(s.twice_count(199), Some(1));
        s.on_refresh_tick(&[], &mut rng);
        assert_eq!(s.twice_count(199), None);
    }

    #[test]
    fn prohit_and_mrloc_need_parameters() {
        for kind in [MitigationKind::Prohit, MitigationKind::Mrloc] {
            let err = MitigationState::new(&MitigationConfig::new(kind, 2000), 1024, RowRemapScheme::Identity, &timing());
            assert!(matches!(err, Err(LabError::Config(_))));
            let off = MitigationState::new(&MitigationConfig::new(kind, 4000), 1024, RowRemapScheme::Identity, &timing());
            assert!(matches!(off, Err(LabError::Unsupported(_))));
        }
    }

    #[test]
    fn prohit_refreshes_hot_row_at_tick() {
        let mut cfg = MitigationConfig::new(MitigationKind::Prohit, 2000);
        cfg.prohit = Some(ProhitParams { hot_entries: 2, cold_entries: 4, p_insert: 1.0, p_evict: 1.0, p_top: 1.0 });
        let mut s = MitigationState::new(&cfg, 1024, RowRemapScheme::Identity, &timing()).unwrap();
        let mut rng = stream(1, 0, 0);
        s.on_activate(11, 0.0, &mut rng);
        s.on_activate(11, 0.0, &mut rng);
        // 10 and 12 were promoted to the hot table; 10 sits on top.
        assert_eq!(s.on_refresh_tick(&[], &mut rng).rows, vec![10]);
        assert_eq!(s.on_refresh_tick(&[], &mut rng).rows, vec![12]);
        assert!(s.on_refresh_tick(&[], &mut rng).is_empty());
    }

    #[test]
    fn mrloc_recency_raises_probability() {
        let mut cfg = MitigationConfig::new(MitigationKind::Mrloc, 2000);
        cfg.mrloc = Some(MrlocParams { queue_len: 8, p_min: 0.0, p_max: 1.0 });
        let mut s = MitigationState::new(&cfg, 1024, RowRemapScheme::Identity, &timing()).unwrap();
        let mut rng = stream(1, 0, 0);
        // Row 0 has the single victim 1: absent on first sight (p_min), most recent after.
        assert!(s.on_activate(0, 0.0, &mut rng).is_empty());
        assert_eq!(s.on_activate(0, 0.0, &mut rng).rows, vec![1]);
    }

    #[test]
    fn auto_refresh_partition() {
        let mut seen = Vec::new();
        for k in 0..8192 {
            seen.extend(auto_refresh_rows(k, 1000, 8192));
        }
        assert_eq!(seen, (0..1000).collect::<Vec<_>>());
        assert_eq!(auto_refresh_rows(8192, 16384, 8192), 0..2);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MitigationKind::ALL {
            assert_eq!(k.name().parse::<MitigationKind>().unwrap(), k);
        }
    }
}
