//! Trace-driven bank-timing simulator with an FR-FCFS bank scheduler, refresh blackouts,
//! mitigation refresh accounting and Solar tRCD selection.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chipsynth::{sample_activation_read, SyntheticChip, REFERENCE_TEMP_C, SAFE_TRCD_NS};
use crate::error::{LabError, Result};
use crate::geometry::{decode_address, DramGeometry, Location, RowRemapScheme, TimingParams};
use crate::pattern::{stream, DataPattern, SimRng};
use crate::rhmitigate::{auto_refresh_rows, Activation, MitigationConfig, MitigationState};
use crate::solar::{trcd_for_access, SolarConfig};

const TAG_MITIGATION: u64 = 0x51;
const TAG_CORRUPT: u64 = 0x52;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemRequest {
    pub arrival_ns: f64,
    pub address: u64,
    pub is_write: bool,
    pub core_id: u32,
}

/// Parse `arrival_ns core_id R|W hex_address` lines. Blank lines and `#` comments are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<MemRequest>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let err = |msg: &str| LabError::Parse { line: line_no, msg: msg.to_string() };
        let f: Vec<&str> = t.split_whitespace().collect();
        if f.len() != 4 {
            return Err(err("expected 4 fields: arrival_ns core_id R|W hex_address"));
        }
        let arrival_ns: f64 = f[0].parse().map_err(|_| err("bad arrival time"))?;
        if !(arrival_ns.is_finite() && arrival_ns >= 0.0) {
            return Err(err("arrival time must be finite and non-negative"));
        }
        let core_id: u32 = f[1].parse().map_err(|_| err("bad core id"))?;
        let is_write = match f[2] {
            "R" | "r" => false,
            "W" | "w" => true,
            _ => return Err(err("access type must be R or W")),
        };
        let hex = f[3].trim_start_matches("0x").trim_start_matches("0X");
        let address = u64::from_str_radix(hex, 16).map_err(|_| err("bad hex address"))?;
        out.push(MemRequest { arrival_ns, address, is_write, core_id });
    }
    check_arrivals(&out).map_err(|(idx, msg)| {
        // Map the request index back to its source line.
        let line = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim().starts_with('#'))
            .nth(idx)
            .map_or(0, |(i, _)| i + 1);
        LabError::Parse { line, msg }
    })?;
    Ok(out)
}

fn check_arrivals(trace: &[MemRequest]) -> std::result::Result<(), (usize, String)> {
    let mut last: Vec<f64> = Vec::new();
    for (i, r) in trace.iter().enumerate() {
        let c = r.core_id as usize;
        if last.len() <= c {
            last.resize(c + 1, f64::NEG_INFINITY);
        }
        if r.arrival_ns < last[c] {
            return Err((i, format!("arrival times of core {c} decrease")));
        }
        last[c] = r.arrival_ns;
    }
    Ok(())
}

pub fn format_trace(trace: &[MemRequest]) -> String {
    let mut s = String::new();
    for r in trace {
        let kind = if r.is_write { 'W' } else { 'R' };
        writeln!(s, "{} {} {} {:#x}", r.arrival_ns, r.core_id, kind, r.address).expect("string write");
    }
    s
}

/// Merge per-core request lists into one list ordered by arrival, then core.
fn merge(mut v: Vec<MemRequest>) -> Vec<MemRequest> {
    v.sort_by(|a, b| a.arrival_ns.total_cmp(&b.arrival_ns).then(a.core_id.cmp(&b.core_id)));
    v
}

/// Each core streams one cacheline at a time through its own slice of the address space
/// (1/cores of capacity), starting at a random cacheline of the slice and wrapping within it.
pub fn gen_streaming(geo: &DramGeometry, cores: u32, per_core: usize, gap_ns: f64, seed: u64) -> Vec<MemRequest> {
    let cl = geo.cacheline_bytes as u64;
    let n = geo.capacity_bytes() / cl;
    let slice = (n / cores.max(1) as u64).max(1);
    let mut v = Vec::new();
    for c in 0..cores {
        let mut rng = stream(seed, 0x61, c as u64);
        let base = (c as u64 * slice) % n;
        let mut off = rng.random_range(0..slice);
        for i in 0..per_core {
            v.push(MemRequest {
                arrival_ns: i as f64 * gap_ns,
                address: (base + off) * cl,
                is_write: rng.random_bool(0.3),
                core_id: c,
            });
            off = (off + 1) % slice;
        }
    }
    merge(v)
}

/// Uniformly random cacheline addresses.
pub fn gen_random(geo: &DramGeometry, cores: u32, per_core: usize, gap_ns: f64, seed: u64) -> Vec<MemRequest> {
    let n_cl = geo.capacity_bytes() / geo.cacheline_bytes as u64;
    let mut v = Vec::new();
    for c in 0..cores {
        let mut rng = stream(seed, 0x62, c as u64);
        for i in 0..per_core {
            v.push(MemRequest {
                arrival_ns: i as f64 * gap_ns,
                address: rng.random_range(0..n_cl) * geo.cacheline_bytes as u64,
                is_write: rng.random_bool(0.3),
                core_id: c,
            });
        }
    }
    merge(v)
}

/// Each activation's first access targets cacheline 0 with probability `p_first_zero`; the
/// rest of the burst stays in the row.
pub fn gen_first_cacheline_biased(
    geo: &DramGeometry,
    cores: u32,
    per_core: usize,
    gap_ns: f64,
    p_first_zero: f64,
    seed: u64,
) -> Vec<MemRequest> {
    let cls = geo.cachelines_per_row();
    let mut v = Vec::new();
    for c in 0..cores {
        let mut rng = stream(seed, 0x63, c as u64);
        let mut i = 0;
        while i < per_core {
            let bank = rng.random_range(0..geo.total_banks());
            let row = rng.random_range(0..geo.rows_per_bank);
            let burst = 1 + rng.random_range(0..4usize);
            for k in 0..burst.min(per_core - i) {
                let cl = if k == 0 && rng.random_bool(p_first_zero) {
                    0
                } else {
                    rng.random_range(if k == 0 { 1 } else { 0 }..cls)
                };
                let loc = geo.location(bank, row, cl);
                v.push(MemRequest {
                    arrival_ns: i as f64 * gap_ns,
                    address: crate::geometry::encode_address(&loc, geo),
                    is_write: false,
                    core_id: c,
                });
                i += 1;
            }
        }
    }
    merge(v)
}

/// Core 0 alternates between the two aggressors of `victim` as fast as it can; other cores
/// issue random background traffic.
#[allow(clippy::too_many_arguments)]
pub fn gen_hammer_attack(
    geo: &DramGeometry,
    scheme: RowRemapScheme,
    bank: u32,
    victim: u32,
    attack_requests: usize,
    background_cores: u32,
    background_per_core: usize,
    background_gap_ns: f64,
    seed: u64,
) -> Result<Vec<MemRequest>> {
    let (a, b) = crate::geometry::aggressor_rows(victim, scheme, geo.rows_per_bank)?;
    let mut v = Vec::new();
    for i in 0..attack_requests {
        let row = if i % 2 == 0 { a } else { b };
        let loc = geo.location(bank, row, 0);
        v.push(MemRequest {
            arrival_ns: 0.0,
            address: crate::geometry::encode_address(&loc, geo),
            is_write: false,
            core_id: 0,
        });
    }
    let mut bg = gen_random(geo, background_cores, background_per_core, background_gap_ns, seed);
    for r in &mut bg {
        r.core_id += 1;
    }
    v.extend(bg);
    Ok(merge(v))
}

/// Optional inputs of a simulation run.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions<'a> {
    pub solar: Option<&'a SolarConfig>,
    pub mitigation: Option<&'a MitigationConfig>,
    /// When present, reduced-tRCD reads are checked for activation failures on this chip.
    pub chip: Option<&'a SyntheticChip>,
    pub seed: u64,
    pub temperature_c: f64,
    /// Keep a per-request service log and the activation stream.
    pub record: bool,
    /// Cores whose requests preempt all others and activate with their own tRCD (ns).
    pub priority_cores: &'a [(u32, f64)],
}

impl Default for SimOptions<'_> {
    fn default() -> Self {
        SimOptions { solar: None, mitigation: None, chip: None, seed: 0, temperature_c: REFERENCE_TEMP_C, record: false, priority_cores: &[] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub core_id: u32,
    pub bank: u32,
    pub issue_ns: f64,
    pub start_ns: f64,
    pub end_ns: f64,
    /// When the bank became free, refreshes included.
    pub bank_free_ns: f64,
    /// Earliest issue time among requests queued for the bank.
    pub earliest_pending_ns: f64,
    pub row_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimMetrics {
    pub per_core_requests: Vec<u64>,
    pub per_core_finish_ns: Vec<f64>,
    /// Requests served per memory clock cycle.
    pub per_core_ipc: Vec<f64>,
    pub finish_ns: f64,
    pub total_cycles: u64,
    pub requests: u64,
    pub activations: u64,
    pub row_hits: u64,
    pub reduced_trcd_activations: u64,
    /// Row-miss reads of regular (non-priority) cores.
    pub read_activations: u64,
    pub reduced_read_activations: u64,
    pub priority_requests: u64,
    pub mitigation_refreshes: u64,
    pub mitigation_busy_ns: f64,
    pub refresh_busy_ns: f64,
    pub total_busy_ns: f64,
    pub corrupted_reads: u64,
    #[serde(skip)]
    pub log: Vec<ServiceRecord>,
    #[serde(skip)]
    pub activation_log: Vec<Activation>,
}

impl SimMetrics {
    pub fn reduced_read_fraction(&self) -> f64 {
        if self.read_activations == 0 {
            0.0
        } else {
            self.reduced_read_activations as f64 / self.read_activations as f64
        }
    }

    pub fn reduced_trcd_fraction(&self) -> f64 {
        if self.activations == 0 {
            0.0
        } else {
            self.reduced_trcd_activations as f64 / self.activations as f64
        }
    }
}

/// Mitigation-consumed bank time over all bank busy time.
pub fn bandwidth_overhead(m: &SimMetrics) -> f64 {
    if m.total_busy_ns <= 0.0 {
        0.0
    } else {
        m.mitigation_busy_ns / m.total_busy_ns
    }
}

/// `(Σ ipc_i / baseline_i, that sum / cores × 100)`.
pub fn weighted_speedup(per_core_ipc: &[f64], baseline_ipc: &[f64]) -> Result<(f64, f64)> {
    if per_core_ipc.is_empty() {
        return Err(LabError::Argument("empty core set".into()));
    }
    if per_core_ipc.len() != baseline_ipc.len() {
        return Err(LabError::Argument("core sets differ".into()));
    }
    if baseline_ipc.iter().any(|&b| !(b > 0.0)) {
        return Err(LabError::Argument("baseline IPC must be positive".into()));
    }
    let raw: f64 = per_core_ipc.iter().zip(baseline_ipc).map(|(a, b)| a / b).sum();
    Ok((raw, raw / per_core_ipc.len() as f64 * 100.0))
}

struct Bank {
    open: Option<u32>,
    free_ns: f64,
    act_ns: f64,
    next_tick: u64,
    mit: Option<MitigationState>,
    rng: SimRng,
}

struct Sim<'a> {
    geo: &'a DramGeometry,
    timing: &'a TimingParams,
    opts: SimOptions<'a>,
    banks: Vec<Bank>,
    corrupt_rng: SimRng,
    m: SimMetrics,
}

impl Sim<'_> {
    /// Apply every refresh tick at or before `t` to the bank.
    fn catch_up(&mut self, b: usize, t: f64) {
        let t_refi = self.timing.t_refi_ns();
        let intervals = self.timing.refresh_intervals_per_window();
        loop {
            let bank = &mut self.banks[b];
            let tick_t = bank.next_tick as f64 * t_refi;
            if tick_t > t.max(bank.free_ns) {
                break;
            }
            let start = tick_t.max(bank.free_ns);
            bank.free_ns = start + self.timing.t_rfc_ns;
            bank.open = None;
            self.m.refresh_busy_ns += self.timing.t_rfc_ns;
            self.m.total_busy_ns += self.timing.t_rfc_ns;
            if let Some(mit) = bank.mit.as_mut() {
                let auto: Vec<u32> = auto_refresh_rows(bank.next_tick - 1, self.geo.rows_per_bank, intervals).collect();
                let act = mit.on_refresh_tick(&auto, &mut bank.rng);
                let cost = act.cost_ns(self.timing.t_rc_ns);
                bank.free_ns += cost;
                self.m.mitigation_refreshes += act.rows.len() as u64;
                self.m.mitigation_busy_ns += cost;
                self.m.total_busy_ns += cost;
            }
            bank.next_tick += 1;
        }
    }

    fn serve(&mut self, b: usize, r: &MemRequest, loc: &Location, s: f64) -> Result<f64> {
        let t = self.timing;
        let burst = t.t_cl_ns + t.t_burst_ns;
        let bank = &mut self.banks[b];
        let end = if bank.open == Some(loc.row) {
            self.m.row_hits += 1;
            s + burst
        } else {
            let mut act = s;
            if bank.open.is_some() {
                act = act.max(bank.act_ns + t.t_ras_ns) + t.t_rp_ns;
            }
            bank.act_ns = act;
            bank.open = Some(loc.row);
            self.m.activations += 1;
            if self.opts.record {
                self.m.activation_log.push(Activation { time_ns: act, bank: b as u32, row: loc.row });
            }
            let priority = self.opts.priority_cores.iter().find(|p| p.0 == r.core_id).map(|p| p.1);
            let trcd_ns = match (priority, self.opts.solar) {
                (Some(ns), _) => ns,
                (None, Some(cfg)) => {
                    let cycles = trcd_for_access(cfg, loc, r.is_write, true);
                    let reduced = cycles < cfg.trcd_default_cycles;
                    self.m.reduced_trcd_activations += reduced as u64;
                    if !r.is_write {
                        self.m.reduced_read_activations += reduced as u64;
                    }
                    t.cycles_to_ns(cycles)
                }
                (None, None) => t.t_rcd_ns,
            };
            if priority.is_none() && !r.is_write {
                self.m.read_activations += 1;
            }
            if let (Some(chip), None) = (self.opts.chip, priority) {
                if !r.is_write && trcd_ns < SAFE_TRCD_NS {
                    let col = self.opts.solar.map_or(loc.cacheline_index, |c| c.physical_column(b as u32, loc.cacheline_index));
                    let phys = self.geo.location(b as u32, loc.row, col);
                    let flips = sample_activation_read(
                        chip,
                        &phys,
                        trcd_ns,
                        self.opts.temperature_c,
                        DataPattern::Random,
                        &mut self.corrupt_rng,
                    )?;
                    if !flips.is_empty() {
                        self.m.corrupted_reads += 1;
                    }
                }
            }
            let end = act + trcd_ns + burst;
            let bank = &mut self.banks[b];
            if let Some(mit) = bank.mit.as_mut() {
                let action = mit.on_activate(loc.row, act, &mut bank.rng);
                if !action.is_empty() {
                    let cost = action.cost_ns(t.t_rc_ns);
                    self.m.mitigation_refreshes += action.rows.len() as u64;
                    self.m.mitigation_busy_ns += cost;
                    self.m.total_busy_ns += cost;
                    bank.open = None;
                    bank.free_ns = end + cost;
                    self.m.total_busy_ns += end - s;
                    return Ok(end);
                }
            }
            end
        };
        let bank = &mut self.banks[b];
        bank.free_ns = end;
        self.m.total_busy_ns += end - s;
        Ok(end)
    }
}

/// Simulate `trace` with one outstanding request per core and FR-FCFS per bank.
pub fn run_trace(trace: &[MemRequest], geo: &DramGeometry, timing: &TimingParams, opts: &SimOptions) -> Result<SimMetrics> {
    geo.validate()?;
    timing.validate()?;
    check_arrivals(trace).map_err(|(i, msg)| LabError::Argument(format!("request {i}: {msg}")))?;
    if let Some(chip) = opts.chip {
        if chip.geo != *geo {
            return Err(LabError::Config("chip geometry differs from simulated geometry".into()));
        }
    }
    if let Some(cfg) = opts.solar {
        if cfg.geo != *geo {
            return Err(LabError::Config("solar config built for a different geometry".into()));
        }
    }
    let locs: Vec<Location> = trace.iter().map(|r| decode_address(r.address, geo)).collect::<Result<_>>()?;
    let cores = trace.iter().map(|r| r.core_id + 1).max().unwrap_or(0) as usize;
    let scheme = opts.chip.map_or(RowRemapScheme::Identity, |c| c.profile.hammer.remap);
    let mut banks = Vec::new();
    for b in 0..geo.total_banks() {
        let mit = match opts.mitigation {
            Some(cfg) => Some(MitigationState::new(cfg, geo.rows_per_bank, scheme, timing)?),
            None => None,
        };
        banks.push(Bank {
            open: None,
            free_ns: 0.0,
            act_ns: f64::NEG_INFINITY,
            next_tick: 1,
            mit,
            rng: stream(opts.seed, TAG_MITIGATION, b as u64),
        });
    }
    let mut sim = Sim {
        geo,
        timing,
        opts: *opts,
        banks,
        corrupt_rng: stream(opts.seed, TAG_CORRUPT, 0),
        m: SimMetrics {
            per_core_requests: vec![0; cores],
            per_core_finish_ns: vec![0.0; cores],
            ..Default::default()
        },
    };

    let mut queues: Vec<std::collections::VecDeque<usize>> = vec![Default::default(); cores];
    for (i, r) in trace.iter().enumerate() {
        queues[r.core_id as usize].push_back(i);
    }
    // Per core: (request index, issue time) of its single outstanding request.
    let mut pending: Vec<Option<(usize, f64)>> =
        queues.iter_mut().map(|q| q.pop_front().map(|i| (i, trace[i].arrival_ns))).collect();

    let n_banks = geo.total_banks() as usize;
    loop {
        let mut earliest = vec![f64::INFINITY; n_banks];
        for &(i, issue) in pending.iter().flatten() {
            let b = locs[i].flat_bank(geo) as usize;
            earliest[b] = earliest[b].min(issue);
        }
        let mut best: Option<(f64, usize)> = None;
        for b in 0..n_banks {
            if earliest[b].is_infinite() {
                continue;
            }
            let mut s = sim.banks[b].free_ns.max(earliest[b]);
            loop {
                sim.catch_up(b, s);
                let s2 = sim.banks[b].free_ns.max(earliest[b]);
                if s2 == s {
                    break;
                }
                s = s2;
            }
            if best.is_none_or(|(bs, _)| s < bs) {
                best = Some((s, b));
            }
        }
        let Some((s, b)) = best else { break };
        // FR-FCFS among requests ready by `s`: priority cores, then row hits, then oldest,
        // then core id.
        let open = sim.banks[b].open;
        let is_prio = |c: usize| opts.priority_cores.iter().any(|p| p.0 as usize == c);
        let (core, (idx, issue)) = pending
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|x| (c, x)))
            .filter(|&(_, (i, issue))| locs[i].flat_bank(geo) as usize == b && issue <= s)
            .min_by(|x, y| {
                let hx = open == Some(locs[x.1 .0].row);
                let hy = open == Some(locs[y.1 .0].row);
                is_prio(y.0)
                    .cmp(&is_prio(x.0))
                    .then(hy.cmp(&hx))
                    .then(x.1 .1.total_cmp(&y.1 .1))
                    .then(x.0.cmp(&y.0))
            })
            .expect("a request is ready at the chosen start");
        let free_before = sim.banks[b].free_ns;
        let hit = open == Some(locs[idx].row);
        let end = sim.serve(b, &trace[idx], &locs[idx], s)?;
        if opts.record {
            sim.m.log.push(ServiceRecord {
                core_id: core as u32,
                bank: b as u32,
                issue_ns: issue,
                start_ns: s,
                end_ns: end,
                bank_free_ns: free_before,
                earliest_pending_ns: earliest[b],
                row_hit: hit,
            });
        }
        sim.m.requests += 1;
        sim.m.priority_requests += is_prio(core) as u64;
        sim.m.per_core_requests[core] += 1;
        sim.m.per_core_finish_ns[core] = end;
        sim.m.finish_ns = sim.m.finish_ns.max(end);
        pending[core] = queues[core].pop_front().map(|i| (i, trace[i].arrival_ns.max(end)));
    }
    let finish = sim.m.finish_ns;
    for b in 0..n_banks {
        sim.catch_up(b, finish);
    }
    let clock = timing.clock_period_ns;
    let mut m = sim.m;
    m.total_cycles = (m.finish_ns / clock).ceil() as u64;
    m.per_core_ipc = m
        .per_core_requests
        .iter()
        .zip(&m.per_core_finish_ns)
        .map(|(&n, &f)| if f > 0.0 { n as f64 / (f / clock) } else { 0.0 })
        .collect();
    Ok(m)
}
