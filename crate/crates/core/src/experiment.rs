//! Experiment runner: per-seed pipelines (characterize, profile, mechanism, simulate) whose
//! results land in CSV files keyed by config hash and seed.
//!
//! CSV schemas, one file per section, all starting with `config_hash,seed`:
//! - `activation.csv`: pattern, trcd_ns, temperature_c, iterations, failing_cells, failing_bitlines
//! - `rowhammer.csv`: pattern, hc, flipped_cells
//! - `solar.csv`: mode, trace, requests, reduced_fraction, reduced_read_fraction,
//!   corrupted_reads, weighted_speedup_pct, safety_accesses, safety_corruptions
//! - `puf.csv`: screened, good, evaluated, min_intra_jaccard, max_inter_jaccard,
//!   auth_accepted, auth_attempts
//! - `rng.csv`: banks, status, rng_cells, bits, entropy, all_pass, throughput_bps
//! - `mitigation.csv`: mechanism, hc_first, status, flips, safety_refreshes, sim_refreshes,
//!   overhead
//! - `combined.csv`: requests, reduced_read_fraction, corrupted_reads, puf_segment,
//!   puf_requests, puf_jaccard, puf_accepted, rng_requests, rng_bits, rng_entropy, finish_ns

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::characterize::{
    bitline_of, build_weak_profile, jaccard, run_activation_failure_test, run_rowhammer_characterization_scoped,
    HammerScope, WeakColumnProfile,
};
use crate::chipsynth::{synthesize_chip, SyntheticChip};
use crate::config::{CombinedExperiment, ExperimentConfig, TraceSpec, WeakProfileSource};
use crate::dlpuf::{self, authenticate, enroll, evaluate_puf_reserved, GoldenKeyStore, PufChallenge};
use crate::drange::{self, generate_bits, identify_rng_cells, randomness_report, shannon_entropy, RngCellMap};
use crate::error::{LabError, Result};
use crate::geometry::{encode_address, DramGeometry, TimingParams};
use crate::pattern::{stream, DataPattern};
use crate::persist::load_profile;
use crate::rhmitigate::{double_sided_attack, evaluate_safety, MitigationKind};
use crate::solar::{simulate_read_safety, SolarConfig, SolarMode};
use crate::tracesim::{
    bandwidth_overhead, gen_first_cacheline_biased, gen_hammer_attack, gen_random, gen_streaming, parse_trace,
    run_trace, weighted_speedup, MemRequest, SimMetrics, SimOptions,
};

const TAG_ACT: u64 = 0x71;
const TAG_RH: u64 = 0x72;
const TAG_SOLAR: u64 = 0x73;
const TAG_PUF: u64 = 0x74;
const TAG_RNG: u64 = 0x75;
const TAG_MIT: u64 = 0x76;
const TAG_COMBINED: u64 = 0x77;
const TAG_PROFILE: u64 = 0x78;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActivationRow {
    pub config_hash: String,
    pub seed: u64,
    pub pattern: String,
    pub trcd_ns: f64,
    pub temperature_c: f64,
    pub iterations: u32,
    pub failing_cells: usize,
    pub failing_bitlines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HammerRow {
    pub config_hash: String,
    pub seed: u64,
    pub pattern: String,
    pub hc: f64,
    pub flipped_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolarRow {
    pub config_hash: String,
    pub seed: u64,
    pub mode: String,
    pub trace: String,
    pub requests: u64,
    pub reduced_fraction: f64,
    pub reduced_read_fraction: f64,
    pub corrupted_reads: u64,
    pub weighted_speedup_pct: f64,
    pub safety_accesses: u64,
    pub safety_corruptions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PufRow {
    pub config_hash: String,
    pub seed: u64,
    pub screened: u64,
    pub good: u64,
    pub evaluated: usize,
    pub min_intra_jaccard: Option<f64>,
    pub max_inter_jaccard: Option<f64>,
    pub auth_accepted: u64,
    pub auth_attempts: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RngRow {
    pub config_hash: String,
    pub seed: u64,
    pub banks: u32,
    pub status: String,
    pub rng_cells: usize,
    pub bits: usize,
    pub entropy: Option<f64>,
    pub all_pass: Option<bool>,
    pub throughput_bps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MitigationRow {
    pub config_hash: String,
    pub seed: u64,
    pub mechanism: String,
    pub hc_first: u64,
    pub status: String,
    pub flips: Option<u64>,
    pub safety_refreshes: Option<u64>,
    pub sim_refreshes: Option<u64>,
    pub overhead: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinedRow {
    pub config_hash: String,
    pub seed: u64,
    pub requests: u64,
    pub reduced_read_fraction: f64,
    pub corrupted_reads: u64,
    pub puf_segment: u64,
    pub puf_requests: u64,
    pub puf_jaccard: f64,
    pub puf_accepted: bool,
    pub rng_requests: u64,
    pub rng_bits: usize,
    pub rng_entropy: f64,
    pub finish_ns: f64,
}

/// All rows of one experiment, in seed order then sweep order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentRows {
    pub activation: Vec<ActivationRow>,
    pub rowhammer: Vec<HammerRow>,
    pub solar: Vec<SolarRow>,
    pub puf: Vec<PufRow>,
    pub rng: Vec<RngRow>,
    pub mitigation: Vec<MitigationRow>,
    pub combined: Vec<CombinedRow>,
}

impl ExperimentRows {
    fn extend(&mut self, o: ExperimentRows) {
        self.activation.extend(o.activation);
        self.rowhammer.extend(o.rowhammer);
        self.solar.extend(o.solar);
        self.puf.extend(o.puf);
        self.rng.extend(o.rng);
        self.mitigation.extend(o.mitigation);
        self.combined.extend(o.combined);
    }
}

/// Size the global worker pool used by every parallel routine outside an experiment.
pub fn init_global_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| LabError::Config(format!("thread pool: {e}")))
}

/// Run every configured section for every seed; `threads` sizes the worker pool.
pub fn run_experiment_rows(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentRows> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let per_seed: Vec<Result<ExperimentRows>> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect();
        let mut all = ExperimentRows::default();
        for r in per_seed {
            all.extend(r?);
        }
        Ok(all)
    })
}

/// Run the experiment and write one CSV per configured section into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, threads: Option<usize>) -> Result<Vec<PathBuf>> {
    let rows = run_experiment_rows(cfg, threads)?;
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, present: bool, write: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        if present {
            let p = out_dir.join(format!("{}_{name}.csv", cfg.name));
            write(&p)?;
            files.push(p);
        }
        Ok(())
    };
    emit("activation", cfg.activation.is_some(), &|p| write_csv(p, &rows.activation))?;
    emit("rowhammer", cfg.rowhammer.is_some(), &|p| write_csv(p, &rows.rowhammer))?;
    emit("solar", cfg.solar.is_some(), &|p| write_csv(p, &rows.solar))?;
    emit("puf", cfg.puf.is_some(), &|p| write_csv(p, &rows.puf))?;
    emit("rng", cfg.rng.is_some(), &|p| write_csv(p, &rows.rng))?;
    emit("mitigation", cfg.mitigation.is_some(), &|p| write_csv(p, &rows.mitigation))?;
    emit("combined", cfg.combined.is_some(), &|p| write_csv(p, &rows.combined))?;
    Ok(files)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::Io(std::io::Error::other(e))
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentRows> {
    let geo = cfg.geometry()?;
    let timing = cfg.timing()?;
    let chip = synthesize_chip(&cfg.profile()?, &geo, seed)?;
    let hash = cfg.config_hash();
    let mut out = ExperimentRows::default();
    if cfg.activation.is_some() {
        out.activation = activation_rows(cfg, &chip, &hash, seed)?;
    }
    if cfg.rowhammer.is_some() {
        out.rowhammer = hammer_rows(cfg, &chip, &timing, &hash, seed)?;
    }
    if cfg.solar.is_some() {
        out.solar = solar_rows(cfg, &chip, &timing, &hash, seed)?;
    }
    if cfg.puf.is_some() {
        out.puf = vec![puf_row(cfg, &chip, &hash, seed)?];
    }
    if cfg.rng.is_some() {
        out.rng = rng_rows(cfg, &chip, &timing, &hash, seed)?;
    }
    if cfg.mitigation.is_some() {
        out.mitigation = mitigation_rows(cfg, &timing, &hash, seed)?;
    }
    if let Some(c) = &cfg.combined {
        out.combined = vec![combined_row(cfg, c, &chip, &timing, &hash, seed)?];
    }
    Ok(out)
}

fn activation_rows(cfg: &ExperimentConfig, chip: &SyntheticChip, hash: &str, seed: u64) -> Result<Vec<ActivationRow>> {
    let a = cfg.activation.as_ref().expect("section present");
    let temps = if a.temperatures_c.is_empty() { vec![cfg.temperature_c] } else { a.temperatures_c.clone() };
    let mut points = Vec::new();
    for &p in &a.patterns {
        for &t in &a.trcd_ns {
            for &temp in &temps {
                points.push((p, t, temp));
            }
        }
    }
    points
        .par_iter()
        .enumerate()
        .map(|(i, &(pattern, trcd, temp))| {
            let mut rng = stream(seed, TAG_ACT, i as u64);
            let bm = run_activation_failure_test(chip, pattern, trcd, temp, a.iterations, &mut rng)?;
            let bitlines: BTreeSet<_> = bm.cells.iter().map(|c| bitline_of(c, &chip.geo)).collect();
            Ok(ActivationRow {
                config_hash: hash.into(),
                seed,
                pattern: pattern.to_string(),
                trcd_ns: trcd,
                temperature_c: temp,
                iterations: a.iterations,
                failing_cells: bm.len(),
                failing_bitlines: bitlines.len(),
            })
        })
        .collect()
}

fn hammer_rows(
    cfg: &ExperimentConfig,
    chip: &SyntheticChip,
    timing: &TimingParams,
    hash: &str,
    seed: u64,
) -> Result<Vec<HammerRow>> {
    let h = cfg.rowhammer.as_ref().expect("section present");
    let scope = HammerScope { banks: h.banks.clone(), rows: h.rows.map(|(a, b)| a..b), iterations: 1 };
    let mut rng = stream(seed, TAG_RH, 0);
    let results = run_rowhammer_characterization_scoped(chip, timing, &h.patterns, &h.hc, &scope, &mut rng)?;
    Ok(results
        .iter()
        .map(|r| HammerRow {
            config_hash: hash.into(),
            seed,
            pattern: r.pattern.to_string(),
            hc: r.hc,
            flipped_cells: r.counts.len(),
        })
        .collect())
}

/// Build a synthetic trace or read a trace file.
pub fn build_trace(spec: &TraceSpec, geo: &DramGeometry, seed: u64) -> Result<Vec<MemRequest>> {
    Ok(match spec {
        TraceSpec::Streaming { cores, requests_per_core, gap_ns } => {
            gen_streaming(geo, *cores, *requests_per_core, *gap_ns, seed)
        }
        TraceSpec::Random { cores, requests_per_core, gap_ns } => gen_random(geo, *cores, *requests_per_core, *gap_ns, seed),
        TraceSpec::FirstCachelineBiased { cores, requests_per_core, gap_ns, p_first_zero } => {
            gen_first_cacheline_biased(geo, *cores, *requests_per_core, *gap_ns, *p_first_zero, seed)
        }
        TraceSpec::File { path } => parse_trace(&std::fs::read_to_string(path)?)?,
    })
}

/// Weak-column profile from a file or the configured source.
pub fn weak_profile_for(
    chip: &SyntheticChip,
    source: WeakProfileSource,
    file: Option<&Path>,
    seed: u64,
) -> Result<WeakColumnProfile> {
    if let Some(path) = file {
        return Ok(load_profile(path, &chip.geo)?.weak_columns()?.clone());
    }
    Ok(match source {
        WeakProfileSource::GroundTruth => WeakColumnProfile::ground_truth(chip),
        WeakProfileSource::Empty => WeakColumnProfile::for_geometry(&chip.geo),
        WeakProfileSource::Build => {
            let mut rng = stream(seed, TAG_PROFILE, 0);
            build_weak_profile(chip, &DataPattern::ALL, &[crate::chipsynth::REFERENCE_TEMP_C], &mut rng)?.profile
        }
    })
}

/// Weighted speedup over cores that issued requests, normalized to 100%.
pub fn speedup_pct(run: &SimMetrics, baseline: &SimMetrics) -> Result<f64> {
    let idx: Vec<usize> = (0..baseline.per_core_requests.len()).filter(|&c| baseline.per_core_requests[c] > 0).collect();
    let a: Vec<f64> = idx.iter().map(|&c| run.per_core_ipc[c]).collect();
    let b: Vec<f64> = idx.iter().map(|&c| baseline.per_core_ipc[c]).collect();
    Ok(weighted_speedup(&a, &b)?.1)
}

fn solar_rows(
    cfg: &ExperimentConfig,
    chip: &SyntheticChip,
    timing: &TimingParams,
    hash: &str,
    seed: u64,
) -> Result<Vec<SolarRow>> {
    let s = cfg.solar.as_ref().expect("section present");
    let profile = weak_profile_for(chip, s.weak_profile, s.profile_file.as_deref(), seed)?;
    let geo = &chip.geo;
    let mut rows = Vec::new();
    let configs: Vec<(SolarMode, SolarConfig)> = s
        .modes
        .iter()
        .map(|&m| SolarConfig::new(geo, profile.clone(), m).map(|c| (m, c)))
        .collect::<Result<_>>()?;
    let safety: Vec<(u64, u64)> = configs
        .par_iter()
        .enumerate()
        .map(|(i, (_, c))| {
            if s.safety_accesses == 0 {
                return Ok((0, 0));
            }
            let mut rng = stream(seed, TAG_SOLAR, 1000 + i as u64);
            let r = simulate_read_safety(chip, c, timing, s.safety_accesses, cfg.temperature_c, &mut rng)?;
            Ok((r.accesses, r.corruptions))
        })
        .collect::<Result<_>>()?;
    for (ti, spec) in s.traces.iter().enumerate() {
        let trace = build_trace(spec, geo, seed ^ ((ti as u64) << 32))?;
        let base_opts = SimOptions { seed, temperature_c: cfg.temperature_c, ..Default::default() };
        let baseline = run_trace(&trace, geo, timing, &base_opts)?;
        let runs: Vec<SimMetrics> = configs
            .par_iter()
            .map(|(_, c)| {
                let opts = SimOptions { solar: Some(c), chip: Some(chip), ..base_opts };
                run_trace(&trace, geo, timing, &opts)
            })
            .collect::<Result<_>>()?;
        for (((mode, _), m), (acc, bad)) in configs.iter().zip(&runs).zip(&safety) {
            rows.push(SolarRow {
                config_hash: hash.into(),
                seed,
                mode: mode.to_string(),
                trace: spec.label(),
                requests: m.requests,
                reduced_fraction: m.reduced_trcd_fraction(),
                reduced_read_fraction: m.reduced_read_fraction(),
                corrupted_reads: m.corrupted_reads,
                weighted_speedup_pct: speedup_pct(m, &baseline)?,
                safety_accesses: *acc,
                safety_corruptions: *bad,
            });
        }
    }
    Ok(rows)
}

fn puf_row(cfg: &ExperimentConfig, chip: &SyntheticChip, hash: &str, seed: u64) -> Result<PufRow> {
    let p = cfg.puf.as_ref().expect("section present");
    let total = dlpuf::segment_count(&chip.geo, dlpuf::DEFAULT_SEGMENT_BYTES);
    let screened = p.segments.unwrap_or(total).min(total);
    let good_flags: Vec<bool> =
        (0..screened).into_par_iter().map(|s| dlpuf::segment_good(chip, s)).collect::<Result<_>>()?;
    let good: Vec<u64> = (0..screened).filter(|&s| good_flags[s as usize]).collect();
    let chosen: Vec<u64> = good.iter().take(p.max_good_segments).copied().collect();
    let temps = if p.temperatures_c.is_empty() { vec![cfg.temperature_c] } else { p.temperatures_c.clone() };
    let device = format!("chip-{seed}");
    let mut store = GoldenKeyStore::default();
    let mut rng = stream(seed, TAG_PUF, u64::MAX);
    enroll(chip, &device, &chosen, &temps, &mut store, &mut rng)?;
    let per_seg: Vec<(f64, BTreeSet<u32>, u64)> = chosen
        .par_iter()
        .map(|&seg| {
            let mut rng = stream(seed, TAG_PUF, seg);
            let mut first: Option<BTreeSet<u32>> = None;
            let mut min_intra = 1.0f64;
            let mut accepted = 0u64;
            for e in 0..p.evaluations {
                let ch = PufChallenge::reference(seg).at_temperature(temps[e as usize % temps.len()]);
                let r = dlpuf::evaluate_puf(chip, &ch, &mut rng)?;
                accepted += authenticate(&device, &r, &store).accepted() as u64;
                match &first {
                    None => first = Some(r.bits),
                    Some(f) => min_intra = min_intra.min(jaccard(f, &r.bits)),
                }
            }
            Ok((min_intra, first.unwrap_or_default(), accepted))
        })
        .collect::<Result<_>>()?;
    let mut max_inter: Option<f64> = None;
    for i in 0..per_seg.len() {
        for j in i + 1..per_seg.len() {
            let v = jaccard(&per_seg[i].1, &per_seg[j].1);
            max_inter = Some(max_inter.map_or(v, |m| m.max(v)));
        }
    }
    let min_intra = if p.evaluations > 1 { per_seg.iter().map(|x| x.0).reduce(f64::min) } else { None };
    Ok(PufRow {
        config_hash: hash.into(),
        seed,
        screened,
        good: good.len() as u64,
        evaluated: chosen.len(),
        min_intra_jaccard: min_intra,
        max_inter_jaccard: max_inter,
        auth_accepted: per_seg.iter().map(|x| x.2).sum(),
        auth_attempts: chosen.len() as u64 * p.evaluations as u64,
    })
}

fn rng_rows(
    cfg: &ExperimentConfig,
    chip: &SyntheticChip,
    timing: &TimingParams,
    hash: &str,
    seed: u64,
) -> Result<Vec<RngRow>> {
    let r = cfg.rng.as_ref().expect("section present");
    let mut rng = stream(seed, TAG_RNG, 0);
    let map = identify_rng_cells(chip, r.reads.unwrap_or(drange::DEFAULT_READS), cfg.temperature_c, &mut rng)?;
    r.banks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let mut row = RngRow {
                config_hash: hash.into(),
                seed,
                banks: k,
                status: "ok".into(),
                rng_cells: 0,
                bits: 0,
                entropy: None,
                all_pass: None,
                throughput_bps: None,
            };
            if k as usize > map.selected.len() {
                row.status = "insufficient_banks".into();
                return Ok(row);
            }
            let sub = map.first_banks(k as usize);
            row.rng_cells = sub.selected.values().flatten().map(|w| w.bits.len()).sum();
            row.throughput_bps = Some(drange::throughput_estimate(&sub, k as usize, drange::loop_runtime_ns(timing.t_rc_ns))?);
            let mut g = stream(seed, TAG_RNG, 1 + i as u64);
            let bs = generate_bits(chip, &sub, r.bits, &mut g)?;
            row.bits = bs.len();
            if bs.len() >= 100 {
                let rep = randomness_report(&bs.bits)?;
                row.entropy = Some(rep.entropy);
                row.all_pass = Some(rep.all_pass());
            }
            Ok(row)
        })
        .collect()
}

fn mitigation_rows(cfg: &ExperimentConfig, timing: &TimingParams, hash: &str, seed: u64) -> Result<Vec<MitigationRow>> {
    let m = cfg.mitigation.as_ref().expect("section present");
    let geo = cfg.geometry()?;
    let base_profile = cfg.profile()?;
    // One chip, attack and trace per hc_first point, shared by all mechanisms.
    let points: Vec<(u64, SyntheticChip, Vec<crate::rhmitigate::Activation>, Vec<MemRequest>)> = m
        .hc_first
        .par_iter()
        .map(|&hc| {
            let mut prof = base_profile.clone();
            prof.hammer.hc_first_min = hc as f64;
            let chip = synthesize_chip(&prof, &geo, seed)?;
            let (bank, victim) =
                chip.weakest_hammer_row().ok_or_else(|| LabError::Config("chip has no RowHammer-vulnerable cells".into()))?;
            let scheme = prof.hammer.remap;
            let mut rng = stream(seed, TAG_MIT, hc);
            let acts = double_sided_attack(
                bank,
                victim,
                scheme,
                geo.rows_per_bank,
                timing,
                m.attack_ms * 1e6,
                m.background_every,
                &mut rng,
            )?;
            let trace = gen_hammer_attack(
                &geo,
                scheme,
                bank,
                victim,
                m.sim_attack_requests,
                m.sim_background_cores,
                m.sim_background_requests,
                m.sim_background_gap_ns,
                seed,
            )?;
            Ok((hc, chip, acts, trace))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, MitigationKind)> =
        (0..points.len()).flat_map(|i| m.mechanisms.iter().map(move |&k| (i, k))).collect();
    jobs.par_iter()
        .map(|&(i, kind)| {
            let (hc, chip, acts, trace) = &points[i];
            let mc = m.mitigation_config(kind, *hc);
            let mut row = MitigationRow {
                config_hash: hash.into(),
                seed,
                mechanism: kind.to_string(),
                hc_first: *hc,
                status: "ok".into(),
                flips: None,
                safety_refreshes: None,
                sim_refreshes: None,
                overhead: None,
            };
            let mut rng = stream(seed, TAG_MIT, (*hc << 8) | kind as u64);
            match evaluate_safety(chip, &mc, timing, acts, &mut rng) {
                Ok(o) => {
                    row.flips = Some(o.flips);
                    row.safety_refreshes = Some(o.mitigation_refreshes);
                }
                Err(LabError::Unsupported(_)) => {
                    row.status = "unsupported".into();
                    return Ok(row);
                }
                Err(e) => return Err(e),
            }
            let opts = SimOptions { mitigation: Some(&mc), chip: Some(chip), seed, ..Default::default() };
            let sim = run_trace(trace, &chip.geo, timing, &opts)?;
            row.sim_refreshes = Some(sim.mitigation_refreshes);
            row.overhead = Some(bandwidth_overhead(&sim));
            Ok(row)
        })
        .collect()
}

/// Profiles for combined mode: loaded from a file (all three required) or built in-process.
fn combined_profiles(
    c: &CombinedExperiment,
    chip: &SyntheticChip,
    device: &str,
    temperature_c: f64,
    seed: u64,
) -> Result<(WeakColumnProfile, RngCellMap, GoldenKeyStore)> {
    if let Some(path) = &c.profile_file {
        let pf = load_profile(path, &chip.geo)?;
        return Ok((pf.weak_columns()?.clone(), pf.rng_cells()?.clone(), pf.golden_keys()?.clone()));
    }
    let weak = weak_profile_for(chip, c.weak_profile, None, seed)?;
    let mut rng = stream(seed, TAG_COMBINED, 0);
    let map = identify_rng_cells(chip, drange::DEFAULT_READS, temperature_c, &mut rng)?;
    let reserved = rng_rows_reserved(&map);
    let seg = first_free_good_segment(chip, &reserved)?;
    let mut store = GoldenKeyStore::default();
    enroll(chip, device, &[seg], &[temperature_c], &mut store, &mut rng)?;
    Ok((weak, map, store))
}

fn rng_rows_reserved(map: &RngCellMap) -> BTreeSet<(u32, u32)> {
    map.selected.values().flatten().map(|w| (w.bank, w.row)).collect()
}

fn first_free_good_segment(chip: &SyntheticChip, reserved: &BTreeSet<(u32, u32)>) -> Result<u64> {
    let n = dlpuf::segment_count(&chip.geo, dlpuf::DEFAULT_SEGMENT_BYTES);
    for s in 0..n {
        let span = dlpuf::segment_span(&chip.geo, s, dlpuf::DEFAULT_SEGMENT_BYTES)?;
        if span.rows.clone().any(|r| reserved.contains(&(span.bank, r))) {
            continue;
        }
        if dlpuf::segment_good(chip, s)? {
            return Ok(s);
        }
    }
    Err(LabError::Unavailable("no good PUF segment outside the RNG rows".into()))
}

fn combined_row(
    cfg: &ExperimentConfig,
    c: &CombinedExperiment,
    chip: &SyntheticChip,
    timing: &TimingParams,
    hash: &str,
    seed: u64,
) -> Result<CombinedRow> {
    let geo = &chip.geo;
    let device = format!("chip-{seed}");
    let (weak, map, store) = combined_profiles(c, chip, &device, cfg.temperature_c, seed)?;
    let reserved = rng_rows_reserved(&map);
    let seg = store
        .keys
        .keys()
        .find(|(d, _, _)| *d == device)
        .map(|(_, s, _)| *s)
        .ok_or_else(|| LabError::MissingProfile { what: format!("golden key for {device}"), subcommand: "puf enroll".into() })?;
    let solar = SolarConfig::new(geo, weak, SolarMode::Solar)?;

    let mut trace = build_trace(&c.trace, geo, seed)?;
    let regular_cores = trace.iter().map(|r| r.core_id + 1).max().unwrap_or(0);
    let (puf_core, rng_core) = (regular_cores, regular_cores + 1);
    let challenge = PufChallenge::reference(seg).at_temperature(cfg.temperature_c);
    let span = dlpuf::segment_span(geo, seg, challenge.segment_bytes)?;
    let mut puf_requests = 0u64;
    for _ in 0..c.puf_evaluations {
        for row in span.rows.clone() {
            for cl in span.cachelines.clone() {
                let loc = geo.location(span.bank, row, cl);
                trace.push(MemRequest { arrival_ns: 0.0, address: encode_address(&loc, geo), is_write: false, core_id: puf_core });
                puf_requests += 1;
            }
        }
    }
    let bits_per_act: usize = map.selected.values().flatten().map(|w| w.bits.len()).sum::<usize>().max(1);
    let words: Vec<_> = map.selected.values().flatten().collect();
    let rng_requests = if words.is_empty() { 0 } else { c.rng_bits.div_ceil(bits_per_act) * words.len() };
    for i in 0..rng_requests {
        let w = words[i % words.len()];
        let loc = geo.location(w.bank, w.row, (w.word * geo.word_bits / 8) / geo.cacheline_bytes);
        trace.push(MemRequest { arrival_ns: 0.0, address: encode_address(&loc, geo), is_write: false, core_id: rng_core });
    }
    trace.sort_by(|a, b| a.arrival_ns.total_cmp(&b.arrival_ns).then(a.core_id.cmp(&b.core_id)));
    let priority = [(puf_core, challenge.trcd_ns), (rng_core, map.trcd_ns)];
    let opts = SimOptions {
        solar: Some(&solar),
        chip: Some(chip),
        seed,
        temperature_c: cfg.temperature_c,
        priority_cores: &priority,
        ..Default::default()
    };
    let m = run_trace(&trace, geo, timing, &opts)?;

    let mut rng = stream(seed, TAG_COMBINED, 1);
    let resp = evaluate_puf_reserved(chip, &challenge, &reserved, &mut rng)?;
    let outcome = authenticate(&device, &resp, &store);
    let jac = match outcome {
        dlpuf::AuthOutcome::Accept { jaccard } | dlpuf::AuthOutcome::Reject { jaccard } => jaccard,
        dlpuf::AuthOutcome::UnknownSegment => 0.0,
    };
    let bits = if c.rng_bits > 0 { generate_bits(chip, &map, c.rng_bits, &mut rng)?.bits } else { Vec::new() };
    Ok(CombinedRow {
        config_hash: hash.into(),
        seed,
        requests: m.requests - m.priority_requests,
        reduced_read_fraction: m.reduced_read_fraction(),
        corrupted_reads: m.corrupted_reads,
        puf_segment: seg,
        puf_requests,
        puf_jaccard: jac,
        puf_accepted: outcome.accepted(),
        rng_requests: rng_requests as u64,
        rng_bits: bits.len(),
        rng_entropy: shannon_entropy(&bits),
        finish_ns: m.finish_ns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{"geometry":"lpddr4","manufacturer":"A","type_node":"lpddr4-1y","seeds":[1,2]{extra}}}"#
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    fn c0() -> ExperimentConfig {
        cfg("")
    }

    #[test]
    fn seeds_give_row_groups_and_repeat_exactly() {
        let c = cfg(r#","rowhammer":{"hc":[50000,150000],"banks":[0],"rows":[100,140]}"#);
        let a = run_experiment_rows(&c, Some(2)).unwrap();
        let b = run_experiment_rows(&c, Some(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rowhammer.len(), 4);
        assert_eq!(a.rowhammer.iter().filter(|r| r.seed == 1).count(), 2);
    }

    #[test]
    fn combined_missing_profile_names_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let geo = c0().geometry().unwrap();
        let mut pf = crate::persist::ProfileFile::new(&geo, 1);
        pf.weak_columns = Some(WeakColumnProfile::for_geometry(&geo));
        let path = dir.path().join("p.json");
        crate::persist::save_profile(&path, &pf).unwrap();
        let c = cfg(&format!(
            r#","combined":{{"profile_file":{:?},"trace":{{"kind":"random","cores":1,"requests_per_core":10,"gap_ns":5}},"puf_evaluations":1,"rng_bits":0}}"#,
            path
        ));
        let err = run_experiment_rows(&c, Some(1)).unwrap_err().to_string();
        assert!(err.contains("dramlab profile build"), "{err}");
    }
}
