use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dramlab::characterize::{
    build_weak_profile, extract_hc_profile, run_activation_failure_test, run_rowhammer_characterization_scoped,
    HammerScope, WeakColumnProfile,
};
use dramlab::chipsynth::{synthesize_chip, Manufacturer, ManufacturerProfile, SyntheticChip, TypeNode, REFERENCE_TEMP_C};
use dramlab::config::{ExperimentConfig, TraceSpec};
use dramlab::dlpuf::{authenticate, enroll, evaluate_puf, AuthOutcome, GoldenKeyStore, PufChallenge};
use dramlab::drange::{generate_bits, identify_rng_cells_in, randomness_report, Bitstream, DEFAULT_READS};
use dramlab::experiment::{build_trace, run_experiment, speedup_pct};
use dramlab::pattern::stream;
use dramlab::persist::{load_profile, save_profile, ProfileFile};
use dramlab::rhmitigate::{double_sided_attack, evaluate_safety, MitigationConfig, MitigationKind, MrlocParams, ProhitParams};
use dramlab::solar::{SolarConfig, SolarMode};
use dramlab::tracesim::{bandwidth_overhead, run_trace, SimOptions};
use dramlab::{DataPattern, DramGeometry, LabError, TimingParams};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_UNSUPPORTED: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "dramlab", version, about = "DRAM timing-margin lab")]
struct Cli {
    /// Master seed for chips and simulations.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (all cores when omitted).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthetic chip generation.
    #[command(subcommand)]
    Chip(ChipCmd),
    /// Characterization tests.
    #[command(subcommand)]
    Char(CharCmd),
    /// Profile building.
    #[command(subcommand)]
    Profile(ProfileCmd),
    /// Solar-DRAM simulation.
    #[command(subcommand)]
    Solar(SolarCmd),
    /// Latency PUF.
    #[command(subcommand)]
    Puf(PufCmd),
    /// Latency TRNG.
    #[command(subcommand)]
    Rng(RngCmd),
    /// RowHammer mitigation.
    #[command(subcommand)]
    Rh(RhCmd),
    /// Combined mode.
    #[command(subcommand)]
    Combined(CombinedCmd),
    /// Run an experiment config and write its CSV reports.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config and $DRAMLAB_OUT.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ChipCmd {
    Synth {
        #[arg(long, default_value = "A")]
        manufacturer: Manufacturer,
        #[arg(long, default_value = "ddr4-new")]
        type_node: TypeNode,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ChipArg {
    /// Chip file from `chip synth`.
    #[arg(long)]
    chip: PathBuf,
}

#[derive(Subcommand)]
enum CharCmd {
    /// Activation-failure test at a reduced tRCD.
    Act {
        #[command(flatten)]
        chip: ChipArg,
        #[arg(long)]
        trcd: f64,
        #[arg(long, default_value_t = REFERENCE_TEMP_C)]
        temperature: f64,
        #[arg(long, default_value = "Random")]
        pattern: DataPattern,
        #[arg(long, default_value_t = 1)]
        iterations: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Double-sided RowHammer sweep.
    Rh {
        #[command(flatten)]
        chip: ChipArg,
        #[arg(long, value_delimiter = ',', required = true)]
        hc: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "Random")]
        patterns: Vec<DataPattern>,
        #[arg(long, value_delimiter = ',')]
        banks: Vec<u32>,
        /// Victim rows as `start..end`.
        #[arg(long, value_parser = parse_range)]
        rows: Option<(u32, u32)>,
        /// Store the extracted HC profile into this profile file.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ProfileCmd {
    /// Weak-column profile, optionally with an RNG cell map.
    Build {
        #[command(flatten)]
        chip: ChipArg,
        #[arg(long)]
        out: PathBuf,
        /// Use the chip's true weak columns instead of measuring.
        #[arg(long)]
        ground_truth: bool,
        /// Also identify RNG cells.
        #[arg(long)]
        rng: bool,
        #[arg(long, default_value_t = REFERENCE_TEMP_C)]
        temperature: f64,
    },
}

#[derive(Subcommand)]
enum SolarCmd {
    Sim {
        #[command(flatten)]
        chip: ChipArg,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value = "solar")]
        mode: SolarMode,
        #[command(flatten)]
        trace: TraceArgs,
    },
}

#[derive(Args)]
struct TraceArgs {
    /// Trace file (`arrival_ns core_id R|W hex_address` per line).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Synthetic trace kind when no file is given: streaming, random, first-cacheline-biased.
    #[arg(long, default_value = "random")]
    synthetic: String,
    #[arg(long, default_value_t = 4)]
    cores: u32,
    #[arg(long, default_value_t = 2000)]
    requests: usize,
    #[arg(long, default_value_t = 20.0)]
    gap_ns: f64,
}

impl TraceArgs {
    fn spec(&self) -> Result<TraceSpec, LabError> {
        if let Some(p) = &self.trace {
            return Ok(TraceSpec::File { path: p.clone() });
        }
        let (cores, requests_per_core, gap_ns) = (self.cores, self.requests, self.gap_ns);
        Ok(match self.synthetic.as_str() {
            "streaming" => TraceSpec::Streaming { cores, requests_per_core, gap_ns },
            "random" => TraceSpec::Random { cores, requests_per_core, gap_ns },
            "first-cacheline-biased" => {
                TraceSpec::FirstCachelineBiased { cores, requests_per_core, gap_ns, p_first_zero: 0.222 }
            }
            other => return Err(LabError::Config(format!("unknown synthetic trace '{other}'"))),
        })
    }
}

#[derive(Subcommand)]
enum PufCmd {
    Enroll {
        #[command(flatten)]
        chip: ChipArg,
        #[arg(long)]
        device: String,
        #[arg(long, value_delimiter = ',', required = true)]
        segments: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "55")]
        temperatures: Vec<f64>,
        /// Key file; created or updated.
        #[arg(long)]
        keys: PathBuf,
    },
    Auth {
        #[command(flatten)]
        chip: ChipArg,
        #[arg(long)]
        device: String,
        #[arg(long)]
        segment: u64,
        #[arg(long, default_value_t = REFERENCE_TEMP_C)]
        temperature: f64,
        #[arg(long)]
        keys: PathBuf,
    },
}

#[derive(Subcommand)]
enum RngCmd {
    /// Generate bits and export them bit-packed, least significant bit first.
    Gen {
        #[command(flatten)]
        chip: ChipArg,
        #[arg(long)]
        bits: usize,
        #[arg(long, default_value_t = 8)]
        banks: u32,
        /// Profile with an RNG cell map; cells are identified on the fly otherwise.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the randomness tests on a packed stream.
    Test {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        bits: Option<usize>,
    },
}

#[derive(Subcommand)]
enum RhCmd {
    Mitigate {
        #[command(flatten)]
        chip: ChipArg,
        #[arg(long)]
        mechanism: MitigationKind,
        #[arg(long)]
        hc_first: u64,
        #[arg(long)]
        para_p: Option<f64>,
        /// ProHIT parameters as `hot,cold,p_insert,p_evict,p_top`.
        #[arg(long)]
        prohit: Option<String>,
        /// MRLoc parameters as `queue_len,p_min,p_max`.
        #[arg(long)]
        mrloc: Option<String>,
        #[arg(long, default_value_t = 64.0)]
        attack_ms: f64,
        #[arg(long)]
        background_every: Option<u32>,
    },
}

#[derive(Subcommand)]
enum CombinedCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once("..").ok_or("expected start..end")?;
    let a: u32 = a.parse().map_err(|_| "bad range start")?;
    let b: u32 = b.parse().map_err(|_| "bad range end")?;
    if a >= b {
        return Err("empty range".into());
    }
    Ok((a, b))
}

fn exit_code(e: &LabError) -> u8 {
    match e {
        LabError::Config(_)
        | LabError::Parse { .. }
        | LabError::Argument(_)
        | LabError::Bounds(_)
        | LabError::Range(_)
        | LabError::Edge(_)
        | LabError::MissingProfile { .. }
        | LabError::VersionMismatch { .. }
        | LabError::GeometryMismatch { .. } => EXIT_CONFIG,
        LabError::Unsupported(_) => EXIT_UNSUPPORTED,
        LabError::Io(_) | LabError::Corrupt(_) => EXIT_IO,
        LabError::Unavailable(_) | LabError::NotRowHammerable => EXIT_OTHER,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn print(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
}

fn load_chip(p: &Path) -> Result<SyntheticChip, LabError> {
    SyntheticChip::from_json(&std::fs::read_to_string(p)?)
}

fn timing_for(chip: &SyntheticChip) -> Result<TimingParams, LabError> {
    TimingParams::preset(chip.profile.type_node.family())
}

/// Existing profile file for this chip, or a fresh one.
fn open_profile(path: &Path, chip: &SyntheticChip) -> Result<ProfileFile, LabError> {
    if path.exists() {
        load_profile(path, &chip.geo)
    } else {
        Ok(ProfileFile::new(&chip.geo, chip.seed))
    }
}

fn run(cli: &Cli) -> Result<(), LabError> {
    if let Some(n) = cli.threads {
        dramlab::experiment::init_global_threads(n)?;
    }
    let seed = cli.seed;
    match &cli.cmd {
        Cmd::Chip(ChipCmd::Synth { manufacturer, type_node, out }) => {
            let profile = ManufacturerProfile::preset(*manufacturer, *type_node)?;
            let geo = profile.default_geometry();
            let chip = synthesize_chip(&profile, &geo, seed)?;
            std::fs::write(out, chip.to_json())?;
            print(json!({
                "chip": out, "manufacturer": manufacturer.to_string(), "type_node": type_node.name(),
                "seed": seed, "banks": geo.total_banks(), "rows_per_bank": geo.rows_per_bank,
                "weak_columns": chip.ground_truth_weak_columns().count(),
            }));
        }
        Cmd::Char(CharCmd::Act { chip, trcd, temperature, pattern, iterations, out }) => {
            let chip = load_chip(&chip.chip)?;
            let mut rng = stream(seed, 0x91, 0);
            let bm = run_activation_failure_test(&chip, *pattern, *trcd, *temperature, *iterations, &mut rng)?;
            if let Some(o) = out {
                std::fs::write(o, serde_json::to_string(&bm).expect("bitmap serializes"))?;
            }
            print(json!({"failing_cells": bm.len(), "trcd_ns": trcd, "temperature_c": temperature, "pattern": pattern.to_string()}));
        }
        Cmd::Char(CharCmd::Rh { chip, hc, patterns, banks, rows, profile }) => {
            let chip = load_chip(&chip.chip)?;
            let timing = timing_for(&chip)?;
            let scope = HammerScope { banks: banks.clone(), rows: rows.map(|(a, b)| a..b), iterations: 1 };
            let mut rng = stream(seed, 0x92, 0);
            let results = run_rowhammer_characterization_scoped(&chip, &timing, patterns, hc, &scope, &mut rng)?;
            let points: Vec<_> = results
                .iter()
                .map(|r| json!({"pattern": r.pattern.to_string(), "hc": r.hc, "flipped_cells": r.counts.len()}))
                .collect();
            let hcp = extract_hc_profile(&results);
            if let Some(path) = profile {
                let mut pf = open_profile(path, &chip)?;
                let Ok(p) = &hcp else { return Err(LabError::NotRowHammerable) };
                pf.hc_profile = Some(p.clone());
                save_profile(path, &pf)?;
            }
            let summary = match &hcp {
                Ok(p) => json!({"hc_first": p.hc_first, "hc_second": p.hc_second, "hc_third": p.hc_third}),
                Err(e) => json!({"status": e.to_string()}),
            };
            print(json!({"points": points, "profile": summary}));
        }
        Cmd::Profile(ProfileCmd::Build { chip, out, ground_truth, rng, temperature }) => {
            let chip = load_chip(&chip.chip)?;
            let mut pf = open_profile(out, &chip)?;
            let mut r = stream(seed, 0x93, 0);
            let (weak, iterations) = if *ground_truth {
                (WeakColumnProfile::ground_truth(&chip), 0)
            } else {
                let b = build_weak_profile(&chip, &DataPattern::ALL, &[*temperature], &mut r)?;
                (b.profile, b.iterations_used)
            };
            let weak_count = weak.count_weak();
            pf.weak_columns = Some(weak);
            if *rng {
                let banks: Vec<u32> = (0..chip.geo.total_banks()).collect();
                pf.rng_cells = Some(identify_rng_cells_in(&chip, &banks, DEFAULT_READS, *temperature, &mut r)?);
            }
            save_profile(out, &pf)?;
            print(json!({
                "profile": out, "weak_columns": weak_count, "iterations": iterations,
                "rng_cells": pf.rng_cells.as_ref().map(|m| m.cells.len()),
            }));
        }
        Cmd::Solar(SolarCmd::Sim { chip, profile, mode, trace }) => {
            let chip = load_chip(&chip.chip)?;
            let timing = timing_for(&chip)?;
            let weak = load_profile(profile, &chip.geo)?.weak_columns()?.clone();
            let cfg = SolarConfig::new(&chip.geo, weak, *mode)?;
            let reqs = build_trace(&trace.spec()?, &chip.geo, seed)?;
            let base_opts = SimOptions { seed, ..Default::default() };
            let base = run_trace(&reqs, &chip.geo, &timing, &base_opts)?;
            let m = run_trace(&reqs, &chip.geo, &timing, &SimOptions { solar: Some(&cfg), chip: Some(&chip), ..base_opts })?;
            print(json!({
                "mode": mode.to_string(), "requests": m.requests, "total_cycles": m.total_cycles,
                "baseline_cycles": base.total_cycles, "reduced_fraction": m.reduced_trcd_fraction(),
                "corrupted_reads": m.corrupted_reads, "weighted_speedup_pct": speedup_pct(&m, &base)?,
            }));
        }
        Cmd::Puf(PufCmd::Enroll { chip, device, segments, temperatures, keys }) => {
            let chip = load_chip(&chip.chip)?;
            let mut pf = open_profile(keys, &chip)?;
            let mut store = pf.golden_keys.take().unwrap_or_default();
            let mut rng = stream(seed, 0x94, 0);
            enroll(&chip, device, segments, temperatures, &mut store, &mut rng)?;
            let n = store.keys.len();
            pf.golden_keys = Some(store);
            save_profile(keys, &pf)?;
            print(json!({"keys": keys, "enrolled": n}));
        }
        Cmd::Puf(PufCmd::Auth { chip, device, segment, temperature, keys }) => {
            let chip = load_chip(&chip.chip)?;
            let store: GoldenKeyStore = load_profile(keys, &chip.geo)?.golden_keys()?.clone();
            let mut rng = stream(seed, 0x95, *segment);
            let resp = evaluate_puf(&chip, &PufChallenge::reference(*segment).at_temperature(*temperature), &mut rng)?;
            let (outcome, jac) = match authenticate(device, &resp, &store) {
                AuthOutcome::Accept { jaccard } => ("accept", Some(jaccard)),
                AuthOutcome::Reject { jaccard } => ("reject", Some(jaccard)),
                AuthOutcome::UnknownSegment => ("unknown_segment", None),
            };
            print(json!({"outcome": outcome, "jaccard": jac}));
        }
        Cmd::Rng(RngCmd::Gen { chip, bits, banks, profile, out }) => {
            let chip = load_chip(&chip.chip)?;
            let mut rng = stream(seed, 0x96, 0);
            let map = match profile {
                Some(p) => load_profile(p, &chip.geo)?.rng_cells()?.clone(),
                None => {
                    let list: Vec<u32> = (0..chip.geo.total_banks()).collect();
                    identify_rng_cells_in(&chip, &list, DEFAULT_READS, REFERENCE_TEMP_C, &mut rng)?
                }
            };
            if *banks as usize > map.selected.len() {
                return Err(LabError::Unavailable(format!(
                    "{banks} banks requested, RNG cells found in {}",
                    map.selected.len()
                )));
            }
            let sub = map.first_banks(*banks as usize);
            let bs = generate_bits(&chip, &sub, *bits, &mut rng)?;
            std::fs::write(out, bs.to_packed_le())?;
            print(json!({"out": out, "bits": bs.len(), "rng_cells": bs.cells.len()}));
        }
        Cmd::Rng(RngCmd::Test { input, bits }) => {
            let bytes = std::fs::read(input)?;
            let n = bits.unwrap_or(bytes.len() * 8);
            let unpacked = Bitstream::from_packed_le(&bytes, n)?;
            let rep = randomness_report(&unpacked)?;
            print(json!({"all_pass": rep.all_pass(), "report": rep}));
        }
        Cmd::Rh(RhCmd::Mitigate { chip, mechanism, hc_first, para_p, prohit, mrloc, attack_ms, background_every }) => {
            let chip = load_chip(&chip.chip)?;
            let timing = timing_for(&chip)?;
            let mut cfg = MitigationConfig::new(*mechanism, *hc_first);
            cfg.para_p = *para_p;
            cfg.prohit = prohit.as_deref().map(parse_prohit).transpose()?;
            cfg.mrloc = mrloc.as_deref().map(parse_mrloc).transpose()?;
            let (bank, victim) = chip
                .weakest_hammer_row()
                .ok_or_else(|| LabError::Unavailable("chip has no RowHammer-vulnerable cells".into()))?;
            let mut rng = stream(seed, 0x97, 0);
            let acts = double_sided_attack(
                bank,
                victim,
                chip.profile.hammer.remap,
                chip.geo.rows_per_bank,
                &timing,
                attack_ms * 1e6,
                *background_every,
                &mut rng,
            )?;
            let out = evaluate_safety(&chip, &cfg, &timing, &acts, &mut rng)?;
            let geo: &DramGeometry = &chip.geo;
            let trace: Vec<_> = acts
                .iter()
                .filter(|a| a.time_ns < 2e6)
                .map(|a| dramlab::MemRequest {
                    arrival_ns: a.time_ns,
                    address: dramlab::encode_address(&geo.location(a.bank, a.row, 0), geo),
                    is_write: false,
                    core_id: 0,
                })
                .collect();
            let sim = run_trace(&trace, geo, &timing, &SimOptions { mitigation: Some(&cfg), chip: Some(&chip), seed, ..Default::default() })?;
            print(json!({
                "mechanism": mechanism.to_string(), "hc_first": hc_first, "activations": acts.len(),
                "flips": out.flips, "mitigation_refreshes": out.mitigation_refreshes,
                "overhead_first_2ms": bandwidth_overhead(&sim),
            }));
        }
        Cmd::Combined(CombinedCmd::Run { config, out_dir }) => {
            let cfg = ExperimentConfig::load(config)?;
            if cfg.combined.is_none() {
                return Err(LabError::Config("config has no `combined` section".into()));
            }
            let dir = cfg.resolve_output_dir(out_dir.as_deref());
            let files = run_experiment(&cfg, &dir, cli.threads)?;
            print(json!({"config_hash": cfg.config_hash(), "files": files}));
        }
        Cmd::Report { config, out_dir } => {
            let cfg = ExperimentConfig::load(config)?;
            let dir = cfg.resolve_output_dir(out_dir.as_deref());
            let files = run_experiment(&cfg, &dir, cli.threads)?;
            print(json!({"config_hash": cfg.config_hash(), "files": files}));
        }
    }
    Ok(())
}

fn floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>, LabError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| LabError::Config(format!("{what}: expected {n} comma-separated numbers")))?;
    if v.len() != n {
        return Err(LabError::Config(format!("{what}: expected {n} comma-separated numbers")));
    }
    Ok(v)
}

fn parse_prohit(s: &str) -> Result<ProhitParams, LabError> {
    let v = floats(s, 5, "--prohit")?;
    Ok(ProhitParams {
        hot_entries: v[0] as usize,
        cold_entries: v[1] as usize,
        p_insert: v[2],
        p_evict: v[3],
        p_top: v[4],
    })
}

fn parse_mrloc(s: &str) -> Result<MrlocParams, LabError> {
    let v = floats(s, 3, "--mrloc")?;
    Ok(MrlocParams { queue_len: v[0] as usize, p_min: v[1], p_max: v[2] })
}
