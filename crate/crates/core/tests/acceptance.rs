//! Acceptance checks, one PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::time::{Duration, Instant};

use dramlab::characterize::{extract_hc_profile, jaccard, run_rowhammer_characterization};
use dramlab::dlpuf::{self, enroll, evaluate_puf, segment_good, PufChallenge};
use dramlab::drange::{self, generate_bits, identify_rng_cells, randomness_report, throughput_estimate};
use dramlab::experiment::{run_experiment, run_experiment_rows, speedup_pct};
use dramlab::pattern::stream;
use dramlab::persist::{decode_profile, encode_profile};
use dramlab::solar::{profile_storage_bits, simulate_read_safety};
use dramlab::tracesim::{gen_first_cacheline_biased, gen_random, gen_streaming, run_trace, SimOptions};
use dramlab::*;

type Outcome = std::result::Result<(bool, String), LabError>;

const MANUFACTURERS: [Manufacturer; 3] = [Manufacturer::A, Manufacturer::B, Manufacturer::C];

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 7] = [
        ("formula exactness", Duration::from_secs(1), c1_formulas),
        ("solar safety and dominance", Duration::from_secs(120), c2_solar),
        ("puf metrics", Duration::from_secs(120), c3_puf),
        ("trng quality", Duration::from_secs(60), c4_trng),
        ("hammer model fidelity", Duration::from_secs(120), c5_hammer),
        ("mitigation scaling", Duration::from_secs(300), c6_mitigation),
        ("determinism and persistence", Duration::from_secs(120), c7_determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let elapsed = t.elapsed();
        let in_time = elapsed <= *budget;
        let pass = ok && in_time;
        failed += !pass as u32;
        let timing = if in_time { String::new() } else { format!(" over budget {budget:?}") };
        println!(
            "C{} {} {name}: {detail} [{:.1}s{timing}]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn c1_formulas() -> Outcome {
    let mut geo = DramGeometry::preset("lpddr4")?;
    geo.rows_per_bank = 64 * 512;
    let storage_bytes = profile_storage_bits(&geo) / 8;
    let mem = dlpuf::mem_total(8192, 100)?;
    let eval_ms = dlpuf::eval_time_estimate(8192, 100, dlpuf::PER_ACCESS_US)?.as_secs_f64() * 1e3;
    let rel = (eval_ms - 87.04).abs() / 87.04;
    let ok = storage_bytes == 4096 && mem == 65536 && rel <= 1e-3 && (eval_ms - 87.0).abs() / 87.0 <= 1e-3;
    Ok((ok, format!("storage {storage_bytes} B, mem_total {mem} B, eval {eval_ms:.3} ms")))
}

fn c2_solar() -> Outcome {
    const CHIPS: u64 = 20;
    const ACCESSES: u64 = 1_000_000;
    let mut corruptions = 0u64;
    let mut fraction_violations = 0;
    let mut speedup_violations = 0;
    let mut min_margin = f64::INFINITY;
    let mut min_speedup = f64::INFINITY;
    let mut runs = 0;
    for mfr in MANUFACTURERS {
        let profile = ManufacturerProfile::activation_default(mfr);
        let geo = profile.default_geometry();
        let timing = TimingParams::preset(profile.type_node.family())?;
        for seed in 1..=CHIPS {
            let chip = synthesize_chip(&profile, &geo, seed)?;
            let weak = WeakColumnProfile::ground_truth(&chip);
            let solar = SolarConfig::new(&geo, weak.clone(), SolarMode::Solar)?;
            let fly = SolarConfig::new(&geo, weak, SolarMode::Flydram)?;
            let mut rng = stream(seed, 0xACC2, mfr as u64);
            let rep = simulate_read_safety(&chip, &solar, &timing, ACCESSES, 55.0, &mut rng)?;
            corruptions += rep.corruptions;

            let traces = [
                gen_streaming(&geo, 4, 600, 5.0, seed),
                gen_random(&geo, 4, 600, 5.0, seed),
                gen_first_cacheline_biased(&geo, 4, 600, 5.0, 0.222, seed),
            ];
            for trace in &traces {
                let base_opts = SimOptions { seed, ..Default::default() };
                let base = run_trace(trace, &geo, &timing, &base_opts)?;
                let s = run_trace(trace, &geo, &timing, &SimOptions { solar: Some(&solar), chip: Some(&chip), ..base_opts })?;
                let f = run_trace(trace, &geo, &timing, &SimOptions { solar: Some(&fly), chip: Some(&chip), ..base_opts })?;
                let margin = s.reduced_trcd_fraction() - f.reduced_trcd_fraction();
                min_margin = min_margin.min(margin);
                fraction_violations += (margin < 0.0) as u32;
                let ws = speedup_pct(&s, &base)?;
                min_speedup = min_speedup.min(ws);
                speedup_violations += (ws < 100.0) as u32;
                corruptions += s.corrupted_reads;
                runs += 1;
            }
        }
    }
    let ok = corruptions == 0 && fraction_violations == 0 && speedup_violations == 0;
    Ok((
        ok,
        format!(
            "{} chips, {corruptions} corruptions, solar-fly fraction margin min {min_margin:.4}, \
             min weighted speedup {min_speedup:.2}% over {runs} trace runs",
            3 * CHIPS
        ),
    ))
}

fn c3_puf() -> Outcome {
    const CHIPS: u64 = 30;
    const EVALS: usize = 50;
    const SEGMENTS_PER_CHIP: usize = 2;
    let mut min_intra = 1.0f64;
    let mut firsts: Vec<BTreeSet<u32>> = Vec::new();
    for seed in 1..=CHIPS {
        let profile = ManufacturerProfile::activation_default(MANUFACTURERS[(seed % 3) as usize]);
        let geo = profile.default_geometry();
        let chip = synthesize_chip(&profile, &geo, seed)?;
        let n = dlpuf::segment_count(&geo, dlpuf::DEFAULT_SEGMENT_BYTES);
        let mut good = Vec::new();
        for s in 0..n {
            if segment_good(&chip, s)? {
                good.push(s);
                if good.len() == SEGMENTS_PER_CHIP {
                    break;
                }
            }
        }
        if good.len() < SEGMENTS_PER_CHIP {
            return Ok((false, format!("chip {seed} has only {} good segments", good.len())));
        }
        for &seg in &good {
            let mut rng = stream(seed, 0xACC3, seg);
            let ch = PufChallenge::reference(seg);
            let resp: Vec<BTreeSet<u32>> =
                (0..EVALS).map(|_| evaluate_puf(&chip, &ch, &mut rng).map(|r| r.bits)).collect::<Result<_>>()?;
            for i in 0..EVALS {
                for j in i + 1..EVALS {
                    min_intra = min_intra.min(jaccard(&resp[i], &resp[j]));
                }
            }
            firsts.push(resp[0].clone());
        }
    }
    let mut max_inter = 0.0f64;
    for i in 0..firsts.len() {
        for j in i + 1..firsts.len() {
            max_inter = max_inter.max(jaccard(&firsts[i], &firsts[j]));
        }
    }
    let ok = min_intra >= 0.65 && max_inter < 0.25;
    Ok((ok, format!("{} segments on {CHIPS} chips, min intra {min_intra:.3}, max inter {max_inter:.3}", firsts.len())))
}

fn c4_trng() -> Outcome {
    const BITS: usize = 1_000_000;
    let mut ok = true;
    let mut detail = Vec::new();
    for mfr in MANUFACTURERS {
        let profile = ManufacturerProfile::activation_default(mfr);
        let geo = profile.default_geometry();
        let timing = TimingParams::preset(profile.type_node.family())?;
        let chip = synthesize_chip(&profile, &geo, 7)?;
        let mut rng = stream(7, 0xACC4, mfr as u64);
        let map = identify_rng_cells(&chip, drange::DEFAULT_READS, 55.0, &mut rng)?;
        let bits = generate_bits(&chip, &map, BITS, &mut rng)?;
        let rep = randomness_report(&bits.bits)?;
        let mut tests = vec![rep.monobit, rep.block_frequency, rep.runs, rep.cumulative_sums];
        tests.extend(rep.longest_run);
        let min_p = tests.iter().map(|t| t.p_value).fold(f64::INFINITY, f64::min);
        let pass = bits.len() == BITS && rep.longest_run.is_some() && rep.all_pass() && rep.entropy >= drange::MIN_ENTROPY;

        let loop_ns = drange::loop_runtime_ns(timing.t_rc_ns);
        let banks: Vec<u32> = map.selected.keys().copied().collect();
        let mut additive = !banks.is_empty();
        for k in 1..=banks.len() {
            let total = throughput_estimate(&map, k, loop_ns)?;
            let mut sum = 0.0;
            for b in &banks[..k] {
                let mut single = map.clone();
                single.selected.retain(|bank, _| bank == b);
                sum += throughput_estimate(&single, 1, loop_ns)?;
            }
            additive &= ((total - sum) / total).abs() <= 1e-12;
        }
        ok &= pass && additive;
        detail.push(format!(
            "{mfr}: {} banks, entropy {:.4}, min p {min_p:.4}, additive {additive}",
            banks.len(),
            rep.entropy
        ));
    }
    Ok((ok, detail.join("; ")))
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn c5_hammer() -> Outcome {
    let fits = [
        (Manufacturer::A, TypeNode::Ddr4New),
        (Manufacturer::B, TypeNode::Ddr4New),
        (Manufacturer::C, TypeNode::Ddr4New),
        (Manufacturer::A, TypeNode::Ddr3New),
        (Manufacturer::C, TypeNode::Ddr3New),
    ];
    let mut min_r2 = 1.0f64;
    let mut cells_checked = 0u64;
    let mut non_monotone = 0u64;
    let mut bad_offsets = 0u64;
    let mut flips_checked = 0u64;
    for (i, &(mfr, node)) in fits.iter().enumerate() {
        let p = ManufacturerProfile::preset(mfr, node)?;
        let mut geo = p.default_geometry();
        geo.banks_per_rank = 1;
        geo.rows_per_bank = 2048;
        let timing = TimingParams::preset(node.family())?;
        let chip = synthesize_chip(&p, &geo, 5 + i as u64)?;
        let lo = 3.0 * p.hammer.hc_first_min;
        let hi: f64 = 240e3;
        let hcs: Vec<f64> = (0..8).map(|k| lo * (hi / lo).powf(k as f64 / 7.0)).collect();
        let mut rng = stream(5, 0xACC5, i as u64);
        let res = run_rowhammer_characterization(&chip, &timing, &[p.hammer.worst_pattern], &hcs, &mut rng)?;
        let xs: Vec<f64> = res.iter().map(|r| r.hc.ln()).collect();
        let ys: Vec<f64> = res.iter().map(|r| (r.counts.len().max(1) as f64).ln()).collect();
        min_r2 = min_r2.min(r_squared(&xs, &ys));

        let grid: Vec<f64> = (0..64).map(|k| 100.0 * 1.15f64.powi(k)).collect();
        for row in 0..geo.rows_per_bank {
            for cell in chip.hammer_cells(0, row) {
                cells_checked += 1;
                let probs: Vec<f64> = grid.iter().map(|&hc| p.hammer.flip_probability(hc, cell.threshold)).collect();
                non_monotone += probs.windows(2).any(|w| w[1] < w[0]) as u64;
            }
        }
    }
    // Single-victim offsets, including a remapped LPDDR4 part.
    for (mfr, node) in [(Manufacturer::A, TypeNode::Ddr4New), (Manufacturer::B, TypeNode::Lpddr4_1x)] {
        let p = ManufacturerProfile::preset(mfr, node)?;
        let mut geo = p.default_geometry();
        geo.banks_per_rank = 1;
        geo.rows_per_bank = 2048;
        let chip = synthesize_chip(&p, &geo, 11)?;
        let scheme = p.hammer.remap;
        let mut rng = stream(11, 0xACC5, 99);
        for victim in (16..geo.rows_per_bank - 16).step_by(3) {
            let Ok((a1, a2)) = aggressor_rows(victim, scheme, geo.rows_per_bank) else { continue };
            let pv = scheme.physical_row(victim) as i64;
            for f in sample_hammer(&chip, 0, victim, 240e3, p.hammer.worst_pattern, &mut rng)? {
                flips_checked += 1;
                let off = scheme.physical_row(f.row) as i64 - pv;
                if f.row == a1 || f.row == a2 || off % 2 != 0 || off.abs() > 6 {
                    bad_offsets += 1;
                }
            }
        }
    }
    let ok = min_r2 >= 0.99 && non_monotone == 0 && bad_offsets == 0 && flips_checked > 0;
    Ok((
        ok,
        format!(
            "min R² {min_r2:.4}, {non_monotone}/{cells_checked} cells non-monotone, \
             {bad_offsets}/{flips_checked} flips outside even offsets within ±6 or in aggressors"
        ),
    ))
}

const MITIGATION_CONFIG: &str = r#"{
    "name": "scaling",
    "manufacturer": "A",
    "type_node": "ddr4-new",
    "seeds": [1],
    "mitigation": {
        "mechanisms": ["none", "increased_refresh", "para", "prohit", "mrloc", "twice", "twice_ideal", "ideal"],
        "hc_first": [200000, 64000, 32000, 8000, 2000, 1024, 256, 128],
        "prohit": {"hot_entries": 4, "cold_entries": 8, "p_insert": 0.05, "p_evict": 0.5, "p_top": 0.5},
        "mrloc": {"queue_len": 16, "p_min": 0.001, "p_max": 0.01},
        "attack_ms": 8.0,
        "background_every": 16,
        "sim_attack_requests": 20000,
        "sim_background_cores": 3,
        "sim_background_requests": 2000,
        "sim_background_gap_ns": 200.0
    }
}"#;

fn c6_mitigation() -> Outcome {
    let cfg = ExperimentConfig::from_json(MITIGATION_CONFIG)?;
    let rows = run_experiment_rows(&cfg, None)?.mitigation;
    let m = cfg.mitigation.as_ref().expect("mitigation section");
    let row = |k: MitigationKind, hc: u64| {
        rows.iter().find(|r| r.mechanism == k.name() && r.hc_first == hc).expect("row for every sweep point")
    };
    let supported = |k, hc| row(k, hc).status == "ok";
    let mut failures = Vec::new();
    let twice_bound = TimingParams::preset("ddr4")?.refresh_intervals_per_window();
    for &hc in &m.hc_first {
        if supported(MitigationKind::IncreasedRefresh, hc) != (hc >= 32_768) {
            failures.push(format!("increased_refresh support at {hc}"));
        }
        if supported(MitigationKind::Twice, hc) != (hc / 4 >= twice_bound) {
            failures.push(format!("twice support at {hc}"));
        }
        if !supported(MitigationKind::TwiceIdeal, hc) {
            failures.push(format!("twice_ideal refused {hc}"));
        }
        let ideal = row(MitigationKind::Ideal, hc).safety_refreshes;
        for k in MitigationKind::ZERO_FLIP {
            let r = row(k, hc);
            if r.status != "ok" {
                continue;
            }
            if r.flips != Some(0) {
                failures.push(format!("{k} flipped {:?} at {hc}", r.flips));
            }
            if ideal > r.safety_refreshes {
                failures.push(format!("ideal {ideal:?} > {k} {:?} at {hc}", r.safety_refreshes));
            }
        }
    }
    let para: Vec<f64> = m.hc_first.iter().map(|&hc| row(MitigationKind::Para, hc).overhead.unwrap_or(f64::NAN)).collect();
    if !para.windows(2).all(|w| w[1] > w[0]) {
        failures.push(format!("para overhead not increasing: {para:?}"));
    }
    let detail = format!(
        "para overhead {:.2e}..{:.3}, ideal refreshes at 2000: {:?}, twice refuses below {}",
        para[0],
        para[para.len() - 1],
        row(MitigationKind::Ideal, 2000).safety_refreshes,
        4 * twice_bound
    );
    if failures.is_empty() {
        Ok((true, detail))
    } else {
        Ok((false, format!("{detail}; {}", failures.join(", "))))
    }
}

const DETERMINISM_CONFIG: &str = r#"{
    "name": "repro",
    "manufacturer": "B",
    "type_node": "lpddr4-1x",
    "seeds": [3, 4],
    "activation": {"trcd_ns": [10], "iterations": 2},
    "rowhammer": {"hc": [50000, 150000], "banks": [0], "rows": [200, 260]},
    "solar": {
        "modes": ["baseline", "solar", "flydram"],
        "traces": [{"kind": "random", "cores": 2, "requests_per_core": 300, "gap_ns": 5}],
        "safety_accesses": 5000
    },
    "puf": {"segments": 32, "max_good_segments": 2, "evaluations": 4},
    "rng": {"banks": [1, 2], "bits": 4000},
    "mitigation": {
        "mechanisms": ["para", "ideal"],
        "hc_first": [64000],
        "attack_ms": 1.0,
        "sim_attack_requests": 1000
    },
    "combined": {
        "trace": {"kind": "streaming", "cores": 2, "requests_per_core": 300, "gap_ns": 5},
        "puf_evaluations": 1,
        "rng_bits": 256
    }
}"#;

fn c7_determinism() -> Outcome {
    let cfg = ExperimentConfig::from_json(DETERMINISM_CONFIG)?;
    let dir = tempfile::tempdir()?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let files_a = run_experiment(&cfg, &a, Some(1))?;
    let files_b = run_experiment(&cfg, &b, None)?;
    let mut identical = files_a.len() == 7 && files_a.len() == files_b.len();
    let mut rows = 0;
    for (fa, fb) in files_a.iter().zip(&files_b) {
        let (ta, tb) = (fs::read(fa)?, fs::read(fb)?);
        identical &= ta == tb;
        rows += ta.iter().filter(|&&c| c == b'\n').count() - 1;
    }

    // Single-seed rerun reproduces that seed's rows in every file.
    let mut one = cfg.clone();
    one.seeds = vec![4];
    let files_c = run_experiment(&one, &dir.path().join("c"), None)?;
    let mut per_seed = files_c.len() == files_a.len();
    for (fc, fa) in files_c.iter().zip(&files_a) {
        let (tc, ta) = (fs::read_to_string(fc)?, fs::read_to_string(fa)?);
        let full: std::collections::HashSet<&str> = ta.lines().collect();
        per_seed &= tc.lines().count() > 1 && tc.lines().all(|l| full.contains(l));
    }

    let geo = cfg.geometry()?;
    let timing = cfg.timing()?;
    let chip = synthesize_chip(&cfg.profile()?, &geo, 3)?;
    let mut rng = stream(3, 0xACC7, 0);
    let mut pf = ProfileFile::new(&geo, 3);
    pf.weak_columns = Some(WeakColumnProfile::ground_truth(&chip));
    pf.rng_cells = Some(identify_rng_cells(&chip, drange::DEFAULT_READS, 55.0, &mut rng)?);
    let mut store = GoldenKeyStore::default();
    enroll(&chip, "dev", &[0, 1], &[50.0, 60.0], &mut store, &mut rng)?;
    pf.golden_keys = Some(store);
    let scope = dramlab::characterize::HammerScope { banks: vec![0], rows: Some(200..260), iterations: 1 };
    let res = dramlab::characterize::run_rowhammer_characterization_scoped(
        &chip,
        &timing,
        &[DataPattern::Random],
        &[50e3, 100e3, 200e3],
        &scope,
        &mut rng,
    )?;
    pf.hc_profile = Some(extract_hc_profile(&res)?);
    let path = dir.path().join("profile.json");
    save_profile(&path, &pf)?;
    let loaded = load_profile(&path, &geo)?;
    let text = encode_profile(&pf)?;
    let round_trip = loaded == pf && encode_profile(&loaded)? == text && decode_profile(&text, &geo)? == pf;

    let ok = identical && per_seed && round_trip;
    Ok((
        ok,
        format!("{} CSV files ({rows} rows) identical {identical}, per-seed rerun {per_seed}, profile round trip {round_trip}", files_a.len()),
    ))
}
