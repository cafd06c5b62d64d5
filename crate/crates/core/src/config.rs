//! Experiment configuration: schema, validation and the stable config hash that keys every
//! CSV row.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chipsynth::{check_temperature, Manufacturer, ManufacturerProfile, TypeNode};
use crate::error::{LabError, Result};
use crate::geometry::{DramGeometry, TimingParams};
use crate::pattern::DataPattern;
use crate::persist::sha256_hex;
use crate::rhmitigate::{MitigationConfig, MitigationKind, MrlocParams, ProhitParams};
use crate::solar::SolarMode;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DRAMLAB_OUT";
pub const DEFAULT_OUT_DIR: &str = "dramlab-out";

fn default_name() -> String {
    "experiment".into()
}
fn default_temperature() -> f64 {
    crate::chipsynth::REFERENCE_TEMP_C
}
fn default_patterns() -> Vec<DataPattern> {
    vec![DataPattern::Random]
}
fn default_p_first_zero() -> f64 {
    0.222
}
fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Geometry preset (`ddr3`, `ddr4` or `lpddr4`); the type-node's family when absent.
    /// Subarray height always comes from the manufacturer profile.
    #[serde(default)]
    pub geometry: Option<String>,
    /// Timing preset; the geometry preset's name when absent.
    #[serde(default)]
    pub timing: Option<String>,
    pub manufacturer: Manufacturer,
    pub type_node: TypeNode,
    pub seeds: Vec<u64>,
    #[serde(default = "default_temperature")]
    pub temperature_c: f64,
    /// Output directory; falls back to `$DRAMLAB_OUT`, then `dramlab-out`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub activation: Option<ActivationSweep>,
    #[serde(default)]
    pub rowhammer: Option<HammerSweep>,
    #[serde(default)]
    pub solar: Option<SolarExperiment>,
    #[serde(default)]
    pub puf: Option<PufExperiment>,
    #[serde(default)]
    pub rng: Option<RngExperiment>,
    #[serde(default)]
    pub mitigation: Option<MitigationExperiment>,
    #[serde(default)]
    pub combined: Option<CombinedExperiment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSweep {
    pub trcd_ns: Vec<f64>,
    #[serde(default)]
    pub temperatures_c: Vec<f64>,
    #[serde(default = "default_patterns")]
    pub patterns: Vec<DataPattern>,
    #[serde(default = "one")]
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HammerSweep {
    pub hc: Vec<f64>,
    #[serde(default = "default_patterns")]
    pub patterns: Vec<DataPattern>,
    /// Banks to test; all when empty.
    #[serde(default)]
    pub banks: Vec<u32>,
    /// Victim row range `[start, end)`; all interior rows when absent.
    #[serde(default)]
    pub rows: Option<(u32, u32)>,
}

/// Where a weak-column profile comes from when no profile file is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeakProfileSource {
    /// The chip's true weak columns.
    #[default]
    GroundTruth,
    /// Measured with the iterative profiling test.
    Build,
    /// No weak columns at all.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSpec {
    Streaming { cores: u32, requests_per_core: usize, gap_ns: f64 },
    Random { cores: u32, requests_per_core: usize, gap_ns: f64 },
    FirstCachelineBiased {
        cores: u32,
        requests_per_core: usize,
        gap_ns: f64,
        #[serde(default = "default_p_first_zero")]
        p_first_zero: f64,
    },
    File { path: PathBuf },
}

impl TraceSpec {
    pub fn label(&self) -> String {
        match self {
            TraceSpec::Streaming { .. } => "streaming".into(),
            TraceSpec::Random { .. } => "random".into(),
            TraceSpec::FirstCachelineBiased { .. } => "first_cacheline_biased".into(),
            TraceSpec::File { path } => format!("file:{}", path.display()),
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |cores: u32, gap: f64| {
            if cores == 0 || !(gap >= 0.0 && gap.is_finite()) {
                Err(LabError::Config("trace needs cores >= 1 and a finite gap_ns >= 0".into()))
            } else {
                Ok(())
            }
        };
        match self {
            TraceSpec::Streaming { cores, gap_ns, .. } | TraceSpec::Random { cores, gap_ns, .. } => {
                check(*cores, *gap_ns)
            }
            TraceSpec::FirstCachelineBiased { cores, gap_ns, p_first_zero, .. } => {
                check(*cores, *gap_ns)?;
                if !(0.0..=1.0).contains(p_first_zero) {
                    return Err(LabError::Config("p_first_zero must be in [0, 1]".into()));
                }
                Ok(())
            }
            TraceSpec::File { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolarExperiment {
    pub modes: Vec<SolarMode>,
    pub traces: Vec<TraceSpec>,
    /// Random reads for the corruption check per mode.
    #[serde(default)]
    pub safety_accesses: u64,
    #[serde(default)]
    pub weak_profile: WeakProfileSource,
    /// Load the weak-column profile from this file instead.
    #[serde(default)]
    pub profile_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PufExperiment {
    /// Segments to screen, starting at segment 0; all when absent.
    #[serde(default)]
    pub segments: Option<u64>,
    /// Good segments to evaluate repeatedly.
    pub max_good_segments: usize,
    pub evaluations: u32,
    #[serde(default)]
    pub temperatures_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngExperiment {
    /// Sweep over the number of banks used.
    pub banks: Vec<u32>,
    pub bits: usize,
    #[serde(default)]
    pub reads: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigationExperiment {
    pub mechanisms: Vec<MitigationKind>,
    pub hc_first: Vec<u64>,
    #[serde(default)]
    pub prohit: Option<ProhitParams>,
    #[serde(default)]
    pub mrloc: Option<MrlocParams>,
    /// Length of the double-sided attack replayed for the flip check.
    pub attack_ms: f64,
    /// Every k-th attack activation goes to a random row instead.
    #[serde(default)]
    pub background_every: Option<u32>,
    /// Attack requests in the simulated overhead trace.
    pub sim_attack_requests: usize,
    #[serde(default)]
    pub sim_background_cores: u32,
    #[serde(default)]
    pub sim_background_requests: usize,
    #[serde(default)]
    pub sim_background_gap_ns: f64,
}

impl MitigationExperiment {
    pub fn mitigation_config(&self, kind: MitigationKind, hc_first: u64) -> MitigationConfig {
        let mut c = MitigationConfig::new(kind, hc_first);
        c.prohit = self.prohit;
        c.mrloc = self.mrloc;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinedExperiment {
    /// Profile file with weak columns, RNG cells and golden keys; built in-process when absent.
    #[serde(default)]
    pub profile_file: Option<PathBuf>,
    #[serde(default)]
    pub weak_profile: WeakProfileSource,
    pub trace: TraceSpec,
    pub puf_evaluations: u32,
    pub rng_bits: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn geometry_name(&self) -> &str {
        self.geometry.as_deref().unwrap_or(self.type_node.family())
    }

    pub fn geometry(&self) -> Result<DramGeometry> {
        Ok(DramGeometry::preset(self.geometry_name())?.with_rows_per_subarray(self.profile()?.rows_per_subarray))
    }

    pub fn timing(&self) -> Result<TimingParams> {
        TimingParams::preset(self.timing.as_deref().unwrap_or(self.geometry_name()))
    }

    pub fn profile(&self) -> Result<ManufacturerProfile> {
        ManufacturerProfile::preset(self.manufacturer, self.type_node)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?.validate()?;
        self.timing()?.validate()?;
        self.profile()?.validate()?;
        if self.seeds.is_empty() {
            return Err(LabError::Config("seeds must not be empty".into()));
        }
        check_temperature(self.temperature_c).map_err(to_config)?;
        if let Some(a) = &self.activation {
            if a.trcd_ns.is_empty() || a.patterns.is_empty() || a.iterations == 0 {
                return Err(LabError::Config("activation sweep needs trcd_ns, patterns and iterations >= 1".into()));
            }
            for &t in &a.temperatures_c {
                check_temperature(t).map_err(to_config)?;
            }
        }
        if let Some(h) = &self.rowhammer {
            if h.hc.is_empty() || h.patterns.is_empty() {
                return Err(LabError::Config("rowhammer sweep needs hc values and patterns".into()));
            }
        }
        if let Some(s) = &self.solar {
            if s.modes.is_empty() {
                return Err(LabError::Config("solar experiment needs at least one mode".into()));
            }
            for t in &s.traces {
                t.validate()?;
            }
        }
        if let Some(p) = &self.puf {
            if p.evaluations == 0 {
                return Err(LabError::Config("puf evaluations must be >= 1".into()));
            }
            for &t in &p.temperatures_c {
                check_temperature(t).map_err(to_config)?;
            }
        }
        if let Some(r) = &self.rng {
            if r.banks.is_empty() || r.banks.contains(&0) {
                return Err(LabError::Config("rng banks sweep needs positive bank counts".into()));
            }
        }
        if let Some(m) = &self.mitigation {
            if m.mechanisms.is_empty() || m.hc_first.is_empty() {
                return Err(LabError::Config("mitigation sweep needs mechanisms and hc_first values".into()));
            }
            if m.mechanisms.contains(&MitigationKind::Prohit) && m.prohit.is_none() {
                return Err(LabError::Config("prohit selected but its parameters are missing".into()));
            }
            if m.mechanisms.contains(&MitigationKind::Mrloc) && m.mrloc.is_none() {
                return Err(LabError::Config("mrloc selected but its parameters are missing".into()));
            }
            if !(m.attack_ms > 0.0) {
                return Err(LabError::Config("attack_ms must be positive".into()));
            }
        }
        if let Some(c) = &self.combined {
            c.trace.validate()?;
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the config with its output location and seed
    /// list cleared; rows are keyed by (hash, seed).
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.seeds.clear();
        let json = serde_json::to_string(&c).expect("config serializes");
        sha256_hex(json.as_bytes())[..16].to_string()
    }

    /// Output directory: explicit override, then config, then `$DRAMLAB_OUT`, then the default.
    pub fn resolve_output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        override_dir
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

fn to_config(e: LabError) -> LabError {
    match e {
        LabError::Config(_) => e,
        other => LabError::Config(other.to_string()),
    }
}
