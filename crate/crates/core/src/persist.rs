//! Versioned, checksummed JSON profile container.
//!
//! On disk a profile file is a JSON object `{"format_version", "checksum", "body"}` where
//! `checksum` is the SHA-256 of the compact JSON encoding of `body`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::characterize::{HcProfile, WeakColumnProfile};
use crate::dlpuf::GoldenKeyStore;
use crate::drange::RngCellMap;
use crate::error::{LabError, Result};
use crate::geometry::DramGeometry;

pub const PROFILE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileHeader {
    pub format_version: u32,
    pub chip_seed: u64,
    pub geometry_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub header: ProfileHeader,
    #[serde(default)]
    pub weak_columns: Option<WeakColumnProfile>,
    #[serde(default)]
    pub rng_cells: Option<RngCellMap>,
    #[serde(default)]
    pub golden_keys: Option<GoldenKeyStore>,
    #[serde(default)]
    pub hc_profile: Option<HcProfile>,
}

impl ProfileFile {
    pub fn new(geo: &DramGeometry, chip_seed: u64) -> Self {
        ProfileFile {
            header: ProfileHeader {
                format_version: PROFILE_FORMAT_VERSION,
                chip_seed,
                geometry_hash: geometry_hash(geo),
            },
            weak_columns: None,
            rng_cells: None,
            golden_keys: None,
            hc_profile: None,
        }
    }

    pub fn weak_columns(&self) -> Result<&WeakColumnProfile> {
        self.weak_columns.as_ref().ok_or_else(|| missing("weak-column profile", "profile build"))
    }

    pub fn rng_cells(&self) -> Result<&RngCellMap> {
        self.rng_cells.as_ref().ok_or_else(|| missing("RNG cell map", "profile build --rng"))
    }

    pub fn golden_keys(&self) -> Result<&GoldenKeyStore> {
        self.golden_keys.as_ref().ok_or_else(|| missing("PUF golden keys", "puf enroll"))
    }

    pub fn hc_profile(&self) -> Result<&HcProfile> {
        self.hc_profile.as_ref().ok_or_else(|| missing("HC profile", "char rh --profile"))
    }
}

fn missing(what: &str, cmd: &str) -> LabError {
    LabError::MissingProfile { what: what.into(), subcommand: cmd.into() }
}

/// Hex SHA-256 of the geometry's JSON encoding.
pub fn geometry_hash(geo: &DramGeometry) -> String {
    sha256_hex(serde_json::to_string(geo).expect("geometry serializes").as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    format_version: u32,
    checksum: String,
    body: &'a Value,
}

pub fn encode_profile(p: &ProfileFile) -> Result<String> {
    let body = serde_json::to_value(p).map_err(|e| LabError::Corrupt(e.to_string()))?;
    let compact = serde_json::to_string(&body).map_err(|e| LabError::Corrupt(e.to_string()))?;
    let env = EnvelopeOut { format_version: p.header.format_version, checksum: sha256_hex(compact.as_bytes()), body: &body };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| LabError::Corrupt(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Decode and verify a profile; `expected_geo` must hash to the stored geometry hash.
pub fn decode_profile(text: &str, expected_geo: &DramGeometry) -> Result<ProfileFile> {
    let v: Value = serde_json::from_str(text).map_err(|e| LabError::Corrupt(format!("unreadable profile: {e}")))?;
    let obj = v.as_object().ok_or_else(|| LabError::Corrupt("profile is not a JSON object".into()))?;
    let version = obj
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| LabError::Corrupt("missing format_version".into()))?;
    if version != PROFILE_FORMAT_VERSION as u64 {
        return Err(LabError::VersionMismatch { found: version as u32, expected: PROFILE_FORMAT_VERSION });
    }
    let checksum = obj.get("checksum").and_then(Value::as_str).ok_or_else(|| LabError::Corrupt("missing checksum".into()))?;
    let body = obj.get("body").ok_or_else(|| LabError::Corrupt("missing body".into()))?;
    if obj.len() != 3 {
        return Err(LabError::Corrupt("unexpected fields in profile envelope".into()));
    }
    let compact = serde_json::to_string(body).map_err(|e| LabError::Corrupt(e.to_string()))?;
    if sha256_hex(compact.as_bytes()) != checksum {
        return Err(LabError::Corrupt("checksum mismatch".into()));
    }
    let p: ProfileFile =
        serde_json::from_value(body.clone()).map_err(|e| LabError::Corrupt(format!("invalid profile body: {e}")))?;
    if p.header.format_version != PROFILE_FORMAT_VERSION {
        return Err(LabError::VersionMismatch { found: p.header.format_version, expected: PROFILE_FORMAT_VERSION });
    }
    let expected = geometry_hash(expected_geo);
    if p.header.geometry_hash != expected {
        return Err(LabError::GeometryMismatch { found: p.header.geometry_hash, expected });
    }
    if let Some(w) = &p.weak_columns {
        if !w.matches_geometry(expected_geo) {
            return Err(LabError::Corrupt("weak-column profile shape differs from geometry".into()));
        }
    }
    Ok(p)
}

pub fn save_profile(path: &Path, p: &ProfileFile) -> Result<()> {
    fs::write(path, encode_profile(p)?)?;
    Ok(())
}

pub fn load_profile(path: &Path, expected_geo: &DramGeometry) -> Result<ProfileFile> {
    decode_profile(&fs::read_to_string(path)?, expected_geo)
}
