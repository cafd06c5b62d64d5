//! Desk-scale DRAM timing-margin lab.
//!
//! Synthetic chips with activation-failure and RowHammer fault models, the testing routines
//! that characterize them, and four mechanisms built on top: variable-latency reads with a
//! weak-column profile, a latency-failure PUF, a latency-failure TRNG and a RowHammer
//! mitigation suite evaluated on a trace-driven bank-timing simulator.

pub mod characterize;
pub mod chipsynth;
pub mod config;
pub mod dlpuf;
pub mod drange;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod pattern;
pub mod persist;
pub mod rhmitigate;
mod serde_pairs;
pub mod solar;
pub mod tracesim;

pub use chipsynth::{
    apply_on_die_ecc, sample_activation_read, sample_hammer, synthesize_chip, CellCoord, HammerCell,
    Manufacturer, ManufacturerProfile, SyntheticChip, TypeNode, WeakCell,
};
pub use error::{LabError, Result};
pub use geometry::{
    aggressor_rows, decode_address, encode_address, DramGeometry, Location, RowRemapScheme, TimingParams,
};
pub use characterize::{FailureBitmap, HcProfile, WeakColumnProfile};
pub use config::ExperimentConfig;
pub use dlpuf::{GoldenKeyStore, PufChallenge, PufResponse};
pub use drange::{Bitstream, RandomnessReport, RngCellMap};
pub use pattern::{DataPattern, SimRng};
pub use persist::{load_profile, save_profile, ProfileFile};
pub use rhmitigate::{MitigationConfig, MitigationKind};
pub use solar::{SolarConfig, SolarMode};
pub use tracesim::{MemRequest, SimMetrics};
