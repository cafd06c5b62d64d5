//! Fixtures shared by the benchmarks.

use dramlab::drange::identify_rng_cells_in;
use dramlab::pattern::stream;
use dramlab::tracesim::gen_random;
use dramlab::{
    synthesize_chip, Manufacturer, ManufacturerProfile, MemRequest, RngCellMap, SyntheticChip, TimingParams,
    TypeNode, WeakColumnProfile,
};
use dramlab::{SolarConfig, SolarMode};

/// LPDDR4 chip with the activation-failure defaults of manufacturer B.
pub fn activation_chip(seed: u64) -> SyntheticChip {
    let p = ManufacturerProfile::activation_default(Manufacturer::B);
    synthesize_chip(&p, &p.default_geometry(), seed).expect("preset synthesizes")
}

/// DDR4 chip of manufacturer A for RowHammer runs.
pub fn hammer_chip(seed: u64) -> SyntheticChip {
    let p = ManufacturerProfile::preset(Manufacturer::A, TypeNode::Ddr4New).expect("preset exists");
    synthesize_chip(&p, &p.default_geometry(), seed).expect("preset synthesizes")
}

pub fn timing(chip: &SyntheticChip) -> TimingParams {
    TimingParams::preset(chip.profile.type_node.family()).expect("family preset")
}

pub fn solar_config(chip: &SyntheticChip) -> SolarConfig {
    SolarConfig::new(&chip.geo, WeakColumnProfile::ground_truth(chip), SolarMode::Solar).expect("profile fits")
}

pub fn random_trace(chip: &SyntheticChip, cores: u32, per_core: usize) -> Vec<MemRequest> {
    gen_random(&chip.geo, cores, per_core, 10.0, chip.seed)
}

/// RNG cells of the first two banks.
pub fn rng_map(chip: &SyntheticChip) -> RngCellMap {
    let mut rng = stream(chip.seed, 0xBE, 0);
    identify_rng_cells_in(chip, &[0, 1], 1000, 55.0, &mut rng).expect("identification runs")
}
