//! Shared inputs for the criterion benches.

use modgrid_core::attack::AttackVector;
use modgrid_core::feeder::{FeederModel, Phase};
use modgrid_core::modbus::setpoint_word;
use modgrid_core::regmap::MeterMap;
use modgrid_core::LoadSet;

/// Bundled feeder loads with one phase group pushed to `level_mw`.
pub fn attacked_loads(model: &FeederModel, group: Phase, level_mw: f64) -> LoadSet {
    let map = MeterMap::for_model(model).expect("bundled map");
    let words: Vec<u16> = AttackVector::pattern(&map, group, level_mw, 0.001)
        .to_kw()
        .iter()
        .map(|(_, kw)| setpoint_word(*kw).expect("small setpoint"))
        .collect();
    map.loads_from_setpoints(model, &words).expect("bundled setpoints")
}
