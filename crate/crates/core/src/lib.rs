//! Software testbed for load-altering attacks on a distribution feeder and a
//! topology-control defence, coupled over Modbus/TCP.

pub mod attack;
pub mod feeder;
pub mod mitigate;
pub mod modbus;
pub mod powerflow;
pub mod regmap;
pub mod scenario;

pub use feeder::{
    apply_switch_config, load_feeder, FeederError, FeederModel, Phase, PhaseSet, SwitchConfig,
    SwitchState, TopologyView,
};
pub use powerflow::{
    count_violations, max_unbalance, solve, unbalance_at, LoadSet, SolverOptions, VoltageBand,
    VoltageSolution,
};
pub use regmap::{build_image, plan_chunked_read, MeterMap, RegisterImage, WordOrder};
