//! Register image of the feeder as seen over Modbus.
//!
//! Layout (register and coil numbers are 1-based):
//!
//! | range      | content                                           |
//! |------------|---------------------------------------------------|
//! | 1..=206    | meter voltage magnitudes, pu x 10^4               |
//! | 207..=215  | attack-node load setpoints, kW                    |
//! | 500        | status, 1 when voltages are stale                 |
//! | 1001..=1412| FLOAT32 mirror of the meter voltages, two words each |
//! | coils 1..=8| switch states, closed = 1                         |

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{FeederModel, Phase, SwitchConfig, SwitchState, ATTACK_NODES};
use crate::powerflow::{unbalance_at, LoadSet, VoltageBand, VoltageSolution};

pub const VOLTAGE_BASE: u16 = 1;
pub const METER_SLOTS: u16 = 206;
pub const SETPOINT_BASE: u16 = 207;
pub const SETPOINT_SLOTS: u16 = 9;
pub const STATUS_REGISTER: u16 = 500;
pub const FLOAT_BASE: u16 = 1001;
pub const FLOAT_REGISTERS: u16 = 2 * METER_SLOTS;
pub const COIL_BASE: u16 = 1;
pub const COIL_SLOTS: u16 = 8;
/// Largest register count one read request may carry.
pub const MAX_READ_REGISTERS: u16 = 125;
pub const MAX_READ_COILS: u16 = 2000;
pub const VOLTAGE_SCALE: f64 = 1e4;
pub const MAX_VOLTAGE_PU: f64 = 6.5535;

#[derive(Debug, Error, PartialEq)]
pub enum RegMapError {
    #[error("voltage {0} pu is outside the encodable range 0..=6.5535")]
    VoltageOutOfRange(f64),
    #[error("cannot encode non-finite value {0}")]
    NonFinite(f32),
    #[error("model has {0} meter points, register block holds 206")]
    TooManyMeters(usize),
    #[error("model has {0} switches, coil block holds 8")]
    TooManySwitches(usize),
    #[error("too many setpoint nodes: {0} (block holds 9)")]
    TooManySetpoints(usize),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` has no single load phase to drive")]
    AmbiguousPhase(String),
    #[error("unknown switch `{0}`")]
    UnknownSwitch(String),
    #[error("solution does not match the meter map: {0}")]
    SolutionMismatch(String),
    #[error("expected {expected} setpoint values, got {got}")]
    SetpointCount { expected: usize, got: usize },
}

/// Why a register or coil access was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("illegal data address")]
    IllegalAddress,
    #[error("illegal data value")]
    IllegalValue,
}

/// Order of the two 16-bit halves of a FLOAT32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum WordOrder {
    #[default]
    #[serde(rename = "hi-lo")]
    HighFirst,
    #[serde(rename = "lo-hi")]
    LowFirst,
}

impl FromStr for WordOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hi-lo" => Ok(WordOrder::HighFirst),
            "lo-hi" => Ok(WordOrder::LowFirst),
            other => Err(format!("unknown word order `{other}` (hi-lo | lo-hi)")),
        }
    }
}

impl std::fmt::Display for WordOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WordOrder::HighFirst => "hi-lo",
            WordOrder::LowFirst => "lo-hi",
        })
    }
}

/// pu magnitude to scaled word, rounding halves up.
pub fn encode_voltage_word(pu: f64) -> Result<u16, RegMapError> {
    if !(0.0..=MAX_VOLTAGE_PU).contains(&pu) {
        return Err(RegMapError::VoltageOutOfRange(pu));
    }
    // The small bias absorbs binary representation error so that decimal
    // halves such as 0.98765 round up.
    let w = (pu * VOLTAGE_SCALE + 0.5 + 1e-9).floor();
    Ok(w.min(u16::MAX as f64) as u16)
}

pub fn decode_voltage_word(word: u16) -> f64 {
    word as f64 / VOLTAGE_SCALE
}

pub fn encode_float_pair(value: f32, order: WordOrder) -> Result<[u16; 2], RegMapError> {
    if !value.is_finite() {
        return Err(RegMapError::NonFinite(value));
    }
    let bits = value.to_bits();
    let (hi, lo) = ((bits >> 16) as u16, bits as u16);
    Ok(match order {
        WordOrder::HighFirst => [hi, lo],
        WordOrder::LowFirst => [lo, hi],
    })
}

pub fn decode_float_pair(words: [u16; 2], order: WordOrder) -> f32 {
    let (hi, lo) = match order {
        WordOrder::HighFirst => (words[0], words[1]),
        WordOrder::LowFirst => (words[1], words[0]),
    };
    f32::from_bits((hi as u32) << 16 | lo as u32)
}

/// Splits a register span into reads of at most `limit` registers.
pub fn plan_chunked_read(start: u16, count: usize, limit: u16) -> Vec<(u16, u16)> {
    let limit = limit.max(1) as usize;
    let mut spans = Vec::with_capacity(count.div_ceil(limit));
    let mut at = start as usize;
    let end = start as usize + count;
    while at < end {
        let n = (end - at).min(limit);
        spans.push((at as u16, n as u16));
        at += n;
    }
    spans
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meter {
    pub bus: String,
    pub bus_index: usize,
    pub phase: Phase,
    pub register: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointSlot {
    pub node: String,
    pub bus_index: usize,
    pub phase: Phase,
    pub register: u16,
    /// kvar drawn per kW at this node's nominal operating point.
    pub q_per_p: f64,
}

/// Which register carries which measurement, setpoint and switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterMap {
    meters: Vec<Meter>,
    setpoints: Vec<SetpointSlot>,
    switches: Vec<String>,
    /// Switch names in model order, for building configurations.
    model_order: Vec<String>,
    bus_count: usize,
}

impl MeterMap {
    /// Meters on every (bus, phase) in bus order, setpoints on whichever
    /// attack nodes the model contains, coils in natural switch-name order.
    pub fn for_model(model: &FeederModel) -> Result<MeterMap, RegMapError> {
        let nodes: Vec<&str> = ATTACK_NODES
            .iter()
            .copied()
            .filter(|n| model.bus_index(n).is_some())
            .collect();
        MeterMap::with_setpoints(model, &nodes)
    }

    pub fn with_setpoints(model: &FeederModel, nodes: &[&str]) -> Result<MeterMap, RegMapError> {
        let mut meters = Vec::new();
        for (i, bus) in model.buses().iter().enumerate() {
            for p in bus.phases.iter() {
                meters.push(Meter {
                    bus: bus.id.clone(),
                    bus_index: i,
                    phase: p,
                    register: VOLTAGE_BASE + meters.len() as u16,
                });
                if meters.len() > METER_SLOTS as usize {
                    return Err(RegMapError::TooManyMeters(model.meter_count()));
                }
            }
        }
        if nodes.len() > SETPOINT_SLOTS as usize {
            return Err(RegMapError::TooManySetpoints(nodes.len()));
        }
        let mut setpoints = Vec::new();
        for (k, node) in nodes.iter().enumerate() {
            let i = model
                .bus_index(node)
                .ok_or_else(|| RegMapError::UnknownNode(node.to_string()))?;
            let bus = model.bus(i);
            let phase = if bus.phases.len() == 1 {
                bus.phases.iter().next()
            } else {
                let loaded: Vec<Phase> =
                    bus.phases.iter().filter(|p| bus.load_kw[p.index()] > 0.0).collect();
                (loaded.len() == 1).then(|| loaded[0])
            }
            .ok_or_else(|| RegMapError::AmbiguousPhase(node.to_string()))?;
            let (p, q) = (bus.load_kw[phase.index()], bus.load_kvar[phase.index()]);
            setpoints.push(SetpointSlot {
                node: node.to_string(),
                bus_index: i,
                phase,
                register: SETPOINT_BASE + k as u16,
                q_per_p: if p > 0.0 { q / p } else { 0.0 },
            });
        }
        let model_order: Vec<String> = model.switch_names().map(str::to_string).collect();
        if model_order.len() > COIL_SLOTS as usize {
            return Err(RegMapError::TooManySwitches(model_order.len()));
        }
        let mut switches = model_order.clone();
        switches.sort_by(|a, b| natural_key(a).cmp(&natural_key(b)));
        Ok(MeterMap {
            meters,
            setpoints,
            switches,
            model_order,
            bus_count: model.buses().len(),
        })
    }

    pub fn meters(&self) -> &[Meter] {
        &self.meters
    }

    pub fn setpoints(&self) -> &[SetpointSlot] {
        &self.setpoints
    }

    /// Switch names in coil order; coil `k` is `switches()[k - 1]`.
    pub fn switches(&self) -> &[String] {
        &self.switches
    }

    pub fn coil_of(&self, switch: &str) -> Option<u16> {
        self.switches
            .iter()
            .position(|s| s == switch)
            .map(|k| COIL_BASE + k as u16)
    }

    pub fn setpoint_register(&self, node: &str) -> Option<u16> {
        self.setpoint_slot(node).map(|s| s.register)
    }

    pub fn setpoint_slot(&self, node: &str) -> Option<&SetpointSlot> {
        self.setpoints.iter().find(|s| s.node == node)
    }

    /// Setpoints (kW) the model's own loads correspond to.
    pub fn nominal_setpoints(&self, model: &FeederModel) -> Vec<u16> {
        self.setpoints
            .iter()
            .map(|s| model.bus(s.bus_index).load_kw[s.phase.index()].round() as u16)
            .collect()
    }

    /// Base loads with each attack node replaced by its commanded kW;
    /// reactive power follows at the node's nominal ratio.
    pub fn loads_from_setpoints(
        &self,
        model: &FeederModel,
        kw: &[u16],
    ) -> Result<LoadSet, RegMapError> {
        self.loads_from_setpoints_where(model, kw, |_| true)
    }

    /// As `loads_from_setpoints`, applying only the setpoints whose bus
    /// satisfies `keep` (a de-energized node draws nothing whatever it is
    /// commanded to).
    pub fn loads_from_setpoints_where(
        &self,
        model: &FeederModel,
        kw: &[u16],
        keep: impl Fn(usize) -> bool,
    ) -> Result<LoadSet, RegMapError> {
        if kw.len() != self.setpoints.len() {
            return Err(RegMapError::SetpointCount {
                expected: self.setpoints.len(),
                got: kw.len(),
            });
        }
        let mut loads = LoadSet::base(model);
        for (slot, &p) in self.setpoints.iter().zip(kw) {
            if !keep(slot.bus_index) {
                continue;
            }
            let p = p as f64;
            loads.set_phase(slot.bus_index, slot.phase, p, p * slot.q_per_p);
        }
        Ok(loads)
    }

    /// Coil states for a switch configuration.
    pub fn coils_for(&self, config: &SwitchConfig) -> Result<Vec<bool>, RegMapError> {
        let mut coils = vec![false; COIL_SLOTS as usize];
        for (k, name) in self.switches.iter().enumerate() {
            let state = config
                .get(name)
                .ok_or_else(|| RegMapError::UnknownSwitch(name.clone()))?;
            coils[k] = state.is_closed();
        }
        Ok(coils)
    }

    /// Switch configuration encoded by a coil block, in model switch order.
    pub fn config_from_coils(&self, coils: &[bool]) -> SwitchConfig {
        SwitchConfig::new(self.model_order.iter().map(|name| {
            let k = self.switches.iter().position(|s| s == name).unwrap_or(usize::MAX);
            let closed = coils.get(k).copied().unwrap_or(false);
            (name.clone(), SwitchState::from_closed(closed))
        }))
    }

    /// Violations over meter readings; zero readings are outages, not
    /// violations.
    pub fn violations(&self, magnitudes: &[f64], band: VoltageBand) -> usize {
        magnitudes
            .iter()
            .filter(|m| **m > 0.0 && !band.contains(**m))
            .count()
    }

    /// Largest unbalance over buses metered on all three phases.
    pub fn max_unbalance(&self, magnitudes: &[f64]) -> Option<(String, f64)> {
        let mut best: Option<(String, f64)> = None;
        let mut k = 0;
        while k < self.meters.len() {
            let bus = self.meters[k].bus_index;
            let mut end = k;
            while end < self.meters.len() && self.meters[end].bus_index == bus {
                end += 1;
            }
            if end - k == 3 && end <= magnitudes.len() {
                let v = [magnitudes[k], magnitudes[k + 1], magnitudes[k + 2]];
                if let Ok(u) = unbalance_at(v) {
                    if best.as_ref().is_none_or(|b| u > b.1) {
                        best = Some((self.meters[k].bus.clone(), u));
                    }
                }
            }
            k = end;
        }
        best
    }
}

fn natural_key(name: &str) -> (String, u64, String) {
    let split = name
        .find(|c: char| c.is_ascii_digit())
        .unwrap_or(name.len());
    let (prefix, digits) = name.split_at(split);
    let end = digits
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(digits.len());
    let n = digits[..end].parse().unwrap_or(0);
    (prefix.to_string(), n, digits[end..].to_string())
}

/// Snapshot of everything a Modbus client can read.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegisterImage {
    voltages: Vec<u16>,
    setpoints: Vec<u16>,
    status: u16,
    floats: Vec<u16>,
    coils: Vec<bool>,
    order: WordOrder,
}

impl RegisterImage {
    /// All-zero image, used before the first solve.
    pub fn empty(order: WordOrder) -> Self {
        RegisterImage {
            voltages: vec![0; METER_SLOTS as usize],
            setpoints: vec![0; SETPOINT_SLOTS as usize],
            status: 0,
            floats: vec![0; FLOAT_REGISTERS as usize],
            coils: vec![false; COIL_SLOTS as usize],
            order,
        }
    }

    pub fn word_order(&self) -> WordOrder {
        self.order
    }

    pub fn is_stale(&self) -> bool {
        self.status == 1
    }

    pub fn set_stale(&mut self, stale: bool) {
        self.status = stale as u16;
    }

    pub fn voltage_words(&self) -> &[u16] {
        &self.voltages
    }

    pub fn float_words(&self) -> &[u16] {
        &self.floats
    }

    pub fn setpoint_words(&self) -> &[u16] {
        &self.setpoints
    }

    pub fn coils(&self) -> &[bool] {
        &self.coils
    }

    pub fn set_setpoints(&mut self, kw: &[u16]) {
        for (slot, v) in self.setpoints.iter_mut().zip(kw) {
            *slot = *v;
        }
    }

    pub fn set_coils(&mut self, coils: &[bool]) {
        for (slot, v) in self.coils.iter_mut().zip(coils) {
            *slot = *v;
        }
    }

    /// Copies measurement registers (scaled block and float mirror) from
    /// another image, leaving setpoints, coils and status alone.
    pub fn copy_measurements(&mut self, other: &RegisterImage) {
        self.voltages.clone_from(&other.voltages);
        self.floats.clone_from(&other.floats);
    }

    fn block(&self, register: u16) -> Option<(u16, Vec<u16>)> {
        match register {
            1..=215 => {
                let mut words = self.voltages.clone();
                words.extend_from_slice(&self.setpoints);
                Some((VOLTAGE_BASE, words))
            }
            STATUS_REGISTER => Some((STATUS_REGISTER, vec![self.status])),
            r if (FLOAT_BASE..FLOAT_BASE + FLOAT_REGISTERS).contains(&r) => {
                Some((FLOAT_BASE, self.floats.clone()))
            }
            _ => None,
        }
    }

    /// Holding-register read. A read must stay inside one block.
    pub fn read_holding(&self, register: u16, qty: u16) -> Result<Vec<u16>, AccessError> {
        if qty == 0 || qty > MAX_READ_REGISTERS {
            return Err(AccessError::IllegalValue);
        }
        let (base, words) = self.block(register).ok_or(AccessError::IllegalAddress)?;
        let off = (register - base) as usize;
        if off + qty as usize > words.len() {
            return Err(AccessError::IllegalValue);
        }
        Ok(words[off..off + qty as usize].to_vec())
    }

    pub fn read_coils(&self, coil: u16, qty: u16) -> Result<Vec<bool>, AccessError> {
        if qty == 0 || qty > MAX_READ_COILS {
            return Err(AccessError::IllegalValue);
        }
        if !(COIL_BASE..COIL_BASE + COIL_SLOTS).contains(&coil) {
            return Err(AccessError::IllegalAddress);
        }
        let off = (coil - COIL_BASE) as usize;
        if off + qty as usize > self.coils.len() {
            return Err(AccessError::IllegalValue);
        }
        Ok(self.coils[off..off + qty as usize].to_vec())
    }

    /// Setpoint slot offsets for a register write, or why it is refused.
    pub fn writable_setpoints(register: u16, qty: u16) -> Result<usize, AccessError> {
        if qty == 0 || qty > 123 {
            return Err(AccessError::IllegalValue);
        }
        let end = register as u32 + qty as u32;
        if register < SETPOINT_BASE || end > (SETPOINT_BASE + SETPOINT_SLOTS) as u32 {
            return Err(AccessError::IllegalAddress);
        }
        Ok((register - SETPOINT_BASE) as usize)
    }

    pub fn writable_coils(coil: u16, qty: u16) -> Result<usize, AccessError> {
        if qty == 0 || qty > 1968 {
            return Err(AccessError::IllegalValue);
        }
        let end = coil as u32 + qty as u32;
        if coil < COIL_BASE || end > (COIL_BASE + COIL_SLOTS) as u32 {
            return Err(AccessError::IllegalAddress);
        }
        Ok((coil - COIL_BASE) as usize)
    }
}

/// Register image for a solved network state.
pub fn build_image(
    solution: &VoltageSolution,
    setpoints_kw: &[u16],
    config: &SwitchConfig,
    map: &MeterMap,
    order: WordOrder,
) -> Result<RegisterImage, RegMapError> {
    if solution.buses.len() != map.bus_count {
        return Err(RegMapError::SolutionMismatch(format!(
            "{} buses in solution, {} in map",
            solution.buses.len(),
            map.bus_count
        )));
    }
    if setpoints_kw.len() != map.setpoints.len() {
        return Err(RegMapError::SetpointCount {
            expected: map.setpoints.len(),
            got: setpoints_kw.len(),
        });
    }
    let mut image = RegisterImage::empty(order);
    for (k, m) in map.meters.iter().enumerate() {
        let bus = &solution.buses[m.bus_index];
        if bus.id != m.bus {
            return Err(RegMapError::SolutionMismatch(format!(
                "slot {} expects `{}`, found `{}`",
                k, m.bus, bus.id
            )));
        }
        let pu = bus.magnitude(m.phase);
        image.voltages[k] = encode_voltage_word(pu)?;
        let pair = encode_float_pair(pu as f32, order)?;
        image.floats[2 * k] = pair[0];
        image.floats[2 * k + 1] = pair[1];
    }
    image.set_setpoints(setpoints_kw);
    image.set_coils(&map.coils_for(config)?);
    Ok(image)
}

/// Markdown reference table of the register layout for `map`.
pub fn register_map_markdown(map: &MeterMap, model: &FeederModel) -> String {
    let mut s = String::new();
    let name = model.name().unwrap_or("feeder");
    let _ = writeln!(s, "# Register map: {name}\n");
    let _ = writeln!(
        s,
        "Holding registers and coils are numbered from 1; the wire address is the number minus 1.\n\
         A single read may cover at most {MAX_READ_REGISTERS} registers and must stay inside one block.\n"
    );
    let _ = writeln!(s, "## Blocks\n");
    let _ = writeln!(s, "| Registers | Type | Access | Units | Scaling |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    let _ = writeln!(
        s,
        "| {}-{} | UINT16 | read | pu | value / 10000 |",
        VOLTAGE_BASE,
        VOLTAGE_BASE + METER_SLOTS - 1
    );
    let _ = writeln!(
        s,
        "| {}-{} | UINT16 | read/write | kW | 1 |",
        SETPOINT_BASE,
        SETPOINT_BASE + SETPOINT_SLOTS - 1
    );
    let _ = writeln!(s, "| {STATUS_REGISTER} | UINT16 | read | flag | 1 = voltages stale (last solve did not converge) |");
    let _ = writeln!(
        s,
        "| {}-{} | FLOAT32 pairs | read | pu | IEEE 754 single, high word first by default |",
        FLOAT_BASE,
        FLOAT_BASE + FLOAT_REGISTERS - 1
    );
    let _ = writeln!(s, "| coils {}-{} | BOOL | read/write | - | 1 = switch closed |\n", COIL_BASE, COIL_BASE + COIL_SLOTS - 1);

    let _ = writeln!(s, "## Coils\n");
    let _ = writeln!(s, "| Coil | Switch |");
    let _ = writeln!(s, "|---|---|");
    for (k, sw) in map.switches.iter().enumerate() {
        let _ = writeln!(s, "| {} | {} |", COIL_BASE + k as u16, sw);
    }
    let _ = writeln!(s, "\n## Setpoints\n");
    let _ = writeln!(s, "| Register | Node | Phase |");
    let _ = writeln!(s, "|---|---|---|");
    for sp in &map.setpoints {
        let _ = writeln!(s, "| {} | {} | {} |", sp.register, sp.node, sp.phase);
    }
    let _ = writeln!(s, "\n## Meters\n");
    let _ = writeln!(s, "| Register | Float registers | Bus | Phase |");
    let _ = writeln!(s, "|---|---|---|---|");
    for (k, m) in map.meters.iter().enumerate() {
        let f = FLOAT_BASE + 2 * k as u16;
        let _ = writeln!(s, "| {} | {}-{} | {} | {} |", m.register, f, f + 1, m.bus, m.phase);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voltage_words() {
        assert_eq!(encode_voltage_word(1.0).unwrap(), 10000);
        assert_eq!(encode_voltage_word(0.95).unwrap(), 9500);
        assert_eq!(encode_voltage_word(1.05).unwrap(), 10500);
        assert_eq!(encode_voltage_word(0.98765).unwrap(), 9877);
        assert_eq!(decode_voltage_word(9877), 0.9877);
        assert_eq!(encode_voltage_word(6.5535).unwrap(), 65535);
        assert!(encode_voltage_word(6.5536).is_err());
        assert!(encode_voltage_word(-0.001).is_err());
        assert!(encode_voltage_word(f64::NAN).is_err());
    }

    #[test]
    fn float_pairs() {
        let hl = WordOrder::HighFirst;
        assert_eq!(encode_float_pair(1.0, hl).unwrap(), [0x3F80, 0x0000]);
        assert_eq!(encode_float_pair(0.0, hl).unwrap(), [0, 0]);
        assert_eq!(encode_float_pair(-2.5, hl).unwrap(), [0xC020, 0x0000]);
        assert_eq!(encode_float_pair(1.0, WordOrder::LowFirst).unwrap(), [0x0000, 0x3F80]);
        assert!(encode_float_pair(f32::INFINITY, hl).is_err());
        assert!(encode_float_pair(f32::NAN, hl).is_err());
        assert_eq!(decode_float_pair([0xC020, 0], hl), -2.5);
    }

    #[test]
    fn chunk_plans() {
        assert_eq!(plan_chunked_read(1, 206, 125), vec![(1, 125), (126, 81)]);
        assert_eq!(plan_chunked_read(1, 100, 125), vec![(1, 100)]);
        assert_eq!(
            plan_chunked_read(1001, 412, 125),
            vec![(1001, 125), (1126, 125), (1251, 125), (1376, 37)]
        );
        assert!(plan_chunked_read(1, 0, 125).is_empty());
    }

    #[test]
    fn natural_order() {
        let mut v = vec!["S10", "S2", "S1", "T1"];
        v.sort_by(|a, b| natural_key(a).cmp(&natural_key(b)));
        assert_eq!(v, ["S1", "S2", "S10", "T1"]);
    }

    #[test]
    fn access_rules() {
        let img = RegisterImage::empty(WordOrder::HighFirst);
        assert_eq!(img.read_holding(1, 125).unwrap().len(), 125);
        assert_eq!(img.read_holding(1, 126), Err(AccessError::IllegalValue));
        assert_eq!(img.read_holding(201, 16), Err(AccessError::IllegalValue));
        assert_eq!(img.read_holding(207, 9).unwrap().len(), 9);
        assert_eq!(img.read_holding(216, 1), Err(AccessError::IllegalAddress));
        assert_eq!(img.read_holding(0, 1), Err(AccessError::IllegalAddress));
        assert_eq!(img.read_holding(500, 1).unwrap(), vec![0]);
        assert_eq!(img.read_holding(500, 2), Err(AccessError::IllegalValue));
        assert_eq!(img.read_holding(1376, 37).unwrap().len(), 37);
        assert_eq!(img.read_holding(1376, 38), Err(AccessError::IllegalValue));
        assert_eq!(img.read_holding(1413, 1), Err(AccessError::IllegalAddress));
        assert_eq!(img.read_coils(1, 8).unwrap().len(), 8);
        assert_eq!(img.read_coils(9, 1), Err(AccessError::IllegalAddress));
        assert_eq!(img.read_coils(2, 8), Err(AccessError::IllegalValue));
        assert_eq!(RegisterImage::writable_setpoints(207, 9), Ok(0));
        assert_eq!(RegisterImage::writable_setpoints(1, 1), Err(AccessError::IllegalAddress));
        assert_eq!(RegisterImage::writable_setpoints(215, 2), Err(AccessError::IllegalAddress));
        assert_eq!(RegisterImage::writable_coils(8, 1), Ok(7));
        assert_eq!(RegisterImage::writable_coils(8, 2), Err(AccessError::IllegalAddress));
    }
}
