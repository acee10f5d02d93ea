//! Feeder data model, JSON ingestion and topology derivation.
//!
//! A [`FeederModel`] is immutable once loaded. Switch positions live in a
//! separate [`SwitchConfig`]; combining the two yields a [`TopologyView`]
//! which knows the active edge set, the energized buses and the connected
//! components.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Buses a load-altering attacker controls, in register order.
pub const ATTACK_NODES: [&str; 9] = [
    "N102", "N103", "N104", "N106", "N107", "N99", "N109", "N111", "N114",
];

/// The IEEE 123-bus-like feeder shipped with the crate.
pub const BUNDLED_FEEDER: &str = include_str!("../fixtures/ieee123_like.json");

#[derive(Debug, Error, PartialEq)]
pub enum FeederError {
    #[error("malformed feeder document: {0}")]
    Schema(String),
    #[error("invalid base quantities: {0}")]
    InvalidBase(String),
    #[error("duplicate bus id `{0}`")]
    DuplicateBus(String),
    #[error("bus `{bus}` has invalid phase set `{phases}`")]
    InvalidPhases { bus: String, phases: String },
    #[error("bus `{bus}` carries load on phase {phase} which it does not have")]
    LoadOnAbsentPhase { bus: String, phase: Phase },
    #[error("bus `{bus}` has negative or non-finite load on phase {phase}")]
    InvalidLoad { bus: String, phase: Phase },
    #[error("source bus `{0}` is not in the bus list")]
    UnknownSource(String),
    #[error("branch #{index} references unknown bus `{bus}`")]
    DanglingEndpoint { index: usize, bus: String },
    #[error("branch #{index} connects bus `{bus}` to itself")]
    SelfLoop { index: usize, bus: String },
    #[error("branch #{index} ({from} -> {to}) shares no phase between its endpoints")]
    NoCommonPhase { index: usize, from: String, to: String },
    #[error("branch #{index} has an asymmetric or non-finite impedance matrix")]
    BadImpedance { index: usize },
    #[error("duplicate switch name `{0}`")]
    DuplicateSwitch(String),
    #[error("switch `{0}` must have zero impedance")]
    SwitchImpedance(String),
    #[error("`normal` given on branch #{0} which is not a switch")]
    NormalWithoutSwitch(usize),
    #[error("switch configuration does not match the model (missing: {missing:?}, extra: {extra:?})")]
    ConfigMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("unknown switch `{0}`")]
    UnknownSwitch(String),
    #[error("bus index {0} out of range")]
    BusOutOfRange(usize),
    #[error("i/o error reading feeder file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            Phase::A => 'A',
            Phase::B => 'B',
            Phase::C => 'C',
        }
    }

    pub fn from_char(c: char) -> Option<Phase> {
        match c.to_ascii_uppercase() {
            'A' => Some(Phase::A),
            'B' => Some(Phase::B),
            'C' => Some(Phase::C),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Subset of {A, B, C} stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn empty() -> Self {
        PhaseSet(0)
    }

    pub fn single(p: Phase) -> Self {
        PhaseSet(1 << p.index())
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn insert(&mut self, p: Phase) {
        self.0 |= 1 << p.index();
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 & other.0)
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    /// Parses strings such as `"ABC"`, `"c"` or `"AB"`. Repeated or unknown
    /// letters are rejected.
    pub fn parse(s: &str) -> Option<PhaseSet> {
        let mut set = PhaseSet::empty();
        for c in s.chars() {
            let p = Phase::from_char(c)?;
            if set.contains(p) {
                return None;
            }
            set.insert(p);
        }
        if set.is_empty() {
            None
        } else {
            Some(set)
        }
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p)?;
        }
        Ok(())
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PhaseSet::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid phase set `{}`", s)))
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseSet({})", self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchState {
    Open,
    Closed,
}

impl SwitchState {
    pub fn is_closed(self) -> bool {
        self == SwitchState::Closed
    }

    pub fn from_closed(closed: bool) -> Self {
        if closed {
            SwitchState::Closed
        } else {
            SwitchState::Open
        }
    }

    pub fn toggled(self) -> Self {
        Self::from_closed(!self.is_closed())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    /// Constant-power load per phase, indexed A/B/C.
    pub load_kw: [f64; 3],
    pub load_kvar: [f64; 3],
}

impl Bus {
    pub fn has_load(&self) -> bool {
        self.load_kw
            .iter()
            .chain(self.load_kvar.iter())
            .any(|v| *v != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BranchKind {
    Line,
    Switch { name: String, normal: SwitchState },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Phases shared by both endpoints; only these carry current.
    pub phases: PhaseSet,
    pub r_ohm: [[f64; 3]; 3],
    pub x_ohm: [[f64; 3]; 3],
    pub kind: BranchKind,
}

impl Branch {
    pub fn switch_name(&self) -> Option<&str> {
        match &self.kind {
            BranchKind::Switch { name, .. } => Some(name),
            BranchKind::Line => None,
        }
    }

    pub fn is_switch(&self) -> bool {
        matches!(self.kind, BranchKind::Switch { .. })
    }

    pub fn impedance_ohm(&self) -> [[Complex64; 3]; 3] {
        let mut z = [[Complex64::new(0.0, 0.0); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                z[i][j] = Complex64::new(self.r_ohm[i][j], self.x_ohm[i][j]);
            }
        }
        z
    }

    /// The endpoint opposite `bus`.
    pub fn other(&self, bus: usize) -> usize {
        if self.from == bus {
            self.to
        } else {
            self.from
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    name: Option<String>,
    description: Option<String>,
    base_kv_ln: f64,
    base_kva: f64,
    source: usize,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    /// Branch indices of switches, in document order.
    switches: Vec<usize>,
    index: HashMap<String, usize>,
    /// Per bus: (neighbour, branch index), sorted by branch index.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl FeederModel {
    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn base_kv_ln(&self) -> f64 {
        self.base_kv_ln
    }

    /// Three-phase base power in kVA.
    pub fn base_kva(&self) -> f64 {
        self.base_kva
    }

    /// Per-phase base power in VA.
    pub fn base_va_per_phase(&self) -> f64 {
        self.base_kva * 1e3 / 3.0
    }

    /// Base impedance in ohms, from the line-to-neutral voltage and
    /// per-phase power bases.
    pub fn base_impedance_ohm(&self) -> f64 {
        let v = self.base_kv_ln * 1e3;
        v * v / self.base_va_per_phase()
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn bus(&self, i: usize) -> &Bus {
        &self.buses[i]
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn adjacency(&self, bus: usize) -> &[(usize, usize)] {
        &self.adjacency[bus]
    }

    pub fn switch_count(&self) -> usize {
        self.switches.len()
    }

    /// Branch indices of the switches in document order.
    pub fn switch_branches(&self) -> &[usize] {
        &self.switches
    }

    pub fn switch_names(&self) -> impl Iterator<Item = &str> + '_ {
        self.switches
            .iter()
            .map(move |&b| self.branches[b].switch_name().unwrap())
    }

    pub fn switch_branch(&self, name: &str) -> Option<usize> {
        self.switches
            .iter()
            .copied()
            .find(|&b| self.branches[b].switch_name() == Some(name))
    }

    /// Number of (bus, phase) measurement points.
    pub fn meter_count(&self) -> usize {
        self.buses.iter().map(|b| b.phases.len()).sum()
    }

    pub fn normal_config(&self) -> SwitchConfig {
        SwitchConfig::new(self.switches.iter().map(|&b| match &self.branches[b].kind {
            BranchKind::Switch { name, normal } => (name.clone(), *normal),
            BranchKind::Line => unreachable!(),
        }))
    }

    /// A config with every switch set to `state`.
    pub fn uniform_config(&self, state: SwitchState) -> SwitchConfig {
        SwitchConfig::new(self.switch_names().map(|n| (n.to_string(), state)))
    }

    /// Config built from closed flags in model switch order.
    pub fn config_from_mask(&self, closed: &[bool]) -> SwitchConfig {
        assert_eq!(closed.len(), self.switches.len(), "mask length");
        SwitchConfig::new(
            self.switch_names()
                .zip(closed)
                .map(|(n, &c)| (n.to_string(), SwitchState::from_closed(c))),
        )
    }

    /// Closed flags in model switch order.
    pub fn config_mask(&self, config: &SwitchConfig) -> Result<Vec<bool>, FeederError> {
        self.check_config(config)?;
        Ok(self
            .switch_names()
            .map(|n| config.get(n).unwrap().is_closed())
            .collect())
    }

    pub fn check_config(&self, config: &SwitchConfig) -> Result<(), FeederError> {
        let names: HashSet<&str> = self.switch_names().collect();
        let missing: Vec<String> = self
            .switch_names()
            .filter(|n| config.get(n).is_none())
            .map(str::to_string)
            .collect();
        let extra: Vec<String> = config
            .iter()
            .filter(|(n, _)| !names.contains(n.as_str()))
            .map(|(n, _)| n.clone())
            .collect();
        if missing.is_empty() && extra.is_empty() {
            Ok(())
        } else {
            Err(FeederError::ConfigMismatch { missing, extra })
        }
    }

    /// Adjacent bus pairs, one per branch, for [`radiality_product`].
    pub fn adjacent_pairs(&self) -> Vec<AdjacentPair> {
        self.branches
            .iter()
            .map(|b| AdjacentPair {
                i: b.from,
                j: b.to,
                switch: b.switch_name().map(str::to_string),
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self, FeederError> {
        load_feeder(text)
    }

    pub fn bundled() -> Self {
        load_feeder(BUNDLED_FEEDER).expect("bundled feeder is valid")
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, FeederError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| FeederError::Io(format!("{}: {}", path.as_ref().display(), e)))?;
        load_feeder(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("feeder serializes")
    }

    fn to_doc(&self) -> FeederDoc {
        FeederDoc {
            name: self.name.clone(),
            description: self.description.clone(),
            base_kv_ln: self.base_kv_ln,
            base_kva: self.base_kva,
            source: self.buses[self.source].id.clone(),
            buses: self
                .buses
                .iter()
                .map(|b| BusDoc {
                    id: b.id.clone(),
                    phases: b.phases.to_string(),
                    load_kw: b.load_kw,
                    load_kvar: b.load_kvar,
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|br| {
                    let (switch, normal) = match &br.kind {
                        BranchKind::Line => (None, None),
                        BranchKind::Switch { name, normal } => (Some(name.clone()), Some(*normal)),
                    };
                    BranchDoc {
                        from: self.buses[br.from].id.clone(),
                        to: self.buses[br.to].id.clone(),
                        r_ohm: br.r_ohm,
                        x_ohm: br.x_ohm,
                        switch,
                        normal,
                    }
                })
                .collect(),
        }
    }
}

/// Parses and validates a feeder description document.
pub fn load_feeder(text: &str) -> Result<FeederModel, FeederError> {
    let doc: FeederDoc =
        serde_json::from_str(text).map_err(|e| FeederError::Schema(e.to_string()))?;
    build_model(doc)
}

fn build_model(doc: FeederDoc) -> Result<FeederModel, FeederError> {
    if !(doc.base_kv_ln.is_finite() && doc.base_kv_ln > 0.0) {
        return Err(FeederError::InvalidBase(format!("base_kv_ln = {}", doc.base_kv_ln)));
    }
    if !(doc.base_kva.is_finite() && doc.base_kva > 0.0) {
        return Err(FeederError::InvalidBase(format!("base_kva = {}", doc.base_kva)));
    }

    let mut index = HashMap::new();
    let mut buses = Vec::with_capacity(doc.buses.len());
    for b in doc.buses {
        if index.contains_key(&b.id) {
            return Err(FeederError::DuplicateBus(b.id));
        }
        let phases = PhaseSet::parse(&b.phases).ok_or_else(|| FeederError::InvalidPhases {
            bus: b.id.clone(),
            phases: b.phases.clone(),
        })?;
        for p in Phase::ALL {
            let (kw, kvar) = (b.load_kw[p.index()], b.load_kvar[p.index()]);
            if !kw.is_finite() || kw < 0.0 || !kvar.is_finite() {
                return Err(FeederError::InvalidLoad { bus: b.id, phase: p });
            }
            if (kw != 0.0 || kvar != 0.0) && !phases.contains(p) {
                return Err(FeederError::LoadOnAbsentPhase { bus: b.id, phase: p });
            }
        }
        index.insert(b.id.clone(), buses.len());
        buses.push(Bus {
            id: b.id,
            phases,
            load_kw: b.load_kw,
            load_kvar: b.load_kvar,
        });
    }

    let source = *index
        .get(&doc.source)
        .ok_or_else(|| FeederError::UnknownSource(doc.source.clone()))?;

    let mut branches = Vec::with_capacity(doc.branches.len());
    let mut switches = Vec::new();
    let mut switch_names = HashSet::new();
    for (i, br) in doc.branches.into_iter().enumerate() {
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| FeederError::DanglingEndpoint {
                    index: i,
                    bus: id.to_string(),
                })
        };
        let from = lookup(&br.from)?;
        let to = lookup(&br.to)?;
        if from == to {
            return Err(FeederError::SelfLoop { index: i, bus: br.from });
        }
        let phases = buses[from].phases.intersection(buses[to].phases);
        if phases.is_empty() {
            return Err(FeederError::NoCommonPhase {
                index: i,
                from: br.from,
                to: br.to,
            });
        }
        for r in 0..3 {
            for c in 0..3 {
                let (a, b) = (br.r_ohm[r][c], br.r_ohm[c][r]);
                let (x, y) = (br.x_ohm[r][c], br.x_ohm[c][r]);
                if !(a.is_finite() && x.is_finite()) || a != b || x != y {
                    return Err(FeederError::BadImpedance { index: i });
                }
            }
        }
        let kind = match br.switch {
            Some(name) => {
                if !switch_names.insert(name.clone()) {
                    return Err(FeederError::DuplicateSwitch(name));
                }
                let zero = br.r_ohm.iter().chain(br.x_ohm.iter()).flatten().all(|v| *v == 0.0);
                if !zero {
                    return Err(FeederError::SwitchImpedance(name));
                }
                switches.push(i);
                BranchKind::Switch {
                    name,
                    normal: br.normal.unwrap_or(SwitchState::Closed),
                }
            }
            None => {
                if br.normal.is_some() {
                    return Err(FeederError::NormalWithoutSwitch(i));
                }
                BranchKind::Line
            }
        };
        branches.push(Branch {
            from,
            to,
            phases,
            r_ohm: br.r_ohm,
            x_ohm: br.x_ohm,
            kind,
        });
    }

    let mut adjacency = vec![Vec::new(); buses.len()];
    for (i, br) in branches.iter().enumerate() {
        adjacency[br.from].push((br.to, i));
        adjacency[br.to].push((br.from, i));
    }

    Ok(FeederModel {
        name: doc.name,
        description: doc.description,
        base_kv_ln: doc.base_kv_ln,
        base_kva: doc.base_kva,
        source,
        buses,
        branches,
        switches,
        index,
        adjacency,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeederDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    base_kv_ln: f64,
    base_kva: f64,
    source: String,
    buses: Vec<BusDoc>,
    branches: Vec<BranchDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusDoc {
    id: String,
    phases: String,
    #[serde(default)]
    load_kw: [f64; 3],
    #[serde(default)]
    load_kvar: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchDoc {
    from: String,
    to: String,
    #[serde(default)]
    r_ohm: [[f64; 3]; 3],
    #[serde(default)]
    x_ohm: [[f64; 3]; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    switch: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normal: Option<SwitchState>,
}

/// Switch positions keyed by name. Order is preserved as given.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SwitchConfig {
    states: Vec<(String, SwitchState)>,
}

impl SwitchConfig {
    pub fn new<I, S>(states: I) -> Self
    where
        I: IntoIterator<Item = (S, SwitchState)>,
        S: Into<String>,
    {
        SwitchConfig {
            states: states.into_iter().map(|(n, s)| (n.into(), s)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<SwitchState> {
        self.states
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
    }

    pub fn set(&mut self, name: &str, state: SwitchState) -> Result<(), FeederError> {
        match self.states.iter_mut().find(|(n, _)| n == name) {
            Some(entry) => {
                entry.1 = state;
                Ok(())
            }
            None => Err(FeederError::UnknownSwitch(name.to_string())),
        }
    }

    pub fn with(mut self, name: &str, state: SwitchState) -> Result<Self, FeederError> {
        self.set(name, state)?;
        Ok(self)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, SwitchState)> {
        self.states.iter()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn closed(&self) -> Vec<&str> {
        self.states
            .iter()
            .filter(|(_, s)| s.is_closed())
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

impl fmt::Display for SwitchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (n, s)) in self.states.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}={}", n, if s.is_closed() { "on" } else { "off" })?;
        }
        Ok(())
    }
}

/// Network state after applying a [`SwitchConfig`].
#[derive(Debug, Clone)]
pub struct TopologyView<'a> {
    model: &'a FeederModel,
    active: Vec<bool>,
    component: Vec<usize>,
    component_count: usize,
}

/// Applies switch positions to the model and derives connectivity.
pub fn apply_switch_config<'a>(
    model: &'a FeederModel,
    config: &SwitchConfig,
) -> Result<TopologyView<'a>, FeederError> {
    model.check_config(config)?;
    let active = model
        .branches
        .iter()
        .map(|b| match &b.kind {
            BranchKind::Line => true,
            BranchKind::Switch { name, .. } => config.get(name).unwrap().is_closed(),
        })
        .collect();
    Ok(TopologyView::from_active(model, active))
}

impl<'a> TopologyView<'a> {
    fn from_active(model: &'a FeederModel, active: Vec<bool>) -> Self {
        let n = model.buses.len();
        let mut component = vec![usize::MAX; n];
        let mut count = 0;
        // The source's component is always 0.
        let order = std::iter::once(model.source).chain((0..n).filter(|&b| b != model.source));
        for start in order {
            if component[start] != usize::MAX {
                continue;
            }
            component[start] = count;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &(v, br) in &model.adjacency[u] {
                    if active[br] && component[v] == usize::MAX {
                        component[v] = count;
                        queue.push_back(v);
                    }
                }
            }
            count += 1;
        }
        TopologyView {
            model,
            active,
            component,
            component_count: count,
        }
    }

    pub fn model(&self) -> &'a FeederModel {
        self.model
    }

    pub fn is_active(&self, branch: usize) -> bool {
        self.active[branch]
    }

    pub fn active_branches(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.active.len()).filter(move |&i| self.active[i])
    }

    pub fn is_energized(&self, bus: usize) -> bool {
        self.component[bus] == 0
    }

    pub fn energized(&self) -> Vec<usize> {
        (0..self.component.len())
            .filter(|&b| self.is_energized(b))
            .collect()
    }

    pub fn energized_count(&self) -> usize {
        self.component.iter().filter(|&&c| c == 0).count()
    }

    pub fn component_of(&self, bus: usize) -> usize {
        self.component[bus]
    }

    pub fn component_count(&self) -> usize {
        self.component_count
    }

    /// Buses grouped by connected component; the first group holds the source.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.component_count];
        for (b, &c) in self.component.iter().enumerate() {
            groups[c].push(b);
        }
        groups
    }

    /// True when every bus carrying base load is energized.
    pub fn all_loads_energized(&self) -> bool {
        self.model
            .buses
            .iter()
            .enumerate()
            .all(|(i, b)| !b.has_load() || self.is_energized(i))
    }

    /// Number of active branches inside the energized component.
    pub fn energized_edge_count(&self) -> usize {
        self.active_branches()
            .filter(|&br| self.is_energized(self.model.branches[br].from))
            .count()
    }

    /// Spanning-tree test: the energized subgraph reaches every load bus and
    /// has exactly one fewer edge than it has buses.
    pub fn is_radial(&self) -> bool {
        self.all_loads_energized() && self.energized_edge_count() + 1 == self.energized_count()
    }
}

/// One adjacency entry for the product-form radiality indicator. Lines are
/// represented with `switch: None` and count as permanently closed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacentPair {
    pub i: usize,
    pub j: usize,
    pub switch: Option<String>,
}

/// Literal evaluation of R = prod (1 - d(V_i,0) d(V_j,0) (1 - S_ij)), where
/// d is the Kronecker delta. `magnitudes` is indexed by bus.
pub fn radiality_product(
    magnitudes: &[f64],
    pairs: &[AdjacentPair],
    config: &SwitchConfig,
) -> Result<u8, FeederError> {
    let delta_zero = |v: f64| if v == 0.0 { 1u8 } else { 0u8 };
    let mut r = 1u8;
    for pair in pairs {
        let vi = *magnitudes.get(pair.i).ok_or(FeederError::BusOutOfRange(pair.i))?;
        let vj = *magnitudes.get(pair.j).ok_or(FeederError::BusOutOfRange(pair.j))?;
        let s = match &pair.switch {
            None => 1u8,
            Some(name) => config
                .get(name)
                .ok_or_else(|| FeederError::UnknownSwitch(name.clone()))?
                .is_closed() as u8,
        };
        r *= 1 - delta_zero(vi) * delta_zero(vj) * (1 - s);
    }
    Ok(r)
}

/// [`radiality_product`] over every branch of the model.
pub fn radiality_indicator(
    model: &FeederModel,
    magnitudes: &[f64],
    config: &SwitchConfig,
) -> Result<u8, FeederError> {
    radiality_product(magnitudes, &model.adjacent_pairs(), config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"{
        "base_kv_ln": 2.4018, "base_kva": 1000, "source": "B0",
        "buses": [
            {"id": "B0", "phases": "ABC"},
            {"id": "B1", "phases": "A", "load_kw": [100, 0, 0], "load_kvar": [0, 0, 0]}
        ],
        "branches": [
            {"from": "B0", "to": "B1",
             "r_ohm": [[0.173,0,0],[0,0,0],[0,0,0]], "x_ohm": [[0.173,0,0],[0,0,0],[0,0,0]]}
        ]
    }"#;

    #[test]
    fn two_bus_document_loads() {
        let m = load_feeder(TWO_BUS).unwrap();
        assert_eq!(m.buses().len(), 2);
        assert_eq!(m.branches().len(), 1);
        assert_eq!(m.switch_count(), 0);
        assert_eq!(m.branches()[0].phases, PhaseSet::single(Phase::A));
        assert_eq!(m.meter_count(), 4);
    }

    #[test]
    fn dangling_endpoint_names_the_bus() {
        let text = TWO_BUS.replace(r#""to": "B1""#, r#""to": "B9""#);
        match load_feeder(&text) {
            Err(FeederError::DanglingEndpoint { bus, .. }) => assert_eq!(bus, "B9"),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn rejects_bad_documents() {
        let dup = TWO_BUS.replace(r#""id": "B1""#, r#""id": "B0""#);
        assert_eq!(load_feeder(&dup), Err(FeederError::DuplicateBus("B0".into())));

        let src = TWO_BUS.replace(r#""source": "B0""#, r#""source": "X""#);
        assert_eq!(load_feeder(&src), Err(FeederError::UnknownSource("X".into())));

        let no_src = TWO_BUS.replace(r#""source": "B0","#, "");
        assert!(matches!(load_feeder(&no_src), Err(FeederError::Schema(_))));

        let phases = TWO_BUS.replace(r#""phases": "A""#, r#""phases": "AX""#);
        assert!(matches!(load_feeder(&phases), Err(FeederError::InvalidPhases { .. })));

        let absent = TWO_BUS.replace("[100, 0, 0]", "[0, 100, 0]");
        assert!(matches!(
            load_feeder(&absent),
            Err(FeederError::LoadOnAbsentPhase { phase: Phase::B, .. })
        ));

        let asym = TWO_BUS.replace(
            r#""r_ohm": [[0.173,0,0],[0,0,0],[0,0,0]]"#,
            r#""r_ohm": [[0.173,0.1,0],[0,0,0],[0,0,0]]"#,
        );
        assert_eq!(load_feeder(&asym), Err(FeederError::BadImpedance { index: 0 }));

        let sw = TWO_BUS.replace(r#""to": "B1","#, r#""to": "B1", "switch": "S1","#);
        assert_eq!(load_feeder(&sw), Err(FeederError::SwitchImpedance("S1".into())));

        assert!(matches!(load_feeder("{"), Err(FeederError::Schema(_))));
    }

    #[test]
    fn duplicate_switch_rejected() {
        let text = r#"{
            "base_kv_ln": 1, "base_kva": 1, "source": "A",
            "buses": [{"id":"A","phases":"ABC"},{"id":"B","phases":"ABC"},{"id":"C","phases":"ABC"}],
            "branches": [
                {"from":"A","to":"B","switch":"S1"},
                {"from":"B","to":"C","switch":"S1"}
            ]
        }"#;
        assert_eq!(load_feeder(text), Err(FeederError::DuplicateSwitch("S1".into())));
    }

    fn ring() -> FeederModel {
        // A -L- B -S1- C -L- D, plus tie S2 between D and A.
        load_feeder(
            r#"{
            "base_kv_ln": 1, "base_kva": 1, "source": "A",
            "buses": [
                {"id":"A","phases":"ABC"},
                {"id":"B","phases":"ABC","load_kw":[1,1,1]},
                {"id":"C","phases":"ABC","load_kw":[1,1,1]},
                {"id":"D","phases":"ABC","load_kw":[1,1,1]}
            ],
            "branches": [
                {"from":"A","to":"B","r_ohm":[[1,0,0],[0,1,0],[0,0,1]]},
                {"from":"B","to":"C","switch":"S1"},
                {"from":"C","to":"D","r_ohm":[[1,0,0],[0,1,0],[0,0,1]]},
                {"from":"D","to":"A","switch":"S2","normal":"open"}
            ]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn radial_base_and_meshed_tie() {
        let m = ring();
        let base = m.normal_config();
        let v = apply_switch_config(&m, &base).unwrap();
        assert!(v.is_radial());
        assert_eq!(v.energized_count(), 4);

        let meshed = base.clone().with("S2", SwitchState::Closed).unwrap();
        assert!(!apply_switch_config(&m, &meshed).unwrap().is_radial());

        let open = base.with("S1", SwitchState::Open).unwrap();
        let v = apply_switch_config(&m, &open).unwrap();
        assert!(!v.is_energized(2) && !v.is_energized(3));
        assert!(!v.is_radial());
        assert_eq!(v.components(), vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn config_mismatch_reported() {
        let m = ring();
        let cfg = SwitchConfig::new([("S1", SwitchState::Closed), ("S9", SwitchState::Open)]);
        match apply_switch_config(&m, &cfg) {
            Err(FeederError::ConfigMismatch { missing, extra }) => {
                assert_eq!(missing, vec!["S2".to_string()]);
                assert_eq!(extra, vec!["S9".to_string()]);
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn single_bus_is_radial() {
        let m = load_feeder(
            r#"{"base_kv_ln":1,"base_kva":1,"source":"A","buses":[{"id":"A","phases":"ABC"}],"branches":[]}"#,
        )
        .unwrap();
        let v = apply_switch_config(&m, &SwitchConfig::new(Vec::<(String, SwitchState)>::new()))
            .unwrap();
        assert!(v.is_radial());
        assert_eq!(v.energized(), vec![0]);
    }

    #[test]
    fn product_indicator_cases() {
        let m = ring();
        let cfg = m.normal_config();
        assert_eq!(radiality_indicator(&m, &[1.0; 4], &cfg).unwrap(), 1);

        let pairs = vec![AdjacentPair { i: 0, j: 1, switch: Some("S2".into()) }];
        assert_eq!(radiality_product(&[0.0, 0.0], &pairs, &cfg).unwrap(), 0);
        assert_eq!(radiality_product(&[0.0, 0.98], &pairs, &cfg).unwrap(), 1);

        let bad = vec![AdjacentPair { i: 0, j: 1, switch: Some("S7".into()) }];
        assert_eq!(
            radiality_product(&[1.0, 1.0], &bad, &cfg),
            Err(FeederError::UnknownSwitch("S7".into()))
        );
    }

    #[test]
    fn phase_set_parsing() {
        assert_eq!(PhaseSet::parse("cab"), Some(PhaseSet::ABC));
        assert_eq!(PhaseSet::parse(""), None);
        assert_eq!(PhaseSet::parse("AA"), None);
        assert_eq!(PhaseSet::parse("BC").unwrap().to_string(), "BC");
    }
}
