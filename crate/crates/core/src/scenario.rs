//! End-to-end experiment: serve the feeder, attack it, defend it, and
//! record what every stage saw. All field traffic goes over TCP.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{run_attack, AttackParams, AttackStatus, AttackVector, NMaxRule};
use crate::feeder::{apply_switch_config, FeederModel, Phase};
use crate::mitigate::{
    exhaustive_best, mitigation_round, ControlOptions, SearchOptions, Weights,
};
use crate::modbus::{
    relay, serve, FieldLink, LinkError, ModbusLink, RefreshPolicy, Simulation, VoltageSource,
};
use crate::powerflow::{VoltageBand, UNBALANCE_LIMIT_PCT};
use crate::regmap::{MeterMap, WordOrder};

/// Worst allowed gap between what a client reads and the solver state.
pub const PROTOCOL_TOLERANCE: f64 = 5e-5;
pub const LOW_SETPOINT_MW: f64 = 0.001;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Overloaded group and level for the six standard cases.
pub fn case_pattern(case: u8) -> Option<(Phase, f64)> {
    match case {
        1 => Some((Phase::C, 0.08)),
        2 => Some((Phase::B, 0.08)),
        3 => Some((Phase::A, 0.08)),
        4 => Some((Phase::C, 0.16)),
        5 => Some((Phase::B, 0.16)),
        6 => Some((Phase::A, 0.16)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    /// Write each case's terminal setpoints directly.
    #[default]
    Replay,
    /// Run the adaptive attack loop.
    Live,
}

fn default_true() -> bool {
    true
}

fn default_bind() -> String {
    "127.0.0.1:0".to_string()
}

fn default_cases() -> Vec<u8> {
    (1..=6).collect()
}

fn default_interval() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Feeder file, relative to the config file; the bundled feeder if absent.
    #[serde(default)]
    pub feeder: Option<PathBuf>,
    #[serde(default = "default_cases")]
    pub cases: Vec<u8>,
    #[serde(default)]
    pub mode: AttackMode,
    /// Live-mode parameters; `n_max` is replaced per case by the ratio of
    /// the case level to the node's normal load.
    #[serde(default)]
    pub attack: AttackParams,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default = "default_true")]
    pub allow_meshed: bool,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub band: VoltageBand,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub float_order: WordOrder,
    #[serde(default)]
    pub voltage_source: VoltageSource,
    /// Put a pass-through relay between the clients and the server.
    #[serde(default)]
    pub relay: bool,
    #[serde(default = "default_interval")]
    pub control_interval_ms: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl ScenarioConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(f), Some(dir)) = (&cfg.feeder, path.parent()) {
            if f.is_relative() {
                cfg.feeder = Some(dir.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn load_feeder(&self) -> Result<FeederModel, ScenarioError> {
        match &self.feeder {
            Some(p) => FeederModel::from_file(p).map_err(|e| ScenarioError::Config(e.to_string())),
            None => Ok(FeederModel::bundled()),
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if let Some(c) = self.cases.iter().find(|c| case_pattern(**c).is_none()) {
            return Err(ScenarioError::Config(format!("unknown case {c} (1-6)")));
        }
        if self.mode == AttackMode::Live {
            self.attack
                .validate()
                .map_err(|e| ScenarioError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case: u8,
    pub group: Phase,
    pub level_mw: f64,
    /// `ok`, or the failing stage and its error.
    pub status: String,
    pub baseline_violations: Option<usize>,
    pub attack_vector: Vec<(String, f64)>,
    pub attack_status: Option<String>,
    pub attack_steps: usize,
    pub violations_pre: Option<usize>,
    pub unbalance_pct: Option<f64>,
    pub unbalance_bus: Option<String>,
    pub toggles: Vec<String>,
    pub violations_post: Option<usize>,
    pub unbalance_post_pct: Option<f64>,
    pub predicted_post: Option<usize>,
    pub oracle_violations: Option<usize>,
    pub oracle_toggles: Vec<String>,
    /// Sweep payoff equals the exhaustive optimum.
    pub oracle_agrees: Option<bool>,
    pub protocol_max_dev: Option<f64>,
    pub wall_ms: f64,
    pub profile_pre: Vec<f64>,
    pub profile_post: Vec<f64>,
}

impl CaseRecord {
    fn new(case: u8) -> Self {
        let (group, level_mw) = case_pattern(case).expect("validated case");
        CaseRecord {
            case,
            group,
            level_mw,
            status: "ok".into(),
            baseline_violations: None,
            attack_vector: Vec::new(),
            attack_status: None,
            attack_steps: 0,
            violations_pre: None,
            unbalance_pct: None,
            unbalance_bus: None,
            toggles: Vec::new(),
            violations_post: None,
            unbalance_post_pct: None,
            predicted_post: None,
            oracle_violations: None,
            oracle_toggles: Vec::new(),
            oracle_agrees: None,
            protocol_max_dev: None,
            wall_ms: 0.0,
            profile_pre: Vec::new(),
            profile_post: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub os: String,
    pub arch: String,
    pub feeder: String,
    pub buses: usize,
    pub meters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub mode: AttackMode,
    pub allow_meshed: bool,
    pub meters: Vec<(String, Phase, u16)>,
    pub cases: Vec<CaseRecord>,
    pub environment: Environment,
}

impl ScenarioReport {
    /// Every case completed with post <= pre and the attack unseen.
    pub fn invariants_hold(&self) -> bool {
        self.cases.iter().all(|c| {
            c.is_ok()
                && c.violations_post <= c.violations_pre
                && c.unbalance_pct.is_some_and(|u| u < UNBALANCE_LIMIT_PCT)
                && c.protocol_max_dev.is_some_and(|d| d <= PROTOCOL_TOLERANCE)
        })
    }
}

fn stage<T>(rec: &mut CaseRecord, name: &str, r: Result<T, impl std::fmt::Display>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            rec.status = format!("{name}: {e}");
            None
        }
    }
}

/// Largest gap between client-read magnitudes and the solver's own values.
fn protocol_gap(sim: &Simulation, read: &[f64]) -> Result<f64, String> {
    let sol = sim.solution().ok_or("server has no converged solution")?;
    Ok(sim
        .map()
        .meters()
        .iter()
        .zip(read)
        .map(|(m, r)| (sol.buses[m.bus_index].magnitude(m.phase) - r).abs())
        .fold(0.0, f64::max))
}

fn run_case(
    cfg: &ScenarioConfig,
    model: &Arc<FeederModel>,
    map: &MeterMap,
    case: u8,
) -> CaseRecord {
    let t0 = Instant::now();
    let mut rec = CaseRecord::new(case);
    run_case_stages(cfg, model, map, &mut rec);
    rec.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    rec
}

fn run_case_stages(cfg: &ScenarioConfig, model: &Arc<FeederModel>, map: &MeterMap, rec: &mut CaseRecord) {
    let sim = Simulation::with_map(model.clone(), map.clone(), cfg.float_order, Default::default());
    let Some(server) = stage(rec, "serve", serve(sim, cfg.bind.as_str(), RefreshPolicy::OnWrite))
    else {
        return;
    };
    let relay_handle = if cfg.relay {
        match stage(rec, "relay", relay(cfg.bind.as_str(), server.addr())) {
            Some(h) => Some(h),
            None => return,
        }
    } else {
        None
    };
    let target = relay_handle.as_ref().map_or(server.addr(), |r| r.addr());
    let sim = server.simulation().expect("server has a simulation");

    let connect = || ModbusLink::connect(target, map.clone(), cfg.voltage_source);
    let Some(mut attacker) = stage(rec, "connect", connect()) else {
        return;
    };
    let band = cfg.band;
    let Some(base) = stage(rec, "baseline", attacker.read_voltages()) else {
        return;
    };
    rec.baseline_violations = Some(map.violations(&base, band));

    let (group, level) = (rec.group, rec.level_mw);
    let vector = match cfg.mode {
        AttackMode::Replay => {
            let v = AttackVector::pattern(map, group, level, LOW_SETPOINT_MW);
            if stage(rec, "attack", attacker.write_setpoints(&v.to_kw())).is_none() {
                return;
            }
            rec.attack_status = Some("replayed".into());
            v.values()
        }
        AttackMode::Live => {
            let baseline = AttackVector::baseline(model, map);
            let pd = baseline.group(group).first().map_or(0.0, |n| n.1);
            let mut params = cfg.attack.clone();
            params.band = band;
            if pd > 0.0 {
                params.n_max = NMaxRule::Constant { value: level / pd };
            }
            let Some(trace) = stage(rec, "attack", run_attack(&mut attacker, model, map, &params, group))
            else {
                return;
            };
            rec.attack_status = Some(trace.status.as_str().into());
            rec.attack_steps = trace.rows.len();
            if trace.status == AttackStatus::TransportError {
                rec.status = format!("attack: {}", trace.error.clone().unwrap_or_default());
                return;
            }
            trace.final_setpoints()
        }
    };
    rec.attack_vector = map
        .setpoints()
        .iter()
        .zip(&vector)
        .map(|(s, v)| (s.node.clone(), *v))
        .collect();

    let Some(pre) = stage(rec, "observe", attacker.read_voltages()) else {
        return;
    };
    rec.violations_pre = Some(map.violations(&pre, band));
    let unb = map.max_unbalance(&pre);
    rec.unbalance_pct = unb.as_ref().map(|u| u.1);
    rec.unbalance_bus = unb.map(|u| u.0);
    {
        let s = sim.lock().unwrap_or_else(|e| e.into_inner());
        match protocol_gap(&s, &pre) {
            Ok(g) => rec.protocol_max_dev = Some(g),
            Err(e) => {
                rec.status = format!("observe: {e}");
                return;
            }
        }
    }
    rec.profile_pre = pre;
    drop(attacker);

    let Some(mut defender) = stage(rec, "connect", connect()) else {
        return;
    };
    let opts = SearchOptions {
        allow_meshed: cfg.allow_meshed,
        band,
        ..SearchOptions::default()
    };
    let ctl = ControlOptions {
        interval: Duration::from_millis(cfg.control_interval_ms),
        once: true,
        oracle: cfg.oracle,
        retries: 0,
        ..ControlOptions::default()
    };
    let Some(round) = stage(
        rec,
        "mitigate",
        mitigation_round(&mut defender, model, map, cfg.weights, &opts, &ctl, 1),
    ) else {
        return;
    };
    rec.toggles = round.coil_writes.clone();
    rec.predicted_post = round.plan.as_ref().map(|p| p.post_violations);

    // Oracle check on the attacked state, from the defender's own mirror.
    if let Some(plan) = &round.plan {
        let loads = (|| -> Result<_, LinkError> {
            let sp = defender.read_setpoints()?;
            let view = apply_switch_config(model, &plan.initial).map_err(|e| LinkError::UnexpectedResponse(e.to_string()))?;
            Ok(map.loads_from_setpoints_where(model, &sp, |b| view.is_energized(b))?)
        })();
        let Some(loads) = stage(rec, "oracle", loads) else {
            return;
        };
        let Some(best) = stage(
            rec,
            "oracle",
            exhaustive_best(model, &plan.initial, &loads, cfg.weights, &opts),
        ) else {
            return;
        };
        rec.oracle_violations = Some(best.post_violations);
        rec.oracle_toggles = best.toggled.clone();
        rec.oracle_agrees = Some(best.payoff.scalar == plan.payoff.scalar);
        if rec.oracle_agrees == Some(false) {
            info!(
                "case {}: sweep stopped at payoff {} ({:?}), oracle reaches {} ({:?})",
                rec.case, plan.payoff.scalar, plan.toggled, best.payoff.scalar, best.toggled
            );
        }
    } else {
        rec.oracle_agrees = Some(true);
        rec.oracle_violations = rec.violations_pre;
    }

    let Some(post) = stage(rec, "observe", defender.read_voltages()) else {
        return;
    };
    rec.violations_post = Some(map.violations(&post, band));
    rec.unbalance_post_pct = map.max_unbalance(&post).map(|u| u.1);
    rec.profile_post = post;
    drop(defender);
    if let Some(r) = relay_handle {
        r.shutdown();
    }
    server.shutdown();
}

/// Runs the configured cases in order, each against a fresh server.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, ScenarioError> {
    cfg.validate()?;
    let model = Arc::new(cfg.load_feeder()?);
    let map = MeterMap::for_model(&model).map_err(|e| ScenarioError::Config(e.to_string()))?;
    let mut cases = Vec::new();
    for &case in &cfg.cases {
        let rec = run_case(cfg, &model, &map, case);
        info!(
            "case {case}: {} pre {:?} unbalance {:?} toggles {:?} post {:?}",
            rec.status, rec.violations_pre, rec.unbalance_pct, rec.toggles, rec.violations_post
        );
        cases.push(rec);
    }
    Ok(ScenarioReport {
        mode: cfg.mode,
        allow_meshed: cfg.allow_meshed,
        meters: map
            .meters()
            .iter()
            .map(|m| (m.bus.clone(), m.phase, m.register))
            .collect(),
        cases,
        environment: Environment {
            version: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            feeder: model.name().unwrap_or("unnamed").into(),
            buses: model.buses().len(),
            meters: map.meters().len(),
        },
    })
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or(String::new(), T::to_string)
}

fn opt_f(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.4}"))
}

/// Writes `cases.csv`, `report.json` and `voltage_profiles.csv` into `dir`.
pub fn emit_report(report: &ScenarioReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ScenarioError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let csv_err = |e: csv::Error| ScenarioError::Io(std::io::Error::other(e));

    let cases_path = dir.join("cases.csv");
    let mut w = csv::Writer::from_path(&cases_path).map_err(csv_err)?;
    w.write_record([
        "case",
        "group",
        "level_mw",
        "status",
        "baseline_violations",
        "attack_status",
        "violations_pre",
        "unbalance_pct",
        "unbalance_bus",
        "toggles",
        "violations_post",
        "unbalance_post_pct",
        "oracle_violations",
        "oracle_agrees",
    ])
    .map_err(csv_err)?;
    for c in &report.cases {
        w.write_record([
            c.case.to_string(),
            c.group.to_string(),
            format!("{:.3}", c.level_mw),
            c.status.clone(),
            opt(&c.baseline_violations),
            opt(&c.attack_status),
            opt(&c.violations_pre),
            opt_f(c.unbalance_pct),
            opt(&c.unbalance_bus),
            c.toggles.join(";"),
            opt(&c.violations_post),
            opt_f(c.unbalance_post_pct),
            opt(&c.oracle_violations),
            opt(&c.oracle_agrees),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let profile_path = dir.join("voltage_profiles.csv");
    let mut w = csv::Writer::from_path(&profile_path).map_err(csv_err)?;
    w.write_record(["case", "snapshot", "meter", "register", "bus", "phase", "magnitude_pu"])
        .map_err(csv_err)?;
    for c in &report.cases {
        for (snap, profile) in [("pre", &c.profile_pre), ("post", &c.profile_post)] {
            for (k, (bus, phase, reg)) in report.meters.iter().enumerate() {
                let v = profile.get(k).map_or(String::new(), |v| format!("{v:.4}"));
                w.write_record([
                    c.case.to_string(),
                    snap.to_string(),
                    (k + 1).to_string(),
                    reg.to_string(),
                    bus.clone(),
                    phase.to_string(),
                    v,
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;

    let json_path = dir.join("report.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(report).map_err(|e| ScenarioError::Io(std::io::Error::other(e)))?,
    )?;
    Ok(vec![cases_path, json_path, profile_path])
}
