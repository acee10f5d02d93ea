//! Adaptive load-altering attack.
//!
//! The attacker controls the setpoints of nine loads split into three phase
//! groups. Each step it pushes one group up and the other two down by a step
//! size that shrinks as violations accumulate, keeps every setpoint inside
//! a band around its normal value, stops once enough violations appear or
//! its budget runs out, and backs off any step that would make the phase
//! unbalance visible.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{FeederModel, Phase};
use crate::modbus::{FieldLink, LinkError};
use crate::powerflow::{VoltageBand, UNBALANCE_LIMIT_PCT};
use crate::regmap::MeterMap;

const EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("invalid attack parameter: {0}")]
    InvalidParams(String),
    #[error("violation count {v_vio} already meets the target {n_tar}")]
    TargetMet { v_vio: usize, n_tar: usize },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

/// Rule for the upper scaling bound as a function of violations gained
/// since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum NMaxRule {
    Constant { value: f64 },
    Linear { base: f64, slope: f64, cap: f64 },
}

impl NMaxRule {
    pub fn eval(&self, gained: i64) -> f64 {
        match *self {
            NMaxRule::Constant { value } => value,
            NMaxRule::Linear { base, slope, cap } => {
                (base + slope * gained.max(0) as f64).min(cap)
            }
        }
    }
}

impl Default for NMaxRule {
    fn default() -> Self {
        NMaxRule::Constant { value: 4.0 }
    }
}

fn default_floor() -> f64 {
    0.001
}

fn default_stealth() -> f64 {
    UNBALANCE_LIMIT_PCT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackParams {
    /// Step (MW) while no violation is observed.
    pub alpha: f64,
    /// Intercept (MW) of the shrinking step.
    pub k: f64,
    /// Step reduction (MW) per observed violation.
    pub delta: f64,
    /// Smallest step (MW) once the shrinking step would go below it.
    #[serde(default = "default_floor")]
    pub floor_step: f64,
    /// Initial per-group steps (MW); defaults to `alpha` for every group.
    #[serde(default)]
    pub gamma: Option<[f64; 3]>,
    pub n_tar: usize,
    /// Budget over the run: sum over steps of all setpoints, MW.
    pub av_max: f64,
    pub n_min: f64,
    #[serde(default)]
    pub n_max: NMaxRule,
    /// Step cap.
    pub steps: usize,
    #[serde(default = "default_stealth")]
    pub stealth_limit: f64,
    #[serde(default)]
    pub band: VoltageBand,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            alpha: 0.01,
            k: 0.02,
            delta: 0.001,
            floor_step: default_floor(),
            gamma: None,
            n_tar: 50,
            av_max: 1000.0,
            n_min: 0.025,
            n_max: NMaxRule::default(),
            steps: 200,
            stealth_limit: default_stealth(),
            band: VoltageBand::default(),
        }
    }
}

impl AttackParams {
    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |what: &str| Err(AttackError::InvalidParams(what.to_string()));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.alpha) {
            return bad("alpha must be > 0");
        }
        if !pos(self.k) {
            return bad("k must be > 0");
        }
        if !pos(self.delta) {
            return bad("delta must be > 0");
        }
        if !pos(self.floor_step) {
            return bad("floor_step must be > 0");
        }
        if !pos(self.n_min) {
            return bad("n_min must be > 0");
        }
        if !pos(self.stealth_limit) {
            return bad("stealth_limit must be > 0");
        }
        if !(self.av_max.is_finite() && self.av_max >= 0.0) {
            return bad("av_max must be >= 0");
        }
        if let Some(g) = self.gamma {
            if !g.iter().all(|v| pos(*v)) {
                return bad("gamma entries must be > 0");
            }
        }
        let lo = self.n_max.eval(0);
        if !(lo.is_finite() && lo >= self.n_min) {
            return bad("n_max must be >= n_min");
        }
        if let NMaxRule::Linear { cap, .. } = self.n_max {
            if !(cap.is_finite() && cap >= self.n_min) {
                return bad("n_max cap must be >= n_min");
            }
        }
        if !(self.band.low < self.band.high) {
            return bad("band is inverted");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, AttackError> {
        let p: AttackParams =
            serde_json::from_str(text).map_err(|e| AttackError::InvalidParams(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

/// Step size for the observed violation count.
pub fn step_size(v_vio: usize, params: &AttackParams) -> Result<f64, AttackError> {
    if v_vio >= params.n_tar {
        return Err(AttackError::TargetMet {
            v_vio,
            n_tar: params.n_tar,
        });
    }
    if v_vio == 0 {
        return Ok(params.alpha);
    }
    Ok((params.k - params.delta * v_vio as f64).max(params.floor_step))
}

/// Setpoints (MW) of the attacked nodes, grouped by the phase they load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackVector {
    nodes: Vec<(String, Phase, f64)>,
}

impl AttackVector {
    pub fn new(nodes: Vec<(String, Phase, f64)>) -> Self {
        AttackVector { nodes }
    }

    /// The nominal loads of the map's setpoint nodes.
    pub fn baseline(model: &FeederModel, map: &MeterMap) -> Self {
        AttackVector {
            nodes: map
                .setpoints()
                .iter()
                .map(|s| {
                    let kw = model.bus(s.bus_index).load_kw[s.phase.index()];
                    (s.node.clone(), s.phase, kw / 1000.0)
                })
                .collect(),
        }
    }

    /// One group at `high` MW, every other node at `low` MW.
    pub fn pattern(map: &MeterMap, group: Phase, high: f64, low: f64) -> Self {
        AttackVector {
            nodes: map
                .setpoints()
                .iter()
                .map(|s| (s.node.clone(), s.phase, if s.phase == group { high } else { low }))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&str, Phase, f64)> {
        self.nodes.iter().map(|(n, p, v)| (n.as_str(), *p, *v))
    }

    pub fn values(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.2).collect()
    }

    pub fn get(&self, node: &str) -> Option<f64> {
        self.nodes.iter().find(|n| n.0 == node).map(|n| n.2)
    }

    pub fn set(&mut self, node: &str, mw: f64) -> Result<(), AttackError> {
        let slot = self
            .nodes
            .iter_mut()
            .find(|n| n.0 == node)
            .ok_or_else(|| AttackError::UnknownNode(node.to_string()))?;
        slot.2 = mw;
        Ok(())
    }

    /// Av_A, Av_B or Av_C: the nodes of one group.
    pub fn group(&self, phase: Phase) -> Vec<(&str, f64)> {
        self.nodes
            .iter()
            .filter(|n| n.1 == phase)
            .map(|n| (n.0.as_str(), n.2))
            .collect()
    }

    pub fn total_mw(&self) -> f64 {
        self.nodes.iter().map(|n| n.2).sum()
    }

    /// Setpoint commands in kW.
    pub fn to_kw(&self) -> Vec<(String, f64)> {
        self.nodes.iter().map(|n| (n.0.clone(), n.2 * 1000.0)).collect()
    }
}

/// Clips every node to `[P_D * n_min, P_D * n_max]`, with `P_D` taken from
/// `baseline` for the same node.
pub fn clamp(vector: &AttackVector, baseline: &AttackVector, n_min: f64, n_max: f64) -> AttackVector {
    let nodes = vector
        .nodes
        .iter()
        .map(|(n, p, v)| {
            let pd = baseline.get(n).unwrap_or(0.0);
            (n.clone(), *p, v.clamp(pd * n_min, pd * n_max))
        })
        .collect();
    AttackVector { nodes }
}

/// Whether every node lies inside its clamp interval.
pub fn within_bounds(vector: &AttackVector, baseline: &AttackVector, n_min: f64, n_max: f64) -> bool {
    vector.nodes().all(|(n, _, v)| {
        let pd = baseline.get(n).unwrap_or(0.0);
        v >= pd * n_min - EPS && v <= pd * n_max + EPS
    })
}

/// One update. Holds while the target is met, otherwise raises `mode` by
/// `gamma` and lowers the other groups by theirs, then clamps.
pub fn step(
    current: &AttackVector,
    baseline: &AttackVector,
    v_vio: usize,
    gamma: [f64; 3],
    mode: Phase,
    params: &AttackParams,
    n_max: f64,
) -> AttackVector {
    if v_vio >= params.n_tar {
        return current.clone();
    }
    let moved = AttackVector {
        nodes: current
            .nodes
            .iter()
            .map(|(n, p, v)| {
                let g = gamma[p.index()];
                (n.clone(), *p, if *p == mode { v + g } else { v - g })
            })
            .collect(),
    };
    clamp(&moved, baseline, params.n_min, n_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackStatus {
    TargetReached,
    BudgetExhausted,
    StepCap,
    StealthBlocked,
    TransportError,
}

impl AttackStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackStatus::TargetReached => "target-reached",
            AttackStatus::BudgetExhausted => "budget-exhausted",
            AttackStatus::StepCap => "step-cap",
            AttackStatus::StealthBlocked => "stealth-blocked",
            AttackStatus::TransportError => "transport-error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Adjust,
    Hold,
    /// Applied, breached the stealth limit, and was undone.
    Reverted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub setpoints_mw: Vec<f64>,
    pub gamma: [f64; 3],
    pub n_max: f64,
    pub violations: usize,
    pub unbalance_pct: f64,
    pub budget_spent: f64,
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub mode: Phase,
    pub nodes: Vec<String>,
    pub baseline_mw: Vec<f64>,
    pub initial_violations: usize,
    pub initial_unbalance_pct: f64,
    pub rows: Vec<TraceRow>,
    pub status: AttackStatus,
    pub error: Option<String>,
}

impl AttackTrace {
    /// Vector in force after the run (reverted steps excluded).
    pub fn final_setpoints(&self) -> Vec<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.kind != StepKind::Reverted)
            .map(|r| r.setpoints_mw.clone())
            .unwrap_or_else(|| self.baseline_mw.clone())
    }

    pub fn budget_spent(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.budget_spent)
    }

    /// Sum over steps and nodes of the applied setpoints stays within budget.
    pub fn check_budget(&self, av_max: f64) -> bool {
        let total: f64 = self.rows.iter().map(|r| r.setpoints_mw.iter().sum::<f64>()).sum();
        total <= av_max + EPS && (total - self.budget_spent()).abs() < 1e-6
    }

    /// Every recorded setpoint lies inside its interval at that step's n_max.
    pub fn check_bounds(&self, n_min: f64) -> bool {
        self.rows.iter().all(|r| {
            r.setpoints_mw.iter().zip(&self.baseline_mw).all(|(v, pd)| {
                *v >= pd * n_min - EPS && *v <= pd * r.n_max + EPS
            })
        })
    }

    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string()];
        header.extend(self.nodes.iter().map(|n| format!("{n}_mw")));
        header.extend(
            ["violations", "unbalance_pct", "budget_spent", "kind", "status"]
                .map(String::from),
        );
        w.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![r.step.to_string()];
            rec.extend(r.setpoints_mw.iter().map(|v| format!("{v:.6}")));
            rec.push(r.violations.to_string());
            rec.push(format!("{:.6}", r.unbalance_pct));
            rec.push(format!("{:.6}", r.budget_spent));
            rec.push(format!("{:?}", r.kind).to_lowercase());
            let last = i + 1 == self.rows.len();
            rec.push(if last { self.status.as_str() } else { "running" }.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(f).map_err(std::io::Error::other)
    }
}

/// Violations and unbalance from a fresh meter read.
fn observe(
    link: &mut dyn FieldLink,
    map: &MeterMap,
    band: VoltageBand,
) -> Result<(usize, f64), LinkError> {
    let mags = link.read_voltages()?;
    let unb = map.max_unbalance(&mags).map_or(0.0, |u| u.1);
    Ok((map.violations(&mags, band), unb))
}

/// Runs the attack loop against `link` until a terminal condition.
pub fn run_attack(
    link: &mut dyn FieldLink,
    model: &FeederModel,
    map: &MeterMap,
    params: &AttackParams,
    mode: Phase,
) -> Result<AttackTrace, AttackError> {
    params.validate()?;
    let baseline = AttackVector::baseline(model, map);
    let mut trace = AttackTrace {
        mode,
        nodes: baseline.nodes().map(|n| n.0.to_string()).collect(),
        baseline_mw: baseline.values(),
        initial_violations: 0,
        initial_unbalance_pct: 0.0,
        rows: Vec::new(),
        status: AttackStatus::StepCap,
        error: None,
    };
    if params.av_max <= 0.0 {
        trace.status = AttackStatus::BudgetExhausted;
        return Ok(trace);
    }
    let fail = |mut trace: AttackTrace, e: LinkError| {
        trace.status = AttackStatus::TransportError;
        trace.error = Some(e.to_string());
        trace
    };
    let (v0, u0) = match observe(link, map, params.band) {
        Ok(o) => o,
        Err(e) => return Ok(fail(trace, e)),
    };
    trace.initial_violations = v0;
    trace.initial_unbalance_pct = u0;
    let mut current = baseline.clone();
    let mut observed = v0;
    let mut gamma = params.gamma.unwrap_or([params.alpha; 3]);
    let mut spent = 0.0;
    for t in 1..=params.steps {
        let hold = observed >= params.n_tar;
        let n_max = params.n_max.eval(observed as i64 - v0 as i64);
        if !hold {
            gamma = [step_size(observed, params)?; 3];
        }
        let next = step(&current, &baseline, observed, gamma, mode, params, n_max);
        let cost = next.total_mw();
        if spent + cost > params.av_max + EPS {
            trace.status = AttackStatus::BudgetExhausted;
            return Ok(trace);
        }
        if let Err(e) = link.write_setpoints(&next.to_kw()) {
            return Ok(fail(trace, e));
        }
        spent += cost;
        let (vio, unb) = match observe(link, map, params.band) {
            Ok(o) => o,
            Err(e) => return Ok(fail(trace, e)),
        };
        let mut row = TraceRow {
            step: t,
            setpoints_mw: next.values(),
            gamma,
            n_max,
            violations: vio,
            unbalance_pct: unb,
            budget_spent: spent,
            kind: if hold { StepKind::Hold } else { StepKind::Adjust },
        };
        debug!("step {t}: vio {vio} unbalance {unb:.3}% spent {spent:.4}");
        if unb >= params.stealth_limit {
            row.kind = StepKind::Reverted;
            trace.rows.push(row);
            trace.status = AttackStatus::StealthBlocked;
            if let Err(e) = link.write_setpoints(&current.to_kw()) {
                return Ok(fail(trace, e));
            }
            info!("step {t} would expose the attack ({unb:.3}% unbalance); reverted");
            return Ok(trace);
        }
        trace.rows.push(row);
        current = next;
        observed = vio;
        if !hold && vio >= params.n_tar {
            trace.status = AttackStatus::TargetReached;
            return Ok(trace);
        }
    }
    trace.status = AttackStatus::StepCap;
    Ok(trace)
}
