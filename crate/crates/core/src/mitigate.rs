//! Topology-control defence.
//!
//! Each switch is a player choosing open or closed. A configuration is
//! scored by feasibility (energizes every load, radial unless meshing is
//! allowed), the violations its power flow produces, and how many switches
//! it toggles. The defender either runs best-response sweeps over the
//! switches or, as an oracle, scores every configuration.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{apply_switch_config, FeederError, FeederModel, SwitchConfig};
use crate::modbus::{FieldLink, LinkError};
use crate::powerflow::{count_violations, solve, LoadSet, SolverOptions, VoltageBand};
use crate::regmap::MeterMap;

/// Largest switch count the exhaustive oracle accepts.
pub const ORACLE_LIMIT: usize = 16;
pub const DEFAULT_SWEEP_CAP: usize = 10;

#[derive(Debug, Error)]
pub enum MitigateError {
    #[error(transparent)]
    Config(#[from] FeederError),
    #[error("exhaustive search over {0} switches exceeds the limit of 16")]
    GuardExceeded(usize),
    #[error("field link: {0}")]
    Link(#[from] LinkError),
    #[error("refusing to apply infeasible configuration {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub violations: f64,
    pub cost: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            violations: 1000.0,
            cost: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub allow_meshed: bool,
    pub band: VoltageBand,
    pub solver: SolverOptions,
    pub sweep_cap: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            allow_meshed: false,
            band: VoltageBand::default(),
            solver: SolverOptions::default(),
            sweep_cap: DEFAULT_SWEEP_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Payoff {
    pub feasible: bool,
    pub violations: usize,
    pub cost: usize,
    /// `-(W_v * violations + W_c * cost)`, or negative infinity when
    /// infeasible (serialized as null).
    #[serde(with = "scalar_serde")]
    pub scalar: f64,
}

mod scalar_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

impl Payoff {
    fn infeasible(cost: usize) -> Self {
        Payoff {
            feasible: false,
            violations: 0,
            cost,
            scalar: f64::NEG_INFINITY,
        }
    }
}

/// Number of switches whose state differs.
pub fn switching_cost(current: &SwitchConfig, candidate: &SwitchConfig) -> Result<usize, FeederError> {
    let missing: Vec<String> = current
        .iter()
        .filter(|(n, _)| candidate.get(n).is_none())
        .map(|(n, _)| n.clone())
        .collect();
    let extra: Vec<String> = candidate
        .iter()
        .filter(|(n, _)| current.get(n).is_none())
        .map(|(n, _)| n.clone())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(FeederError::ConfigMismatch { missing, extra });
    }
    Ok(current
        .iter()
        .filter(|(n, s)| candidate.get(n) != Some(*s))
        .count())
}

/// Switches whose state differs, in `current` order.
pub fn toggled_switches(current: &SwitchConfig, candidate: &SwitchConfig) -> Vec<String> {
    current
        .iter()
        .filter(|(n, s)| candidate.get(n) != Some(*s))
        .map(|(n, _)| n.clone())
        .collect()
}

/// Scores `candidate` against the switch positions in `current`.
pub fn payoff(
    model: &FeederModel,
    current: &SwitchConfig,
    candidate: &SwitchConfig,
    loads: &LoadSet,
    weights: Weights,
    opts: &SearchOptions,
) -> Result<Payoff, FeederError> {
    let cost = switching_cost(current, candidate)?;
    let view = apply_switch_config(model, candidate)?;
    let feasible = view.all_loads_energized() && (opts.allow_meshed || view.is_radial());
    if !feasible {
        return Ok(Payoff::infeasible(cost));
    }
    let sol = match solve(model, &view, loads, &opts.solver) {
        Ok(s) if s.converged => s,
        _ => return Ok(Payoff::infeasible(cost)),
    };
    let violations = count_violations(&sol, opts.band)
        .map(|r| r.count)
        .unwrap_or(usize::MAX);
    Ok(Payoff {
        feasible: true,
        violations,
        cost,
        scalar: -(weights.violations * violations as f64 + weights.cost * cost as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub closed: Vec<String>,
    pub payoff: Payoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMethod {
    Sweep,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationPlan {
    pub method: SearchMethod,
    pub initial: SwitchConfig,
    pub chosen: SwitchConfig,
    pub toggled: Vec<String>,
    pub pre_violations: Option<usize>,
    pub post_violations: usize,
    pub initial_payoff: Payoff,
    pub payoff: Payoff,
    pub sweeps: usize,
    pub evaluations: usize,
    pub log: Vec<Evaluation>,
}

fn evaluation(config: &SwitchConfig, payoff: Payoff) -> Evaluation {
    Evaluation {
        closed: config.closed().into_iter().map(String::from).collect(),
        payoff,
    }
}

fn finish(
    method: SearchMethod,
    current: &SwitchConfig,
    chosen: SwitchConfig,
    initial_payoff: Payoff,
    best: Payoff,
    sweeps: usize,
    log: Vec<Evaluation>,
) -> MitigationPlan {
    MitigationPlan {
        method,
        initial: current.clone(),
        toggled: toggled_switches(current, &chosen),
        chosen,
        pre_violations: initial_payoff.feasible.then_some(initial_payoff.violations),
        post_violations: best.violations,
        initial_payoff,
        payoff: best,
        sweeps,
        evaluations: log.len(),
        log,
    }
}

/// Best-response dynamics: each switch in turn takes the state with the
/// higher payoff, others held fixed; ties keep the present state. Sweeps
/// repeat until one changes nothing or the cap is hit.
pub fn best_response_sweep(
    model: &FeederModel,
    current: &SwitchConfig,
    loads: &LoadSet,
    weights: Weights,
    opts: &SearchOptions,
) -> Result<MitigationPlan, FeederError> {
    model.check_config(current)?;
    let mut log = Vec::new();
    let initial = payoff(model, current, current, loads, weights, opts)?;
    log.push(evaluation(current, initial));
    let mut config = current.clone();
    let mut best = initial;
    let names: Vec<String> = current.iter().map(|(n, _)| n.clone()).collect();
    let mut sweeps = 0;
    while sweeps < opts.sweep_cap.max(1) {
        sweeps += 1;
        let mut changed = false;
        for name in &names {
            let state = config.get(name).expect("configured switch");
            let alt = config.clone().with(name, state.toggled())?;
            let p = payoff(model, current, &alt, loads, weights, opts)?;
            log.push(evaluation(&alt, p));
            if p.scalar > best.scalar {
                config = alt;
                best = p;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(finish(SearchMethod::Sweep, current, config, initial, best, sweeps, log))
}

/// Scores all 2^n configurations. Ties go to fewer toggles, then to the
/// lexicographically smallest state vector (open before closed, model
/// switch order).
pub fn exhaustive_best(
    model: &FeederModel,
    current: &SwitchConfig,
    loads: &LoadSet,
    weights: Weights,
    opts: &SearchOptions,
) -> Result<MitigationPlan, MitigateError> {
    let n = model.switch_count();
    if n > ORACLE_LIMIT {
        return Err(MitigateError::GuardExceeded(n));
    }
    model.check_config(current)?;
    let initial = payoff(model, current, current, loads, weights, opts)?;
    let mut log = Vec::with_capacity(1 << n);
    let mut best: Option<(SwitchConfig, Payoff)> = None;
    for code in 0u32..(1 << n) {
        // First switch is the most significant position.
        let mask: Vec<bool> = (0..n).map(|i| code >> (n - 1 - i) & 1 == 1).collect();
        let cand = model.config_from_mask(&mask);
        let p = payoff(model, current, &cand, loads, weights, opts)?;
        log.push(evaluation(&cand, p));
        let better = match &best {
            None => true,
            Some((_, b)) => p.scalar > b.scalar || (p.scalar == b.scalar && p.cost < b.cost),
        };
        if better {
            best = Some((cand, p));
        }
    }
    let (chosen, best) = match best {
        Some((c, p)) if p.feasible => (c, p),
        // Nothing feasible: stay put.
        _ => (current.clone(), initial),
    };
    Ok(finish(SearchMethod::Exhaustive, current, chosen, initial, best, 0, log))
}

#[derive(Debug, Clone)]
pub struct ControlOptions {
    pub interval: Duration,
    pub once: bool,
    pub oracle: bool,
    /// Rounds before returning (None = until stopped).
    pub max_rounds: Option<usize>,
    pub retries: usize,
    pub backoff: Duration,
    pub stop: Option<Arc<AtomicBool>>,
}

impl Default for ControlOptions {
    fn default() -> Self {
        ControlOptions {
            interval: Duration::from_millis(500),
            once: false,
            oracle: false,
            max_rounds: None,
            retries: 5,
            backoff: Duration::from_millis(100),
            stop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationRound {
    pub round: usize,
    pub observed_violations: usize,
    pub plan: Option<MitigationPlan>,
    pub coil_writes: Vec<String>,
    pub post_violations: usize,
    pub elapsed_ms: f64,
}

fn with_retry<T>(
    ctl: &ControlOptions,
    mut f: impl FnMut() -> Result<T, LinkError>,
) -> Result<T, LinkError> {
    let mut wait = ctl.backoff;
    let mut attempt = 0;
    loop {
        match f() {
            Ok(v) => return Ok(v),
            Err(e) if attempt < ctl.retries => {
                attempt += 1;
                warn!("field link error (attempt {attempt}/{}): {e}", ctl.retries);
                thread::sleep(wait);
                wait = (wait * 2).min(Duration::from_secs(5));
            }
            Err(e) => return Err(e),
        }
    }
}

/// One observe-decide-act pass.
pub fn mitigation_round(
    link: &mut dyn FieldLink,
    model: &FeederModel,
    map: &MeterMap,
    weights: Weights,
    opts: &SearchOptions,
    ctl: &ControlOptions,
    round: usize,
) -> Result<MitigationRound, MitigateError> {
    let t0 = Instant::now();
    let mags = with_retry(ctl, || link.read_voltages())?;
    let observed = map.violations(&mags, opts.band);
    let mut rec = MitigationRound {
        round,
        observed_violations: observed,
        plan: None,
        coil_writes: Vec::new(),
        post_violations: observed,
        elapsed_ms: 0.0,
    };
    if observed == 0 {
        rec.elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
        return Ok(rec);
    }
    let config = with_retry(ctl, || link.read_switches())?;
    let setpoints = with_retry(ctl, || link.read_setpoints())?;
    let view = apply_switch_config(model, &config)?;
    let loads = map.loads_from_setpoints_where(model, &setpoints, |b| view.is_energized(b))
        .map_err(LinkError::from)?;
    let plan = if ctl.oracle {
        exhaustive_best(model, &config, &loads, weights, opts)?
    } else {
        best_response_sweep(model, &config, &loads, weights, opts)?
    };
    if !plan.toggled.is_empty() {
        let view = apply_switch_config(model, &plan.chosen)?;
        if !view.all_loads_energized() || !(opts.allow_meshed || view.is_radial()) {
            return Err(MitigateError::Infeasible(plan.chosen.to_string()));
        }
        // Coil order keeps the write sequence stable.
        for name in map.switches() {
            if plan.toggled.contains(name) {
                let state = plan.chosen.get(name).expect("planned switch");
                with_retry(ctl, || link.write_switch(name, state))?;
                rec.coil_writes.push(name.clone());
            }
        }
        let after = with_retry(ctl, || link.read_voltages())?;
        rec.post_violations = map.violations(&after, opts.band);
        info!(
            "round {round}: toggled {:?}, violations {observed} -> {} (mirror predicted {})",
            rec.coil_writes, rec.post_violations, plan.post_violations
        );
    }
    rec.plan = Some(plan);
    rec.elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
    Ok(rec)
}

/// The control loop: observe, plan, act, sleep. Returns the rounds run.
pub fn run_mitigation(
    link: &mut dyn FieldLink,
    model: &FeederModel,
    map: &MeterMap,
    weights: Weights,
    opts: &SearchOptions,
    ctl: &ControlOptions,
) -> Result<Vec<MitigationRound>, MitigateError> {
    let mut rounds = Vec::new();
    let stopped = || ctl.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst));
    loop {
        let r = mitigation_round(link, model, map, weights, opts, ctl, rounds.len() + 1)?;
        rounds.push(r);
        if ctl.once || ctl.max_rounds.is_some_and(|m| rounds.len() >= m) || stopped() {
            return Ok(rounds);
        }
        let until = Instant::now() + ctl.interval;
        while Instant::now() < until {
            if stopped() {
                return Ok(rounds);
            }
            thread::sleep(ctl.interval.min(Duration::from_millis(20)));
        }
    }
}
