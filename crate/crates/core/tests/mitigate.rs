use std::sync::Arc;
use std::time::Duration;

use modgrid_core::attack::AttackVector;
use modgrid_core::feeder::{FeederModel, SwitchState};
use modgrid_core::mitigate::*;
use modgrid_core::modbus::{serve, setpoint_word, FieldLink, ModbusLink, RefreshPolicy, Simulation, VoltageSource};
use modgrid_core::powerflow::LoadSet;
use modgrid_core::regmap::{MeterMap, WordOrder};
use modgrid_core::scenario::case_pattern;
use proptest::prelude::*;

fn case_loads(model: &FeederModel, map: &MeterMap, case: u8) -> LoadSet {
    let (group, level) = case_pattern(case).unwrap();
    let words: Vec<u16> = AttackVector::pattern(map, group, level, 0.001)
        .to_kw()
        .iter()
        .map(|(_, kw)| setpoint_word(*kw).unwrap())
        .collect();
    map.loads_from_setpoints(model, &words).unwrap()
}

fn meshed() -> SearchOptions {
    SearchOptions {
        allow_meshed: true,
        ..SearchOptions::default()
    }
}

#[test]
fn payoff_rules() {
    let m = FeederModel::bundled();
    let map = MeterMap::for_model(&m).unwrap();
    let cur = m.normal_config();
    let loads = case_loads(&m, &map, 1);
    let w = Weights::default();
    let dead = cur.clone().with("S1", SwitchState::Open).unwrap();
    let p = payoff(&m, &cur, &dead, &loads, w, &meshed()).unwrap();
    assert!(!p.feasible && p.scalar == f64::NEG_INFINITY);

    let one = cur.clone().with("S7", SwitchState::Closed).unwrap();
    let two = one.clone().with("S8", SwitchState::Closed).unwrap();
    let p1 = payoff(&m, &cur, &one, &loads, w, &meshed()).unwrap();
    let p2 = payoff(&m, &cur, &two, &loads, w, &meshed()).unwrap();
    assert_eq!((p1.violations, p1.cost, p2.violations, p2.cost), (0, 1, 0, 2));
    assert!(p1.scalar > p2.scalar);
    let p0 = payoff(&m, &cur, &cur, &loads, w, &meshed()).unwrap();
    assert!(p0.violations > 0 && p1.scalar > p0.scalar);
    // Without the meshed allowance a closed tie is a loop, hence infeasible.
    assert!(!payoff(&m, &cur, &one, &loads, w, &SearchOptions::default()).unwrap().feasible);
}

#[test]
fn quiet_feeder_needs_nothing() {
    let m = FeederModel::bundled();
    let cur = m.normal_config();
    let loads = LoadSet::base(&m);
    let plan = best_response_sweep(&m, &cur, &loads, Weights::default(), &meshed()).unwrap();
    assert!(plan.toggled.is_empty());
    assert_eq!(plan.sweeps, 1);
    let best = exhaustive_best(&m, &cur, &loads, Weights::default(), &meshed()).unwrap();
    assert_eq!(best.evaluations, 256);
    assert_eq!(best.chosen, cur);
    assert_eq!(best.payoff.cost, 0);
}

#[test]
fn case_analogs_against_the_oracle() {
    let m = FeederModel::bundled();
    let map = MeterMap::for_model(&m).unwrap();
    let cur = m.normal_config();
    for case in 1..=6 {
        let loads = case_loads(&m, &map, case);
        let sweep = best_response_sweep(&m, &cur, &loads, Weights::default(), &meshed()).unwrap();
        let best = exhaustive_best(&m, &cur, &loads, Weights::default(), &meshed()).unwrap();
        assert!(best.payoff.scalar >= sweep.payoff.scalar, "case {case}");
        assert_eq!(best.payoff.scalar, sweep.payoff.scalar, "case {case}: sweep stuck");
        assert!(sweep.payoff.scalar >= sweep.initial_payoff.scalar);
        assert!(sweep.toggled.iter().all(|s| s == "S7" || s == "S8"), "case {case}: {:?}", sweep.toggled);
        if case <= 5 {
            assert_eq!(sweep.post_violations, 0, "case {case}");
        }
        if case == 1 {
            assert_eq!(sweep.toggled, ["S7"]);
        }
        // No optimum uses fewer toggles than the sweep's plan.
        let top = best.payoff.violations;
        let fewest = best.log.iter().filter(|e| e.payoff.feasible && e.payoff.violations == top).map(|e| e.payoff.cost).min().unwrap();
        assert_eq!(sweep.payoff.cost, fewest, "case {case}");
    }
}

#[test]
fn radial_only_search_keeps_ties_open() {
    let m = FeederModel::bundled();
    let map = MeterMap::for_model(&m).unwrap();
    let loads = case_loads(&m, &map, 1);
    let plan = best_response_sweep(&m, &m.normal_config(), &loads, Weights::default(), &SearchOptions::default()).unwrap();
    assert!(plan.toggled.is_empty());
}

#[test]
fn oracle_guard() {
    let mut doc: serde_json::Value = serde_json::from_str(&FeederModel::bundled().to_json()).unwrap();
    let zero = serde_json::json!([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
    let branches = doc["branches"].as_array_mut().unwrap();
    for i in 0..9 {
        let id = format!("X{i}");
        branches.push(serde_json::json!({"from": "N1", "to": "N2", "switch": id, "normal": "open", "r_ohm": zero, "x_ohm": zero}));
    }
    let m = FeederModel::from_json(&doc.to_string()).unwrap();
    assert_eq!(m.switch_count(), 17);
    let r = exhaustive_best(&m, &m.normal_config(), &LoadSet::base(&m), Weights::default(), &meshed());
    assert!(matches!(r, Err(MitigateError::GuardExceeded(17))));
}

fn start(case: Option<u8>) -> (modgrid_core::modbus::ServerHandle, Arc<FeederModel>, MeterMap) {
    let model = Arc::new(FeederModel::bundled());
    let sim = Simulation::new(model.clone(), WordOrder::HighFirst).unwrap();
    let map = sim.map().clone();
    let h = serve(sim, "127.0.0.1:0", RefreshPolicy::OnWrite).unwrap();
    if let Some(c) = case {
        let (g, l) = case_pattern(c).unwrap();
        let mut link = ModbusLink::connect(h.addr(), map.clone(), VoltageSource::Scaled).unwrap();
        link.write_setpoints(&AttackVector::pattern(&map, g, l, 0.001).to_kw()).unwrap();
    }
    (h, model, map)
}

fn once() -> ControlOptions {
    ControlOptions {
        once: true,
        ..ControlOptions::default()
    }
}

#[test]
fn control_loop_fixes_case_one_with_one_write() {
    let (h, model, map) = start(Some(1));
    let mut link = ModbusLink::connect(h.addr(), map.clone(), VoltageSource::Scaled).unwrap();
    let rounds = run_mitigation(&mut link, &model, &map, Weights::default(), &meshed(), &once()).unwrap();
    assert_eq!(rounds.len(), 1);
    assert!(rounds[0].observed_violations > 0);
    assert_eq!(rounds[0].coil_writes, ["S7"]);
    assert_eq!(rounds[0].post_violations, 0);
    assert_eq!(link.read_switches().unwrap().closed().len(), 7);
}

#[test]
fn control_loop_is_quiet_without_violations() {
    let (h, model, map) = start(None);
    let mut link = ModbusLink::connect(h.addr(), map.clone(), VoltageSource::Scaled).unwrap();
    let ctl = ControlOptions {
        interval: Duration::from_millis(10),
        max_rounds: Some(4),
        ..ControlOptions::default()
    };
    let before = h.simulation().unwrap().lock().unwrap().solve_count();
    let rounds = run_mitigation(&mut link, &model, &map, Weights::default(), &meshed(), &ctl).unwrap();
    assert_eq!(rounds.len(), 4);
    assert!(rounds.iter().all(|r| r.coil_writes.is_empty() && r.plan.is_none()));
    assert_eq!(h.simulation().unwrap().lock().unwrap().solve_count(), before);
}

#[test]
fn oracle_mode_also_clears_case_four() {
    let (h, model, map) = start(Some(4));
    let mut link = ModbusLink::connect(h.addr(), map.clone(), VoltageSource::Scaled).unwrap();
    let ctl = ControlOptions { oracle: true, ..once() };
    let r = run_mitigation(&mut link, &model, &map, Weights::default(), &meshed(), &ctl).unwrap();
    assert_eq!(r[0].plan.as_ref().unwrap().method, SearchMethod::Exhaustive);
    assert_eq!(r[0].post_violations, 0);
}

#[test]
fn lost_server_fails_after_retries() {
    let (h, model, map) = start(Some(1));
    let mut link = ModbusLink::connect(h.addr(), map.clone(), VoltageSource::Scaled).unwrap();
    h.shutdown();
    let ctl = ControlOptions {
        retries: 2,
        backoff: Duration::from_millis(5),
        ..once()
    };
    assert!(matches!(
        run_mitigation(&mut link, &model, &map, Weights::default(), &meshed(), &ctl),
        Err(MitigateError::Link(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn weight_scale_does_not_change_the_choice(scale in 0.001f64..1000.0, case in 1u8..=6) {
        let m = FeederModel::bundled();
        let map = MeterMap::for_model(&m).unwrap();
        let loads = case_loads(&m, &map, case);
        let cur = m.normal_config();
        let w = Weights::default();
        let ws = Weights { violations: w.violations * scale, cost: w.cost * scale };
        let a = best_response_sweep(&m, &cur, &loads, w, &meshed()).unwrap();
        let b = best_response_sweep(&m, &cur, &loads, ws, &meshed()).unwrap();
        prop_assert_eq!(&a.chosen, &b.chosen);
        let a = exhaustive_best(&m, &cur, &loads, w, &meshed()).unwrap();
        let b = exhaustive_best(&m, &cur, &loads, ws, &meshed()).unwrap();
        prop_assert_eq!(&a.chosen, &b.chosen);
    }
}
