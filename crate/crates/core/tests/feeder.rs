use std::collections::{BTreeSet, VecDeque};

use modgrid_core::feeder::*;
use modgrid_core::powerflow::{solve, LoadSet, SolverOptions};
use proptest::prelude::*;

/// Breadth-first reachability over lines and closed switches, written
/// independently of the model's own topology code.
fn reachable(m: &FeederModel, config: &SwitchConfig) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([m.source()]);
    let mut queue = VecDeque::from([m.source()]);
    while let Some(b) = queue.pop_front() {
        for br in m.branches() {
            let active = match br.switch_name() {
                Some(name) => config.get(name).unwrap().is_closed(),
                None => true,
            };
            if !active || (br.from != b && br.to != b) {
                continue;
            }
            let o = br.other(b);
            if seen.insert(o) {
                queue.push_back(o);
            }
        }
    }
    seen
}

/// Union-find cycle check over the active edges among energized buses.
fn acyclic(m: &FeederModel, config: &SwitchConfig, energized: &BTreeSet<usize>) -> bool {
    let mut parent: Vec<usize> = (0..m.buses().len()).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for br in m.branches() {
        let active = br.switch_name().is_none_or(|n| config.get(n).unwrap().is_closed());
        if !active || !energized.contains(&br.from) {
            continue;
        }
        let (a, b) = (root(&mut parent, br.from), root(&mut parent, br.to));
        if a == b {
            return false;
        }
        parent[a] = b;
    }
    true
}

#[test]
fn bundled_fixture_shape() {
    let m = FeederModel::bundled();
    assert!(m.buses().len() >= 123);
    let names: Vec<&str> = m.switch_names().collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(sorted, ["S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8"]);
    assert_eq!(m.meter_count(), 206);
    for node in ATTACK_NODES {
        let b = m.bus_index(node).unwrap_or_else(|| panic!("{node} missing"));
        assert!(m.bus(b).has_load(), "{node} carries no load");
    }
    let cfg = m.normal_config();
    for s in ["S1", "S2", "S3", "S4", "S5", "S6"] {
        assert_eq!(cfg.get(s), Some(SwitchState::Closed));
    }
    assert_eq!(cfg.get("S7"), Some(SwitchState::Open));
    assert_eq!(cfg.get("S8"), Some(SwitchState::Open));
    let view = apply_switch_config(&m, &cfg).unwrap();
    assert!(view.is_radial());
    assert!(view.all_loads_energized());
    for tie in ["S7", "S8"] {
        let meshed = apply_switch_config(&m, &cfg.clone().with(tie, SwitchState::Closed).unwrap()).unwrap();
        assert!(!meshed.is_radial(), "closing {tie} should make a loop");
    }
}

#[test]
fn all_closed_is_one_component() {
    let m = FeederModel::bundled();
    let view = apply_switch_config(&m, &m.uniform_config(SwitchState::Closed)).unwrap();
    assert_eq!(view.energized_count(), m.buses().len());
    assert_eq!(view.component_count(), 1);
}

#[test]
fn opening_a_sectionalizer_drops_its_subtree() {
    let m = FeederModel::bundled();
    let cfg = m.normal_config().with("S1", SwitchState::Open).unwrap();
    let view = apply_switch_config(&m, &cfg).unwrap();
    let expect = reachable(&m, &cfg);
    assert!(expect.len() < m.buses().len());
    let got: BTreeSet<usize> = view.energized().into_iter().collect();
    assert_eq!(got, expect);
    assert!(!view.all_loads_energized());
}

#[test]
fn round_trip_is_identity() {
    let m = FeederModel::bundled();
    let again = load_feeder(&m.to_json()).unwrap();
    assert_eq!(m, again);
}

#[test]
fn config_must_cover_switch_set() {
    let m = FeederModel::bundled();
    let short = SwitchConfig::new(m.normal_config().iter().skip(1).cloned());
    assert!(apply_switch_config(&m, &short).is_err());
    let extra = SwitchConfig::new(
        m.normal_config()
            .iter()
            .cloned()
            .chain([("S9".to_string(), SwitchState::Open)]),
    );
    assert!(apply_switch_config(&m, &extra).is_err());
}

#[test]
fn radiality_product_examples() {
    let m = FeederModel::bundled();
    let cfg = m.normal_config();
    let n = m.buses().len();
    assert_eq!(radiality_indicator(&m, &vec![1.0; n], &cfg).unwrap(), 1);
    let pair = AdjacentPair { i: 0, j: 1, switch: Some("S7".into()) };
    assert_eq!(radiality_product(&[0.0, 0.0], std::slice::from_ref(&pair), &cfg).unwrap(), 0);
    assert_eq!(radiality_product(&[0.0, 0.98], std::slice::from_ref(&pair), &cfg).unwrap(), 1);
    let bad = AdjacentPair { i: 0, j: 1, switch: Some("S99".into()) };
    assert!(radiality_product(&[0.0, 0.0], &[bad], &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn topology_matches_independent_oracles(mask in prop::collection::vec(any::<bool>(), 8), extra in 0usize..8) {
        let m = FeederModel::bundled();
        let cfg = m.config_from_mask(&mask);
        let view = apply_switch_config(&m, &cfg).unwrap();
        let expect = reachable(&m, &cfg);
        let got: BTreeSet<usize> = view.energized().into_iter().collect();
        prop_assert_eq!(&got, &expect);

        // Closing one more switch never shrinks the energized set.
        let name = m.switch_names().nth(extra).unwrap().to_string();
        let more = cfg.clone().with(&name, SwitchState::Closed).unwrap();
        let bigger: BTreeSet<usize> = apply_switch_config(&m, &more).unwrap().energized().into_iter().collect();
        prop_assert!(got.is_subset(&bigger));

        if view.is_radial() {
            prop_assert!(acyclic(&m, &cfg, &expect));
            let sol = solve(&m, &view, &LoadSet::base(&m), &SolverOptions::default()).unwrap();
            let mags: Vec<f64> = sol.buses.iter().map(|b| b.magnitudes().into_iter().fold(0.0, f64::max)).collect();
            prop_assert_eq!(radiality_indicator(&m, &mags, &cfg).unwrap(), 1);
        }
    }
}
