use modgrid_core::feeder::{FeederModel, SwitchState};
use modgrid_core::powerflow::{solve, LoadSet, SolverOptions};
use modgrid_core::regmap::*;
use modgrid_core::apply_switch_config;
use proptest::prelude::*;

#[test]
fn voltage_word_examples() {
    assert_eq!(encode_voltage_word(1.0).unwrap(), 10000);
    assert_eq!(encode_voltage_word(0.95).unwrap(), 9500);
    assert_eq!(encode_voltage_word(1.05).unwrap(), 10500);
    assert_eq!(encode_voltage_word(0.98765).unwrap(), 9877);
    assert_eq!(decode_voltage_word(9877), 0.9877);
    assert_eq!(encode_voltage_word(6.5535).unwrap(), 65535);
    assert!(encode_voltage_word(6.6).is_err());
    assert!(encode_voltage_word(-0.1).is_err());
    assert!(encode_voltage_word(f64::NAN).is_err());
}

#[test]
fn float_pair_examples() {
    let hl = WordOrder::HighFirst;
    assert_eq!(encode_float_pair(1.0, hl).unwrap(), [0x3F80, 0x0000]);
    assert_eq!(encode_float_pair(0.0, hl).unwrap(), [0x0000, 0x0000]);
    assert_eq!(encode_float_pair(-2.5, hl).unwrap(), [0xC020, 0x0000]);
    assert_eq!(encode_float_pair(1.0, WordOrder::LowFirst).unwrap(), [0x0000, 0x3F80]);
    assert!(encode_float_pair(f32::INFINITY, hl).is_err());
}

#[test]
fn chunk_plan_examples() {
    assert_eq!(plan_chunked_read(1, 206, 125), vec![(1, 125), (126, 81)]);
    assert_eq!(plan_chunked_read(1, 100, 125), vec![(1, 100)]);
    assert_eq!(
        plan_chunked_read(1001, 412, 125),
        vec![(1001, 125), (1126, 125), (1251, 125), (1376, 37)]
    );
}

fn bundled_image(closed: &[&str], setpoints: Option<Vec<u16>>) -> (RegisterImage, MeterMap) {
    let m = FeederModel::bundled();
    let map = MeterMap::for_model(&m).unwrap();
    let mut cfg = m.normal_config();
    for s in closed {
        cfg.set(s, SwitchState::Closed).unwrap();
    }
    let view = apply_switch_config(&m, &cfg).unwrap();
    let sol = solve(&m, &view, &LoadSet::base(&m), &SolverOptions::default()).unwrap();
    let sp = setpoints.unwrap_or_else(|| map.nominal_setpoints(&m));
    let img = build_image(&sol, &sp, &cfg, &map, WordOrder::HighFirst).unwrap();
    (img, map)
}

#[test]
fn meter_map_shape() {
    let m = FeederModel::bundled();
    let map = MeterMap::for_model(&m).unwrap();
    assert_eq!(map.meters().len(), 206);
    let regs: Vec<u16> = map.meters().iter().map(|x| x.register).collect();
    assert_eq!(regs, (1..=206).collect::<Vec<u16>>());
    let nodes: Vec<&str> = map.setpoints().iter().map(|s| s.node.as_str()).collect();
    assert_eq!(nodes, ["N102", "N103", "N104", "N106", "N107", "N99", "N109", "N111", "N114"]);
    assert_eq!(map.setpoint_register("N102"), Some(207));
    assert_eq!(map.setpoint_register("N114"), Some(215));
    assert_eq!(map.coil_of("S1"), Some(1));
    assert_eq!(map.coil_of("S8"), Some(8));
}

#[test]
fn image_reflects_state() {
    let (img, _) = bundled_image(&["S7"], None);
    assert_eq!(img.coils(), [true, true, true, true, true, true, true, false]);
    let mut sp = vec![1u16; 9];
    sp[..3].fill(80);
    let (img, _) = bundled_image(&[], Some(sp.clone()));
    assert_eq!(img.setpoint_words(), sp.as_slice());
    assert_eq!(img.read_holding(207, 1).unwrap(), vec![80]);
    assert_eq!(img.coils(), [true, true, true, true, true, true, false, false]);
}

#[test]
fn flat_solution_gives_flat_image() {
    let m = FeederModel::bundled();
    let map = MeterMap::for_model(&m).unwrap();
    let cfg = m.normal_config();
    let view = apply_switch_config(&m, &cfg).unwrap();
    let sol = solve(&m, &view, &LoadSet::base(&m).scaled(0.0), &SolverOptions::default()).unwrap();
    let img = build_image(&sol, &map.nominal_setpoints(&m), &cfg, &map, WordOrder::HighFirst).unwrap();
    assert!(img.voltage_words().iter().all(|w| *w == 10000));
    assert!(img.float_words().chunks(2).all(|p| p == [0x3F80, 0x0000]));
}

#[test]
fn image_is_pure_and_mirrors_agree() {
    let (a, _) = bundled_image(&["S8"], None);
    let (b, _) = bundled_image(&["S8"], None);
    assert_eq!(a, b);
    for (k, w) in a.voltage_words().iter().enumerate() {
        let f = decode_float_pair([a.float_words()[2 * k], a.float_words()[2 * k + 1]], WordOrder::HighFirst) as f64;
        assert!((decode_voltage_word(*w) - f).abs() <= 5e-5 + 1e-7, "meter {}", k + 1);
    }
}

#[test]
fn build_image_rejects_mismatch() {
    let m = FeederModel::bundled();
    let map = MeterMap::for_model(&m).unwrap();
    let cfg = m.normal_config();
    let view = apply_switch_config(&m, &cfg).unwrap();
    let mut sol = solve(&m, &view, &LoadSet::base(&m), &SolverOptions::default()).unwrap();
    assert!(build_image(&sol, &[1, 2], &cfg, &map, WordOrder::HighFirst).is_err());
    sol.buses.pop();
    assert!(build_image(&sol, &map.nominal_setpoints(&m), &cfg, &map, WordOrder::HighFirst).is_err());
}

proptest! {
    #[test]
    fn scaled_word_round_trip(pu in 0.0f64..=6.5535) {
        let w = encode_voltage_word(pu).unwrap();
        prop_assert!((decode_voltage_word(w) - pu).abs() <= 5e-5 + 1e-12);
    }

    #[test]
    fn float_pair_round_trip(bits in any::<u32>(), low_first in any::<bool>()) {
        let v = f32::from_bits(bits);
        prop_assume!(v.is_finite());
        let order = if low_first { WordOrder::LowFirst } else { WordOrder::HighFirst };
        let pair = encode_float_pair(v, order).unwrap();
        prop_assert_eq!(decode_float_pair(pair, order).to_bits(), bits);
    }

    #[test]
    fn chunk_plans_partition_the_request(start in 1u16..2000, count in 1usize..2000, limit in 1u16..300) {
        let plan = plan_chunked_read(start, count, limit);
        let mut at = start as usize;
        for (s, n) in &plan {
            prop_assert_eq!(*s as usize, at);
            prop_assert!(*n >= 1 && *n <= limit);
            at += *n as usize;
        }
        prop_assert_eq!(at, start as usize + count);
        prop_assert_eq!(plan.len(), count.div_ceil(limit as usize));
    }
}
