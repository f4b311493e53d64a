mod common;

use std::collections::BTreeMap;

use mrsim_core::topomap::{NodeId, TopoMap};
use mrsim_core::worldsim::{
    ground_truth_travel_time, BatteryCurve, BatteryState, FloorState, ScheduleEntry, World,
    WorldError, WorldParams,
};

use common::fixture;

#[test]
fn battery_curve_matches_golden_pchip() {
    let text = std::fs::read_to_string(fixture("battery_golden.json")).unwrap();
    let golden: serde_json::Value = serde_json::from_str(&text).unwrap();
    let knots: Vec<(f64, f64)> = golden["knots"]
        .as_array()
        .unwrap()
        .iter()
        .map(|k| (k[0].as_f64().unwrap(), k[1].as_f64().unwrap()))
        .collect();
    assert_eq!(knots.len(), WorldParams::default().battery_knots.len());
    let curve = BatteryCurve::new(&WorldParams::default().battery_knots).unwrap();
    let samples = golden["samples"].as_array().unwrap();
    assert!(samples.len() >= 50);
    for s in samples {
        let soc = s["soc"].as_f64().unwrap();
        let want = s["factor"].as_f64().unwrap().max(1.0);
        let got = curve.factor(soc).unwrap();
        assert!((got - want).abs() < 1e-12, "soc {soc}: {got} vs {want}");
    }
}

#[test]
fn full_charge_is_slower_than_mid_band_but_faster_than_empty() {
    let curve = BatteryCurve::new(&WorldParams::default().battery_knots).unwrap();
    let full = curve.factor(1.0).unwrap();
    assert!(full > 1.0 && full < curve.factor(0.02).unwrap());
}

#[test]
fn noise_free_travel_time_by_hand() {
    let map = TopoMap::from_json(
        r#"{"zones": ["a"], "nodes": [{"id": 0, "x": 0, "y": 0}, {"id": 1, "x": 3, "y": 0}],
            "arcs": [{"id": 0, "from": 0, "to": 1, "length": 3, "zone": "a"}]}"#,
    )
    .unwrap();
    let params = WorldParams::default();
    let curve = BatteryCurve::new(&params.battery_knots).unwrap();
    let floor = FloorState::new(&map, &BTreeMap::from([("a".to_string(), 0.4)]), &[]).unwrap();
    let battery = BatteryState {
        soc: curve.mid_band_soc(),
        discharge_rate: 0.0,
    };
    let t =
        ground_truth_travel_time(&map.arcs()[0], &battery, &floor, &curve, &params, None).unwrap();
    // 3 * 1.0 * 1.0 * (1 + 0.5 * 0.4)
    assert!((t - 3.6).abs() < 1e-12);
}

#[test]
fn floor_schedule_applies_at_global_instance() {
    let map = TopoMap::load(fixture("map1.json")).unwrap();
    let params = WorldParams {
        noise_std: 0.0,
        floor_schedule: vec![ScheduleEntry {
            tick: 5,
            zone: "core".into(),
            roughness: 1.0,
        }],
        ..WorldParams::default()
    };
    let mut world = World::new(&map, params, 1).unwrap();
    let core = map.zone_id("core").unwrap();
    let robot = world.add_robot(NodeId(3)).unwrap();
    let there = map.arc_between(NodeId(3), NodeId(4)).unwrap().unwrap();
    let back = map.arc_between(NodeId(4), NodeId(3)).unwrap().unwrap();
    let mut seen = Vec::new();
    for i in 0..8 {
        let arc = if i % 2 == 0 { there } else { back };
        let obs = world.traverse(robot, arc).unwrap();
        seen.push((obs.instance, world.floor().roughness(core)));
    }
    for (instance, roughness) in seen {
        assert_eq!(
            roughness,
            if instance >= 5 { 1.0 } else { 0.0 },
            "instance {instance}"
        );
    }
}

#[test]
fn traverse_rejects_arc_not_at_robot() {
    let map = TopoMap::load(fixture("map1.json")).unwrap();
    let mut world = World::new(&map, WorldParams::default(), 1).unwrap();
    let robot = world.add_robot(NodeId(0)).unwrap();
    let elsewhere = map.arc_between(NodeId(3), NodeId(4)).unwrap().unwrap();
    assert!(world.traverse(robot, elsewhere).is_err());
    assert!(matches!(
        World::new(
            &map,
            WorldParams {
                initial_roughness: BTreeMap::from([("nowhere".to_string(), 0.1)]),
                ..WorldParams::default()
            },
            1
        ),
        Err(WorldError::UnknownZone(_))
    ));
}

#[test]
fn same_seed_same_observations() {
    let map = TopoMap::load(fixture("map1.json")).unwrap();
    let run = |seed| {
        let mut world = World::new(&map, WorldParams::default(), seed).unwrap();
        let robot = world.add_robot(NodeId(3)).unwrap();
        let there = map.arc_between(NodeId(3), NodeId(4)).unwrap().unwrap();
        let back = map.arc_between(NodeId(4), NodeId(3)).unwrap().unwrap();
        (0..20)
            .map(|i| {
                world
                    .traverse(robot, if i % 2 == 0 { there } else { back })
                    .unwrap()
                    .travel_time
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}
