mod common;

use std::collections::{BTreeMap, HashMap};

use mrsim_core::estimator::EstimatorConfig;
use mrsim_core::knowledge::KnowledgeBase;
use mrsim_core::planner::{plan, CostProvider, EdgeCost, EstimatedCosts, FrozenCosts, PlanError};
use mrsim_core::sharing::{FleetDirectory, Isolated, Provenance, SourcePrecedence};
use mrsim_core::topomap::{Arc, ArcId, NodeId, TopoMap};
use mrsim_core::worldsim::RobotId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{exhaustive_shortest, fixture, random_digraph};

#[test]
fn dijkstra_matches_enumeration_on_small_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let density = rng.random_range(0.1..0.6);
        let (map, weights) = random_digraph(&mut rng, n, density);
        let s = NodeId(rng.random_range(0..n as u32));
        let t = NodeId(rng.random_range(0..n as u32));
        if s == t {
            continue;
        }
        let mut provider = FrozenCosts::new(weights.clone());
        match (
            plan(&map, s, t, &mut provider, 0),
            exhaustive_shortest(&map, &weights, s, t),
        ) {
            (Ok(p), Some(best)) => {
                assert!((p.total - best).abs() < 1e-9, "{} vs {best}", p.total);
                assert!(p.is_consistent(&map));
            }
            (Err(PlanError::Unreachable { .. }), None) => {}
            (got, want) => panic!("{got:?} vs {want:?}"),
        }
    }
}

struct Counting {
    inner: FrozenCosts,
    calls: HashMap<ArcId, usize>,
}

impl CostProvider for Counting {
    fn edge_cost(&mut self, arc: &Arc, step: usize) -> Result<EdgeCost, PlanError> {
        *self.calls.entry(arc.id).or_default() += 1;
        self.inner.edge_cost(arc, step)
    }
}

#[test]
fn every_arc_is_costed_at_most_once_per_call() {
    let map = TopoMap::load(fixture("map1.json")).unwrap();
    let mut provider = Counting {
        inner: FrozenCosts::from_lengths(&map),
        calls: HashMap::new(),
    };
    let p = plan(&map, NodeId(0), NodeId(9), &mut provider, 0).unwrap();
    assert!(provider.calls.values().all(|&c| c == 1));
    assert!(p.is_consistent(&map));
    assert_eq!(map.arc(p.arcs[0]).unwrap().origin, NodeId(0));
    assert_eq!(
        map.arc(*p.arcs.last().unwrap()).unwrap().destination,
        NodeId(9)
    );
}

#[test]
fn same_endpoints_and_unknown_nodes_are_errors() {
    let map = TopoMap::load(fixture("map1.json")).unwrap();
    let mut provider = FrozenCosts::from_lengths(&map);
    assert!(matches!(
        plan(&map, NodeId(2), NodeId(2), &mut provider, 0),
        Err(PlanError::SameEndpoints(NodeId(2)))
    ));
    assert!(plan(&map, NodeId(2), NodeId(77), &mut provider, 0).is_err());
}

#[test]
fn cold_fleet_plans_on_length_priors() {
    let map = TopoMap::load(fixture("map2.json")).unwrap();
    let config = EstimatorConfig::random_walk(4);
    let stores = vec![KnowledgeBase::new(RobotId(0))];
    let series = BTreeMap::new();
    let mut provider = EstimatedCosts {
        robot: RobotId(0),
        series: &series,
        config: &config,
        own: &stores[0],
        fleet: FleetDirectory::new(&stores),
        policy: &Isolated,
        k: 1,
        delta: 25,
        precedence: SourcePrecedence::OwnFirst,
        prior_pace: 1.5,
    };
    let p = plan(&map, NodeId(0), NodeId(3), &mut provider, 0).unwrap();
    let lengths: HashMap<ArcId, f64> = map.arcs().iter().map(|a| (a.id, a.length * 1.5)).collect();
    let best = exhaustive_shortest(&map, &lengths, NodeId(0), NodeId(3)).unwrap();
    assert!((p.total - best).abs() < 1e-9);
    assert_eq!(p.provenance_count(Provenance::Prior), p.arcs.len());
}
