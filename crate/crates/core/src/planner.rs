//! Dijkstra search with edge weights estimated on demand.
//!
//! The search follows the textbook structure: single-source initialisation,
//! repeated extract-min with a step counter `j`, and strict-inequality
//! relaxation. Edge weights come from a [`CostProvider`] and are computed at
//! most once per arc per planning call, so every Dijkstra step sees the same
//! estimate for the same arc.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimatorConfig, TravelTimeSeries};
use crate::knowledge::KnowledgeBase;
use crate::sharing::{
    select_observation_source, FleetDirectory, ObservationQuery, Provenance, SharingPolicy,
    SourcePrecedence,
};
use crate::topomap::{Arc, ArcId, MapError, NodeId, TopoMap};
use crate::worldsim::{RobotId, TravelObservation};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("source and destination must differ (both {0})")]
    SameEndpoints(NodeId),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("destination {destination} is unreachable from {from}")]
    Unreachable { from: NodeId, destination: NodeId },
    #[error("no arc from {0} to {1}")]
    MissingArc(NodeId, NodeId),
    #[error("cost provider returned non-positive weight {weight} for arc {arc}")]
    InvalidWeight { arc: ArcId, weight: f64 },
    #[error("cost estimation failed for arc {arc}: {message}")]
    Estimation { arc: ArcId, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCost {
    pub weight: f64,
    pub provenance: Provenance,
}

/// Supplies edge weights to the planner.
pub trait CostProvider {
    /// Weight of `arc` when requested at Dijkstra step `step`.
    fn edge_cost(&mut self, arc: &Arc, step: usize) -> Result<EdgeCost, PlanError>;
}

/// Static weights, mostly for tests and baselines.
#[derive(Debug, Clone, Default)]
pub struct FrozenCosts {
    weights: HashMap<ArcId, f64>,
}

impl FrozenCosts {
    pub fn new(weights: HashMap<ArcId, f64>) -> Self {
        Self { weights }
    }

    /// Weight equal to arc length.
    pub fn from_lengths(map: &TopoMap) -> Self {
        Self::new(map.arcs().iter().map(|a| (a.id, a.length)).collect())
    }
}

impl CostProvider for FrozenCosts {
    fn edge_cost(&mut self, arc: &Arc, _step: usize) -> Result<EdgeCost, PlanError> {
        let weight = *self.weights.get(&arc.id).ok_or(PlanError::Estimation {
            arc: arc.id,
            message: "no frozen weight".into(),
        })?;
        Ok(EdgeCost {
            weight,
            provenance: Provenance::Prior,
        })
    }
}

/// Weights from a robot's own filters, seeded from its store or the fleet.
pub struct EstimatedCosts<'a> {
    pub robot: RobotId,
    pub series: &'a BTreeMap<ArcId, TravelTimeSeries>,
    /// Used for arcs the robot has never observed.
    pub config: &'a EstimatorConfig,
    pub own: &'a KnowledgeBase,
    pub fleet: FleetDirectory<'a>,
    pub policy: &'a dyn SharingPolicy,
    /// Estimation target instance.
    pub k: u64,
    pub delta: u64,
    pub precedence: SourcePrecedence,
    /// Prior travel time per unit length for unobserved arcs.
    pub prior_pace: f64,
}

impl CostProvider for EstimatedCosts<'_> {
    fn edge_cost(&mut self, arc: &Arc, _step: usize) -> Result<EdgeCost, PlanError> {
        let newest = self.k.saturating_sub(1);
        let own = self.own.query_latest(arc.origin, arc.destination, newest);
        let own_fresh = own.is_some_and(|o| o.time_stamped + self.delta >= newest);
        let shared = if own_fresh && self.precedence == SourcePrecedence::OwnFirst {
            None
        } else {
            self.policy.request(
                self.fleet,
                &ObservationQuery {
                    requester: self.robot,
                    origin: arc.origin,
                    destination: arc.destination,
                    target: newest,
                    delta: self.delta,
                },
            )
        };
        let choice = select_observation_source(own, shared, self.k, self.delta, self.precedence);
        let fallback = match (choice.provenance, choice.observation, choice.provider) {
            (Provenance::Shared, Some((tt, ts)), Some(provider)) => Some(TravelObservation {
                arc: arc.id,
                robot: provider,
                instance: ts,
                travel_time: tt,
            }),
            _ => None,
        };
        let prior = arc.length * self.prior_pace;
        let estimate = match self.series.get(&arc.id) {
            Some(series) => series.estimate(self.k, fallback.as_ref(), prior),
            None => TravelTimeSeries::new(self.config.clone()).estimate(
                self.k,
                fallback.as_ref(),
                prior,
            ),
        }
        .map_err(|e| PlanError::Estimation {
            arc: arc.id,
            message: e.to_string(),
        })?;
        Ok(EdgeCost {
            weight: estimate.value,
            provenance: choice.provenance,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPlan {
    pub robot: RobotId,
    pub call: usize,
    pub arcs: Vec<ArcId>,
    pub costs: Vec<f64>,
    pub total: f64,
    pub provenance: Vec<Provenance>,
}

impl PathPlan {
    pub fn empty(robot: RobotId, call: usize) -> Self {
        Self {
            robot,
            call,
            arcs: Vec::new(),
            costs: Vec::new(),
            total: 0.0,
            provenance: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serialization cannot fail")
    }

    pub fn provenance_count(&self, which: Provenance) -> usize {
        self.provenance.iter().filter(|&&p| p == which).count()
    }

    /// Checks chaining against the map and the cost-sum invariant.
    pub fn is_consistent(&self, map: &TopoMap) -> bool {
        let chained = self
            .arcs
            .windows(2)
            .all(|w| match (map.arc(w[0]), map.arc(w[1])) {
                (Some(a), Some(b)) => a.destination == b.origin,
                _ => false,
            });
        let sum: f64 = self.costs.iter().sum();
        chained
            && self.arcs.len() == self.costs.len()
            && self.arcs.len() == self.provenance.len()
            && (sum - self.total).abs() <= 1e-9 * sum.abs().max(1.0)
    }
}

/// Tentative distances, predecessors and the extract-min counter.
#[derive(Debug, Clone, Default)]
pub struct PlannerScratch {
    pub dist: BTreeMap<NodeId, f64>,
    /// Predecessor node and the arc used to reach each node.
    pub pred: BTreeMap<NodeId, (NodeId, ArcId)>,
    pub visited: HashSet<NodeId>,
    pub step: usize,
}

impl PlannerScratch {
    pub fn initialise_single_source(map: &TopoMap, source: NodeId) -> Self {
        let mut scratch = Self::default();
        for n in map.nodes() {
            scratch.dist.insert(n.id, f64::INFINITY);
        }
        scratch.dist.insert(source, 0.0);
        scratch
    }

    pub fn distance(&self, v: NodeId) -> f64 {
        self.dist.get(&v).copied().unwrap_or(f64::INFINITY)
    }
}

/// `if d[v] > d[u] + w { d[v] = d[u] + w; pi[v] = u }`; returns whether `v` improved.
pub fn relax(u: NodeId, v: NodeId, arc: ArcId, w: f64, scratch: &mut PlannerScratch) -> bool {
    let candidate = scratch.distance(u) + w;
    if scratch.distance(v) > candidate {
        scratch.dist.insert(v, candidate);
        scratch.pred.insert(v, (u, arc));
        true
    } else {
        false
    }
}

/// Per-call memo of edge weights.
#[derive(Debug, Default)]
pub struct CallCache {
    costs: HashMap<ArcId, EdgeCost>,
}

impl CallCache {
    pub fn get(&self, arc: ArcId) -> Option<EdgeCost> {
        self.costs.get(&arc).copied()
    }
}

/// Weight of the arc `u -> v`, estimated once per call.
pub fn find_edge_cost(
    map: &TopoMap,
    u: NodeId,
    v: NodeId,
    step: usize,
    provider: &mut dyn CostProvider,
    cache: &mut CallCache,
) -> Result<EdgeCost, PlanError> {
    let id = map.arc_between(u, v)?.ok_or(PlanError::MissingArc(u, v))?;
    if let Some(cost) = cache.costs.get(&id) {
        return Ok(*cost);
    }
    let arc = map.arc(id).expect("indexed arc exists");
    let cost = provider.edge_cost(arc, step)?;
    if !(cost.weight > 0.0 && cost.weight.is_finite()) {
        return Err(PlanError::InvalidWeight {
            arc: id,
            weight: cost.weight,
        });
    }
    cache.costs.insert(id, cost);
    Ok(cost)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueEntry {
    dist: f64,
    node: NodeId,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    // Reversed so the max-heap pops the smallest distance, then lowest node id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest path from `source` to `destination` under the provider's weights.
pub fn plan(
    map: &TopoMap,
    source: NodeId,
    destination: NodeId,
    provider: &mut dyn CostProvider,
    call: usize,
) -> Result<PathPlan, PlanError> {
    map.node(source)?;
    map.node(destination)?;
    if source == destination {
        return Err(PlanError::SameEndpoints(source));
    }
    let mut scratch = PlannerScratch::initialise_single_source(map, source);
    let mut cache = CallCache::default();
    let mut queue = BinaryHeap::new();
    queue.push(QueueEntry {
        dist: 0.0,
        node: source,
    });
    while let Some(QueueEntry { dist, node: u }) = queue.pop() {
        if scratch.visited.contains(&u) || dist > scratch.distance(u) {
            continue;
        }
        scratch.step += 1;
        scratch.visited.insert(u);
        for &(_, v) in map.neighbors(u)? {
            if scratch.visited.contains(&v) {
                continue;
            }
            let cost = find_edge_cost(map, u, v, scratch.step, provider, &mut cache)?;
            let arc = map.arc_between(u, v)?.expect("neighbor arc exists");
            if relax(u, v, arc, cost.weight, &mut scratch) {
                queue.push(QueueEntry {
                    dist: scratch.distance(v),
                    node: v,
                });
            }
        }
    }

    if !scratch.distance(destination).is_finite() {
        return Err(PlanError::Unreachable {
            from: source,
            destination,
        });
    }
    let mut arcs = Vec::new();
    let mut at = destination;
    while at != source {
        let (prev, arc) = scratch.pred[&at];
        arcs.push(arc);
        at = prev;
    }
    arcs.reverse();
    let mut plan = PathPlan::empty(RobotId(0), call);
    for arc in arcs {
        let cost = cache.get(arc).expect("every relaxed arc was costed");
        plan.arcs.push(arc);
        plan.costs.push(cost.weight);
        plan.provenance.push(cost.provenance);
    }
    plan.total = plan.costs.iter().sum();
    debug_assert!((plan.total - scratch.distance(destination)).abs() <= 1e-9 * plan.total.max(1.0));
    Ok(plan)
}
