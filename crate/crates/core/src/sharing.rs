//! Travel-time sharing between robots.
//!
//! When a robot's own record of an arc is missing or stale it can ask every
//! other robot's knowledge base for the freshest observation of the same
//! node pair, bounded above by the query target (no observation from the
//! future) and below by a staleness tolerance.

use serde::{Deserialize, Serialize};

use crate::knowledge::{format_float, KnowledgeBase, StoredObservation};
use crate::topomap::NodeId;
use crate::worldsim::RobotId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationQuery {
    pub requester: RobotId,
    pub origin: NodeId,
    pub destination: NodeId,
    /// Newest admissible instance, normally `k - 1`.
    pub target: u64,
    /// Staleness tolerance in instances.
    pub delta: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationReply {
    pub provider: RobotId,
    pub tt: f64,
    pub time_stamped: u64,
}

impl ObservationReply {
    /// Debug-log rendering using the triple-dump literal conventions.
    pub fn to_log_line(&self) -> String {
        format!(
            "robot:{}\tns:tt\t{}\tns:timeStamped\t{}",
            self.provider.0,
            format_float(self.tt),
            self.time_stamped
        )
    }
}

/// Read-only handles to every robot's knowledge base.
#[derive(Clone, Copy)]
pub struct FleetDirectory<'a> {
    stores: &'a [KnowledgeBase],
}

impl<'a> FleetDirectory<'a> {
    /// Store `i` must belong to robot `i`.
    pub fn new(stores: &'a [KnowledgeBase]) -> Self {
        debug_assert!(stores
            .iter()
            .enumerate()
            .all(|(i, kb)| kb.owner().0 as usize == i));
        Self { stores }
    }

    pub fn stores(&self) -> &'a [KnowledgeBase] {
        self.stores
    }

    pub fn store(&self, robot: RobotId) -> Option<&'a KnowledgeBase> {
        self.stores.get(robot.0 as usize)
    }
}

/// Asks every other robot and keeps the freshest admissible reply.
///
/// Ties on the timestamp go to the lowest provider id.
pub fn request_observation(
    fleet: FleetDirectory<'_>,
    query: &ObservationQuery,
) -> Option<ObservationReply> {
    let floor = query.target.saturating_sub(query.delta);
    let mut best: Option<ObservationReply> = None;
    for kb in fleet.stores() {
        if kb.owner() == query.requester {
            continue;
        }
        let Some(found) = kb.query_latest(query.origin, query.destination, query.target) else {
            continue;
        };
        if found.time_stamped < floor {
            continue;
        }
        let better = best.is_none_or(|b| {
            found.time_stamped > b.time_stamped
                || (found.time_stamped == b.time_stamped && kb.owner() < b.provider)
        });
        if better {
            best = Some(ObservationReply {
                provider: kb.owner(),
                tt: found.tt,
                time_stamped: found.time_stamped,
            });
        }
    }
    if let Some(reply) = &best {
        assert!(
            reply.time_stamped <= query.target,
            "reply at {} exceeds query target {}",
            reply.time_stamped,
            query.target
        );
    }
    best
}

/// Where the observation seeding an estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    OwnFresh,
    Shared,
    OwnStale,
    Prior,
}

impl Provenance {
    pub const ALL: [Provenance; 4] = [
        Provenance::OwnFresh,
        Provenance::Shared,
        Provenance::OwnStale,
        Provenance::Prior,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::OwnFresh => "own-fresh",
            Provenance::Shared => "shared",
            Provenance::OwnStale => "own-stale",
            Provenance::Prior => "prior",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceChoice {
    pub provenance: Provenance,
    /// `(tt, time_stamped)` of the chosen record; `None` for the prior.
    pub observation: Option<(f64, u64)>,
    /// Set when the record came from another robot.
    pub provider: Option<RobotId>,
}

/// Order in which own and shared records are preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourcePrecedence {
    /// own-fresh, then shared, then own-stale.
    #[default]
    OwnFirst,
    /// shared, then own-fresh, then own-stale.
    SharedFirst,
}

/// Picks the record that seeds the estimate for target instance `k`.
///
/// An own record is fresh when stamped at or after `k - 1 - delta`.
pub fn select_observation_source(
    own: Option<StoredObservation>,
    shared: Option<ObservationReply>,
    k: u64,
    delta: u64,
    precedence: SourcePrecedence,
) -> SourceChoice {
    let fresh_floor = k.saturating_sub(1).saturating_sub(delta);
    let own_choice = |provenance| SourceChoice {
        provenance,
        observation: own.map(|o| (o.tt, o.time_stamped)),
        provider: None,
    };
    let shared_choice = shared.map(|r| SourceChoice {
        provenance: Provenance::Shared,
        observation: Some((r.tt, r.time_stamped)),
        provider: Some(r.provider),
    });
    let own_fresh = own.is_some_and(|o| o.time_stamped >= fresh_floor);
    let ordered = match precedence {
        SourcePrecedence::OwnFirst => {
            if own_fresh {
                Some(own_choice(Provenance::OwnFresh))
            } else {
                shared_choice
            }
        }
        SourcePrecedence::SharedFirst => {
            shared_choice.or(own_fresh.then(|| own_choice(Provenance::OwnFresh)))
        }
    };
    ordered.unwrap_or_else(|| {
        if own.is_some() {
            own_choice(Provenance::OwnStale)
        } else {
            SourceChoice {
                provenance: Provenance::Prior,
                observation: None,
                provider: None,
            }
        }
    })
}

/// Decides whether, and how, a robot consults the rest of the fleet.
pub trait SharingPolicy: Send + Sync {
    fn name(&self) -> &'static str;

    fn request(
        &self,
        fleet: FleetDirectory<'_>,
        query: &ObservationQuery,
    ) -> Option<ObservationReply>;
}

/// Never asks anyone.
#[derive(Debug, Default)]
pub struct Isolated;

impl SharingPolicy for Isolated {
    fn name(&self) -> &'static str {
        "isolated"
    }

    fn request(
        &self,
        _fleet: FleetDirectory<'_>,
        _query: &ObservationQuery,
    ) -> Option<ObservationReply> {
        None
    }
}

/// Broadcasts to every robot and keeps the freshest answer.
#[derive(Debug, Default)]
pub struct Broadcast;

impl SharingPolicy for Broadcast {
    fn name(&self) -> &'static str {
        "shared"
    }

    fn request(
        &self,
        fleet: FleetDirectory<'_>,
        query: &ObservationQuery,
    ) -> Option<ObservationReply> {
        request_observation(fleet, query)
    }
}
