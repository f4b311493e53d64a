//! Per-robot ontology of travel-time observations.
//!
//! Every observation becomes an `ns:Edge` individual linked to two
//! `ns:Node` individuals:
//!
//! ```text
//! edge:n  rdf:type        ns:Edge
//! node:g  rdf:type        ns:Node
//! node:h  rdf:type        ns:Node
//! edge:n  ns:origin       node:g
//! edge:n  ns:destination  node:h
//! edge:n  ns:tt           X(k)
//! edge:n  ns:timeStamped  k
//! ```
//!
//! The triple list is the source of truth. A secondary index from
//! (origin, destination) to time-ordered observations serves queries and is
//! checked against the triples by [`KnowledgeBase::integrity_check`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use crate::topomap::{NodeId, TopoMap};
use crate::worldsim::{RobotId, TravelObservation};

pub const DUMP_HEADER: &str = "#mrs-triples v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Entity {
    Edge(u64),
    Node(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Class {
    Edge,
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Predicate {
    Type,
    Origin,
    Destination,
    Tt,
    TimeStamped,
}

#[derive(Debug, Clone, Copy)]
pub enum Object {
    Entity(Entity),
    Class(Class),
    Float(f64),
    Int(u64),
}

// Floats compare by bit pattern so triples can live in hash sets.
impl PartialEq for Object {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Object::Entity(a), Object::Entity(b)) => a == b,
            (Object::Class(a), Object::Class(b)) => a == b,
            (Object::Float(a), Object::Float(b)) => a.to_bits() == b.to_bits(),
            (Object::Int(a), Object::Int(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Object {}

impl std::hash::Hash for Object {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Object::Entity(e) => e.hash(state),
            Object::Class(c) => c.hash(state),
            Object::Float(f) => f.to_bits().hash(state),
            Object::Int(i) => i.hash(state),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub subject: Entity,
    pub predicate: Predicate,
    pub object: Object,
}

impl Triple {
    pub fn new(subject: Entity, predicate: Predicate, object: Object) -> Self {
        Self {
            subject,
            predicate,
            object,
        }
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Edge(n) => write!(f, "edge:{n}"),
            Entity::Node(id) => write!(f, "node:{}", id.0),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Predicate::Type => "rdf:type",
            Predicate::Origin => "ns:origin",
            Predicate::Destination => "ns:destination",
            Predicate::Tt => "ns:tt",
            Predicate::TimeStamped => "ns:timeStamped",
        })
    }
}

impl fmt::Display for Object {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Object::Entity(e) => e.fmt(f),
            Object::Class(Class::Edge) => f.write_str("ns:Edge"),
            Object::Class(Class::Node) => f.write_str("ns:Node"),
            Object::Float(v) => f.write_str(&format_float(*v)),
            Object::Int(v) => write!(f, "{v}"),
        }
    }
}

/// Shortest round-tripping decimal, always with a decimal point.
pub fn format_float(v: f64) -> String {
    let s = v.to_string();
    if s.contains('.') || !v.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

fn parse_entity(s: &str) -> Option<Entity> {
    if let Some(n) = s.strip_prefix("edge:") {
        return n.parse().ok().map(Entity::Edge);
    }
    s.strip_prefix("node:")
        .and_then(|n| n.parse().ok())
        .map(|n| Entity::Node(NodeId(n)))
}

fn parse_predicate(s: &str) -> Option<Predicate> {
    Some(match s {
        "rdf:type" => Predicate::Type,
        "ns:origin" => Predicate::Origin,
        "ns:destination" => Predicate::Destination,
        "ns:tt" => Predicate::Tt,
        "ns:timeStamped" => Predicate::TimeStamped,
        _ => return None,
    })
}

fn parse_object(s: &str) -> Option<Object> {
    match s {
        "ns:Edge" => return Some(Object::Class(Class::Edge)),
        "ns:Node" => return Some(Object::Class(Class::Node)),
        _ => {}
    }
    if let Some(e) = parse_entity(s) {
        return Some(Object::Entity(e));
    }
    if s.contains('.') {
        s.parse().ok().map(Object::Float)
    } else {
        s.parse().ok().map(Object::Int)
    }
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("observation refers to unknown arc {0}")]
    UnknownArc(crate::topomap::ArcId),
    #[error("conflicting travel time for {origin}->{destination} at instance {instance}: stored {stored}, new {new}")]
    Conflict {
        origin: NodeId,
        destination: NodeId,
        instance: u64,
        stored: f64,
        new: f64,
    },
    #[error("window start {0} is after window end {1}")]
    EmptyWindow(u64, u64),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One stored observation as seen through the index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredObservation {
    pub individual: Entity,
    pub tt: f64,
    pub time_stamped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// An edge individual lacks, or repeats, a required property.
    Cardinality {
        subject: Entity,
        predicate: Predicate,
        count: usize,
    },
    /// The subject of an edge property is not typed `ns:Edge`.
    Domain {
        subject: Entity,
        predicate: Predicate,
    },
    /// The object of a property has the wrong kind.
    Range {
        subject: Entity,
        predicate: Predicate,
        object: Object,
    },
    /// A `rdf:type` triple whose object is not a class, or a class assigned
    /// to the wrong kind of entity.
    BadType { subject: Entity, object: Object },
    /// The secondary index disagrees with the triples.
    Index { subject: Entity },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cardinality {
                subject,
                predicate,
                count,
            } => write!(
                f,
                "{subject} has {count} {predicate} values, expected exactly 1"
            ),
            Violation::Domain { subject, predicate } => {
                write!(f, "{subject} uses {predicate} but is not an ns:Edge")
            }
            Violation::Range {
                subject,
                predicate,
                object,
            } => write!(
                f,
                "{subject} {predicate} {object}: object outside the property range"
            ),
            Violation::BadType { subject, object } => {
                write!(f, "{subject} has invalid type {object}")
            }
            Violation::Index { subject } => {
                write!(f, "index entry for {subject} does not match the triples")
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    owner: RobotId,
    triples: Vec<Triple>,
    members: HashSet<Triple>,
    index: HashMap<(NodeId, NodeId), BTreeMap<u64, StoredObservation>>,
    next_edge: u64,
    /// Oldest observations per node pair are dropped beyond this count.
    retention: Option<usize>,
}

impl KnowledgeBase {
    pub fn new(owner: RobotId) -> Self {
        Self {
            owner,
            ..Self::default()
        }
    }

    pub fn with_retention(owner: RobotId, per_pair: usize) -> Self {
        Self {
            owner,
            retention: Some(per_pair.max(1)),
            ..Self::default()
        }
    }

    pub fn owner(&self) -> RobotId {
        self.owner
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Number of edge individuals in the index.
    pub fn observation_count(&self) -> usize {
        self.index.values().map(BTreeMap::len).sum()
    }

    fn insert(&mut self, triple: Triple) {
        if self.members.insert(triple) {
            self.triples.push(triple);
        }
    }

    /// Records a travel observation; returns the edge individual.
    ///
    /// Re-asserting an identical observation is a no-op that returns the
    /// existing individual.
    pub fn assert_observation(
        &mut self,
        obs: &TravelObservation,
        map: &TopoMap,
    ) -> Result<Entity, KnowledgeError> {
        let arc = map
            .arc(obs.arc)
            .ok_or(KnowledgeError::UnknownArc(obs.arc))?;
        let key = (arc.origin, arc.destination);
        if let Some(existing) = self.index.get(&key).and_then(|m| m.get(&obs.instance)) {
            if existing.tt.to_bits() == obs.travel_time.to_bits() {
                return Ok(existing.individual);
            }
            return Err(KnowledgeError::Conflict {
                origin: arc.origin,
                destination: arc.destination,
                instance: obs.instance,
                stored: existing.tt,
                new: obs.travel_time,
            });
        }
        let edge = Entity::Edge(self.next_edge);
        self.next_edge += 1;
        let origin = Entity::Node(arc.origin);
        let destination = Entity::Node(arc.destination);
        self.insert(Triple::new(
            edge,
            Predicate::Type,
            Object::Class(Class::Edge),
        ));
        self.insert(Triple::new(
            origin,
            Predicate::Type,
            Object::Class(Class::Node),
        ));
        self.insert(Triple::new(
            destination,
            Predicate::Type,
            Object::Class(Class::Node),
        ));
        self.insert(Triple::new(edge, Predicate::Origin, Object::Entity(origin)));
        self.insert(Triple::new(
            edge,
            Predicate::Destination,
            Object::Entity(destination),
        ));
        self.insert(Triple::new(
            edge,
            Predicate::Tt,
            Object::Float(obs.travel_time),
        ));
        self.insert(Triple::new(
            edge,
            Predicate::TimeStamped,
            Object::Int(obs.instance),
        ));
        let series = self.index.entry(key).or_default();
        series.insert(
            obs.instance,
            StoredObservation {
                individual: edge,
                tt: obs.travel_time,
                time_stamped: obs.instance,
            },
        );
        let mut dropped = Vec::new();
        if let Some(cap) = self.retention {
            while series.len() > cap {
                dropped.push(series.pop_first().expect("non-empty").1.individual);
            }
        }
        for individual in dropped {
            self.remove_individual(individual);
        }
        Ok(edge)
    }

    fn remove_individual(&mut self, edge: Entity) {
        self.triples.retain(|t| t.subject != edge);
        self.members.retain(|t| t.subject != edge);
    }

    /// Newest observation for the node pair with `time_stamped <= before`.
    pub fn query_latest(
        &self,
        origin: NodeId,
        destination: NodeId,
        before: u64,
    ) -> Option<StoredObservation> {
        self.index
            .get(&(origin, destination))?
            .range(..=before)
            .next_back()
            .map(|(_, o)| *o)
    }

    /// Observations with `t0 <= time_stamped <= t1`, ascending.
    pub fn query_window(
        &self,
        origin: NodeId,
        destination: NodeId,
        t0: u64,
        t1: u64,
    ) -> Result<Vec<StoredObservation>, KnowledgeError> {
        if t0 > t1 {
            return Err(KnowledgeError::EmptyWindow(t0, t1));
        }
        Ok(self
            .index
            .get(&(origin, destination))
            .map(|m| m.range(t0..=t1).map(|(_, o)| *o).collect())
            .unwrap_or_default())
    }

    /// Cardinality, domain and range rules of the ontology, plus index consistency.
    pub fn integrity_check(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        let mut types: HashMap<Entity, Vec<Class>> = HashMap::new();
        let mut props: HashMap<(Entity, Predicate), Vec<Object>> = HashMap::new();
        let mut subjects = Vec::new();
        for t in &self.triples {
            if !subjects.contains(&t.subject) {
                subjects.push(t.subject);
            }
            match (t.predicate, t.object) {
                (Predicate::Type, Object::Class(class)) => {
                    let fits = matches!(
                        (t.subject, class),
                        (Entity::Edge(_), Class::Edge) | (Entity::Node(_), Class::Node)
                    );
                    if !fits {
                        violations.push(Violation::BadType {
                            subject: t.subject,
                            object: t.object,
                        });
                    }
                    types.entry(t.subject).or_default().push(class);
                }
                (Predicate::Type, object) => violations.push(Violation::BadType {
                    subject: t.subject,
                    object,
                }),
                (predicate, object) => props
                    .entry((t.subject, predicate))
                    .or_default()
                    .push(object),
            }
        }
        let is_a = |e: &Entity, class: Class| types.get(e).is_some_and(|c| c.contains(&class));

        // Domain: every edge property sits on an ns:Edge.
        let mut seen = HashSet::new();
        for t in &self.triples {
            if t.predicate != Predicate::Type
                && !is_a(&t.subject, Class::Edge)
                && seen.insert((t.subject, t.predicate))
            {
                violations.push(Violation::Domain {
                    subject: t.subject,
                    predicate: t.predicate,
                });
            }
        }
        // Range: origin/destination point at ns:Node individuals, tt is a
        // positive float, timeStamped an integer.
        for t in &self.triples {
            let ok = match (t.predicate, t.object) {
                (Predicate::Type, _) => true,
                (Predicate::Origin | Predicate::Destination, Object::Entity(e)) => {
                    is_a(&e, Class::Node)
                }
                (Predicate::Tt, Object::Float(v)) => v > 0.0 && v.is_finite(),
                (Predicate::TimeStamped, Object::Int(_)) => true,
                _ => false,
            };
            if !ok {
                violations.push(Violation::Range {
                    subject: t.subject,
                    predicate: t.predicate,
                    object: t.object,
                });
            }
        }
        // Cardinality on every edge individual.
        for subject in &subjects {
            if !is_a(subject, Class::Edge) {
                continue;
            }
            for predicate in [
                Predicate::Origin,
                Predicate::Destination,
                Predicate::Tt,
                Predicate::TimeStamped,
            ] {
                let count = props.get(&(*subject, predicate)).map_or(0, Vec::len);
                if count != 1 {
                    violations.push(Violation::Cardinality {
                        subject: *subject,
                        predicate,
                        count,
                    });
                }
            }
        }
        // Index must list exactly the complete edge individuals.
        let mut indexed = HashSet::new();
        for (&(o, d), series) in &self.index {
            for (&ts, stored) in series {
                indexed.insert(stored.individual);
                let single = |p| {
                    props
                        .get(&(stored.individual, p))
                        .filter(|v| v.len() == 1)
                        .map(|v| v[0])
                };
                let consistent = single(Predicate::Origin) == Some(Object::Entity(Entity::Node(o)))
                    && single(Predicate::Destination) == Some(Object::Entity(Entity::Node(d)))
                    && single(Predicate::Tt) == Some(Object::Float(stored.tt))
                    && single(Predicate::TimeStamped) == Some(Object::Int(ts));
                if !consistent {
                    violations.push(Violation::Index {
                        subject: stored.individual,
                    });
                }
            }
        }
        for subject in &subjects {
            if is_a(subject, Class::Edge) && !indexed.contains(subject) {
                violations.push(Violation::Index { subject: *subject });
            }
        }
        violations
    }

    /// Adds a raw triple without any checking; used to load dumps and to
    /// build deliberately broken stores.
    pub fn insert_raw(&mut self, triple: Triple) {
        if let Entity::Edge(n) = triple.subject {
            self.next_edge = self.next_edge.max(n + 1);
        }
        self.insert(triple);
    }

    fn rebuild_index(&mut self) {
        let mut fields: BTreeMap<u64, [Option<Object>; 4]> = BTreeMap::new();
        let mut edges = HashSet::new();
        for t in &self.triples {
            let Entity::Edge(n) = t.subject else { continue };
            let slot = match t.predicate {
                Predicate::Type => {
                    if t.object == Object::Class(Class::Edge) {
                        edges.insert(n);
                    }
                    continue;
                }
                Predicate::Origin => 0,
                Predicate::Destination => 1,
                Predicate::Tt => 2,
                Predicate::TimeStamped => 3,
            };
            fields.entry(n).or_default()[slot] = Some(t.object);
        }
        self.index.clear();
        for (n, f) in fields {
            if !edges.contains(&n) {
                continue;
            }
            if let [Some(Object::Entity(Entity::Node(o))), Some(Object::Entity(Entity::Node(d))), Some(Object::Float(tt)), Some(Object::Int(ts))] =
                f
            {
                self.index.entry((o, d)).or_default().insert(
                    ts,
                    StoredObservation {
                        individual: Entity::Edge(n),
                        tt,
                        time_stamped: ts,
                    },
                );
            }
        }
    }

    pub fn write_triples<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{DUMP_HEADER}")?;
        for t in &self.triples {
            writeln!(out, "{}\t{}\t{}", t.subject, t.predicate, t.object)?;
        }
        Ok(())
    }

    pub fn export_triples(&self, path: impl AsRef<Path>) -> Result<(), KnowledgeError> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_triples(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_triples<R: BufRead>(owner: RobotId, input: R) -> Result<Self, KnowledgeError> {
        let mut kb = Self::new(owner);
        let mut lines = input.lines().enumerate();
        let header = lines.next().map(|(_, line)| line).transpose()?;
        match header.as_deref() {
            Some(DUMP_HEADER) => {}
            _ => {
                return Err(KnowledgeError::Parse {
                    line: 1,
                    message: format!("expected header {DUMP_HEADER:?}"),
                })
            }
        }
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let err = |message: String| KnowledgeError::Parse {
                line: lineno,
                message,
            };
            let parts: Vec<&str> = line.split('\t').collect();
            let [s, p, o] = parts.as_slice() else {
                return Err(err(format!(
                    "expected 3 tab-separated fields, found {}",
                    parts.len()
                )));
            };
            let subject = parse_entity(s).ok_or_else(|| err(format!("bad subject {s:?}")))?;
            let predicate =
                parse_predicate(p).ok_or_else(|| err(format!("bad predicate {p:?}")))?;
            let object = parse_object(o).ok_or_else(|| err(format!("bad object {o:?}")))?;
            kb.insert_raw(Triple::new(subject, predicate, object));
        }
        kb.rebuild_index();
        Ok(kb)
    }

    pub fn import_triples(owner: RobotId, path: impl AsRef<Path>) -> Result<Self, KnowledgeError> {
        let file = std::fs::File::open(path)?;
        Self::read_triples(owner, BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topomap::ArcId;

    fn map() -> TopoMap {
        TopoMap::from_json(
            r#"{
            "nodes": [{"id": 1, "x": 0, "y": 0}, {"id": 2, "x": 1, "y": 0}, {"id": 3, "x": 2, "y": 0}],
            "arcs": [{"id": 0, "from": 1, "to": 2, "length": 1, "zone": "z", "bidirectional": true},
                     {"id": 1, "from": 2, "to": 3, "length": 1, "zone": "z"}],
            "zones": ["z"]
        }"#,
        )
        .unwrap()
    }

    fn obs(arc: u32, instance: u64, tt: f64) -> TravelObservation {
        TravelObservation {
            arc: ArcId(arc),
            robot: RobotId(0),
            instance,
            travel_time: tt,
        }
    }

    #[test]
    fn observation_decomposes_into_seven_triples() {
        let map = map();
        let mut kb = KnowledgeBase::new(RobotId(0));
        let edge = kb.assert_observation(&obs(0, 7, 10.5), &map).unwrap();
        assert_eq!(kb.len(), 7);
        assert!(kb
            .triples()
            .contains(&Triple::new(edge, Predicate::Tt, Object::Float(10.5))));
        assert!(kb
            .triples()
            .contains(&Triple::new(edge, Predicate::TimeStamped, Object::Int(7))));
        // Same arc again: node typing is shared.
        kb.assert_observation(&obs(0, 9, 10.7), &map).unwrap();
        assert_eq!(kb.len(), 12);
    }

    #[test]
    fn reassertion_is_idempotent_and_conflicts_are_errors() {
        let map = map();
        let mut kb = KnowledgeBase::new(RobotId(0));
        let a = kb.assert_observation(&obs(0, 7, 10.5), &map).unwrap();
        let b = kb.assert_observation(&obs(0, 7, 10.5), &map).unwrap();
        assert_eq!(a, b);
        assert_eq!(kb.len(), 7);
        assert!(matches!(
            kb.assert_observation(&obs(0, 7, 11.0), &map),
            Err(KnowledgeError::Conflict { .. })
        ));
        assert!(matches!(
            kb.assert_observation(&obs(42, 7, 11.0), &map),
            Err(KnowledgeError::UnknownArc(ArcId(42)))
        ));
    }

    #[test]
    fn latest_and_window_queries() {
        let map = map();
        let mut kb = KnowledgeBase::new(RobotId(0));
        assert!(kb.query_latest(NodeId(1), NodeId(2), 100).is_none());
        kb.assert_observation(&obs(0, 5, 3.0), &map).unwrap();
        kb.assert_observation(&obs(0, 9, 4.0), &map).unwrap();
        kb.assert_observation(&obs(1, 6, 2.0), &map).unwrap();
        let latest = kb.query_latest(NodeId(1), NodeId(2), 8).unwrap();
        assert_eq!((latest.tt, latest.time_stamped), (3.0, 5));
        let inclusive = kb.query_latest(NodeId(1), NodeId(2), 9).unwrap();
        assert_eq!(inclusive.time_stamped, 9);
        assert!(kb.query_latest(NodeId(1), NodeId(2), 4).is_none());
        // Direction matters.
        assert!(kb.query_latest(NodeId(2), NodeId(1), 100).is_none());

        assert!(kb
            .query_window(NodeId(1), NodeId(2), 6, 8)
            .unwrap()
            .is_empty());
        let all = kb.query_window(NodeId(1), NodeId(2), 0, u64::MAX).unwrap();
        assert_eq!(
            all.iter().map(|o| o.time_stamped).collect::<Vec<_>>(),
            vec![5, 9]
        );
        assert!(matches!(
            kb.query_window(NodeId(1), NodeId(2), 9, 5),
            Err(KnowledgeError::EmptyWindow(9, 5))
        ));
    }

    #[test]
    fn integrity_of_constructed_store() {
        let map = map();
        let mut kb = KnowledgeBase::new(RobotId(0));
        for i in 0..20 {
            kb.assert_observation(&obs(i % 3, i as u64 + 1, 1.0 + i as f64), &map)
                .unwrap();
        }
        assert!(kb.integrity_check().is_empty());
    }

    #[test]
    fn missing_destination_is_reported() {
        let mut kb = KnowledgeBase::new(RobotId(0));
        let edge = Entity::Edge(0);
        let node = Entity::Node(NodeId(1));
        kb.insert_raw(Triple::new(
            edge,
            Predicate::Type,
            Object::Class(Class::Edge),
        ));
        kb.insert_raw(Triple::new(
            node,
            Predicate::Type,
            Object::Class(Class::Node),
        ));
        kb.insert_raw(Triple::new(edge, Predicate::Origin, Object::Entity(node)));
        kb.insert_raw(Triple::new(edge, Predicate::Tt, Object::Float(2.0)));
        kb.insert_raw(Triple::new(edge, Predicate::TimeStamped, Object::Int(3)));
        let violations = kb.integrity_check();
        let cardinality: Vec<_> = violations
            .iter()
            .filter(|v| matches!(v, Violation::Cardinality { .. }))
            .collect();
        assert_eq!(
            cardinality,
            vec![&Violation::Cardinality {
                subject: edge,
                predicate: Predicate::Destination,
                count: 0
            }]
        );
        assert!(violations[0].to_string().contains("edge:0"));
    }

    #[test]
    fn domain_and_range_violations() {
        let map = map();
        let mut kb = KnowledgeBase::new(RobotId(0));
        kb.assert_observation(&obs(0, 1, 2.0), &map).unwrap();
        let node = Entity::Node(NodeId(1));
        // A node carrying a travel time.
        kb.insert_raw(Triple::new(node, Predicate::Tt, Object::Float(2.0)));
        // An origin that is a literal.
        kb.insert_raw(Triple::new(
            Entity::Edge(0),
            Predicate::Origin,
            Object::Float(4.0),
        ));
        let v = kb.integrity_check();
        assert!(v.contains(&Violation::Domain {
            subject: node,
            predicate: Predicate::Tt
        }));
        assert!(v.contains(&Violation::Range {
            subject: Entity::Edge(0),
            predicate: Predicate::Origin,
            object: Object::Float(4.0)
        }));
    }

    #[test]
    fn dump_round_trip() {
        let map = map();
        let mut kb = KnowledgeBase::new(RobotId(2));
        let mut empty = Vec::new();
        kb.write_triples(&mut empty).unwrap();
        assert_eq!(
            String::from_utf8(empty).unwrap(),
            format!("{DUMP_HEADER}\n")
        );

        kb.assert_observation(&obs(0, 1, 3.0), &map).unwrap();
        kb.assert_observation(&obs(1, 2, 0.1 + 0.2), &map).unwrap();
        let mut bytes = Vec::new();
        kb.write_triples(&mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("edge:0\tns:tt\t3.0\n"), "{text}");
        let back = KnowledgeBase::read_triples(RobotId(2), bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        back.write_triples(&mut again).unwrap();
        assert_eq!(bytes, again);
        assert_eq!(
            back.query_latest(NodeId(2), NodeId(3), 5).unwrap().tt,
            0.1 + 0.2
        );
        assert!(back.integrity_check().is_empty());
    }

    #[test]
    fn parse_errors_name_lines() {
        let text = format!("{DUMP_HEADER}\nedge:0\trdf:type\tns:Edge\nedge:0\tns:bogus\t1\n");
        match KnowledgeBase::read_triples(RobotId(0), text.as_bytes()) {
            Err(KnowledgeError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(KnowledgeBase::read_triples(RobotId(0), "nope\n".as_bytes()).is_err());
    }

    #[test]
    fn retention_cap_drops_oldest() {
        let map = map();
        let mut kb = KnowledgeBase::with_retention(RobotId(0), 2);
        for i in 1..=4 {
            kb.assert_observation(&obs(0, i, i as f64), &map).unwrap();
        }
        let all = kb.query_window(NodeId(1), NodeId(2), 0, 10).unwrap();
        assert_eq!(
            all.iter().map(|o| o.time_stamped).collect::<Vec<_>>(),
            vec![3, 4]
        );
        assert!(kb.integrity_check().is_empty());
    }
}
