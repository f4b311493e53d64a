//! Topological map of the factory floor.
//!
//! A [`TopoMap`] is a directed graph of [`Node`]s joined by [`Arc`]s. Every
//! arc belongs to a floor zone, the unit in which the simulated floor
//! degrades. Maps are immutable once loaded and are shared read-only by all
//! robots.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArcId(pub u32);

/// Index into the map's zone table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ZoneId(pub u16);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ArcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub position: (f64, f64),
    /// Port label; `Some` marks the node as a pick-up/drop port.
    pub port: Option<String>,
}

impl Node {
    pub fn is_port(&self) -> bool {
        self.port.is_some()
    }

    pub fn label(&self) -> &str {
        self.port.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub id: ArcId,
    pub origin: NodeId,
    pub destination: NodeId,
    pub length: f64,
    pub zone: ZoneId,
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("failed to read map file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed map file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("map has no nodes")]
    Empty,
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("node {0} has a non-finite position")]
    NonFinitePosition(NodeId),
    #[error("port label {label:?} used by nodes {first} and {second}")]
    DuplicatePort {
        label: String,
        first: NodeId,
        second: NodeId,
    },
    #[error("duplicate arc id {0}")]
    DuplicateArc(ArcId),
    #[error("arc {arc} references unknown node {node}")]
    DanglingNode { arc: ArcId, node: NodeId },
    #[error("arc {0} is a self-loop")]
    SelfLoop(ArcId),
    #[error("arc {arc} has non-positive length {length}")]
    NonPositiveLength { arc: ArcId, length: f64 },
    #[error("arc {arc} references unknown zone {zone:?}")]
    UnknownZone { arc: ArcId, zone: String },
    #[error("arcs {first} and {second} both connect {origin} -> {destination}")]
    ParallelArcs {
        first: ArcId,
        second: ArcId,
        origin: NodeId,
        destination: NodeId,
    },
    #[error("duplicate zone name {0:?}")]
    DuplicateZone(String),
    #[error("map is not connected: node {0} is unreachable from node {1}")]
    Disconnected(NodeId, NodeId),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: u32,
    x: f64,
    y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    port: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArcRecord {
    id: u32,
    from: u32,
    to: u32,
    length: f64,
    zone: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    bidirectional: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    nodes: Vec<NodeRecord>,
    arcs: Vec<ArcRecord>,
    zones: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TopoMap {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    zones: Vec<String>,
    node_index: BTreeMap<NodeId, usize>,
    arc_index: BTreeMap<ArcId, usize>,
    /// Outgoing arcs per node index, ascending by arc id.
    adjacency: Vec<Vec<(ArcId, NodeId)>>,
    pair_index: HashMap<(NodeId, NodeId), ArcId>,
}

impl TopoMap {
    /// Reads and validates a JSON map file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MapError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        let file: MapFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    /// Serializes the map with every arc written as a directed record.
    pub fn to_json(&self) -> String {
        let file = MapFile {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id.0,
                    x: n.position.0,
                    y: n.position.1,
                    port: n.port.clone(),
                })
                .collect(),
            arcs: self
                .arcs
                .iter()
                .map(|a| ArcRecord {
                    id: a.id.0,
                    from: a.origin.0,
                    to: a.destination.0,
                    length: a.length,
                    zone: self.zones[a.zone.0 as usize].clone(),
                    bidirectional: false,
                })
                .collect(),
            zones: self.zones.clone(),
        };
        serde_json::to_string_pretty(&file).expect("map serialization cannot fail")
    }

    fn from_file(file: MapFile) -> Result<Self, MapError> {
        if file.nodes.is_empty() {
            return Err(MapError::Empty);
        }

        let mut zone_lookup = HashMap::new();
        for (i, name) in file.zones.iter().enumerate() {
            if zone_lookup.insert(name.clone(), ZoneId(i as u16)).is_some() {
                return Err(MapError::DuplicateZone(name.clone()));
            }
        }

        let mut nodes = Vec::with_capacity(file.nodes.len());
        let mut node_index = BTreeMap::new();
        let mut ports: HashMap<String, NodeId> = HashMap::new();
        for rec in file.nodes {
            let id = NodeId(rec.id);
            if !rec.x.is_finite() || !rec.y.is_finite() {
                return Err(MapError::NonFinitePosition(id));
            }
            if node_index.insert(id, nodes.len()).is_some() {
                return Err(MapError::DuplicateNode(id));
            }
            if let Some(label) = &rec.port {
                if let Some(&first) = ports.get(label) {
                    return Err(MapError::DuplicatePort {
                        label: label.clone(),
                        first,
                        second: id,
                    });
                }
                ports.insert(label.clone(), id);
            }
            nodes.push(Node {
                id,
                position: (rec.x, rec.y),
                port: rec.port,
            });
        }

        let mut arcs = Vec::with_capacity(file.arcs.len());
        let mut reverse = Vec::new();
        let mut used_ids = BTreeSet::new();
        for rec in &file.arcs {
            let id = ArcId(rec.id);
            if !used_ids.insert(id) {
                return Err(MapError::DuplicateArc(id));
            }
            for node in [rec.from, rec.to] {
                if !node_index.contains_key(&NodeId(node)) {
                    return Err(MapError::DanglingNode {
                        arc: id,
                        node: NodeId(node),
                    });
                }
            }
            if rec.from == rec.to {
                return Err(MapError::SelfLoop(id));
            }
            // NaN fails this comparison too.
            if !(rec.length > 0.0 && rec.length.is_finite()) {
                return Err(MapError::NonPositiveLength {
                    arc: id,
                    length: rec.length,
                });
            }
            let zone = *zone_lookup
                .get(&rec.zone)
                .ok_or_else(|| MapError::UnknownZone {
                    arc: id,
                    zone: rec.zone.clone(),
                })?;
            arcs.push(Arc {
                id,
                origin: NodeId(rec.from),
                destination: NodeId(rec.to),
                length: rec.length,
                zone,
            });
            if rec.bidirectional {
                reverse.push((NodeId(rec.to), NodeId(rec.from), rec.length, zone));
            }
        }
        // Reverse halves of bidirectional arcs get fresh ids after the largest declared id.
        let first_free = used_ids.iter().next_back().map_or(0, |a| a.0 + 1);
        for (next_id, (origin, destination, length, zone)) in (first_free..).zip(reverse) {
            arcs.push(Arc {
                id: ArcId(next_id),
                origin,
                destination,
                length,
                zone,
            });
        }

        let mut arc_index = BTreeMap::new();
        let mut pair_index: HashMap<(NodeId, NodeId), ArcId> = HashMap::new();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (i, arc) in arcs.iter().enumerate() {
            arc_index.insert(arc.id, i);
            if let Some(&first) = pair_index.get(&(arc.origin, arc.destination)) {
                return Err(MapError::ParallelArcs {
                    first,
                    second: arc.id,
                    origin: arc.origin,
                    destination: arc.destination,
                });
            }
            pair_index.insert((arc.origin, arc.destination), arc.id);
            adjacency[node_index[&arc.origin]].push((arc.id, arc.destination));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(a, _)| a);
        }

        let map = TopoMap {
            nodes,
            arcs,
            zones: file.zones,
            node_index,
            arc_index,
            adjacency,
            pair_index,
        };
        map.check_weakly_connected()?;
        Ok(map)
    }

    fn check_weakly_connected(&self) -> Result<(), MapError> {
        let n = self.nodes.len();
        let mut undirected = vec![Vec::new(); n];
        for arc in &self.arcs {
            let a = self.node_index[&arc.origin];
            let b = self.node_index[&arc.destination];
            undirected[a].push(b);
            undirected[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &undirected[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(MapError::Disconnected(self.nodes[i].id, self.nodes[0].id)),
            None => Ok(()),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn zones(&self) -> &[String] {
        &self.zones
    }

    pub fn zone_id(&self, name: &str) -> Option<ZoneId> {
        self.zones
            .iter()
            .position(|z| z == name)
            .map(|i| ZoneId(i as u16))
    }

    pub fn zone_name(&self, zone: ZoneId) -> &str {
        &self.zones[zone.0 as usize]
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, MapError> {
        self.node_index
            .get(&id)
            .map(|&i| &self.nodes[i])
            .ok_or(MapError::UnknownNode(id))
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.node_index.contains_key(&id)
    }

    pub fn arc(&self, id: ArcId) -> Option<&Arc> {
        self.arc_index.get(&id).map(|&i| &self.arcs[i])
    }

    /// Outgoing arcs of `u` paired with their destinations, ascending by arc id.
    pub fn neighbors(&self, u: NodeId) -> Result<&[(ArcId, NodeId)], MapError> {
        self.node_index
            .get(&u)
            .map(|&i| self.adjacency[i].as_slice())
            .ok_or(MapError::UnknownNode(u))
    }

    pub fn arc_between(&self, u: NodeId, v: NodeId) -> Result<Option<ArcId>, MapError> {
        for id in [u, v] {
            if !self.contains_node(id) {
                return Err(MapError::UnknownNode(id));
            }
        }
        Ok(self.pair_index.get(&(u, v)).copied())
    }

    /// Port nodes in file order.
    pub fn ports(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_port())
    }

    pub fn port_node(&self, label: &str) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|n| n.port.as_deref() == Some(label))
            .map(|n| n.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODES: &str = r#"{
        "nodes": [{"id": 1, "x": 0, "y": 0, "port": "A"}, {"id": 2, "x": 1, "y": 0}],
        "arcs": [{"id": 0, "from": 1, "to": 2, "length": 1.5, "zone": "z"}],
        "zones": ["z"]
    }"#;

    #[test]
    fn minimal_map_loads() {
        let map = TopoMap::from_json(TWO_NODES).unwrap();
        assert_eq!(map.nodes().len(), 2);
        assert_eq!(map.arcs().len(), 1);
        assert_eq!(map.neighbors(NodeId(1)).unwrap(), &[(ArcId(0), NodeId(2))]);
        assert!(map.neighbors(NodeId(2)).unwrap().is_empty());
        assert_eq!(
            map.arc_between(NodeId(1), NodeId(2)).unwrap(),
            Some(ArcId(0))
        );
        assert_eq!(map.arc_between(NodeId(2), NodeId(1)).unwrap(), None);
        assert!(map.node(NodeId(1)).unwrap().is_port());
    }

    #[test]
    fn dangling_reference_names_arc_and_node() {
        let text = TWO_NODES.replace(r#""to": 2"#, r#""to": 99"#);
        let err = TopoMap::from_json(&text).unwrap_err();
        assert!(matches!(
            err,
            MapError::DanglingNode {
                arc: ArcId(0),
                node: NodeId(99)
            }
        ));
        let msg = err.to_string();
        assert!(msg.contains("arc 0") && msg.contains("99"), "{msg}");
    }

    #[test]
    fn rejects_nonpositive_length_and_unknown_zone() {
        let text = TWO_NODES.replace("1.5", "0");
        assert!(matches!(
            TopoMap::from_json(&text),
            Err(MapError::NonPositiveLength { .. })
        ));
        let text = TWO_NODES.replace(r#""zone": "z""#, r#""zone": "q""#);
        assert!(matches!(
            TopoMap::from_json(&text),
            Err(MapError::UnknownZone { .. })
        ));
    }

    #[test]
    fn rejects_disconnected_graph() {
        let text = r#"{
            "nodes": [{"id": 1, "x": 0, "y": 0}, {"id": 2, "x": 1, "y": 0}, {"id": 3, "x": 2, "y": 0}],
            "arcs": [{"id": 0, "from": 1, "to": 2, "length": 1, "zone": "z"}],
            "zones": ["z"]
        }"#;
        assert!(matches!(
            TopoMap::from_json(text),
            Err(MapError::Disconnected(NodeId(3), NodeId(1)))
        ));
    }

    #[test]
    fn rejects_unknown_keys_and_parallel_arcs() {
        let text = TWO_NODES.replace(r#""zones""#, r#""extra": 1, "zones""#);
        assert!(matches!(TopoMap::from_json(&text), Err(MapError::Parse(_))));

        let text = r#"{
            "nodes": [{"id": 1, "x": 0, "y": 0}, {"id": 2, "x": 1, "y": 0}],
            "arcs": [{"id": 0, "from": 1, "to": 2, "length": 1, "zone": "z", "bidirectional": true},
                     {"id": 1, "from": 2, "to": 1, "length": 1, "zone": "z"}],
            "zones": ["z"]
        }"#;
        assert!(matches!(
            TopoMap::from_json(text),
            Err(MapError::ParallelArcs { .. })
        ));
    }

    #[test]
    fn bidirectional_arcs_expand() {
        let text = TWO_NODES.replace(r#""zone": "z""#, r#""zone": "z", "bidirectional": true"#);
        let map = TopoMap::from_json(&text).unwrap();
        assert_eq!(map.arcs().len(), 2);
        let back = map.arc_between(NodeId(2), NodeId(1)).unwrap().unwrap();
        assert_eq!(back, ArcId(1));
        assert_eq!(map.arc(back).unwrap().length, 1.5);
    }

    #[test]
    fn unknown_node_queries_fail() {
        let map = TopoMap::from_json(TWO_NODES).unwrap();
        assert!(matches!(
            map.neighbors(NodeId(7)),
            Err(MapError::UnknownNode(NodeId(7)))
        ));
        assert!(map.arc_between(NodeId(1), NodeId(7)).is_err());
    }
}
