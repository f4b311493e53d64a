//! Per-robot control stack: L1 decides and plans, L0.1 turns a path into
//! macro-actions and GO commands, L0.0 drives them through the world.
//!
//! L0.0 only sees commands and an opaque arc binding per movement; it has no
//! access to the map or the knowledge base.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimatorConfig, EstimatorError, TravelTimeSeries};
use crate::knowledge::{KnowledgeBase, KnowledgeError};
use crate::planner::{plan, EstimatedCosts, PathPlan};
use crate::sharing::{FleetDirectory, SharingPolicy, SourcePrecedence};
use crate::topomap::{ArcId, NodeId, TopoMap};
use crate::worldsim::{RobotId, TravelObservation, World, WorldError};

/// Heading changes smaller than this (degrees) are driven straight through.
pub const TURN_THRESHOLD_DEG: f64 = 1.0;

#[derive(Debug, Error)]
pub enum BehaviorError {
    #[error("plan does not match the map: {0}")]
    PlanMismatch(String),
    #[error("malformed macro-action sequence: {0}")]
    Malformed(String),
    #[error("{commands} movement commands but {bindings} arc bindings")]
    BindingMismatch { commands: usize, bindings: usize },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("port {0} is not a node of the map")]
    UnknownPort(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacroAction {
    TurnLeft,
    TurnRight,
    MoveAhead,
    StopLeft,
    StopRight,
    Stop,
}

impl MacroAction {
    fn is_stop(self) -> bool {
        matches!(
            self,
            MacroAction::Stop | MacroAction::StopLeft | MacroAction::StopRight
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoCommand {
    /// Degrees in (-180, 180], positive to the left.
    pub angle: f64,
    pub distance: f64,
}

impl std::fmt::Display for GoCommand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GO-{}-{}", self.angle, self.distance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub robot: RobotId,
    pub port: NodeId,
    pub issued: u64,
}

/// Round-robin over a fixed port list.
#[derive(Debug, Clone)]
pub struct TaskQueue {
    ports: Vec<NodeId>,
    cursor: usize,
}

impl TaskQueue {
    pub fn new(ports: Vec<NodeId>, start: usize) -> Self {
        let cursor = if ports.is_empty() {
            0
        } else {
            start % ports.len()
        };
        Self { ports, cursor }
    }

    pub fn is_empty(&self) -> bool {
        self.ports.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ports.len()
    }

    pub fn pop(&mut self) -> Option<NodeId> {
        let port = *self.ports.get(self.cursor)?;
        self.cursor = (self.cursor + 1) % self.ports.len();
        Some(port)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum Reply {
    Done,
    DeadBattery { arc: ArcId },
}

/// What L0.0 hands back up.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub observations: Vec<TravelObservation>,
    pub reply: Reply,
    /// Time spent turning; not part of any arc observation.
    pub turn_time: f64,
}

/// One tick of one robot across all layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub tick: usize,
    pub robot: RobotId,
    pub task: Option<TaskAssignment>,
    pub plan: Option<PathPlan>,
    pub macros: Vec<MacroAction>,
    pub commands: Vec<GoCommand>,
    pub observations: Vec<TravelObservation>,
    pub reply: Option<Reply>,
    pub skipped: Vec<NodeId>,
}

impl LayerTrace {
    fn idle(tick: usize, robot: RobotId) -> Self {
        Self {
            tick,
            robot,
            task: None,
            plan: None,
            macros: Vec::new(),
            commands: Vec::new(),
            observations: Vec::new(),
            reply: None,
            skipped: Vec::new(),
        }
    }
}

pub fn write_traces<W: Write>(traces: &[LayerTrace], mut out: W) -> std::io::Result<()> {
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        writeln!(out)?;
    }
    Ok(())
}

fn heading(map: &TopoMap, arc: ArcId) -> Result<f64, BehaviorError> {
    let a = map
        .arc(arc)
        .ok_or_else(|| BehaviorError::PlanMismatch(format!("unknown arc {arc}")))?;
    let (x0, y0) = map
        .node(a.origin)
        .map_err(|e| BehaviorError::PlanMismatch(e.to_string()))?
        .position;
    let (x1, y1) = map
        .node(a.destination)
        .map_err(|e| BehaviorError::PlanMismatch(e.to_string()))?
        .position;
    Ok((y1 - y0).atan2(x1 - x0).to_degrees())
}

/// Signed heading change in (-180, 180], positive to the left.
pub fn heading_change(from_deg: f64, to_deg: f64) -> f64 {
    let d = (to_deg - from_deg).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

fn check_chain(plan: &PathPlan, map: &TopoMap) -> Result<(), BehaviorError> {
    for w in plan.arcs.windows(2) {
        let (a, b) = (map.arc(w[0]), map.arc(w[1]));
        match (a, b) {
            (Some(a), Some(b)) if a.destination == b.origin => {}
            _ => {
                return Err(BehaviorError::PlanMismatch(format!(
                    "arcs {} and {} do not chain",
                    w[0], w[1]
                )))
            }
        }
    }
    Ok(())
}

fn turn_angles(plan: &PathPlan, map: &TopoMap) -> Result<Vec<f64>, BehaviorError> {
    check_chain(plan, map)?;
    let headings = plan
        .arcs
        .iter()
        .map(|&a| heading(map, a))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(headings
        .windows(2)
        .map(|w| heading_change(w[0], w[1]))
        .collect())
}

/// L0.1: path to macro-actions.
pub fn decompose_path(plan: &PathPlan, map: &TopoMap) -> Result<Vec<MacroAction>, BehaviorError> {
    let turns = turn_angles(plan, map)?;
    let mut actions = Vec::with_capacity(plan.arcs.len() * 2 + 1);
    for i in 0..plan.arcs.len() {
        if i > 0 {
            let d = turns[i - 1];
            if d.abs() >= TURN_THRESHOLD_DEG {
                actions.push(if d > 0.0 {
                    MacroAction::TurnLeft
                } else {
                    MacroAction::TurnRight
                });
            }
        }
        actions.push(MacroAction::MoveAhead);
    }
    actions.push(MacroAction::Stop);
    Ok(actions)
}

/// L0.1: macro-actions to GO commands, one per arc.
pub fn compile_macros(
    actions: &[MacroAction],
    plan: &PathPlan,
    map: &TopoMap,
) -> Result<Vec<GoCommand>, BehaviorError> {
    if let Some(pos) = actions.iter().position(|a| a.is_stop()) {
        if pos + 1 != actions.len() {
            return Err(BehaviorError::Malformed(format!(
                "action after stop at {pos}"
            )));
        }
    }
    let turns = turn_angles(plan, map)?;
    let mut commands = Vec::with_capacity(actions.len());
    let mut moved = 0usize;
    for &action in actions {
        match action {
            MacroAction::MoveAhead => {
                let arc = plan
                    .arcs
                    .get(moved)
                    .and_then(|&a| map.arc(a))
                    .ok_or_else(|| BehaviorError::Malformed("more moves than arcs".into()))?;
                commands.push(GoCommand {
                    angle: 0.0,
                    distance: arc.length,
                });
                moved += 1;
            }
            MacroAction::TurnLeft | MacroAction::TurnRight => {
                let angle = moved
                    .checked_sub(1)
                    .and_then(|i| turns.get(i))
                    .copied()
                    .ok_or_else(|| BehaviorError::Malformed("turn outside a junction".into()))?;
                commands.push(GoCommand {
                    angle,
                    distance: 0.0,
                });
            }
            // stop-left / stop-right carry no defined meaning beyond stopping.
            MacroAction::Stop | MacroAction::StopLeft | MacroAction::StopRight => {
                commands.push(GoCommand {
                    angle: 0.0,
                    distance: 0.0,
                })
            }
        }
    }
    if moved != plan.arcs.len() {
        return Err(BehaviorError::Malformed(format!(
            "{moved} moves for {} arcs",
            plan.arcs.len()
        )));
    }
    Ok(commands)
}

/// Actuation as seen from L0.0.
pub trait Drive {
    fn drive(&mut self, robot: RobotId, arc: ArcId) -> Result<TravelObservation, WorldError>;
}

impl Drive for World<'_> {
    fn drive(&mut self, robot: RobotId, arc: ArcId) -> Result<TravelObservation, WorldError> {
        self.traverse(robot, arc)
    }
}

/// L0.0: runs GO commands; movement `i` drives `bindings[i]`.
pub fn l0_execute(
    robot: RobotId,
    commands: &[GoCommand],
    bindings: &[ArcId],
    turn_time: f64,
    drive: &mut dyn Drive,
) -> Result<Execution, BehaviorError> {
    let moves = commands.iter().filter(|c| c.distance > 0.0).count();
    if moves != bindings.len() {
        return Err(BehaviorError::BindingMismatch {
            commands: moves,
            bindings: bindings.len(),
        });
    }
    let mut exec = Execution {
        observations: Vec::with_capacity(moves),
        reply: Reply::Done,
        turn_time: 0.0,
    };
    let mut next = bindings.iter();
    for cmd in commands {
        if cmd.distance > 0.0 {
            let arc = *next.next().expect("counted above");
            match drive.drive(robot, arc) {
                Ok(obs) => exec.observations.push(obs),
                Err(WorldError::DeadBattery(_)) | Err(WorldError::Discharged) => {
                    exec.reply = Reply::DeadBattery { arc };
                    return Ok(exec);
                }
                Err(e) => return Err(e.into()),
            }
        } else if cmd.angle != 0.0 {
            exec.turn_time += turn_time;
        }
    }
    Ok(exec)
}

/// Knobs shared by every robot in a fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetParams {
    pub delta: u64,
    pub precedence: SourcePrecedence,
    /// Assumed travel time per unit length for arcs with no data; the
    /// world's nominal pace when unset.
    pub prior_pace: Option<f64>,
    pub turn_time: f64,
}

impl Default for FleetParams {
    fn default() -> Self {
        Self {
            delta: 25,
            precedence: SourcePrecedence::OwnFirst,
            prior_pace: None,
            turn_time: 0.0,
        }
    }
}

/// L1 state for one robot.
#[derive(Debug, Clone)]
pub struct RobotAgent {
    pub id: RobotId,
    tasks: TaskQueue,
    config: EstimatorConfig,
    series: BTreeMap<ArcId, TravelTimeSeries>,
    calls: usize,
    retired: bool,
}

/// Read-only view L1 needs to plan.
pub struct PlanView<'a> {
    pub map: &'a TopoMap,
    pub node: NodeId,
    pub own: &'a KnowledgeBase,
    pub fleet: FleetDirectory<'a>,
    pub policy: &'a dyn SharingPolicy,
    pub k: u64,
    pub params: &'a FleetParams,
}

impl RobotAgent {
    pub fn new(id: RobotId, tasks: TaskQueue, config: EstimatorConfig) -> Self {
        Self {
            id,
            tasks,
            config,
            series: BTreeMap::new(),
            calls: 0,
            retired: false,
        }
    }

    pub fn is_retired(&self) -> bool {
        self.retired
    }

    pub fn retire(&mut self) {
        self.retired = true;
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn series(&self) -> &BTreeMap<ArcId, TravelTimeSeries> {
        &self.series
    }

    /// L1: take the next reachable task and plan it. Unreachable tasks are
    /// skipped and reported in the second element.
    pub fn l1_decide(
        &mut self,
        view: &PlanView<'_>,
    ) -> (Option<(TaskAssignment, PathPlan)>, Vec<NodeId>) {
        let mut skipped = Vec::new();
        if self.retired {
            return (None, skipped);
        }
        for _ in 0..self.tasks.len() {
            let port = self.tasks.pop().expect("non-empty queue");
            if port == view.node {
                continue;
            }
            let mut costs = EstimatedCosts {
                robot: self.id,
                series: &self.series,
                config: &self.config,
                own: view.own,
                fleet: view.fleet,
                policy: view.policy,
                k: view.k,
                delta: view.params.delta,
                precedence: view.params.precedence,
                prior_pace: view.params.prior_pace.unwrap_or(1.0),
            };
            match plan(view.map, view.node, port, &mut costs, self.calls) {
                Ok(mut p) => {
                    p.robot = self.id;
                    self.calls += 1;
                    let task = TaskAssignment {
                        robot: self.id,
                        port,
                        issued: view.k - 1,
                    };
                    return (Some((task, p)), skipped);
                }
                Err(e) => {
                    log::warn!("robot {} skips task to {port}: {e}", self.id);
                    skipped.push(port);
                }
            }
        }
        (None, skipped)
    }

    /// L1: store and learn from what was just driven.
    pub fn record(
        &mut self,
        observations: &[TravelObservation],
        own: &mut KnowledgeBase,
        map: &TopoMap,
    ) -> Result<(), BehaviorError> {
        for obs in observations {
            own.assert_observation(obs, map)?;
            self.series
                .entry(obs.arc)
                .or_insert_with(|| TravelTimeSeries::new(self.config.clone()))
                .ingest(obs)?;
        }
        Ok(())
    }
}

/// Robots, their stores and the world, advanced in plan/execute phases.
pub struct Fleet<'m> {
    pub world: World<'m>,
    pub agents: Vec<RobotAgent>,
    pub stores: Vec<KnowledgeBase>,
    policy: Box<dyn SharingPolicy>,
    params: FleetParams,
}

impl<'m> Fleet<'m> {
    /// One robot per task list. A robot starts at the first port of its list
    /// and is first sent to the second.
    pub fn new(
        mut world: World<'m>,
        tasks: Vec<Vec<NodeId>>,
        config: &EstimatorConfig,
        policy: Box<dyn SharingPolicy>,
        mut params: FleetParams,
    ) -> Result<Self, BehaviorError> {
        params.prior_pace.get_or_insert(world.params().base_pace);
        for &p in tasks.iter().flatten() {
            if !world.map().contains_node(p) {
                return Err(BehaviorError::UnknownPort(p));
            }
        }
        let mut agents = Vec::with_capacity(tasks.len());
        let mut stores = Vec::with_capacity(tasks.len());
        for ports in tasks {
            let start = ports.first().copied().unwrap_or(world.map().nodes()[0].id);
            let id = world.add_robot(start)?;
            agents.push(RobotAgent::new(
                id,
                TaskQueue::new(ports, 1),
                config.clone(),
            ));
            stores.push(KnowledgeBase::new(id));
        }
        Ok(Self {
            world,
            agents,
            stores,
            policy,
            params,
        })
    }

    /// Every robot cycles the same port list, robot `i` starting at `ports[i % n]`.
    pub fn rotated(ports: &[NodeId], robots: usize) -> Vec<Vec<NodeId>> {
        (0..robots)
            .map(|i| {
                let mut list = ports.to_vec();
                if !list.is_empty() {
                    list.rotate_left(i % ports.len());
                }
                list
            })
            .collect()
    }

    pub fn policy(&self) -> &dyn SharingPolicy {
        self.policy.as_ref()
    }

    pub fn active(&self) -> usize {
        self.agents.iter().filter(|a| !a.is_retired()).count()
    }

    /// One plan phase followed by one execute phase.
    pub fn tick(&mut self, tick: usize) -> Result<Vec<LayerTrace>, BehaviorError> {
        let map = self.world.map();
        let k = self.world.clock().instance + 1;
        let mut traces = Vec::with_capacity(self.agents.len());
        for agent in self.agents.iter_mut() {
            let mut trace = LayerTrace::idle(tick, agent.id);
            let view = PlanView {
                map,
                node: self.world.robot(agent.id)?.node,
                own: &self.stores[agent.id.0 as usize],
                fleet: FleetDirectory::new(&self.stores),
                policy: self.policy.as_ref(),
                k,
                params: &self.params,
            };
            let (decision, skipped) = agent.l1_decide(&view);
            trace.skipped = skipped;
            if let Some((task, p)) = decision {
                trace.task = Some(task);
                trace.plan = Some(p);
            }
            traces.push(trace);
        }

        for (agent, trace) in self.agents.iter_mut().zip(traces.iter_mut()) {
            let Some(p) = &trace.plan else { continue };
            trace.macros = decompose_path(p, map)?;
            trace.commands = compile_macros(&trace.macros, p, map)?;
            let exec = l0_execute(
                agent.id,
                &trace.commands,
                &p.arcs,
                self.params.turn_time,
                &mut self.world,
            )?;
            agent.record(
                &exec.observations,
                &mut self.stores[agent.id.0 as usize],
                map,
            )?;
            if let Reply::DeadBattery { .. } = exec.reply {
                log::info!("robot {} retired with a dead battery", agent.id);
                agent.retire();
            }
            trace.observations = exec.observations;
            trace.reply = Some(exec.reply);
        }
        Ok(traces)
    }
}
