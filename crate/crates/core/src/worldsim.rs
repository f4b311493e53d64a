//! Ground truth for the simulation.
//!
//! The world owns the global clock, every robot's battery and position, and
//! the roughness of each floor zone. Actual arc travel times are
//!
//! ```text
//! length * base_pace * battery_factor(soc) * (1 + alpha * roughness(zone)) * (1 + eps)
//! ```
//!
//! with `eps` a clamped zero-mean Gaussian. The estimators never see these
//! parameters; they only see the resulting [`TravelObservation`]s.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topomap::{Arc, ArcId, NodeId, TopoMap, ZoneId};

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct RobotId(pub u32);

impl fmt::Display for RobotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One measured arc traversal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelObservation {
    pub arc: ArcId,
    pub robot: RobotId,
    /// Global clock instance at which the traversal completed.
    pub instance: u64,
    pub travel_time: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("state of charge {0} outside [0, 1]")]
    SocOutOfRange(f64),
    #[error("battery curve needs at least two knots with distinct soc values in [0, 1] and factors >= 1")]
    BadBatteryCurve,
    #[error("robot {0} has a dead battery")]
    DeadBattery(RobotId),
    #[error("battery is fully discharged")]
    Discharged,
    #[error("unknown robot {0}")]
    UnknownRobot(RobotId),
    #[error("unknown arc {0}")]
    UnknownArc(ArcId),
    #[error("robot {robot} is at node {at}, not at arc origin {origin}")]
    NotAtOrigin {
        robot: RobotId,
        at: NodeId,
        origin: NodeId,
    },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown zone {0:?}")]
    UnknownZone(String),
    #[error("roughness {0} outside [0, 1]")]
    RoughnessOutOfRange(f64),
    #[error("floor schedule ticks for zone {0:?} are not strictly increasing")]
    UnorderedSchedule(String),
    #[error("invalid world parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Battery multiplier as a function of state of charge.
///
/// Shape-preserving piecewise cubic Hermite interpolation through the knots
/// (Fritsch-Carlson slopes), so the curve never overshoots its knot values
/// and a knot that is a local minimum stays the exact minimum. Below the
/// lowest knot the curve continues linearly with its end slope.
#[derive(Debug, Clone)]
pub struct BatteryCurve {
    soc: Vec<f64>,
    factor: Vec<f64>,
    slope: Vec<f64>,
}

impl BatteryCurve {
    pub fn new(knots: &[(f64, f64)]) -> Result<Self, WorldError> {
        let mut knots = knots.to_vec();
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ok = knots.len() >= 2
            && knots
                .iter()
                .all(|&(s, f)| (0.0..=1.0).contains(&s) && f.is_finite() && f >= 1.0)
            && knots.windows(2).all(|w| w[1].0 > w[0].0);
        if !ok {
            return Err(WorldError::BadBatteryCurve);
        }
        let soc: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let factor: Vec<f64> = knots.iter().map(|k| k.1).collect();
        let slope = pchip_slopes(&soc, &factor);
        Ok(Self { soc, factor, slope })
    }

    /// The state of charge at which the curve reaches its minimum.
    pub fn mid_band_soc(&self) -> f64 {
        let (i, _) = self
            .factor
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least two knots");
        self.soc[i]
    }

    pub fn factor(&self, soc: f64) -> Result<f64, WorldError> {
        if !(0.0..=1.0).contains(&soc) {
            return Err(WorldError::SocOutOfRange(soc));
        }
        let n = self.soc.len();
        let value = if soc <= self.soc[0] {
            self.factor[0] + self.slope[0] * (soc - self.soc[0])
        } else if soc >= self.soc[n - 1] {
            self.factor[n - 1] + self.slope[n - 1] * (soc - self.soc[n - 1])
        } else {
            let i = self.soc.partition_point(|&s| s <= soc) - 1;
            let h = self.soc[i + 1] - self.soc[i];
            let t = (soc - self.soc[i]) / h;
            let t2 = t * t;
            let t3 = t2 * t;
            (2.0 * t3 - 3.0 * t2 + 1.0) * self.factor[i]
                + (t3 - 2.0 * t2 + t) * h * self.slope[i]
                + (-2.0 * t3 + 3.0 * t2) * self.factor[i + 1]
                + (t3 - t2) * h * self.slope[i + 1]
        };
        Ok(value.max(1.0))
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    d[0] = pchip_end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = pchip_end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn pchip_end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryState {
    pub soc: f64,
    /// State of charge consumed per time unit of traversal.
    pub discharge_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub tick: u64,
    pub zone: String,
    pub roughness: f64,
}

#[derive(Debug, Clone)]
pub struct FloorState {
    roughness: Vec<f64>,
    /// Pending changes, sorted by tick.
    schedule: Vec<(u64, ZoneId, f64)>,
    next: usize,
}

impl FloorState {
    pub fn new(
        map: &TopoMap,
        initial: &BTreeMap<String, f64>,
        schedule: &[ScheduleEntry],
    ) -> Result<Self, WorldError> {
        let mut roughness = vec![0.0; map.zones().len()];
        for (name, &value) in initial {
            let zone = map
                .zone_id(name)
                .ok_or_else(|| WorldError::UnknownZone(name.clone()))?;
            check_roughness(value)?;
            roughness[zone.0 as usize] = value;
        }
        let mut last_tick: BTreeMap<ZoneId, u64> = BTreeMap::new();
        let mut entries = Vec::with_capacity(schedule.len());
        for entry in schedule {
            let zone = map
                .zone_id(&entry.zone)
                .ok_or_else(|| WorldError::UnknownZone(entry.zone.clone()))?;
            check_roughness(entry.roughness)?;
            if let Some(&prev) = last_tick.get(&zone) {
                if entry.tick <= prev {
                    return Err(WorldError::UnorderedSchedule(entry.zone.clone()));
                }
            }
            last_tick.insert(zone, entry.tick);
            entries.push((entry.tick, zone, entry.roughness));
        }
        entries.sort_by_key(|e| e.0);
        let mut floor = Self {
            roughness,
            schedule: entries,
            next: 0,
        };
        floor.advance_to(0);
        Ok(floor)
    }

    /// A floor with uniform roughness in every zone and no schedule.
    pub fn uniform(zones: usize, roughness: f64) -> Self {
        Self {
            roughness: vec![roughness; zones],
            schedule: Vec::new(),
            next: 0,
        }
    }

    pub fn roughness(&self, zone: ZoneId) -> f64 {
        self.roughness[zone.0 as usize]
    }

    pub fn set_roughness(&mut self, zone: ZoneId, value: f64) -> Result<(), WorldError> {
        check_roughness(value)?;
        self.roughness[zone.0 as usize] = value;
        Ok(())
    }

    /// Applies every scheduled change with `tick <= instance`.
    pub fn advance_to(&mut self, instance: u64) {
        while let Some(&(tick, zone, value)) = self.schedule.get(self.next) {
            if tick > instance {
                break;
            }
            self.roughness[zone.0 as usize] = value;
            self.next += 1;
        }
    }
}

fn check_roughness(value: f64) -> Result<(), WorldError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(WorldError::RoughnessOutOfRange(value))
    }
}

fn default_knots() -> Vec<(f64, f64)> {
    vec![
        (1.0, 1.15),
        (0.85, 1.05),
        (0.5, 1.0),
        (0.2, 1.1),
        (0.02, 1.6),
    ]
}
fn default_alpha() -> f64 {
    0.5
}
fn default_base_pace() -> f64 {
    1.0
}
fn default_noise_std() -> f64 {
    0.03
}
fn default_discharge_rate() -> f64 {
    // About 400 traversals of a 3-unit arc before soc reaches 0.05.
    7.2e-4
}

/// Ground-truth parameters, the `world` section of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldParams {
    #[serde(default = "default_knots")]
    pub battery_knots: Vec<(f64, f64)>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_base_pace")]
    pub base_pace: f64,
    /// Relative standard deviation of multiplicative noise; 0 disables it.
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_discharge_rate")]
    pub discharge_rate: f64,
    #[serde(default)]
    pub initial_roughness: BTreeMap<String, f64>,
    #[serde(default)]
    pub floor_schedule: Vec<ScheduleEntry>,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            battery_knots: default_knots(),
            alpha: default_alpha(),
            base_pace: default_base_pace(),
            noise_std: default_noise_std(),
            discharge_rate: default_discharge_rate(),
            initial_roughness: BTreeMap::new(),
            floor_schedule: Vec::new(),
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(WorldError::InvalidParameter("alpha must be >= 0"));
        }
        if !(self.base_pace > 0.0 && self.base_pace.is_finite()) {
            return Err(WorldError::InvalidParameter("base_pace must be > 0"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(WorldError::InvalidParameter("noise_std must be >= 0"));
        }
        if !(self.discharge_rate >= 0.0 && self.discharge_rate.is_finite()) {
            return Err(WorldError::InvalidParameter("discharge_rate must be >= 0"));
        }
        BatteryCurve::new(&self.battery_knots)?;
        Ok(())
    }
}

/// Travel time for one traversal of `arc` given the battery and floor.
///
/// `noise` is a standard normal draw, scaled here by `params.noise_std`;
/// `None` evaluates the noise-free model.
pub fn ground_truth_travel_time(
    arc: &Arc,
    battery: &BatteryState,
    floor: &FloorState,
    curve: &BatteryCurve,
    params: &WorldParams,
    noise: Option<f64>,
) -> Result<f64, WorldError> {
    if battery.soc <= 0.0 {
        return Err(WorldError::Discharged);
    }
    let base = arc.length
        * params.base_pace
        * curve.factor(battery.soc)?
        * (1.0 + params.alpha * floor.roughness(arc.zone));
    let eps = noise.map_or(0.0, |z| (z * params.noise_std).max(-0.95));
    Ok(base * (1.0 + eps))
}

#[derive(Debug, Clone)]
pub struct RobotPhysicalState {
    pub id: RobotId,
    pub node: NodeId,
    pub battery: BatteryState,
}

/// Global discrete clock: `instance` counts completed traversals.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Clock {
    pub instance: u64,
    /// Accumulated travel time, for reporting only.
    pub elapsed: f64,
}

pub struct World<'m> {
    map: &'m TopoMap,
    params: WorldParams,
    curve: BatteryCurve,
    floor: FloorState,
    clock: Clock,
    robots: Vec<RobotPhysicalState>,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl<'m> World<'m> {
    pub fn new(map: &'m TopoMap, params: WorldParams, seed: u64) -> Result<Self, WorldError> {
        params.validate()?;
        let curve = BatteryCurve::new(&params.battery_knots)?;
        let floor = FloorState::new(map, &params.initial_roughness, &params.floor_schedule)?;
        Ok(Self {
            map,
            params,
            curve,
            floor,
            clock: Clock::default(),
            robots: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, 1.0).expect("unit normal"),
        })
    }

    /// Places a robot with a full battery at `node`.
    pub fn add_robot(&mut self, node: NodeId) -> Result<RobotId, WorldError> {
        if !self.map.contains_node(node) {
            return Err(WorldError::UnknownNode(node));
        }
        let id = RobotId(self.robots.len() as u32);
        self.robots.push(RobotPhysicalState {
            id,
            node,
            battery: BatteryState {
                soc: 1.0,
                discharge_rate: self.params.discharge_rate,
            },
        });
        Ok(id)
    }

    pub fn map(&self) -> &'m TopoMap {
        self.map
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn floor(&self) -> &FloorState {
        &self.floor
    }

    pub fn curve(&self) -> &BatteryCurve {
        &self.curve
    }

    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn robot(&self, id: RobotId) -> Result<&RobotPhysicalState, WorldError> {
        self.robots
            .get(id.0 as usize)
            .ok_or(WorldError::UnknownRobot(id))
    }

    pub fn robots(&self) -> &[RobotPhysicalState] {
        &self.robots
    }

    /// Moves `robot` along `arc`, advancing the clock and draining the battery.
    pub fn traverse(
        &mut self,
        robot: RobotId,
        arc: ArcId,
    ) -> Result<TravelObservation, WorldError> {
        let arc_ref = self.map.arc(arc).ok_or(WorldError::UnknownArc(arc))?;
        let state = self
            .robots
            .get(robot.0 as usize)
            .ok_or(WorldError::UnknownRobot(robot))?;
        if state.node != arc_ref.origin {
            return Err(WorldError::NotAtOrigin {
                robot,
                at: state.node,
                origin: arc_ref.origin,
            });
        }
        if state.battery.soc <= 0.0 {
            return Err(WorldError::DeadBattery(robot));
        }
        let noise = if self.params.noise_std > 0.0 {
            Some(self.normal.sample(&mut self.rng))
        } else {
            None
        };
        let travel_time = ground_truth_travel_time(
            arc_ref,
            &state.battery,
            &self.floor,
            &self.curve,
            &self.params,
            noise,
        )?;

        self.clock.instance += 1;
        self.clock.elapsed += travel_time;
        let state = &mut self.robots[robot.0 as usize];
        state.battery.soc =
            (state.battery.soc - state.battery.discharge_rate * travel_time).max(0.0);
        state.node = arc_ref.destination;
        self.floor.advance_to(self.clock.instance);

        Ok(TravelObservation {
            arc,
            robot,
            instance: self.clock.instance,
            travel_time,
        })
    }

    /// A uniform draw from the world's stream, for harness-level choices.
    pub fn draw_unit(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}
