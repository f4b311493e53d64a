//! Experiment driver: isolated vs shared fleets across maps and regression
//! numbers, aggregated into a CSV report.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behaviors::{BehaviorError, Fleet, FleetParams, LayerTrace};
use crate::estimator::{EstimatorConfig, EstimatorError};
use crate::knowledge::{KnowledgeBase, KnowledgeError};
use crate::registry::{sharing_policies, UnknownStrategy};
use crate::sharing::Provenance;
use crate::topomap::{MapError, NodeId, TopoMap};
use crate::worldsim::{World, WorldError, WorldParams};

pub const CSV_HEADER: [&str; 7] = [
    "map",
    "robot",
    "regression",
    "mode",
    "mean_Cp",
    "mean_realized",
    "improvement_pct",
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Strategy(#[from] UnknownStrategy),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("report keys differ: {0}")]
    KeyMismatch(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Whether the failure is the caller's configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::Map(_)
                | HarnessError::Strategy(_)
                | HarnessError::Json(_)
                | HarnessError::Estimator(EstimatorError::InvalidConfig(_))
                | HarnessError::World(
                    WorldError::InvalidParameter(_)
                        | WorldError::BadBatteryCurve
                        | WorldError::UnknownZone(_)
                        | WorldError::RoughnessOutOfRange(_)
                        | WorldError::UnorderedSchedule(_)
                )
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Isolated,
    Shared,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Isolated => "isolated",
            Mode::Shared => "shared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Isolated,
    Shared,
    #[default]
    Both,
}

impl ModeSelection {
    pub fn modes(&self) -> &'static [Mode] {
        match self {
            ModeSelection::Isolated => &[Mode::Isolated],
            ModeSelection::Shared => &[Mode::Shared],
            ModeSelection::Both => &[Mode::Isolated, Mode::Shared],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Map files; relative paths resolve against the scenario file.
    pub maps: Vec<PathBuf>,
    pub robots: usize,
    pub mode: ModeSelection,
    pub regressions: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    /// Port labels handed out round-robin; empty means every port in id order.
    pub ports: Vec<String>,
    /// Per-robot port lists; robot `i` uses entry `i % len`. Overrides `ports`.
    pub robot_ports: Vec<Vec<String>>,
    pub world: WorldParams,
    pub estimator: EstimatorConfig,
    pub fleet: FleetParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            maps: Vec::new(),
            robots: 4,
            mode: ModeSelection::Both,
            regressions: vec![4, 5, 6, 7],
            repetitions: 100,
            seed: 42,
            ports: Vec::new(),
            robot_ports: Vec::new(),
            world: WorldParams::default(),
            estimator: EstimatorConfig::default(),
            fleet: FleetParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let mut config: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in &mut config.maps {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.repetitions == 0 {
            return Err(HarnessError::Config(
                "repetitions must be at least 1".into(),
            ));
        }
        if self.robots == 0 {
            return Err(HarnessError::Config(
                "robot count must be at least 1".into(),
            ));
        }
        if self.regressions.is_empty() {
            return Err(HarnessError::Config("no regression numbers given".into()));
        }
        for &r in &self.regressions {
            self.estimator.with_regression(r)?;
        }
        if self
            .fleet
            .prior_pace
            .is_some_and(|p| !(p > 0.0 && p.is_finite()))
        {
            return Err(HarnessError::Config("prior_pace must be positive".into()));
        }
        if !(self.fleet.turn_time >= 0.0 && self.fleet.turn_time.is_finite()) {
            return Err(HarnessError::Config(
                "turn_time must be non-negative".into(),
            ));
        }
        self.world.validate()?;
        Ok(())
    }

    pub fn load_maps(&self) -> Result<Vec<NamedMap>, HarnessError> {
        if self.maps.is_empty() {
            return Err(HarnessError::Config("no maps given".into()));
        }
        self.maps
            .iter()
            .map(|p| {
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string());
                Ok(NamedMap {
                    name,
                    map: TopoMap::load(p)?,
                })
            })
            .collect()
    }

    /// Task list of every robot on one map.
    pub fn task_lists(&self, map: &TopoMap) -> Result<Vec<Vec<NodeId>>, HarnessError> {
        let resolve = |labels: &[String]| -> Result<Vec<NodeId>, HarnessError> {
            labels
                .iter()
                .map(|label| {
                    map.port_node(label)
                        .ok_or_else(|| HarnessError::Config(format!("port {label:?} not on map")))
                })
                .collect()
        };
        if !self.robot_ports.is_empty() {
            return (0..self.robots)
                .map(|i| resolve(&self.robot_ports[i % self.robot_ports.len()]))
                .collect();
        }
        let ports = if self.ports.is_empty() {
            map.ports().map(|n| n.id).collect()
        } else {
            resolve(&self.ports)?
        };
        Ok(Fleet::rotated(&ports, self.robots))
    }
}

#[derive(Debug, Clone)]
pub struct NamedMap {
    pub name: String,
    pub map: TopoMap,
}

/// One planning call and its execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub map: String,
    pub mode: Mode,
    pub regression: usize,
    pub robot: u32,
    pub repetition: usize,
    pub call: usize,
    /// Estimated path cost at planning time.
    pub cost: f64,
    /// Ground-truth time actually spent on the path.
    pub realized: f64,
    pub provenance: BTreeMap<Provenance, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum CellStatus {
    Completed,
    /// Every robot retired before the repetitions ran out.
    AllRobotsDead {
        repetition: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub map: String,
    pub mode: Mode,
    pub regression: usize,
    pub status: CellStatus,
    pub results: Vec<RunResult>,
}

/// Seed for one (map, regression) cell; both modes share it.
pub fn cell_seed(seed: u64, map_index: usize, regression: usize) -> u64 {
    seed ^ ((map_index as u64) << 48) ^ ((regression as u64) << 32)
}

/// Everything needed to run one cell, including optional per-tick traces.
pub struct CellRun<'m> {
    pub fleet: Fleet<'m>,
    pub outcome: CellOutcome,
    pub traces: Vec<LayerTrace>,
}

pub fn run_cell<'m>(
    config: &ScenarioConfig,
    map: &'m NamedMap,
    map_index: usize,
    regression: usize,
    mode: Mode,
    keep_traces: bool,
) -> Result<CellRun<'m>, HarnessError> {
    let estimator = config.estimator.with_regression(regression)?;
    let world = World::new(
        &map.map,
        config.world.clone(),
        cell_seed(config.seed, map_index, regression),
    )?;
    let policy = sharing_policies().create(mode.as_str())?;
    let tasks = config.task_lists(&map.map)?;
    let mut fleet = Fleet::new(world, tasks, &estimator, policy, config.fleet.clone())?;
    let mut outcome = CellOutcome {
        map: map.name.clone(),
        mode,
        regression,
        status: CellStatus::Completed,
        results: Vec::new(),
    };
    let mut traces = Vec::new();
    for rep in 0..config.repetitions {
        if fleet.active() == 0 {
            outcome.status = CellStatus::AllRobotsDead { repetition: rep };
            break;
        }
        for trace in fleet.tick(rep)? {
            if let Some(plan) = &trace.plan {
                let mut provenance = BTreeMap::new();
                for p in &plan.provenance {
                    *provenance.entry(*p).or_insert(0) += 1;
                }
                outcome.results.push(RunResult {
                    map: map.name.clone(),
                    mode,
                    regression,
                    robot: trace.robot.0,
                    repetition: rep,
                    call: plan.call,
                    cost: plan.total,
                    realized: trace.observations.iter().map(|o| o.travel_time).sum(),
                    provenance,
                });
            }
            if keep_traces {
                traces.push(trace);
            }
        }
    }
    if let CellStatus::AllRobotsDead { repetition } = outcome.status {
        log::warn!(
            "{} r={} {}: all robots dead at repetition {repetition}",
            map.name,
            regression,
            mode.as_str()
        );
    }
    Ok(CellRun {
        fleet,
        outcome,
        traces,
    })
}

/// Runs every (map, regression, mode) cell; cells run on separate threads.
pub fn run_experiment(
    config: &ScenarioConfig,
    maps: &[NamedMap],
) -> Result<Vec<CellOutcome>, HarnessError> {
    config.validate()?;
    let mut jobs = Vec::new();
    for (mi, map) in maps.iter().enumerate() {
        for &r in &config.regressions {
            for &mode in config.mode.modes() {
                jobs.push((mi, map, r, mode));
            }
        }
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(mi, map, r, mode)| {
                scope.spawn(move || run_cell(config, map, mi, r, mode, false).map(|c| c.outcome))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("cell thread panicked"))
            .collect()
    })
}

/// A robot's knowledge base after running one cell.
pub fn final_store(
    config: &ScenarioConfig,
    map: &NamedMap,
    regression: usize,
    mode: Mode,
    robot: usize,
) -> Result<KnowledgeBase, HarnessError> {
    if robot >= config.robots {
        return Err(HarnessError::Config(format!(
            "robot {robot} out of range for {} robots",
            config.robots
        )));
    }
    let run = run_cell(config, map, 0, regression, mode, false)?;
    Ok(run.fleet.stores[robot].clone())
}

/// Mean cost per (map, robot, regression) for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: Mode,
    pub rows: BTreeMap<(String, u32, usize), (f64, f64, usize)>,
}

pub fn summarize(outcomes: &[CellOutcome], mode: Mode) -> ModeSummary {
    let mut sums: BTreeMap<(String, u32, usize), (f64, f64, usize)> = BTreeMap::new();
    for cell in outcomes.iter().filter(|c| c.mode == mode) {
        for r in &cell.results {
            let e = sums
                .entry((r.map.clone(), r.robot, r.regression))
                .or_default();
            e.0 += r.cost;
            e.1 += r.realized;
            e.2 += 1;
        }
    }
    for v in sums.values_mut() {
        v.0 /= v.2 as f64;
        v.1 /= v.2 as f64;
    }
    ModeSummary { mode, rows: sums }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub map: String,
    pub robot: u32,
    pub regression: usize,
    pub mode: Mode,
    pub mean_cp: f64,
    pub mean_realized: f64,
    /// Fraction, not percent; `None` for single-mode reports.
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

/// `(iso - sh) / iso`.
pub fn improvement(isolated: f64, shared: f64) -> f64 {
    (isolated - shared) / isolated
}

impl ExperimentReport {
    pub fn single(summary: &ModeSummary) -> Self {
        let rows = summary
            .rows
            .iter()
            .map(|((map, robot, regression), &(cp, realized, _))| ReportRow {
                map: map.clone(),
                robot: *robot,
                regression: *regression,
                mode: summary.mode,
                mean_cp: cp,
                mean_realized: realized,
                improvement: None,
            })
            .collect();
        Self { rows }
    }

    pub fn from_outcomes(
        outcomes: &[CellOutcome],
        selection: ModeSelection,
    ) -> Result<Self, HarnessError> {
        match selection {
            ModeSelection::Both => compare(
                &summarize(outcomes, Mode::Isolated),
                &summarize(outcomes, Mode::Shared),
            ),
            ModeSelection::Isolated => Ok(Self::single(&summarize(outcomes, Mode::Isolated))),
            ModeSelection::Shared => Ok(Self::single(&summarize(outcomes, Mode::Shared))),
        }
    }

    fn mode_rows(&self, mode: Mode) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    fn mean_cp(&self, mode: Mode, map: Option<&str>) -> Option<f64> {
        let costs: Vec<f64> = self
            .mode_rows(mode)
            .filter(|r| map.is_none_or(|m| r.map == m))
            .map(|r| r.mean_cp)
            .collect();
        (!costs.is_empty()).then(|| costs.iter().sum::<f64>() / costs.len() as f64)
    }

    /// Improvement of the grand means, optionally restricted to one map.
    pub fn grand_improvement(&self, map: Option<&str>) -> Option<f64> {
        Some(improvement(
            self.mean_cp(Mode::Isolated, map)?,
            self.mean_cp(Mode::Shared, map)?,
        ))
    }

    pub fn maps(&self) -> Vec<&str> {
        let mut maps: Vec<&str> = self.rows.iter().map(|r| r.map.as_str()).collect();
        maps.dedup();
        maps.sort_unstable();
        maps.dedup();
        maps
    }

    pub fn summary(&self) -> ReportSummary {
        let per_map: Vec<MapSummary> = self
            .maps()
            .into_iter()
            .map(|m| MapSummary {
                map: m.to_string(),
                mean_cp_isolated: self.mean_cp(Mode::Isolated, Some(m)).map(round4),
                mean_cp_shared: self.mean_cp(Mode::Shared, Some(m)).map(round4),
                improvement_pct: self.grand_improvement(Some(m)).map(|x| round4(x * 100.0)),
            })
            .collect();
        ReportSummary {
            mean_cp_isolated: self.mean_cp(Mode::Isolated, None).map(round4),
            mean_cp_shared: self.mean_cp(Mode::Shared, None).map(round4),
            improvement_pct: self.grand_improvement(None).map(|x| round4(x * 100.0)),
            cells_improved: self
                .mode_rows(Mode::Shared)
                .filter(|r| r.improvement.is_some_and(|x| x > 0.0))
                .count(),
            cells: self
                .mode_rows(Mode::Shared)
                .filter(|r| r.improvement.is_some())
                .count(),
            maps: per_map,
        }
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSummary {
    pub map: String,
    pub mean_cp_isolated: Option<f64>,
    pub mean_cp_shared: Option<f64>,
    pub improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub mean_cp_isolated: Option<f64>,
    pub mean_cp_shared: Option<f64>,
    pub improvement_pct: Option<f64>,
    pub cells_improved: usize,
    pub cells: usize,
    pub maps: Vec<MapSummary>,
}

/// Pairs isolated and shared summaries key by key.
pub fn compare(
    isolated: &ModeSummary,
    shared: &ModeSummary,
) -> Result<ExperimentReport, HarnessError> {
    let iso_keys: Vec<_> = isolated.rows.keys().collect();
    let sh_keys: Vec<_> = shared.rows.keys().collect();
    if iso_keys != sh_keys {
        let missing: Vec<String> = iso_keys
            .iter()
            .filter(|k| !shared.rows.contains_key(**k))
            .chain(sh_keys.iter().filter(|k| !isolated.rows.contains_key(**k)))
            .map(|(m, r, g)| format!("({m}, {r}, {g})"))
            .collect();
        return Err(HarnessError::KeyMismatch(missing.join(", ")));
    }
    let mut rows = Vec::with_capacity(iso_keys.len() * 2);
    for (key, &(iso_cp, iso_real, _)) in &isolated.rows {
        let (sh_cp, sh_real, _) = shared.rows[key];
        let imp = improvement(iso_cp, sh_cp);
        for (mode, cp, real) in [
            (Mode::Isolated, iso_cp, iso_real),
            (Mode::Shared, sh_cp, sh_real),
        ] {
            rows.push(ReportRow {
                map: key.0.clone(),
                robot: key.1,
                regression: key.2,
                mode,
                mean_cp: cp,
                mean_realized: real,
                improvement: Some(imp),
            });
        }
    }
    Ok(ExperimentReport { rows })
}

pub fn write_report_to<W: Write>(report: &ExperimentReport, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.map.clone(),
            r.robot.to_string(),
            r.regression.to_string(),
            r.mode.as_str().to_string(),
            format!("{:.4}", r.mean_cp),
            format!("{:.4}", r.mean_realized),
            r.improvement
                .map(|x| format!("{:.4}", x * 100.0))
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    write_report_to(report, fs::File::create(path)?)
}

/// Writes `report.csv` and `summary.json` into `dir`.
pub fn write_outputs(
    report: &ExperimentReport,
    dir: impl AsRef<Path>,
) -> Result<ReportSummary, HarnessError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_report(report, dir.join("report.csv"))?;
    let summary = report.summary();
    let mut f = fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f)?;
    Ok(summary)
}
