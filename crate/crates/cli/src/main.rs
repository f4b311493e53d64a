use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use mrsim_core::behaviors::write_traces;
use mrsim_core::harness::{
    final_store, run_cell, run_experiment, write_outputs, ExperimentReport, HarnessError, Mode,
    ModeSelection, ScenarioConfig,
};
use mrsim_core::topomap::TopoMap;

#[derive(Parser)]
#[command(
    name = "mrsim",
    version,
    about = "Multi-robot travel-time sharing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the isolated/shared experiment and write report.csv + summary.json.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ModeSelection>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also write per-robot layer traces (JSON lines) into this directory.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Load and check a map file.
    Validate {
        #[arg(long)]
        map: PathBuf,
    },
    /// Run one cell and dump a robot's knowledge base.
    DumpTriples {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        robot: usize,
        #[arg(long, value_parser = parse_single_mode, default_value = "shared")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON; command-line options override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    map: Vec<PathBuf>,
    #[arg(long)]
    robots: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    regression: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    delta: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<ScenarioConfig, HarnessError> {
        let mut config = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        if !self.map.is_empty() {
            config.maps = self.map.clone();
        }
        if let Some(n) = self.robots {
            config.robots = n;
        }
        if let Some(r) = &self.regression {
            config.regressions = r.clone();
        }
        if let Some(n) = self.reps {
            config.repetitions = n;
        }
        if let Some(d) = self.delta {
            config.fleet.delta = d;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        config.validate()?;
        Ok(config)
    }
}

fn parse_mode(s: &str) -> Result<ModeSelection, String> {
    match s {
        "isolated" => Ok(ModeSelection::Isolated),
        "shared" => Ok(ModeSelection::Shared),
        "both" => Ok(ModeSelection::Both),
        _ => Err(format!("expected shared, isolated or both, got {s:?}")),
    }
}

fn parse_single_mode(s: &str) -> Result<Mode, String> {
    match s {
        "isolated" => Ok(Mode::Isolated),
        "shared" => Ok(Mode::Shared),
        _ => Err(format!("expected shared or isolated, got {s:?}")),
    }
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run {
            scenario,
            mode,
            out,
            trace_dir,
        } => {
            let mut config = scenario.resolve()?;
            if let Some(m) = mode {
                config.mode = m;
            }
            let maps = config.load_maps()?;
            let started = Instant::now();
            let outcomes = run_experiment(&config, &maps)?;
            let report = ExperimentReport::from_outcomes(&outcomes, config.mode)?;
            let summary = write_outputs(&report, &out)?;
            for cell in &outcomes {
                if cell.status != mrsim_core::harness::CellStatus::Completed {
                    eprintln!(
                        "{} r={} {}: {:?}",
                        cell.map,
                        cell.regression,
                        cell.mode.as_str(),
                        cell.status
                    );
                }
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
            log::info!("finished in {:.2?}", started.elapsed());

            if let Some(dir) = trace_dir {
                fs::create_dir_all(&dir)?;
                for (mi, map) in maps.iter().enumerate() {
                    for &r in &config.regressions {
                        for &m in config.mode.modes() {
                            let run = run_cell(&config, map, mi, r, m, true)?;
                            for robot in 0..config.robots as u32 {
                                let name = format!(
                                    "{}_r{}_{}_robot{}.jsonl",
                                    map.name,
                                    r,
                                    m.as_str(),
                                    robot
                                );
                                let traces: Vec<_> = run
                                    .traces
                                    .iter()
                                    .filter(|t| t.robot.0 == robot)
                                    .cloned()
                                    .collect();
                                write_traces(&traces, fs::File::create(dir.join(name))?)?;
                            }
                        }
                    }
                }
            }
            Ok(())
        }
        Command::Validate { map } => {
            let m = TopoMap::load(&map)?;
            println!(
                "{}: {} nodes, {} arcs, {} zones, {} ports",
                map.display(),
                m.nodes().len(),
                m.arcs().len(),
                m.zones().len(),
                m.ports().count()
            );
            Ok(())
        }
        Command::DumpTriples {
            scenario,
            robot,
            mode,
            out,
        } => {
            let config = scenario.resolve()?;
            let maps = config.load_maps()?;
            let store = final_store(&config, &maps[0], config.regressions[0], mode, robot)?;
            store.export_triples(&out)?;
            println!("{} triples written to {}", store.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
