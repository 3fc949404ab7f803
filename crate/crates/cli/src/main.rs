//! `sdvc` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sdvc_core::engine::RunOutput;
use sdvc_core::experiment::{compare, sweep, sweep_table, Comparison, SweepSpec};
use sdvc_core::io::generator::{gen_scenario, GenParams};
use sdvc_core::io::{format_log, frames, plot, scenario_file, trajectory, write_json};
use sdvc_core::oracle::{enumerate_optimal, OracleStatus};
use sdvc_core::{run, Controller, GridSpec, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "sdvc", version, about = "Cooperative vehicle control for emergency-vehicle transit on a cellular road")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Sdvc,
    Idm,
}

impl From<ControllerArg> for Controller {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Sdvc => Controller::Sdvc,
            ControllerArg::Idm => Controller::Idm,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write metrics, timing, trajectory and protocol log.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "sdvc")]
        controller: ControllerArg,
        /// Overrides the seed stored in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Generate a random scenario file.
    Gen {
        /// OVs per km over all lanes.
        density: f64,
        /// V_max minus the mean initial OV speed.
        delta_v: i32,
        lanes: i32,
        /// Segment length in metres.
        length: f64,
        #[arg(long, default_value_t = 1)]
        emv: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a frame table (x_m,lane,speed_mps,class) into a scenario file.
    Ingest {
        frames: PathBuf,
        #[arg(long)]
        cells: i32,
        #[arg(long)]
        lanes: i32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact optimum of a tiny instance, with the SDVC ratio.
    Oracle {
        scenario: PathBuf,
        /// Maximum number of joint states expanded.
        #[arg(long, default_value_t = 5_000_000)]
        budget: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SDVC and IDM metrics side by side.
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Space-time diagram (SVG) of a trajectory table.
    Plot {
        trajectory: PathBuf,
        #[arg(long, default_value = "trajectory.svg")]
        out: PathBuf,
        /// Grid size; taken from the table when absent.
        #[arg(long)]
        cells: Option<i32>,
        #[arg(long)]
        lanes: Option<i32>,
    },
    /// Mean f' per (lanes, density, delta_v) over generated scenarios.
    Sweep {
        #[arg(long, value_delimiter = ',', default_values_t = [88.0, 107.0, 117.0])]
        densities: Vec<f64>,
        #[arg(long = "delta-v", value_delimiter = ',', default_values_t = [1, 2, 3])]
        delta_v: Vec<i32>,
        #[arg(long, value_delimiter = ',', default_values_t = [3])]
        lanes: Vec<i32>,
        #[arg(long, default_value_t = 1200.0)]
        length: f64,
        #[arg(long, default_value_t = 1)]
        emv: u32,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Scale density by lanes / 3.
        #[arg(long)]
        per_lane: bool,
        #[arg(long, value_enum, default_value = "sdvc")]
        controller: ControllerArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn write_run(dir: &Path, out: &RunOutput) -> CliResult {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("metrics.json"), &out.metrics)?;
    write_json(&dir.join("timing.json"), &out.timing)?;
    fs::write(dir.join("trajectory.csv"), trajectory::to_string(&out.trajectory)?)?;
    fs::write(dir.join("protocol.log"), format_log(&out.log))?;
    Ok(())
}

fn load(path: &Path) -> Result<Scenario, Box<dyn std::error::Error>> {
    scenario_file::load(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn execute(cmd: Command) -> CliResult {
    match cmd {
        Command::Run { scenario, controller, seed, out_dir } => {
            let mut s = load(&scenario)?;
            if let Some(seed) = seed {
                s.config.seed = seed;
            }
            let out = run(&s, controller.into())?;
            write_run(&out_dir, &out)?;
            let m = &out.metrics;
            println!(
                "{}: ticks {} f' {:.3} collisions {} emv exits {:?}",
                m.controller.as_str(),
                m.ticks,
                m.f_prime,
                m.collision_ids.len(),
                m.emv_exit_ticks.values().collect::<Vec<_>>()
            );
        }
        Command::Gen { density, delta_v, lanes, length, emv, seed, out } => {
            let s = gen_scenario(&GenParams {
                density_veh_per_km: density,
                delta_v,
                lanes,
                length_m: length,
                n_emv: emv,
                seed,
            })?;
            emit(out.as_deref(), &scenario_file::to_string(&s)?)?;
        }
        Command::Ingest { frames: path, cells, lanes, out } => {
            let file = fs::File::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let s = frames::ingest_frames(file, &GridSpec::new(cells, lanes), &ScenarioConfig::default())?;
            emit(out.as_deref(), &scenario_file::to_string(&s)?)?;
        }
        Command::Oracle { scenario, budget, out } => {
            let s = load(&scenario)?;
            let result = enumerate_optimal(&s, budget)?;
            let sdvc = run(&s, Controller::Sdvc)?.metrics.f_prime;
            let ratio = match (result.status, result.optimal_f_prime) {
                (OracleStatus::Optimal, Some(opt)) if opt > 0.0 => Some(sdvc / opt),
                (OracleStatus::Optimal, Some(_)) => (sdvc == 0.0).then_some(1.0),
                _ => None,
            };
            let doc = serde_json::json!({ "oracle": result, "sdvc_f_prime": sdvc, "ratio": ratio });
            let mut text = serde_json::to_string_pretty(&doc)?;
            text.push('\n');
            emit(out.as_deref(), &text)?;
        }
        Command::Compare { scenario, json } => {
            let c: Comparison = compare(&load(&scenario)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&c)?);
            } else {
                print!("{}", c.table());
            }
        }
        Command::Plot { trajectory: path, out, cells, lanes } => {
            let file = fs::File::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let rows = trajectory::read(file)?;
            let cells = cells.unwrap_or_else(|| rows.iter().map(|r| r.i).max().unwrap_or(1));
            let lanes = lanes.unwrap_or_else(|| rows.iter().map(|r| r.l).max().unwrap_or(1));
            fs::write(&out, plot::emit_plot(&rows, &GridSpec::new(cells, lanes))?)?;
        }
        Command::Sweep { densities, delta_v, lanes, length, emv, seeds, per_lane, controller, out } => {
            let spec = SweepSpec {
                densities,
                delta_vs: delta_v,
                lanes,
                length_m: length,
                n_emv: emv,
                seeds: (0..seeds).collect(),
                per_lane,
            };
            let rows = sweep(&spec, &ScenarioConfig::default(), controller.into())?;
            emit(out.as_deref(), &sweep_table(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
