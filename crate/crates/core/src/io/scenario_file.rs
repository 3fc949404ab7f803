//! JSON scenario documents.
//!
//! ```json
//! {
//!   "grid": { "I": 200, "L": 3, "cell_length_m": 6.0 },
//!   "config": { "horizon": 72, "v_max": 5, ... },
//!   "vehicles": [ { "class": "EMV", "i": 1, "l": 1, "v": 3 }, ... ]
//! }
//! ```
//!
//! Vehicle ids follow file order starting at 0. `v0` (the speed used for the
//! efficiency floor) defaults to `v` and is only written when it differs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{GridSpec, Scenario, ScenarioConfig, VehicleClass, VehicleState};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridDoc {
    #[serde(rename = "I")]
    cells: i32,
    #[serde(rename = "L")]
    lanes: i32,
    #[serde(default = "default_cell_length")]
    cell_length_m: f64,
    #[serde(default = "default_cell_width")]
    cell_width_m: f64,
}

fn default_cell_length() -> f64 {
    6.0
}

fn default_cell_width() -> f64 {
    3.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VehicleDoc {
    class: VehicleClass,
    i: i32,
    l: i32,
    v: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v0: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScenarioDoc {
    grid: GridDoc,
    #[serde(default)]
    config: ScenarioConfig,
    vehicles: Vec<VehicleDoc>,
}

pub fn from_str(text: &str) -> Result<Scenario> {
    let doc: ScenarioDoc = serde_json::from_str(text)?;
    let grid = GridSpec {
        cell_count: doc.grid.cells,
        lane_count: doc.grid.lanes,
        cell_length_m: doc.grid.cell_length_m,
        cell_width_m: doc.grid.cell_width_m,
    };
    let vehicles = doc
        .vehicles
        .iter()
        .enumerate()
        .map(|(k, v)| VehicleState {
            initial_speed: v.v0.unwrap_or(v.v),
            ..VehicleState::new(k as u32, v.class, v.i, v.l, v.v)
        })
        .collect();
    Ok(Scenario::new(grid, doc.config, vehicles))
}

/// Canonical text: pretty JSON, vehicles in id order, trailing newline.
pub fn to_string(scenario: &Scenario) -> Result<String> {
    let mut vehicles: Vec<&VehicleState> = scenario.vehicles.iter().collect();
    vehicles.sort_by_key(|v| v.id);
    let doc = ScenarioDoc {
        grid: GridDoc {
            cells: scenario.grid.cell_count,
            lanes: scenario.grid.lane_count,
            cell_length_m: scenario.grid.cell_length_m,
            cell_width_m: scenario.grid.cell_width_m,
        },
        config: scenario.config.clone(),
        vehicles: vehicles
            .into_iter()
            .map(|v| VehicleDoc {
                class: v.class,
                i: v.cell,
                l: v.lane,
                v: v.speed,
                v0: (v.initial_speed != v.speed).then_some(v.initial_speed),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

pub fn load(path: &Path) -> Result<Scenario> {
    from_str(&std::fs::read_to_string(path)?)
}

pub fn save(path: &Path, scenario: &Scenario) -> Result<()> {
    std::fs::write(path, to_string(scenario)?)?;
    Ok(())
}
