//! Measured frames to discrete scenarios.
//!
//! Input rows are `x_m,lane,speed_mps,class` with a header line. `x_m` is
//! measured from the segment start, lanes count from 1 at the bottom. Rows
//! that land in an occupied cell move back to the nearest free cell of their
//! lane, in file order.

use std::collections::BTreeSet;
use std::io::Read;

use serde::Deserialize;

use crate::domain::{
    discretize_position, discretize_speed, validate_scenario, GridSpec, Scenario, ScenarioConfig, VehicleClass,
    VehicleState,
};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct FrameRow {
    x_m: f64,
    lane: i32,
    speed_mps: f64,
    class: VehicleClass,
}

pub fn ingest_frames<R: Read>(input: R, grid: &GridSpec, config: &ScenarioConfig) -> Result<Scenario> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let rows: Vec<FrameRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Error::Empty("frame file has no vehicle rows"));
    }

    let mut occupied: BTreeSet<(i32, i32)> = BTreeSet::new();
    let mut vehicles = Vec::with_capacity(rows.len());
    let mut bad = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        let line = k + 2;
        if r.lane < 1 || r.lane > grid.lane_count {
            bad.push(format!("row {line}: lane {} outside 1..={}", r.lane, grid.lane_count));
            continue;
        }
        let cell = match discretize_position(r.x_m, grid) {
            Ok(c) => c,
            Err(e) => {
                bad.push(format!("row {line}: {e}"));
                continue;
            }
        };
        let speed = match discretize_speed(r.speed_mps, grid, config.v_max) {
            Ok(v) => v,
            Err(e) => {
                bad.push(format!("row {line}: {e}"));
                continue;
            }
        };
        let Some(free) = (1..=cell).rev().find(|c| !occupied.contains(&(*c, r.lane))) else {
            bad.push(format!("row {line}: no free cell at or behind cell {cell} in lane {}", r.lane));
            continue;
        };
        occupied.insert((free, r.lane));
        vehicles.push(VehicleState::new(k as u32, r.class, free, r.lane, speed));
    }
    if !bad.is_empty() {
        return Err(Error::Ingestion(bad.join("; ")));
    }
    let scenario = Scenario::new(*grid, config.clone(), vehicles);
    validate_scenario(&scenario).map_err(Error::Validation)?;
    Ok(scenario)
}
