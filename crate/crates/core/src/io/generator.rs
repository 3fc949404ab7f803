//! Seeded synthetic scenarios at a given density and speed heterogeneity.
//!
//! `Δv = V_max - V̄_OV`: OV speeds are drawn uniformly from
//! `{μ - 1, μ, μ + 1}` around `μ = V_max - Δv` (a single level when
//! `Δv = 0`), clipped to `[0, V_max]`. Density counts OVs per kilometre of
//! road across all lanes. EMVs enter at the segment start, staggered two
//! cells apart and spread over the lanes, at speed `μ`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{validate_scenario, GridSpec, Scenario, ScenarioConfig, VehicleState};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};
use crate::safety::is_safe;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub density_veh_per_km: f64,
    pub delta_v: i32,
    pub lanes: i32,
    pub length_m: f64,
    pub n_emv: u32,
    pub seed: u64,
}

/// Planning horizon long enough for an EMV to cross `cells` at `v_max`.
pub fn default_horizon(cells: i32, v_max: i32) -> u32 {
    ((cells + v_max - 1) / v_max) as u32 + 32
}

pub fn ov_count(params: &GenParams) -> usize {
    (params.density_veh_per_km * params.length_m / 1000.0).round() as usize
}

/// Builds a scenario with `base` as template configuration; its seed and
/// horizon are replaced.
pub fn gen_scenario_with(params: &GenParams, base: &ScenarioConfig) -> Result<Scenario> {
    let v_max = base.v_max;
    if params.lanes < 1 || !(params.length_m > 0.0) || !(params.density_veh_per_km >= 0.0) {
        return Err(Error::Generation(format!("invalid generator arguments {params:?}")));
    }
    if params.delta_v < 0 || params.delta_v > v_max {
        return Err(Error::Generation(format!("delta_v {} outside [0, {v_max}]", params.delta_v)));
    }
    let mut grid = GridSpec::new(1, params.lanes);
    grid.cell_count = (params.length_m / grid.cell_length_m).round() as i32;
    if grid.cell_count < 1 {
        return Err(Error::Generation(format!("segment of {} m has no cells", params.length_m)));
    }
    let n_ov = ov_count(params);
    let capacity = (grid.cell_count * grid.lane_count) as usize;
    if n_ov + params.n_emv as usize > capacity {
        return Err(Error::Generation(format!(
            "{n_ov} OVs and {} EMVs exceed the {capacity} cells of the segment",
            params.n_emv
        )));
    }

    let config = ScenarioConfig {
        seed: params.seed,
        horizon: default_horizon(grid.cell_count, v_max),
        ..base.clone()
    };
    let mut rng = substream(params.seed, 0, 0, Purpose::Generate, 0);
    let mu = v_max - params.delta_v;
    let spread = params.delta_v.min(1);

    let mut lanes: BTreeMap<i32, Vec<VehicleState>> = BTreeMap::new();
    let mut vehicles = Vec::with_capacity(n_ov + params.n_emv as usize);
    let fits = |lanes: &BTreeMap<i32, Vec<VehicleState>>, s: &VehicleState| -> bool {
        lanes
            .get(&s.lane)
            .is_none_or(|others| others.iter().all(|o| is_safe(o, s)))
    };

    for k in 0..params.n_emv {
        let s = VehicleState::emv(k, 1 + 2 * k as i32, (k as i32 % params.lanes) + 1, mu);
        if s.cell > grid.cell_count || !fits(&lanes, &s) {
            return Err(Error::Generation(format!("cannot place EMV {k}")));
        }
        lanes.entry(s.lane).or_default().push(s);
        vehicles.push(s);
    }

    let mut cells: Vec<(i32, i32)> = (1..=grid.cell_count)
        .flat_map(|c| (1..=grid.lane_count).map(move |l| (c, l)))
        .collect();
    for k in 0..n_ov {
        let id = params.n_emv + k as u32;
        let speed = (mu + rng.gen_range(-spread..=spread)).clamp(0, v_max);
        // Random probes first, then a full shuffled scan.
        let mut placed = None;
        for _ in 0..64 {
            let (c, l) = cells[rng.gen_range(0..cells.len())];
            let s = VehicleState::ov(id, c, l, speed);
            if fits(&lanes, &s) {
                placed = Some(s);
                break;
            }
        }
        if placed.is_none() {
            cells.shuffle(&mut rng);
            placed = cells
                .iter()
                .map(|&(c, l)| VehicleState::ov(id, c, l, speed))
                .find(|s| fits(&lanes, s));
        }
        let Some(s) = placed else {
            return Err(Error::Generation(format!(
                "no safe cell left for OV {k} of {n_ov} at density {}",
                params.density_veh_per_km
            )));
        };
        cells.retain(|&(c, l)| (c, l) != (s.cell, s.lane));
        lanes.entry(s.lane).or_default().push(s);
        vehicles.push(s);
    }

    let scenario = Scenario::new(grid, config, vehicles);
    validate_scenario(&scenario).map_err(|v| Error::Generation(format!("generated scenario is invalid: {v:?}")))?;
    Ok(scenario)
}

pub fn gen_scenario(params: &GenParams) -> Result<Scenario> {
    gen_scenario_with(params, &ScenarioConfig::default())
}
