//! Non-cooperative comparator: OVs follow their lane leader with a
//! discretised Intelligent Driver Model and never change lanes. EMVs drive
//! with the same policy as in cooperative runs.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::domain::{Scenario, ScenarioConfig, VehicleId, VehicleState};
use crate::engine::{commit, emv_policy, StepOutcome, TickLog, WorldState};
use crate::prediction::{LocalView, SpatialIndex};
use crate::safety::safety_ok;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams {
    /// Desired speed `v0` in levels.
    pub desired_speed: f64,
    /// Maximum acceleration `a` in levels per tick.
    pub max_accel: f64,
    /// Comfortable deceleration `b` in levels per tick.
    pub comfort_decel: f64,
    /// Time headway `T` in ticks.
    pub headway: f64,
    /// Acceleration exponent `δ`.
    pub exponent: f64,
    /// Fractional part at which the continuous value rounds up.
    pub threshold: f64,
    /// Discrete bounds on the applied change.
    pub accel_max: i32,
    pub decel_max: i32,
}

impl IdmParams {
    /// Parameters for one OV: its desired speed is its initial speed.
    pub fn for_vehicle(s: &VehicleState, config: &ScenarioConfig) -> Self {
        IdmParams {
            desired_speed: f64::from(s.initial_speed),
            max_accel: f64::from(config.accel_max),
            comfort_decel: f64::from(config.decel_max),
            headway: 0.0,
            exponent: 4.0,
            threshold: 0.5,
            accel_max: config.accel_max,
            decel_max: config.decel_max,
        }
    }
}

/// Continuous IDM acceleration. `None` stands for an emergency stop request
/// (zero or negative gap).
pub fn idm_accel_continuous(follower: &VehicleState, leader: Option<&VehicleState>, p: &IdmParams) -> Option<f64> {
    let v = f64::from(follower.speed);
    let free = if p.desired_speed > 0.0 {
        1.0 - (v / p.desired_speed).powf(p.exponent)
    } else if v > 0.0 {
        return None;
    } else {
        0.0
    };
    let interaction = match leader {
        None => 0.0,
        Some(ld) => {
            let gap = f64::from(ld.cell - follower.cell);
            if gap <= 0.0 {
                return None;
            }
            let s0 = f64::from(safety_ok(follower, ld).required_gap);
            let dv = v - f64::from(ld.speed);
            let s_star = (s0 + v * p.headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt())).max(0.0);
            (s_star / gap).powi(2)
        }
    };
    Some(p.max_accel * (free - interaction))
}

/// Discrete acceleration level in `[-decel_max, accel_max]`.
pub fn idm_accel(follower: &VehicleState, leader: Option<&VehicleState>, p: &IdmParams) -> i32 {
    match idm_accel_continuous(follower, leader, p) {
        None => -p.decel_max,
        Some(a) => {
            let level = (a + (1.0 - p.threshold)).floor() as i32;
            level.clamp(-p.decel_max, p.accel_max)
        }
    }
}

/// One baseline tick.
pub fn baseline_step(world: &WorldState, scenario: &Scenario) -> StepOutcome {
    let started = Instant::now();
    let grid = &scenario.grid;
    let config = &scenario.config;

    let mut lanes: BTreeMap<i32, Vec<&VehicleState>> = BTreeMap::new();
    for s in world.vehicles.values() {
        lanes.entry(s.lane).or_default().push(s);
    }
    for lane in lanes.values_mut() {
        lane.sort_by_key(|s| (s.cell, s.id));
    }
    let leader_of = |s: &VehicleState| -> Option<&VehicleState> {
        lanes[&s.lane].iter().find(|o| o.cell > s.cell).copied()
    };

    let index = SpatialIndex::new(world.vehicles.values());
    let decided: BTreeMap<VehicleId, VehicleState> = world
        .vehicles
        .values()
        .map(|s| {
            let next = if s.is_emv() {
                let view = LocalView::build(s, &index, grid, config);
                emv_policy(s, &view, config)
            } else {
                let p = IdmParams::for_vehicle(s, config);
                let speed = (s.speed + idm_accel(s, leader_of(s), &p)).clamp(0, config.v_max);
                s.advanced(speed, s.lane)
            };
            (s.id, next)
        })
        .collect();

    let log = TickLog {
        tick: world.tick,
        decision_time: started.elapsed(),
        ..TickLog::default()
    };
    StepOutcome {
        next: commit(world, &decided, grid),
        decided,
        log,
    }
}
