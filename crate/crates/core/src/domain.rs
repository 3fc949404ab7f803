//! Discrete road model: grid geometry, vehicle states, scenario configuration
//! and the checks a scenario must pass before it can be simulated.
//!
//! Positions are cell indices `1..=I` along a lane, lanes run `1..=L` from the
//! bottom, and speeds are integer levels in cells per tick (one tick is one
//! second, so level `k` is `k * cell_length_m` metres per second).

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::safety;

/// Exact rational used wherever the model compares averaged speeds.
pub type Rational = Ratio<i64>;

pub fn rational_abs(r: Rational) -> Rational {
    if r < Rational::from_integer(0) {
        -r
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    #[serde(rename = "EMV")]
    Emv,
    #[serde(rename = "OV")]
    Ov,
}

impl VehicleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Emv => "EMV",
            VehicleClass::Ov => "OV",
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VehicleClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EMV" => Ok(VehicleClass::Emv),
            "OV" => Ok(VehicleClass::Ov),
            other => Err(Error::Parse(format!("unknown vehicle class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cells per lane (`I`).
    pub cell_count: i32,
    /// Number of lanes (`L`).
    pub lane_count: i32,
    /// Cell length `A` in metres.
    pub cell_length_m: f64,
    /// Cell width `B` in metres; informational only.
    #[serde(default = "default_cell_width")]
    pub cell_width_m: f64,
}

fn default_cell_width() -> f64 {
    3.5
}

impl GridSpec {
    pub fn new(cell_count: i32, lane_count: i32) -> Self {
        GridSpec {
            cell_count,
            lane_count,
            cell_length_m: 6.0,
            cell_width_m: default_cell_width(),
        }
    }

    pub fn length_m(&self) -> f64 {
        f64::from(self.cell_count) * self.cell_length_m
    }

    /// Longitudinal centre of `cell`, in metres from the segment start.
    pub fn cell_center_m(&self, cell: i32) -> f64 {
        (f64::from(cell) - 0.5) * self.cell_length_m
    }
}

/// Discrete pose of one vehicle at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub class: VehicleClass,
    /// Longitudinal cell `i`.
    pub cell: i32,
    /// Lane `l`.
    pub lane: i32,
    /// Speed level `v` (cells per tick).
    pub speed: i32,
    /// Broadcast flag: the OV is currently driving cooperatively with an EMV.
    pub cooperating: bool,
    /// Speed at scenario start, `v⁰`.
    pub initial_speed: i32,
}

impl VehicleState {
    pub fn new(id: u32, class: VehicleClass, cell: i32, lane: i32, speed: i32) -> Self {
        VehicleState {
            id: VehicleId(id),
            class,
            cell,
            lane,
            speed,
            cooperating: false,
            initial_speed: speed,
        }
    }

    pub fn ov(id: u32, cell: i32, lane: i32, speed: i32) -> Self {
        Self::new(id, VehicleClass::Ov, cell, lane, speed)
    }

    pub fn emv(id: u32, cell: i32, lane: i32, speed: i32) -> Self {
        Self::new(id, VehicleClass::Emv, cell, lane, speed)
    }

    pub fn is_emv(&self) -> bool {
        self.class == VehicleClass::Emv
    }

    pub fn is_ov(&self) -> bool {
        self.class == VehicleClass::Ov
    }

    /// State one tick later with the given speed and lane. Position always
    /// advances by the current speed.
    pub fn advanced(&self, speed: i32, lane: i32) -> VehicleState {
        VehicleState {
            cell: self.cell + self.speed,
            speed,
            lane,
            ..*self
        }
    }

    /// Lane- and speed-keeping successor.
    pub fn maintained(&self) -> VehicleState {
        self.advanced(self.speed, self.lane)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Planning horizon `T` in ticks.
    pub horizon: u32,
    pub v_max: i32,
    /// Maximum acceleration `ā` in levels per tick.
    pub accel_max: i32,
    /// Maximum deceleration `a̲` in levels per tick.
    pub decel_max: i32,
    /// Objective weight on OV speed changes.
    pub c1: f64,
    /// Objective weight on EMV lane changes.
    pub c2: f64,
    /// Objective weight on OV lane changes.
    pub c3: f64,
    /// Strategy weight on own behaviour change.
    pub w1: f64,
    /// Strategy weight on target-lane speed deviation.
    pub w2: f64,
    /// Strategy weight on the safety/efficiency penalty.
    pub w3: f64,
    pub comm_range_m: f64,
    pub seed: u64,
    /// Replaces the measured mean initial OV speed when set.
    pub mean_ov_speed_override: Option<i32>,
    /// Largest cell gap between consecutive platoon members.
    pub platoon_gap: i32,
    /// End the run as soon as every EMV has left the segment.
    pub stop_when_emvs_exit: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            horizon: 72,
            v_max: 5,
            accel_max: 1,
            decel_max: 1,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            w1: 1.0,
            w2: 2.0,
            w3: 5.0,
            comm_range_m: 400.0,
            seed: 0,
            mean_ov_speed_override: None,
            platoon_gap: 1,
            stop_when_emvs_exit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: GridSpec,
    pub config: ScenarioConfig,
    pub vehicles: Vec<VehicleState>,
}

impl Scenario {
    pub fn new(grid: GridSpec, config: ScenarioConfig, vehicles: Vec<VehicleState>) -> Self {
        Scenario {
            grid,
            config,
            vehicles,
        }
    }

    pub fn ov_count(&self) -> usize {
        self.vehicles.iter().filter(|v| v.is_ov()).count()
    }

    pub fn emv_count(&self) -> usize {
        self.vehicles.iter().filter(|v| v.is_emv()).count()
    }
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Maps a measured speed to its level, rounding half up and clamping to
/// `[0, v_max]`.
pub fn discretize_speed(speed_mps: f64, grid: &GridSpec, v_max: i32) -> Result<i32> {
    if !(speed_mps >= 0.0) || !speed_mps.is_finite() {
        return Err(Error::InvalidMeasurement(format!(
            "speed {speed_mps} m/s must be finite and non-negative"
        )));
    }
    let level = round_half_up(speed_mps / grid.cell_length_m);
    Ok(level.min(f64::from(v_max)) as i32)
}

/// Maps a longitudinal offset in metres to its 1-based cell.
pub fn discretize_position(x_m: f64, grid: &GridSpec) -> Result<i32> {
    let length_m = grid.length_m();
    if !(x_m >= 0.0 && x_m < length_m) {
        return Err(Error::OutOfRange { x_m, length_m });
    }
    let cell = (x_m / grid.cell_length_m).floor() as i32 + 1;
    Ok(cell.min(grid.cell_count))
}

/// `V̄_OV`: the override if configured, otherwise the exact mean of all OV
/// speeds at t = 0.
pub fn mean_initial_ov_speed(scenario: &Scenario) -> Result<Rational> {
    if let Some(level) = scenario.config.mean_ov_speed_override {
        return Ok(Rational::from_integer(i64::from(level)));
    }
    let (sum, count) = scenario
        .vehicles
        .iter()
        .filter(|v| v.is_ov())
        .fold((0i64, 0i64), |(s, c), v| (s + i64::from(v.speed), c + 1));
    if count == 0 {
        return Err(Error::NoOrdinaryVehicles);
    }
    Ok(Rational::new(sum, count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    InvalidConfig {
        field: &'static str,
        reason: String,
    },
    DuplicateId(VehicleId),
    OutOfBounds {
        id: VehicleId,
        cell: i32,
        lane: i32,
        speed: i32,
    },
    EmvCooperating(VehicleId),
    DuplicateCell {
        first: VehicleId,
        second: VehicleId,
        cell: i32,
        lane: i32,
    },
    UnsafeGap {
        follower: VehicleId,
        leader: VehicleId,
        required: i32,
        actual: i32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidConfig { field, reason } => {
                write!(f, "invalid config {field}: {reason}")
            }
            Violation::DuplicateId(id) => write!(f, "duplicate vehicle id {id}"),
            Violation::OutOfBounds {
                id,
                cell,
                lane,
                speed,
            } => write!(
                f,
                "vehicle {id} out of bounds (i={cell}, l={lane}, v={speed})"
            ),
            Violation::EmvCooperating(id) => write!(f, "EMV {id} flagged as cooperating"),
            Violation::DuplicateCell {
                first,
                second,
                cell,
                lane,
            } => write!(
                f,
                "duplicate cell ({cell}, {lane}) occupied by {first} and {second}"
            ),
            Violation::UnsafeGap {
                follower,
                leader,
                required,
                actual,
            } => write!(
                f,
                "unsafe gap: follower {follower} is {actual} cells behind leader {leader}, needs {required}"
            ),
        }
    }
}

fn check_config(grid: &GridSpec, config: &ScenarioConfig, out: &mut Vec<Violation>) {
    let mut bad = |field: &'static str, reason: String| {
        out.push(Violation::InvalidConfig { field, reason })
    };
    if grid.cell_count < 1 {
        bad("cell_count", format!("{} < 1", grid.cell_count));
    }
    if grid.lane_count < 1 {
        bad("lane_count", format!("{} < 1", grid.lane_count));
    }
    if !(grid.cell_length_m > 0.0) {
        bad("cell_length_m", format!("{} is not positive", grid.cell_length_m));
    }
    if config.horizon < 1 {
        bad("horizon", "must be at least 1".into());
    }
    if config.v_max < 1 {
        bad("v_max", format!("{} < 1", config.v_max));
    }
    if config.accel_max < 1 {
        bad("accel_max", format!("{} < 1", config.accel_max));
    }
    if config.decel_max < 1 {
        bad("decel_max", format!("{} < 1", config.decel_max));
    }
    for (field, w) in [
        ("c1", config.c1),
        ("c2", config.c2),
        ("c3", config.c3),
        ("w1", config.w1),
        ("w2", config.w2),
        ("w3", config.w3),
    ] {
        if !(w >= 0.0) || !w.is_finite() {
            bad(field, format!("{w} is not a finite non-negative weight"));
        }
    }
    if !(config.comm_range_m > 0.0) {
        bad("comm_range_m", format!("{} is not positive", config.comm_range_m));
    }
    if config.platoon_gap < 1 {
        bad("platoon_gap", format!("{} < 1", config.platoon_gap));
    }
    if let Some(level) = config.mean_ov_speed_override {
        if level < 0 || level > config.v_max {
            bad(
                "mean_ov_speed_override",
                format!("{level} outside [0, {}]", config.v_max),
            );
        }
    }
}

/// Checks configuration sanity, state bounds, unique occupancy and the
/// same-lane safety gap at t = 0. An empty list means the scenario is valid.
pub fn validate_scenario(scenario: &Scenario) -> std::result::Result<(), Vec<Violation>> {
    let grid = &scenario.grid;
    let config = &scenario.config;
    let mut out = Vec::new();
    check_config(grid, config, &mut out);

    let mut seen = std::collections::BTreeSet::new();
    for v in &scenario.vehicles {
        if !seen.insert(v.id) {
            out.push(Violation::DuplicateId(v.id));
        }
        if v.cell < 1
            || v.cell > grid.cell_count
            || v.lane < 1
            || v.lane > grid.lane_count
            || v.speed < 0
            || v.speed > config.v_max
        {
            out.push(Violation::OutOfBounds {
                id: v.id,
                cell: v.cell,
                lane: v.lane,
                speed: v.speed,
            });
        }
        if v.is_emv() && v.cooperating {
            out.push(Violation::EmvCooperating(v.id));
        }
    }

    // Adjacent same-lane pairs suffice: gaps add up faster than the required
    // gaps do, so safe neighbours imply safe non-neighbours.
    let mut ordered: Vec<&VehicleState> = scenario.vehicles.iter().collect();
    ordered.sort_by_key(|v| (v.lane, v.cell, v.id));
    for pair in ordered.windows(2) {
        let (back, front) = (pair[0], pair[1]);
        if back.lane != front.lane {
            continue;
        }
        if back.cell == front.cell {
            out.push(Violation::DuplicateCell {
                first: back.id,
                second: front.id,
                cell: back.cell,
                lane: back.lane,
            });
            continue;
        }
        let verdict = safety::safety_ok(back, front);
        if !verdict.ok {
            out.push(Violation::UnsafeGap {
                follower: back.id,
                leader: front.id,
                required: verdict.required_gap,
                actual: verdict.actual_gap,
            });
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
