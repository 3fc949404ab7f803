//! Local views and short-horizon motion forecasts.
//!
//! A vehicle only sees the vehicles within its longitudinal communication
//! range. From that snapshot it derives per-lane densities, the lane each
//! nearby EMV is heading for, per-lane mean speeds, and constant-motion or
//! EMV-policy forecasts of its neighbours.

use crate::domain::{GridSpec, Rational, ScenarioConfig, VehicleId, VehicleState};

/// Vehicles sorted along the road for range queries.
#[derive(Debug, Clone, Default)]
pub struct SpatialIndex {
    sorted: Vec<VehicleState>,
}

impl SpatialIndex {
    pub fn new<'a>(states: impl IntoIterator<Item = &'a VehicleState>) -> Self {
        let mut sorted: Vec<VehicleState> = states.into_iter().copied().collect();
        sorted.sort_by_key(|s| (s.cell, s.lane, s.id));
        SpatialIndex { sorted }
    }

    /// All vehicles with `|cell - center| <= radius`.
    pub fn within(&self, center: i32, radius: i32) -> &[VehicleState] {
        let lo = self.sorted.partition_point(|s| s.cell < center - radius);
        let hi = self.sorted.partition_point(|s| s.cell <= center + radius);
        &self.sorted[lo..hi]
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

/// `R = floor(comm_range_m / A)`.
pub fn comm_range_cells(grid: &GridSpec, config: &ScenarioConfig) -> i32 {
    (config.comm_range_m / grid.cell_length_m).floor() as i32
}

/// The communication set `C_n`: every other vehicle within `R` cells, any
/// lane, sorted by id.
pub fn comm_set(
    observer: &VehicleState,
    index: &SpatialIndex,
    grid: &GridSpec,
    config: &ScenarioConfig,
) -> Vec<VehicleState> {
    let r = comm_range_cells(grid, config);
    let mut out: Vec<VehicleState> = index
        .within(observer.cell, r)
        .iter()
        .filter(|s| s.id != observer.id)
        .copied()
        .collect();
    out.sort_by_key(|s| s.id);
    out
}

/// Forecast horizon `F_{j,n}` that `n` uses for neighbour `j`. Never below
/// one tick.
pub fn prediction_horizon(j: &VehicleState, n: &VehicleState, config: &ScenarioConfig) -> u32 {
    let ceil_div = |num: i32, den: i32| -> i32 { (num + den - 1).div_euclid(den) };
    let f = if j.is_emv() || j.cooperating {
        ceil_div((config.v_max - n.speed).max(0), config.accel_max)
    } else {
        ceil_div((j.speed - n.speed).abs(), config.accel_max + config.decel_max)
    };
    f.max(1) as u32
}

/// `K_{l,n}`: vehicles of the view currently in `lane`. `observer` is counted
/// when given.
pub fn lane_density(lane: i32, observer: Option<&VehicleState>, neighbors: &[VehicleState]) -> u32 {
    let own = observer.is_some_and(|o| o.lane == lane) as u32;
    own + neighbors.iter().filter(|s| s.lane == lane).count() as u32
}

/// Least-dense lane; ties go to the lane closest to `current_lane`, then to
/// the lower index. `densities[k]` belongs to lane `k + 1`.
pub fn emv_target_lane(densities: &[u32], current_lane: i32) -> i32 {
    (1..=densities.len() as i32)
        .min_by_key(|&lane| {
            (
                densities[(lane - 1) as usize],
                (lane - current_lane).abs(),
                lane,
            )
        })
        .unwrap_or(current_lane)
}

/// Forecast of one vehicle for `τ = 1..=F`. The states keep the subject's id
/// and class so they can be fed to the safety predicate directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictedTrack {
    pub subject: VehicleId,
    pub states: Vec<VehicleState>,
}

impl PredictedTrack {
    /// State at offset `tau` (1-based).
    pub fn at(&self, tau: u32) -> &VehicleState {
        &self.states[(tau - 1) as usize]
    }
}

/// One EMV policy step: advance by the current speed, accelerate toward
/// `v_max`, move at most one lane toward `target_lane`.
pub fn emv_step(m: &VehicleState, target_lane: i32, config: &ScenarioConfig) -> VehicleState {
    let speed = (m.speed + config.accel_max).min(config.v_max);
    let lane = m.lane + (target_lane - m.lane).clamp(-1, 1);
    m.advanced(speed, lane)
}

pub fn predict_emv(
    m: &VehicleState,
    target_lane: i32,
    horizon: u32,
    config: &ScenarioConfig,
) -> PredictedTrack {
    let mut states = Vec::with_capacity(horizon as usize);
    let mut cur = *m;
    for _ in 0..horizon {
        cur = emv_step(&cur, target_lane, config);
        states.push(cur);
    }
    PredictedTrack {
        subject: m.id,
        states,
    }
}

pub fn predict_const(x: &VehicleState, horizon: u32) -> PredictedTrack {
    let states = (1..=horizon as i32)
        .map(|tau| VehicleState {
            cell: x.cell + tau * x.speed,
            ..*x
        })
        .collect();
    PredictedTrack {
        subject: x.id,
        states,
    }
}

/// `v̄_l` as seen by `observer`: `v_max` when an EMV behind the observer is
/// heading for `lane`, otherwise the mean speed of the view's vehicles in
/// `lane`, or the observer's own speed when the lane is empty.
pub fn lane_mean_speed(
    lane: i32,
    observer: &VehicleState,
    neighbors: &[VehicleState],
    emv_targets: &[(VehicleId, i32)],
    config: &ScenarioConfig,
) -> Rational {
    let emv_behind = emv_targets.iter().any(|&(id, target)| {
        target == lane
            && neighbors
                .iter()
                .any(|s| s.id == id && s.cell < observer.cell)
    });
    if emv_behind {
        return Rational::from_integer(i64::from(config.v_max));
    }
    let (sum, count) = std::iter::once(observer)
        .chain(neighbors)
        .filter(|s| s.lane == lane)
        .fold((0i64, 0i64), |(s, c), v| (s + i64::from(v.speed), c + 1));
    if count == 0 {
        Rational::from_integer(i64::from(observer.speed))
    } else {
        Rational::new(sum, count)
    }
}

/// Everything one vehicle knows at the start of a tick.
#[derive(Debug, Clone)]
pub struct LocalView {
    pub observer: VehicleState,
    /// `C_n`, sorted by id.
    pub neighbors: Vec<VehicleState>,
    /// Per-lane counts; the observer is included when it is an OV.
    pub lane_density: Vec<u32>,
    /// Per-lane `v̄_l`.
    pub lane_mean_speeds: Vec<Rational>,
    /// Target lane of every EMV in the view (including an EMV observer's own
    /// target), sorted by id.
    pub emv_targets: Vec<(VehicleId, i32)>,
}

impl LocalView {
    pub fn build(
        observer: &VehicleState,
        index: &SpatialIndex,
        grid: &GridSpec,
        config: &ScenarioConfig,
    ) -> Self {
        let neighbors = comm_set(observer, index, grid, config);
        Self::from_neighbors(*observer, neighbors, grid, config)
    }

    pub fn from_neighbors(
        observer: VehicleState,
        mut neighbors: Vec<VehicleState>,
        grid: &GridSpec,
        config: &ScenarioConfig,
    ) -> Self {
        neighbors.sort_by_key(|s| s.id);
        let counted = observer.is_ov().then_some(&observer);
        let lane_density: Vec<u32> = (1..=grid.lane_count)
            .map(|lane| lane_density(lane, counted, &neighbors))
            .collect();

        // An EMV does not count itself when picking the least-dense lane.
        let target_for = |emv: &VehicleState| -> i32 {
            let mut d = lane_density.clone();
            if emv.id != observer.id {
                if let Some(k) = d.get_mut((emv.lane - 1) as usize) {
                    *k = k.saturating_sub(1);
                }
            }
            emv_target_lane(&d, emv.lane)
        };
        let mut emv_targets: Vec<(VehicleId, i32)> = neighbors
            .iter()
            .chain(std::iter::once(&observer))
            .filter(|s| s.is_emv())
            .map(|s| (s.id, target_for(s)))
            .collect();
        emv_targets.sort_by_key(|&(id, _)| id);

        let lane_mean_speeds = (1..=grid.lane_count)
            .map(|lane| lane_mean_speed(lane, &observer, &neighbors, &emv_targets, config))
            .collect();

        LocalView {
            observer,
            neighbors,
            lane_density,
            lane_mean_speeds,
            emv_targets,
        }
    }

    pub fn neighbor(&self, id: VehicleId) -> Option<&VehicleState> {
        self.neighbors
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|k| &self.neighbors[k])
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        id == self.observer.id || self.neighbor(id).is_some()
    }

    /// Target lane this view attributes to EMV `id`.
    pub fn emv_target(&self, id: VehicleId) -> Option<i32> {
        self.emv_targets
            .binary_search_by_key(&id, |&(k, _)| k)
            .ok()
            .map(|k| self.emv_targets[k].1)
    }

    pub fn lane_mean(&self, lane: i32) -> Rational {
        self.lane_mean_speeds[(lane - 1) as usize]
    }

    /// Forecast of neighbour `j` over `horizon` ticks: EMV policy for EMVs,
    /// constant motion for OVs.
    pub fn predict(&self, j: &VehicleState, horizon: u32, config: &ScenarioConfig) -> PredictedTrack {
        match self.emv_target(j.id) {
            Some(target) if j.is_emv() => predict_emv(j, target, horizon, config),
            _ => predict_const(j, horizon),
        }
    }

    pub fn has_emv(&self) -> bool {
        self.neighbors.iter().any(|s| s.is_emv())
    }
}
