//! Influence judgment: does some neighbour's forecast collide with this OV's
//! constant-motion forecast, and does this OV deviate more from its lane's
//! mean speed than that neighbour does?
//!
//! Platoon members all check against the platoon's head or tail, so an
//! external threat influences the whole platoon at once.

use crate::domain::{rational_abs, ScenarioConfig, VehicleId, VehicleState};
use crate::prediction::{predict_const, prediction_horizon, LocalView};
use crate::safety::is_safe;

/// Maximal same-lane, same-speed chain of OVs around one vehicle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Platoon {
    /// Ordered by increasing cell (tail first).
    pub members: Vec<VehicleId>,
    pub lane: i32,
    pub speed: i32,
    pub head: VehicleState,
    pub tail: VehicleState,
}

impl Platoon {
    pub fn singleton(n: &VehicleState) -> Self {
        Platoon {
            members: vec![n.id],
            lane: n.lane,
            speed: n.speed,
            head: *n,
            tail: *n,
        }
    }

    pub fn contains(&self, id: VehicleId) -> bool {
        self.members.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Grows the chain through `n` in both directions, one nearest same-lane,
/// same-speed OV at a time, while successive gaps stay within `platoon_gap`.
pub fn find_platoon(n: &VehicleState, neighbors: &[VehicleState], config: &ScenarioConfig) -> Platoon {
    if !n.is_ov() {
        return Platoon::singleton(n);
    }
    let mates: Vec<&VehicleState> = neighbors
        .iter()
        .filter(|s| s.is_ov() && s.lane == n.lane && s.speed == n.speed && s.id != n.id)
        .collect();
    let gap = config.platoon_gap;

    let mut behind = Vec::new();
    let mut cur = *n;
    while let Some(next) = mates
        .iter()
        .filter(|s| s.cell < cur.cell && cur.cell - s.cell <= gap)
        .max_by_key(|s| s.cell)
    {
        behind.push(**next);
        cur = **next;
    }
    let mut ahead = Vec::new();
    cur = *n;
    while let Some(next) = mates
        .iter()
        .filter(|s| s.cell > cur.cell && s.cell - cur.cell <= gap)
        .min_by_key(|s| s.cell)
    {
        ahead.push(**next);
        cur = **next;
    }

    let tail = behind.last().copied().unwrap_or(*n);
    let head = ahead.last().copied().unwrap_or(*n);
    let members = behind
        .iter()
        .rev()
        .map(|s| s.id)
        .chain(std::iter::once(n.id))
        .chain(ahead.iter().map(|s| s.id))
        .collect();
    Platoon {
        members,
        lane: n.lane,
        speed: n.speed,
        head,
        tail,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InfluenceResult {
    pub influenced: bool,
    pub trigger: Option<VehicleId>,
    pub trigger_is_emv: bool,
    pub violation_tau: Option<u32>,
}

/// Influence judgment for the view's observer (an OV).
///
/// EMV neighbours are examined before OV neighbours, each group by id, and
/// the first neighbour satisfying both conditions is reported as the trigger.
/// Members of the observer's own platoon are not candidate triggers.
pub fn is_influenced(view: &LocalView, platoon: &Platoon, config: &ScenarioConfig) -> InfluenceResult {
    let n = &view.observer;
    let lane_mean = view.lane_mean(n.lane);
    let deviation = |speed: i32| rational_abs(lane_mean - i64::from(speed));
    let own_deviation = deviation(n.speed);

    let ordered = view
        .neighbors
        .iter()
        .filter(|s| s.is_emv())
        .chain(view.neighbors.iter().filter(|s| s.is_ov()));
    for j in ordered {
        if platoon.contains(j.id) {
            continue;
        }
        // Condition 2 is cheap, test it first.
        if own_deviation <= deviation(j.speed) {
            continue;
        }
        let horizon = prediction_horizon(j, n, config);
        let check = if j.cell < platoon.tail.cell {
            &platoon.tail
        } else {
            &platoon.head
        };
        let theirs = view.predict(j, horizon, config);
        let ours = predict_const(check, horizon);
        if let Some(tau) = (1..=horizon).find(|&tau| !is_safe(ours.at(tau), theirs.at(tau))) {
            return InfluenceResult {
                influenced: true,
                trigger: Some(j.id),
                trigger_is_emv: j.is_emv(),
                violation_tau: Some(tau),
            };
        }
    }
    InfluenceResult::default()
}
