//! Safety predicates on discrete states.
//!
//! The mixed-integer formulation spaces vehicles along a one-dimensional
//! coordinate `d = i + M1 (l - 1)` with big-M ordering indicators. At run time
//! only the operational meaning matters: two vehicles in different lanes never
//! constrain each other, and a same-lane follower must trail its leader by at
//! least `v_follower - v_leader + 1` cells so that advancing both by their
//! current speeds keeps them strictly ordered.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::domain::{GridSpec, ScenarioConfig, VehicleId, VehicleState};

/// `M2` of the big-M encoding, `3 I`. Only the oracle documentation refers to
/// it; runtime checks use the big-M-free predicate.
pub fn big_m2(grid: &GridSpec) -> i64 {
    3 * i64::from(grid.cell_count)
}

/// One-dimensional coordinate `i + M1 (l - 1)` with `M1 = I`.
pub fn one_d_coordinate(state: &VehicleState, grid: &GridSpec) -> i64 {
    i64::from(state.cell) + i64::from(grid.cell_count) * i64::from(state.lane - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SafetyVerdict {
    pub ok: bool,
    /// `(follower, leader)` for ordered same-lane pairs, otherwise the ids in
    /// ascending order.
    pub pair: (VehicleId, VehicleId),
    pub required_gap: i32,
    pub actual_gap: i32,
}

pub fn safety_ok(a: &VehicleState, b: &VehicleState) -> SafetyVerdict {
    let sorted = if a.id <= b.id { (a.id, b.id) } else { (b.id, a.id) };
    if a.lane != b.lane {
        return SafetyVerdict {
            ok: true,
            pair: sorted,
            required_gap: 0,
            actual_gap: (a.cell - b.cell).abs(),
        };
    }
    if a.cell == b.cell {
        return SafetyVerdict {
            ok: false,
            pair: sorted,
            required_gap: ((a.speed - b.speed).abs() + 1).max(1),
            actual_gap: 0,
        };
    }
    let (follower, leader) = if a.cell < b.cell { (a, b) } else { (b, a) };
    let required_gap = follower.speed - leader.speed + 1;
    let actual_gap = leader.cell - follower.cell;
    SafetyVerdict {
        ok: actual_gap >= required_gap,
        pair: (follower.id, leader.id),
        required_gap,
        actual_gap,
    }
}

/// Allocation-free form of [`safety_ok`]`.ok`.
#[inline]
pub fn is_safe(a: &VehicleState, b: &VehicleState) -> bool {
    if a.lane != b.lane {
        return true;
    }
    match a.cell.cmp(&b.cell) {
        std::cmp::Ordering::Less => b.cell - a.cell > a.speed - b.speed,
        std::cmp::Ordering::Greater => a.cell - b.cell > b.speed - a.speed,
        std::cmp::Ordering::Equal => false,
    }
}

/// Feasible next states: position advances by the current speed, speed moves
/// within the acceleration limits, lane moves by at most one. Ordered by
/// `(lane, speed)`.
pub fn successors(
    state: &VehicleState,
    grid: &GridSpec,
    config: &ScenarioConfig,
) -> Vec<VehicleState> {
    let v_lo = (state.speed - config.decel_max).max(0);
    let v_hi = (state.speed + config.accel_max).min(config.v_max);
    let l_lo = (state.lane - 1).max(1);
    let l_hi = (state.lane + 1).min(grid.lane_count);
    let mut out = Vec::with_capacity(((l_hi - l_lo + 1) * (v_hi - v_lo + 1)).max(0) as usize);
    for lane in l_lo..=l_hi {
        for speed in v_lo..=v_hi {
            out.push(state.advanced(speed, lane));
        }
    }
    out
}

/// Vehicles involved in a collision between two consecutive ticks: two
/// vehicles in the same cell at `next`, or a same-lane pair whose order along
/// the lane flipped between `prev` and `next`. Vehicles absent from either map
/// (exited) are ignored.
pub fn detect_collisions(
    prev: &BTreeMap<VehicleId, VehicleState>,
    next: &BTreeMap<VehicleId, VehicleState>,
) -> BTreeSet<VehicleId> {
    let mut hit = BTreeSet::new();

    let mut occupancy: HashMap<(i32, i32), VehicleId> = HashMap::with_capacity(next.len());
    for s in next.values() {
        if let Some(other) = occupancy.insert((s.cell, s.lane), s.id) {
            hit.insert(other);
            hit.insert(s.id);
        }
    }

    let mut lanes: BTreeMap<i32, Vec<(&VehicleState, &VehicleState)>> = BTreeMap::new();
    let mut max_speed = 0;
    for (id, p) in prev {
        if let Some(n) = next.get(id) {
            if p.lane == n.lane {
                lanes.entry(p.lane).or_default().push((p, n));
                max_speed = max_speed.max(p.speed);
            }
        }
    }
    for pairs in lanes.values_mut() {
        pairs.sort_by_key(|(p, _)| (p.cell, p.id));
        for a in 0..pairs.len() {
            let (pa, na) = pairs[a];
            for &(pb, nb) in &pairs[a + 1..] {
                // Positions advance by at most `max_speed`, so only pairs that
                // started close can swap.
                if pb.cell - pa.cell > max_speed {
                    break;
                }
                if pa.cell < pb.cell && na.cell > nb.cell {
                    hit.insert(pa.id);
                    hit.insert(pb.id);
                }
            }
        }
    }
    hit
}
