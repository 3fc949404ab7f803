//! Tick loop: views, influence judgment, candidate exchange, coalition
//! resolution and a simultaneous commit, plus the run driver and metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::baseline;
use crate::coalition::{build_coalition_in, resolve, Message};
use crate::domain::{
    mean_initial_ov_speed, validate_scenario, GridSpec, Rational, Scenario, ScenarioConfig, VehicleClass,
    VehicleId, VehicleState,
};
use crate::error::{Error, Result};
use crate::influence::{find_platoon, is_influenced};
use crate::prediction::{emv_step, LocalView, SpatialIndex};
use crate::rng::{Purpose, TickStreams};
use crate::safety::{detect_collisions, is_safe};
use crate::strategy::{predicted_obstacles, select_candidate, CandidateDecision, DecisionContext};

/// Upper bound on conflict-resolution rounds per tick. A round rebuilds the
/// coalitions from the merged proposals of the previous round.
pub const MAX_RESOLUTION_ROUNDS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Controller {
    Sdvc,
    Idm,
}

impl Controller {
    pub fn as_str(self) -> &'static str {
        match self {
            Controller::Sdvc => "sdvc",
            Controller::Idm => "idm",
        }
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Controller {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdvc" => Ok(Controller::Sdvc),
            "idm" => Ok(Controller::Idm),
            other => Err(Error::Parse(format!("unknown controller {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u32,
    pub vehicles: BTreeMap<VehicleId, VehicleState>,
    /// Exit tick of every vehicle that has left the segment.
    pub exited: BTreeMap<VehicleId, u32>,
}

impl WorldState {
    pub fn initial(scenario: &Scenario) -> Self {
        WorldState {
            tick: 0,
            vehicles: scenario.vehicles.iter().map(|v| (v.id, *v)).collect(),
            exited: BTreeMap::new(),
        }
    }

    pub fn emvs_remaining(&self) -> usize {
        self.vehicles.values().filter(|v| v.is_emv()).count()
    }
}

/// Next state of an EMV: full acceleration and one lane step toward the
/// least-dense lane of its own view.
pub fn emv_policy(m: &VehicleState, view: &LocalView, config: &ScenarioConfig) -> VehicleState {
    let target = view.emv_target(m.id).unwrap_or(m.lane);
    emv_step(m, target, config)
}

/// Everything recorded about one tick's decision.
#[derive(Debug, Clone, Default)]
pub struct TickLog {
    pub tick: u32,
    pub messages: Vec<Message>,
    pub influenced: BTreeSet<VehicleId>,
    /// Central vehicle of the coalition each vehicle was resolved in.
    pub coalition_of: BTreeMap<VehicleId, VehicleId>,
    /// Conflicting pairs left among the committed states.
    pub unresolved_conflicts: usize,
    /// OVs whose committed state carries the penalty term.
    pub penalized: BTreeSet<VehicleId>,
    pub resolution_rounds: u32,
    pub decision_time: Duration,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: WorldState,
    /// Decided next state of every vehicle, including those leaving.
    pub decided: BTreeMap<VehicleId, VehicleState>,
    pub log: TickLog,
}

/// Applies the decided states simultaneously; vehicles beyond the last cell
/// leave the segment.
pub(crate) fn commit(world: &WorldState, decided: &BTreeMap<VehicleId, VehicleState>, grid: &GridSpec) -> WorldState {
    let next_tick = world.tick + 1;
    let mut exited = world.exited.clone();
    let mut vehicles = BTreeMap::new();
    for (id, s) in decided {
        if s.cell > grid.cell_count {
            exited.insert(*id, next_tick);
        } else {
            vehicles.insert(*id, *s);
        }
    }
    WorldState {
        tick: next_tick,
        vehicles,
        exited,
    }
}

/// Conflicting pairs among `states` that stay on the segment.
pub fn count_unsafe_pairs<'a>(states: impl IntoIterator<Item = &'a VehicleState>, grid: &GridSpec, v_max: i32) -> usize {
    let mut on_road: Vec<&VehicleState> = states.into_iter().filter(|s| s.cell <= grid.cell_count).collect();
    on_road.sort_by_key(|s| (s.lane, s.cell, s.id));
    let mut count = 0;
    for (k, a) in on_road.iter().enumerate() {
        for b in &on_road[k + 1..] {
            // Required gaps never exceed v_max + 1.
            if b.lane != a.lane || b.cell - a.cell > v_max + 1 {
                break;
            }
            if !is_safe(a, b) {
                count += 1;
            }
        }
    }
    count
}

fn build_views(world: &WorldState, grid: &GridSpec, config: &ScenarioConfig) -> BTreeMap<VehicleId, LocalView> {
    let index = SpatialIndex::new(world.vehicles.values());
    world
        .vehicles
        .values()
        .map(|s| (s.id, LocalView::build(s, &index, grid, config)))
        .collect()
}

/// One cooperative tick.
pub fn step(world: &WorldState, scenario: &Scenario, mean_ov_speed: Option<Rational>) -> StepOutcome {
    let started = Instant::now();
    let grid = &scenario.grid;
    let config = &scenario.config;
    let ctx = DecisionContext::new(grid, config, mean_ov_speed);
    let streams = TickStreams::new(config.seed, u64::from(world.tick));
    let tick = world.tick;
    let mut log = TickLog {
        tick,
        ..TickLog::default()
    };

    // Phase 1: announce, EMV policy, influence judgment and selection.
    let views = build_views(world, grid, config);
    log.messages
        .extend(world.vehicles.values().map(|s| Message::announce(tick, s)));
    let mut proposals: BTreeMap<VehicleId, CandidateDecision> = BTreeMap::new();
    let mut emv_trigger: BTreeSet<VehicleId> = BTreeSet::new();
    for (id, view) in &views {
        let cur = &view.observer;
        let decision = if cur.is_emv() {
            CandidateDecision::fixed(emv_policy(cur, view, config))
        } else {
            let platoon = find_platoon(cur, &view.neighbors, config);
            let influence = is_influenced(view, &platoon, config);
            if influence.influenced {
                log.influenced.insert(*id);
                if influence.trigger_is_emv {
                    emv_trigger.insert(*id);
                }
                let obstacles = predicted_obstacles(view, &platoon, config);
                let mut rng = streams.rng(*id, Purpose::TieBreak, 0);
                select_candidate(cur, view, &obstacles, &ctx, &mut rng)
            } else {
                CandidateDecision::maintain(cur)
            }
        };
        proposals.insert(*id, decision);
    }

    // Phase 2: candidate exchange.
    log.messages
        .extend(proposals.values().map(|d| Message::candidate(tick, d)));

    // Phase 3: coalitions, resolved per round against the previous round's
    // merged proposals.
    let mut emv_in_coalition: BTreeSet<VehicleId> = BTreeSet::new();
    for round in 0..MAX_RESOLUTION_ROUNDS {
        let mut claimed: BTreeSet<VehicleId> = BTreeSet::new();
        let mut coalitions = Vec::new();
        for (id, view) in &views {
            if !view.observer.is_ov() || claimed.contains(id) {
                continue;
            }
            let pool: Vec<VehicleId> = view
                .neighbors
                .iter()
                .filter(|s| s.is_emv() || !claimed.contains(&s.id))
                .map(|s| s.id)
                .collect();
            let co = build_coalition_in(*id, &proposals, &pool, view.neighbors.len() + 1);
            if co.len() < 2 {
                continue;
            }
            for m in &co.members {
                if views[m].observer.is_ov() {
                    claimed.insert(*m);
                }
            }
            coalitions.push(co);
        }
        if coalitions.is_empty() {
            break;
        }
        log.resolution_rounds = round + 1;
        let round_streams = streams.with_round(round);
        let resolutions: Vec<_> = coalitions
            .iter()
            .map(|co| resolve(co, &views, &proposals, &ctx, &round_streams))
            .collect();
        let mut changed = false;
        for r in &resolutions {
            let has_emv = r.members.iter().any(|m| views[m].observer.is_emv());
            for (id, state) in &r.assignment {
                log.coalition_of.insert(*id, r.central);
                log.messages.push(Message::assign(tick, r.central, state));
                if views[id].observer.is_emv() {
                    continue;
                }
                if has_emv {
                    emv_in_coalition.insert(*id);
                }
                let entry = proposals.get_mut(id).expect("every vehicle has a proposal");
                if entry.state != *state {
                    changed = true;
                    entry.state = *state;
                }
                entry.penalized = r.penalized.contains(id);
            }
        }
        if !changed {
            break;
        }
    }

    log.penalized = proposals
        .values()
        .filter(|d| d.penalized)
        .map(|d| d.owner)
        .collect();
    log.unresolved_conflicts = count_unsafe_pairs(proposals.values().map(|d| &d.state), grid, config.v_max);

    // Cooperation flag for the next tick.
    let decided: BTreeMap<VehicleId, VehicleState> = proposals
        .iter()
        .map(|(id, d)| {
            let view = &views[id];
            let mut s = d.state;
            s.cooperating = s.is_ov()
                && (emv_trigger.contains(id) || emv_in_coalition.contains(id) || view.observer.cooperating)
                && view.has_emv();
            (*id, s)
        })
        .collect();
    log.decision_time = started.elapsed();

    StepOutcome {
        next: commit(world, &decided, grid),
        decided,
        log,
    }
}

/// Per-tick changes counted by the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeCounts {
    /// Speed levels changed by OVs.
    pub ov_speed_changes: u64,
    pub ov_lane_changes: u64,
    pub emv_lane_changes: u64,
}

impl ChangeCounts {
    /// Adds one vehicle's transition; transitions that leave the segment are
    /// not counted.
    pub fn record(&mut self, cur: &VehicleState, next: &VehicleState, grid: &GridSpec) {
        if next.cell > grid.cell_count {
            return;
        }
        let dv = u64::from((next.speed - cur.speed).unsigned_abs());
        let dl = u64::from((next.lane - cur.lane).unsigned_abs());
        match cur.class {
            VehicleClass::Ov => {
                self.ov_speed_changes += dv;
                self.ov_lane_changes += dl;
            }
            VehicleClass::Emv => self.emv_lane_changes += dl,
        }
    }

    pub fn add(&mut self, other: &ChangeCounts) {
        self.ov_speed_changes += other.ov_speed_changes;
        self.ov_lane_changes += other.ov_lane_changes;
        self.emv_lane_changes += other.emv_lane_changes;
    }

    pub fn cost(&self, config: &ScenarioConfig) -> f64 {
        config.c1 * self.ov_speed_changes as f64
            + config.c2 * self.emv_lane_changes as f64
            + config.c3 * self.ov_lane_changes as f64
    }
}

/// Deterministic run metrics. Wall-clock figures live in [`RunTiming`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub controller: Controller,
    pub seed: u64,
    pub ticks: u32,
    pub vehicle_count: usize,
    pub emv_count: usize,
    /// Total longitudinal progress of all EMVs in cells.
    pub f: i64,
    pub f_prime: f64,
    pub ov_speed_changes: u64,
    pub ov_lane_changes: u64,
    pub emv_lane_changes: u64,
    pub collision_ids: BTreeSet<VehicleId>,
    pub collision_rate: f64,
    /// Tick at which each EMV left the segment.
    pub emv_exit_ticks: BTreeMap<VehicleId, u32>,
    /// OVs present at the end below `min(v⁰, V̄_OV)`.
    pub terminal_speed_violations: BTreeSet<VehicleId>,
    /// Ticks whose committed states still contained a conflicting pair.
    pub conflict_ticks: u32,
    pub unresolved_conflicts: u64,
    pub influenced_decisions: u64,
    pub penalized_decisions: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    /// Decision phase wall time per tick, in milliseconds.
    pub decision_ms: Vec<f64>,
    /// Active vehicles per tick.
    pub active: Vec<usize>,
    pub total_ms: f64,
}

impl RunTiming {
    /// Mean decision time per vehicle per tick, in microseconds.
    pub fn per_vehicle_us(&self) -> f64 {
        let ms: f64 = self.decision_ms.iter().sum();
        let n: usize = self.active.iter().sum();
        if n == 0 {
            0.0
        } else {
            ms * 1000.0 / n as f64
        }
    }

    pub fn max_tick_ms(&self) -> f64 {
        self.decision_ms.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub tick: u32,
    pub id: VehicleId,
    pub class: VehicleClass,
    pub i: i32,
    pub l: i32,
    pub v: i32,
    pub influenced: bool,
    pub coalition: Option<VehicleId>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    /// Sorted by `(tick, id)`.
    pub trajectory: Vec<TrajectoryRow>,
    pub log: Vec<Message>,
    pub timing: RunTiming,
}

fn rows_for<'a>(world: &'a WorldState, log: Option<&'a TickLog>) -> impl Iterator<Item = TrajectoryRow> + 'a {
    let tick = world.tick;
    let influenced = log.map(|l| &l.influenced);
    let coalition = log.map(|l| &l.coalition_of);
    world.vehicles.values().map(move |s| TrajectoryRow {
        tick,
        id: s.id,
        class: s.class,
        i: s.cell,
        l: s.lane,
        v: s.speed,
        influenced: influenced.is_some_and(|x| x.contains(&s.id)),
        coalition: coalition.and_then(|x| x.get(&s.id).copied()),
    })
}

/// Runs `scenario` until the horizon or, when configured, until every EMV has
/// left the segment.
pub fn run(scenario: &Scenario, controller: Controller) -> Result<RunOutput> {
    validate_scenario(scenario).map_err(Error::Validation)?;
    let started = Instant::now();
    let grid = &scenario.grid;
    let config = &scenario.config;
    let mean_ov = mean_initial_ov_speed(scenario).ok();
    let emv_count = scenario.emv_count();

    let mut world = WorldState::initial(scenario);
    let mut trajectory = Vec::new();
    let mut messages = Vec::new();
    let mut timing = RunTiming::default();
    let mut counts = ChangeCounts::default();
    let mut collisions = BTreeSet::new();
    let mut f = 0i64;
    let mut conflict_ticks = 0u32;
    let mut unresolved = 0u64;
    let mut influenced = 0u64;
    let mut penalized = 0u64;

    while world.tick < config.horizon {
        if config.stop_when_emvs_exit && emv_count > 0 && world.emvs_remaining() == 0 {
            break;
        }
        let outcome = match controller {
            Controller::Sdvc => step(&world, scenario, mean_ov),
            Controller::Idm => baseline::baseline_step(&world, scenario),
        };
        trajectory.extend(rows_for(&world, Some(&outcome.log)));
        for (id, cur) in &world.vehicles {
            let next = &outcome.decided[id];
            counts.record(cur, next, grid);
            if cur.is_emv() {
                f += i64::from(next.cell - cur.cell);
            }
        }
        collisions.extend(detect_collisions(&world.vehicles, &outcome.next.vehicles));
        if outcome.log.unresolved_conflicts > 0 {
            conflict_ticks += 1;
        }
        unresolved += outcome.log.unresolved_conflicts as u64;
        influenced += outcome.log.influenced.len() as u64;
        penalized += outcome.log.penalized.len() as u64;
        timing.decision_ms.push(outcome.log.decision_time.as_secs_f64() * 1000.0);
        timing.active.push(world.vehicles.len());
        messages.extend(outcome.log.messages);
        world = outcome.next;
    }
    trajectory.extend(rows_for(&world, None));

    let ctx = DecisionContext::new(grid, config, mean_ov);
    let terminal_speed_violations = world
        .vehicles
        .values()
        .filter(|s| s.is_ov() && Rational::from_integer(i64::from(s.speed)) < ctx.speed_floor(s))
        .map(|s| s.id)
        .collect();
    let emv_exit_ticks = world
        .exited
        .iter()
        .filter(|(id, _)| scenario.vehicles.iter().any(|v| v.id == **id && v.is_emv()))
        .map(|(id, t)| (*id, *t))
        .collect();

    let vehicle_count = scenario.vehicles.len();
    let metrics = RunMetrics {
        controller,
        seed: config.seed,
        ticks: world.tick,
        vehicle_count,
        emv_count,
        f,
        f_prime: counts.cost(config),
        ov_speed_changes: counts.ov_speed_changes,
        ov_lane_changes: counts.ov_lane_changes,
        emv_lane_changes: counts.emv_lane_changes,
        collision_rate: if vehicle_count == 0 {
            0.0
        } else {
            collisions.len() as f64 / vehicle_count as f64
        },
        collision_ids: collisions,
        emv_exit_ticks,
        terminal_speed_violations,
        conflict_ticks,
        unresolved_conflicts: unresolved,
        influenced_decisions: influenced,
        penalized_decisions: penalized,
    };
    timing.total_ms = started.elapsed().as_secs_f64() * 1000.0;
    Ok(RunOutput {
        metrics,
        trajectory,
        log: messages,
        timing,
    })
}

/// Figures recomputable from a trajectory table alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub ticks: u32,
    pub f: i64,
    pub f_prime: f64,
    pub counts: ChangeCounts,
    pub collision_ids: BTreeSet<VehicleId>,
    pub emv_exit_ticks: BTreeMap<VehicleId, u32>,
}

/// Recomputes the objective, EMV progress and collisions from trajectory
/// rows sorted by `(tick, id)`. A run whose last vehicles all leave ends on
/// a tick without rows; that tick follows from the stopping rule.
pub fn metrics_from_trajectory(rows: &[TrajectoryRow], grid: &GridSpec, config: &ScenarioConfig) -> TrajectoryMetrics {
    let mut by_tick: BTreeMap<u32, BTreeMap<VehicleId, VehicleState>> = BTreeMap::new();
    for r in rows {
        let s = VehicleState {
            id: r.id,
            class: r.class,
            cell: r.i,
            lane: r.l,
            speed: r.v,
            cooperating: false,
            initial_speed: r.v,
        };
        by_tick.entry(r.tick).or_default().insert(r.id, s);
    }
    let mut last_tick = by_tick.keys().next_back().copied().unwrap_or(0);
    let emptied = by_tick
        .values()
        .next_back()
        .is_some_and(|last| !last.is_empty() && last.values().all(|s| s.cell + s.speed > grid.cell_count));
    let has_emv = |f: Option<&BTreeMap<VehicleId, VehicleState>>| f.is_some_and(|f| f.values().any(|s| s.is_emv()));
    let stops_on_exit = config.stop_when_emvs_exit && has_emv(by_tick.values().next());
    if emptied && last_tick < config.horizon && (!stops_on_exit || has_emv(by_tick.values().next_back())) {
        last_tick = if stops_on_exit { last_tick + 1 } else { config.horizon };
        by_tick.insert(last_tick, BTreeMap::new());
    }
    let mut counts = ChangeCounts::default();
    let mut collisions = BTreeSet::new();
    let mut f = 0i64;
    let mut exits = BTreeMap::new();
    let unbounded = GridSpec::new(i32::MAX, 1);
    let ticks: Vec<&BTreeMap<VehicleId, VehicleState>> = by_tick.values().collect();
    let tick_ids: Vec<u32> = by_tick.keys().copied().collect();
    for (k, cur) in ticks.iter().enumerate() {
        let Some(next) = ticks.get(k + 1) else { break };
        for (id, c) in cur.iter() {
            match next.get(id) {
                Some(n) => {
                    counts.record(c, n, &unbounded);
                    if c.is_emv() {
                        f += i64::from(n.cell - c.cell);
                    }
                }
                None => {
                    if c.is_emv() {
                        f += i64::from(c.speed);
                        exits.insert(*id, tick_ids[k + 1]);
                    }
                }
            }
        }
        collisions.extend(detect_collisions(cur, next));
    }
    TrajectoryMetrics {
        ticks: last_tick,
        f,
        f_prime: counts.cost(config),
        counts,
        collision_ids: collisions,
        emv_exit_ticks: exits,
    }
}
