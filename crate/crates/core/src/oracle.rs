//! Exhaustive centralized optimum for tiny instances, and the numerical
//! coordination bound used to sanity-check the distributed method.
//!
//! The search is a depth-first branch and bound over joint OV successor
//! choices, tick by tick. EMVs follow their driving policy, recomputed from
//! their own view in every branch. Pruning uses partial-assignment safety,
//! the accumulated cost plus a speed-recovery lower bound against the
//! incumbent, and a transposition table keyed by `(tick, joint state)`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::domain::{mean_initial_ov_speed, validate_scenario, Rational, Scenario, VehicleId, VehicleState};
use crate::engine::{emv_policy, ChangeCounts, TrajectoryRow};
use crate::error::{Error, Result};
use crate::prediction::{LocalView, SpatialIndex};
use crate::safety::{is_safe, successors};
use crate::strategy::DecisionContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleStatus {
    Optimal,
    Infeasible,
    BudgetExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub status: OracleStatus,
    /// Best objective found; exact when the status is optimal.
    pub optimal_f_prime: Option<f64>,
    pub counts: Option<ChangeCounts>,
    /// Joint states from tick 0 to the final tick of the best plan.
    pub trajectory: Vec<Vec<VehicleState>>,
    pub node_count: u64,
    /// Tick at which the plan ends.
    pub end_tick: u32,
}

type Key = (u32, Vec<(u32, i32, i32, i32)>);

struct Search<'a> {
    scenario: &'a Scenario,
    ctx: DecisionContext<'a>,
    end_tick: u32,
    budget: u64,
    nodes: u64,
    exceeded: bool,
    best: f64,
    best_counts: Option<ChangeCounts>,
    best_path: Vec<Vec<VehicleState>>,
    path: Vec<Vec<VehicleState>>,
    seen: HashMap<Key, f64>,
}

/// Tick at which the run stops: the horizon, or the tick the last EMV leaves
/// when runs stop on EMV exit. EMV speed profiles do not depend on lanes, so
/// this is the same in every branch.
pub fn planned_end_tick(scenario: &Scenario) -> u32 {
    let config = &scenario.config;
    let emvs: Vec<&VehicleState> = scenario.vehicles.iter().filter(|v| v.is_emv()).collect();
    if !config.stop_when_emvs_exit || emvs.is_empty() {
        return config.horizon;
    }
    let mut last = 0u32;
    for m in emvs {
        let (mut cell, mut speed, mut t) = (m.cell, m.speed, 0u32);
        while cell <= scenario.grid.cell_count && t < config.horizon {
            cell += speed;
            speed = (speed + config.accel_max).min(config.v_max);
            t += 1;
        }
        last = last.max(t);
    }
    last.min(config.horizon)
}

impl<'a> Search<'a> {
    fn floor_level(&self, s: &VehicleState) -> i32 {
        let f = self.ctx.speed_floor(s);
        f.ceil().to_integer() as i32
    }

    /// Cost still needed to lift every OV back to its speed floor.
    fn recovery_bound(&self, states: &[VehicleState]) -> f64 {
        let c1 = self.scenario.config.c1;
        states
            .iter()
            .filter(|s| s.is_ov())
            .map(|s| c1 * f64::from((self.floor_level(s) - s.speed).max(0)))
            .sum()
    }

    fn terminal_ok(&self, states: &[VehicleState]) -> bool {
        states
            .iter()
            .filter(|s| s.is_ov())
            .all(|s| Rational::from_integer(i64::from(s.speed)) >= self.ctx.speed_floor(s))
    }

    fn speed_reachable(&self, states: &[VehicleState], ticks_left: u32) -> bool {
        let gain = self.scenario.config.accel_max * ticks_left as i32;
        states
            .iter()
            .filter(|s| s.is_ov())
            .all(|s| s.speed + gain >= self.floor_level(s))
    }

    fn expand(&mut self, tick: u32, states: Vec<VehicleState>, acc: f64, counts: ChangeCounts) {
        if self.exceeded {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exceeded = true;
            return;
        }
        self.path.push(states.clone());
        self.expand_inner(tick, &states, acc, counts);
        self.path.pop();
    }

    fn expand_inner(&mut self, tick: u32, states: &[VehicleState], acc: f64, counts: ChangeCounts) {
        if tick == self.end_tick {
            if self.terminal_ok(states) && acc < self.best {
                self.best = acc;
                self.best_counts = Some(counts);
                self.best_path = self.path.clone();
            }
            return;
        }
        if acc + self.recovery_bound(states) >= self.best || !self.speed_reachable(states, self.end_tick - tick) {
            return;
        }
        let key: Key = (tick, states.iter().map(|s| (s.id.0, s.cell, s.lane, s.speed)).collect());
        match self.seen.get(&key) {
            Some(&prev) if prev <= acc => return,
            _ => {
                self.seen.insert(key, acc);
            }
        }

        let grid = self.ctx.grid;
        let config = self.ctx.config;
        let index = SpatialIndex::new(states);
        let mut fixed: Vec<VehicleState> = Vec::new();
        let mut tick_counts = ChangeCounts::default();
        for m in states.iter().filter(|s| s.is_emv()) {
            let view = LocalView::build(m, &index, grid, config);
            let next = emv_policy(m, &view, config);
            tick_counts.record(m, &next, grid);
            fixed.push(next);
        }
        let on_road = |s: &VehicleState| s.cell <= grid.cell_count;
        for (k, a) in fixed.iter().enumerate() {
            if fixed[k + 1..].iter().any(|b| on_road(a) && on_road(b) && !is_safe(a, b)) {
                return;
            }
        }

        let ovs: Vec<&VehicleState> = states.iter().filter(|s| s.is_ov()).collect();
        let options: Vec<Vec<(VehicleState, ChangeCounts)>> = ovs
            .iter()
            .map(|cur| {
                let mut opts: Vec<(VehicleState, ChangeCounts)> = successors(cur, grid, config)
                    .into_iter()
                    .map(|n| {
                        let mut c = ChangeCounts::default();
                        c.record(cur, &n, grid);
                        (n, c)
                    })
                    .collect();
                opts.sort_by(|(a, ca), (b, cb)| {
                    ca.cost(config)
                        .total_cmp(&cb.cost(config))
                        .then((a.lane != cur.lane).cmp(&(b.lane != cur.lane)))
                        .then((a.lane, a.speed).cmp(&(b.lane, b.speed)))
                });
                opts
            })
            .collect();
        let base = acc + tick_counts.cost(config);
        let mut combined = counts;
        combined.add(&tick_counts);
        let mut chosen: Vec<VehicleState> = Vec::with_capacity(ovs.len());
        self.assign(tick, &options, 0, &fixed, &mut chosen, base, combined);
    }

    #[allow(clippy::too_many_arguments)]
    fn assign(
        &mut self,
        tick: u32,
        options: &[Vec<(VehicleState, ChangeCounts)>],
        k: usize,
        fixed: &[VehicleState],
        chosen: &mut Vec<VehicleState>,
        acc: f64,
        counts: ChangeCounts,
    ) {
        if self.exceeded {
            return;
        }
        let grid = self.ctx.grid;
        let config = self.ctx.config;
        if k == options.len() {
            let mut next: Vec<VehicleState> = fixed
                .iter()
                .chain(chosen.iter())
                .filter(|s| s.cell <= grid.cell_count)
                .copied()
                .collect();
            next.sort_by_key(|s| s.id);
            self.expand(tick + 1, next, acc, counts);
            return;
        }
        for (cand, c) in &options[k] {
            let step = c.cost(config);
            // Options are sorted by cost, so nothing later can do better.
            if acc + step >= self.best {
                break;
            }
            let on_road = cand.cell <= grid.cell_count;
            if on_road
                && fixed
                    .iter()
                    .chain(chosen.iter())
                    .any(|o| o.cell <= grid.cell_count && !is_safe(cand, o))
            {
                continue;
            }
            let mut total = counts;
            total.add(c);
            chosen.push(*cand);
            self.assign(tick, options, k + 1, fixed, chosen, acc + step, total);
            chosen.pop();
        }
    }
}

/// Minimum objective over all joint OV plans satisfying pairwise safety at
/// every tick and the terminal speed rule. `budget` caps the number of joint
/// states expanded.
pub fn enumerate_optimal(scenario: &Scenario, budget: u64) -> Result<OracleResult> {
    validate_scenario(scenario).map_err(Error::Validation)?;
    let mean = mean_initial_ov_speed(scenario).ok();
    let ctx = DecisionContext::new(&scenario.grid, &scenario.config, mean);
    let end_tick = planned_end_tick(scenario);
    let mut start: Vec<VehicleState> = scenario.vehicles.clone();
    start.sort_by_key(|s| s.id);

    let mut search = Search {
        scenario,
        ctx,
        end_tick,
        budget,
        nodes: 0,
        exceeded: false,
        best: f64::INFINITY,
        best_counts: None,
        best_path: Vec::new(),
        path: Vec::new(),
        seen: HashMap::new(),
    };
    search.expand(0, start, 0.0, ChangeCounts::default());

    let found = search.best.is_finite();
    let status = match (search.exceeded, found) {
        (true, _) => OracleStatus::BudgetExceeded,
        (false, true) => OracleStatus::Optimal,
        (false, false) => OracleStatus::Infeasible,
    };
    Ok(OracleResult {
        status,
        optimal_f_prime: found.then_some(search.best),
        counts: search.best_counts,
        trajectory: search.best_path,
        node_count: search.nodes,
        end_tick,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanCheck {
    pub feasible: bool,
    pub cost: f64,
    pub counts: ChangeCounts,
    /// First rule the plan breaks, if any.
    pub reason: Option<String>,
}

/// Checks a joint plan against the rules the oracle enforces: successor
/// moves, EMV policy, pairwise safety at every tick, the planned end tick and
/// the terminal speed rule. Exiting vehicles may be absent from later ticks.
pub fn check_plan(scenario: &Scenario, plan: &[BTreeMap<VehicleId, VehicleState>]) -> PlanCheck {
    let grid = &scenario.grid;
    let config = &scenario.config;
    let mean = mean_initial_ov_speed(scenario).ok();
    let ctx = DecisionContext::new(grid, config, mean);
    let initial: BTreeMap<VehicleId, &VehicleState> = scenario.vehicles.iter().map(|v| (v.id, v)).collect();
    let mut counts = ChangeCounts::default();
    let fail = |counts: ChangeCounts, why: String| PlanCheck {
        feasible: false,
        cost: counts.cost(config),
        counts,
        reason: Some(why),
    };
    if plan.len() as u32 != planned_end_tick(scenario) + 1 {
        return fail(
            counts,
            format!("plan covers {} ticks, expected {}", plan.len().saturating_sub(1), planned_end_tick(scenario)),
        );
    }

    for (t, states) in plan.iter().enumerate() {
        let list: Vec<&VehicleState> = states.values().collect();
        for (k, a) in list.iter().enumerate() {
            if let Some(b) = list[k + 1..].iter().find(|b| !is_safe(a, b)) {
                return fail(counts, format!("tick {t}: vehicles {} and {} unsafe", a.id, b.id));
            }
        }
        let Some(next) = plan.get(t + 1) else { break };
        let owned: Vec<VehicleState> = states.values().copied().collect();
        let index = SpatialIndex::new(&owned);
        for cur in states.values() {
            // Restore the starting speed, which the trajectory rows lose.
            let cur = VehicleState {
                initial_speed: initial[&cur.id].initial_speed,
                ..*cur
            };
            let expected = if cur.is_emv() {
                let view = LocalView::build(&cur, &index, grid, config);
                Some(emv_policy(&cur, &view, config))
            } else {
                None
            };
            match next.get(&cur.id) {
                Some(n) => {
                    let moved = VehicleState {
                        cooperating: cur.cooperating,
                        initial_speed: cur.initial_speed,
                        ..*n
                    };
                    if let Some(e) = expected {
                        if (e.cell, e.lane, e.speed) != (n.cell, n.lane, n.speed) {
                            return fail(counts, format!("tick {t}: EMV {} deviates from its policy", cur.id));
                        }
                    } else if !successors(&cur, grid, config).contains(&moved) {
                        return fail(counts, format!("tick {t}: vehicle {} makes an infeasible move", cur.id));
                    }
                    counts.record(&cur, &moved, grid);
                }
                None => {
                    if cur.cell + cur.speed <= grid.cell_count {
                        return fail(counts, format!("tick {t}: vehicle {} vanished on the segment", cur.id));
                    }
                }
            }
        }
    }
    if let Some(last) = plan.last() {
        for s in last.values().filter(|s| s.is_ov()) {
            let s0 = VehicleState {
                initial_speed: initial[&s.id].initial_speed,
                ..*s
            };
            if Rational::from_integer(i64::from(s.speed)) < ctx.speed_floor(&s0) {
                return fail(counts, format!("vehicle {} ends below its speed floor", s.id));
            }
        }
    }
    PlanCheck {
        feasible: true,
        cost: counts.cost(config),
        counts,
        reason: None,
    }
}

/// Groups trajectory rows into per-tick joint states for ticks
/// `0..=end_tick`. Ticks after every vehicle has left are empty.
pub fn plan_from_rows(rows: &[TrajectoryRow], end_tick: u32) -> Vec<BTreeMap<VehicleId, VehicleState>> {
    let mut by_tick: Vec<BTreeMap<VehicleId, VehicleState>> = vec![BTreeMap::new(); end_tick as usize + 1];
    for r in rows.iter().filter(|r| r.tick <= end_tick) {
        by_tick[r.tick as usize].insert(
            r.id,
            VehicleState {
                id: r.id,
                class: r.class,
                cell: r.i,
                lane: r.l,
                speed: r.v,
                cooperating: false,
                initial_speed: r.v,
            },
        );
    }
    by_tick
}

/// `Σ κ_k v_k / Σ κ_k`.
pub fn coord_minimizer(kappas: &[f64], speeds: &[f64]) -> Result<f64> {
    if kappas.is_empty() || kappas.len() != speeds.len() {
        return Err(Error::Empty("weights and speeds must be non-empty and of equal length"));
    }
    if kappas.iter().any(|k| !(*k > 0.0)) {
        return Err(Error::Contract("weights must be positive".into()));
    }
    let total: f64 = kappas.iter().sum();
    Ok(kappas.iter().zip(speeds).map(|(k, v)| k * v).sum::<f64>() / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordBound {
    pub deviation: f64,
    pub bound: f64,
    pub holds: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Distance between the weighted minimiser and the plain mean, against the
/// bound `(σ_κ / μ_κ) σ_v` with population standard deviations.
pub fn coord_bound_check(kappas: &[f64], speeds: &[f64]) -> Result<CoordBound> {
    let minimizer = coord_minimizer(kappas, speeds)?;
    let deviation = (minimizer - mean(speeds)).abs();
    let bound = population_std(kappas) / mean(kappas) * population_std(speeds);
    let scale = speeds.iter().fold(bound.max(1.0), |m, v| m.max(v.abs()));
    Ok(CoordBound {
        deviation,
        bound,
        holds: deviation <= bound + 1e-12 * scale,
    })
}
