//! Strategy function over an OV's feasible successors and candidate choice.

use num_rational::Ratio;
use rand::Rng;

use crate::domain::{rational_abs, GridSpec, Rational, ScenarioConfig, VehicleId, VehicleState};
use crate::error::{Error, Result};
use crate::influence::Platoon;
use crate::prediction::LocalView;
use crate::safety::{is_safe, successors};

/// Values within this distance of the minimum count as ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Scenario-wide inputs every decision needs.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub grid: &'a GridSpec,
    pub config: &'a ScenarioConfig,
    /// `V̄_OV`; `None` when the scenario has no OVs.
    pub mean_ov_speed: Option<Rational>,
}

impl<'a> DecisionContext<'a> {
    pub fn new(grid: &'a GridSpec, config: &'a ScenarioConfig, mean_ov_speed: Option<Rational>) -> Self {
        DecisionContext {
            grid,
            config,
            mean_ov_speed,
        }
    }

    /// `min(v⁰, V̄_OV)`: the speed an OV should not drop below.
    pub fn speed_floor(&self, s: &VehicleState) -> Rational {
        let own = Rational::from_integer(i64::from(s.initial_speed));
        match self.mean_ov_speed {
            Some(mean) => own.min(mean),
            None => own,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyValue {
    pub value: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateDecision {
    pub owner: VehicleId,
    pub state: VehicleState,
    pub value: f64,
    /// Successors with no penalty.
    pub feasible_count: usize,
    pub influenced: bool,
    /// The chosen state carries the penalty term.
    pub penalized: bool,
}

impl CandidateDecision {
    /// Default for vehicles that keep lane and speed without deliberating.
    pub fn maintain(cur: &VehicleState) -> Self {
        CandidateDecision {
            owner: cur.id,
            state: cur.maintained(),
            value: 0.0,
            feasible_count: 0,
            influenced: false,
            penalized: false,
        }
    }

    /// Fixed policy state of an EMV.
    pub fn fixed(state: VehicleState) -> Self {
        CandidateDecision {
            owner: state.id,
            state,
            value: 0.0,
            feasible_count: 0,
            influenced: false,
            penalized: false,
        }
    }
}

/// One-tick forecasts of every neighbour outside the platoon.
pub fn predicted_obstacles(view: &LocalView, platoon: &Platoon, config: &ScenarioConfig) -> Vec<VehicleState> {
    view.neighbors
        .iter()
        .filter(|j| !platoon.contains(j.id))
        .map(|j| *view.predict(j, 1, config).at(1))
        .collect()
}

fn rational_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Evaluates `cand` against explicit obstacle states. `cand` must be a
/// successor of `cur`; see [`strategy_value`] for the checked form.
pub fn evaluate(
    cur: &VehicleState,
    cand: &VehicleState,
    view: &LocalView,
    obstacles: &[VehicleState],
    ctx: &DecisionContext,
) -> StrategyValue {
    let c = ctx.config;
    let f1 = c.c1 * f64::from((cand.speed - cur.speed).abs()) + c.c3 * f64::from((cand.lane - cur.lane).abs());
    let f2 = rational_to_f64(rational_abs(Ratio::from_integer(i64::from(cand.speed)) - view.lane_mean(cand.lane)));
    let unsafe_next = obstacles.iter().any(|o| o.id != cand.id && !is_safe(cand, o));
    let too_slow = Rational::from_integer(i64::from(cand.speed)) < ctx.speed_floor(cur);
    let f3 = unsafe_next || too_slow;
    StrategyValue {
        value: c.w1 * f1 + c.w2 * f2 + if f3 { c.w3 } else { 0.0 },
        f1,
        f2,
        f3,
    }
}

/// Strategy value of `cand` for the view's observer with the platoon
/// excluded from the safety check.
pub fn strategy_value(
    cur: &VehicleState,
    cand: &VehicleState,
    view: &LocalView,
    platoon: &Platoon,
    ctx: &DecisionContext,
) -> Result<StrategyValue> {
    if !successors(cur, ctx.grid, ctx.config).contains(cand) {
        return Err(Error::Contract(format!(
            "state (i={}, l={}, v={}) is not a successor of vehicle {}",
            cand.cell, cand.lane, cand.speed, cur.id
        )));
    }
    let obstacles = predicted_obstacles(view, platoon, ctx.config);
    Ok(evaluate(cur, cand, view, &obstacles, ctx))
}

/// Number of penalty-free successors against `obstacles`.
pub fn feasible_count(
    cur: &VehicleState,
    view: &LocalView,
    obstacles: &[VehicleState],
    ctx: &DecisionContext,
) -> usize {
    successors(cur, ctx.grid, ctx.config)
        .iter()
        .filter(|cand| !evaluate(cur, cand, view, obstacles, ctx).f3)
        .count()
}

/// Minimises the strategy value over all successors of `cur`. Ties prefer
/// keeping the lane; remaining ties are broken uniformly with `rng`.
pub fn select_candidate<R: Rng>(
    cur: &VehicleState,
    view: &LocalView,
    obstacles: &[VehicleState],
    ctx: &DecisionContext,
    rng: &mut R,
) -> CandidateDecision {
    let scored: Vec<(VehicleState, StrategyValue)> = successors(cur, ctx.grid, ctx.config)
        .into_iter()
        .map(|cand| (cand, evaluate(cur, &cand, view, obstacles, ctx)))
        .collect();
    let feasible = scored.iter().filter(|(_, v)| !v.f3).count();
    let best = scored
        .iter()
        .map(|(_, v)| v.value)
        .fold(f64::INFINITY, f64::min);
    let ties: Vec<&(VehicleState, StrategyValue)> = scored
        .iter()
        .filter(|(_, v)| v.value <= best + TIE_TOLERANCE)
        .collect();
    let keep: Vec<_> = ties.iter().copied().filter(|(s, _)| s.lane == cur.lane).collect();
    let pool = if keep.is_empty() { ties } else { keep };
    let pick = if pool.len() == 1 {
        pool[0]
    } else {
        pool[rng.gen_range(0..pool.len())]
    };
    CandidateDecision {
        owner: cur.id,
        state: pick.0,
        value: pick.1.value,
        feasible_count: feasible,
        influenced: true,
        penalized: pick.1.f3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::influence::find_platoon;
    use crate::rng::{Purpose, TickStreams};
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::new(100, 3)
    }

    fn view(n: VehicleState, others: Vec<VehicleState>, config: &ScenarioConfig) -> LocalView {
        LocalView::from_neighbors(n, others, &grid(), config)
    }

    fn rng() -> rand_chacha::ChaCha8Rng {
        TickStreams::new(1, 0).rng(VehicleId(0), Purpose::TieBreak, 0)
    }

    #[test]
    fn maintain_at_lane_mean_scores_zero() {
        let c = ScenarioConfig::default();
        let g = grid();
        let ctx = DecisionContext::new(&g, &c, Some(Rational::from_integer(2)));
        let n = VehicleState::ov(0, 10, 2, 2);
        let v = view(n, vec![VehicleState::ov(1, 40, 2, 2)], &c);
        let p = find_platoon(&n, &v.neighbors, &c);
        let sv = strategy_value(&n, &n.maintained(), &v, &p, &ctx).unwrap();
        assert_eq!(sv.value, 0.0);
        assert!(!sv.f3);
        let obstacles = predicted_obstacles(&v, &p, &c);
        assert_eq!(select_candidate(&n, &v, &obstacles, &ctx, &mut rng()).state, n.maintained());
    }

    #[test]
    fn acceleration_toward_lane_mean() {
        let c = ScenarioConfig::default();
        let g = grid();
        let ctx = DecisionContext::new(&g, &c, Some(Rational::from_integer(2)));
        let n = VehicleState::ov(0, 10, 2, 2);
        // Lane 2 mean (2 + 4) / 2 = 3.
        let v = view(n, vec![VehicleState::ov(1, 60, 2, 4)], &c);
        assert_eq!(v.lane_mean(2), Rational::from_integer(3));
        let p = find_platoon(&n, &v.neighbors, &c);
        let sv = strategy_value(&n, &n.advanced(3, 2), &v, &p, &ctx).unwrap();
        assert_eq!((sv.f1, sv.f2, sv.f3), (1.0, 0.0, false));
        assert_eq!(sv.value, 1.0);
    }

    #[test]
    fn unsafe_candidate_pays_penalty() {
        let c = ScenarioConfig::default();
        let g = grid();
        let ctx = DecisionContext::new(&g, &c, Some(Rational::from_integer(0)));
        let n = VehicleState::ov(0, 10, 2, 2);
        // Neighbour lands on (12, lane 3) next tick.
        let j = VehicleState::ov(1, 11, 3, 1);
        let v = view(n, vec![j], &c);
        let p = find_platoon(&n, &v.neighbors, &c);
        let sv = strategy_value(&n, &n.advanced(2, 3), &v, &p, &ctx).unwrap();
        assert!(sv.f3);
        assert!(sv.value >= 5.0);
    }

    #[test]
    fn non_successor_is_a_contract_error() {
        let c = ScenarioConfig::default();
        let g = grid();
        let ctx = DecisionContext::new(&g, &c, None);
        let n = VehicleState::ov(0, 10, 2, 2);
        let v = view(n, vec![], &c);
        let p = find_platoon(&n, &v.neighbors, &c);
        assert!(strategy_value(&n, &n.advanced(4, 2), &v, &p, &ctx).is_err());
        assert!(strategy_value(&n, &n, &v, &p, &ctx).is_err());
    }

    #[test]
    fn tie_prefers_lane_keeping() {
        // Lane means are equal everywhere, so keeping speed in lane 2 and
        // changing lane have f1 differing by c3; make c3 zero to force a tie.
        let c = ScenarioConfig {
            c3: 0.0,
            ..ScenarioConfig::default()
        };
        let g = grid();
        let ctx = DecisionContext::new(&g, &c, Some(Rational::from_integer(2)));
        let n = VehicleState::ov(0, 10, 2, 2);
        let v = view(n, vec![], &c);
        for seed in 0..20 {
            let mut r = TickStreams::new(seed, 0).rng(n.id, Purpose::TieBreak, 0);
            let d = select_candidate(&n, &v, &[], &ctx, &mut r);
            assert_eq!(d.state, n.maintained());
        }
    }

    #[test]
    fn lane_changing_ties_are_seeded() {
        // Current lane blocked, lanes 1 and 3 equally attractive.
        let c = ScenarioConfig::default();
        let g = grid();
        let ctx = DecisionContext::new(&g, &c, Some(Rational::from_integer(2)));
        let n = VehicleState::ov(0, 10, 2, 2);
        let blocker = VehicleState::ov(1, 12, 2, 0);
        let v = view(n, vec![blocker], &c);
        let p = find_platoon(&n, &v.neighbors, &c);
        let obstacles = predicted_obstacles(&v, &p, &c);
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..40 {
            let streams = TickStreams::new(seed, 3);
            let a = select_candidate(&n, &v, &obstacles, &ctx, &mut streams.rng(n.id, Purpose::TieBreak, 0));
            let b = select_candidate(&n, &v, &obstacles, &ctx, &mut streams.rng(n.id, Purpose::TieBreak, 0));
            assert_eq!(a, b);
            assert_ne!(a.state.lane, 2);
            seen.insert(a.state.lane);
        }
        assert_eq!(seen.len(), 2);
    }

    fn arb_scene() -> impl Strategy<Value = (VehicleState, Vec<VehicleState>)> {
        let n = (5..30i32, 1..4i32, 0..6i32).prop_map(|(c, l, v)| VehicleState::ov(0, c, l, v));
        let others = prop::collection::vec((1..40i32, 1..4i32, 0..6i32, any::<bool>()), 0..8);
        (n, others).prop_map(|(n, raw)| {
            let mut used = std::collections::BTreeSet::from([(n.cell, n.lane)]);
            let mut out = Vec::new();
            for (k, (c, l, v, emv)) in raw.into_iter().enumerate() {
                if used.insert((c, l)) {
                    let id = k as u32 + 1;
                    out.push(if emv { VehicleState::emv(id, c, l, v) } else { VehicleState::ov(id, c, l, v) });
                }
            }
            (n, out)
        })
    }

    proptest! {
        #[test]
        fn weight_scaling_keeps_the_argmin((n, others) in arb_scene(), k in 0.1f64..20.0) {
            let c = ScenarioConfig::default();
            let scaled = ScenarioConfig { w1: c.w1 * k, w2: c.w2 * k, w3: c.w3 * k, ..c.clone() };
            let g = grid();
            let mean = Some(Rational::new(5, 2));
            let v = view(n, others.clone(), &c);
            let p = find_platoon(&n, &v.neighbors, &c);
            let obstacles = predicted_obstacles(&v, &p, &c);
            let a = select_candidate(&n, &v, &obstacles, &DecisionContext::new(&g, &c, mean), &mut rng());
            let vs = view(n, others, &scaled);
            let b = select_candidate(&n, &vs, &obstacles, &DecisionContext::new(&g, &scaled, mean), &mut rng());
            prop_assert_eq!(a.state, b.state);
            prop_assert!((b.value - k * a.value).abs() <= 1e-9 * (1.0 + b.value.abs()));
        }

        #[test]
        fn feasible_count_shrinks_with_more_neighbors((n, others) in arb_scene()) {
            let c = ScenarioConfig::default();
            let g = grid();
            let ctx = DecisionContext::new(&g, &c, Some(Rational::from_integer(1)));
            let full = view(n, others.clone(), &c);
            let lone = Platoon::singleton(&n);
            let all = predicted_obstacles(&full, &lone, &c);
            let fewer = &all[..all.len() / 2];
            // The same view supplies lane means so only the obstacle set varies.
            prop_assert!(feasible_count(&n, &full, &all, &ctx) <= feasible_count(&n, &full, fewer, &ctx));
            let d = select_candidate(&n, &full, &all, &ctx, &mut rng());
            prop_assert!(d.feasible_count <= successors(&n, &g, &c).len());
        }

        #[test]
        fn penalty_gap_matches_measured_terms((n, others) in arb_scene()) {
            let c = ScenarioConfig::default();
            let g = grid();
            let ctx = DecisionContext::new(&g, &c, Some(Rational::from_integer(2)));
            let v = view(n, others, &c);
            let p = find_platoon(&n, &v.neighbors, &c);
            let obstacles = predicted_obstacles(&v, &p, &c);
            let scored: Vec<StrategyValue> = successors(&n, &g, &c)
                .iter()
                .map(|s| evaluate(&n, s, &v, &obstacles, &ctx))
                .collect();
            for bad in scored.iter().filter(|s| s.f3) {
                for good in scored.iter().filter(|s| !s.f3) {
                    let lhs = bad.value - good.value;
                    let rhs = c.w3 + c.w1 * (bad.f1 - good.f1) + c.w2 * (bad.f2 - good.f2);
                    prop_assert!((lhs - rhs).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn zero_value_maintain_is_chosen((n, others) in arb_scene()) {
            let c = ScenarioConfig::default();
            let g = grid();
            let ctx = DecisionContext::new(&g, &c, Some(Rational::from_integer(0)));
            let v = view(n, others, &c);
            let p = find_platoon(&n, &v.neighbors, &c);
            let obstacles = predicted_obstacles(&v, &p, &c);
            let keep = evaluate(&n, &n.maintained(), &v, &obstacles, &ctx);
            prop_assume!(keep.value == 0.0);
            prop_assert_eq!(select_candidate(&n, &v, &obstacles, &ctx, &mut rng()).state, n.maintained());
        }
    }
}
