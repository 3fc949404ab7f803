//! Conflict coalitions: grouping vehicles whose candidate next states
//! conflict, ordering them by priority, and re-planning members in that order
//! until the coalition is conflict-free or cannot grow any further.
//!
//! Each coalition is resolved by one pure function call. The member with the
//! highest-priority OV slot is recorded as the central vehicle and is the
//! sender of the resulting assignment messages.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::domain::{VehicleClass, VehicleId, VehicleState};
use crate::error::{Error, Result};
use crate::prediction::LocalView;
use crate::rng::{Purpose, TickStreams};
use crate::safety::is_safe;
use crate::strategy::{feasible_count, select_candidate, CandidateDecision, DecisionContext};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coalition {
    /// Vehicle that initiated the coalition.
    pub seed: VehicleId,
    /// Ascending ids.
    pub members: Vec<VehicleId>,
    /// Largest size the coalition may reach: the seed plus its neighbours.
    pub capacity: usize,
}

impl Coalition {
    pub fn contains(&self, id: VehicleId) -> bool {
        self.members.binary_search(&id).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn conflicts(a: &CandidateDecision, b: &CandidateDecision) -> bool {
    !is_safe(&a.state, &b.state)
}

/// Closure of candidate conflicts starting from `n`, restricted to `pool`.
/// Growth stops at `capacity`.
pub fn build_coalition_in(
    n: VehicleId,
    candidates: &BTreeMap<VehicleId, CandidateDecision>,
    pool: &[VehicleId],
    capacity: usize,
) -> Coalition {
    let mut members = BTreeSet::from([n]);
    let mut queue = VecDeque::from([n]);
    'grow: while let Some(m) = queue.pop_front() {
        let Some(cm) = candidates.get(&m) else { continue };
        for &j in pool {
            if members.len() >= capacity {
                break 'grow;
            }
            if members.contains(&j) {
                continue;
            }
            if let Some(cj) = candidates.get(&j) {
                if conflicts(cm, cj) {
                    members.insert(j);
                    queue.push_back(j);
                }
            }
        }
    }
    Coalition {
        seed: n,
        members: members.into_iter().collect(),
        capacity,
    }
}

/// Coalition of `view.observer` over its communication set.
pub fn build_coalition(
    n: VehicleId,
    candidates: &BTreeMap<VehicleId, CandidateDecision>,
    view: &LocalView,
) -> Coalition {
    let pool: Vec<VehicleId> = view.neighbors.iter().map(|s| s.id).collect();
    build_coalition_in(n, candidates, &pool, view.neighbors.len() + 1)
}

/// EMVs first, then OVs by ascending `feasible_count + ε` with
/// `ε ~ U(-0.5, 0.5)` drawn per vehicle.
pub fn priority_order(
    members: &[(VehicleId, VehicleClass, usize)],
    streams: &TickStreams,
    salt: u32,
) -> Vec<VehicleId> {
    let mut keyed: Vec<(u8, f64, VehicleId)> = members
        .iter()
        .map(|&(id, class, count)| match class {
            VehicleClass::Emv => (0, 0.0, id),
            VehicleClass::Ov => {
                let eps: f64 = streams.rng(id, Purpose::Priority, salt).gen_range(-0.5..0.5);
                (1, count as f64 + eps, id)
            }
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    keyed.into_iter().map(|(_, _, id)| id).collect()
}

/// Outside vehicle with the smallest summed grid distance to the members;
/// ties go to the smaller id.
pub fn nearest_outside(members: &[VehicleState], outside: &[VehicleState]) -> Option<VehicleId> {
    outside
        .iter()
        .map(|o| {
            let d: i64 = members
                .iter()
                .map(|m| i64::from((o.cell - m.cell).abs() + (o.lane - m.lane).abs()))
                .sum();
            (d, o.id)
        })
        .min()
        .map(|(_, id)| id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub central: VehicleId,
    /// Final membership, ascending, including vehicles added by expansion.
    pub members: Vec<VehicleId>,
    pub priority: Vec<VehicleId>,
    pub assignment: BTreeMap<VehicleId, VehicleState>,
    /// Conflicting pairs left in the adopted pass (members against members
    /// and against outside candidates).
    pub conflicts: usize,
    pub passes: u32,
    /// Members whose adopted state carries the penalty term.
    pub penalized: BTreeSet<VehicleId>,
}

fn state_of(
    id: VehicleId,
    views: &BTreeMap<VehicleId, LocalView>,
    candidates: &BTreeMap<VehicleId, CandidateDecision>,
) -> Option<VehicleState> {
    views.get(&id).map(|v| v.observer).or_else(|| candidates.get(&id).map(|c| c.state))
}

/// Re-plans the coalition in priority order. EMVs keep their policy states;
/// each OV re-selects around the outside neighbours' candidates and the
/// states already assigned to higher-priority members. Remaining conflicts
/// pull in the nearest outside vehicle and the pass repeats; at capacity the
/// pass with the fewest conflicting pairs is adopted.
pub fn resolve(
    coalition: &Coalition,
    views: &BTreeMap<VehicleId, LocalView>,
    candidates: &BTreeMap<VehicleId, CandidateDecision>,
    ctx: &DecisionContext,
    streams: &TickStreams,
) -> Resolution {
    let mut members: BTreeSet<VehicleId> = coalition.members.iter().copied().collect();
    let mut best: Option<Resolution> = None;
    let mut pass = 0u32;

    loop {
        let outside_of = |id: VehicleId, members: &BTreeSet<VehicleId>| -> Vec<VehicleState> {
            views
                .get(&id)
                .map(|v| {
                    v.neighbors
                        .iter()
                        .filter(|s| !members.contains(&s.id))
                        .map(|s| *v.predict(s, 1, ctx.config).at(1))
                        .collect()
                })
                .unwrap_or_default()
        };

        let keyed: Vec<(VehicleId, VehicleClass, usize)> = members
            .iter()
            .filter_map(|&id| {
                let view = views.get(&id)?;
                let cur = view.observer;
                let count = if cur.is_ov() {
                    feasible_count(&cur, view, &outside_of(id, &members), ctx)
                } else {
                    0
                };
                Some((id, cur.class, count))
            })
            .collect();
        let priority = priority_order(&keyed, streams, pass);
        let central = priority
            .iter()
            .copied()
            .find(|id| views.get(id).is_some_and(|v| v.observer.is_ov()))
            .unwrap_or(coalition.seed);

        let mut assignment: BTreeMap<VehicleId, VehicleState> = BTreeMap::new();
        let mut penalized = BTreeSet::new();
        for &id in &priority {
            let view = &views[&id];
            let cur = view.observer;
            if cur.is_emv() {
                assignment.insert(id, candidates[&id].state);
                continue;
            }
            let mut obstacles = outside_of(id, &members);
            obstacles.extend(assignment.values().copied());
            let mut rng = streams.rng(id, Purpose::Resolve, pass);
            let d = select_candidate(&cur, view, &obstacles, ctx, &mut rng);
            if d.penalized {
                penalized.insert(id);
            }
            assignment.insert(id, d.state);
        }

        let conflicts = count_conflicts(&assignment, &members, views, candidates);
        let result = Resolution {
            central,
            members: members.iter().copied().collect(),
            priority,
            assignment,
            conflicts,
            passes: pass + 1,
            penalized,
        };
        let done = conflicts == 0 || members.len() >= coalition.capacity;
        let better = best.as_ref().is_none_or(|b| result.conflicts < b.conflicts);
        if better {
            best = Some(result);
        }
        if done {
            break;
        }

        let inside: Vec<VehicleState> = members
            .iter()
            .filter_map(|&id| state_of(id, views, candidates))
            .collect();
        let outside: Vec<VehicleState> = views
            .get(&coalition.seed)
            .map(|v| v.neighbors.iter().filter(|s| !members.contains(&s.id)).copied().collect())
            .unwrap_or_default();
        match nearest_outside(&inside, &outside) {
            Some(next) if views.contains_key(&next) && candidates.contains_key(&next) => {
                members.insert(next);
            }
            _ => break,
        }
        pass += 1;
    }

    let mut best = best.expect("at least one pass runs");
    best.passes = pass + 1;
    best
}

fn count_conflicts(
    assignment: &BTreeMap<VehicleId, VehicleState>,
    members: &BTreeSet<VehicleId>,
    views: &BTreeMap<VehicleId, LocalView>,
    candidates: &BTreeMap<VehicleId, CandidateDecision>,
) -> usize {
    let mut pairs = BTreeSet::new();
    let assigned: Vec<&VehicleState> = assignment.values().collect();
    for (k, a) in assigned.iter().enumerate() {
        for b in &assigned[k + 1..] {
            if !is_safe(a, b) {
                pairs.insert((a.id.min(b.id), a.id.max(b.id)));
            }
        }
        if let Some(view) = views.get(&a.id) {
            for s in view.neighbors.iter().filter(|s| !members.contains(&s.id)) {
                if let Some(c) = candidates.get(&s.id) {
                    if !is_safe(a, &c.state) {
                        pairs.insert((a.id.min(s.id), a.id.max(s.id)));
                    }
                }
            }
        }
    }
    pairs.len()
}

/// Protocol messages exchanged during one tick, one line each in the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    StateAnnounce {
        tick: u32,
        id: VehicleId,
        i: i32,
        l: i32,
        v: i32,
        class: VehicleClass,
        cooperating: bool,
    },
    Candidate {
        tick: u32,
        id: VehicleId,
        i: i32,
        l: i32,
        v: i32,
        feasible_count: usize,
    },
    CoalitionAssign {
        tick: u32,
        central: VehicleId,
        member: VehicleId,
        i: i32,
        l: i32,
        v: i32,
    },
}

impl Message {
    pub fn announce(tick: u32, s: &VehicleState) -> Self {
        Message::StateAnnounce {
            tick,
            id: s.id,
            i: s.cell,
            l: s.lane,
            v: s.speed,
            class: s.class,
            cooperating: s.cooperating,
        }
    }

    pub fn candidate(tick: u32, d: &CandidateDecision) -> Self {
        Message::Candidate {
            tick,
            id: d.owner,
            i: d.state.cell,
            l: d.state.lane,
            v: d.state.speed,
            feasible_count: d.feasible_count,
        }
    }

    pub fn assign(tick: u32, central: VehicleId, s: &VehicleState) -> Self {
        Message::CoalitionAssign {
            tick,
            central,
            member: s.id,
            i: s.cell,
            l: s.lane,
            v: s.speed,
        }
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::StateAnnounce {
                tick,
                id,
                i,
                l,
                v,
                class,
                cooperating,
            } => write!(
                f,
                "StateAnnounce tick={tick} id={id} i={i} l={l} v={v} class={class} cooperating={}",
                u8::from(*cooperating)
            ),
            Message::Candidate {
                tick,
                id,
                i,
                l,
                v,
                feasible_count,
            } => write!(
                f,
                "Candidate tick={tick} id={id} i={i} l={l} v={v} feasible_count={feasible_count}"
            ),
            Message::CoalitionAssign {
                tick,
                central,
                member,
                i,
                l,
                v,
            } => write!(
                f,
                "CoalitionAssign tick={tick} central={central} member={member} i={i} l={l} v={v}"
            ),
        }
    }
}

impl FromStr for Message {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace();
        let kind = parts.next().ok_or_else(|| Error::Parse("empty message".into()))?;
        let fields: Vec<(&str, &str)> = parts
            .map(|p| p.split_once('=').ok_or_else(|| Error::Parse(format!("bad field {p:?}"))))
            .collect::<Result<_>>()?;
        let expect: &[&str] = match kind {
            "StateAnnounce" => &["tick", "id", "i", "l", "v", "class", "cooperating"],
            "Candidate" => &["tick", "id", "i", "l", "v", "feasible_count"],
            "CoalitionAssign" => &["tick", "central", "member", "i", "l", "v"],
            other => return Err(Error::Parse(format!("unknown message kind {other:?}"))),
        };
        let names: Vec<&str> = fields.iter().map(|(k, _)| *k).collect();
        if names != expect {
            return Err(Error::Parse(format!("{kind} fields {names:?}, expected {expect:?}")));
        }
        let int = |k: usize| -> Result<i64> {
            fields[k]
                .1
                .parse::<i64>()
                .map_err(|e| Error::Parse(format!("{}: {e}", fields[k].0)))
        };
        let id = |k: usize| -> Result<VehicleId> { Ok(VehicleId(int(k)? as u32)) };
        Ok(match kind {
            "StateAnnounce" => Message::StateAnnounce {
                tick: int(0)? as u32,
                id: id(1)?,
                i: int(2)? as i32,
                l: int(3)? as i32,
                v: int(4)? as i32,
                class: fields[5].1.parse()?,
                cooperating: int(6)? != 0,
            },
            "Candidate" => Message::Candidate {
                tick: int(0)? as u32,
                id: id(1)?,
                i: int(2)? as i32,
                l: int(3)? as i32,
                v: int(4)? as i32,
                feasible_count: int(5)? as usize,
            },
            _ => Message::CoalitionAssign {
                tick: int(0)? as u32,
                central: id(1)?,
                member: id(2)?,
                i: int(3)? as i32,
                l: int(4)? as i32,
                v: int(5)? as i32,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GridSpec, Rational, ScenarioConfig};
    use crate::prediction::SpatialIndex;
    use crate::safety::successors;
    use proptest::prelude::*;

    fn cand(s: VehicleState) -> CandidateDecision {
        CandidateDecision::fixed(s)
    }

    fn cmap(states: &[(VehicleState, VehicleState)]) -> BTreeMap<VehicleId, CandidateDecision> {
        states.iter().map(|(_, next)| (next.id, cand(*next))).collect()
    }

    fn views_of(all: &[VehicleState], grid: &GridSpec, config: &ScenarioConfig) -> BTreeMap<VehicleId, LocalView> {
        let index = SpatialIndex::new(all);
        all.iter()
            .map(|s| (s.id, LocalView::build(s, &index, grid, config)))
            .collect()
    }

    #[test]
    fn no_conflicts_gives_singleton() {
        let a = VehicleState::ov(0, 10, 1, 2);
        let b = VehicleState::ov(1, 20, 1, 2);
        let c = cmap(&[(a, a.maintained()), (b, b.maintained())]);
        let co = build_coalition_in(a.id, &c, &[b.id], 2);
        assert_eq!(co.members, vec![a.id]);
    }

    #[test]
    fn transitive_chain() {
        // Candidate states: k (9, v2) and n (10, v2) are safe together, but
        // both are too close behind j (11, v0).
        let n = VehicleState::ov(0, 10, 1, 2);
        let j = VehicleState::ov(1, 11, 1, 0);
        let k = VehicleState::ov(2, 9, 1, 2);
        assert!(is_safe(&n, &k) && !is_safe(&n, &j) && !is_safe(&j, &k));
        let far = VehicleState::ov(3, 40, 1, 2);
        let c: BTreeMap<_, _> = [n, j, k, far].iter().map(|s| (s.id, cand(*s))).collect();
        let pool = [j.id, k.id, far.id];
        let co = build_coalition_in(n.id, &c, &pool, 4);
        assert_eq!(co.members, vec![n.id, j.id, k.id]);
        // Capacity caps growth.
        assert_eq!(build_coalition_in(n.id, &c, &pool, 2).len(), 2);
    }

    #[test]
    fn priority_examples() {
        let s = TickStreams::new(3, 1);
        let a = VehicleId(0);
        let b = VehicleId(1);
        let m = VehicleId(9);
        for salt in 0..20 {
            let order = priority_order(&[(a, VehicleClass::Ov, 2), (b, VehicleClass::Ov, 5)], &s, salt);
            assert_eq!(order, vec![a, b]);
            let order = priority_order(
                &[(a, VehicleClass::Ov, 0), (b, VehicleClass::Ov, 5), (m, VehicleClass::Emv, 9)],
                &s,
                salt,
            );
            assert_eq!(order[0], m);
        }
        let tied = [(a, VehicleClass::Ov, 3), (b, VehicleClass::Ov, 3)];
        let mut firsts = BTreeSet::new();
        for seed in 0..30 {
            let s = TickStreams::new(seed, 0);
            let o1 = priority_order(&tied, &s, 0);
            assert_eq!(o1, priority_order(&tied, &s, 0));
            firsts.insert(o1[0]);
        }
        assert_eq!(firsts.len(), 2);
    }

    #[test]
    fn nearest_outside_examples() {
        let m = [VehicleState::ov(0, 10, 1, 0)];
        let x = VehicleState::ov(5, 17, 1, 0);
        let y = VehicleState::ov(3, 22, 1, 0);
        assert_eq!(nearest_outside(&m, &[y]), Some(y.id));
        assert_eq!(nearest_outside(&m, &[x, y]), Some(x.id));
        let x2 = VehicleState::ov(4, 3, 1, 0);
        assert_eq!(nearest_outside(&m, &[x, x2]), Some(x2.id));
        assert_eq!(nearest_outside(&m, &[]), None);
    }

    fn pairwise_safe(states: &[VehicleState]) -> bool {
        states
            .iter()
            .enumerate()
            .all(|(k, a)| states[k + 1..].iter().all(|b| is_safe(a, b)))
    }

    #[test]
    fn two_ovs_into_the_same_cell() {
        let grid = GridSpec::new(100, 3);
        let config = ScenarioConfig::default();
        let ctx = DecisionContext::new(&grid, &config, Some(Rational::from_integer(2)));
        let a = VehicleState::ov(0, 10, 1, 2);
        let b = VehicleState::ov(1, 10, 3, 2);
        // A slow leader in lane 3 leaves b fewer safe options.
        let slow = VehicleState::ov(2, 13, 3, 0);
        let all = [a, b, slow];
        let views = views_of(&all, &grid, &config);
        let mut c = BTreeMap::new();
        c.insert(a.id, cand(a.advanced(2, 2)));
        c.insert(b.id, cand(b.advanced(2, 2)));
        c.insert(slow.id, cand(slow.maintained()));

        // Independent check: a conflict-free pair exists among the two
        // vehicles' successor sets.
        let exists = successors(&a, &grid, &config).iter().any(|x| {
            successors(&b, &grid, &config)
                .iter()
                .any(|y| is_safe(x, y) && is_safe(x, &slow.maintained()) && is_safe(y, &slow.maintained()))
        });
        assert!(exists);

        let co = build_coalition(a.id, &c, &views[&a.id]);
        assert_eq!(co.members, vec![a.id, b.id]);
        let r = resolve(&co, &views, &c, &ctx, &TickStreams::new(0, 0));
        assert_eq!(r.conflicts, 0);
        let states: Vec<VehicleState> = r.assignment.values().copied().chain([slow.maintained()]).collect();
        assert!(pairwise_safe(&states));
        assert!(r.priority.len() >= 2);
    }

    #[test]
    fn emv_keeps_policy_state() {
        let grid = GridSpec::new(100, 3);
        let config = ScenarioConfig::default();
        let ctx = DecisionContext::new(&grid, &config, Some(Rational::from_integer(1)));
        let m = VehicleState::emv(0, 5, 2, 4);
        let n = VehicleState::ov(1, 10, 2, 1);
        let all = [m, n];
        let views = views_of(&all, &grid, &config);
        let policy = m.advanced(5, 2);
        let c: BTreeMap<_, _> = [(m.id, cand(policy)), (n.id, cand(n.maintained()))].into();
        let co = build_coalition(n.id, &c, &views[&n.id]);
        assert!(co.contains(m.id));
        let r = resolve(&co, &views, &c, &ctx, &TickStreams::new(0, 0));
        assert_eq!(r.assignment[&m.id], policy);
        assert_eq!(r.priority[0], m.id);
        assert_eq!(r.central, n.id);
        assert!(is_safe(&r.assignment[&n.id], &policy));
        assert_eq!(r.conflicts, 0);
    }

    #[test]
    fn boxed_in_pair_reports_minimum_conflicts() {
        // Two lanes. The EMV closes on a stopped OV in lane 1; lane 2 is
        // blocked at the OV's cell. The EMV prefers lane 1 (lane 2 is
        // denser) so no plan avoids one conflicting pair.
        let grid = GridSpec::new(30, 2);
        let config = ScenarioConfig::default();
        let ctx = DecisionContext::new(&grid, &config, Some(Rational::from_integer(0)));
        let m = VehicleState::emv(0, 1, 1, 4);
        let a = VehicleState::ov(1, 7, 1, 0);
        let b = VehicleState::ov(2, 7, 2, 0);
        let d = VehicleState::ov(3, 9, 2, 0);
        let all = [m, a, b, d];
        let views = views_of(&all, &grid, &config);
        assert_eq!(views[&m.id].emv_target(m.id), Some(1));
        let policy = m.advanced(5, 1);
        let mut c: BTreeMap<_, _> = [a, b, d].iter().map(|s| (s.id, cand(s.maintained()))).collect();
        c.insert(m.id, cand(policy));

        // Brute-force the fewest conflicting pairs over all joint OV plans.
        let sa = successors(&a, &grid, &config);
        let sb = successors(&b, &grid, &config);
        let sd = successors(&d, &grid, &config);
        let mut fewest = usize::MAX;
        for x in &sa {
            for y in &sb {
                for z in &sd {
                    let st = [policy, *x, *y, *z];
                    let bad = (0..4)
                        .flat_map(|i| (i + 1..4).map(move |j| (i, j)))
                        .filter(|&(i, j)| !is_safe(&st[i], &st[j]))
                        .count();
                    fewest = fewest.min(bad);
                }
            }
        }
        assert_eq!(fewest, 1);

        let co = build_coalition(a.id, &c, &views[&a.id]);
        let r = resolve(&co, &views, &c, &ctx, &TickStreams::new(0, 0));
        assert_eq!(r.conflicts, fewest);
        assert_eq!(r.assignment[&m.id], policy);
        // Expansion ran to capacity, one member per extra pass.
        assert_eq!(r.passes as usize, co.capacity - co.len() + 1);
    }

    #[test]
    fn message_lines_round_trip() {
        let s = VehicleState {
            cooperating: true,
            ..VehicleState::ov(12, 40, 2, 4)
        };
        let msgs = [
            Message::announce(3, &s),
            Message::candidate(
                3,
                &CandidateDecision {
                    feasible_count: 5,
                    ..CandidateDecision::maintain(&s)
                },
            ),
            Message::assign(3, VehicleId(12), &VehicleState::ov(13, 44, 2, 4)),
        ];
        let lines: Vec<String> = msgs.iter().map(ToString::to_string).collect();
        assert_eq!(lines[0], "StateAnnounce tick=3 id=12 i=40 l=2 v=4 class=OV cooperating=1");
        assert_eq!(lines[1], "Candidate tick=3 id=12 i=44 l=2 v=4 feasible_count=5");
        assert_eq!(lines[2], "CoalitionAssign tick=3 central=12 member=13 i=44 l=2 v=4");
        for (m, line) in msgs.iter().zip(&lines) {
            assert_eq!(&line.parse::<Message>().unwrap(), m);
        }
        assert!("Candidate tick=3 i=1".parse::<Message>().is_err());
        assert!("Bogus".parse::<Message>().is_err());
    }

    // Connected components of the conflict graph via union-find, used as an
    // independent reference for the closure.
    fn components(states: &[VehicleState]) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..states.len()).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        for i in 0..states.len() {
            for j in i + 1..states.len() {
                if !is_safe(&states[i], &states[j]) {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri] = rj;
                }
            }
        }
        (0..states.len()).map(|i| find(&mut parent, i)).collect()
    }

    fn arb_candidates() -> impl Strategy<Value = Vec<VehicleState>> {
        prop::collection::vec((1..15i32, 1..4i32, 0..4i32), 2..10).prop_map(|raw| {
            raw.into_iter()
                .enumerate()
                .map(|(k, (c, l, v))| VehicleState::ov(k as u32, c, l, v))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn closure_matches_components(states in arb_candidates()) {
            let c: BTreeMap<_, _> = states.iter().map(|s| (s.id, cand(*s))).collect();
            let ids: Vec<VehicleId> = states.iter().map(|s| s.id).collect();
            let comp = components(&states);
            for (k, s) in states.iter().enumerate() {
                let co = build_coalition_in(s.id, &c, &ids, ids.len());
                let expected: Vec<VehicleId> = (0..states.len())
                    .filter(|&j| comp[j] == comp[k])
                    .map(|j| states[j].id)
                    .collect();
                prop_assert_eq!(&co.members, &expected);
                // Same set from every member of the component.
                for &other in &co.members {
                    prop_assert_eq!(&build_coalition_in(other, &c, &ids, ids.len()).members, &co.members);
                }
            }
        }

        #[test]
        fn resolve_keeps_emvs_and_reports_conflicts(
            raw in prop::collection::vec((1..25i32, 1..4i32, 0..6i32), 2..8),
            emv_lane in 1..4i32,
            seed in 0..50u64,
        ) {
            let grid = GridSpec::new(60, 3);
            let config = ScenarioConfig::default();
            let ctx = DecisionContext::new(&grid, &config, Some(Rational::from_integer(2)));
            let emv = VehicleState::emv(100, 1, emv_lane, 3);
            let mut all = vec![emv];
            for (k, (c, l, v)) in raw.into_iter().enumerate() {
                let s = VehicleState::ov(k as u32, c + 2, l, v);
                if all.iter().all(|o| is_safe(o, &s)) {
                    all.push(s);
                }
            }
            prop_assume!(all.len() >= 2);
            let views = views_of(&all, &grid, &config);
            let streams = TickStreams::new(seed, 0);
            let mut c: BTreeMap<_, _> = BTreeMap::new();
            for s in &all {
                let d = if s.is_emv() {
                    let target = views[&s.id].emv_target(s.id).unwrap();
                    cand(crate::prediction::emv_step(s, target, &config))
                } else {
                    // Greedy candidates from a shared tie stream create conflicts.
                    let mut r = streams.rng(s.id, Purpose::TieBreak, 0);
                    select_candidate(s, &views[&s.id], &[], &ctx, &mut r)
                };
                c.insert(s.id, d);
            }
            for s in all.iter().filter(|s| s.is_ov()) {
                let co = build_coalition(s.id, &c, &views[&s.id]);
                prop_assert!(co.len() <= co.capacity);
                if co.len() < 2 { continue; }
                let r = resolve(&co, &views, &c, &ctx, &streams);
                if let Some(st) = r.assignment.get(&emv.id) {
                    prop_assert_eq!(*st, c[&emv.id].state);
                }
                prop_assert!(views[&r.central].observer.is_ov());
                if r.conflicts == 0 {
                    let mut merged: BTreeMap<VehicleId, VehicleState> =
                        views[&co.seed].neighbors.iter().map(|n| (n.id, c[&n.id].state)).collect();
                    merged.insert(co.seed, c[&co.seed].state);
                    for (id, st) in &r.assignment { merged.insert(*id, *st); }
                    for id in &r.members {
                        let a = merged[id];
                        for n in &views[id].neighbors {
                            prop_assert!(is_safe(&a, &merged.get(&n.id).copied().unwrap_or(c[&n.id].state)));
                        }
                    }
                }
            }
        }
    }
}
