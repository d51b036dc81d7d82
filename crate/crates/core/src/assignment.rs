//! Joint selection of one action per vehicle with no request served twice.
//!
//! Vehicles that share no candidate request are solved independently. Each
//! group is searched depth-first in vehicle-id order and pruned with the
//! smallest of three upper bounds on the gain the remaining vehicles can add:
//!
//! * every remaining vehicle takes its best action compatible with the
//!   requests already used;
//! * every still-free request collects the best per-request share
//!   `gain / |combo|` of any remaining action containing it;
//! * request prices from the dual of the linear relaxation, plus every
//!   remaining vehicle's best gain net of those prices.
//!
//! A first pass finds the best value `z`. A second pass walks assignments in
//! lexicographic order of their vehicle-ordered combo sequences and returns
//! the first worth at least `z - 1e-9 (1 + |z|)`, so assignments that differ
//! only by floating-point rounding count as ties.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combos::Combo;
use crate::model::{RequestId, Reward, VehicleId};
use crate::rvrp::RoutePlan;

/// Product of action-list sizes accepted by [`solve_assignment_bruteforce`].
pub const BRUTEFORCE_MAX_PRODUCT: u128 = 1_000_000;
/// Search nodes per vehicle group before settling for the best found.
pub const DEFAULT_NODE_LIMIT: u64 = 5_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredAction {
    pub vehicle: VehicleId,
    pub combo: Combo,
    pub plan: RoutePlan,
    pub score: Reward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointAssignment {
    pub choices: BTreeMap<VehicleId, ScoredAction>,
    pub objective: Reward,
    /// False when a node limit cut the search short.
    pub proven_optimal: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum AssignmentError {
    #[error("vehicle {0} has no empty action")]
    MissingEmpty(VehicleId),
    #[error("action list {0} is empty or mixes vehicles")]
    MixedList(usize),
    #[error("vehicle {0} has more than one action list")]
    DuplicateVehicle(VehicleId),
    #[error("vehicle {vehicle} offers unknown request {request}")]
    UnknownRequest { vehicle: VehicleId, request: RequestId },
    #[error("vehicle {0} has a non-finite score")]
    NonFinite(VehicleId),
    #[error("{0} joint choices exceed the brute-force limit")]
    BruteForceGuard(u128),
}

struct Prepared {
    vehicles: Vec<VehicleId>,
    /// Per vehicle: (original action index, request bitset).
    actions: Vec<Vec<(usize, Vec<u64>)>>,
    empty_index: Vec<usize>,
    words: usize,
}

fn prepare(actions: &[Vec<ScoredAction>], requests: &[RequestId]) -> Result<Prepared, AssignmentError> {
    let slot: HashMap<RequestId, usize> = requests.iter().enumerate().map(|(i, r)| (*r, i)).collect();
    let words = requests.len().div_ceil(64).max(1);
    let mut order: Vec<usize> = (0..actions.len()).collect();
    let mut ids = Vec::with_capacity(actions.len());
    for (i, list) in actions.iter().enumerate() {
        let v = list.first().ok_or(AssignmentError::MixedList(i))?.vehicle;
        if list.iter().any(|a| a.vehicle != v) {
            return Err(AssignmentError::MixedList(i));
        }
        ids.push(v);
    }
    order.sort_by_key(|&i| ids[i]);
    for w in order.windows(2) {
        if ids[w[0]] == ids[w[1]] {
            return Err(AssignmentError::DuplicateVehicle(ids[w[0]]));
        }
    }
    let mut prepared = Prepared { vehicles: Vec::new(), actions: Vec::new(), empty_index: Vec::new(), words };
    for &i in &order {
        let v = ids[i];
        let mut empty = None;
        let mut acts = Vec::with_capacity(actions[i].len());
        for (k, a) in actions[i].iter().enumerate() {
            if !a.score.is_finite() {
                return Err(AssignmentError::NonFinite(v));
            }
            let mut bits = vec![0u64; words];
            for r in a.combo.ids() {
                let s = *slot.get(r).ok_or(AssignmentError::UnknownRequest { vehicle: v, request: *r })?;
                bits[s / 64] |= 1 << (s % 64);
            }
            if a.combo.is_empty() && empty.is_none() {
                empty = Some(k);
            }
            acts.push((k, bits));
        }
        prepared.empty_index.push(empty.ok_or(AssignmentError::MissingEmpty(v))?);
        prepared.vehicles.push(v);
        prepared.actions.push(acts);
    }
    Ok(prepared)
}

fn disjoint(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x & y == 0)
}

fn union_into(dst: &mut [u64], src: &[u64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d |= s;
    }
}

fn remove_from(dst: &mut [u64], src: &[u64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d &= !s;
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Vehicle groups (indices into prepared order) connected by shared requests.
fn components(p: &Prepared) -> Vec<Vec<usize>> {
    let n = p.vehicles.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for v in 0..n {
        for (_, bits) in &p.actions[v] {
            for (w, word) in bits.iter().enumerate() {
                let mut x = *word;
                while x != 0 {
                    let b = w * 64 + x.trailing_zeros() as usize;
                    x &= x - 1;
                    match owner.get(&b) {
                        Some(&u) => {
                            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
                            if ru != rv {
                                parent[ru.max(rv)] = ru.min(rv);
                            }
                        }
                        None => {
                            owner.insert(b, v);
                        }
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        let r = find(&mut parent, v);
        groups.entry(r).or_default().push(v);
    }
    groups.into_values().collect()
}

/// Request prices for the vehicles from some depth on, with each action's
/// gain minus the prices of its requests.
struct Prices {
    mu: Vec<f64>,
    /// Indexed by vehicle; empty below the depth the prices were fitted at.
    reduced: Vec<Vec<f64>>,
    /// Action indices by reduced gain descending, then score descending,
    /// then combo.
    order: Vec<Vec<usize>>,
}

fn tolerance(z: f64) -> f64 {
    1e-9 * (1.0 + z.abs())
}

fn has_bit(bits: &[u64], j: usize) -> bool {
    bits[j / 64] >> (j % 64) & 1 == 1
}

struct GroupSearch<'a> {
    scores: Vec<Vec<f64>>,
    combos: Vec<Vec<&'a Combo>>,
    bits: Vec<Vec<Vec<u64>>>,
    /// Action indices sorted by score descending, combo ascending.
    order: Vec<Vec<usize>>,
    /// Action indices sorted by combo ascending, then score descending.
    lex: Vec<Vec<usize>>,
    /// Position of each action in `lex`.
    lex_pos: Vec<Vec<usize>>,
    empty_score: Vec<f64>,
    /// `suffix_empty[d]`: sum of empty scores of vehicles `d..`.
    suffix_empty: Vec<f64>,
    /// `rho[d][j]`: best share of request slot `j` among vehicles `d..`.
    rho: Vec<Vec<f64>>,
    request_slots: Vec<usize>,
    words: usize,
    incumbent: Option<(f64, Vec<usize>)>,
    path: Vec<usize>,
    nodes: u64,
    node_limit: u64,
    exhausted: bool,
}

impl<'a> GroupSearch<'a> {
    fn new(p: &Prepared, actions: &'a [Vec<ScoredAction>], list_of: &[usize], group: &[usize], node_limit: u64) -> Self {
        let m = group.len();
        let mut s = GroupSearch {
            scores: Vec::with_capacity(m),
            combos: Vec::with_capacity(m),
            bits: Vec::with_capacity(m),
            order: Vec::with_capacity(m),
            lex: Vec::with_capacity(m),
            lex_pos: Vec::with_capacity(m),
            empty_score: Vec::with_capacity(m),
            suffix_empty: vec![0.0; m + 1],
            rho: Vec::new(),
            request_slots: Vec::new(),
            words: p.words,
            incumbent: None,
            path: Vec::with_capacity(m),
            nodes: 0,
            node_limit,
            exhausted: false,
        };
        let mut slots = vec![0u64; p.words];
        for &v in group {
            let list = &actions[list_of[v]];
            let scores: Vec<f64> = p.actions[v].iter().map(|(k, _)| list[*k].score).collect();
            let combos: Vec<&Combo> = p.actions[v].iter().map(|(k, _)| &list[*k].combo).collect();
            let bits: Vec<Vec<u64>> = p.actions[v].iter().map(|(_, b)| b.clone()).collect();
            for b in &bits {
                union_into(&mut slots, b);
            }
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| combos[a].cmp(combos[b])));
            let mut lex: Vec<usize> = (0..scores.len()).collect();
            lex.sort_by(|&a, &b| combos[a].cmp(combos[b]).then(scores[b].total_cmp(&scores[a])));
            let mut lex_pos = vec![0; lex.len()];
            for (i, &k) in lex.iter().enumerate() {
                lex_pos[k] = i;
            }
            s.empty_score.push(scores[p.empty_index[v]]);
            s.scores.push(scores);
            s.combos.push(combos);
            s.bits.push(bits);
            s.order.push(order);
            s.lex.push(lex);
            s.lex_pos.push(lex_pos);
        }
        for d in (0..m).rev() {
            s.suffix_empty[d] = s.suffix_empty[d + 1] + s.empty_score[d];
        }
        s.request_slots = (0..p.words * 64).filter(|&b| has_bit(&slots, b)).collect();
        let mut rho = vec![vec![0.0; p.words * 64]; m + 1];
        for d in (0..m).rev() {
            rho[d] = rho[d + 1].clone();
            for (k, bits) in s.bits[d].iter().enumerate() {
                let len = s.combos[d][k].len();
                if len == 0 {
                    continue;
                }
                let share = s.gain(d, k) / len as f64;
                for &j in &s.request_slots {
                    if has_bit(bits, j) && share > rho[d][j] {
                        rho[d][j] = share;
                    }
                }
            }
        }
        s.rho = rho;
        s
    }

    fn gain(&self, d: usize, k: usize) -> f64 {
        self.scores[d][k] - self.empty_score[d]
    }

    fn price(&self, d: usize, k: usize, mu: &[f64]) -> f64 {
        let mut p = 0.0;
        for (w, word) in self.bits[d][k].iter().enumerate() {
            let mut x = *word;
            while x != 0 {
                p += mu[w * 64 + x.trailing_zeros() as usize];
                x &= x - 1;
            }
        }
        p
    }

    /// Request prices from the dual of the linear relaxation over vehicles
    /// `from..` and the requests not in `used`. Every remaining vehicle
    /// taking its best priced action, plus the prices of all free requests,
    /// bounds the remaining gain. Any non-negative prices give a valid bound,
    /// so solver accuracy only affects tightness.
    fn prices(&self, from: usize, used: &[u64]) -> Prices {
        let m = self.scores.len();
        let mut mu = vec![0.0; self.words * 64];
        let free: Vec<usize> = self.request_slots.iter().copied().filter(|&j| !has_bit(used, j)).collect();
        if from < m && !free.is_empty() {
            let mut lp = Problem::new(OptimizationDirection::Minimize);
            let u: Vec<Variable> = (from..m).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
            let mut price_var = vec![None; self.words * 64];
            for &j in &free {
                price_var[j] = Some(lp.add_var(1.0, (0.0, f64::INFINITY)));
            }
            for d in from..m {
                for k in 0..self.scores[d].len() {
                    let g = self.gain(d, k);
                    if g <= 0.0 || !disjoint(&self.bits[d][k], used) {
                        continue;
                    }
                    let mut row = vec![(u[d - from], 1.0)];
                    row.extend(free.iter().filter(|&&j| has_bit(&self.bits[d][k], j)).filter_map(|&j| price_var[j]).map(|v| (v, 1.0)));
                    lp.add_constraint(row.as_slice(), ComparisonOp::Ge, g);
                }
            }
            match lp.solve() {
                Ok(sol) => {
                    for &j in &free {
                        mu[j] = sol.var_value(price_var[j].expect("free slot has a price")).max(0.0);
                    }
                }
                Err(e) => log::warn!("assignment relaxation failed ({e}); using unpriced bounds"),
            }
        }
        let mut reduced = vec![Vec::new(); m];
        let mut order = vec![Vec::new(); m];
        for d in from..m {
            let r: Vec<f64> = (0..self.scores[d].len()).map(|k| self.gain(d, k) - self.price(d, k, &mu)).collect();
            let (sc, cb) = (&self.scores[d], &self.combos[d]);
            let mut o: Vec<usize> = (0..r.len()).collect();
            o.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(sc[b].total_cmp(&sc[a])).then_with(|| cb[a].cmp(cb[b])));
            reduced[d] = r;
            order[d] = o;
        }
        Prices { mu, reduced, order }
    }

    /// Upper bound on the gain vehicles `depth..` can add over their empty
    /// actions, given the requests in `used`. `pr` must be fitted at or
    /// below `depth`.
    fn gain_bound(&self, depth: usize, used: &[u64], pr: &Prices) -> f64 {
        let m = self.scores.len();
        let mut by_vehicle = 0.0;
        for d in depth..m {
            let best = self.order[d]
                .iter()
                .find(|&&k| disjoint(&self.bits[d][k], used))
                .map(|&k| self.gain(d, k))
                .unwrap_or(0.0);
            by_vehicle += best.max(0.0);
        }
        let free = || self.request_slots.iter().copied().filter(|&j| !has_bit(used, j));
        let mut priced: f64 = free().map(|j| pr.mu[j]).sum();
        for d in depth..m {
            let best = pr.order[d]
                .iter()
                .find(|&&k| disjoint(&self.bits[d][k], used))
                .map(|&k| pr.reduced[d][k])
                .unwrap_or(0.0);
            priced += best.max(0.0);
        }
        let by_request: f64 = free().map(|j| self.rho[depth][j]).sum();
        by_vehicle.min(by_request).min(priced)
    }

    /// Finds the best value, then the lexicographically smallest assignment
    /// reaching it within tolerance.
    fn run(&mut self) {
        let mut used = vec![0u64; self.words];
        let root = self.prices(0, &used);
        match self.integer_optimum() {
            Some(best) => {
                let value = best.iter().enumerate().fold(0.0, |acc, (d, &k)| acc + self.scores[d][k]);
                self.incumbent = Some((value, best));
            }
            None => {
                self.maximize(0, 0.0, &mut used, &root);
                if self.exhausted {
                    return;
                }
            }
        }
        let (z, first) = self.incumbent.clone().expect("first dive always completes");
        self.nodes = 0;
        if let Some(path) = self.smallest(0, 0.0, &mut used, &root, &first, z, true) {
            self.incumbent = Some((z, path));
        }
    }

    /// Best assignment from the LP solver's 0/1 branch and bound, or `None`
    /// if the solver fails or returns a clashing selection.
    fn integer_optimum(&self) -> Option<Vec<usize>> {
        let m = self.scores.len();
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let x: Vec<Vec<Variable>> =
            (0..m).map(|d| (0..self.scores[d].len()).map(|k| lp.add_binary_var(self.gain(d, k))).collect()).collect();
        for row in &x {
            let expr: Vec<(Variable, f64)> = row.iter().map(|&v| (v, 1.0)).collect();
            lp.add_constraint(expr.as_slice(), ComparisonOp::Le, 1.0);
        }
        for &j in &self.request_slots {
            let expr: Vec<(Variable, f64)> = (0..m)
                .flat_map(|d| (0..self.scores[d].len()).map(move |k| (d, k)))
                .filter(|&(d, k)| has_bit(&self.bits[d][k], j))
                .map(|(d, k)| (x[d][k], 1.0))
                .collect();
            lp.add_constraint(expr.as_slice(), ComparisonOp::Le, 1.0);
        }
        let sol = match lp.solve() {
            Ok(sol) => sol,
            Err(e) => {
                log::warn!("assignment solver failed ({e}); searching without it");
                return None;
            }
        };
        let mut used = vec![0u64; self.words];
        let mut best = Vec::with_capacity(m);
        for (d, vars) in x.iter().enumerate() {
            let picked: Vec<usize> = (0..self.scores[d].len()).filter(|&k| *sol.var_value(vars[k]) > 0.5).collect();
            let k = match picked[..] {
                [] => (0..self.scores[d].len()).find(|&k| self.combos[d][k].is_empty())?,
                [k] => k,
                _ => return None,
            };
            if !disjoint(&self.bits[d][k], &used) {
                log::warn!("assignment solver returned clashing actions");
                return None;
            }
            union_into(&mut used, &self.bits[d][k]);
            best.push(k);
        }
        Some(best)
    }

    fn maximize(&mut self, depth: usize, cur: f64, used: &mut [u64], pr: &Prices) {
        self.nodes += 1;
        // The first dive always completes so there is an incumbent to return.
        if self.nodes > self.node_limit && self.incumbent.is_some() {
            self.exhausted = true;
            return;
        }
        if depth == self.scores.len() {
            if self.incumbent.as_ref().is_none_or(|(inc, _)| cur > *inc) {
                self.incumbent = Some((cur, self.path.clone()));
            }
            return;
        }
        for &k in &pr.order[depth] {
            if !disjoint(&self.bits[depth][k], used) {
                continue;
            }
            union_into(used, &self.bits[depth][k]);
            self.path.push(k);
            let next = cur + self.scores[depth][k];
            let prune = self.incumbent.as_ref().is_some_and(|(inc, _)| {
                next + self.suffix_empty[depth + 1] + self.gain_bound(depth + 1, used, pr) <= inc + tolerance(*inc)
            });
            if !prune {
                self.maximize(depth + 1, next, used, pr);
            }
            self.path.pop();
            remove_from(used, &self.bits[depth][k]);
            if self.exhausted {
                return;
            }
        }
    }

    /// Depth-first in lexicographic order for the first leaf worth at least
    /// `z` within tolerance. `first` reaches `z`, so only prefixes up to it
    /// need searching, and its own prefix needs no bound. Subtrees that leave
    /// it get prices refitted to what is left, which keeps the bound tight
    /// when many assignments tie.
    #[allow(clippy::too_many_arguments)]
    fn smallest(
        &mut self,
        depth: usize,
        cur: f64,
        used: &mut [u64],
        pr: &Prices,
        first: &[usize],
        z: f64,
        on_first: bool,
    ) -> Option<Vec<usize>> {
        self.nodes += 1;
        if self.nodes > self.node_limit {
            self.exhausted = true;
            return None;
        }
        let m = self.scores.len();
        if depth == m {
            return (cur >= z - tolerance(z)).then(|| self.path.clone());
        }
        let target = z - tolerance(z);
        let limit = self.lex_pos[depth][first[depth]];
        for i in 0..self.lex[depth].len() {
            if on_first && i > limit {
                break;
            }
            let k = self.lex[depth][i];
            if !disjoint(&self.bits[depth][k], used) {
                continue;
            }
            union_into(used, &self.bits[depth][k]);
            self.path.push(k);
            let next = cur + self.scores[depth][k];
            let base = next + self.suffix_empty[depth + 1];
            let found = if on_first && k == first[depth] {
                self.smallest(depth + 1, next, used, pr, first, z, true)
            } else if base + self.gain_bound(depth + 1, used, pr) < target {
                None
            } else if m - depth > 2 {
                let refit = self.prices(depth + 1, used);
                if base + self.gain_bound(depth + 1, used, &refit) < target {
                    None
                } else {
                    self.smallest(depth + 1, next, used, &refit, first, z, false)
                }
            } else {
                self.smallest(depth + 1, next, used, pr, first, z, false)
            };
            self.path.pop();
            remove_from(used, &self.bits[depth][k]);
            if found.is_some() || self.exhausted {
                return found;
            }
        }
        None
    }
}

fn assemble(
    p: &Prepared,
    actions: &[Vec<ScoredAction>],
    list_of: &[usize],
    chosen: &[usize],
    proven_optimal: bool,
) -> JointAssignment {
    let mut choices = BTreeMap::new();
    let mut objective = 0.0;
    for (v, &k) in chosen.iter().enumerate() {
        let a = &actions[list_of[v]][p.actions[v][k].0];
        objective += a.score;
        choices.insert(p.vehicles[v], a.clone());
    }
    JointAssignment { choices, objective, proven_optimal }
}

fn list_positions(actions: &[Vec<ScoredAction>], p: &Prepared) -> Vec<usize> {
    let pos: HashMap<VehicleId, usize> = actions.iter().enumerate().map(|(i, l)| (l[0].vehicle, i)).collect();
    p.vehicles.iter().map(|v| pos[v]).collect()
}

/// Best joint assignment. Every list must belong to one vehicle and contain
/// the empty combo.
pub fn solve_assignment(
    actions: &[Vec<ScoredAction>],
    requests: &[RequestId],
) -> Result<JointAssignment, AssignmentError> {
    solve_assignment_with_limit(actions, requests, DEFAULT_NODE_LIMIT)
}

pub fn solve_assignment_with_limit(
    actions: &[Vec<ScoredAction>],
    requests: &[RequestId],
    node_limit: u64,
) -> Result<JointAssignment, AssignmentError> {
    let p = prepare(actions, requests)?;
    let list_of = list_positions(actions, &p);
    let mut chosen = vec![0usize; p.vehicles.len()];
    let mut proven = true;
    for group in components(&p) {
        if group.len() == 1 {
            // No contention: smallest combo within tolerance of the best score.
            let v = group[0];
            let list = &actions[list_of[v]];
            let score = |k: usize| list[p.actions[v][k].0].score;
            let top = (0..p.actions[v].len()).map(score).fold(f64::NEG_INFINITY, f64::max);
            let best = (0..p.actions[v].len())
                .filter(|&k| score(k) >= top - tolerance(top))
                .min_by(|&a, &b| list[p.actions[v][a].0].combo.cmp(&list[p.actions[v][b].0].combo).then(score(b).total_cmp(&score(a))))
                .expect("list holds the empty action");
            chosen[v] = best;
            continue;
        }
        let mut search = GroupSearch::new(&p, actions, &list_of, &group, node_limit);
        search.run();
        if search.exhausted {
            proven = false;
            log::warn!("assignment search hit its node limit on a group of {} vehicles", group.len());
        }
        let (_, path) = search.incumbent.expect("first dive always completes");
        for (d, &v) in group.iter().enumerate() {
            chosen[v] = path[d];
        }
    }
    Ok(assemble(&p, actions, &list_of, &chosen, proven))
}

/// Exhaustive product enumeration with the same objective and tie rule.
pub fn solve_assignment_bruteforce(
    actions: &[Vec<ScoredAction>],
    requests: &[RequestId],
) -> Result<JointAssignment, AssignmentError> {
    let p = prepare(actions, requests)?;
    let product = p.actions.iter().fold(1u128, |acc, a| acc.saturating_mul(a.len() as u128));
    if product > BRUTEFORCE_MAX_PRODUCT {
        return Err(AssignmentError::BruteForceGuard(product));
    }
    let list_of = list_positions(actions, &p);
    let n = p.vehicles.len();
    let combo_of = |v: usize, k: usize| &actions[list_of[v]][p.actions[v][k].0].combo;
    let mut feasible: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let mut used = vec![0u64; p.words];
        let mut ok = true;
        for (v, &i) in idx.iter().enumerate() {
            let b = &p.actions[v][i].1;
            if !disjoint(b, &used) {
                ok = false;
                break;
            }
            union_into(&mut used, b);
        }
        if ok {
            let obj = (0..n).fold(0.0, |acc, v| acc + actions[list_of[v]][p.actions[v][idx[v]].0].score);
            feasible.push((obj, idx.clone()));
        }
        // Odometer increment.
        let mut v = n;
        loop {
            if v == 0 {
                let top = feasible.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max);
                let (_, path) = feasible
                    .iter()
                    .filter(|f| f.0 >= top - tolerance(top))
                    .min_by(|a, b| {
                        (0..n)
                            .map(|v| combo_of(v, a.1[v]).cmp(combo_of(v, b.1[v])))
                            .find(|o| *o != Ordering::Equal)
                            .unwrap_or(Ordering::Equal)
                            .then(b.0.total_cmp(&a.0))
                    })
                    .expect("the all-empty assignment is feasible");
                return Ok(assemble(&p, actions, &list_of, path, true));
            }
            v -= 1;
            idx[v] += 1;
            if idx[v] < p.actions[v].len() {
                break;
            }
            idx[v] = 0;
        }
    }
}

/// Checks one action per vehicle, drawn from its list, and no request twice.
pub fn validate_assignment(
    actions: &[Vec<ScoredAction>],
    assignment: &JointAssignment,
) -> Result<(), String> {
    let mut seen = std::collections::HashSet::new();
    for list in actions {
        let v = list[0].vehicle;
        let chosen = assignment.choices.get(&v).ok_or_else(|| format!("vehicle {v} has no action"))?;
        if !list.iter().any(|a| a == chosen) {
            return Err(format!("vehicle {v} took an action it was not offered"));
        }
        for r in chosen.combo.ids() {
            if !seen.insert(*r) {
                return Err(format!("request {r} assigned twice"));
            }
        }
    }
    if assignment.choices.len() != actions.len() {
        return Err("assignment covers vehicles without action lists".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NodeId;

    fn act(v: u32, ids: &[u32], score: f64) -> ScoredAction {
        ScoredAction {
            vehicle: VehicleId(v),
            combo: Combo::new(ids.iter().map(|&i| RequestId(i)).collect()),
            plan: RoutePlan::idle(NodeId(0), 0.0),
            score,
        }
    }

    fn reqs(n: u32) -> Vec<RequestId> {
        (1..=n).map(RequestId).collect()
    }

    fn picked(a: &JointAssignment, v: u32) -> Vec<u32> {
        a.choices[&VehicleId(v)].combo.ids().iter().map(|r| r.0).collect()
    }

    #[test]
    fn single_vehicle() {
        let acts = vec![vec![act(1, &[], 0.0), act(1, &[1], 1.0)]];
        let a = solve_assignment(&acts, &reqs(1)).unwrap();
        assert_eq!(picked(&a, 1), vec![1]);
        assert_eq!(a.objective, 1.0);
    }

    #[test]
    fn higher_scoring_vehicle_wins_request() {
        let acts = vec![
            vec![act(1, &[], 0.0), act(1, &[1], 2.0)],
            vec![act(2, &[], 0.0), act(2, &[1], 3.0)],
        ];
        for solve in [solve_assignment, solve_assignment_bruteforce] {
            let a = solve(&acts, &reqs(1)).unwrap();
            assert_eq!(picked(&a, 1), Vec::<u32>::new());
            assert_eq!(picked(&a, 2), vec![1]);
            assert_eq!(a.objective, 3.0);
        }
    }

    #[test]
    fn beats_greedy() {
        let acts = vec![
            vec![act(1, &[], 0.0), act(1, &[1, 2], 2.5), act(1, &[1], 2.0)],
            vec![act(2, &[], 0.0), act(2, &[2], 1.0)],
        ];
        for solve in [solve_assignment, solve_assignment_bruteforce] {
            let a = solve(&acts, &reqs(2)).unwrap();
            assert_eq!(picked(&a, 1), vec![1]);
            assert_eq!(picked(&a, 2), vec![2]);
            assert_eq!(a.objective, 3.0);
            validate_assignment(&acts, &a).unwrap();
        }
    }

    #[test]
    fn all_empty_offer() {
        let acts = vec![vec![act(1, &[], 0.0)], vec![act(2, &[], 0.0)]];
        let a = solve_assignment_bruteforce(&acts, &[]).unwrap();
        assert_eq!(a.objective, 0.0);
        assert_eq!(a, solve_assignment(&acts, &[]).unwrap());
    }

    #[test]
    fn ties_prefer_smaller_combo_sequence() {
        let acts = vec![
            vec![act(1, &[], 0.0), act(1, &[2], 1.0), act(1, &[1], 1.0)],
            vec![act(2, &[], 0.0), act(2, &[1], 1.0), act(2, &[2], 1.0)],
        ];
        let a = solve_assignment(&acts, &reqs(2)).unwrap();
        assert_eq!(picked(&a, 1), vec![1]);
        assert_eq!(picked(&a, 2), vec![2]);
        assert_eq!(a, solve_assignment_bruteforce(&acts, &reqs(2)).unwrap());
    }

    #[test]
    fn argument_errors() {
        let acts = vec![vec![act(1, &[1], 1.0)]];
        assert_eq!(solve_assignment(&acts, &reqs(1)), Err(AssignmentError::MissingEmpty(VehicleId(1))));
        let acts = vec![vec![act(1, &[], 0.0), act(1, &[9], 1.0)]];
        assert!(matches!(solve_assignment(&acts, &reqs(1)), Err(AssignmentError::UnknownRequest { .. })));
        let acts = vec![vec![act(1, &[], 0.0), act(2, &[], 1.0)]];
        assert_eq!(solve_assignment(&acts, &[]), Err(AssignmentError::MixedList(0)));
        let acts = vec![vec![act(1, &[], 0.0)], vec![act(1, &[], 0.0)]];
        assert_eq!(solve_assignment(&acts, &[]), Err(AssignmentError::DuplicateVehicle(VehicleId(1))));
        let acts = vec![vec![act(1, &[], f64::NAN)]];
        assert_eq!(solve_assignment(&acts, &[]), Err(AssignmentError::NonFinite(VehicleId(1))));
    }

    #[test]
    fn bruteforce_guard() {
        let list: Vec<ScoredAction> = std::iter::once(act(0, &[], 0.0))
            .chain((1..=200).map(|i| act(0, &[i], 1.0)))
            .collect();
        let acts: Vec<Vec<ScoredAction>> = (0..3)
            .map(|v| list.iter().map(|a| ScoredAction { vehicle: VehicleId(v), ..a.clone() }).collect())
            .collect();
        assert!(matches!(
            solve_assignment_bruteforce(&acts, &reqs(200)),
            Err(AssignmentError::BruteForceGuard(_))
        ));
    }

    #[test]
    fn node_limit_reports_unproven() {
        let acts: Vec<Vec<ScoredAction>> = (0..6)
            .map(|v| {
                std::iter::once(act(v, &[], 0.0))
                    .chain((1..=6).map(|r| act(v, &[r], 1.0 + (v * r) as f64 / 64.0)))
                    .collect()
            })
            .collect();
        let a = solve_assignment_with_limit(&acts, &reqs(6), 5).unwrap();
        assert!(!a.proven_optimal);
        validate_assignment(&acts, &a).unwrap();
        assert!(solve_assignment(&acts, &reqs(6)).unwrap().proven_optimal);
    }
}
