//! Regional vehicle routing: pick one node from every pickup and drop-off
//! area and an order to visit them, minimizing total driving time.
//!
//! Constraints on a route starting at `start_node` at `start_time`:
//!
//! * every area is visited exactly once, at one of its member nodes;
//! * a request's pickup precedes its drop-off;
//! * pickup of request `j` completes no later than its pickup deadline
//!   (`start_time + max_pickup_delay` by default, or
//!   `request_arrival + max_pickup_delay` under
//!   [`DelayReference::RequestArrival`]);
//! * drop-off of an awaiting request is at most `max_detour` after its pickup;
//! * drop-off of an onboard request is at most `max_detour` after its
//!   recorded pickup time.
//!
//! The vehicle never idles voluntarily. When `walk_speed` is set, a pickup at
//! node `n` completes at `max(arrival, request_arrival + walk(n) / walk_speed)`
//! so the passenger has time to reach the node; otherwise pickups are
//! instantaneous.
//!
//! [`solve`] runs a best-first branch-and-bound over `(area, node)`
//! extensions with the lower bound `cost + sum over unvisited areas of the
//! cheapest single leg into that area`, plus label dominance on
//! `(visited areas, node)`. Among optimal routes it returns the
//! lexicographically smallest `(area, node)` sequence, matching
//! [`solve_bruteforce`].

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::rc::Rc;
use std::sync::RwLock;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::areas::{Area, AreaKind, AreaPoint};
use crate::model::RequestId;
use crate::network::{NodeId, RoadNetwork};

/// Largest number of areas (pickups + drop-offs) in one instance.
pub const MAX_AREAS: usize = 16;
const MAX_AWAITING: usize = MAX_AREAS / 2;
/// Point budget for [`solve_bruteforce`].
pub const BRUTEFORCE_MAX_POINTS: usize = 12;
const TIME_TOL: f64 = 1e-6;
const START: u8 = u8::MAX;
/// Work limit, in inner-loop steps, for the exact relaxed cost-to-go table.
const RELAXED_BUDGET: usize = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    Pickup,
    Dropoff,
    OnboardDropoff,
}

/// Which area of an instance a stop serves. Orders by kind, then index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AreaRef {
    pub kind: StopKind,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub node: NodeId,
    pub area: AreaRef,
    pub request: RequestId,
    /// When the vehicle reaches the node.
    pub arrival: f64,
    /// Earliest time the passenger is at the node (pickups only).
    pub ready: f64,
    /// When the pickup or drop-off completes.
    pub service: f64,
    /// Latest admissible `service` for this stop.
    pub deadline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub start_node: NodeId,
    pub start_time: f64,
    pub stops: Vec<Stop>,
    /// Sum of driving legs, seconds.
    pub total_time: f64,
}

impl RoutePlan {
    pub fn idle(node: NodeId, time: f64) -> Self {
        Self { start_node: node, start_time: time, stops: Vec::new(), total_time: 0.0 }
    }

    pub fn is_idle(&self) -> bool {
        self.stops.is_empty()
    }

    /// Completion time of the last stop, or the start time when idle.
    pub fn end_time(&self) -> f64 {
        self.stops.last().map(|s| s.service).unwrap_or(self.start_time)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayReference {
    /// Pickup delay counted from the route start time.
    #[default]
    RouteStart,
    /// Pickup delay counted from the request's arrival.
    RequestArrival,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AwaitingRequest {
    pub pickup: Area,
    pub dropoff: Area,
    pub max_pickup_delay: f64,
    pub max_detour: f64,
    pub request_arrival: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnboardRequest {
    pub dropoff: Area,
    pub pickup_time: f64,
    pub max_detour: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvrpInstance {
    pub start_node: NodeId,
    pub start_time: f64,
    pub capacity: usize,
    pub awaiting: Vec<AwaitingRequest>,
    pub onboard: Vec<OnboardRequest>,
    pub delay_reference: DelayReference,
    pub walk_speed: Option<f64>,
}

impl RvrpInstance {
    pub fn new(start_node: NodeId, start_time: f64, capacity: usize) -> Self {
        Self {
            start_node,
            start_time,
            capacity,
            awaiting: Vec::new(),
            onboard: Vec::new(),
            delay_reference: DelayReference::RouteStart,
            walk_speed: None,
        }
    }

    pub fn area_count(&self) -> usize {
        2 * self.awaiting.len() + self.onboard.len()
    }

    pub fn point_count(&self) -> usize {
        self.awaiting.iter().map(|a| a.pickup.len() + a.dropoff.len()).sum::<usize>()
            + self.onboard.iter().map(|o| o.dropoff.len()).sum::<usize>()
    }

    /// Absolute pickup deadline of awaiting request `j`.
    pub fn pickup_deadline(&self, j: usize) -> f64 {
        let a = &self.awaiting[j];
        match self.delay_reference {
            DelayReference::RouteStart => self.start_time + a.max_pickup_delay,
            DelayReference::RequestArrival => a.request_arrival + a.max_pickup_delay,
        }
    }

    /// When the passenger of awaiting request `j` can be at a point `walk`
    /// meters from the original pickup.
    pub fn ready_time(&self, j: usize, walk: f64) -> f64 {
        match self.walk_speed {
            Some(s) => self.awaiting[j].request_arrival + walk / s,
            None => f64::NEG_INFINITY,
        }
    }

    pub fn area(&self, r: AreaRef) -> Option<&Area> {
        match r.kind {
            StopKind::Pickup => self.awaiting.get(r.index).map(|a| &a.pickup),
            StopKind::Dropoff => self.awaiting.get(r.index).map(|a| &a.dropoff),
            StopKind::OnboardDropoff => self.onboard.get(r.index).map(|o| &o.dropoff),
        }
    }

    fn area_refs(&self) -> Vec<AreaRef> {
        let n = self.awaiting.len();
        (0..n)
            .map(|i| AreaRef { kind: StopKind::Pickup, index: i })
            .chain((0..n).map(|i| AreaRef { kind: StopKind::Dropoff, index: i }))
            .chain((0..self.onboard.len()).map(|i| AreaRef { kind: StopKind::OnboardDropoff, index: i }))
            .collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RvrpError {
    #[error("area {area:?} contains node {node} outside the network")]
    InvalidNode { area: AreaRef, node: NodeId },
    #[error("start node {0} outside the network")]
    InvalidStart(NodeId),
    #[error("area {0:?} is empty")]
    EmptyArea(AreaRef),
    #[error("{requests} requests exceed capacity {capacity}")]
    CapacityExceeded { requests: usize, capacity: usize },
    #[error("{0} areas exceed the supported maximum of {MAX_AREAS}")]
    TooManyAreas(usize),
    #[error("instance has {0} points, brute force is limited to {BRUTEFORCE_MAX_POINTS}")]
    BruteForceGuard(usize),
    #[error("instance dump line {line}: {message}")]
    Dump { line: usize, message: String },
}

/// A broken constraint found by [`validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// Plan does not start at the instance's start node and time.
    StartMismatch,
    /// Stop refers to an area the instance does not have.
    UnknownArea { stop: usize },
    NodeNotInArea { stop: usize },
    MissingArea { area: AreaRef },
    DuplicateArea { area: AreaRef },
    /// Arrival or service time inconsistent with leg times.
    TimeContinuity { stop: usize, expected: f64, actual: f64 },
    /// Drop-off visited before its pickup.
    Precedence { request: RequestId },
    PickupDelay { request: RequestId, excess: f64 },
    DropoffDelay { request: RequestId, excess: f64 },
    OnboardDropoffDelay { request: RequestId, excess: f64 },
    TotalTime { expected: f64, actual: f64 },
    Capacity { requests: usize, capacity: usize },
}

type AreaKey = (RequestId, AreaKind);

/// Memo of cheapest single legs between areas, keyed by the areas' request
/// and kind. Valid only while those areas do not change.
#[derive(Debug, Default)]
pub struct LegBoundCache {
    legs: RwLock<HashMap<(AreaKey, AreaKey), f64>>,
}

impl LegBoundCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.legs.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.legs.write().unwrap().clear();
    }
}

fn min_leg(net: &RoadNetwork, from: &[(NodeId, f64)], to: &[(NodeId, f64)]) -> f64 {
    let mut best = f64::INFINITY;
    for &(a, _) in from {
        for &(b, _) in to {
            let t = net.drive_time(a, b);
            if t < best {
                best = t;
            }
        }
    }
    best
}

struct CArea {
    aref: AreaRef,
    key: (RequestId, AreaKind),
    /// `(node, ready time)` sorted by node id.
    pts: Vec<(NodeId, f64)>,
    /// Awaiting index for pickups and drop-offs, onboard index otherwise.
    slot: usize,
    /// Absolute deadline known up front (pickups, onboard drop-offs).
    fixed_deadline: f64,
    detour: f64,
    max_ready: f64,
}

/// Instance flattened for search. Area `i` is the `i`-th in `AreaRef` order.
struct Compiled {
    areas: Vec<CArea>,
    n_await: usize,
    full: u32,
    start_node: NodeId,
    start_time: f64,
    start_leg: Vec<f64>,
    leg: Vec<Vec<f64>>,
}

impl Compiled {
    fn build(
        net: &RoadNetwork,
        inst: &RvrpInstance,
        cache: Option<&LegBoundCache>,
    ) -> Result<Self, RvrpError> {
        check_instance(net, inst)?;
        let n = inst.awaiting.len();
        let mut areas = Vec::with_capacity(inst.area_count());
        for aref in inst.area_refs() {
            let area = inst.area(aref).expect("area ref from instance");
            let (slot, fixed_deadline, detour) = match aref.kind {
                StopKind::Pickup => (aref.index, inst.pickup_deadline(aref.index), inst.awaiting[aref.index].max_detour),
                StopKind::Dropoff => (aref.index, f64::INFINITY, inst.awaiting[aref.index].max_detour),
                StopKind::OnboardDropoff => {
                    let o = &inst.onboard[aref.index];
                    (aref.index, o.pickup_time + o.max_detour, o.max_detour)
                }
            };
            let pts: Vec<(NodeId, f64)> = area
                .members()
                .iter()
                .map(|p| {
                    let ready = if aref.kind == StopKind::Pickup {
                        inst.ready_time(aref.index, p.walk)
                    } else {
                        f64::NEG_INFINITY
                    };
                    (p.node, ready)
                })
                .collect();
            let max_ready = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            areas.push(CArea {
                aref,
                key: (area.request, area.kind),
                pts,
                slot,
                fixed_deadline,
                detour,
                max_ready,
            });
        }
        let a = areas.len();
        let start_leg = areas
            .iter()
            .map(|ar| min_leg(net, &[(inst.start_node, 0.0)], &ar.pts))
            .collect();
        let mut leg = vec![vec![f64::INFINITY; a]; a];
        for x in 0..a {
            for b in 0..a {
                if x == b {
                    continue;
                }
                let key = (areas[x].key, areas[b].key);
                let cached = cache.and_then(|c| c.legs.read().unwrap().get(&key).copied());
                leg[x][b] = match cached {
                    Some(v) => v,
                    None => {
                        let v = min_leg(net, &areas[x].pts, &areas[b].pts);
                        if let Some(c) = cache {
                            c.legs.write().unwrap().insert(key, v);
                        }
                        v
                    }
                };
            }
        }
        Ok(Self {
            areas,
            n_await: n,
            full: if a == 32 { u32::MAX } else { (1u32 << a) - 1 },
            start_node: inst.start_node,
            start_time: inst.start_time,
            start_leg,
            leg,
        })
    }

    #[inline]
    fn eligible(&self, a: usize, mask: u32) -> bool {
        if mask & (1 << a) != 0 {
            return false;
        }
        match self.areas[a].aref.kind {
            StopKind::Dropoff => mask & (1 << self.areas[a].slot) != 0,
            _ => true,
        }
    }

    /// Per unvisited area, the cheapest leg that could lead into it.
    fn hterms(&self, mask: u32, last: u8) -> Vec<f64> {
        let a = self.areas.len();
        let mut out = vec![0.0; a];
        for (b, slot) in out.iter_mut().enumerate() {
            if mask & (1 << b) != 0 {
                continue;
            }
            let mut best = if last == START {
                self.start_leg[b]
            } else {
                self.leg[last as usize][b]
            };
            for x in 0..a {
                if x != b && mask & (1 << x) == 0 && self.leg[x][b] < best {
                    best = self.leg[x][b];
                }
            }
            *slot = best;
        }
        out
    }
}

fn check_instance(net: &RoadNetwork, inst: &RvrpInstance) -> Result<(), RvrpError> {
    if !net.contains(inst.start_node) {
        return Err(RvrpError::InvalidStart(inst.start_node));
    }
    let requests = inst.awaiting.len() + inst.onboard.len();
    if requests > inst.capacity {
        return Err(RvrpError::CapacityExceeded { requests, capacity: inst.capacity });
    }
    if inst.area_count() > MAX_AREAS || inst.awaiting.len() > MAX_AWAITING {
        return Err(RvrpError::TooManyAreas(inst.area_count()));
    }
    for aref in inst.area_refs() {
        let area = inst.area(aref).expect("area ref from instance");
        if area.is_empty() {
            return Err(RvrpError::EmptyArea(aref));
        }
        if let Some(node) = area.nodes().find(|n| !net.contains(*n)) {
            return Err(RvrpError::InvalidNode { area: aref, node });
        }
    }
    Ok(())
}

/// Exact remaining drive time when every time limit is dropped and only
/// precedence is kept, per visited set and current node. Admissible, and
/// tight whenever time limits do not bind.
struct Relaxed {
    /// Distinct-node index of each area point, parallel to `CArea::pts`.
    ix: Vec<Vec<usize>>,
    /// Index standing for the start node.
    start: usize,
    /// Per visited mask, values by node index; empty where precedence fails.
    table: Vec<Vec<f64>>,
    /// Margin for rounding, since the table sums legs in reverse order. It
    /// is the same for every entry so exact ties stay ties.
    shave: f64,
}

impl Relaxed {
    /// `None` when the table would exceed [`RELAXED_BUDGET`].
    fn build(net: &RoadNetwork, c: &Compiled) -> Option<Self> {
        let a = c.areas.len();
        let n = c.n_await;
        let valid = |mask: u32| (0..n).all(|j| mask & (1 << (n + j)) == 0 || mask & (1 << j) != 0);
        let mut nodes: Vec<NodeId> = c.areas.iter().flat_map(|ar| ar.pts.iter().map(|p| p.0)).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let width = nodes.len() + 1;
        let mut work = 0usize;
        for mask in (0..=c.full).filter(|&m| valid(m)) {
            let pts: usize = (0..a).filter(|&x| c.eligible(x, mask)).map(|x| c.areas[x].pts.len()).sum();
            work += pts * width;
            if work > RELAXED_BUDGET {
                return None;
            }
        }
        let ix: Vec<Vec<usize>> = c
            .areas
            .iter()
            .map(|ar| ar.pts.iter().map(|p| nodes.binary_search(&p.0).expect("node collected")).collect())
            .collect();
        // into[v][u]: drive time from node u (or the start) to node v.
        let mut into = vec![vec![f64::INFINITY; width]; nodes.len()];
        for (u, &from) in nodes.iter().chain(std::iter::once(&c.start_node)).enumerate() {
            let row = net.drive_row(from);
            for (v, &to) in nodes.iter().enumerate() {
                into[v][u] = row.cost(to);
            }
        }
        let mut table = vec![Vec::new(); c.full as usize + 1];
        table[c.full as usize] = vec![0.0; width];
        for mask in (0..c.full).rev().filter(|&m| valid(m)) {
            let mut h = vec![f64::INFINITY; width];
            for x in (0..a).filter(|&x| c.eligible(x, mask)) {
                let next = &table[(mask | 1 << x) as usize];
                for &q in &ix[x] {
                    let g = next[q];
                    if g == f64::INFINITY {
                        continue;
                    }
                    for (hu, &leg) in h.iter_mut().zip(&into[q]) {
                        let v = leg + g;
                        if v < *hu {
                            *hu = v;
                        }
                    }
                }
            }
            table[mask as usize] = h;
        }
        let root = table[0][nodes.len()];
        let shave = if root.is_finite() { 1e-9 * (1.0 + root) } else { 0.0 };
        Some(Self { ix, start: nodes.len(), table, shave })
    }

    fn get(&self, mask: u32, ix: usize) -> f64 {
        (self.table[mask as usize][ix] - self.shave).max(0.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Seq {
    len: u8,
    items: [(u8, u32); MAX_AREAS],
}

impl Seq {
    fn empty() -> Self {
        Self { len: 0, items: [(0, 0); MAX_AREAS] }
    }

    fn push(mut self, area: u8, node: NodeId) -> Self {
        self.items[self.len as usize] = (area, node.0);
        self.len += 1;
        self
    }

    fn as_slice(&self) -> &[(u8, u32)] {
        &self.items[..self.len as usize]
    }
}

impl Ord for Seq {
    fn cmp(&self, other: &Self) -> Ordering {
        self.as_slice().cmp(other.as_slice())
    }
}

impl PartialOrd for Seq {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy)]
struct Label {
    lb: f64,
    cost: f64,
    time: f64,
    node: NodeId,
    mask: u32,
    /// Pickup completion time per awaiting request (NaN until picked).
    picks: [f64; MAX_AWAITING],
    seq: Seq,
    /// Children with bound up to this value are already queued.
    queued_to: f64,
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Label {}

impl Ord for Label {
    // Reversed so BinaryHeap pops the smallest (lb, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.lb.total_cmp(&self.lb).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-leg bound and its per-area terms, memoized per (visited set, last area).
type HeuristicRow = (f64, Rc<[f64]>);
/// Times and pickup times at which a (visited set, node) prefix failed.
type FailedPrefixes = FxHashMap<(u32, u32), Vec<(f64, [f64; MAX_AWAITING])>>;

struct DomRecord {
    cost: f64,
    time: f64,
    picks: [f64; MAX_AWAITING],
    seq: Seq,
}

struct Search<'a> {
    net: &'a RoadNetwork,
    c: Compiled,
    hmemo: FxHashMap<(u32, u8), HeuristicRow>,
    relaxed: Option<Relaxed>,
}

impl<'a> Search<'a> {
    fn new(net: &'a RoadNetwork, c: Compiled) -> Self {
        Self { net, c, hmemo: FxHashMap::default(), relaxed: None }
    }

    fn root(&mut self) -> Label {
        let (h, _) = self.h(0, START);
        Label {
            lb: self.relaxed.as_ref().map_or(h, |r| r.get(0, r.start)),
            cost: 0.0,
            time: self.c.start_time,
            node: self.c.start_node,
            mask: 0,
            picks: [f64::NAN; MAX_AWAITING],
            seq: Seq::empty(),
            queued_to: f64::NEG_INFINITY,
        }
    }

    fn h(&mut self, mask: u32, last: u8) -> (f64, Rc<[f64]>) {
        if let Some(v) = self.hmemo.get(&(mask, last)) {
            return v.clone();
        }
        let terms: Rc<[f64]> = self.c.hterms(mask, last).into();
        let sum = terms.iter().sum();
        self.hmemo.insert((mask, last), (sum, terms.clone()));
        (sum, terms)
    }

    /// Latest walker-ready time among unvisited pickups.
    fn future_ready(&self, mask: u32) -> f64 {
        (0..self.c.n_await)
            .filter(|&j| mask & (1 << j) == 0)
            .map(|j| self.c.areas[j].max_ready)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Children of `l` in (area, node) order, pruned by deadlines and the
    /// per-area arrival lower bound.
    fn expand(&mut self, l: &Label, out: &mut Vec<Label>) {
        out.clear();
        let row = self.net.drive_row(l.node);
        for a in 0..self.c.areas.len() {
            if !self.c.eligible(a, l.mask) {
                continue;
            }
            let mask2 = l.mask | (1 << a);
            let (h, terms) = self.h(mask2, a as u8);
            let area = &self.c.areas[a];
            for (i, &(m, ready)) in area.pts.iter().enumerate() {
                let leg = row.cost(m);
                if !leg.is_finite() {
                    continue;
                }
                let arrival = l.time + leg;
                let mut picks = l.picks;
                let service = match area.aref.kind {
                    StopKind::Pickup => {
                        let s = arrival.max(ready);
                        if s > area.fixed_deadline {
                            continue;
                        }
                        picks[area.slot] = s;
                        s
                    }
                    StopKind::Dropoff => {
                        if arrival - l.picks[area.slot] > area.detour {
                            continue;
                        }
                        arrival
                    }
                    StopKind::OnboardDropoff => {
                        if arrival > area.fixed_deadline {
                            continue;
                        }
                        arrival
                    }
                };
                if !self.bound_ok(mask2, service, &picks, &terms) {
                    continue;
                }
                let rest = self.relaxed.as_ref().map_or(h, |r| r.get(mask2, r.ix[a][i]));
                if rest == f64::INFINITY {
                    continue;
                }
                let cost = l.cost + leg;
                out.push(Label {
                    lb: cost + rest,
                    cost,
                    time: service,
                    node: m,
                    mask: mask2,
                    picks,
                    seq: l.seq.push(a as u8, m),
                    queued_to: f64::NEG_INFINITY,
                });
            }
        }
    }

    fn bound_ok(&self, mask: u32, time: f64, picks: &[f64; MAX_AWAITING], terms: &[f64]) -> bool {
        for (b, area) in self.c.areas.iter().enumerate() {
            if mask & (1 << b) != 0 {
                continue;
            }
            let deadline = match area.aref.kind {
                StopKind::Pickup | StopKind::OnboardDropoff => area.fixed_deadline,
                StopKind::Dropoff => {
                    let p = picks[area.slot];
                    if p.is_nan() {
                        continue;
                    }
                    p + area.detour
                }
            };
            if time + terms[b] > deadline {
                return false;
            }
        }
        true
    }

    /// `a` makes `b` redundant: every completion of `b` is available to `a`
    /// at no greater cost, and ties go to `a`.
    fn dominates(&self, a: &DomRecord, b: &Label) -> bool {
        if a.cost > b.cost || a.time > b.time {
            return false;
        }
        if a.cost == b.cost && a.seq > b.seq {
            return false;
        }
        if a.time < b.time && self.future_ready(b.mask) > a.time {
            // Later walker waits could absorb the head start unevenly.
            return false;
        }
        for j in 0..self.c.n_await {
            let open = b.mask & (1 << j) != 0 && b.mask & (1 << (self.c.n_await + j)) == 0;
            if open && a.picks[j] < b.picks[j] {
                return false;
            }
        }
        true
    }

    fn best_first(&mut self) -> Option<Seq> {
        let mut heap = BinaryHeap::new();
        let mut expanded: FxHashMap<(u32, u32), Vec<DomRecord>> = FxHashMap::default();
        let root = self.root();
        heap.push(root);
        let mut children = Vec::new();
        // Children are queued lazily: only those whose bound does not exceed
        // the parent's key, after which the parent is requeued at the next
        // child bound. Labels still pop in the same (bound, sequence) order.
        while let Some(l) = heap.pop() {
            if l.mask == self.c.full {
                return Some(l.seq);
            }
            if l.queued_to == f64::NEG_INFINITY {
                let key = (l.mask, l.node.0);
                if let Some(recs) = expanded.get(&key) {
                    if recs.iter().any(|r| self.dominates(r, &l)) {
                        continue;
                    }
                }
                expanded.entry(key).or_default().push(DomRecord {
                    cost: l.cost,
                    time: l.time,
                    picks: l.picks,
                    seq: l.seq,
                });
            }
            self.expand(&l, &mut children);
            let mut next = f64::INFINITY;
            for ch in children.drain(..) {
                if ch.lb <= l.queued_to {
                    continue;
                }
                if ch.lb > l.lb {
                    next = next.min(ch.lb);
                    continue;
                }
                let dominated = expanded
                    .get(&(ch.mask, ch.node.0))
                    .is_some_and(|recs| recs.iter().any(|r| self.dominates(r, &ch)));
                if !dominated {
                    heap.push(ch);
                }
            }
            if next < f64::INFINITY {
                heap.push(Label { lb: next, queued_to: l.lb, ..l });
            }
        }
        None
    }

    /// Depth-first in (area, node) order; returns the first feasible route.
    fn first_feasible(&mut self) -> Option<Seq> {
        let root = self.root();
        let mut failed = FailedPrefixes::default();
        self.dfs(&root, &mut failed)
    }

    fn dfs(
        &mut self,
        l: &Label,
        failed: &mut FailedPrefixes,
    ) -> Option<Seq> {
        if l.mask == self.c.full {
            return Some(l.seq);
        }
        let key = (l.mask, l.node.0);
        if let Some(recs) = failed.get(&key) {
            let n = self.c.n_await;
            let fr = self.future_ready(l.mask);
            let hopeless = recs.iter().any(|(t, picks)| {
                (l.time == *t || (l.time > *t && fr <= *t))
                    && (0..n).all(|j| {
                        let open = l.mask & (1 << j) != 0 && l.mask & (1 << (n + j)) == 0;
                        !open || l.picks[j] <= picks[j]
                    })
            });
            if hopeless {
                return None;
            }
        }
        let mut children = Vec::new();
        self.expand(l, &mut children);
        for child in &children {
            if let Some(s) = self.dfs(child, failed) {
                return Some(s);
            }
        }
        failed.entry(key).or_default().push((l.time, l.picks));
        None
    }
}

/// Rebuilds a full plan from a visiting sequence. Returns `None` if the
/// sequence breaks a constraint.
fn materialize(net: &RoadNetwork, inst: &RvrpInstance, seq: &[(AreaRef, NodeId)]) -> Option<RoutePlan> {
    let mut stops = Vec::with_capacity(seq.len());
    let mut node = inst.start_node;
    let mut time = inst.start_time;
    let mut total = 0.0;
    let mut picks = vec![f64::NAN; inst.awaiting.len()];
    for &(aref, m) in seq {
        let area = inst.area(aref)?;
        let walk = area.walk_to(m)?;
        let leg = net.drive_time(node, m);
        if !leg.is_finite() {
            return None;
        }
        let arrival = time + leg;
        total += leg;
        let (ready, service, deadline) = match aref.kind {
            StopKind::Pickup => {
                let ready = inst.ready_time(aref.index, walk);
                let service = arrival.max(ready);
                let deadline = inst.pickup_deadline(aref.index);
                if service > deadline {
                    return None;
                }
                picks[aref.index] = service;
                (ready, service, deadline)
            }
            StopKind::Dropoff => {
                let p = picks[aref.index];
                if p.is_nan() {
                    return None;
                }
                let deadline = p + inst.awaiting[aref.index].max_detour;
                if arrival > deadline {
                    return None;
                }
                (f64::NEG_INFINITY, arrival, deadline)
            }
            StopKind::OnboardDropoff => {
                let o = &inst.onboard[aref.index];
                let deadline = o.pickup_time + o.max_detour;
                if arrival > deadline {
                    return None;
                }
                (f64::NEG_INFINITY, arrival, deadline)
            }
        };
        stops.push(Stop { node: m, area: aref, request: area.request, arrival, ready, service, deadline });
        node = m;
        time = service;
    }
    Some(RoutePlan { start_node: inst.start_node, start_time: inst.start_time, stops, total_time: total })
}

fn seq_to_refs(c: &Compiled, seq: &Seq) -> Vec<(AreaRef, NodeId)> {
    seq.as_slice()
        .iter()
        .map(|&(a, n)| (c.areas[a as usize].aref, NodeId(n)))
        .collect()
}

/// Exact route optimizer, optionally sharing leg bounds through a cache.
pub struct RvrpSolver<'a> {
    net: &'a RoadNetwork,
    cache: Option<&'a LegBoundCache>,
}

impl<'a> RvrpSolver<'a> {
    pub fn new(net: &'a RoadNetwork) -> Self {
        Self { net, cache: None }
    }

    pub fn with_cache(net: &'a RoadNetwork, cache: &'a LegBoundCache) -> Self {
        Self { net, cache: Some(cache) }
    }

    /// Minimum-time plan, or `None` if no plan satisfies every constraint.
    pub fn solve(&self, inst: &RvrpInstance) -> Result<Option<RoutePlan>, RvrpError> {
        let compiled = Compiled::build(self.net, inst, self.cache)?;
        if compiled.areas.is_empty() {
            return Ok(Some(RoutePlan::idle(inst.start_node, inst.start_time)));
        }
        let mut search = Search::new(self.net, compiled);
        search.relaxed = Relaxed::build(self.net, &search.c);
        Ok(search.best_first().and_then(|s| materialize(self.net, inst, &seq_to_refs(&search.c, &s))))
    }

    /// Some feasible plan, not necessarily optimal.
    pub fn solve_feasible_only(&self, inst: &RvrpInstance) -> Result<Option<RoutePlan>, RvrpError> {
        let compiled = Compiled::build(self.net, inst, self.cache)?;
        if compiled.areas.is_empty() {
            return Ok(Some(RoutePlan::idle(inst.start_node, inst.start_time)));
        }
        let mut search = Search::new(self.net, compiled);
        Ok(search.first_feasible().and_then(|s| materialize(self.net, inst, &seq_to_refs(&search.c, &s))))
    }
}

pub fn solve(net: &RoadNetwork, inst: &RvrpInstance) -> Result<Option<RoutePlan>, RvrpError> {
    RvrpSolver::new(net).solve(inst)
}

pub fn solve_feasible_only(net: &RoadNetwork, inst: &RvrpInstance) -> Result<Option<RoutePlan>, RvrpError> {
    RvrpSolver::new(net).solve_feasible_only(inst)
}

/// Cost, (area, node) sequence and plan of the best enumerated route.
type Enumerated = (f64, Vec<(AreaRef, NodeId)>, RoutePlan);

/// Exhaustive enumeration of visiting orders and point choices. Refuses
/// instances with more than [`BRUTEFORCE_MAX_POINTS`] points.
pub fn solve_bruteforce(net: &RoadNetwork, inst: &RvrpInstance) -> Result<Option<RoutePlan>, RvrpError> {
    check_instance(net, inst)?;
    let points = inst.point_count();
    if points > BRUTEFORCE_MAX_POINTS {
        return Err(RvrpError::BruteForceGuard(points));
    }
    let refs = inst.area_refs();
    let mut best: Option<Enumerated> = None;
    let mut seq = Vec::new();
    let mut used = vec![false; refs.len()];
    enumerate(net, inst, &refs, &mut used, &mut seq, &mut best);
    Ok(best.map(|b| b.2))
}

fn enumerate(
    net: &RoadNetwork,
    inst: &RvrpInstance,
    refs: &[AreaRef],
    used: &mut [bool],
    seq: &mut Vec<(AreaRef, NodeId)>,
    best: &mut Option<Enumerated>,
) {
    if seq.len() == refs.len() {
        if let Some(plan) = materialize(net, inst, seq) {
            let better = match best {
                None => true,
                Some((cost, s, _)) => plan.total_time < *cost || (plan.total_time == *cost && seq < s),
            };
            if better {
                *best = Some((plan.total_time, seq.clone(), plan));
            }
        }
        return;
    }
    for (i, &r) in refs.iter().enumerate() {
        if used[i] {
            continue;
        }
        if r.kind == StopKind::Dropoff && !seq.iter().any(|(s, _)| s.kind == StopKind::Pickup && s.index == r.index) {
            continue;
        }
        used[i] = true;
        let nodes: Vec<NodeId> = inst.area(r).expect("area ref from instance").nodes().collect();
        for n in nodes {
            seq.push((r, n));
            enumerate(net, inst, refs, used, seq, best);
            seq.pop();
        }
        used[i] = false;
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= TIME_TOL * (1.0 + a.abs().max(b.abs()))
}

/// Every constraint the plan breaks. Empty iff the plan is valid for the
/// instance and its times are consistent with the network.
pub fn validate(net: &RoadNetwork, inst: &RvrpInstance, plan: &RoutePlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let requests = inst.awaiting.len() + inst.onboard.len();
    if requests > inst.capacity {
        out.push(Violation::Capacity { requests, capacity: inst.capacity });
    }
    if plan.start_node != inst.start_node || !close(plan.start_time, inst.start_time) {
        out.push(Violation::StartMismatch);
    }
    let refs = inst.area_refs();
    let mut seen: HashMap<AreaRef, usize> = HashMap::new();
    let mut picks: Vec<Option<f64>> = vec![None; inst.awaiting.len()];
    let mut node = inst.start_node;
    let mut time = inst.start_time;
    let mut total = 0.0;
    for (i, stop) in plan.stops.iter().enumerate() {
        let Some(area) = inst.area(stop.area) else {
            out.push(Violation::UnknownArea { stop: i });
            continue;
        };
        *seen.entry(stop.area).or_default() += 1;
        let walk = match area.walk_to(stop.node) {
            Some(w) => w,
            None => {
                out.push(Violation::NodeNotInArea { stop: i });
                0.0
            }
        };
        let leg = if net.contains(stop.node) { net.drive_time(node, stop.node) } else { f64::INFINITY };
        let arrival = time + leg;
        total += leg;
        if !close(arrival, stop.arrival) {
            out.push(Violation::TimeContinuity { stop: i, expected: arrival, actual: stop.arrival });
        }
        let service = match stop.area.kind {
            StopKind::Pickup => arrival.max(inst.ready_time(stop.area.index, walk)),
            _ => arrival,
        };
        if !close(service, stop.service) {
            out.push(Violation::TimeContinuity { stop: i, expected: service, actual: stop.service });
        }
        match stop.area.kind {
            StopKind::Pickup => {
                let deadline = inst.pickup_deadline(stop.area.index);
                if service > deadline + TIME_TOL {
                    out.push(Violation::PickupDelay { request: area.request, excess: service - deadline });
                }
                picks[stop.area.index] = Some(service);
            }
            StopKind::Dropoff => match picks[stop.area.index] {
                None => out.push(Violation::Precedence { request: area.request }),
                Some(p) => {
                    let gap = service - p;
                    let lim = inst.awaiting[stop.area.index].max_detour;
                    if gap > lim + TIME_TOL {
                        out.push(Violation::DropoffDelay { request: area.request, excess: gap - lim });
                    }
                }
            },
            StopKind::OnboardDropoff => {
                let o = &inst.onboard[stop.area.index];
                let gap = service - o.pickup_time;
                if gap > o.max_detour + TIME_TOL {
                    out.push(Violation::OnboardDropoffDelay { request: area.request, excess: gap - o.max_detour });
                }
            }
        }
        node = stop.node;
        time = service;
    }
    for r in refs {
        match seen.get(&r).copied().unwrap_or(0) {
            0 => out.push(Violation::MissingArea { area: r }),
            1 => {}
            _ => out.push(Violation::DuplicateArea { area: r }),
        }
    }
    if !close(total, plan.total_time) {
        out.push(Violation::TotalTime { expected: total, actual: plan.total_time });
    }
    out
}

// ---------------------------------------------------------------------------
// Instance dump
// ---------------------------------------------------------------------------

const DUMP_MAGIC: &str = "rvrp-instance v1";

fn fmt_points(out: &mut String, area: &Area) {
    let _ = write!(out, "{} :", area.original.0);
    for p in area.members() {
        let _ = write!(out, " {}:{}", p.node.0, p.walk);
    }
    out.push('\n');
}

impl RvrpInstance {
    /// Line-oriented text form, see [`RvrpInstance::from_dump`].
    ///
    /// ```text
    /// rvrp-instance v1
    /// start <node> <time>
    /// capacity <n>
    /// reference route_start|request_arrival
    /// walk_speed <m/s>|none
    /// pickup <request> <max_pickup_delay> <max_detour> <request_arrival> <original> : <node>:<walk> ...
    /// dropoff <request> <original> : <node>:<walk> ...
    /// onboard <request> <pickup_time> <max_detour> <original> : <node>:<walk> ...
    /// ```
    ///
    /// Each `pickup` line is followed by the `dropoff` line of the same
    /// request.
    pub fn to_dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{DUMP_MAGIC}");
        let _ = writeln!(s, "start {} {}", self.start_node.0, self.start_time);
        let _ = writeln!(s, "capacity {}", self.capacity);
        let _ = writeln!(
            s,
            "reference {}",
            match self.delay_reference {
                DelayReference::RouteStart => "route_start",
                DelayReference::RequestArrival => "request_arrival",
            }
        );
        match self.walk_speed {
            Some(w) => { let _ = writeln!(s, "walk_speed {w}"); }
            None => { let _ = writeln!(s, "walk_speed none"); }
        }
        for a in &self.awaiting {
            let _ = write!(
                s,
                "pickup {} {} {} {} ",
                a.pickup.request.0, a.max_pickup_delay, a.max_detour, a.request_arrival
            );
            fmt_points(&mut s, &a.pickup);
            let _ = write!(s, "dropoff {} ", a.dropoff.request.0);
            fmt_points(&mut s, &a.dropoff);
        }
        for o in &self.onboard {
            let _ = write!(s, "onboard {} {} {} ", o.dropoff.request.0, o.pickup_time, o.max_detour);
            fmt_points(&mut s, &o.dropoff);
        }
        s
    }

    pub fn from_dump(text: &str) -> Result<Self, RvrpError> {
        let err = |line: usize, message: &str| RvrpError::Dump { line, message: message.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, l)) if l == DUMP_MAGIC => {}
            Some((n, _)) => return Err(err(n, "missing header")),
            None => return Err(err(0, "empty dump")),
        }
        let mut inst = RvrpInstance::new(NodeId(0), 0.0, 0);
        let mut pending_pickup: Option<(usize, Area, f64, f64, f64)> = None;
        for (n, line) in lines {
            let (head, points) = match line.split_once(':') {
                Some((h, p)) if line.starts_with("pickup") || line.starts_with("dropoff") || line.starts_with("onboard") => (h, Some(p)),
                _ => (line, None),
            };
            let f: Vec<&str> = head.split_whitespace().collect();
            let num = |i: usize| -> Result<f64, RvrpError> {
                f.get(i).and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| err(n, "bad number"))
            };
            let int = |i: usize| -> Result<u32, RvrpError> {
                f.get(i).and_then(|v| v.parse::<u32>().ok()).ok_or_else(|| err(n, "bad integer"))
            };
            let area_of = |kind: AreaKind, req: u32, orig: u32| -> Result<Area, RvrpError> {
                let mut members = Vec::new();
                for tok in points.unwrap_or("").split_whitespace() {
                    let (node, walk) = tok.split_once(':').ok_or_else(|| err(n, "bad point"))?;
                    members.push(AreaPoint {
                        node: NodeId(node.parse().map_err(|_| err(n, "bad point node"))?),
                        walk: walk.parse().map_err(|_| err(n, "bad point walk"))?,
                    });
                }
                Area::new(RequestId(req), kind, NodeId(orig), members).map_err(|e| err(n, &e.to_string()))
            };
            match f.first().copied() {
                Some("start") => {
                    inst.start_node = NodeId(int(1)?);
                    inst.start_time = num(2)?;
                }
                Some("capacity") => inst.capacity = int(1)? as usize,
                Some("reference") => {
                    inst.delay_reference = match f.get(1).copied() {
                        Some("route_start") => DelayReference::RouteStart,
                        Some("request_arrival") => DelayReference::RequestArrival,
                        _ => return Err(err(n, "bad reference")),
                    }
                }
                Some("walk_speed") => {
                    inst.walk_speed = match f.get(1).copied() {
                        Some("none") => None,
                        _ => Some(num(1)?),
                    }
                }
                Some("pickup") => {
                    if pending_pickup.is_some() {
                        return Err(err(n, "pickup without dropoff"));
                    }
                    let area = area_of(AreaKind::Pickup, int(1)?, int(5)?)?;
                    pending_pickup = Some((n, area, num(2)?, num(3)?, num(4)?));
                }
                Some("dropoff") => {
                    let (_, pickup, delay, detour, arrival) =
                        pending_pickup.take().ok_or_else(|| err(n, "dropoff without pickup"))?;
                    let dropoff = area_of(AreaKind::Dropoff, int(1)?, int(2)?)?;
                    inst.awaiting.push(AwaitingRequest {
                        pickup,
                        dropoff,
                        max_pickup_delay: delay,
                        max_detour: detour,
                        request_arrival: arrival,
                    });
                }
                Some("onboard") => {
                    let dropoff = area_of(AreaKind::Dropoff, int(1)?, int(4)?)?;
                    inst.onboard.push(OnboardRequest { dropoff, pickup_time: num(2)?, max_detour: num(3)? });
                }
                _ => return Err(err(n, "unknown directive")),
            }
        }
        if let Some((n, ..)) = pending_pickup {
            return Err(err(n, "pickup without dropoff"));
        }
        Ok(inst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::generate_grid;

    fn pt(req: u32, kind: AreaKind, nodes: &[u32]) -> Area {
        let members = nodes.iter().map(|&n| AreaPoint { node: NodeId(n), walk: 0.0 }).collect();
        Area::new(RequestId(req), kind, NodeId(nodes[0]), members).unwrap()
    }

    fn awaiting(req: u32, p: &[u32], d: &[u32], delay: f64, detour: f64) -> AwaitingRequest {
        AwaitingRequest {
            pickup: pt(req, AreaKind::Pickup, p),
            dropoff: pt(req, AreaKind::Dropoff, d),
            max_pickup_delay: delay,
            max_detour: detour,
            request_arrival: 0.0,
        }
    }

    /// 5x1 line, 10 s per edge.
    fn line() -> RoadNetwork {
        generate_grid(5, 2, 100.0, 10.0).unwrap()
    }

    #[test]
    fn single_point_areas() {
        let net = line();
        let mut inst = RvrpInstance::new(NodeId(0), 100.0, 4);
        inst.awaiting.push(awaiting(1, &[2], &[4], 300.0, 600.0));
        let plan = solve(&net, &inst).unwrap().unwrap();
        assert_eq!(plan.total_time, 40.0);
        assert_eq!(plan.stops.len(), 2);
        assert_eq!(plan.stops[0].node, NodeId(2));
        assert_eq!(plan.stops[0].arrival, 120.0);
        assert_eq!(plan.stops[1].arrival, 140.0);
        assert!(validate(&net, &inst, &plan).is_empty());
    }

    #[test]
    fn unreachable_pickup_window() {
        let net = line();
        let mut inst = RvrpInstance::new(NodeId(0), 0.0, 4);
        inst.awaiting.push(awaiting(1, &[3, 4], &[9], 25.0, 600.0));
        assert_eq!(solve(&net, &inst).unwrap(), None);
        assert_eq!(solve_feasible_only(&net, &inst).unwrap(), None);
        assert_eq!(solve_bruteforce(&net, &inst).unwrap(), None);
    }

    #[test]
    fn empty_instance_is_idle_plan() {
        let net = line();
        let inst = RvrpInstance::new(NodeId(3), 7.0, 4);
        let plan = solve(&net, &inst).unwrap().unwrap();
        assert!(plan.is_idle());
        assert_eq!(plan.total_time, 0.0);
    }

    #[test]
    fn chooses_nearest_point() {
        let net = line();
        let mut inst = RvrpInstance::new(NodeId(0), 0.0, 4);
        inst.awaiting.push(awaiting(1, &[3, 1], &[4, 9], 300.0, 600.0));
        let plan = solve(&net, &inst).unwrap().unwrap();
        assert_eq!(plan.stops[0].node, NodeId(1));
        assert_eq!(plan.stops[1].node, NodeId(4));
        assert_eq!(plan.total_time, 40.0);
        assert_eq!(Some(plan), solve_bruteforce(&net, &inst).unwrap());
    }

    #[test]
    fn invalid_node_is_an_error() {
        let net = line();
        let mut inst = RvrpInstance::new(NodeId(0), 0.0, 4);
        inst.awaiting.push(awaiting(1, &[99], &[4], 300.0, 600.0));
        assert!(matches!(solve(&net, &inst), Err(RvrpError::InvalidNode { .. })));
    }

    #[test]
    fn capacity_is_checked() {
        let net = line();
        let mut inst = RvrpInstance::new(NodeId(0), 0.0, 1);
        inst.awaiting.push(awaiting(1, &[1], &[4], 300.0, 600.0));
        inst.awaiting.push(awaiting(2, &[2], &[3], 300.0, 600.0));
        assert!(matches!(solve(&net, &inst), Err(RvrpError::CapacityExceeded { .. })));
    }

    #[test]
    fn bruteforce_guard() {
        let net = generate_grid(5, 5, 100.0, 10.0).unwrap();
        let mut inst = RvrpInstance::new(NodeId(0), 0.0, 4);
        inst.awaiting.push(awaiting(1, &[1, 2, 3, 4, 5, 6, 7], &[10, 11, 12, 13, 14, 15], 300.0, 600.0));
        assert_eq!(solve_bruteforce(&net, &inst), Err(RvrpError::BruteForceGuard(13)));
    }

    #[test]
    fn validate_flags_precedence_and_delay() {
        let net = line();
        let mut inst = RvrpInstance::new(NodeId(0), 0.0, 4);
        inst.awaiting.push(awaiting(1, &[2], &[4], 300.0, 600.0));
        let plan = solve(&net, &inst).unwrap().unwrap();

        let mut swapped = plan.clone();
        swapped.stops.swap(0, 1);
        // Re-time so only precedence is wrong.
        swapped.stops[0].arrival = 40.0;
        swapped.stops[0].service = 40.0;
        swapped.stops[1].arrival = 60.0;
        swapped.stops[1].service = 60.0;
        swapped.total_time = 60.0;
        let v = validate(&net, &inst, &swapped);
        assert!(v.iter().any(|x| matches!(x, Violation::Precedence { .. })), "{v:?}");

        // Pickup reached at exactly the limit plus one second.
        let mut tight = inst.clone();
        tight.awaiting[0].max_pickup_delay = 19.0;
        let v = validate(&net, &tight, &plan);
        assert!(v.iter().any(|x| matches!(x, Violation::PickupDelay { .. })), "{v:?}");
        tight.awaiting[0].max_pickup_delay = 20.0;
        assert!(validate(&net, &tight, &plan).is_empty());
    }

    #[test]
    fn walker_wait_delays_pickup() {
        let net = line();
        let mut inst = RvrpInstance::new(NodeId(0), 0.0, 4);
        let mut a = awaiting(1, &[1], &[4], 300.0, 600.0);
        a.pickup = Area::new(
            RequestId(1),
            AreaKind::Pickup,
            NodeId(2),
            vec![AreaPoint { node: NodeId(1), walk: 100.0 }, AreaPoint { node: NodeId(2), walk: 0.0 }],
        )
        .unwrap();
        inst.awaiting.push(a);
        inst.walk_speed = Some(1.0);
        let plan = solve(&net, &inst).unwrap().unwrap();
        // Node 1 needs a 100 s walk; node 2 is 20 s away with no walk.
        assert_eq!(plan.stops[0].node, NodeId(1));
        assert_eq!(plan.stops[0].arrival, 10.0);
        assert_eq!(plan.stops[0].service, 100.0);
        assert_eq!(plan.stops[1].arrival, 130.0);
        assert!(validate(&net, &inst, &plan).is_empty());
        assert_eq!(Some(plan), solve_bruteforce(&net, &inst).unwrap());
    }

    #[test]
    fn dump_round_trip() {
        let mut inst = RvrpInstance::new(NodeId(3), 61.5, 4);
        inst.awaiting.push(awaiting(7, &[1, 2], &[4], 300.0, 600.0));
        inst.onboard.push(OnboardRequest { dropoff: pt(9, AreaKind::Dropoff, &[8, 9]), pickup_time: 12.25, max_detour: 600.0 });
        inst.walk_speed = Some(1.0);
        inst.delay_reference = DelayReference::RequestArrival;
        let text = inst.to_dump();
        assert_eq!(RvrpInstance::from_dump(&text).unwrap(), inst);
        assert!(RvrpInstance::from_dump("nope").is_err());
    }
}
