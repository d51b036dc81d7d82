//! Epoch-driven simulation.
//!
//! Each epoch at decision time `T = epoch * epoch_len`:
//!
//! 1. requests with arrival `<= T` join the pending pool and get areas
//!    according to the [`Mode`];
//! 2. every vehicle enumerates feasible combinations of nearby pending
//!    requests, each routed exactly, and scores them as
//!    `reward + gamma * value(post-decision features)`;
//! 3. one joint assignment picks an action per vehicle;
//! 4. experiences feed the value network when training is on;
//! 5. pending requests that can no longer be picked up in time are rejected;
//! 6. vehicles drive for one epoch.
//!
//! Once assigned, a request's pickup node is fixed (the passenger starts
//! walking to it). Its drop-off node may still change when the vehicle
//! re-plans.

mod experiment;
mod motion;
mod output;
mod requests;

pub use experiment::{compare, train_value, ComparePlan, Comparison, Improvement, ModeSummary, RunResult};
pub use motion::{simulate_motion, EventKind, MotionEvent, MotionOutcome};
pub use output::{read_summary, write_epoch_csv, write_summary, Summary};
pub use requests::{gen_requests, read_requests, write_requests, Hotspot, HotspotProfile, RequestStream};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::areas::{build_request_areas, vehicle_reachable_points, Area, AreaError, AreaKind, AreaPoint};
use crate::assignment::{solve_assignment, AssignmentError, JointAssignment, ScoredAction};
use crate::combos::{generate_feasible_combos, Combo, ComboStats};
use crate::model::{immediate_reward, DelayParams, Objective, Request, RequestId, Reward, Vehicle, VehicleId};
use crate::network::{NodeId, RoadNetwork};
use crate::rvrp::{
    AwaitingRequest, DelayReference, LegBoundCache, OnboardRequest, RoutePlan, RvrpError, RvrpInstance, RvrpSolver,
    StopKind,
};
use crate::valuefn::{
    post_decision_features, Experience, ReplayBuffer, StateFeatures, TrainConfig, ValueError, ValueNet,
    DEFAULT_REPLAY_CAPACITY, DEFAULT_WIDTHS,
};

const AUDIT_TOL: f64 = 1e-6;
const MAX_AUDIT_MESSAGES: usize = 20;

/// Sub-stream ids for the run's random sources.
pub mod streams {
    pub const REQUESTS: u64 = 1;
    pub const VEHICLES: u64 = 2;
    pub const NET_INIT: u64 = 3;
    pub const REPLAY: u64 = 4;
}

/// Independent generator for one purpose, derived from the run seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("epoch {epoch}: route solver failed on {combo}: {source}")]
    Rvrp { epoch: usize, combo: Combo, source: RvrpError },
    #[error("epoch {epoch}: assignment failed: {source}")]
    Assignment { epoch: usize, source: AssignmentError },
    #[error(transparent)]
    Area(#[from] AreaError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("internal consistency: {0}")]
    Consistency(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Which sides of a trip may move within walking distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Flexible,
    Fixed,
    PickupOnly,
    DropoffOnly,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Flexible, Mode::Fixed, Mode::PickupOnly, Mode::DropoffOnly];

    /// Pickup and drop-off area radii in meters.
    pub fn radii(self, max_walk: f64) -> (f64, f64) {
        match self {
            Mode::Flexible => (max_walk, max_walk),
            Mode::Fixed => (0.0, 0.0),
            Mode::PickupOnly => (max_walk, 0.0),
            Mode::DropoffOnly => (0.0, max_walk),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Flexible => "flexible",
            Mode::Fixed => "fixed",
            Mode::PickupOnly => "pickup_only",
            Mode::DropoffOnly => "dropoff_only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SimError::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: DelayParams,
    pub num_vehicles: usize,
    pub capacity: usize,
    /// Number of epochs.
    pub horizon: usize,
    pub seed: u64,
    pub mode: Mode,
    pub objective: Objective,
    pub gamma: f64,
    pub training: bool,
    pub delay_reference: DelayReference,
    /// Nearest pending requests each vehicle considers per epoch.
    pub candidate_limit: usize,
    pub batch_size: usize,
    pub train_steps_per_epoch: usize,
    pub learning_rate: f64,
    /// When false, per-phase timings are reported as zero so outputs are
    /// byte-identical across runs.
    pub record_timings: bool,
}

impl SimConfig {
    pub fn new(params: DelayParams) -> Self {
        Self {
            params,
            num_vehicles: 50,
            capacity: 4,
            horizon: 200,
            seed: 0,
            mode: Mode::Flexible,
            objective: Objective::ServedCount,
            gamma: 0.9,
            training: true,
            delay_reference: DelayReference::RouteStart,
            candidate_limit: 4,
            batch_size: 32,
            train_steps_per_epoch: 1,
            learning_rate: 1e-3,
            record_timings: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if self.num_vehicles == 0 || self.capacity == 0 || self.horizon == 0 {
            return Err(SimError::Config("vehicle count, capacity and horizon must be positive".into()));
        }
        if self.capacity > crate::rvrp::MAX_AREAS / 2 {
            return Err(SimError::Config(format!("capacity above {} is not supported", crate::rvrp::MAX_AREAS / 2)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(SimError::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if self.training && (self.batch_size == 0 || !(self.learning_rate > 0.0 && self.learning_rate.is_finite())) {
            return Err(SimError::Config("training needs a positive batch size and learning rate".into()));
        }
        Ok(())
    }

    fn value_needed(&self) -> bool {
        self.gamma > 0.0 || self.training
    }
}

/// A request a vehicle has accepted and not yet dropped off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveRequest {
    pub request: Request,
    pub vehicle: VehicleId,
    /// Fixed pickup node and the passenger's walk to it.
    pub pickup_point: AreaPoint,
    /// Absolute latest pickup time.
    pub pickup_deadline: f64,
    pub dropoff_area: Area,
    pub assigned_at: f64,
    pub picked_up_at: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub clock: f64,
    pub epoch: usize,
    pub vehicles: Vec<Vehicle>,
    pub pending: BTreeMap<RequestId, Request>,
    pub active: BTreeMap<RequestId, ActiveRequest>,
}

/// Pickup and drop-off areas of pending requests.
pub type AreaBook = BTreeMap<RequestId, (Area, Area)>;

pub fn build_area_book<'a>(
    net: &RoadNetwork,
    requests: impl IntoIterator<Item = &'a Request>,
    mode: Mode,
    params: &DelayParams,
) -> Result<AreaBook, SimError> {
    let (pr, dr) = mode.radii(params.max_walk);
    requests
        .into_iter()
        .map(|r| Ok((r.id, build_request_areas(net, r, pr, dr)?)))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub conservation_violations: usize,
    pub capacity_violations: usize,
    pub pickup_delay_violations: usize,
    pub detour_violations: usize,
    /// First few violation descriptions.
    pub messages: Vec<String>,
}

impl AuditReport {
    pub fn total(&self) -> usize {
        self.conservation_violations + self.capacity_violations + self.pickup_delay_violations + self.detour_violations
    }

    fn note(&mut self, msg: String) {
        if self.messages.len() < MAX_AUDIT_MESSAGES {
            self.messages.push(msg);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Drop-offs completed during the epoch.
    pub served: usize,
    pub rejected: usize,
    /// Pending plus assigned requests at the end of the epoch.
    pub active: usize,
    pub distance_m: f64,
    pub assign_ms: f64,
    pub combo_ms: f64,
    pub rvrp_ms: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub combo_ms: f64,
    pub rvrp_ms: f64,
    pub assign_ms: f64,
    pub train_ms: f64,
    pub motion_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ingested: usize,
    pub served: usize,
    pub rejected: usize,
    /// Pending or assigned but not yet dropped off at the end.
    pub in_flight: usize,
    pub total_distance_m: f64,
    /// Total driving distance over served requests (0 when none served).
    pub avg_distance_per_served_m: f64,
    pub per_vehicle_distance_m: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// The request stream ended before the horizon.
    pub truncated: bool,
    pub audit: AuditReport,
    /// Epochs whose assignment search hit its node limit.
    pub unproven_assignments: usize,
    pub phase_ms: PhaseTimes,
}

/// Candidate actions of one vehicle with what scoring needed.
#[derive(Clone, Debug)]
pub struct VehicleActions {
    pub actions: Vec<ScoredAction>,
    pub rewards: Vec<Reward>,
    pub features: Vec<StateFeatures>,
    pub stats: ComboStats,
    pub rvrp_ms: f64,
}

#[derive(Clone, Debug)]
pub struct EpochDecision {
    pub per_vehicle: Vec<VehicleActions>,
    pub assignment: JointAssignment,
    pub combo_ms: f64,
    pub rvrp_ms: f64,
    pub assign_ms: f64,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Existing duties of `v` as an instance starting at `(location, t_v)`.
fn base_instance(config: &SimConfig, state: &SimState, v: &Vehicle, t_v: f64) -> Result<RvrpInstance, SimError> {
    let params = &config.params;
    let mut inst = RvrpInstance::new(v.location, t_v, v.capacity);
    inst.delay_reference = config.delay_reference;
    inst.walk_speed = Some(params.walk_speed);
    let mut committed = v.committed();
    committed.sort_unstable();
    for r in committed {
        let a = state
            .active
            .get(&r)
            .ok_or_else(|| SimError::Consistency(format!("{} plans pickup of unknown request {r}", v.id)))?;
        let reference = match config.delay_reference {
            DelayReference::RouteStart => t_v,
            DelayReference::RequestArrival => a.request.arrival_time,
        };
        inst.awaiting.push(AwaitingRequest {
            pickup: Area::new(r, AreaKind::Pickup, a.pickup_point.node, vec![a.pickup_point])?,
            dropoff: a.dropoff_area.clone(),
            max_pickup_delay: a.pickup_deadline - reference,
            max_detour: params.detour_delay,
            request_arrival: a.request.arrival_time,
        });
    }
    for p in &v.onboard {
        let a = state
            .active
            .get(&p.request)
            .ok_or_else(|| SimError::Consistency(format!("{} carries unknown request {}", v.id, p.request)))?;
        inst.onboard.push(OnboardRequest {
            dropoff: a.dropoff_area.clone(),
            pickup_time: p.pickup_time,
            max_detour: params.detour_delay,
        });
    }
    Ok(inst)
}

/// Nearest pending requests by drive time to their original pickup node,
/// keeping those with some pickup point within reach. The ranking ignores
/// areas, so a larger area never displaces a candidate.
fn candidates(net: &RoadNetwork, config: &SimConfig, state: &SimState, book: &AreaBook, v: &Vehicle) -> Vec<RequestId> {
    let mut ranked: Vec<(f64, RequestId)> = state
        .pending
        .values()
        .map(|r| (net.drive_time(v.location, r.pickup), r.id))
        .filter(|(d, _)| d.is_finite())
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(config.candidate_limit);
    ranked
        .into_iter()
        .filter(|(_, id)| {
            book.get(id)
                .is_some_and(|(p, _)| !vehicle_reachable_points(net, v, p, &config.params).is_empty())
        })
        .map(|(_, id)| id)
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn vehicle_actions(
    net: &RoadNetwork,
    config: &SimConfig,
    state: &SimState,
    book: &AreaBook,
    value: Option<&ValueNet>,
    cache: &LegBoundCache,
    v: &Vehicle,
) -> Result<VehicleActions, SimError> {
    let params = &config.params;
    let t_v = v.ready_at.max(state.clock);
    let base = base_instance(config, state, v, t_v)?;
    let current = if v.plan.stops.is_empty() { RoutePlan::idle(v.location, t_v) } else { v.plan.clone() };
    let cands = candidates(net, config, state, book, v);
    let room = v.capacity.saturating_sub(v.load());
    let solver = RvrpSolver::with_cache(net, cache);
    let mut rvrp_ms = 0.0;
    let oracle = |combo: &Combo| -> Result<Option<RoutePlan>, RvrpError> {
        let mut inst = base.clone();
        for id in combo.ids() {
            let (p, d) = &book[id];
            inst.awaiting.push(AwaitingRequest {
                pickup: p.clone(),
                dropoff: d.clone(),
                max_pickup_delay: params.pickup_delay,
                max_detour: params.detour_delay,
                request_arrival: state.pending[id].arrival_time,
            });
        }
        let start = Instant::now();
        let plan = solver.solve(&inst);
        rvrp_ms += ms(start);
        plan
    };
    let found = generate_feasible_combos(room, &cands, current, oracle)
        .map_err(|e| SimError::Rvrp { epoch: state.epoch, combo: e.combo, source: e.source })?;
    let mut out = VehicleActions {
        actions: Vec::with_capacity(found.combos.len()),
        rewards: Vec::with_capacity(found.combos.len()),
        features: Vec::with_capacity(found.combos.len()),
        stats: found.stats,
        rvrp_ms,
    };
    for (combo, plan) in found.combos {
        let reward = immediate_reward(&combo, &plan, config.objective);
        let f = post_decision_features(net, v, &combo, &plan, state.epoch, config.horizon, params.pickup_delay);
        let future = match value {
            Some(net) if config.gamma > 0.0 => config.gamma * net.value(&f),
            _ => 0.0,
        };
        out.actions.push(ScoredAction { vehicle: v.id, combo, plan, score: reward + future });
        out.rewards.push(reward);
        out.features.push(f);
    }
    Ok(out)
}

/// Scores every vehicle's feasible actions and solves the joint assignment.
/// Depends only on its arguments, so two modes can be compared on one state.
pub fn decide(
    net: &RoadNetwork,
    config: &SimConfig,
    state: &SimState,
    book: &AreaBook,
    value: Option<&ValueNet>,
    cache: &LegBoundCache,
) -> Result<EpochDecision, SimError> {
    let start = Instant::now();
    let per_vehicle: Vec<VehicleActions> = state
        .vehicles
        .par_iter()
        .map(|v| vehicle_actions(net, config, state, book, value, cache, v))
        .collect::<Result<_, _>>()?;
    let combo_ms = ms(start);
    let rvrp_ms = per_vehicle.iter().map(|a| a.rvrp_ms).sum();
    let start = Instant::now();
    let lists: Vec<Vec<ScoredAction>> = per_vehicle.iter().map(|a| a.actions.clone()).collect();
    let requests: Vec<RequestId> = state.pending.keys().copied().collect();
    let assignment = solve_assignment(&lists, &requests)
        .map_err(|source| SimError::Assignment { epoch: state.epoch, source })?;
    Ok(EpochDecision { per_vehicle, assignment, combo_ms, rvrp_ms, assign_ms: ms(start) })
}

pub struct SimOutcome {
    pub metrics: Metrics,
    pub value: Option<ValueNet>,
}

pub struct Simulation<'a> {
    net: &'a RoadNetwork,
    config: SimConfig,
    stream: RequestStream,
    cursor: usize,
    state: SimState,
    book: AreaBook,
    value: Option<ValueNet>,
    replay: ReplayBuffer,
    last_features: Vec<Option<StateFeatures>>,
    metrics: Metrics,
    cache: LegBoundCache,
    finished: bool,
}

impl<'a> Simulation<'a> {
    /// Places vehicles uniformly at random. A value network is created from
    /// the seed when one is needed and none is given.
    pub fn new(
        net: &'a RoadNetwork,
        config: SimConfig,
        stream: RequestStream,
        value: Option<ValueNet>,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let mut rng = rng_stream(config.seed, streams::VEHICLES);
        let vehicles = (0..config.num_vehicles)
            .map(|i| {
                let node = NodeId(rng.random_range(0..net.node_count() as u32));
                Vehicle::idle(VehicleId(i as u32), config.capacity, node, 0.0)
            })
            .collect();
        let value = match value {
            Some(v) => Some(v),
            None if config.value_needed() => {
                let seed = rng_stream(config.seed, streams::NET_INIT).random();
                let train = TrainConfig { learning_rate: config.learning_rate, gamma: config.gamma, ..TrainConfig::default() };
                Some(ValueNet::new(&DEFAULT_WIDTHS, seed, train)?)
            }
            None => None,
        };
        let metrics = Metrics { per_vehicle_distance_m: vec![0.0; config.num_vehicles], ..Metrics::default() };
        Ok(Self {
            net,
            replay: ReplayBuffer::new(DEFAULT_REPLAY_CAPACITY, rng_stream(config.seed, streams::REPLAY)),
            last_features: vec![None; config.num_vehicles],
            config,
            stream,
            cursor: 0,
            state: SimState {
                clock: 0.0,
                epoch: 0,
                vehicles,
                pending: BTreeMap::new(),
                active: BTreeMap::new(),
            },
            book: AreaBook::new(),
            value,
            metrics,
            cache: LegBoundCache::new(),
            finished: false,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn area_book(&self) -> &AreaBook {
        &self.book
    }

    pub fn value(&self) -> Option<&ValueNet> {
        self.value.as_ref()
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    /// Ingests requests due at the next decision time. Idempotent; [`step`]
    /// calls it itself.
    ///
    /// [`step`]: Simulation::step
    pub fn ingest(&mut self) -> Result<(), SimError> {
        let now = self.state.epoch as f64 * self.config.params.epoch_len;
        self.state.clock = now;
        let (pr, dr) = self.config.mode.radii(self.config.params.max_walk);
        while let Some(r) = self.stream.requests.get(self.cursor) {
            if r.arrival_time > now {
                break;
            }
            self.book.insert(r.id, build_request_areas(self.net, r, pr, dr)?);
            self.state.pending.insert(r.id, *r);
            self.metrics.ingested += 1;
            self.cursor += 1;
        }
        Ok(())
    }

    /// Runs one epoch. Returns `None` once the horizon is reached or the
    /// stream has ended.
    pub fn step(&mut self) -> Result<Option<EpochRecord>, SimError> {
        if self.finished || self.state.epoch >= self.config.horizon {
            self.finished = true;
            return Ok(None);
        }
        let epoch_len = self.config.params.epoch_len;
        let now = self.state.epoch as f64 * epoch_len;
        if now > self.stream.horizon_s {
            self.metrics.truncated = true;
            self.finished = true;
            return Ok(None);
        }
        self.ingest()?;

        self.cache.clear();
        let decision = decide(self.net, &self.config, &self.state, &self.book, self.value.as_ref(), &self.cache)?;
        if !decision.assignment.proven_optimal {
            self.metrics.unproven_assignments += 1;
        }
        let start = Instant::now();
        self.apply(&decision)?;
        let train_ms = ms(start);

        // Anything that cannot be assigned by the next decision is dropped.
        let horizon_next = now + epoch_len;
        let expired: Vec<RequestId> = self
            .state
            .pending
            .values()
            .filter(|r| horizon_next - r.arrival_time > self.config.params.pickup_delay)
            .map(|r| r.id)
            .collect();
        for id in &expired {
            self.state.pending.remove(id);
            self.book.remove(id);
        }
        self.metrics.rejected += expired.len();

        let start = Instant::now();
        let (served, distance) = self.move_vehicles(now)?;
        let motion_ms = ms(start);
        self.audit_conservation();

        let timed = |v: f64| if self.config.record_timings { v } else { 0.0 };
        let record = EpochRecord {
            epoch: self.state.epoch,
            served,
            rejected: expired.len(),
            active: self.state.pending.len() + self.state.active.len(),
            distance_m: distance,
            assign_ms: timed(decision.assign_ms),
            combo_ms: timed(decision.combo_ms),
            rvrp_ms: timed(decision.rvrp_ms),
            objective: decision.assignment.objective,
        };
        let p = &mut self.metrics.phase_ms;
        p.combo_ms += record.combo_ms;
        p.rvrp_ms += record.rvrp_ms;
        p.assign_ms += record.assign_ms;
        p.train_ms += timed(train_ms);
        p.motion_ms += timed(motion_ms);
        self.metrics.epochs.push(record.clone());
        self.state.epoch += 1;
        self.state.clock = self.state.epoch as f64 * epoch_len;
        Ok(Some(record))
    }

    /// Commits the chosen actions and trains on the resulting transitions.
    fn apply(&mut self, decision: &EpochDecision) -> Result<(), SimError> {
        let now = self.state.clock;
        let mut experiences = Vec::new();
        for (i, acts) in decision.per_vehicle.iter().enumerate() {
            let vid = self.state.vehicles[i].id;
            let chosen = decision
                .assignment
                .choices
                .get(&vid)
                .ok_or_else(|| SimError::Consistency(format!("assignment skipped {vid}")))?;
            let k = acts
                .actions
                .iter()
                .position(|a| a.combo == chosen.combo)
                .ok_or_else(|| SimError::Consistency(format!("{vid} assigned an action it did not offer")))?;
            if let Some(prev) = self.last_features[i] {
                experiences.push(Experience { features_post: prev, reward_next: acts.rewards[k], features_post_next: acts.features[k] });
            }
            self.last_features[i] = Some(acts.features[k]);
            if chosen.combo.is_empty() {
                continue;
            }
            let v = &mut self.state.vehicles[i];
            for &id in chosen.combo.ids() {
                let request = self.state.pending.remove(&id).ok_or_else(|| {
                    SimError::Consistency(format!("{id} assigned but not pending"))
                })?;
                let (pickup_area, dropoff_area) = self.book.remove(&id).expect("pending requests have areas");
                let stop = chosen
                    .plan
                    .stops
                    .iter()
                    .find(|s| s.request == id && s.area.kind == StopKind::Pickup)
                    .ok_or_else(|| SimError::Consistency(format!("plan for {vid} lacks pickup of {id}")))?;
                let walk = pickup_area.walk_to(stop.node).expect("plan nodes come from the area");
                self.state.active.insert(
                    id,
                    ActiveRequest {
                        request,
                        vehicle: vid,
                        pickup_point: AreaPoint { node: stop.node, walk },
                        pickup_deadline: stop.deadline,
                        dropoff_area,
                        assigned_at: now,
                        picked_up_at: None,
                    },
                );
            }
            v.ready_at = v.ready_at.max(now);
            v.plan = chosen.plan.clone();
        }
        if self.config.training {
            let value = self.value.as_mut().expect("training implies a value network");
            for e in experiences {
                self.replay.push(e);
            }
            if self.replay.len() >= self.config.batch_size {
                for _ in 0..self.config.train_steps_per_epoch {
                    let batch = self.replay.sample(self.config.batch_size);
                    value.td_train(&batch, self.config.gamma, self.config.learning_rate)?;
                }
            }
        }
        Ok(())
    }

    /// Drives every vehicle for one epoch and audits the events.
    fn move_vehicles(&mut self, now: f64) -> Result<(usize, f64), SimError> {
        let epoch_len = self.config.params.epoch_len;
        let detour = self.config.params.detour_delay;
        let mut served = 0;
        let mut distance = 0.0;
        for (i, v) in self.state.vehicles.iter_mut().enumerate() {
            let out = simulate_motion(self.net, v, now, epoch_len)?;
            distance += out.distance_m;
            self.metrics.per_vehicle_distance_m[i] += out.distance_m;
            for e in out.events {
                let audit = &mut self.metrics.audit;
                if e.onboard_after > v.capacity {
                    audit.capacity_violations += 1;
                    audit.note(format!("{} carries {} at {}", v.id, e.onboard_after, e.time));
                }
                match e.kind {
                    EventKind::Pickup => {
                        let a = self.state.active.get_mut(&e.request).ok_or_else(|| {
                            SimError::Consistency(format!("pickup of unknown request {}", e.request))
                        })?;
                        a.picked_up_at = Some(e.time);
                        let ready = a.request.arrival_time + a.pickup_point.walk / self.config.params.walk_speed;
                        if e.time > a.pickup_deadline + AUDIT_TOL || e.time + AUDIT_TOL < ready {
                            audit.pickup_delay_violations += 1;
                            audit.note(format!("{} picked up at {} (deadline {})", e.request, e.time, a.pickup_deadline));
                        }
                    }
                    EventKind::Dropoff => {
                        let a = self.state.active.remove(&e.request).ok_or_else(|| {
                            SimError::Consistency(format!("drop-off of unknown request {}", e.request))
                        })?;
                        let picked = a.picked_up_at.unwrap_or(f64::NAN);
                        if !(e.time - picked <= detour + AUDIT_TOL) {
                            audit.detour_violations += 1;
                            audit.note(format!("{} rode {} s", e.request, e.time - picked));
                        }
                        served += 1;
                    }
                }
            }
        }
        self.metrics.served += served;
        self.metrics.total_distance_m += distance;
        Ok((served, distance))
    }

    fn audit_conservation(&mut self) {
        let m = &mut self.metrics;
        let in_flight = self.state.pending.len() + self.state.active.len();
        if m.served + m.rejected + in_flight != m.ingested {
            m.audit.conservation_violations += 1;
            m.audit.note(format!(
                "epoch {}: served {} + rejected {} + in flight {in_flight} != ingested {}",
                self.state.epoch, m.served, m.rejected, m.ingested
            ));
        }
        let carried: usize = self.state.vehicles.iter().map(|v| v.committed().len() + v.onboard.len()).sum();
        let owners_ok = self.state.vehicles.iter().all(|v| {
            v.committed().iter().chain(v.onboard.iter().map(|p| &p.request)).all(|r| {
                self.state.active.get(r).is_some_and(|a| a.vehicle == v.id)
            })
        });
        if carried != self.state.active.len() || !owners_ok {
            m.audit.conservation_violations += 1;
            m.audit.note(format!(
                "epoch {}: vehicles carry {carried} requests, {} active",
                self.state.epoch,
                self.state.active.len()
            ));
        }
    }

    pub fn run(mut self) -> Result<SimOutcome, SimError> {
        while self.step()?.is_some() {}
        Ok(self.finish())
    }

    pub fn finish(mut self) -> SimOutcome {
        let m = &mut self.metrics;
        m.in_flight = self.state.pending.len() + self.state.active.len();
        m.avg_distance_per_served_m = if m.served > 0 { m.total_distance_m / m.served as f64 } else { 0.0 };
        SimOutcome { metrics: self.metrics, value: self.value }
    }
}

/// Runs a whole simulation.
pub fn run(
    config: SimConfig,
    net: &RoadNetwork,
    stream: RequestStream,
    value: Option<ValueNet>,
) -> Result<SimOutcome, SimError> {
    Simulation::new(net, config, stream, value)?.run()
}
