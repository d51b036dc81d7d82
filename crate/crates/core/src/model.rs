//! Requests, vehicles and service-constraint parameters.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combos::Combo;
use crate::network::NodeId;
use crate::rvrp::{RoutePlan, StopKind};

/// Scalar value of an action. Always finite.
pub type Reward = f64;

/// Default walking speed in m/s. Chosen so that `max_walk = delta * 1.0`
/// reproduces the 300 s / 0.3 km pairing.
pub const DEFAULT_WALK_SPEED: f64 = 1.0;
pub const DEFAULT_EPOCH_LEN: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestId(pub u32);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("request {0} has identical pickup and drop-off")]
    DegenerateRequest(RequestId),
}

/// A single-passenger trip request.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub pickup: NodeId,
    pub dropoff: NodeId,
    /// Seconds since simulation start.
    pub arrival_time: f64,
}

impl Request {
    pub fn new(
        id: RequestId,
        pickup: NodeId,
        dropoff: NodeId,
        arrival_time: f64,
    ) -> Result<Self, ModelError> {
        if pickup == dropoff {
            return Err(ModelError::DegenerateRequest(id));
        }
        if !(arrival_time >= 0.0 && arrival_time.is_finite()) {
            return Err(ModelError::Argument(format!(
                "request {id} has invalid arrival time {arrival_time}"
            )));
        }
        Ok(Self { id, pickup, dropoff, arrival_time })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnboardPassenger {
    pub request: RequestId,
    pub pickup_time: f64,
}

/// Vehicle state between decisions.
///
/// `location` is the node the vehicle is at, or the next node it reaches if
/// it is mid-edge; `ready_at` is when it is (or will be) there. `plan` holds
/// the remaining stops, so requests assigned but not yet picked up are the
/// plan's pickup stops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub capacity: usize,
    pub location: NodeId,
    pub ready_at: f64,
    pub plan: RoutePlan,
    pub onboard: Vec<OnboardPassenger>,
}

impl Vehicle {
    pub fn idle(id: VehicleId, capacity: usize, location: NodeId, now: f64) -> Self {
        Self {
            id,
            capacity,
            location,
            ready_at: now,
            plan: RoutePlan::idle(location, now),
            onboard: Vec::new(),
        }
    }

    /// Requests assigned to this vehicle that are still waiting for pickup.
    pub fn committed(&self) -> Vec<RequestId> {
        self.plan
            .stops
            .iter()
            .filter(|s| s.area.kind == StopKind::Pickup)
            .map(|s| s.request)
            .collect()
    }

    pub fn load(&self) -> usize {
        self.onboard.len() + self.committed().len()
    }

    pub fn free_capacity(&self) -> usize {
        self.capacity.saturating_sub(self.load())
    }
}

/// Delay and walking parameters shared by all requests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayParams {
    /// Maximum pickup delay, seconds.
    pub pickup_delay: f64,
    /// Maximum time between pickup and drop-off, seconds.
    pub detour_delay: f64,
    /// Decision window length, seconds.
    pub epoch_len: f64,
    /// Passenger walking speed, m/s.
    pub walk_speed: f64,
    /// Maximum walking distance, meters.
    pub max_walk: f64,
}

impl DelayParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.pickup_delay)
            || !positive(self.detour_delay)
            || !positive(self.epoch_len)
            || !positive(self.walk_speed)
            || !(self.max_walk >= 0.0 && self.max_walk.is_finite())
        {
            return Err(ModelError::Argument(format!("invalid delay parameters {self:?}")));
        }
        Ok(())
    }
}

/// Detour limit of twice the pickup delay, 60 s epochs, 1 m/s walking.
pub fn default_params(delta: f64) -> Result<DelayParams, ModelError> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(ModelError::Argument(format!("pickup delay must be positive, got {delta}")));
    }
    Ok(DelayParams {
        pickup_delay: delta,
        detour_delay: 2.0 * delta,
        epoch_len: DEFAULT_EPOCH_LEN,
        walk_speed: DEFAULT_WALK_SPEED,
        max_walk: delta * DEFAULT_WALK_SPEED,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    ServedCount,
    NegTravelTime,
}

impl std::str::FromStr for Objective {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "served_count" => Ok(Objective::ServedCount),
            "neg_travel_time" => Ok(Objective::NegTravelTime),
            other => Err(ModelError::Argument(format!("unknown objective {other:?}"))),
        }
    }
}

pub fn immediate_reward(combo: &Combo, plan: &RoutePlan, objective: Objective) -> Reward {
    match objective {
        Objective::ServedCount => combo.len() as f64,
        Objective::NegTravelTime => -plan.total_time,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_examples() {
        let p = default_params(300.0).unwrap();
        assert_eq!(p.detour_delay, 600.0);
        assert_eq!(p.max_walk, 300.0);
        assert_eq!(p.epoch_len, 60.0);
        let p = default_params(420.0).unwrap();
        assert_eq!(p.max_walk, 420.0);
        assert!(default_params(0.0).is_err());
        assert!(default_params(-5.0).is_err());
        for d in [1.0, 300.0, 360.0, 420.0, 1234.5] {
            let p = default_params(d).unwrap();
            assert_eq!(p.max_walk / p.pickup_delay, p.walk_speed);
        }
    }

    #[test]
    fn reward_examples() {
        let idle = RoutePlan::idle(NodeId(0), 0.0);
        assert_eq!(immediate_reward(&Combo::empty(), &idle, Objective::ServedCount), 0.0);
        let two = Combo::new(vec![RequestId(1), RequestId(2)]);
        assert_eq!(immediate_reward(&two, &idle, Objective::ServedCount), 2.0);
        let mut plan = RoutePlan::idle(NodeId(0), 0.0);
        plan.total_time = 700.0;
        assert_eq!(immediate_reward(&two, &plan, Objective::NegTravelTime), -700.0);
    }

    #[test]
    fn served_count_is_additive_over_disjoint_combos() {
        let a = Combo::new(vec![RequestId(1), RequestId(4)]);
        let b = Combo::new(vec![RequestId(2)]);
        let union = Combo::new(vec![RequestId(1), RequestId(2), RequestId(4)]);
        let plan = RoutePlan::idle(NodeId(0), 0.0);
        let sum = immediate_reward(&a, &plan, Objective::ServedCount)
            + immediate_reward(&b, &plan, Objective::ServedCount);
        assert_eq!(sum, immediate_reward(&union, &plan, Objective::ServedCount));
    }

    #[test]
    fn request_validation() {
        assert!(Request::new(RequestId(1), NodeId(2), NodeId(2), 0.0).is_err());
        assert!(Request::new(RequestId(1), NodeId(2), NodeId(3), -1.0).is_err());
        assert!(Request::new(RequestId(1), NodeId(2), NodeId(3), 5.0).is_ok());
    }
}
