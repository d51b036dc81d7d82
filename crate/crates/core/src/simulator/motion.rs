//! Moving vehicles along their plans over one decision window.

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::model::{OnboardPassenger, RequestId, Vehicle};
use crate::network::{NodeId, RoadNetwork};
use crate::rvrp::StopKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Pickup,
    Dropoff,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionEvent {
    pub kind: EventKind,
    pub request: RequestId,
    pub node: NodeId,
    pub time: f64,
    /// Passengers on board right after the event.
    pub onboard_after: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionOutcome {
    pub events: Vec<MotionEvent>,
    pub distance_m: f64,
}

/// Advances `vehicle` from `now` for `dt` seconds.
///
/// Edges are started only before the window closes, and a started edge is
/// always finished, so the vehicle ends on a node: `location` is that node
/// and `ready_at` the time it gets there. A pickup completes at the later of
/// the vehicle's arrival and the stop's `ready` time; a vehicle still waiting
/// when the window closes stays at the stop.
pub fn simulate_motion(
    net: &RoadNetwork,
    vehicle: &mut Vehicle,
    now: f64,
    dt: f64,
) -> Result<MotionOutcome, SimError> {
    let until = now + dt;
    let mut t = vehicle.ready_at.max(now);
    let mut node = vehicle.location;
    let mut out = MotionOutcome::default();
    let mut done = 0;
    'stops: for stop in &vehicle.plan.stops {
        if node != stop.node {
            let tree = net.drive_row(node);
            let path = tree.path_to(stop.node).ok_or_else(|| {
                SimError::Consistency(format!("vehicle {} cannot reach stop node {}", vehicle.id, stop.node))
            })?;
            let leg_start = t;
            for w in path.windows(2) {
                if t >= until {
                    break 'stops;
                }
                out.distance_m += net.edge_length(w[0], w[1]).ok_or_else(|| {
                    SimError::Consistency(format!("missing edge {} -> {}", w[0], w[1]))
                })?;
                t = leg_start + tree.cost(w[1]);
                node = w[1];
            }
        }
        let service = match stop.area.kind {
            StopKind::Pickup => t.max(stop.ready),
            _ => t,
        };
        if service > until {
            break;
        }
        t = service;
        match stop.area.kind {
            StopKind::Pickup => {
                vehicle.onboard.push(OnboardPassenger { request: stop.request, pickup_time: t });
                out.events.push(MotionEvent {
                    kind: EventKind::Pickup,
                    request: stop.request,
                    node,
                    time: t,
                    onboard_after: vehicle.onboard.len(),
                });
            }
            StopKind::Dropoff | StopKind::OnboardDropoff => {
                let pos = vehicle.onboard.iter().position(|p| p.request == stop.request).ok_or_else(|| {
                    SimError::Consistency(format!("vehicle {} drops {} which is not on board", vehicle.id, stop.request))
                })?;
                vehicle.onboard.remove(pos);
                out.events.push(MotionEvent {
                    kind: EventKind::Dropoff,
                    request: stop.request,
                    node,
                    time: t,
                    onboard_after: vehicle.onboard.len(),
                });
            }
        }
        done += 1;
    }
    vehicle.plan.stops.drain(..done);
    // Drop-offs of passengers picked up in this window are now on-board drop-offs.
    for s in &mut vehicle.plan.stops {
        if s.area.kind == StopKind::Dropoff && vehicle.onboard.iter().any(|p| p.request == s.request) {
            s.area.kind = StopKind::OnboardDropoff;
        }
    }
    vehicle.location = node;
    vehicle.ready_at = t;
    vehicle.plan.start_node = node;
    vehicle.plan.start_time = t;
    let mut prev = node;
    vehicle.plan.total_time = vehicle
        .plan
        .stops
        .iter()
        .map(|s| {
            let leg = net.drive_time(prev, s.node);
            prev = s.node;
            leg
        })
        .sum();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VehicleId;
    use crate::network::generate_grid;
    use crate::rvrp::{AreaRef, RoutePlan, Stop};

    fn stop(node: u32, kind: StopKind, req: u32, arrival: f64, ready: f64) -> Stop {
        Stop {
            node: NodeId(node),
            area: AreaRef { kind, index: 0 },
            request: RequestId(req),
            arrival,
            ready,
            service: arrival.max(ready),
            deadline: f64::INFINITY,
        }
    }

    /// 5x2 grid, 10 s and 100 m per edge.
    fn net() -> RoadNetwork {
        generate_grid(5, 2, 100.0, 10.0).unwrap()
    }

    #[test]
    fn idle_vehicle_stays() {
        let net = net();
        let mut v = Vehicle::idle(VehicleId(0), 4, NodeId(2), 0.0);
        let out = simulate_motion(&net, &mut v, 60.0, 60.0).unwrap();
        assert!(out.events.is_empty());
        assert_eq!(out.distance_m, 0.0);
        assert_eq!(v.location, NodeId(2));
    }

    #[test]
    fn pickup_waits_for_walker() {
        let net = net();
        let mut v = Vehicle::idle(VehicleId(0), 4, NodeId(0), 0.0);
        v.plan = RoutePlan {
            start_node: NodeId(0),
            start_time: 0.0,
            stops: vec![stop(2, StopKind::Pickup, 7, 20.0, 45.0), stop(4, StopKind::Dropoff, 7, 65.0, f64::NEG_INFINITY)],
            total_time: 40.0,
        };
        let out = simulate_motion(&net, &mut v, 0.0, 60.0).unwrap();
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events[0].kind, EventKind::Pickup);
        assert_eq!(out.events[0].time, 45.0);
        assert_eq!(out.distance_m, 400.0);
        // The last edge starts at 55 s, so the vehicle reaches node 4 at 65 s.
        assert_eq!(v.location, NodeId(4));
        assert_eq!(v.ready_at, 65.0);
        assert_eq!(v.onboard.len(), 1);
        assert_eq!(v.plan.stops[0].area.kind, StopKind::OnboardDropoff);

        let out = simulate_motion(&net, &mut v, 60.0, 60.0).unwrap();
        assert_eq!(out.events[0].kind, EventKind::Dropoff);
        assert_eq!(out.events[0].time, 65.0);
        assert_eq!(out.events[0].onboard_after, 0);
        assert!(v.onboard.is_empty());
        assert!(v.plan.stops.is_empty());
        assert_eq!(out.distance_m, 0.0);
    }

    #[test]
    fn waiting_past_window_stays_at_stop() {
        let net = net();
        let mut v = Vehicle::idle(VehicleId(0), 4, NodeId(0), 0.0);
        v.plan = RoutePlan {
            start_node: NodeId(0),
            start_time: 0.0,
            stops: vec![stop(1, StopKind::Pickup, 3, 10.0, 100.0)],
            total_time: 10.0,
        };
        let out = simulate_motion(&net, &mut v, 0.0, 60.0).unwrap();
        assert!(out.events.is_empty());
        assert_eq!(v.location, NodeId(1));
        assert_eq!(v.ready_at, 10.0);
        assert_eq!(v.plan.stops.len(), 1);
        assert_eq!(v.plan.total_time, 0.0);
        let out = simulate_motion(&net, &mut v, 60.0, 60.0).unwrap();
        assert_eq!(out.events[0].time, 100.0);
    }

    #[test]
    fn dropping_unknown_passenger_is_an_error() {
        let net = net();
        let mut v = Vehicle::idle(VehicleId(0), 4, NodeId(0), 0.0);
        v.plan.stops.push(stop(1, StopKind::OnboardDropoff, 3, 10.0, f64::NEG_INFINITY));
        assert!(matches!(simulate_motion(&net, &mut v, 0.0, 60.0), Err(SimError::Consistency(_))));
    }
}
