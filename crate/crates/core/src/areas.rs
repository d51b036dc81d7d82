//! Extended pickup and drop-off areas.
//!
//! An area is every node within walking distance `max_walk` of the request's
//! original pickup (or drop-off) node. When a request's two areas overlap,
//! each shared node goes to the area whose original is nearer on foot, with
//! ties going to the pickup side. Originals always stay in their own area.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DelayParams, Request, RequestId, Vehicle};
use crate::network::{NodeId, RoadNetwork};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaKind {
    Pickup,
    Dropoff,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaPoint {
    pub node: NodeId,
    /// Walking distance from the area's original node, meters.
    pub walk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub request: RequestId,
    pub kind: AreaKind,
    pub original: NodeId,
    members: Vec<AreaPoint>,
}

#[derive(Debug, Error, PartialEq)]
pub enum AreaError {
    #[error("request {0} has coinciding pickup and drop-off originals")]
    DegenerateRequest(RequestId),
    #[error("areas belong to different requests ({0} vs {1})")]
    Mismatch(RequestId, RequestId),
    #[error("area for {0} does not contain its original node")]
    MissingOriginal(RequestId),
    #[error("area for {0} is empty")]
    Empty(RequestId),
}

impl Area {
    /// Builds an area from explicit members. Members are sorted by node id.
    pub fn new(
        request: RequestId,
        kind: AreaKind,
        original: NodeId,
        mut members: Vec<AreaPoint>,
    ) -> Result<Self, AreaError> {
        if members.is_empty() {
            return Err(AreaError::Empty(request));
        }
        members.sort_by_key(|p| p.node);
        members.dedup_by_key(|p| p.node);
        if !members.iter().any(|p| p.node == original) {
            return Err(AreaError::MissingOriginal(request));
        }
        Ok(Self { request, kind, original, members })
    }

    /// An area consisting of the original node only.
    pub fn point(request: RequestId, kind: AreaKind, node: NodeId) -> Self {
        Self {
            request,
            kind,
            original: node,
            members: vec![AreaPoint { node, walk: 0.0 }],
        }
    }

    pub fn members(&self) -> &[AreaPoint] {
        &self.members
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.members.iter().map(|p| p.node)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.members.binary_search_by_key(&node, |p| p.node).is_ok()
    }

    pub fn walk_to(&self, node: NodeId) -> Option<f64> {
        self.members
            .binary_search_by_key(&node, |p| p.node)
            .ok()
            .map(|i| self.members[i].walk)
    }
}

/// Area of radius `radius` meters around the request's pickup or drop-off.
pub fn build_area_with_radius(
    net: &RoadNetwork,
    request: &Request,
    kind: AreaKind,
    radius: f64,
) -> Area {
    let original = match kind {
        AreaKind::Pickup => request.pickup,
        AreaKind::Dropoff => request.dropoff,
    };
    let members = net
        .nodes_within_walk(original, radius)
        .into_iter()
        .map(|(node, walk)| AreaPoint { node, walk })
        .collect();
    Area { request: request.id, kind, original, members }
}

pub fn build_area(net: &RoadNetwork, request: &Request, kind: AreaKind, params: &DelayParams) -> Area {
    build_area_with_radius(net, request, kind, params.max_walk)
}

/// Makes the two areas of one request disjoint.
pub fn resolve_overlap(pickup: Area, dropoff: Area) -> Result<(Area, Area), AreaError> {
    if pickup.request != dropoff.request {
        return Err(AreaError::Mismatch(pickup.request, dropoff.request));
    }
    if pickup.original == dropoff.original {
        return Err(AreaError::DegenerateRequest(pickup.request));
    }
    let mut p_keep = Vec::with_capacity(pickup.members.len());
    for p in &pickup.members {
        match dropoff.walk_to(p.node) {
            Some(d_walk) if d_walk < p.walk => {}
            _ => p_keep.push(*p),
        }
    }
    let mut d_keep = Vec::with_capacity(dropoff.members.len());
    for d in &dropoff.members {
        match pickup.walk_to(d.node) {
            Some(p_walk) if p_walk <= d.walk => {}
            _ => d_keep.push(*d),
        }
    }
    Ok((
        Area { members: p_keep, ..pickup },
        Area { members: d_keep, ..dropoff },
    ))
}

/// Both areas of a request after overlap resolution.
pub fn build_request_areas(
    net: &RoadNetwork,
    request: &Request,
    pickup_radius: f64,
    dropoff_radius: f64,
) -> Result<(Area, Area), AreaError> {
    let p = build_area_with_radius(net, request, AreaKind::Pickup, pickup_radius);
    let d = build_area_with_radius(net, request, AreaKind::Dropoff, dropoff_radius);
    resolve_overlap(p, d)
}

/// Pickup points the vehicle can drive to within the pickup delay.
pub fn vehicle_reachable_points(
    net: &RoadNetwork,
    vehicle: &Vehicle,
    pickup: &Area,
    params: &DelayParams,
) -> Vec<NodeId> {
    pickup
        .nodes()
        .filter(|&n| net.drive_time(vehicle.location, n) <= params.pickup_delay)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_params, VehicleId};
    use crate::network::generate_grid;
    use proptest::prelude::*;

    fn grid() -> RoadNetwork {
        generate_grid(9, 9, 100.0, 10.0).unwrap()
    }

    fn at(x: u32, y: u32) -> NodeId {
        NodeId(y * 9 + x)
    }

    fn hops(a: NodeId, b: NodeId) -> u32 {
        let (ax, ay) = (a.0 % 9, a.0 / 9);
        let (bx, by) = (b.0 % 9, b.0 / 9);
        ax.abs_diff(bx) + ay.abs_diff(by)
    }

    fn req(p: NodeId, d: NodeId) -> Request {
        Request::new(RequestId(1), p, d, 0.0).unwrap()
    }

    #[test]
    fn zero_radius_is_original_only() {
        let net = grid();
        let r = req(at(4, 4), at(0, 0));
        let a = build_area_with_radius(&net, &r, AreaKind::Pickup, 0.0);
        assert_eq!(a.nodes().collect::<Vec<_>>(), vec![at(4, 4)]);
    }

    #[test]
    fn radius_250_is_two_hop_ball() {
        let net = grid();
        let r = req(at(4, 4), at(0, 0));
        let a = build_area_with_radius(&net, &r, AreaKind::Pickup, 250.0);
        let want: Vec<NodeId> = net.nodes().filter(|&n| hops(n, at(4, 4)) <= 2).collect();
        assert_eq!(a.nodes().collect::<Vec<_>>(), want);
        assert_eq!(a.walk_to(at(4, 6)), Some(200.0));
    }

    #[test]
    fn dropoff_area_centers_on_dropoff() {
        let net = grid();
        let r = req(at(4, 4), at(0, 0));
        let params = default_params(100.0).unwrap();
        let a = build_area(&net, &r, AreaKind::Dropoff, &params);
        assert_eq!(a.original, at(0, 0));
        assert!(a.contains(at(1, 0)) && a.contains(at(0, 1)));
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn overlap_examples() {
        let net = grid();
        // Far apart: unchanged.
        let r = req(at(1, 1), at(7, 7));
        let p = build_area_with_radius(&net, &r, AreaKind::Pickup, 200.0);
        let d = build_area_with_radius(&net, &r, AreaKind::Dropoff, 200.0);
        let (p2, d2) = resolve_overlap(p.clone(), d.clone()).unwrap();
        assert_eq!((p2, d2), (p, d));

        // Originals 3 hops apart with radius 200: (2,1) is 1 from pickup and
        // 2 from drop-off, so it stays with pickup; the midpoint-free shared
        // nodes split by distance.
        let r = req(at(1, 1), at(4, 1));
        let p = build_area_with_radius(&net, &r, AreaKind::Pickup, 200.0);
        let d = build_area_with_radius(&net, &r, AreaKind::Dropoff, 200.0);
        assert!(p.contains(at(2, 1)) && d.contains(at(2, 1)));
        let (p2, d2) = resolve_overlap(p, d).unwrap();
        assert!(p2.contains(at(2, 1)) && !d2.contains(at(2, 1)));
        assert!(d2.contains(at(3, 1)) && !p2.contains(at(3, 1)));

        // Originals 2 hops apart: (3,1) is equidistant and goes to pickup.
        let r = req(at(2, 1), at(4, 1));
        let p = build_area_with_radius(&net, &r, AreaKind::Pickup, 100.0);
        let d = build_area_with_radius(&net, &r, AreaKind::Dropoff, 100.0);
        let (p2, d2) = resolve_overlap(p, d).unwrap();
        assert!(p2.contains(at(3, 1)));
        assert!(!d2.contains(at(3, 1)));
    }

    #[test]
    fn coinciding_originals_rejected() {
        let p = Area::point(RequestId(1), AreaKind::Pickup, NodeId(3));
        let d = Area::point(RequestId(1), AreaKind::Dropoff, NodeId(3));
        assert_eq!(resolve_overlap(p, d), Err(AreaError::DegenerateRequest(RequestId(1))));
    }

    #[test]
    fn reachable_points_filter() {
        let net = grid();
        let params = default_params(20.0).unwrap();
        let r = req(at(4, 4), at(0, 0));
        let area = build_area_with_radius(&net, &r, AreaKind::Pickup, 200.0);

        let colocated = Vehicle::idle(VehicleId(0), 4, at(4, 4), 0.0);
        let pts = vehicle_reachable_points(&net, &colocated, &area, &params);
        assert!(pts.contains(&at(4, 4)));
        for n in area.nodes() {
            assert_eq!(pts.contains(&n), net.drive_time(at(4, 4), n) <= 20.0);
        }

        let far = Vehicle::idle(VehicleId(1), 4, at(8, 8), 0.0);
        assert!(vehicle_reachable_points(&net, &far, &area, &params).is_empty());
    }

    proptest! {
        #[test]
        fn overlap_resolution_invariants(px in 0u32..9, py in 0u32..9, dx in 0u32..9, dy in 0u32..9, rp in 0.0f64..400.0, rd in 0.0f64..400.0) {
            prop_assume!((px, py) != (dx, dy));
            let net = grid();
            let r = req(at(px, py), at(dx, dy));
            let p = build_area_with_radius(&net, &r, AreaKind::Pickup, rp);
            let d = build_area_with_radius(&net, &r, AreaKind::Dropoff, rd);
            let (p2, d2) = resolve_overlap(p.clone(), d.clone()).unwrap();
            prop_assert!(p2.contains(r.pickup));
            prop_assert!(d2.contains(r.dropoff));
            for n in p2.nodes() {
                prop_assert!(!d2.contains(n));
                prop_assert!(p.contains(n));
                prop_assert!(p2.walk_to(n).unwrap() <= rp);
            }
            for n in d2.nodes() {
                prop_assert!(d.contains(n));
            }
            // Nodes outside the intersection are untouched.
            for n in p.nodes().filter(|n| !d.contains(*n)) {
                prop_assert!(p2.contains(n));
            }
            for n in d.nodes().filter(|n| !p.contains(*n)) {
                prop_assert!(d2.contains(n));
            }
        }

        #[test]
        fn area_monotone_in_radius(x in 0u32..9, y in 0u32..9, r1 in 0.0f64..400.0, extra in 0.0f64..300.0) {
            let net = grid();
            let r = req(at(x, y), at((x + 1) % 9, y));
            let small = build_area_with_radius(&net, &r, AreaKind::Pickup, r1);
            let large = build_area_with_radius(&net, &r, AreaKind::Pickup, r1 + extra);
            prop_assert!(small.nodes().all(|n| large.contains(n)));
        }
    }
}
