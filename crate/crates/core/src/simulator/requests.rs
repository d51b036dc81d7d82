//! Synthetic demand and the requests CSV (`id,arrival_s,pickup_node,dropoff_node`).

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::model::{Request, RequestId};
use crate::network::{NodeId, RoadNetwork};

/// Time-ordered requests covering `[0, horizon_s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestStream {
    pub requests: Vec<Request>,
    /// End of the period the stream describes. Runs that go past it are
    /// flagged as truncated.
    pub horizon_s: f64,
}

impl RequestStream {
    /// Sorts by arrival time, then id. Rejects duplicate ids.
    pub fn new(mut requests: Vec<Request>, horizon_s: f64) -> Result<Self, SimError> {
        requests.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time).then(a.id.cmp(&b.id)));
        let mut ids: Vec<RequestId> = requests.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(SimError::Input(format!("duplicate request id {}", w[0])));
        }
        if !(horizon_s >= 0.0) {
            return Err(SimError::Input(format!("invalid stream horizon {horizon_s}")));
        }
        Ok(Self { requests, horizon_s })
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub x: f64,
    pub y: f64,
    /// Standard deviation of the spread around the center, meters.
    pub sigma_m: f64,
    pub weight: f64,
}

/// Mixture of Gaussian hotspots and a uniform background over all nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotspotProfile {
    pub hotspots: Vec<Hotspot>,
    pub background_weight: f64,
}

impl HotspotProfile {
    pub fn uniform() -> Self {
        Self { hotspots: Vec::new(), background_weight: 1.0 }
    }

    /// Four hotspots at the quarter points of the bounding box, each with
    /// spread a tenth of the larger side, carrying 60% of the demand.
    pub fn default_for(net: &RoadNetwork) -> Self {
        let (x0, y0, x1, y1) = net.bounds();
        let (w, h) = (x1 - x0, y1 - y0);
        let sigma = 0.1 * w.max(h).max(1.0);
        let hotspots = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
            .into_iter()
            .map(|(fx, fy)| Hotspot { x: x0 + fx * w, y: y0 + fy * h, sigma_m: sigma, weight: 0.15 })
            .collect();
        Self { hotspots, background_weight: 0.4 }
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        let total: f64 = self.background_weight + self.hotspots.iter().map(|h| h.weight).sum::<f64>();
        if !ok(self.background_weight)
            || self.hotspots.iter().any(|h| !ok(h.weight) || !ok(h.sigma_m) || !h.x.is_finite() || !h.y.is_finite())
            || total <= 0.0
        {
            return Err(SimError::Input("hotspot weights must be non-negative with a positive total".into()));
        }
        Ok(())
    }
}

struct NodeSampler<'a> {
    net: &'a RoadNetwork,
    profile: &'a HotspotProfile,
    total: f64,
}

impl NodeSampler<'_> {
    fn nearest(&self, x: f64, y: f64) -> NodeId {
        self.net
            .nodes()
            .min_by(|&a, &b| {
                let d = |n: NodeId| {
                    let (nx, ny) = self.net.coords(n);
                    (nx - x).powi(2) + (ny - y).powi(2)
                };
                d(a).total_cmp(&d(b)).then(a.cmp(&b))
            })
            .expect("network has nodes")
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> NodeId {
        let mut u = rng.random_range(0.0..self.total);
        for h in &self.profile.hotspots {
            if u < h.weight {
                let (dx, dy) = if h.sigma_m > 0.0 {
                    let n = Normal::new(0.0, h.sigma_m).expect("sigma is positive");
                    (n.sample(rng), n.sample(rng))
                } else {
                    (0.0, 0.0)
                };
                return self.nearest(h.x + dx, h.y + dy);
            }
            u -= h.weight;
        }
        NodeId(rng.random_range(0..self.net.node_count() as u32))
    }
}

/// Poisson(`rate`) arrivals in each of `horizon` windows of `epoch_len`
/// seconds, at whole-second offsets, with ids in arrival order.
pub fn gen_requests(
    net: &RoadNetwork,
    rate: f64,
    horizon: usize,
    epoch_len: f64,
    profile: &HotspotProfile,
    rng: &mut ChaCha8Rng,
) -> Result<RequestStream, SimError> {
    if !(rate >= 0.0 && rate.is_finite()) || !(epoch_len > 0.0) {
        return Err(SimError::Input(format!("invalid rate {rate} or epoch length {epoch_len}")));
    }
    if net.node_count() < 2 {
        return Err(SimError::Input("need at least two nodes to generate trips".into()));
    }
    profile.validate()?;
    let sampler = NodeSampler {
        net,
        profile,
        total: profile.background_weight + profile.hotspots.iter().map(|h| h.weight).sum::<f64>(),
    };
    let poisson = if rate > 0.0 { Some(Poisson::new(rate).expect("rate is positive")) } else { None };
    let mut requests = Vec::new();
    let mut next_id = 0u32;
    let slots = epoch_len.floor().max(1.0) as u64;
    for e in 0..horizon {
        let n = poisson.as_ref().map(|p| p.sample(rng) as u64).unwrap_or(0);
        let mut offsets: Vec<u64> = (0..n).map(|_| rng.random_range(0..slots)).collect();
        offsets.sort_unstable();
        for off in offsets {
            let pickup = sampler.sample(rng);
            let mut dropoff = sampler.sample(rng);
            while dropoff == pickup {
                dropoff = sampler.sample(rng);
            }
            let t = e as f64 * epoch_len + off as f64;
            requests.push(Request::new(RequestId(next_id), pickup, dropoff, t).expect("distinct nodes, valid time"));
            next_id += 1;
        }
    }
    RequestStream::new(requests, horizon as f64 * epoch_len)
}

#[derive(Debug, Serialize, Deserialize)]
struct RequestRow {
    id: u32,
    arrival_s: f64,
    pickup_node: u64,
    dropoff_node: u64,
}

/// Reads the requests CSV; node columns hold the network file's node ids.
/// Without an explicit horizon the stream ends at the last arrival.
pub fn read_requests<R: Read>(reader: R, net: &RoadNetwork, horizon_s: Option<f64>) -> Result<RequestStream, SimError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<RequestRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| SimError::Input(format!("requests line {line}: {e}")))?;
        let node = |label: u64| {
            net.node_by_label(label)
                .ok_or_else(|| SimError::Input(format!("requests line {line}: unknown node {label}")))
        };
        let r = Request::new(RequestId(row.id), node(row.pickup_node)?, node(row.dropoff_node)?, row.arrival_s)
            .map_err(|e| SimError::Input(format!("requests line {line}: {e}")))?;
        out.push(r);
    }
    let end = horizon_s.unwrap_or_else(|| out.iter().map(|r| r.arrival_time).fold(0.0, f64::max));
    RequestStream::new(out, end)
}

pub fn write_requests<W: Write>(writer: W, net: &RoadNetwork, stream: &RequestStream) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in &stream.requests {
        w.serialize(RequestRow {
            id: r.id.0,
            arrival_s: r.arrival_time,
            pickup_node: net.label(r.pickup),
            dropoff_node: net.label(r.dropoff),
        })
        .map_err(|e| SimError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| SimError::Io(e.to_string()))?;
    Ok(())
}
