//! Road network: driving-time and walking-distance metrics over a directed
//! intersection graph.
//!
//! Driving uses the directed edges weighted by `drive_time`. Walking uses the
//! same edge set in both directions weighted by `length`. Shortest-path rows
//! are memoized per source node: small networks get every driving row computed
//! up front, larger ones fill a bounded cache on demand.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt;
use std::io::Read;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel cost for unreachable node pairs.
pub const UNREACHABLE: f64 = f64::INFINITY;

/// Networks with at most this many nodes get all-pairs driving times at build.
pub const DEFAULT_APSP_THRESHOLD: usize = 2_000;

const LAZY_CACHE_ROWS: usize = 4_096;
const NO_PRED: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    /// Meters.
    pub length: f64,
    /// Seconds.
    pub drive_time: f64,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("{source_name} line {line}: {message}")]
    Parse {
        source_name: &'static str,
        line: u64,
        message: String,
    },
    #[error("edge {from}->{to} references unknown node {missing}")]
    DanglingEdge { from: u64, to: u64, missing: u64 },
    #[error("duplicate node id {0}")]
    DuplicateNode(u64),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("network has no nodes left after filtering")]
    Empty,
}

/// Shortest-path tree from a single source.
#[derive(Debug)]
pub struct PathTree {
    source: NodeId,
    cost: Vec<f64>,
    pred: Vec<u32>,
}

impl PathTree {
    pub fn source(&self) -> NodeId {
        self.source
    }

    #[inline]
    pub fn cost(&self, to: NodeId) -> f64 {
        self.cost[to.index()]
    }

    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    /// Node sequence from the source to `to`, both included.
    pub fn path_to(&self, to: NodeId) -> Option<Vec<NodeId>> {
        if !self.cost[to.index()].is_finite() {
            return None;
        }
        let mut path = vec![to];
        let mut cur = to.index();
        while cur != self.source.index() {
            let p = self.pred[cur];
            if p == NO_PRED {
                return None;
            }
            cur = p as usize;
            path.push(NodeId(p));
        }
        path.reverse();
        Some(path)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over an adjacency list of `(neighbor, weight)`, stopping once the
/// frontier exceeds `limit`.
fn dijkstra(adj: &[Vec<(u32, f64)>], source: NodeId, limit: f64) -> PathTree {
    let n = adj.len();
    let mut cost = vec![UNREACHABLE; n];
    let mut pred = vec![NO_PRED; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    cost[source.index()] = 0.0;
    heap.push(HeapEntry {
        cost: 0.0,
        node: source.0,
    });
    while let Some(HeapEntry { cost: c, node }) = heap.pop() {
        let u = node as usize;
        if done[u] {
            continue;
        }
        if c > limit {
            break;
        }
        done[u] = true;
        for &(v, w) in &adj[u] {
            let nc = c + w;
            let vi = v as usize;
            if nc < cost[vi] {
                cost[vi] = nc;
                pred[vi] = node;
                heap.push(HeapEntry { cost: nc, node: v });
            }
        }
    }
    if limit.is_finite() {
        for (i, c) in cost.iter_mut().enumerate() {
            if !done[i] {
                *c = UNREACHABLE;
                pred[i] = NO_PRED;
            }
        }
    }
    PathTree { source, cost, pred }
}

enum RowStore {
    Full(Vec<Arc<PathTree>>),
    Lazy(Mutex<LazyRows>),
}

struct LazyRows {
    rows: HashMap<u32, Arc<PathTree>>,
    order: VecDeque<u32>,
    cap: usize,
}

impl LazyRows {
    fn new(cap: usize) -> Self {
        Self {
            rows: HashMap::new(),
            order: VecDeque::new(),
            cap,
        }
    }
}

struct RowCache {
    store: RowStore,
}

impl RowCache {
    fn lazy(cap: usize) -> Self {
        Self {
            store: RowStore::Lazy(Mutex::new(LazyRows::new(cap))),
        }
    }

    fn full(adj: &[Vec<(u32, f64)>]) -> Self {
        let rows = (0..adj.len() as u32)
            .map(|s| Arc::new(dijkstra(adj, NodeId(s), UNREACHABLE)))
            .collect();
        Self {
            store: RowStore::Full(rows),
        }
    }

    fn row(&self, adj: &[Vec<(u32, f64)>], source: NodeId) -> Arc<PathTree> {
        match &self.store {
            RowStore::Full(rows) => rows[source.index()].clone(),
            RowStore::Lazy(lock) => {
                if let Some(row) = lock.lock().unwrap().rows.get(&source.0) {
                    return row.clone();
                }
                let tree = Arc::new(dijkstra(adj, source, UNREACHABLE));
                let mut rows = lock.lock().unwrap();
                if !rows.rows.contains_key(&source.0) {
                    if rows.rows.len() >= rows.cap {
                        if let Some(old) = rows.order.pop_front() {
                            rows.rows.remove(&old);
                        }
                    }
                    rows.order.push_back(source.0);
                    rows.rows.insert(source.0, tree.clone());
                }
                tree
            }
        }
    }

    #[inline]
    fn full_rows(&self) -> Option<&[Arc<PathTree>]> {
        match &self.store {
            RowStore::Full(rows) => Some(rows),
            RowStore::Lazy(_) => None,
        }
    }
}

/// Directed road graph. Immutable once built; all queries take `&self`.
pub struct RoadNetwork {
    coords: Vec<(f64, f64)>,
    bounds: (f64, f64, f64, f64),
    labels: Vec<u64>,
    label_index: HashMap<u64, NodeId>,
    edges: Vec<Edge>,
    drive_adj: Vec<Vec<(u32, f64)>>,
    length_adj: Vec<Vec<(u32, f64)>>,
    walk_adj: Vec<Vec<(u32, f64)>>,
    drive_rows: RowCache,
    walk_rows: RowCache,
}

impl fmt::Debug for RoadNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RoadNetwork")
            .field("nodes", &self.coords.len())
            .field("edges", &self.edges.len())
            .finish()
    }
}

/// Raw node row as read from the nodes file.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
pub struct NodeRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

/// Raw edge row as read from the edges file.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
pub struct EdgeRecord {
    pub from: u64,
    pub to: u64,
    pub length_m: f64,
    pub drive_time_s: f64,
}

impl RoadNetwork {
    /// Builds a network from raw rows, dropping nodes without outgoing edges
    /// (repeatedly) and keeping the largest weakly connected component.
    /// Surviving nodes are re-indexed densely in input order.
    pub fn from_records(
        nodes: &[NodeRecord],
        edges: &[EdgeRecord],
    ) -> Result<Self, NetworkError> {
        Self::from_records_with_threshold(nodes, edges, DEFAULT_APSP_THRESHOLD)
    }

    pub fn from_records_with_threshold(
        nodes: &[NodeRecord],
        edges: &[EdgeRecord],
        apsp_threshold: usize,
    ) -> Result<Self, NetworkError> {
        let mut pos: HashMap<u64, usize> = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !n.x.is_finite() || !n.y.is_finite() {
                return Err(NetworkError::Argument(format!(
                    "node {} has non-finite coordinates",
                    n.id
                )));
            }
            if pos.insert(n.id, i).is_some() {
                return Err(NetworkError::DuplicateNode(n.id));
            }
        }
        for e in edges {
            for end in [e.from, e.to] {
                if !pos.contains_key(&end) {
                    return Err(NetworkError::DanglingEdge {
                        from: e.from,
                        to: e.to,
                        missing: end,
                    });
                }
            }
            if !(e.length_m > 0.0 && e.length_m.is_finite()) {
                return Err(NetworkError::Argument(format!(
                    "edge {}->{} has non-positive length {}",
                    e.from, e.to, e.length_m
                )));
            }
            if !(e.drive_time_s > 0.0 && e.drive_time_s.is_finite()) {
                return Err(NetworkError::Argument(format!(
                    "edge {}->{} has non-positive drive time {}",
                    e.from, e.to, e.drive_time_s
                )));
            }
        }

        // Iteratively drop nodes with no outgoing edge.
        let n = nodes.len();
        let mut alive = vec![true; n];
        let mut edge_alive = vec![true; edges.len()];
        loop {
            let mut out_deg = vec![0usize; n];
            for (k, e) in edges.iter().enumerate() {
                if edge_alive[k] {
                    out_deg[pos[&e.from]] += 1;
                }
            }
            let mut changed = false;
            for i in 0..n {
                if alive[i] && out_deg[i] == 0 {
                    alive[i] = false;
                    changed = true;
                }
            }
            for (k, e) in edges.iter().enumerate() {
                if edge_alive[k] && (!alive[pos[&e.from]] || !alive[pos[&e.to]]) {
                    edge_alive[k] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        // Largest weakly connected component; earliest component wins ties.
        let mut comp = vec![usize::MAX; n];
        let mut und: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            if edge_alive[k] {
                let (a, b) = (pos[&e.from], pos[&e.to]);
                und[a].push(b);
                und[b].push(a);
            }
        }
        let mut sizes = Vec::new();
        for start in 0..n {
            if !alive[start] || comp[start] != usize::MAX {
                continue;
            }
            let c = sizes.len();
            let mut size = 0;
            let mut stack = vec![start];
            comp[start] = c;
            while let Some(u) = stack.pop() {
                size += 1;
                for &v in &und[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = c;
                        stack.push(v);
                    }
                }
            }
            sizes.push(size);
        }
        let best = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .ok_or(NetworkError::Empty)?;

        let mut dense = vec![u32::MAX; n];
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            if alive[i] && comp[i] == best {
                dense[i] = coords.len() as u32;
                coords.push((nodes[i].x, nodes[i].y));
                labels.push(nodes[i].id);
            }
        }
        let kept: Vec<Edge> = edges
            .iter()
            .enumerate()
            .filter(|(k, e)| edge_alive[*k] && dense[pos[&e.from]] != u32::MAX)
            .map(|(_, e)| Edge {
                from: NodeId(dense[pos[&e.from]]),
                to: NodeId(dense[pos[&e.to]]),
                length: e.length_m,
                drive_time: e.drive_time_s,
            })
            .collect();
        Ok(Self::assemble(coords, labels, kept, apsp_threshold))
    }

    fn assemble(
        coords: Vec<(f64, f64)>,
        labels: Vec<u64>,
        edges: Vec<Edge>,
        apsp_threshold: usize,
    ) -> Self {
        let n = coords.len();
        let mut drive_adj = vec![Vec::new(); n];
        let mut length_adj = vec![Vec::new(); n];
        let mut walk_adj = vec![Vec::new(); n];
        for e in &edges {
            drive_adj[e.from.index()].push((e.to.0, e.drive_time));
            length_adj[e.from.index()].push((e.to.0, e.length));
            walk_adj[e.from.index()].push((e.to.0, e.length));
            walk_adj[e.to.index()].push((e.from.0, e.length));
        }
        let label_index = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, NodeId(i as u32)))
            .collect();
        let drive_rows = if n <= apsp_threshold {
            RowCache::full(&drive_adj)
        } else {
            RowCache::lazy(LAZY_CACHE_ROWS)
        };
        let bounds = coords.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
        );
        Self {
            coords,
            bounds,
            labels,
            label_index,
            edges,
            drive_adj,
            length_adj,
            walk_adj,
            drive_rows,
            walk_rows: RowCache::lazy(LAZY_CACHE_ROWS),
        }
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.coords.len() as u32).map(NodeId)
    }

    #[inline]
    pub fn contains(&self, node: NodeId) -> bool {
        node.index() < self.coords.len()
    }

    pub fn coords(&self, node: NodeId) -> (f64, f64) {
        self.coords[node.index()]
    }

    /// Identifier the node carried in the source file.
    pub fn label(&self, node: NodeId) -> u64 {
        self.labels[node.index()]
    }

    pub fn node_by_label(&self, label: u64) -> Option<NodeId> {
        self.label_index.get(&label).copied()
    }

    /// Bounding box `(min_x, min_y, max_x, max_y)` of node coordinates.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.bounds
    }

    pub fn has_full_drive_table(&self) -> bool {
        self.drive_rows.full_rows().is_some()
    }

    /// Shortest driving-time tree rooted at `source`.
    pub fn drive_row(&self, source: NodeId) -> Arc<PathTree> {
        self.drive_rows.row(&self.drive_adj, source)
    }

    /// Shortest driving time `a -> b` in seconds, [`UNREACHABLE`] if no path.
    #[inline]
    pub fn drive_time(&self, a: NodeId, b: NodeId) -> f64 {
        if let Some(rows) = self.drive_rows.full_rows() {
            return rows[a.index()].cost[b.index()];
        }
        self.drive_row(a).cost(b)
    }

    /// Node sequence of the fastest driving path `a -> b`.
    pub fn drive_path(&self, a: NodeId, b: NodeId) -> Option<Vec<NodeId>> {
        self.drive_row(a).path_to(b)
    }

    /// Length in meters of a node path, following the shortest parallel edge
    /// between consecutive nodes.
    pub fn path_length(&self, path: &[NodeId]) -> f64 {
        path.windows(2)
            .map(|w| self.edge_length(w[0], w[1]).unwrap_or(UNREACHABLE))
            .sum()
    }

    /// Length of the driving edge `a -> b` with the smallest drive time.
    pub fn edge_length(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (&(to, t), &(_, len)) in self.drive_adj[a.index()]
            .iter()
            .zip(self.length_adj[a.index()].iter())
        {
            if to == b.0 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, len));
            }
        }
        best.map(|(_, l)| l)
    }

    /// Drive time of the fastest edge `a -> b`.
    pub fn edge_time(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.drive_adj[a.index()]
            .iter()
            .filter(|(to, _)| *to == b.0)
            .map(|&(_, t)| t)
            .min_by(|x, y| x.total_cmp(y))
    }

    /// Shortest walking distance in meters, edges treated as undirected.
    pub fn walk_distance(&self, a: NodeId, b: NodeId) -> f64 {
        if a == b {
            return 0.0;
        }
        self.walk_rows.row(&self.walk_adj, a).cost(b)
    }

    /// All nodes whose walking distance from `origin` is at most `radius`,
    /// with that distance, sorted by node id. Always contains `origin`.
    pub fn nodes_within_walk(&self, origin: NodeId, radius: f64) -> Vec<(NodeId, f64)> {
        let radius = radius.max(0.0);
        let tree = dijkstra(&self.walk_adj, origin, radius);
        tree.cost
            .iter()
            .enumerate()
            .filter(|(_, c)| **c <= radius)
            .map(|(i, &c)| (NodeId(i as u32), c))
            .collect()
    }

    pub fn to_records(&self) -> (Vec<NodeRecord>, Vec<EdgeRecord>) {
        let nodes = self
            .coords
            .iter()
            .zip(&self.labels)
            .map(|(&(x, y), &id)| NodeRecord { id, x, y })
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| EdgeRecord {
                from: self.label(e.from),
                to: self.label(e.to),
                length_m: e.length,
                drive_time_s: e.drive_time,
            })
            .collect();
        (nodes, edges)
    }
}

fn csv_line(err: &csv::Error) -> u64 {
    err.position().map(|p| p.line()).unwrap_or(0)
}

fn read_rows<T: serde::de::DeserializeOwned, R: Read>(
    source_name: &'static str,
    reader: R,
) -> Result<Vec<T>, NetworkError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: T = row.map_err(|e| NetworkError::Parse {
            source_name,
            line: csv_line(&e),
            message: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}

/// Reads `id,x,y` and `from,to,length_m,drive_time_s` CSV streams.
pub fn load_network<N: Read, E: Read>(nodes: N, edges: E) -> Result<RoadNetwork, NetworkError> {
    let nodes: Vec<NodeRecord> = read_rows("nodes", nodes)?;
    let edges: Vec<EdgeRecord> = read_rows("edges", edges)?;
    RoadNetwork::from_records(&nodes, &edges)
}

/// Writes the network in the same CSV layout `load_network` reads.
pub fn write_network<N: std::io::Write, E: std::io::Write>(
    net: &RoadNetwork,
    nodes: N,
    edges: E,
) -> Result<(), csv::Error> {
    let (node_rows, edge_rows) = net.to_records();
    let mut w = csv::Writer::from_writer(nodes);
    for r in node_rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(edges);
    for r in edge_rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// 4-connected `width x height` grid with bidirectional edges. Node
/// `y * width + x` sits at `(x * edge_len, y * edge_len)`.
pub fn generate_grid(
    width: usize,
    height: usize,
    edge_len: f64,
    drive_speed: f64,
) -> Result<RoadNetwork, NetworkError> {
    if width < 2 || height < 2 {
        return Err(NetworkError::Argument(format!(
            "grid must be at least 2x2, got {width}x{height}"
        )));
    }
    if !(edge_len > 0.0 && edge_len.is_finite()) || !(drive_speed > 0.0 && drive_speed.is_finite())
    {
        return Err(NetworkError::Argument(
            "edge length and drive speed must be positive".into(),
        ));
    }
    let t = edge_len / drive_speed;
    let id = |x: usize, y: usize| NodeId((y * width + x) as u32);
    let mut coords = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            coords.push((x as f64 * edge_len, y as f64 * edge_len));
        }
    }
    let mut edges = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let mut link = |a: NodeId, b: NodeId| {
                edges.push(Edge { from: a, to: b, length: edge_len, drive_time: t });
                edges.push(Edge { from: b, to: a, length: edge_len, drive_time: t });
            };
            if x + 1 < width {
                link(id(x, y), id(x + 1, y));
            }
            if y + 1 < height {
                link(id(x, y), id(x, y + 1));
            }
        }
    }
    let labels = (0..(width * height) as u64).collect();
    Ok(RoadNetwork::assemble(coords, labels, edges, DEFAULT_APSP_THRESHOLD))
}
