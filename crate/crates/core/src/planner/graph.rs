//! Waypoint connectivity graph and A* routing.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::map::{LaneId, LaneMap};

pub type NodeId = usize;

pub const DEFAULT_SPACING: f64 = 2.0;
pub const DEFAULT_SNAP_RADIUS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub id: NodeId,
    pub px: f64,
    pub py: f64,
    pub phi: f64,
    pub lane_id: LaneId,
    pub predecessor: Option<NodeId>,
    pub successor: Option<NodeId>,
    pub left: Option<NodeId>,
    pub right: Option<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Forward,
    LaneChange,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: NodeId,
    pub weight: f64,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Default)]
pub struct RouteGraph {
    pub waypoints: Vec<Waypoint>,
    pub adjacency: Vec<Vec<Edge>>,
}

/// Pose used for route queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        Self { x, y, phi }
    }
}

fn dist(a: &Waypoint, b: &Waypoint) -> f64 {
    (a.px - b.px).hypot(a.py - b.py)
}

impl RouteGraph {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn add_node(&mut self, px: f64, py: f64, phi: f64, lane_id: LaneId) -> NodeId {
        let id = self.waypoints.len();
        self.waypoints.push(Waypoint {
            id,
            px,
            py,
            phi,
            lane_id,
            predecessor: None,
            successor: None,
            left: None,
            right: None,
        });
        self.adjacency.push(Vec::new());
        id
    }

    /// Directed edge weighted by Euclidean distance.
    pub fn add_edge(&mut self, from: NodeId, to: NodeId, kind: EdgeKind) {
        let weight = dist(&self.waypoints[from], &self.waypoints[to]);
        self.adjacency[from].push(Edge { to, weight, kind });
    }

    pub fn edge_count(&self, kind: EdgeKind) -> usize {
        self.adjacency.iter().flatten().filter(|e| e.kind == kind).count()
    }

    pub fn edge_kind(&self, from: NodeId, to: NodeId) -> Option<EdgeKind> {
        self.adjacency[from].iter().find(|e| e.to == to).map(|e| e.kind)
    }

    /// Nearest waypoint within `radius`, preferring waypoints whose tangent
    /// agrees with the pose heading.
    pub fn snap(&self, pose: Pose, radius: f64) -> Result<NodeId> {
        let mut best: Option<(bool, f64, NodeId)> = None;
        for w in &self.waypoints {
            let d = (w.px - pose.x).hypot(w.py - pose.y);
            if d > radius {
                continue;
            }
            let aligned = (w.phi - pose.phi).cos() > 0.0;
            let better = match best {
                None => true,
                Some((ba, bd, _)) => (aligned && !ba) || (aligned == ba && d < bd),
            };
            if better {
                best = Some((aligned, d, w.id));
            }
        }
        best.map(|b| b.2).ok_or(Error::SnapFailed {
            x: pose.x,
            y: pose.y,
            radius,
        })
    }
}

/// Sample every lane centerline into equidistant waypoints and connect them:
/// in-lane successor edges, lane-to-successor-lane edges, and lane-change
/// edges to the nearest waypoint of each lateral neighbour.
pub fn build_graph(map: &LaneMap, spacing: f64) -> Result<RouteGraph> {
    if map.lanes().is_empty() {
        return Err(Error::EmptyMap);
    }
    if !(spacing > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "waypoint spacing must be positive, got {spacing}"
        )));
    }
    let mut g = RouteGraph::default();
    let mut lane_nodes: Vec<(LaneId, Vec<NodeId>)> = Vec::new();
    for lane in map.lanes() {
        let pts = lane.path.resample(spacing);
        let len = lane.path.length();
        let n = pts.len() - 1;
        let ids: Vec<NodeId> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = len * i as f64 / n as f64;
                g.add_node(p[0], p[1], lane.path.heading_at(s), lane.id())
            })
            .collect();
        for w in ids.windows(2) {
            g.add_edge(w[0], w[1], EdgeKind::Forward);
            g.waypoints[w[0]].successor = Some(w[1]);
            g.waypoints[w[1]].predecessor = Some(w[0]);
        }
        lane_nodes.push((lane.id(), ids));
    }
    let nodes_of =
        |id: LaneId| -> &Vec<NodeId> { &lane_nodes.iter().find(|(l, _)| *l == id).expect("validated lane id").1 };
    for lane in map.lanes() {
        let own = nodes_of(lane.id()).clone();
        let last = *own.last().unwrap();
        for succ in &lane.spec.successors {
            let first = nodes_of(*succ)[0];
            g.add_edge(last, first, EdgeKind::Forward);
            if g.waypoints[last].successor.is_none() {
                g.waypoints[last].successor = Some(first);
            }
            if g.waypoints[first].predecessor.is_none() {
                g.waypoints[first].predecessor = Some(last);
            }
        }
        for (side, neighbour) in [(0, lane.spec.left), (1, lane.spec.right)] {
            let Some(nb) = neighbour else { continue };
            let targets = nodes_of(nb).clone();
            for &w in &own {
                let target = *targets
                    .iter()
                    .min_by(|&&a, &&b| {
                        dist(&g.waypoints[w], &g.waypoints[a]).total_cmp(&dist(&g.waypoints[w], &g.waypoints[b]))
                    })
                    .unwrap();
                g.add_edge(w, target, EdgeKind::LaneChange);
                if side == 0 {
                    g.waypoints[w].left = Some(target);
                } else {
                    g.waypoints[w].right = Some(target);
                }
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    id: NodeId,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on f, ties broken by ascending node id.
        other.f.total_cmp(&self.f).then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* between two node ids with the Euclidean heuristic. Returns the node
/// sequence and its total length.
pub fn astar_nodes(g: &RouteGraph, start: NodeId, goal: NodeId) -> Result<(Vec<NodeId>, f64)> {
    let n = g.len();
    let h = |i: NodeId| dist(&g.waypoints[i], &g.waypoints[goal]);
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    best[start] = 0.0;
    open.push(Open { f: h(start), id: start });
    while let Some(Open { id, .. }) = open.pop() {
        if closed[id] {
            continue;
        }
        if id == goal {
            let mut path = vec![goal];
            let mut cur = goal;
            while cur != start {
                cur = parent[cur];
                path.push(cur);
            }
            path.reverse();
            return Ok((path, best[goal]));
        }
        closed[id] = true;
        for e in &g.adjacency[id] {
            let cand = best[id] + e.weight;
            if cand < best[e.to] {
                best[e.to] = cand;
                parent[e.to] = id;
                open.push(Open {
                    f: cand + h(e.to),
                    id: e.to,
                });
            }
        }
    }
    Err(Error::NoRoute)
}

/// Shortest waypoint route between two poses.
pub fn astar_route(g: &RouteGraph, start: Pose, target: Pose, snap_radius: f64) -> Result<Vec<Waypoint>> {
    let s = g.snap(start, snap_radius)?;
    let t = g.snap(target, snap_radius)?;
    let (nodes, _) = astar_nodes(g, s, t)?;
    Ok(nodes.into_iter().map(|i| g.waypoints[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{LaneGeometry, LaneSpec, MarkingKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lane(id: LaneId, y: f64, len: f64, left: Option<LaneId>, right: Option<LaneId>) -> LaneSpec {
        LaneSpec {
            id,
            geometry: LaneGeometry::Line {
                from: [0.0, y],
                to: [len, y],
            },
            width: 3.5,
            left,
            right,
            successors: vec![],
            left_marking: MarkingKind::Crossable,
            right_marking: MarkingKind::Crossable,
            junction: false,
        }
    }

    #[test]
    fn single_lane_graph() {
        let map = LaneMap::new(vec![lane(1, 0.0, 4.0, None, None)]).unwrap();
        let g = build_graph(&map, 2.0).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.edge_count(EdgeKind::Forward), 2);
        assert_eq!(g.edge_count(EdgeKind::LaneChange), 0);
    }

    #[test]
    fn two_lane_graph_edge_counts() {
        // Oracle by construction: each of the 3 waypoints per lane links to
        // its lateral counterpart, in both directions.
        let map = LaneMap::new(vec![lane(1, 3.5, 4.0, None, Some(2)), lane(2, 0.0, 4.0, Some(1), None)]).unwrap();
        let g = build_graph(&map, 2.0).unwrap();
        assert_eq!(g.edge_count(EdgeKind::Forward), 4);
        assert_eq!(g.edge_count(EdgeKind::LaneChange), 6);
        for w in &g.waypoints {
            let counterpart = w.left.or(w.right).unwrap();
            assert!((g.waypoints[counterpart].px - w.px).abs() < 1e-12);
        }
    }

    #[test]
    fn waypoints_are_equidistant() {
        let map = LaneMap::new(vec![lane(1, 0.0, 25.0, None, None)]).unwrap();
        let g = build_graph(&map, 2.0).unwrap();
        let d: Vec<f64> = g.waypoints.windows(2).map(|w| dist(&w[0], &w[1])).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!(d.iter().all(|x| (x - mean).abs() / mean < 0.01));
    }

    #[test]
    fn collinear_route() {
        let map = LaneMap::new(vec![lane(1, 0.0, 4.0, None, None)]).unwrap();
        let g = build_graph(&map, 2.0).unwrap();
        let r = astar_route(&g, Pose::new(0.0, 0.0, 0.0), Pose::new(4.0, 0.0, 0.0), 5.0).unwrap();
        let ids: Vec<_> = r.iter().map(|w| w.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn disconnected_target_and_snap_failures() {
        let mut a = lane(1, 0.0, 10.0, None, None);
        a.geometry = LaneGeometry::Line {
            from: [0.0, 0.0],
            to: [10.0, 0.0],
        };
        let mut b = lane(2, 50.0, 10.0, None, None);
        b.geometry = LaneGeometry::Line {
            from: [0.0, 50.0],
            to: [10.0, 50.0],
        };
        let map = LaneMap::new(vec![a, b]).unwrap();
        let g = build_graph(&map, 2.0).unwrap();
        assert!(matches!(
            astar_route(&g, Pose::new(0.0, 0.0, 0.0), Pose::new(10.0, 50.0, 0.0), 5.0),
            Err(Error::NoRoute)
        ));
        assert!(matches!(
            astar_route(&g, Pose::new(0.0, 20.0, 0.0), Pose::new(10.0, 0.0, 0.0), 5.0),
            Err(Error::SnapFailed { .. })
        ));
    }

    // Brute-force Dijkstra oracle: O(n^2) scan, no heap.
    fn dijkstra(g: &RouteGraph, s: NodeId, t: NodeId) -> Option<f64> {
        let n = g.len();
        let mut d = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        d[s] = 0.0;
        for _ in 0..n {
            let u = (0..n).filter(|&i| !done[i]).min_by(|&a, &b| d[a].total_cmp(&d[b]))?;
            if d[u].is_infinite() {
                break;
            }
            done[u] = true;
            for e in &g.adjacency[u] {
                d[e.to] = d[e.to].min(d[u] + e.weight);
            }
        }
        d[t].is_finite().then_some(d[t])
    }

    fn random_graph(seed: u64, n: usize) -> RouteGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = RouteGraph::default();
        for _ in 0..n {
            g.add_node(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), 0.0, 0);
        }
        for i in 0..n {
            for _ in 0..3 {
                let j = rng.gen_range(0..n);
                if j != i {
                    g.add_edge(i, j, EdgeKind::Forward);
                }
            }
        }
        g
    }

    #[test]
    fn grid_with_blocked_corridor_matches_dijkstra() {
        let mut g = RouteGraph::default();
        let w = 8;
        for y in 0..w {
            for x in 0..w {
                g.add_node(x as f64 * 2.0, y as f64 * 2.0, 0.0, 0);
            }
        }
        let id = |x: usize, y: usize| y * w + x;
        for y in 0..w {
            for x in 0..w {
                // Column 4 is blocked except at the top row.
                let blocked = |xx: usize, yy: usize| xx == 4 && yy != w - 1;
                if blocked(x, y) {
                    continue;
                }
                for (dx, dy) in [(1i32, 0i32), (-1, 0), (0, 1), (0, -1)] {
                    let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i32 || ny >= w as i32 {
                        continue;
                    }
                    if !blocked(nx as usize, ny as usize) {
                        g.add_edge(id(x, y), id(nx as usize, ny as usize), EdgeKind::Forward);
                    }
                }
            }
        }
        let (path, cost) = astar_nodes(&g, id(0, 0), id(7, 0)).unwrap();
        assert!((cost - dijkstra(&g, id(0, 0), id(7, 0)).unwrap()).abs() < 1e-9);
        assert!(path.contains(&id(4, w - 1)));
    }

    #[test]
    fn astar_cost_equals_dijkstra_on_random_graphs() {
        for seed in 0..100u64 {
            let n = 20 + (seed as usize * 7) % 180;
            let g = random_graph(seed, n);
            let (s, t) = (0, n - 1);
            match (astar_nodes(&g, s, t), dijkstra(&g, s, t)) {
                (Ok((_, c)), Some(d)) => assert!((c - d).abs() < 1e-9, "seed {seed}: {c} vs {d}"),
                (Err(Error::NoRoute), None) => {}
                (a, b) => panic!("seed {seed}: astar {a:?} vs dijkstra {b:?}"),
            }
        }
    }

    proptest! {
        #[test]
        fn astar_is_deterministic(seed in 0u64..1000) {
            let g = random_graph(seed, 60);
            let a = astar_nodes(&g, 0, 59).ok();
            let b = astar_nodes(&g, 0, 59).ok();
            prop_assert_eq!(a, b);
        }
    }
}
