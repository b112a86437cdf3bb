//! Time-dependent evacuation routing without waiting, and an independent
//! plan checker.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Minutes;
use crate::world::{Community, RoadGraph};

use super::hydrology::DepthGrid;

/// Node depths sampled at increasing times; the depth at `t` is the latest
/// sample at or before `t` (the first sample before it starts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDepthSchedule {
    pub times: Vec<Minutes>,
    pub depths: Vec<Vec<f64>>,
}

impl NodeDepthSchedule {
    pub fn from_grids(roads: &RoadGraph, grids: &[DepthGrid]) -> Self {
        NodeDepthSchedule {
            times: grids.iter().map(|g| g.t).collect(),
            depths: grids.iter().map(|g| roads.node_depths(&g.depth)).collect(),
        }
    }

    pub fn dry(nodes: usize) -> Self {
        NodeDepthSchedule {
            times: vec![0],
            depths: vec![vec![0.0; nodes]],
        }
    }

    pub fn at(&self, node: usize, t: Minutes) -> f64 {
        if self.times.is_empty() {
            return 0.0;
        }
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        self.depths[k][node]
    }

    pub fn passable(&self, node: usize, t: Minutes, d_crit: f64) -> bool {
        self.at(node, t) < d_crit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub zone: u32,
    pub origin: usize,
    pub departure: Minutes,
    /// Node sequence from origin to a shelter (just the origin when none is
    /// reachable).
    pub nodes: Vec<usize>,
    /// Time each node is reached.
    pub times: Vec<Minutes>,
    pub arrival: Option<Minutes>,
    /// Smallest `d_crit − depth` seen along the traversal, metres.
    pub margin: f64,
    pub viable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingParams {
    pub window: Minutes,
}

impl Default for RoutingParams {
    fn default() -> Self {
        RoutingParams { window: 60 }
    }
}

fn edge_open(schedule: &NodeDepthSchedule, d_crit: f64, a: usize, b: usize, t: Minutes) -> bool {
    schedule.passable(a, t, d_crit) && schedule.passable(b, t, d_crit)
}

/// Earliest-arrival route from `origin` departing at `t0` to any shelter,
/// ties broken by the lexicographically smallest node sequence.
pub fn plan_route(
    roads: &RoadGraph,
    shelters: &[usize],
    schedule: &NodeDepthSchedule,
    zone: u32,
    origin: usize,
    t0: Minutes,
    params: &RoutingParams,
) -> RoutePlan {
    let n = roads.nodes.len();
    let w = params.window as usize;
    let is_shelter = {
        let mut v = vec![false; n];
        for &s in shelters {
            v[s] = true;
        }
        v
    };
    let failed = RoutePlan {
        zone,
        origin,
        departure: t0,
        nodes: vec![origin],
        times: vec![t0],
        arrival: None,
        margin: roads.d_crit - schedule.at(origin, t0),
        viable: false,
    };
    if is_shelter[origin] {
        return RoutePlan {
            arrival: Some(t0),
            viable: true,
            ..failed
        };
    }
    // Forward: which (node, offset) states are reachable from the origin
    // without passing a shelter.
    let mut reach = vec![vec![false; n]; w + 1];
    reach[0][origin] = true;
    let mut best: Option<usize> = None;
    'outer: for dt in 0..=w {
        for u in 0..n {
            if !reach[dt][u] || is_shelter[u] {
                continue;
            }
            let t = t0 + dt as Minutes;
            for e in &roads.adj[u] {
                let nd = dt + e.travel as usize;
                if nd > w || !edge_open(schedule, roads.d_crit, u, e.to, t) {
                    continue;
                }
                reach[nd][e.to] = true;
            }
        }
        if dt < w && (0..n).any(|v| reach[dt + 1][v] && is_shelter[v]) {
            best = Some(dt + 1);
            break 'outer;
        }
    }
    let Some(arr) = best else {
        return failed;
    };
    // Backward: states from which a shelter is hit exactly at `arr`.
    let mut good = vec![vec![false; n]; arr + 1];
    for v in 0..n {
        good[arr][v] = is_shelter[v] && reach[arr][v];
    }
    for dt in (0..arr).rev() {
        let t = t0 + dt as Minutes;
        for u in 0..n {
            if !reach[dt][u] || is_shelter[u] {
                continue;
            }
            good[dt][u] = roads.adj[u].iter().any(|e| {
                let nd = dt + e.travel as usize;
                nd <= arr && good[nd][e.to] && edge_open(schedule, roads.d_crit, u, e.to, t)
            });
        }
    }
    let mut nodes = vec![origin];
    let mut times = vec![t0];
    let mut margin = roads.d_crit - schedule.at(origin, t0);
    let (mut u, mut dt) = (origin, 0usize);
    while dt < arr {
        let t = t0 + dt as Minutes;
        let e = roads.adj[u]
            .iter()
            .find(|e| {
                let nd = dt + e.travel as usize;
                nd <= arr && good[nd][e.to] && edge_open(schedule, roads.d_crit, u, e.to, t)
            })
            .expect("backward pass guarantees a successor");
        margin = margin.min(roads.d_crit - schedule.at(e.to, t));
        u = e.to;
        dt += e.travel as usize;
        nodes.push(u);
        times.push(t0 + dt as Minutes);
    }
    RoutePlan {
        zone,
        origin,
        departure: t0,
        nodes,
        times,
        arrival: Some(t0 + arr as Minutes),
        margin,
        viable: true,
    }
}

/// Plans for the given zones in zone-id order.
pub fn plan_routes(
    community: &Community,
    schedule: &NodeDepthSchedule,
    zones: &[u32],
    t0: Minutes,
    params: &RoutingParams,
) -> Vec<RoutePlan> {
    let mut ids: Vec<u32> = zones.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.iter()
        .filter_map(|&z| community.zones.iter().find(|c| c.id == z))
        .map(|z| plan_route(&community.roads, &community.shelters, schedule, z.id, z.origin, t0, params))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouteViolation {
    #[error("route is empty")]
    Empty,
    #[error("{0} -> {1} is not a road")]
    NotAnEdge(usize, usize),
    #[error("edge {0} -> {1} entered at t={2} while flooded")]
    Flooded(usize, usize, Minutes),
    #[error("route ends at {0}, not a shelter")]
    NotAShelter(usize),
    #[error("arrival {arrival} is past the window end {limit}")]
    Late { arrival: Minutes, limit: Minutes },
}

/// Replays `nodes` departing at `departure` against `schedule`, returning the
/// arrival time when every edge is entered while both ends are passable.
pub fn replay_route(
    roads: &RoadGraph,
    shelters: &[usize],
    schedule: &NodeDepthSchedule,
    nodes: &[usize],
    departure: Minutes,
    window: Minutes,
) -> Result<Minutes, RouteViolation> {
    let Some(&last) = nodes.last() else {
        return Err(RouteViolation::Empty);
    };
    let mut t = departure;
    for pair in nodes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let travel = roads.adj[a]
            .iter()
            .find(|e| e.to == b)
            .map(|e| e.travel)
            .ok_or(RouteViolation::NotAnEdge(a, b))?;
        if schedule.at(a, t) >= roads.d_crit || schedule.at(b, t) >= roads.d_crit {
            return Err(RouteViolation::Flooded(a, b, t));
        }
        t += travel;
    }
    if !shelters.contains(&last) {
        return Err(RouteViolation::NotAShelter(last));
    }
    if t > departure + window {
        return Err(RouteViolation::Late {
            arrival: t,
            limit: departure + window,
        });
    }
    Ok(t)
}

const STATIC_WINDOW: Minutes = 720;

/// Static shortest path on the dry network.
pub fn static_route(community: &Community, zone: u32, params: &RoutingParams) -> Option<RoutePlan> {
    let z = community.zones.iter().find(|z| z.id == zone)?;
    let dry = NodeDepthSchedule::dry(community.roads.nodes.len());
    let wide = RoutingParams {
        window: params.window.max(STATIC_WINDOW),
    };
    Some(plan_route(&community.roads, &community.shelters, &dry, z.id, z.origin, 0, &wide))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::RoadNode;

    fn graph(n: usize) -> RoadGraph {
        let nodes = (0..n).map(|i| RoadNode { id: i, x: i, y: 0 }).collect();
        RoadGraph::new(nodes, 0.3, 0)
    }

    fn schedule_with(n: usize, flooded: &[(usize, Minutes)]) -> NodeDepthSchedule {
        let times: Vec<Minutes> = (0..=120).collect();
        let depths = times
            .iter()
            .map(|&t| {
                (0..n)
                    .map(|v| if flooded.iter().any(|&(f, from)| f == v && t >= from) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        NodeDepthSchedule { times, depths }
    }

    #[test]
    fn dry_schedule_is_static_shortest_path() {
        let mut g = graph(4);
        g.connect(0, 1, 5);
        g.connect(1, 3, 5);
        g.connect(0, 2, 3);
        g.connect(2, 3, 9);
        let p = plan_route(&g, &[3], &NodeDepthSchedule::dry(4), 0, 0, 0, &RoutingParams::default());
        assert_eq!(p.nodes, vec![0, 1, 3]);
        assert_eq!(p.arrival, Some(10));
    }

    #[test]
    fn equal_arrivals_pick_smaller_sequence() {
        let mut g = graph(4);
        g.connect(0, 2, 5);
        g.connect(2, 3, 5);
        g.connect(0, 1, 5);
        g.connect(1, 3, 5);
        let p = plan_route(&g, &[3], &NodeDepthSchedule::dry(4), 0, 0, 0, &RoutingParams::default());
        assert_eq!(p.nodes, vec![0, 1, 3]);
    }

    #[test]
    fn cut_off_origin_is_not_viable() {
        let mut g = graph(3);
        g.connect(0, 1, 5);
        g.connect(1, 2, 5);
        let s = schedule_with(3, &[(1, 0)]);
        let p = plan_route(&g, &[2], &s, 0, 0, 0, &RoutingParams::default());
        assert!(!p.viable);
        assert_eq!(p.arrival, None);
    }

    #[test]
    fn replay_flags_flooded_edge() {
        let mut g = graph(3);
        g.connect(0, 1, 5);
        g.connect(1, 2, 5);
        let s = schedule_with(3, &[(2, 5)]);
        assert!(matches!(replay_route(&g, &[2], &s, &[0, 1, 2], 0, 60), Err(RouteViolation::Flooded(1, 2, 5))));
        let dry = NodeDepthSchedule::dry(3);
        assert_eq!(replay_route(&g, &[2], &dry, &[0, 1, 2], 0, 60), Ok(10));
        assert!(matches!(replay_route(&g, &[2], &dry, &[0, 2], 0, 60), Err(RouteViolation::NotAnEdge(0, 2))));
    }
}
