//! Population, districts, road network and shelters.

use std::collections::VecDeque;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{GridField, Minutes};
use crate::seed::SeedRng;

use super::terrain::Terrain;

#[derive(Debug, Error, PartialEq)]
pub enum CommunityError {
    #[error("community needs at least one shelter")]
    NoShelters,
    #[error("district {0} cannot reach any shelter in the dry network")]
    Unreachable(u32),
    #[error("invalid community parameter: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommunityConfig {
    /// Districts per axis; the grid is tiled into `tiles × tiles` districts.
    pub district_tiles: usize,
    /// Road lattice spacing (cells).
    pub road_spacing: usize,
    /// Base travel time per lattice edge (min).
    pub edge_minutes: Minutes,
    /// Extra minute per this many metres of climb along an edge.
    pub climb_per_minute: f64,
    /// Depth at which a road node becomes impassable (m).
    pub d_crit: f64,
    /// Cells around a node whose depth governs its passability.
    pub node_footprint: usize,
    /// Shelter groups per axis (one shelter per group).
    pub shelter_groups: usize,
    /// Share of cells, lowest first, that are inhabited.
    pub populated_fraction: f64,
    pub mean_density: f64,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        CommunityConfig {
            district_tiles: 4,
            road_spacing: 4,
            edge_minutes: 5,
            climb_per_minute: 60.0,
            d_crit: 0.2,
            node_footprint: 2,
            shelter_groups: 2,
            populated_fraction: 0.85,
            mean_density: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct District {
    pub id: u32,
    /// Populated cells, ascending.
    pub cells: Vec<usize>,
    pub population: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadNode {
    pub id: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub to: usize,
    pub travel: Minutes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadGraph {
    pub nodes: Vec<RoadNode>,
    /// Outgoing edges per node, sorted by target id.
    pub adj: Vec<Vec<RoadEdge>>,
    pub d_crit: f64,
    pub footprint: usize,
}

impl RoadGraph {
    pub fn new(nodes: Vec<RoadNode>, d_crit: f64, footprint: usize) -> Self {
        let n = nodes.len();
        RoadGraph {
            nodes,
            adj: vec![Vec::new(); n],
            d_crit,
            footprint,
        }
    }

    /// Adds an undirected edge.
    pub fn connect(&mut self, a: usize, b: usize, travel: Minutes) {
        self.adj[a].push(RoadEdge { to: b, travel });
        self.adj[b].push(RoadEdge { to: a, travel });
        self.adj[a].sort_by_key(|e| e.to);
        self.adj[b].sort_by_key(|e| e.to);
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<RoadEdge> {
        self.adj[a].iter().copied().find(|e| e.to == b)
    }

    /// Depth governing a node: the maximum over its footprint.
    pub fn node_depth(&self, depth: &GridField, node: usize) -> f64 {
        let n = self.nodes[node];
        let f = self.footprint;
        let mut m = 0.0f64;
        for y in n.y.saturating_sub(f)..=(n.y + f).min(depth.ny - 1) {
            for x in n.x.saturating_sub(f)..=(n.x + f).min(depth.nx - 1) {
                m = m.max(depth.get(x, y));
            }
        }
        m
    }

    pub fn node_depths(&self, depth: &GridField) -> Vec<f64> {
        (0..self.nodes.len()).map(|i| self.node_depth(depth, i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: u32,
    pub district: u32,
    pub origin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Community {
    pub population: GridField,
    pub districts: Vec<District>,
    pub district_of: Vec<Option<u32>>,
    pub roads: RoadGraph,
    pub shelters: Vec<usize>,
    pub zones: Vec<Zone>,
}

impl Community {
    pub fn generate(
        terrain: &Terrain,
        config: &CommunityConfig,
        rng: &mut SeedRng,
    ) -> Result<Community, CommunityError> {
        let (nx, ny) = (terrain.nx(), terrain.ny());
        let km = terrain.elevation.cell_km;
        if config.district_tiles == 0 || config.road_spacing == 0 || config.shelter_groups == 0 {
            return Err(CommunityError::Invalid("zero tiling"));
        }
        if !(config.d_crit > 0.0) {
            return Err(CommunityError::Invalid("d_crit must be positive"));
        }
        let mut sorted: Vec<f64> = terrain.elevation.data.clone();
        sorted.sort_by(f64::total_cmp);
        let cut_idx = ((sorted.len() as f64 * config.populated_fraction) as usize).min(sorted.len() - 1);
        let cutoff = sorted[cut_idx];
        let noise = Normal::new(0.0, 0.8).expect("valid sd");
        let mut population = GridField::from_fn(nx, ny, km, 0, |x, y| {
            let i = y * nx + x;
            let z: f64 = noise.sample(rng);
            if terrain.elevation.data[i] > cutoff {
                return 0.0;
            }
            let valley = 1.0 + 0.3 * (terrain.flow_acc[i] as f64).ln();
            config.mean_density * (z - 0.32).exp() * valley
        });

        let tile_w = nx.div_ceil(config.district_tiles);
        let tile_h = ny.div_ceil(config.district_tiles);
        let tile_of = |i: usize| -> u32 {
            let (x, y) = (i % nx, i / nx);
            ((y / tile_h) * config.district_tiles + x / tile_w) as u32
        };
        let n_districts = config.district_tiles * config.district_tiles;
        let mut district_of = vec![None; nx * ny];
        let mut districts: Vec<District> = (0..n_districts as u32)
            .map(|id| District {
                id,
                cells: Vec::new(),
                population: 0.0,
            })
            .collect();
        for i in 0..nx * ny {
            if population.data[i] > 0.0 {
                let d = tile_of(i);
                district_of[i] = Some(d);
                districts[d as usize].cells.push(i);
                districts[d as usize].population += population.data[i];
            }
        }
        // A district on high ground still gets its lowest cell settled.
        for d in &mut districts {
            if d.cells.is_empty() {
                let lowest = (0..nx * ny)
                    .filter(|&i| tile_of(i) == d.id)
                    .min_by(|&a, &b| {
                        terrain.elevation.data[a]
                            .total_cmp(&terrain.elevation.data[b])
                            .then(a.cmp(&b))
                    })
                    .expect("tile nonempty");
                population.data[lowest] = config.mean_density;
                district_of[lowest] = Some(d.id);
                d.cells.push(lowest);
                d.population = config.mean_density;
            }
        }

        let sp = config.road_spacing;
        let off = sp / 2;
        let (gx, gy) = ((nx - off).div_ceil(sp), (ny - off).div_ceil(sp));
        let mut nodes = Vec::with_capacity(gx * gy);
        for j in 0..gy {
            for i in 0..gx {
                nodes.push(RoadNode {
                    id: j * gx + i,
                    x: off + i * sp,
                    y: off + j * sp,
                });
            }
        }
        let mut roads = RoadGraph::new(nodes, config.d_crit, config.node_footprint);
        let climb = |a: &RoadNode, b: &RoadNode| -> Minutes {
            let dz = (terrain.elevation.get(a.x, a.y) - terrain.elevation.get(b.x, b.y)).abs();
            config.edge_minutes + (dz / config.climb_per_minute).floor() as Minutes
        };
        for j in 0..gy {
            for i in 0..gx {
                let a = j * gx + i;
                if i + 1 < gx {
                    let t = climb(&roads.nodes[a], &roads.nodes[a + 1]);
                    roads.connect(a, a + 1, t);
                }
                if j + 1 < gy {
                    let t = climb(&roads.nodes[a], &roads.nodes[a + gx]);
                    roads.connect(a, a + gx, t);
                }
            }
        }

        // One shelter per group: the highest node whose footprint avoids
        // significant channels.
        let groups = config.shelter_groups;
        let channel_free = |n: &RoadNode| -> bool {
            let f = config.node_footprint + 1;
            for y in n.y.saturating_sub(f)..=(n.y + f).min(ny - 1) {
                for x in n.x.saturating_sub(f)..=(n.x + f).min(nx - 1) {
                    if terrain.flow_acc[y * nx + x] >= 8 {
                        return false;
                    }
                }
            }
            true
        };
        let mut shelters = Vec::new();
        for gyi in 0..groups {
            for gxi in 0..groups {
                let in_group = |n: &RoadNode| {
                    n.x * groups / nx == gxi && n.y * groups / ny == gyi
                };
                let score = |n: &RoadNode| {
                    terrain.elevation.get(n.x, n.y) - if channel_free(n) { 0.0 } else { 1e6 }
                };
                let best = roads
                    .nodes
                    .iter()
                    .filter(|n| in_group(n))
                    .max_by(|a, b| score(a).total_cmp(&score(b)).then(b.id.cmp(&a.id)));
                if let Some(b) = best {
                    shelters.push(b.id);
                }
            }
        }
        shelters.sort_unstable();
        shelters.dedup();
        if shelters.is_empty() {
            return Err(CommunityError::NoShelters);
        }

        let zones = districts
            .iter()
            .map(|d| {
                let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
                for &c in &d.cells {
                    let w = population.data[c];
                    sx += w * (c % nx) as f64;
                    sy += w * (c / nx) as f64;
                    sw += w;
                }
                let (cx, cy) = (sx / sw, sy / sw);
                let origin = roads
                    .nodes
                    .iter()
                    .min_by(|a, b| {
                        let da = (a.x as f64 - cx).powi(2) + (a.y as f64 - cy).powi(2);
                        let db = (b.x as f64 - cx).powi(2) + (b.y as f64 - cy).powi(2);
                        da.total_cmp(&db).then(a.id.cmp(&b.id))
                    })
                    .expect("road graph nonempty")
                    .id;
                Zone {
                    id: d.id,
                    district: d.id,
                    origin,
                }
            })
            .collect();

        let community = Community {
            population,
            districts,
            district_of,
            roads,
            shelters,
            zones,
        };
        community.validate()?;
        Ok(community)
    }

    /// Checks that every zone reaches a shelter in the dry network.
    pub fn validate(&self) -> Result<(), CommunityError> {
        if self.shelters.is_empty() {
            return Err(CommunityError::NoShelters);
        }
        if !(self.roads.d_crit > 0.0) {
            return Err(CommunityError::Invalid("d_crit must be positive"));
        }
        let n = self.roads.nodes.len();
        let mut reach = vec![false; n];
        let mut q: VecDeque<usize> = self.shelters.iter().copied().collect();
        for &s in &self.shelters {
            reach[s] = true;
        }
        while let Some(u) = q.pop_front() {
            for e in &self.roads.adj[u] {
                if !reach[e.to] {
                    reach[e.to] = true;
                    q.push_back(e.to);
                }
            }
        }
        for z in &self.zones {
            if !reach[z.origin] {
                return Err(CommunityError::Unreachable(z.district));
            }
        }
        Ok(())
    }

    pub fn total_population(&self) -> f64 {
        self.districts.iter().map(|d| d.population).sum()
    }

    /// Districts containing any of `cells`, ascending.
    pub fn districts_touching(&self, cells: &[usize]) -> Vec<u32> {
        let mut out: Vec<u32> = cells.iter().filter_map(|&c| self.district_of[c]).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn zone(&self, district: u32) -> Option<&Zone> {
        self.zones.iter().find(|z| z.district == district)
    }

    pub fn hash_into(&self, h: &mut Sha256) {
        self.population.hash_into(h);
        for d in &self.districts {
            h.update(d.id.to_le_bytes());
            h.update((d.cells.len() as u64).to_le_bytes());
        }
        for (i, adj) in self.roads.adj.iter().enumerate() {
            h.update((i as u64).to_le_bytes());
            for e in adj {
                h.update((e.to as u64).to_le_bytes());
                h.update(e.travel.to_le_bytes());
            }
        }
        for s in &self.shelters {
            h.update((*s as u64).to_le_bytes());
        }
    }
}
