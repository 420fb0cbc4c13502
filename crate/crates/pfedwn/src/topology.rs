//! Spatial layouts of clients in a planar region.
//!
//! A topology holds one target client surrounded by candidate neighbors.
//! Neighbors are placed either as an exact count (to reproduce fixed-size
//! network scenarios) or by a Poisson point process at a given density.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// Role of a node within a topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Target,
    Neighbor,
}

/// A client with a position in the plane, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: u32,
    pub position: [f64; 2],
    pub role: Role,
}

/// Rectangular simulation area, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn new(width: f64, height: f64) -> Self {
        Area { width, height }
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * self.width, 0.5 * self.height]
    }

    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Parameter(format!(
                "area dimensions must be positive, got {} x {}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// How neighbors are placed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlacementMode {
    /// Exactly this many neighbors, uniform in the area.
    FixedCount(usize),
    /// Poisson point process with the given density per square meter.
    Density(f64),
}

/// How the target client is chosen.
///
/// The point-process convention of picking the placed node nearest the area
/// center applies only to [`PlacementMode::Density`]; fixed-count layouts
/// place the target explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetRule {
    /// Target at the center of the area.
    Center,
    /// Target is the sampled node nearest the area center; the remaining
    /// nodes become its neighbors.
    NearestCenter,
    /// Target at an explicit position.
    At([f64; 2]),
}

/// Full layout specification.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyConfig {
    pub area: Area,
    pub mode: PlacementMode,
    pub target_rule: TargetRule,
    /// Minimum target-neighbor separation; the path loss model is undefined
    /// below its reference distance, so closer neighbors are resampled.
    pub min_separation: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            area: Area::new(50.0, 50.0),
            mode: PlacementMode::FixedCount(10),
            target_rule: TargetRule::Center,
            min_separation: 1.0,
        }
    }
}

/// One target plus its candidate neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub area: Area,
    pub seed: u64,
    pub target: Node,
    pub neighbors: Vec<Node>,
}

impl Topology {
    /// Distance from the target to the given neighbor.
    pub fn target_distance(&self, neighbor: &Node) -> f64 {
        distance(self.target.position, neighbor.position)
    }

    pub fn neighbor_ids(&self) -> Vec<u32> {
        self.neighbors.iter().map(|n| n.id).collect()
    }

    pub fn neighbor(&self, id: u32) -> Option<&Node> {
        self.neighbors.iter().find(|n| n.id == id)
    }

    /// Serializes to the JSON document `{area:[w,h], seed, target:{id,pos},
    /// neighbors:[{id,pos}]}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&TopologyDoc::from(self)).expect("topology serialization")
    }

    pub fn from_json(text: &str) -> Result<Topology> {
        let doc: TopologyDoc = serde_json::from_str(text)
            .map_err(|e| Error::Format { file: "<topology json>".into(), reason: e.to_string() })?;
        Ok(doc.into())
    }
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: u32,
    pos: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct TopologyDoc {
    area: [f64; 2],
    seed: u64,
    target: NodeDoc,
    neighbors: Vec<NodeDoc>,
}

impl From<&Topology> for TopologyDoc {
    fn from(t: &Topology) -> Self {
        TopologyDoc {
            area: [t.area.width, t.area.height],
            seed: t.seed,
            target: NodeDoc { id: t.target.id, pos: t.target.position },
            neighbors: t.neighbors.iter().map(|n| NodeDoc { id: n.id, pos: n.position }).collect(),
        }
    }
}

impl From<TopologyDoc> for Topology {
    fn from(doc: TopologyDoc) -> Self {
        Topology {
            area: Area::new(doc.area[0], doc.area[1]),
            seed: doc.seed,
            target: Node { id: doc.target.id, position: doc.target.pos, role: Role::Target },
            neighbors: doc
                .neighbors
                .into_iter()
                .map(|n| Node { id: n.id, position: n.pos, role: Role::Neighbor })
                .collect(),
        }
    }
}

/// Euclidean distance between two positions, in meters.
pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Samples a homogeneous Poisson point process over the area: the point
/// count is Poisson with mean `density * width * height` and positions are
/// uniform.
pub fn sample_ppp<R: Rng>(density: f64, area: &Area, rng: &mut R) -> Result<Vec<[f64; 2]>> {
    if density < 0.0 {
        return Err(Error::Parameter(format!("density must be non-negative, got {density}")));
    }
    area.validate()?;
    let mean = density * area.width * area.height;
    if mean == 0.0 {
        return Ok(Vec::new());
    }
    let count = Poisson::new(mean)
        .map_err(|e| Error::Parameter(format!("invalid Poisson mean {mean}: {e}")))?
        .sample(rng) as usize;
    Ok((0..count).map(|_| uniform_point(area, rng)).collect())
}

fn uniform_point<R: Rng>(area: &Area, rng: &mut R) -> [f64; 2] {
    [rng.random::<f64>() * area.width, rng.random::<f64>() * area.height]
}

/// Builds a topology from the configuration. Reconstruction from the same
/// `(config, seed)` pair is bit-identical.
pub fn build_topology(config: &TopologyConfig, seed: u64) -> Result<Topology> {
    config.area.validate()?;
    if config.min_separation < 0.0 {
        return Err(Error::Parameter("min_separation must be non-negative".into()));
    }
    let mut rng = substream(seed, "topology", 0);
    match config.mode {
        PlacementMode::FixedCount(count) => {
            let target_pos = match config.target_rule {
                TargetRule::Center => config.area.center(),
                TargetRule::At(p) => p,
                TargetRule::NearestCenter => {
                    return Err(Error::Parameter(
                        "nearest-center target rule requires density placement".into(),
                    ))
                }
            };
            let target = Node { id: 0, position: target_pos, role: Role::Target };
            let mut neighbors = Vec::with_capacity(count);
            for i in 0..count {
                let pos = sample_separated(&config.area, target_pos, config.min_separation, &mut rng)?;
                neighbors.push(Node { id: i as u32 + 1, position: pos, role: Role::Neighbor });
            }
            Ok(Topology { area: config.area, seed, target, neighbors })
        }
        PlacementMode::Density(density) => {
            let mut points = sample_ppp(density, &config.area, &mut rng)?;
            match config.target_rule {
                TargetRule::NearestCenter => {
                    if points.is_empty() {
                        return Err(Error::EmptyPointProcess);
                    }
                    let center = config.area.center();
                    let target_idx = points
                        .iter()
                        .enumerate()
                        .min_by(|(_, a), (_, b)| {
                            distance(**a, center).total_cmp(&distance(**b, center))
                        })
                        .map(|(i, _)| i)
                        .expect("non-empty");
                    let target_pos = points.remove(target_idx);
                    let target = Node { id: 0, position: target_pos, role: Role::Target };
                    let neighbors =
                        respaced_neighbors(points, &config.area, target_pos, config.min_separation, &mut rng)?;
                    Ok(Topology { area: config.area, seed, target, neighbors })
                }
                TargetRule::Center | TargetRule::At(_) => {
                    let target_pos = match config.target_rule {
                        TargetRule::Center => config.area.center(),
                        TargetRule::At(p) => p,
                        TargetRule::NearestCenter => unreachable!(),
                    };
                    let target = Node { id: 0, position: target_pos, role: Role::Target };
                    let neighbors =
                        respaced_neighbors(points, &config.area, target_pos, config.min_separation, &mut rng)?;
                    Ok(Topology { area: config.area, seed, target, neighbors })
                }
            }
        }
    }
}

/// Re-ids the points as neighbors, resampling any that sit closer to the
/// target than the minimum separation.
fn respaced_neighbors<R: Rng>(
    points: Vec<[f64; 2]>,
    area: &Area,
    target: [f64; 2],
    min_separation: f64,
    rng: &mut R,
) -> Result<Vec<Node>> {
    points
        .into_iter()
        .enumerate()
        .map(|(i, pos)| {
            let pos = if distance(pos, target) < min_separation {
                sample_separated(area, target, min_separation, rng)?
            } else {
                pos
            };
            Ok(Node { id: i as u32 + 1, position: pos, role: Role::Neighbor })
        })
        .collect()
}

fn sample_separated<R: Rng>(
    area: &Area,
    target: [f64; 2],
    min_separation: f64,
    rng: &mut R,
) -> Result<[f64; 2]> {
    for _ in 0..10_000 {
        let pos = uniform_point(area, rng);
        if distance(pos, target) >= min_separation {
            return Ok(pos);
        }
    }
    Err(Error::Parameter(format!(
        "could not place a neighbor at least {min_separation} m from the target; area too small"
    )))
}
