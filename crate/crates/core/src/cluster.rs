//! Point clusters, the unit of label correction.

use std::io::Write;

use crate::error::{Error, Result};
use crate::index::KdTree;
use crate::scene::Scene;

pub const DEFAULT_EPS: f64 = 0.018;
pub const DEFAULT_MIN_PTS: usize = 10;

/// A partition of a scene's points into clusters.
///
/// Cluster ids are canonical: clusters are numbered in order of their lowest
/// member id, and member lists are ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterSet {
    /// Builds a canonical cluster set from arbitrary per-point group keys.
    pub fn from_assignment<K: Ord + Copy>(keys: &[K]) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::EmptyScene);
        }
        let mut remap = std::collections::BTreeMap::new();
        let mut assignment = Vec::with_capacity(keys.len());
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (id, key) in keys.iter().enumerate() {
            let next = remap.len();
            let cluster = *remap.entry(*key).or_insert(next);
            if cluster == members.len() {
                members.push(Vec::new());
            }
            members[cluster].push(id);
            assignment.push(cluster);
        }
        Ok(Self { assignment, members })
    }

    /// One cluster per ground-truth instance.
    pub fn from_instances(scene: &Scene) -> Result<Self> {
        Self::from_assignment(scene.require_instances()?)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn cluster_of(&self, point: usize) -> usize {
        self.assignment[point]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Member ids of `cluster`.
    pub fn members(&self, cluster: usize) -> Result<&[usize]> {
        self.members
            .get(cluster)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownCluster {
                id: cluster,
                count: self.members.len(),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.members.iter().map(Vec::as_slice).enumerate()
    }

    /// Number of clusters with more than one member.
    pub fn non_singleton_count(&self) -> usize {
        self.members.iter().filter(|m| m.len() > 1).count()
    }

    /// Writes `point_id cluster_id` lines.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        for (id, c) in self.assignment.iter().enumerate() {
            writeln!(out, "{id} {c}")?;
        }
        Ok(())
    }
}

/// Member ids of `cluster_id`.
pub fn cluster_members(clusters: &ClusterSet, cluster_id: usize) -> Result<&[usize]> {
    clusters.members(cluster_id)
}

/// A method that partitions a scene into clusters.
pub trait Clusterer {
    fn cluster(&self, scene: &Scene) -> Result<ClusterSet>;
}

/// DBSCAN over `[x, y, z] ⊕ [r, g, b]`, with positions scaled isotropically
/// into the unit cube of the scene's bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dbscan {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for Dbscan {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            min_pts: DEFAULT_MIN_PTS,
        }
    }
}

/// Per-point clustering features: unit-cube position followed by color.
pub fn clustering_features(scene: &Scene) -> Vec<[f64; 6]> {
    let (lo, hi) = scene.bounds();
    let extent = (0..3).map(|d| hi[d] - lo[d]).fold(0.0f64, f64::max);
    let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    scene
        .positions()
        .iter()
        .zip(scene.colors())
        .map(|(p, c)| {
            [
                (p[0] - lo[0]) * scale,
                (p[1] - lo[1]) * scale,
                (p[2] - lo[2]) * scale,
                c[0],
                c[1],
                c[2],
            ]
        })
        .collect()
}

impl Clusterer for Dbscan {
    fn cluster(&self, scene: &Scene) -> Result<ClusterSet> {
        dbscan_features(clustering_features(scene), self.eps, self.min_pts)
    }
}

/// DBSCAN with the default feature construction.
pub fn dbscan(scene: &Scene, eps: f64, min_pts: usize) -> Result<ClusterSet> {
    Dbscan { eps, min_pts }.cluster(scene)
}

const UNVISITED: usize = usize::MAX;
const NOISE: usize = usize::MAX - 1;

/// DBSCAN on precomputed features. Neighbourhoods are closed balls that
/// include the point itself; noise points become singleton clusters.
pub fn dbscan_features<const D: usize>(features: Vec<[f64; D]>, eps: f64, min_pts: usize) -> Result<ClusterSet> {
    if features.is_empty() {
        return Err(Error::EmptyScene);
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", "must be positive"));
    }
    if min_pts == 0 {
        return Err(Error::invalid("min_pts", "must be at least 1"));
    }
    let n = features.len();
    let tree = KdTree::new(features);
    let mut label = vec![UNVISITED; n];
    let mut next_cluster = 0usize;
    let mut queue = Vec::new();
    for start in 0..n {
        if label[start] != UNVISITED {
            continue;
        }
        let neighbours = tree.within(tree.point(start), eps);
        if neighbours.len() < min_pts {
            label[start] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        label[start] = cluster;
        queue.clear();
        queue.extend(neighbours.into_iter().rev());
        while let Some(q) = queue.pop() {
            match label[q] {
                NOISE => label[q] = cluster, // border point
                UNVISITED => {
                    label[q] = cluster;
                    let nq = tree.within(tree.point(q), eps);
                    if nq.len() >= min_pts {
                        queue.extend(nq.into_iter().rev().filter(|&r| label[r] == UNVISITED || label[r] == NOISE));
                    }
                }
                _ => {}
            }
        }
    }
    // noise points get unique keys past the cluster range
    let keys: Vec<usize> = label
        .iter()
        .enumerate()
        .map(|(id, &l)| if l == NOISE { next_cluster + id } else { l })
        .collect();
    ClusterSet::from_assignment(&keys)
}
