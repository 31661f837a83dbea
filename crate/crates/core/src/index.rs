//! Exact nearest-neighbour search.
//!
//! [`KdTree`] works in any fixed dimension; [`SpatialIndex`] wraps a 3-D tree
//! over a scene's positions. Neighbour lists are ordered by distance with
//! ties broken by lower point id, so results are reproducible and agree with
//! an exhaustive scan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::Scene;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree over `D`-dimensional points.
#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for d in 0..D {
        let t = a[d] - b[d];
        s += t * t;
    }
    s
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: Vec<[f64; D]>) -> Self {
        let mut tree = Self {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            tree.build(0, tree.points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> &[f64; D] {
        &self.points[id]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let mut lo = [f64::INFINITY; D];
        let mut hi = [f64::NEG_INFINITY; D];
        for &i in &self.order[start..end] {
            for d in 0..D {
                lo[d] = lo[d].min(self.points[i][d]);
                hi[d] = hi[d].max(self.points[i][d]);
            }
        }
        let dim = (0..D)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[dim] - lo[dim] <= 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[slot] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        slot
    }

    /// The `k` nearest points to `query` as `(id, distance)`, nearest first.
    pub fn knn(&self, query: &[f64; D], k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, query, k, &mut heap);
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|c| (c.id, c.dist2.sqrt())).collect()
    }

    fn knn_node(&self, node: usize, query: &[f64; D], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let cand = Candidate {
                        dist2: dist2(query, &self.points[id]),
                        id,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, query, k, heap);
                // equal distance may still hold a lower id, so the bound is inclusive
                if heap.len() < k || diff * diff <= heap.peek().map_or(f64::INFINITY, |c| c.dist2) {
                    self.knn_node(far, query, k, heap);
                }
            }
        }
    }

    /// Ids of all points within `radius` (inclusive) of `query`, ascending.
    pub fn within(&self, query: &[f64; D], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.within_node(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_node(&self, node: usize, query: &[f64; D], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => out.extend(
                self.order[start..end]
                    .iter()
                    .copied()
                    .filter(|&id| dist2(query, &self.points[id]) <= r2),
            ),
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.within_node(near, query, r2, out);
                if diff * diff <= r2 {
                    self.within_node(far, query, r2, out);
                }
            }
        }
    }
}

/// Nearest-neighbour index over a scene's 3-D positions.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    tree: KdTree<3>,
}

impl SpatialIndex {
    pub fn build(scene: &Scene) -> Result<Self> {
        Self::from_positions(scene.positions().to_vec())
    }

    pub fn from_positions(positions: Vec<[f64; 3]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyScene);
        }
        Ok(Self {
            tree: KdTree::new(positions),
        })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn position(&self, id: usize) -> [f64; 3] {
        *self.tree.point(id)
    }

    /// The `k` nearest points to point `id`, itself included (first unless
    /// a lower-id duplicate shares its position).
    pub fn knn(&self, id: usize, k: usize) -> Result<Vec<usize>> {
        Ok(self.knn_with_distances(id, k)?.into_iter().map(|(i, _)| i).collect())
    }

    pub fn knn_with_distances(&self, id: usize, k: usize) -> Result<Vec<(usize, f64)>> {
        let n = self.len();
        if k > n {
            return Err(Error::KTooLarge { k, n });
        }
        if id >= n {
            return Err(Error::invalid("query_point_id", format!("{id} >= {n}")));
        }
        Ok(self.tree.knn(self.tree.point(id), k))
    }

    pub fn knn_point(&self, query: &[f64; 3], k: usize) -> Result<Vec<(usize, f64)>> {
        let n = self.len();
        if k > n {
            return Err(Error::KTooLarge { k, n });
        }
        Ok(self.tree.knn(query, k))
    }

    pub fn within(&self, query: &[f64; 3], radius: f64) -> Vec<usize> {
        self.tree.within(query, radius)
    }
}

/// Precomputed `k`-nearest-neighbour lists (self included) for every point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    k: usize,
    ids: Vec<u32>,
}

impl NeighborTable {
    pub fn build(index: &SpatialIndex, k: usize) -> Result<Self> {
        let n = index.len();
        if k == 0 || k > n {
            return Err(Error::KTooLarge { k, n });
        }
        let lists: Vec<Vec<usize>> = (0..n)
            .into_par_iter()
            .map(|i| index.knn(i, k))
            .collect::<Result<_>>()?;
        Ok(Self {
            k,
            ids: lists.into_iter().flatten().map(|i| i as u32).collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.ids.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn neighbors(&self, point: usize) -> &[u32] {
        &self.ids[point * self.k..(point + 1) * self.k]
    }
}

/// Builds a [`SpatialIndex`] over the scene's positions.
pub fn build_index(scene: &Scene) -> Result<SpatialIndex> {
    SpatialIndex::build(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_knn(points: &[[f64; 3]], q: usize, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d: f64 = (0..3).map(|j| (p[j] - points[q][j]).powi(2)).sum();
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    fn positions(n: usize, seed: u64) -> Vec<[f64; 3]> {
        use rand::Rng;
        let mut rng = crate::seed::rng(seed);
        (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
    }

    #[test]
    fn singleton() {
        let index = SpatialIndex::from_positions(vec![[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(index.knn(0, 1).unwrap(), vec![0]);
        assert!(matches!(index.knn(0, 2), Err(Error::KTooLarge { k: 2, n: 1 })));
        assert!(SpatialIndex::from_positions(vec![]).is_err());
    }

    #[test]
    fn collinear_tie() {
        let index =
            SpatialIndex::from_positions(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let nn = index.knn(1, 3).unwrap();
        assert_eq!(nn[0], 1);
        // tie between the ends resolves to the lower id
        assert_eq!(&nn[1..], &[0, 2]);
        assert_eq!(index.knn(2, 1).unwrap(), vec![2]);
    }

    #[test]
    fn duplicates_come_before_farther_points() {
        let pts = vec![[5.0, 5.0, 5.0], [0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let index = SpatialIndex::from_positions(pts).unwrap();
        assert_eq!(index.knn(3, 3).unwrap(), vec![1, 3, 2]);
        assert_eq!(index.knn(1, 2).unwrap(), vec![1, 3]);
    }

    #[test]
    fn matches_exhaustive_scan_500() {
        let pts = positions(500, 11);
        let index = SpatialIndex::from_positions(pts.clone()).unwrap();
        for q in 0..pts.len() {
            assert_eq!(index.knn(q, 5).unwrap(), brute_knn(&pts, q, 5));
        }
    }

    #[test]
    fn matches_exhaustive_scan_k80() {
        let pts = positions(200, 3);
        let index = SpatialIndex::from_positions(pts.clone()).unwrap();
        for q in 0..pts.len() {
            assert_eq!(index.knn(q, 80).unwrap(), brute_knn(&pts, q, 80));
        }
    }

    #[test]
    fn radius_query() {
        let pts = positions(300, 5);
        let tree = KdTree::new(pts.clone());
        for q in (0..300).step_by(7) {
            let expect: Vec<usize> = (0..300)
                .filter(|&i| dist2(&pts[i], &pts[q]) <= 0.04)
                .collect();
            assert_eq!(tree.within(&pts[q], 0.2), expect);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn knn_equals_exhaustive(
            // coarse grid coordinates force many exact distance ties
            raw in prop::collection::vec((0u8..6, 0u8..6, 0u8..3), 1..300),
            k_frac in 0.0f64..=1.0,
        ) {
            let pts: Vec<[f64; 3]> = raw.iter().map(|&(x, y, z)| [f64::from(x), f64::from(y), f64::from(z)]).collect();
            let n = pts.len();
            let k = ((n as f64 * k_frac) as usize).clamp(1, n);
            let index = SpatialIndex::from_positions(pts.clone()).unwrap();
            for q in (0..n).step_by(1 + n / 20) {
                prop_assert_eq!(index.knn(q, k).unwrap(), brute_knn(&pts, q, k));
            }
        }
    }
}
