//! Hand-crafted per-point features for the default predictor.

use super::predictor::Features;
use crate::block::SceneBlock;
use crate::error::Result;
use crate::index::SpatialIndex;
use crate::scene::Scene;

/// Block-relative x, y; scene-relative z; r, g, b; height above the lowest
/// point in meters; mean colour of the 8 nearest neighbours.
pub const FEATURE_DIM: usize = 10;
pub const COLOR_NEIGHBORS: usize = 8;

/// Block-independent parts of the features, computed once per scene.
#[derive(Debug, Clone)]
pub struct PointFeatures {
    z_lo: f64,
    z_range: f64,
    neighbor_colors: Vec<[f64; 3]>,
}

impl PointFeatures {
    pub fn new(scene: &Scene, index: &SpatialIndex) -> Result<Self> {
        let (lo, hi) = scene.bounds();
        let k = COLOR_NEIGHBORS.min(scene.len());
        let neighbor_colors = (0..scene.len())
            .map(|i| {
                let nn = index.knn(i, k)?;
                let mut mean = [0.0; 3];
                for &j in &nn {
                    for (m, c) in mean.iter_mut().zip(scene.colors()[j]) {
                        *m += c;
                    }
                }
                Ok(mean.map(|m| m / nn.len() as f64))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            z_lo: lo[2],
            z_range: (hi[2] - lo[2]).max(1e-9),
            neighbor_colors,
        })
    }

    pub fn row(&self, scene: &Scene, block: &SceneBlock, point: usize) -> [f64; FEATURE_DIM] {
        let p = scene.positions()[point];
        let c = scene.colors()[point];
        let n = self.neighbor_colors[point];
        [
            (p[0] - block.origin[0]) / block.size,
            (p[1] - block.origin[1]) / block.size,
            (p[2] - self.z_lo) / self.z_range,
            c[0],
            c[1],
            c[2],
            p[2] - self.z_lo,
            n[0],
            n[1],
            n[2],
        ]
    }

    /// Feature rows of `points`, in order, as seen from `block`.
    pub fn block_rows(&self, scene: &Scene, block: &SceneBlock, points: &[usize]) -> Features {
        let mut f = Features::with_capacity(FEATURE_DIM, points.len());
        for &p in points {
            f.push_row(&self.row(scene, block, p));
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_layout() {
        let pos = vec![[1.0, 2.0, 0.5], [1.5, 2.5, 1.5], [1.2, 2.2, 1.0]];
        let col = vec![[0.1, 0.2, 0.3], [0.3, 0.2, 0.1], [0.2, 0.2, 0.2]];
        let scene = Scene::new(pos, col, None, None, 2).unwrap();
        let index = SpatialIndex::build(&scene).unwrap();
        let pf = PointFeatures::new(&scene, &index).unwrap();
        let block = SceneBlock {
            origin: [1.0, 2.0],
            size: 1.0,
            members: vec![0, 1, 2],
        };
        let r = pf.row(&scene, &block, 1);
        assert_eq!(&r[..7], &[0.5, 0.5, 1.0, 0.3, 0.2, 0.1, 1.0]);
        // fewer than eight points: mean over the whole scene
        for (a, b) in r[7..].iter().zip([0.2, 0.2, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(pf.block_rows(&scene, &block, &[2, 0]).rows(), 2);
    }
}
