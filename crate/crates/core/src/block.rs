//! Sliding-window room blocks over the xy-plane.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::seed;

pub const DEFAULT_BLOCK_SIZE: f64 = 1.0;
pub const DEFAULT_STRIDE: f64 = 0.5;
pub const DEFAULT_SAMPLE_POINTS: usize = 4096;

/// A square xy window of a scene; z is never split.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBlock {
    pub origin: [f64; 2],
    pub size: f64,
    /// Ascending ids of the scene points inside the window.
    pub members: Vec<usize>,
}

impl SceneBlock {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Window origins along one axis: the fewest stride steps whose half-open
/// windows `[o, o + size)` cover `[lo, hi]`.
fn axis_origins(lo: f64, hi: f64, size: f64, stride: f64) -> Vec<f64> {
    let mut origins = vec![lo];
    let mut i = 0u32;
    while lo + f64::from(i) * stride + size <= hi {
        i += 1;
        origins.push(lo + f64::from(i) * stride);
    }
    origins
}

/// Cuts the scene into `block_size` squares every `stride` meters; empty
/// windows are dropped. Blocks are ordered by x origin, then y origin.
pub fn block_partition(scene: &Scene, block_size: f64, stride: f64) -> Result<Vec<SceneBlock>> {
    if !(block_size > 0.0) || !block_size.is_finite() {
        return Err(Error::invalid("block_size", "must be positive"));
    }
    if !(stride > 0.0) || stride > block_size {
        return Err(Error::invalid("stride", "must lie in (0, block_size]"));
    }
    let (lo, hi) = scene.bounds();
    let xs = axis_origins(lo[0], hi[0], block_size, stride);
    let ys = axis_origins(lo[1], hi[1], block_size, stride);
    // bucket points by the stride cell holding them, then gather windows
    let cells_x = xs.len() + 1;
    let cells_y = ys.len() + 1;
    let cell_of = |v: f64, lo: f64, count: usize| -> usize {
        (((v - lo) / stride).floor().max(0.0) as usize).min(count - 1)
    };
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); cells_x * cells_y];
    for (id, p) in scene.positions().iter().enumerate() {
        let cx = cell_of(p[0], lo[0], cells_x);
        let cy = cell_of(p[1], lo[1], cells_y);
        cells[cx * cells_y + cy].push(id);
    }
    let span = (block_size / stride).ceil() as usize + 1;
    let mut blocks = Vec::new();
    for (ix, &ox) in xs.iter().enumerate() {
        for (iy, &oy) in ys.iter().enumerate() {
            let mut members = Vec::new();
            for cx in ix.saturating_sub(1)..(ix + span).min(cells_x) {
                for cy in iy.saturating_sub(1)..(iy + span).min(cells_y) {
                    for &id in &cells[cx * cells_y + cy] {
                        let p = scene.positions()[id];
                        if p[0] >= ox && p[0] < ox + block_size && p[1] >= oy && p[1] < oy + block_size {
                            members.push(id);
                        }
                    }
                }
            }
            if !members.is_empty() {
                members.sort_unstable();
                blocks.push(SceneBlock {
                    origin: [ox, oy],
                    size: block_size,
                    members,
                });
            }
        }
    }
    Ok(blocks)
}

/// Draws `n` member ids: without replacement when the block has at least
/// `n` points, with replacement otherwise.
pub fn sample_block(block: &SceneBlock, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("n", "sample size must be positive"));
    }
    if block.is_empty() {
        return Err(Error::invalid("block", "block has no points"));
    }
    let mut rng = seed::rng(seed);
    let m = block.len();
    Ok(if m >= n {
        index::sample(&mut rng, m, n)
            .into_iter()
            .map(|i| block.members[i])
            .collect()
    } else {
        (0..n).map(|_| block.members[rng.gen_range(0..m)]).collect()
    })
}
