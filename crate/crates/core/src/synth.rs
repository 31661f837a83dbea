//! Deterministic synthetic indoor scenes with clean labels and instances.
//!
//! Every scene is a set of groups. A group is a square floor tile (class 0)
//! with one object of every other class standing along its edges: class 1
//! is a wall panel when there are at least three classes, the remaining
//! classes are open boxes whose height depends on the class. All instances
//! have the same surface area, so point density is uniform.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Label, Scene};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    /// Room size in meters, x y z.
    pub extents: [f64; 3],
    pub class_count: usize,
    pub instances_per_class: usize,
    pub points_per_instance: usize,
    /// Mean point spacing on surfaces, in meters.
    pub point_spacing: f64,
    /// Per-point colour noise (standard deviation per channel).
    pub color_noise: f64,
    /// Per-instance colour offset (standard deviation per channel).
    pub instance_color_jitter: f64,
    /// Objects touch their floor tile; otherwise they stand `GAP` away.
    pub contact: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            extents: [3.0, 3.0, 2.0],
            class_count: 6,
            instances_per_class: 5,
            points_per_instance: 400,
            point_spacing: 0.015,
            color_noise: 0.003,
            instance_color_jitter: 0.0,
            contact: true,
        }
    }
}

/// Distance between objects and tiles when `contact` is off.
pub const GAP: f64 = 0.1;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::invalid("class_count", "need at least two classes"));
        }
        if self.extents.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::invalid("extents", "must be positive"));
        }
        if self.instances_per_class == 0 || self.points_per_instance == 0 {
            return Err(Error::invalid("instances_per_class", "instance and point counts must be positive"));
        }
        if !(self.point_spacing > 0.0) {
            return Err(Error::invalid("point_spacing", "must be positive"));
        }
        if !(self.color_noise >= 0.0) || !(self.instance_color_jitter >= 0.0) {
            return Err(Error::invalid("color_noise", "must be non-negative"));
        }
        Ok(())
    }

    fn tile_side(&self) -> f64 {
        (self.points_per_instance as f64).sqrt() * self.point_spacing
    }

    fn has_wall(&self) -> bool {
        self.class_count >= 3
    }
}

/// Base colour of class `c`: evenly spaced hues at fixed saturation/value.
pub fn class_color(c: usize, class_count: usize) -> [f64; 3] {
    let h = c as f64 / class_count as f64 * 6.0;
    let (s, v) = (0.7, 0.8);
    let chroma = s * v;
    let x = chroma * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = v - chroma;
    [r + m, g + m, b + m]
}

/// An axis-aligned rectangle: origin plus two edge vectors.
#[derive(Debug, Clone, Copy)]
struct Face {
    origin: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
}

impl Face {
    fn area(&self) -> f64 {
        let n = |a: [f64; 3]| a.iter().map(|x| x * x).sum::<f64>().sqrt();
        n(self.u) * n(self.v)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 3] {
        let (a, b): (f64, f64) = (rng.gen(), rng.gen());
        [0, 1, 2].map(|i| self.origin[i] + a * self.u[i] + b * self.v[i])
    }
}

fn floor_face(x: f64, y: f64, w: f64, d: f64, z: f64) -> Face {
    Face {
        origin: [x, y, z],
        u: [w, 0.0, 0.0],
        v: [0.0, d, 0.0],
    }
}

/// Top and four sides of a box with footprint `[x, x+w] × [y, y+d]`.
fn open_box(x: f64, y: f64, w: f64, d: f64, h: f64) -> Vec<Face> {
    vec![
        floor_face(x, y, w, d, h),
        Face { origin: [x, y, 0.0], u: [w, 0.0, 0.0], v: [0.0, 0.0, h] },
        Face { origin: [x, y + d, 0.0], u: [w, 0.0, 0.0], v: [0.0, 0.0, h] },
        Face { origin: [x, y, 0.0], u: [0.0, d, 0.0], v: [0.0, 0.0, h] },
        Face { origin: [x + w, y, 0.0], u: [0.0, d, 0.0], v: [0.0, 0.0, h] },
    ]
}

fn sample_faces<R: Rng>(faces: &[Face], n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let total: f64 = faces.iter().map(Face::area).sum();
    (0..n)
        .map(|_| {
            let mut t = rng.gen::<f64>() * total;
            let mut pick = faces.len() - 1;
            for (i, f) in faces.iter().enumerate() {
                if t < f.area() {
                    pick = i;
                    break;
                }
                t -= f.area();
            }
            faces[pick].sample(rng)
        })
        .collect()
}

fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Box geometry of class `c` for a side holding `per_side` boxes: width
/// along the tile edge, depth away from it, height.
fn box_dims(spec: &SynthSpec, c: usize, per_side: usize) -> Result<(f64, f64, f64)> {
    let l = spec.tile_side();
    let area = l * l;
    let first = if spec.has_wall() { 2 } else { 1 };
    let count = spec.class_count - first;
    let t = if count > 1 { (c - first) as f64 / (count - 1) as f64 } else { 0.5 };
    let h = l * (0.3 + 0.5 * t);
    let w = 0.9 * l / per_side as f64;
    let d = (area - 2.0 * h * w) / (w + 2.0 * h);
    if !(d > 0.0) {
        return Err(Error::InfeasibleLayout(format!("class {c} boxes do not fit along a tile edge")));
    }
    Ok((w, d, h))
}

/// A scene with clean labels and instance ids.
pub fn generate_scene(spec: &SynthSpec) -> Result<Scene> {
    spec.validate()?;
    let m = spec.class_count;
    let l = spec.tile_side();
    let gap = if spec.contact { 0.0 } else { GAP };
    let wall = spec.has_wall();
    let box_classes: Vec<usize> = (if wall { 2 } else { 1 }..m).collect();
    let sides = if wall { 3 } else { 4 };
    let per_side = box_classes.len().div_ceil(sides).max(1);
    let mut max_depth: f64 = 0.0;
    for &c in &box_classes {
        let (_, d, h) = box_dims(spec, c, per_side)?;
        max_depth = max_depth.max(d);
        if h > spec.extents[2] {
            return Err(Error::InfeasibleLayout("boxes taller than the room".into()));
        }
    }
    if wall && l > spec.extents[2] {
        return Err(Error::InfeasibleLayout("wall panels taller than the room".into()));
    }
    let cell = l + 2.0 * (max_depth + gap) + GAP;
    let cols = (spec.extents[0] / cell).floor() as usize;
    let rows = (spec.extents[1] / cell).floor() as usize;
    let groups = spec.instances_per_class;
    if cols * rows < groups {
        return Err(Error::InfeasibleLayout(format!(
            "{groups} groups of {cell:.3} m do not fit a {cols} × {rows} grid"
        )));
    }

    let mut rng = seed::rng(seed::derive(spec.seed, "synth"));
    let mut cells: Vec<usize> = (0..cols * rows).collect();
    cells.shuffle(&mut rng);
    let slack = [spec.extents[0] / cols as f64 - cell, spec.extents[1] / rows as f64 - cell];
    let point_noise = Normal::new(0.0, spec.color_noise).map_err(|e| Error::invalid("color_noise", e.to_string()))?;
    let tint = Normal::new(0.0, spec.instance_color_jitter).map_err(|e| Error::invalid("instance_color_jitter", e.to_string()))?;

    let mut positions = Vec::with_capacity(groups * m * spec.points_per_instance);
    let mut colors = Vec::with_capacity(positions.capacity());
    let mut labels = Vec::with_capacity(positions.capacity());
    let mut instance_ids = Vec::with_capacity(positions.capacity());
    let mut next_instance = 0u32;
    for &cell_id in cells.iter().take(groups) {
        let (cx, cy) = (cell_id % cols, cell_id / cols);
        let x0 = cx as f64 * (cell + slack[0]) + max_depth + gap + GAP / 2.0 + rng.gen::<f64>() * slack[0];
        let y0 = cy as f64 * (cell + slack[1]) + max_depth + gap + GAP / 2.0 + rng.gen::<f64>() * slack[1];

        let mut objects: Vec<(usize, Vec<Face>)> = vec![(0, vec![floor_face(x0, y0, l, l, 0.0)])];
        if wall {
            // panel standing on the tile's -x edge
            objects.push((
                1,
                vec![Face {
                    origin: [x0 - gap, y0, 0.0],
                    u: [0.0, l, 0.0],
                    v: [0.0, 0.0, l],
                }],
            ));
        }
        let mut order = box_classes.clone();
        order.shuffle(&mut rng);
        let side_list: Vec<usize> = if wall { vec![0, 1, 2] } else { vec![0, 1, 2, 3] };
        for (slot, &c) in order.iter().enumerate() {
            let side = side_list[slot % sides];
            let j = slot / sides;
            let (w, d, h) = box_dims(spec, c, per_side)?;
            let along = j as f64 * l / per_side as f64 + 0.05 * l / per_side as f64;
            let faces = match side {
                // -y edge, +x edge, +y edge, -x edge
                0 => open_box(x0 + along, y0 - gap - d, w, d, h),
                1 => open_box(x0 + l + gap, y0 + along, d, w, h),
                2 => open_box(x0 + along, y0 + l + gap, w, d, h),
                _ => open_box(x0 - gap - d, y0 + along, d, w, h),
            };
            objects.push((c, faces));
        }
        objects.sort_by_key(|(c, _)| *c);

        for (c, faces) in objects {
            let base = class_color(c, m);
            let offset: [f64; 3] = std::array::from_fn(|_| tint.sample(&mut rng));
            for p in sample_faces(&faces, spec.points_per_instance, &mut rng) {
                positions.push(p.map(quantize));
                colors.push(std::array::from_fn(|i| {
                    quantize((base[i] + offset[i] + point_noise.sample(&mut rng)).clamp(0.0, 1.0))
                }));
                labels.push(c as Label);
                instance_ids.push(next_instance);
            }
            next_instance += 1;
        }
    }
    Scene::new(positions, colors, Some(labels), Some(instance_ids), m)
}

/// `count` independent scenes; scene `i` uses a sub-seed of `seed` and `i`.
pub fn generate_dataset(spec: &SynthSpec, count: usize, seed: u64) -> Result<Vec<Scene>> {
    if count == 0 {
        return Err(Error::invalid("scene_count", "must be positive"));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            generate_scene(&SynthSpec {
                seed: seed::derive_indexed(seed, "scene", i as u64),
                ..spec.clone()
            })
        })
        .collect()
}
