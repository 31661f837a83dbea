//! Synthetic label noise: instance-level flips and morphological boundary
//! noise.
//!
//! Every injector is a pure function of its inputs and seed and returns the
//! corrupted labels together with a [`NoiseReport`].

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::SpatialIndex;
use crate::scene::{Label, Scene};
use crate::seed;

/// Neighbourhood size of the morphological noise model.
pub const BOUNDARY_NEIGHBORS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    AsymmetricPairs,
    MixedAsymmetric,
    Boundary,
    MixedInstanceBoundary,
}

/// Parameters of a noise setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Overall instance flip rate.
    pub tau: f64,
    /// Within-pair flip rate.
    pub tau_pair: f64,
    /// Fraction of scenes that receive boundary noise.
    pub alpha: f64,
    /// Per-scene boundary noise level.
    pub beta: f64,
    /// Unordered confusable class pairs.
    pub pairs: Vec<(Label, Label)>,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Symmetric,
            tau: 0.0,
            tau_pair: 0.0,
            alpha: 0.0,
            beta: 0.0,
            pairs: Vec::new(),
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self, class_count: usize) -> Result<()> {
        for (name, v) in [("tau", self.tau), ("tau_pair", self.tau_pair), ("alpha", self.alpha), ("beta", self.beta)] {
            check_rate(name, v)?;
        }
        PairTable::new(&self.pairs, class_count).map(|_| ())
    }
}

fn check_rate(name: &'static str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(name, format!("{v} is outside [0, 1]")));
    }
    Ok(())
}

/// Requested versus measured corruption of one injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub requested_rate: f64,
    /// Flipped instances over instances for instance noise; noisy points
    /// over the corruptible boundary band for boundary noise.
    pub measured_rate: f64,
    /// Points whose label differs from the input.
    pub flipped_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flipped_instances: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance_count: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct NoisyLabels {
    pub labels: Vec<Label>,
    pub report: NoiseReport,
}

/// Partner lookup for confusable pairs.
#[derive(Debug, Clone)]
struct PairTable {
    partner: Vec<Option<Label>>,
}

impl PairTable {
    fn new(pairs: &[(Label, Label)], class_count: usize) -> Result<Self> {
        let mut partner = vec![None; class_count];
        for &(a, b) in pairs {
            for c in [a, b] {
                if c as usize >= class_count {
                    return Err(Error::LabelOutOfRange { label: c, class_count });
                }
            }
            if a == b {
                return Err(Error::invalid("pairs", format!("class {a} is paired with itself")));
            }
            for c in [a, b] {
                if partner[c as usize].is_some() {
                    return Err(Error::OverlappingPairs(c));
                }
            }
            partner[a as usize] = Some(b);
            partner[b as usize] = Some(a);
        }
        Ok(Self { partner })
    }

    fn partner(&self, class: Label) -> Option<Label> {
        self.partner[class as usize]
    }
}

/// Instance members and their majority label, ordered by instance id.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: u32,
    pub label: Label,
    pub members: Vec<usize>,
}

pub fn instances(scene: &Scene) -> Result<Vec<Instance>> {
    let labels = scene.require_labels()?;
    let ids = scene.require_instances()?;
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (p, &id) in ids.iter().enumerate() {
        groups.entry(id).or_default().push(p);
    }
    Ok(groups
        .into_iter()
        .map(|(id, members)| {
            let mut counts = vec![0usize; scene.class_count()];
            for &p in &members {
                counts[labels[p] as usize] += 1;
            }
            Instance {
                id,
                label: argmax_lowest(&counts) as Label,
                members,
            }
        })
        .collect())
}

fn argmax_lowest(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Uniform draw from `0..class_count` excluding `current`.
fn other_class(rng: &mut seed::Rng, current: Label, class_count: usize) -> Label {
    let r = rng.gen_range(0..class_count as u32 - 1);
    if r >= current {
        r + 1
    } else {
        r
    }
}

/// Applies a per-instance decision `flip(instance) -> Option<new label>`.
/// Each instance consumes randomness in id order, so results depend only
/// on the seed.
fn apply_instance_flips(
    scene: &Scene,
    requested: f64,
    mut decide: impl FnMut(&Instance) -> Option<Label>,
) -> Result<NoisyLabels> {
    let clean = scene.require_labels()?;
    let insts = instances(scene)?;
    let mut labels = clean.to_vec();
    let mut flipped_instances = 0;
    for inst in &insts {
        if let Some(new) = decide(inst) {
            if new != inst.label {
                flipped_instances += 1;
            }
            for &p in &inst.members {
                labels[p] = new;
            }
        }
    }
    let flipped_points = labels.iter().zip(clean).filter(|(a, b)| a != b).count();
    Ok(NoisyLabels {
        labels,
        report: NoiseReport {
            requested_rate: requested,
            measured_rate: flipped_instances as f64 / insts.len() as f64,
            flipped_points,
            flipped_instances: Some(flipped_instances),
            instance_count: Some(insts.len()),
        },
    })
}

/// Each instance flips with probability `tau` to a uniformly chosen other
/// class.
pub fn inject_symmetric(scene: &Scene, tau: f64, seed: u64) -> Result<NoisyLabels> {
    check_rate("tau", tau)?;
    let m = scene.class_count();
    let mut rng = seed::rng(seed);
    apply_instance_flips(scene, tau, |inst| {
        // one uniform per instance keeps streams aligned across rates
        let u: f64 = rng.gen();
        let other = other_class(&mut rng, inst.label, m);
        (u < tau).then_some(other)
    })
}

/// Instances of paired classes flip to their partner with probability
/// `tau_pair`; other instances are untouched.
pub fn inject_asymmetric_pairs(scene: &Scene, tau_pair: f64, pairs: &[(Label, Label)], seed: u64) -> Result<NoisyLabels> {
    check_rate("tau_pair", tau_pair)?;
    let table = PairTable::new(pairs, scene.class_count())?;
    let mut rng = seed::rng(seed);
    apply_instance_flips(scene, tau_pair, |inst| {
        let u: f64 = rng.gen();
        table.partner(inst.label).filter(|_| u < tau_pair)
    })
}

/// Flip rate for unpaired instances such that the expected overall instance
/// flip rate is `tau`.
pub fn mixed_unpaired_rate(paired: usize, unpaired: usize, tau: f64, tau_pair: f64) -> Result<f64> {
    let total = (paired + unpaired) as f64;
    if unpaired == 0 {
        if (tau - tau_pair).abs() > 1e-12 {
            return Err(Error::InfeasibleRate {
                rate: if tau > tau_pair { f64::INFINITY } else { f64::NEG_INFINITY },
            });
        }
        return Ok(0.0);
    }
    let rate = (tau * total - tau_pair * paired as f64) / unpaired as f64;
    if !(-1e-12..=1.0 + 1e-12).contains(&rate) {
        return Err(Error::InfeasibleRate { rate });
    }
    Ok(rate.clamp(0.0, 1.0))
}

/// Paired classes flip within their pair at `tau_pair`; the rest flip
/// symmetrically at the rate that makes the expected overall rate `tau`.
pub fn inject_mixed_asymmetric(
    scene: &Scene,
    tau: f64,
    tau_pair: f64,
    pairs: &[(Label, Label)],
    seed: u64,
) -> Result<NoisyLabels> {
    check_rate("tau", tau)?;
    check_rate("tau_pair", tau_pair)?;
    let table = PairTable::new(pairs, scene.class_count())?;
    let insts = instances(scene)?;
    let paired = insts.iter().filter(|i| table.partner(i.label).is_some()).count();
    let rate = mixed_unpaired_rate(paired, insts.len() - paired, tau, tau_pair)?;
    mixed_with_rate(scene, tau, tau_pair, rate, &table, seed)
}

fn mixed_with_rate(scene: &Scene, tau: f64, tau_pair: f64, unpaired_rate: f64, table: &PairTable, seed: u64) -> Result<NoisyLabels> {
    let m = scene.class_count();
    let mut rng = seed::rng(seed);
    apply_instance_flips(scene, tau, |inst| {
        let u: f64 = rng.gen();
        let other = other_class(&mut rng, inst.label, m);
        match table.partner(inst.label) {
            Some(p) => (u < tau_pair).then_some(p),
            None => (u < unpaired_rate).then_some(other),
        }
    })
}

/// Points whose `k` nearest neighbours (self included) carry another label.
pub fn boundary_points(labels: &[Label], index: &SpatialIndex, k: usize) -> Result<Vec<usize>> {
    let k = k.min(labels.len());
    let mut out = Vec::new();
    for i in 0..labels.len() {
        let nn = index.knn(i, k)?;
        if nn.iter().any(|&j| labels[j] != labels[i]) {
            out.push(i);
        }
    }
    Ok(out)
}

/// The corruptible set: every point in the `k`-neighbourhood of a boundary
/// point (boundary points included). Returned as a membership mask.
pub fn corruptible_band(labels: &[Label], index: &SpatialIndex, k: usize) -> Result<Vec<bool>> {
    let k = k.min(labels.len());
    let mut band = vec![false; labels.len()];
    for i in boundary_points(labels, index, k)? {
        for j in index.knn(i, k)? {
            band[j] = true;
        }
    }
    Ok(band)
}

/// Flip probability of a neighbour at distance `d` when the neighbourhood's
/// mean distance is `davg`: a linear ramp from `beta` at the sampled point
/// down to zero at twice the mean distance.
pub fn flip_probability(d: f64, davg: f64, beta: f64) -> f64 {
    if davg <= 0.0 {
        return beta;
    }
    beta * (1.0 - d / (2.0 * davg)).clamp(0.0, 1.0)
}

/// Share of the clean boundary points that can be held noisy at once.
///
/// Flips toward either side of a boundary cancel out, so the number of
/// noisy points settles near a quarter of the boundary points whatever
/// `beta` is (0.22 to 0.31 across synthetic layouts). Scaling by 0.2 keeps
/// every level in `[0, 1]` reachable.
pub const BOUNDARY_NOISE_CAPACITY: f64 = 0.2;

/// Target number of noisy points for level `beta`:
/// `ceil(beta * 0.2 * boundary_count)`.
pub fn boundary_threshold(beta: f64, boundary_count: usize) -> usize {
    (beta * BOUNDARY_NOISE_CAPACITY * boundary_count as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Morphological boundary noise.
///
/// Repeatedly samples a class uniformly among those present, then a point
/// of that class; if the point's 80 nearest neighbours hold another label,
/// neighbours adopt the point's label with a distance-decaying probability.
/// Stops once at least [`boundary_threshold`] points are noisy; fails if
/// the noisy count sets no new high for a long stretch of iterations.
pub fn inject_boundary(scene: &Scene, beta: f64, seed: u64) -> Result<NoisyLabels> {
    let index = SpatialIndex::build(scene)?;
    inject_boundary_indexed(scene, &index, beta, seed)
}

pub fn inject_boundary_indexed(scene: &Scene, index: &SpatialIndex, beta: f64, seed: u64) -> Result<NoisyLabels> {
    check_rate("beta", beta)?;
    let clean = scene.require_labels()?;
    let n = clean.len();
    let k = BOUNDARY_NEIGHBORS.min(n);
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, &l) in clean.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut noisy = clean.to_vec();
    if beta == 0.0 {
        return Ok(boundary_outcome(noisy, 0, beta, 0));
    }
    if by_class.len() < 2 {
        return Err(Error::NoBoundary("scene holds a single class".into()));
    }
    let boundary_count = boundary_points(clean, index, k)?.len();
    let threshold = boundary_threshold(beta, boundary_count);
    let classes: Vec<&Vec<usize>> = by_class.values().collect();
    let mut rng = seed::rng(seed);
    let mut count = 0usize;
    let mut best = 0usize;
    let mut idle = 0usize;
    let idle_limit = 10_000 + 50 * n;
    while count < threshold {
        let points = classes[rng.gen_range(0..classes.len())];
        let i = points[rng.gen_range(0..points.len())];
        let nn = index.knn_with_distances(i, k)?;
        if nn.iter().any(|&(j, _)| clean[j] != clean[i]) {
            let davg = nn.iter().map(|&(_, d)| d).sum::<f64>() / nn.len() as f64;
            for &(j, d) in &nn {
                let u: f64 = rng.gen();
                if u < flip_probability(d, davg, beta) && noisy[j] != clean[i] {
                    let was_noisy = noisy[j] != clean[j];
                    noisy[j] = clean[i];
                    let is_noisy = noisy[j] != clean[j];
                    match (was_noisy, is_noisy) {
                        (false, true) => count += 1,
                        (true, false) => count -= 1,
                        _ => {}
                    }
                }
            }
        }
        if count > best {
            best = count;
            idle = 0;
        } else {
            idle += 1;
            if idle > idle_limit {
                return Err(Error::NoBoundary(format!(
                    "{idle} iterations without progress at {count}/{threshold} noisy points"
                )));
            }
        }
    }
    Ok(boundary_outcome(noisy, count, beta, boundary_count))
}

/// `measured_rate` is the flipped count relative to the capacity
/// `0.2 * boundary_count`, so it lands just above `beta`.
fn boundary_outcome(labels: Vec<Label>, flipped: usize, beta: f64, boundary_count: usize) -> NoisyLabels {
    let capacity = BOUNDARY_NOISE_CAPACITY * boundary_count as f64;
    NoisyLabels {
        labels,
        report: NoiseReport {
            requested_rate: beta,
            measured_rate: if capacity == 0.0 { 0.0 } else { flipped as f64 / capacity },
            flipped_points: flipped,
            flipped_instances: None,
            instance_count: None,
        },
    }
}

/// Boundary noise over a dataset: `round(alpha * len)` scenes, chosen
/// without replacement, are corrupted at level `beta`. Chosen scenes that
/// hold a single class are left unchanged.
pub fn inject_dataset_boundary(scenes: &[Scene], alpha: f64, beta: f64, seed: u64) -> Result<Vec<NoisyLabels>> {
    check_rate("alpha", alpha)?;
    check_rate("beta", beta)?;
    if scenes.is_empty() {
        return Err(Error::invalid("scenes", "dataset is empty"));
    }
    let chosen = choose_scenes(scenes.len(), alpha, seed);
    scenes
        .iter()
        .enumerate()
        .map(|(s, scene)| {
            let labels = scene.require_labels()?;
            let single_class = labels.iter().all(|&l| l == labels[0]);
            if chosen.contains(&s) && !single_class {
                inject_boundary(scene, beta, seed::derive_indexed(seed, "boundary-scene", s as u64))
            } else {
                Ok(boundary_outcome(labels.to_vec(), 0, 0.0, 0))
            }
        })
        .collect()
}

/// Indices of the `round(alpha * count)` scenes selected for boundary noise.
pub fn choose_scenes(count: usize, alpha: f64, seed: u64) -> BTreeSet<usize> {
    let amount = ((alpha * count as f64).round() as usize).min(count);
    let mut rng = seed::rng(seed::derive(seed, "scene-choice"));
    index::sample(&mut rng, count, amount).into_iter().collect()
}

/// Applies a full noise setting to a dataset. Instance rates for the mixed
/// asymmetric setting are computed from dataset-wide class frequencies.
pub fn inject_dataset(scenes: &[Scene], spec: &NoiseSpec) -> Result<Vec<NoisyLabels>> {
    if scenes.is_empty() {
        return Err(Error::invalid("scenes", "dataset is empty"));
    }
    spec.validate(scenes[0].class_count())?;
    let scene_seed = |s: usize| seed::derive_indexed(spec.seed, "instance-scene", s as u64);
    match spec.kind {
        NoiseKind::Symmetric => scenes
            .iter()
            .enumerate()
            .map(|(s, sc)| inject_symmetric(sc, spec.tau, scene_seed(s)))
            .collect(),
        NoiseKind::AsymmetricPairs => scenes
            .iter()
            .enumerate()
            .map(|(s, sc)| inject_asymmetric_pairs(sc, spec.tau_pair, &spec.pairs, scene_seed(s)))
            .collect(),
        NoiseKind::MixedAsymmetric => {
            let table = PairTable::new(&spec.pairs, scenes[0].class_count())?;
            let (mut paired, mut total) = (0, 0);
            for sc in scenes {
                let insts = instances(sc)?;
                paired += insts.iter().filter(|i| table.partner(i.label).is_some()).count();
                total += insts.len();
            }
            let rate = mixed_unpaired_rate(paired, total - paired, spec.tau, spec.tau_pair)?;
            scenes
                .iter()
                .enumerate()
                .map(|(s, sc)| mixed_with_rate(sc, spec.tau, spec.tau_pair, rate, &table, scene_seed(s)))
                .collect()
        }
        NoiseKind::Boundary => inject_dataset_boundary(scenes, spec.alpha, spec.beta, spec.seed),
        NoiseKind::MixedInstanceBoundary => {
            let first: Vec<NoisyLabels> = scenes
                .iter()
                .enumerate()
                .map(|(s, sc)| inject_symmetric(sc, spec.tau, scene_seed(s)))
                .collect::<Result<_>>()?;
            let relabeled: Vec<Scene> = scenes
                .iter()
                .zip(&first)
                .map(|(sc, nl)| sc.with_labels(nl.labels.clone()))
                .collect::<Result<_>>()?;
            let second = inject_dataset_boundary(&relabeled, spec.alpha, spec.beta, spec.seed)?;
            Ok(scenes
                .iter()
                .zip(first.into_iter().zip(second))
                .map(|(sc, (inst, bnd))| {
                    let clean = sc.labels().expect("checked by instance noise");
                    let flipped_points = bnd.labels.iter().zip(clean).filter(|(a, b)| a != b).count();
                    NoisyLabels {
                        labels: bnd.labels,
                        report: NoiseReport {
                            requested_rate: spec.tau,
                            measured_rate: inst.report.measured_rate,
                            flipped_points,
                            flipped_instances: inst.report.flipped_instances,
                            instance_count: inst.report.instance_count,
                        },
                    }
                })
                .collect())
        }
    }
}
