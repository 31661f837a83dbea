use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pnal::boundary::extract_boundary;
use pnal::cluster::dbscan;
use pnal::metrics::{correction_stats, MetricReport};
use pnal::noise::{inject_dataset, NoiseKind, NoiseReport};
use pnal::synth::generate_dataset;
use pnal::trainer::{run_pipeline, Phase};
use pnal::{Label, Scene, SpatialIndex};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::dataset::{json_bytes, scene_name, write_dataset, write_file, Dataset, Manifest};
use crate::{core_failure, ClusterArgs, EvalArgs, Failure, InjectArgs, StatsArgs, SynthArgs, TrainArgs};

pub const OUTPUT_ROOT_ENV: &str = "PNAL_OUTPUT_ROOT";

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Failure::Invalid(msg.into()).into()
}

fn lib<T>(r: pnal::Result<T>) -> Result<T> {
    r.map_err(|e| core_failure(e).into())
}

/// Relative output paths live under `PNAL_OUTPUT_ROOT` when it is set.
fn resolve_out(out: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if out.is_relative() && !root.is_empty() => Path::new(&root).join(out),
        _ => out.to_path_buf(),
    }
}

/// Refuses to write into a directory that is also an input.
fn check_distinct(out: &Path, inputs: &[&Path]) -> Result<()> {
    let norm = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let target = norm(out);
    for input in inputs {
        if norm(input) == target {
            return Err(invalid(format!("output {} is also an input", out.display())));
        }
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let spec = &mut cfg.synth;
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.classes {
        spec.class_count = v;
    }
    if let Some(v) = args.instances_per_class {
        spec.instances_per_class = v;
    }
    if let Some(v) = args.points_per_instance {
        spec.points_per_instance = v;
    }
    if let Some(v) = args.color_noise {
        spec.color_noise = v;
    }
    if let Some(v) = args.instance_color_jitter {
        spec.instance_color_jitter = v;
    }
    if args.no_contact {
        spec.contact = false;
    }
    if let Some(v) = args.count {
        cfg.scene_count = v;
    }
    lib(cfg.synth.validate())?;
    let scenes = lib(generate_dataset(&cfg.synth, cfg.scene_count, cfg.synth.seed))?;
    let manifest = Manifest {
        class_count: cfg.synth.class_count,
        scenes: (0..scenes.len()).map(scene_name).collect(),
        synth: Some(cfg.synth.clone()),
        noise: None,
    };
    let out = resolve_out(&args.common.out);
    write_dataset(&out, &manifest, &scenes, None)?;
    println!("wrote {} scenes to {}", scenes.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SceneNoise<'a> {
    scene: &'a str,
    #[serde(flatten)]
    report: &'a NoiseReport,
}

#[derive(Debug, Serialize)]
struct NoiseSummary<'a> {
    spec: &'a pnal::noise::NoiseSpec,
    points: usize,
    flipped_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    instances: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flipped_instances: Option<usize>,
    /// Flipped over total instances, pooled over scenes.
    #[serde(skip_serializing_if = "Option::is_none")]
    measured_instance_rate: Option<f64>,
    scenes: Vec<SceneNoise<'a>>,
}

pub fn inject(args: InjectArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    let spec = &mut cfg.noise;
    if let Some(v) = args.kind {
        spec.kind = v;
    }
    if let Some(v) = args.tau {
        spec.tau = v;
    }
    if let Some(v) = args.tau_pair {
        spec.tau_pair = v;
    }
    if let Some(v) = args.alpha {
        spec.alpha = v;
    }
    if let Some(v) = args.beta {
        spec.beta = v;
    }
    if let Some(v) = args.pairs {
        spec.pairs = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    let out = resolve_out(&args.common.out);
    check_distinct(&out, &[&args.input])?;
    let data = Dataset::read(&args.input)?;
    lib(cfg.noise.validate(data.manifest.class_count))?;
    if cfg.noise.kind != NoiseKind::Boundary {
        for (s, name) in data.scenes.iter().zip(&data.manifest.scenes) {
            lib(s.require_instances().map(|_| ())).with_context(|| format!("scene {name}"))?;
        }
    }
    let noisy = lib(inject_dataset(&data.scenes, &cfg.noise))?;
    let scenes: Vec<Scene> = data
        .scenes
        .iter()
        .zip(&noisy)
        .map(|(s, n)| lib(s.with_labels(n.labels.clone())))
        .collect::<Result<_>>()?;

    let instances: Option<usize> = noisy.iter().map(|n| n.report.instance_count).sum();
    let flipped_instances: Option<usize> = noisy.iter().map(|n| n.report.flipped_instances).sum();
    let summary = NoiseSummary {
        spec: &cfg.noise,
        points: scenes.iter().map(Scene::len).sum(),
        flipped_points: noisy.iter().map(|n| n.report.flipped_points).sum(),
        instances,
        flipped_instances,
        measured_instance_rate: instances
            .zip(flipped_instances)
            .map(|(total, flipped)| flipped as f64 / total.max(1) as f64),
        scenes: data
            .manifest
            .scenes
            .iter()
            .zip(&noisy)
            .map(|(scene, n)| SceneNoise { scene, report: &n.report })
            .collect(),
    };
    let manifest = Manifest {
        noise: Some(cfg.noise.clone()),
        ..data.manifest.clone()
    };
    write_dataset(&out, &manifest, &scenes, None)?;
    write_file(&out.join("noise_report.json"), &json_bytes(&summary)?)?;
    println!(
        "flipped {} of {} points; report in {}",
        summary.flipped_points,
        summary.points,
        out.join("noise_report.json").display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ClusterSummary {
    scene: String,
    clusters: usize,
    non_singleton: usize,
    /// Share of points that belong to their cluster's majority instance.
    #[serde(skip_serializing_if = "Option::is_none")]
    instance_purity: Option<f64>,
}

pub fn cluster(args: ClusterArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    if let Some(v) = args.eps {
        cfg.train.eps_dbscan = v;
    }
    if let Some(v) = args.min_pts {
        cfg.train.min_pts = v;
    }
    if cfg.train.eps_dbscan.is_nan() || cfg.train.eps_dbscan <= 0.0 {
        return Err(invalid("eps must be positive"));
    }
    if cfg.train.min_pts == 0 {
        return Err(invalid("min_pts must be positive"));
    }
    let out = resolve_out(&args.common.out);
    check_distinct(&out, &[&args.input])?;
    let data = Dataset::read(&args.input)?;
    let sets = data
        .scenes
        .par_iter()
        .map(|s| lib(dbscan(s, cfg.train.eps_dbscan, cfg.train.min_pts)))
        .collect::<Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    fs::create_dir_all(&out)
        .map_err(Failure::Io)
        .with_context(|| format!("creating {}", out.display()))?;
    for ((name, scene), set) in data.manifest.scenes.iter().zip(&data.scenes).zip(&sets) {
        let mut dump = Vec::new();
        lib(set.write_dump(&mut dump))?;
        let file = name.strip_suffix(".txt").unwrap_or(name).to_string() + ".clusters";
        write_file(&out.join(file), &dump)?;
        let instance_purity = scene.instance_ids().map(|ids| {
            let majority: usize = set
                .iter()
                .map(|(_, members)| {
                    let mut counts = std::collections::BTreeMap::new();
                    for &p in members {
                        *counts.entry(ids[p]).or_insert(0usize) += 1;
                    }
                    counts.values().copied().max().unwrap_or(0)
                })
                .sum();
            majority as f64 / scene.len() as f64
        });
        summary.push(ClusterSummary {
            scene: name.clone(),
            clusters: set.len(),
            non_singleton: set.non_singleton_count(),
            instance_purity,
        });
    }
    write_file(&out.join("clusters.json"), &json_bytes(&summary)?)?;
    println!("clustered {} scenes into {}", summary.len(), out.display());
    Ok(())
}

fn apply_train_flags(cfg: &mut RunConfig, a: &TrainArgs) {
    let t = &mut cfg.train;
    if let Some(v) = a.pipeline {
        t.pipeline = v;
    }
    if let Some(v) = a.epochs {
        t.total_epochs = v;
    }
    if let Some(v) = a.warmup {
        t.e_warmup = v;
    }
    if let Some(v) = a.boundary_epochs {
        t.boundary_epochs = v;
    }
    if let Some(v) = a.q {
        t.q = v;
    }
    if let Some(v) = a.sigma {
        t.sigma = v;
    }
    if let Some(v) = a.gamma {
        t.gamma = v;
    }
    if let Some(v) = a.k_boundary {
        t.k_boundary = v;
    }
    if let Some(v) = a.eps {
        t.eps_dbscan = v;
    }
    if let Some(v) = a.min_pts {
        t.min_pts = v;
    }
    if let Some(v) = a.clusters {
        t.clusters = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.points_per_block {
        t.points_per_block = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if a.frozen_band {
        t.progressive = false;
    }
}

fn check_aligned(train: &Dataset, other: &Dataset, what: &str) -> Result<()> {
    if train.scenes.len() != other.scenes.len() {
        return Err(invalid(format!(
            "{what} has {} scenes, training set has {}",
            other.scenes.len(),
            train.scenes.len()
        )));
    }
    for (i, (a, b)) in train.scenes.iter().zip(&other.scenes).enumerate() {
        if a.positions() != b.positions() {
            return Err(invalid(format!("{what} scene {i} does not match the training points")));
        }
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.common.config.as_deref())?;
    apply_train_flags(&mut cfg, &args);
    lib(cfg.train.validate())?;
    let out = resolve_out(&args.common.out);
    let mut inputs: Vec<&Path> = vec![&args.input];
    inputs.extend(args.clean.as_deref());
    inputs.extend(args.test.as_deref());
    check_distinct(&out, &inputs)?;

    let data = Dataset::read(&args.input)?;
    data.labels()?;
    let clean = match &args.clean {
        Some(dir) => {
            let clean = Dataset::read(dir)?;
            check_aligned(&data, &clean, "clean reference")?;
            Some(clean.labels()?)
        }
        None => None,
    };
    let test = args.test.as_deref().map(Dataset::read).transpose()?;
    if let Some(test) = &test {
        test.labels()?;
        if test.manifest.class_count != data.manifest.class_count {
            return Err(invalid("test set has a different class count"));
        }
    }

    let names = &data.manifest.scenes;
    let mut epochs_log = String::new();
    let mut corrections_log = String::from("# scene epoch cluster old new reliable\n");
    let mut bands: Vec<Vec<u8>> = vec![Vec::new(); names.len()];
    let dump_band = args.dump_band;
    let outcome = lib(run_pipeline(
        &cfg.train,
        data.scenes.clone(),
        clean,
        test.as_ref().map(|t| t.scenes.as_slice()),
        &mut |record, set| {
            epochs_log.push_str(&serde_json::to_string(record)?);
            epochs_log.push('\n');
            for (i, dump) in bands.iter_mut().enumerate() {
                for c in set.corrections(i) {
                    let _ = writeln!(
                        corrections_log,
                        "{i} {} {} {} {} {}",
                        c.epoch, c.cluster, c.old_label, c.new_label, c.reliable_count
                    );
                }
                if dump_band && record.phase == Phase::PnalBoundary {
                    if let Some(band) = set.band(i) {
                        band.write_dump(dump, record.epoch)?;
                    }
                }
            }
            Ok(())
        },
    ))?;

    let cleaned: Vec<Scene> = data
        .scenes
        .iter()
        .zip(&outcome.cleaned)
        .map(|(s, l)| lib(s.with_labels(l.clone())))
        .collect::<Result<_>>()?;
    fs::create_dir_all(&out)
        .map_err(Failure::Io)
        .with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("config.json"), &json_bytes(&cfg)?)?;
    write_file(&out.join("epochs.jsonl"), epochs_log.as_bytes())?;
    write_file(&out.join("corrections.log"), corrections_log.as_bytes())?;
    write_file(&out.join("report.json"), &json_bytes(&outcome.report)?)?;
    write_dataset(&out.join("cleaned"), &data.manifest, &cleaned, Some(&outcome.replaced))?;
    if dump_band {
        let dir = out.join("bands");
        fs::create_dir_all(&dir)
            .map_err(Failure::Io)
            .with_context(|| format!("creating {}", dir.display()))?;
        for (name, dump) in names.iter().zip(&bands) {
            write_file(&dir.join(name), dump)?;
        }
    }
    print!("{}", outcome.report.to_table());
    Ok(())
}

fn read_scene(path: &Path, classes: Option<usize>) -> Result<Scene> {
    Scene::read_path(path, classes)
        .map_err(core_failure)
        .with_context(|| format!("reading {}", path.display()))
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut pred = read_scene(&args.pred, args.classes)?;
    let mut gt = read_scene(&args.gt, args.classes)?;
    if args.classes.is_none() && pred.class_count() != gt.class_count() {
        let m = pred.class_count().max(gt.class_count());
        pred = read_scene(&args.pred, Some(m))?;
        gt = read_scene(&args.gt, Some(m))?;
    }
    if pred.len() != gt.len() {
        return Err(invalid(format!("prediction has {} points, ground truth has {}", pred.len(), gt.len())));
    }
    if pred.positions() != gt.positions() {
        return Err(invalid("prediction and ground-truth points do not align line by line"));
    }
    let p = lib(pred.require_labels()).context("prediction file")?;
    let g = lib(gt.require_labels()).context("ground-truth file")?;
    let index = lib(SpatialIndex::build(&gt))?;
    let band = lib(extract_boundary(g, &index, args.k_boundary.min(gt.len())))?;
    let report = lib(MetricReport::evaluate(p, g, gt.class_count(), Some(band.mask())))?;
    if let Some(path) = &args.json {
        write_file(&resolve_out(path), &json_bytes(&report)?)?;
    }
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Debug, Serialize)]
struct Stats {
    scenes: usize,
    points: usize,
    class_count: usize,
    class_histogram: Vec<usize>,
    /// Scenes holding more than one class.
    multi_class_scenes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    instances: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    replaced_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_correction_fraction: Option<f64>,
}

pub fn stats(args: StatsArgs) -> Result<()> {
    let data = Dataset::read(&args.input)?;
    let labels = data.labels()?;
    let m = data.manifest.class_count;
    let mut class_histogram = vec![0usize; m];
    for &l in labels.iter().flatten() {
        class_histogram[l as usize] += 1;
    }
    let instances = data
        .scenes
        .iter()
        .map(|s| s.instance_ids().map(|ids| ids.iter().collect::<BTreeSet<_>>().len()))
        .sum();
    let mut stats = Stats {
        scenes: data.scenes.len(),
        points: labels.iter().map(Vec::len).sum(),
        class_count: m,
        class_histogram,
        multi_class_scenes: labels.iter().filter(|l| l.iter().any(|&x| x != l[0])).count(),
        instances,
        label_accuracy: None,
        replaced_fraction: None,
        true_correction_fraction: None,
    };
    if let Some(dir) = &args.clean {
        let clean = Dataset::read(dir)?;
        check_aligned(&data, &clean, "clean reference")?;
        let clean = clean.labels()?;
        let flat = |v: &[Vec<Label>]| v.concat();
        let (now, gt) = (flat(&labels), flat(&clean));
        stats.label_accuracy = Some(lib(pnal::metrics::overall_accuracy(&now, &gt))?);
        if let Some(masks) = data.masks()? {
            let mask = masks.concat();
            let (r, t) = lib(correction_stats(&now, &mask, &gt, &now))?;
            stats.replaced_fraction = Some(r);
            stats.true_correction_fraction = t;
        }
    }
    print!("{}", String::from_utf8(json_bytes(&stats)?)?);
    Ok(())
}
