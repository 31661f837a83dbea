//! Epoch loop: predict, record history, clean, fit.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ClusterSource, Phase, TrainConfig};
use super::features::{PointFeatures, FEATURE_DIM};
use super::predictor::{default_predictor, LinearSoftmax, Predictor};
use crate::block::{block_partition, sample_block, SceneBlock};
use crate::boundary::{boundary_cleaning_epoch, BoundaryBand};
use crate::cleaning::{clean_epoch, CleaningState, Correction, PredictionHistory};
use crate::cluster::{dbscan, ClusterSet};
use crate::error::{check_len, Error, Result};
use crate::index::{NeighborTable, SpatialIndex};
use crate::metrics::{correction_stats, MetricReport};
use crate::scene::{Label, Scene};
use crate::seed;

/// A scene with everything the epoch loop needs precomputed.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene: Scene,
    pub index: SpatialIndex,
    pub blocks: Vec<SceneBlock>,
    pub features: PointFeatures,
    pub clusters: Option<ClusterSet>,
    pub neighbors: Option<NeighborTable>,
}

impl PreparedScene {
    pub fn new(scene: Scene, config: &TrainConfig, clusters: bool, neighbors: bool) -> Result<Self> {
        let index = SpatialIndex::build(&scene)?;
        let blocks = block_partition(&scene, config.block_size, config.stride)?;
        let features = PointFeatures::new(&scene, &index)?;
        let clusters = if clusters {
            Some(match config.clusters {
                ClusterSource::Dbscan => dbscan(&scene, config.eps_dbscan, config.min_pts)?,
                ClusterSource::Instances => ClusterSet::from_instances(&scene)?,
            })
        } else {
            None
        };
        let neighbors = if neighbors {
            Some(NeighborTable::build(&index, config.k_boundary)?)
        } else {
            None
        };
        Ok(Self {
            scene,
            index,
            blocks,
            features,
            clusters,
            neighbors,
        })
    }

    /// Per-point predictions stitched from every block; later blocks
    /// overwrite earlier ones where windows overlap.
    pub fn predict(&self, predictor: &dyn Predictor) -> Vec<Label> {
        let mut out = vec![0; self.scene.len()];
        for block in &self.blocks {
            let rows = self.features.block_rows(&self.scene, block, &block.members);
            for (&p, l) in block.members.iter().zip(predictor.predict_labels(&rows)) {
                out[p] = l;
            }
        }
        out
    }
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean loss over the masked-in samples of the epoch.
    pub loss: f64,
    pub replaced_fraction: f64,
    /// Accuracy of replaced labels; null without a clean reference or
    /// before anything is replaced.
    pub true_correction_fraction: Option<f64>,
    /// Accuracy of this epoch's predictions against the training labels
    /// they were made for.
    pub train_oa: f64,
    /// Accuracy of the current training labels against the clean reference.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub band_fraction: Option<f64>,
}

/// Training scenes with their labels under correction.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    scenes: Vec<PreparedScene>,
    states: Vec<CleaningState>,
    histories: Vec<PredictionHistory>,
    bands: Vec<Option<BoundaryBand>>,
    corrections: Vec<Vec<Correction>>,
    noisy_start: Vec<Vec<Label>>,
    clean: Option<Vec<Vec<Label>>>,
    class_count: usize,
}

fn pooled_accuracy(a: &[Vec<Label>], b: &[Vec<Label>]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (x, y) in a.iter().zip(b) {
        total += x.len();
        hit += x.iter().zip(y).filter(|(p, q)| p == q).count();
    }
    hit as f64 / total.max(1) as f64
}

impl TrainingSet {
    /// Prepares noisy-labelled scenes. `clean` optionally holds the clean
    /// labels of every scene, for correction statistics only.
    pub fn prepare(scenes: Vec<Scene>, clean: Option<Vec<Vec<Label>>>, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let first = scenes.first().ok_or(Error::EmptyScene)?;
        let class_count = first.class_count();
        for s in &scenes {
            s.require_labels()?;
            if s.class_count() != class_count {
                return Err(Error::invalid("class_count", "scenes disagree on the class count"));
            }
        }
        if let Some(clean) = &clean {
            check_len(scenes.len(), clean.len())?;
            for (s, c) in scenes.iter().zip(clean) {
                check_len(s.len(), c.len())?;
                crate::scene::check_labels(c, class_count)?;
            }
        }
        if config.uses_boundary() {
            let multi = scenes.iter().any(|s| {
                let l = s.labels().unwrap_or(&[]);
                l.iter().any(|&x| x != l[0])
            });
            if !multi {
                return Err(Error::NoBoundary("every training scene holds a single class".into()));
            }
        }
        let cleaning = config.pipeline != super::config::Pipeline::Ce;
        let boundary = config.uses_boundary();
        let scenes: Vec<PreparedScene> = scenes
            .into_par_iter()
            .map(|s| PreparedScene::new(s, config, cleaning, boundary))
            .collect::<Result<_>>()?;
        let mut states = Vec::with_capacity(scenes.len());
        let mut histories = Vec::with_capacity(scenes.len());
        let mut noisy_start = Vec::with_capacity(scenes.len());
        for p in &scenes {
            let labels = p.scene.require_labels()?.to_vec();
            states.push(CleaningState::new(labels.clone(), class_count)?.with_mask_on_confirm(config.mask_on_confirm));
            histories.push(PredictionHistory::new(p.scene.len(), config.q, class_count)?);
            noisy_start.push(labels);
        }
        let n = scenes.len();
        Ok(Self {
            scenes,
            states,
            histories,
            bands: vec![None; n],
            corrections: vec![Vec::new(); n],
            noisy_start,
            clean,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn scene(&self, i: usize) -> &PreparedScene {
        &self.scenes[i]
    }

    pub fn state(&self, i: usize) -> &CleaningState {
        &self.states[i]
    }

    pub fn history(&self, i: usize) -> &PredictionHistory {
        &self.histories[i]
    }

    /// The band used by the most recent boundary epoch of scene `i`.
    pub fn band(&self, i: usize) -> Option<&BoundaryBand> {
        self.bands[i].as_ref()
    }

    /// Corrections applied to scene `i` in the most recent epoch.
    pub fn corrections(&self, i: usize) -> &[Correction] {
        &self.corrections[i]
    }

    pub fn noisy_start(&self, i: usize) -> &[Label] {
        &self.noisy_start[i]
    }

    pub fn clean_reference(&self, i: usize) -> Option<&[Label]> {
        self.clean.as_ref().map(|c| c[i].as_slice())
    }

    pub fn labels(&self) -> Vec<Vec<Label>> {
        self.states.iter().map(|s| s.labels().to_vec()).collect()
    }

    pub fn replaced(&self) -> Vec<Vec<bool>> {
        self.states.iter().map(|s| s.replaced().to_vec()).collect()
    }

    /// Replaces the correction clusters of scene `i`.
    pub fn set_clusters(&mut self, i: usize, clusters: ClusterSet) -> Result<()> {
        check_len(self.scenes[i].scene.len(), clusters.point_count())?;
        self.scenes[i].clusters = Some(clusters);
        Ok(())
    }

    /// Empties every prediction history.
    pub fn reset_histories(&mut self) -> Result<()> {
        for h in &mut self.histories {
            *h = PredictionHistory::new(h.len(), h.capacity(), h.class_count())?;
        }
        Ok(())
    }

    pub fn predict(&self, predictor: &dyn Predictor) -> Vec<Vec<Label>> {
        self.scenes.par_iter().map(|s| s.predict(predictor)).collect()
    }

    pub fn record(&mut self, predictions: &[Vec<Label>]) -> Result<()> {
        check_len(self.len(), predictions.len())?;
        for (h, p) in self.histories.iter_mut().zip(predictions) {
            h.record_epoch(p)?;
        }
        Ok(())
    }

    /// The cleaning step of `phase`; warm-up and CE epochs clean nothing.
    pub fn clean(&mut self, phase: Phase, epoch: usize, config: &TrainConfig) -> Result<()> {
        if matches!(phase, Phase::Warmup | Phase::Ce) {
            for c in &mut self.corrections {
                c.clear();
            }
            return Ok(());
        }
        let vote_seed = seed::derive_indexed(config.seed, "vote", epoch as u64);
        let results: Vec<Result<(Vec<Correction>, Option<BoundaryBand>)>> = self
            .scenes
            .par_iter()
            .zip(self.states.par_iter_mut())
            .zip(self.histories.par_iter())
            .zip(self.bands.par_iter())
            .enumerate()
            .map(|(i, (((scene, state), history), prev))| {
                let clusters = scene
                    .clusters
                    .as_ref()
                    .ok_or_else(|| Error::invalid("clusters", "scene prepared without clusters"))?;
                let mut rng = seed::rng(seed::derive_indexed(vote_seed, "scene", i as u64));
                match phase {
                    Phase::Pnal => {
                        let log = clean_epoch(state, clusters, history, config.sigma, config.gamma, &mut rng, epoch)?;
                        Ok((log, None))
                    }
                    _ => {
                        let band = match (prev, config.progressive) {
                            (Some(frozen), false) => frozen.clone(),
                            _ => {
                                let table = scene
                                    .neighbors
                                    .as_ref()
                                    .ok_or_else(|| Error::invalid("neighbors", "scene prepared without neighbour lists"))?;
                                BoundaryBand::from_neighbors(state.labels(), table)?
                            }
                        }
                        .with_epoch(state.epoch());
                        let log = boundary_cleaning_epoch(state, &band, clusters, history, config.sigma, config.gamma, &mut rng, epoch)?;
                        Ok((log, Some(band)))
                    }
                }
            })
            .collect();
        for (i, r) in results.into_iter().enumerate() {
            let (log, band) = r?;
            self.corrections[i] = log;
            if band.is_some() {
                self.bands[i] = band;
            }
        }
        Ok(())
    }

    fn loss_mask(&self, i: usize, phase: Phase) -> Vec<bool> {
        let state = &self.states[i];
        match phase {
            Phase::Warmup | Phase::Ce => vec![true; state.len()],
            Phase::Pnal => state.replaced().to_vec(),
            Phase::PnalBoundary => match &self.bands[i] {
                Some(band) => band.mask().iter().zip(state.replaced()).map(|(&b, &r)| !b || r).collect(),
                None => vec![true; state.len()],
            },
        }
    }

    /// One pass over every block in seeded order, a gradient step per batch.
    /// Returns the mean loss over masked-in samples.
    pub fn fit(&self, predictor: &mut dyn Predictor, phase: Phase, epoch: usize, config: &TrainConfig) -> Result<f64> {
        let masks: Vec<Vec<bool>> = (0..self.len()).map(|i| self.loss_mask(i, phase)).collect();
        let mut order: Vec<(usize, usize)> = self
            .scenes
            .iter()
            .enumerate()
            .flat_map(|(s, p)| (0..p.blocks.len()).map(move |b| (s, b)))
            .collect();
        order.shuffle(&mut seed::rng(seed::derive_indexed(config.seed, "batch_order", epoch as u64)));
        let sample_seed = seed::derive_indexed(config.seed, "block_sample", epoch as u64);
        let mut loss_sum = 0.0;
        let mut used_total = 0usize;
        for (pos, &(s, b)) in order.iter().enumerate() {
            let prepared = &self.scenes[s];
            let block = &prepared.blocks[b];
            let ids = sample_block(block, config.points_per_block, seed::derive_indexed(sample_seed, "block", pos as u64))?;
            let labels = self.states[s].labels();
            for chunk in ids.chunks(config.batch_size) {
                let rows = prepared.features.block_rows(&prepared.scene, block, chunk);
                let targets: Vec<Label> = chunk.iter().map(|&p| labels[p]).collect();
                let mask: Vec<bool> = chunk.iter().map(|&p| masks[s][p]).collect();
                let used = mask.iter().filter(|&&m| m).count();
                if used == 0 {
                    continue;
                }
                loss_sum += predictor.fit_step(&rows, &targets, &mask)? * used as f64;
                used_total += used;
            }
        }
        Ok(if used_total == 0 { 0.0 } else { loss_sum / used_total as f64 })
    }

    fn statistics(&self) -> Result<(f64, Option<f64>, Option<f64>)> {
        let total: usize = self.states.iter().map(|s| s.len()).sum();
        let replaced: usize = self.states.iter().map(|s| s.replaced().iter().filter(|&&r| r).count()).sum();
        let replaced_fraction = replaced as f64 / total.max(1) as f64;
        let Some(clean) = &self.clean else {
            return Ok((replaced_fraction, None, None));
        };
        let mut hit = 0.0;
        for (i, state) in self.states.iter().enumerate() {
            let (frac, acc) = correction_stats(state.labels(), state.replaced(), &clean[i], &self.noisy_start[i])?;
            hit += acc.unwrap_or(0.0) * frac * state.len() as f64;
        }
        let tcf = (replaced > 0).then(|| hit / replaced as f64);
        Ok((replaced_fraction, tcf, Some(pooled_accuracy(&self.labels(), clean))))
    }

    /// Predict, record, clean, fit: one full epoch.
    pub fn run_epoch(&mut self, predictor: &mut dyn Predictor, phase: Phase, epoch: usize, config: &TrainConfig) -> Result<EpochRecord> {
        let predictions = self.predict(predictor);
        let train_oa = pooled_accuracy(&predictions, &self.labels());
        self.record(&predictions)?;
        self.clean(phase, epoch, config)?;
        let loss = self.fit(predictor, phase, epoch, config)?;
        let (replaced_fraction, true_correction_fraction, label_accuracy) = self.statistics()?;
        let band_fraction = (phase == Phase::PnalBoundary).then(|| {
            let total: usize = self.states.iter().map(|s| s.len()).sum();
            let inside: usize = self.bands.iter().flatten().map(|b| b.len()).sum();
            inside as f64 / total.max(1) as f64
        });
        Ok(EpochRecord {
            epoch,
            phase,
            loss,
            replaced_fraction,
            true_correction_fraction,
            train_oa,
            label_accuracy,
            band_fraction,
        })
    }
}

/// Called after every epoch with the record and the updated set.
pub type Observer<'a> = dyn FnMut(&EpochRecord, &TrainingSet) -> Result<()> + 'a;

/// Runs `epochs` epochs of `phase` starting at absolute epoch `first_epoch`.
pub fn run_phase(
    set: &mut TrainingSet,
    predictor: &mut dyn Predictor,
    phase: Phase,
    first_epoch: usize,
    epochs: usize,
    config: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    run_phase_observed(set, predictor, phase, first_epoch, epochs, config, &mut |_, _| Ok(()))
}

pub fn run_phase_observed(
    set: &mut TrainingSet,
    predictor: &mut dyn Predictor,
    phase: Phase,
    first_epoch: usize,
    epochs: usize,
    config: &TrainConfig,
    observer: &mut Observer<'_>,
) -> Result<Vec<EpochRecord>> {
    let mut records = Vec::with_capacity(epochs);
    for e in first_epoch..first_epoch + epochs {
        let r = set.run_epoch(predictor, phase, e, config)?;
        observer(&r, set)?;
        records.push(r);
    }
    Ok(records)
}

/// Unmasked warm-up epochs; every history holds the last `q` predictions
/// afterwards.
pub fn run_warmup(set: &mut TrainingSet, predictor: &mut dyn Predictor, e_warmup: usize, config: &TrainConfig) -> Result<Vec<EpochRecord>> {
    if e_warmup < config.q {
        return Err(Error::invalid("e_warmup", format!("{e_warmup} is shorter than the history length q = {}", config.q)));
    }
    run_phase(set, predictor, Phase::Warmup, 0, e_warmup, config)
}

/// PNAL cleaning epochs after warm-up.
pub fn run_pnal(
    set: &mut TrainingSet,
    predictor: &mut dyn Predictor,
    first_epoch: usize,
    epochs: usize,
    config: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    run_phase(set, predictor, Phase::Pnal, first_epoch, epochs, config)
}

/// Final summary of a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub records: Vec<EpochRecord>,
    /// Test metrics when a test set is given, otherwise training
    /// predictions against the clean reference (or the cleaned labels).
    /// Correction statistics are filled in when a clean reference exists.
    pub report: MetricReport,
    pub cleaned: Vec<Vec<Label>>,
    pub replaced: Vec<Vec<bool>>,
    pub predictor: LinearSoftmax,
}

/// Metrics of `predictor` on labelled scenes, with the edge band built
/// from the ground truth using `config.k_boundary` neighbours.
pub fn evaluate_scenes(predictor: &dyn Predictor, scenes: &[Scene], config: &TrainConfig) -> Result<MetricReport> {
    let parts: Vec<(Vec<Label>, Vec<Label>, Vec<bool>)> = scenes
        .par_iter()
        .map(|s| {
            let gt = s.require_labels()?.to_vec();
            let prepared = PreparedScene::new(s.clone(), config, false, false)?;
            let pred = prepared.predict(predictor);
            let k = config.k_boundary.min(s.len());
            let table = NeighborTable::build(&prepared.index, k)?;
            let band = BoundaryBand::from_neighbors(&gt, &table)?.mask().to_vec();
            Ok((pred, gt, band))
        })
        .collect::<Result<_>>()?;
    let class_count = scenes.first().ok_or(Error::EmptyScene)?.class_count();
    let (mut pred, mut gt, mut band) = (Vec::new(), Vec::new(), Vec::new());
    for (p, g, b) in parts {
        pred.extend(p);
        gt.extend(g);
        band.extend(b);
    }
    MetricReport::evaluate(&pred, &gt, class_count, Some(&band))
}

/// Runs the configured pipeline end to end.
pub fn run_pipeline(
    config: &TrainConfig,
    train: Vec<Scene>,
    clean: Option<Vec<Vec<Label>>>,
    test: Option<&[Scene]>,
    observer: &mut Observer<'_>,
) -> Result<PipelineOutcome> {
    let mut set = TrainingSet::prepare(train, clean, config)?;
    let mut predictor = default_predictor(FEATURE_DIM, set.class_count(), config.learning_rate, seed::derive(config.seed, "predictor"))?;
    let mut records = Vec::new();
    let mut epoch = 0;
    let mut previous = None;
    for (phase, epochs) in config.schedule() {
        if config.reset_history && previous == Some(Phase::Pnal) && phase == Phase::PnalBoundary {
            set.reset_histories()?;
        }
        records.extend(run_phase_observed(&mut set, &mut predictor, phase, epoch, epochs, config, observer)?);
        epoch += epochs;
        previous = Some(phase);
    }
    let mut report = match test {
        Some(test) => evaluate_scenes(&predictor, test, config)?,
        None => {
            let scenes: Vec<Scene> = (0..set.len())
                .map(|i| {
                    let gt = set.clean_reference(i).unwrap_or(set.state(i).labels()).to_vec();
                    set.scene(i).scene.with_labels(gt)
                })
                .collect::<Result<_>>()?;
            evaluate_scenes(&predictor, &scenes, config)?
        }
    };
    if set.clean.is_some() {
        let (replaced_fraction, tcf, _) = set.statistics()?;
        report.replaced_fraction = Some(replaced_fraction);
        report.true_correction_fraction = tcf;
    }
    Ok(PipelineOutcome {
        records,
        report,
        cleaned: set.labels(),
        replaced: set.replaced(),
        predictor,
    })
}
