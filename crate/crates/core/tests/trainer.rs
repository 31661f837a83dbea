use pnal::boundary::{extract_boundary, progressive_loop};
use pnal::synth::{generate_dataset, SynthSpec};
use pnal::trainer::{run_pipeline, run_pnal, run_warmup, ClusterSource, Features, Phase, Pipeline, Predictor, TrainConfig, TrainingSet, FEATURE_DIM};
use pnal::{Label, Result, Scene};

/// Predicts one fixed class everywhere and never learns.
struct Fixed {
    class: Label,
    classes: usize,
    fitted_rows: usize,
}

impl Fixed {
    fn new(class: Label, classes: usize) -> Self {
        Self {
            class,
            classes,
            fitted_rows: 0,
        }
    }
}

impl Predictor for Fixed {
    fn class_count(&self) -> usize {
        self.classes
    }

    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn predict(&self, features: &Features) -> Vec<f64> {
        let mut out = vec![0.0; features.rows() * self.classes];
        for r in 0..features.rows() {
            out[r * self.classes + self.class as usize] = 1.0;
        }
        out
    }

    fn fit_step(&mut self, _: &Features, _: &[Label], mask: &[bool]) -> Result<f64> {
        self.fitted_rows += mask.iter().filter(|&&m| m).count();
        Ok(0.0)
    }
}

fn scenes(count: usize) -> Vec<Scene> {
    let spec = SynthSpec {
        class_count: 3,
        instances_per_class: 2,
        points_per_instance: 100,
        ..Default::default()
    };
    generate_dataset(&spec, count, 5).unwrap()
}

fn config(pipeline: Pipeline) -> TrainConfig {
    TrainConfig {
        pipeline,
        clusters: ClusterSource::Instances,
        k_boundary: 10,
        points_per_block: 128,
        ..Default::default()
    }
}

#[test]
fn warmup_fills_every_history() {
    let cfg = config(Pipeline::Pnal);
    let data = scenes(2);
    let mut set = TrainingSet::prepare(data.clone(), None, &cfg).unwrap();
    let mut p = Fixed::new(1, 3);
    assert!(run_warmup(&mut set, &mut p, cfg.q - 1, &cfg).is_err());
    let records = run_warmup(&mut set, &mut p, cfg.q, &cfg).unwrap();
    assert_eq!(records.len(), cfg.q);
    assert!(records.iter().all(|r| r.phase == Phase::Warmup));
    for (i, scene) in data.iter().enumerate() {
        let h = set.history(i);
        for point in 0..h.len() {
            assert_eq!(h.fill(point), cfg.q);
            assert_eq!(h.entries(point), vec![1; cfg.q]);
        }
        assert_eq!(set.state(i).labels(), scene.labels().unwrap());
        assert!(set.state(i).replaced().iter().all(|&r| !r));
    }
    // unmasked warm-up fits every sampled row
    assert!(p.fitted_rows > 0);
}

#[test]
fn pnal_epoch_relabels_every_cluster() {
    let cfg = config(Pipeline::Pnal);
    let mut set = TrainingSet::prepare(scenes(2), None, &cfg).unwrap();
    let mut p = Fixed::new(2, 3);
    run_warmup(&mut set, &mut p, cfg.q, &cfg).unwrap();
    let records = run_pnal(&mut set, &mut p, cfg.q, 1, &cfg).unwrap();
    assert_eq!(records[0].epoch, cfg.q);
    assert_eq!(records[0].replaced_fraction, 1.0);
    for i in 0..set.len() {
        assert!(set.state(i).labels().iter().all(|&l| l == 2));
        let clusters = set.scene(i).clusters.as_ref().unwrap();
        assert_eq!(set.corrections(i).len(), clusters.len());
    }
}

#[test]
fn inconsistent_history_changes_nothing_and_masks_everything_out() {
    let cfg = config(Pipeline::Pnal);
    let data = scenes(1);
    let mut set = TrainingSet::prepare(data.clone(), None, &cfg).unwrap();
    let mut p = Fixed::new(0, 3);
    for e in 0..cfg.q {
        p.class = (e % 2) as Label;
        set.run_epoch(&mut p, Phase::Warmup, e, &cfg).unwrap();
    }
    p.fitted_rows = 0;
    let r = set.run_epoch(&mut p, Phase::Pnal, cfg.q, &cfg).unwrap();
    // two alternating classes out of three: normalized entropy ln2/ln3 > sigma
    assert_eq!(r.replaced_fraction, 0.0);
    assert_eq!(r.loss, 0.0);
    assert_eq!(p.fitted_rows, 0);
    assert!(set.corrections(0).is_empty());
    assert_eq!(set.state(0).labels(), data[0].labels().unwrap());
}

// Every point predicts `class` and is reliable, so each boundary epoch
// writes `class` onto exactly the band of the current labels.
fn oracle_boundary_epoch(labels: &mut [Label], scene: &Scene, k: usize, class: Label) -> Vec<usize> {
    let index = pnal::SpatialIndex::build(scene).unwrap();
    let band = extract_boundary(labels, &index, k).unwrap();
    for p in band.ids() {
        labels[p] = class;
    }
    band.ids()
}

#[test]
fn progressive_loop_matches_oracle_and_band_drifts() {
    let cfg = config(Pipeline::PnalBoundary);
    let data = scenes(2);
    let mut set = TrainingSet::prepare(data.clone(), None, &cfg).unwrap();
    let mut p = Fixed::new(0, 3);
    run_warmup(&mut set, &mut p, cfg.q, &cfg).unwrap();
    let mut expected: Vec<Vec<Label>> = data.iter().map(|s| s.labels().unwrap().to_vec()).collect();
    let mut previous_bands: Vec<Vec<usize>> = vec![Vec::new(); data.len()];
    let mut drifted = false;
    for e in 0..3 {
        let records = progressive_loop(&mut set, &mut p, cfg.q + e, 1, &cfg).unwrap();
        assert_eq!(records[0].phase, Phase::PnalBoundary);
        for i in 0..data.len() {
            let band = oracle_boundary_epoch(&mut expected[i], &data[i], cfg.k_boundary, 0);
            assert_eq!(set.band(i).unwrap().ids(), band, "scene {i} epoch {e}");
            assert_eq!(set.state(i).labels(), expected[i].as_slice(), "scene {i} epoch {e}");
            if e > 0 && band != previous_bands[i] {
                drifted = true;
            }
            previous_bands[i] = band;
        }
    }
    assert!(drifted, "the band should follow the rewritten labels");
}

#[test]
fn frozen_band_stops_moving() {
    let cfg = TrainConfig {
        progressive: false,
        ..config(Pipeline::PnalBoundary)
    };
    let data = scenes(1);
    let mut set = TrainingSet::prepare(data.clone(), None, &cfg).unwrap();
    let mut p = Fixed::new(0, 3);
    run_warmup(&mut set, &mut p, cfg.q, &cfg).unwrap();
    progressive_loop(&mut set, &mut p, cfg.q, 1, &cfg).unwrap();
    let first_band = set.band(0).unwrap().ids();
    let after_first = set.state(0).labels().to_vec();
    progressive_loop(&mut set, &mut p, cfg.q + 1, 2, &cfg).unwrap();
    assert_eq!(set.band(0).unwrap().ids(), first_band);
    assert_eq!(set.state(0).labels(), after_first.as_slice());
    // inner points never change
    let original = data[0].labels().unwrap();
    for (pt, (&a, &b)) in original.iter().zip(set.state(0).labels()).enumerate() {
        if a != b {
            assert!(first_band.binary_search(&pt).is_ok());
        }
    }
}

#[test]
fn boundary_pipeline_needs_a_boundary() {
    let cfg = config(Pipeline::PnalBoundary);
    let flat: Vec<Scene> = scenes(1).into_iter().map(|s| s.with_labels(vec![1; s.len()]).unwrap()).collect();
    assert!(matches!(TrainingSet::prepare(flat, None, &cfg), Err(pnal::Error::NoBoundary(_))));
}

#[test]
fn pipeline_is_independent_of_thread_count() {
    let cfg = TrainConfig {
        total_epochs: 8,
        boundary_epochs: 2,
        ..config(Pipeline::Mixed)
    };
    let data = scenes(3);
    let clean: Vec<Vec<Label>> = data.iter().map(|s| s.labels().unwrap().to_vec()).collect();
    let noisy: Vec<Scene> = data
        .iter()
        .map(|s| s.with_labels(s.labels().unwrap().iter().map(|&l| (l + 1) % 3).collect()).unwrap())
        .collect();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let out = run_pipeline(&cfg, noisy.clone(), Some(clean.clone()), None, &mut |_, _| Ok(())).unwrap();
            (serde_json::to_string(&out.records).unwrap(), serde_json::to_string(&out.report).unwrap(), out.cleaned, out.replaced)
        })
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(1));
}
