//! Progressive boundary extraction and band-restricted label correction.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::cleaning::{eligible_clusters, vote_cluster, write_correction, CleaningState, Correction, PredictionHistory};
use crate::cluster::ClusterSet;
use crate::error::{check_len, Error, Result};
use crate::index::{NeighborTable, SpatialIndex};
use crate::scene::Label;
use crate::trainer::{run_phase, EpochRecord, Phase, TrainConfig, TrainingSet};
use crate::trainer::Predictor;

pub const DEFAULT_BOUNDARY_K: usize = 20;

/// Boundary points of the current labels together with their `k` nearest
/// neighbours, tagged with the correction epoch the labels belong to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryBand {
    members: Vec<bool>,
    k: usize,
    epoch: u64,
}

impl BoundaryBand {
    /// Band of `labels` from precomputed neighbour lists.
    pub fn from_neighbors(labels: &[Label], table: &NeighborTable) -> Result<Self> {
        check_len(table.len(), labels.len())?;
        let boundary: Vec<bool> = (0..labels.len())
            .into_par_iter()
            .map(|i| table.neighbors(i).iter().any(|&j| labels[j as usize] != labels[i]))
            .collect();
        let mut members = vec![false; labels.len()];
        for (i, _) in boundary.iter().enumerate().filter(|(_, &b)| b) {
            for &j in table.neighbors(i) {
                members[j as usize] = true;
            }
        }
        Ok(Self {
            members,
            k: table.k(),
            epoch: 0,
        })
    }

    /// Re-tags the band for the labels at correction epoch `epoch`.
    pub fn with_epoch(mut self, epoch: u64) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&m| m)
    }

    pub fn point_count(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, point: usize) -> bool {
        self.members[point]
    }

    pub fn mask(&self) -> &[bool] {
        &self.members
    }

    /// Ascending member ids.
    pub fn ids(&self) -> Vec<usize> {
        (0..self.members.len()).filter(|&i| self.members[i]).collect()
    }

    /// Dump lines `epoch point_id`, one per member.
    pub fn write_dump<W: Write>(&self, mut out: W, epoch: usize) -> Result<()> {
        for id in self.ids() {
            writeln!(out, "{epoch} {id}")?;
        }
        Ok(())
    }
}

/// Extracts the band of `labels` with `k` neighbours (self included).
pub fn extract_boundary(labels: &[Label], index: &SpatialIndex, k: usize) -> Result<BoundaryBand> {
    check_len(index.len(), labels.len())?;
    BoundaryBand::from_neighbors(labels, &NeighborTable::build(index, k)?)
}

/// One band-restricted cleaning pass. Reliability is computed for every
/// point, but only reliable points inside the band vote, and the winner is
/// written to the band members of each cluster only.
#[allow(clippy::too_many_arguments)]
pub fn boundary_cleaning_epoch<R: Rng + ?Sized>(
    state: &mut CleaningState,
    band: &BoundaryBand,
    clusters: &ClusterSet,
    history: &PredictionHistory,
    sigma: f64,
    gamma: f64,
    rng: &mut R,
    epoch: usize,
) -> Result<Vec<Correction>> {
    if band.epoch != state.epoch() {
        return Err(Error::StaleBand {
            band: band.epoch,
            labels: state.epoch(),
        });
    }
    check_len(state.len(), band.point_count())?;
    check_len(state.len(), clusters.point_count())?;
    let reliable = history.reliable_set(sigma)?.restricted(|p| band.contains(p));
    let mut log = Vec::new();
    for cluster in eligible_clusters(clusters, &reliable) {
        let members = clusters.members(cluster)?;
        let label = vote_cluster(members, &reliable, state.class_count(), gamma, rng)?;
        let inside: Vec<usize> = members.iter().copied().filter(|&p| band.contains(p)).collect();
        log.push(write_correction(state, &inside, label, &reliable, cluster, epoch));
    }
    state.advance();
    Ok(log)
}

/// Runs `epochs` progressive boundary-cleaning epochs over a prepared
/// training set, starting at absolute epoch `first_epoch`.
pub fn progressive_loop(
    set: &mut TrainingSet,
    predictor: &mut dyn Predictor,
    first_epoch: usize,
    epochs: usize,
    config: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    run_phase(set, predictor, Phase::PnalBoundary, first_epoch, epochs, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn line(n: usize, split: usize) -> (SpatialIndex, Vec<Label>) {
        let index = SpatialIndex::from_positions((0..n).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
        let labels = (0..n).map(|i| u32::from(i >= split)).collect();
        (index, labels)
    }

    // exhaustive definition: brute-force neighbours by distance, ties to lower id
    fn oracle_band(pos: &[f64], labels: &[Label], k: usize) -> Vec<bool> {
        let n = pos.len();
        let knn = |i: usize| {
            let mut ids: Vec<usize> = (0..n).collect();
            ids.sort_by(|&a, &b| (pos[a] - pos[i]).abs().total_cmp(&(pos[b] - pos[i]).abs()).then(a.cmp(&b)));
            ids.truncate(k);
            ids
        };
        let mut band = vec![false; n];
        for i in 0..n {
            let nn = knn(i);
            if nn.iter().any(|&j| labels[j] != labels[i]) {
                for j in nn {
                    band[j] = true;
                }
            }
        }
        band
    }

    #[test]
    fn single_class_has_empty_band() {
        let (index, _) = line(30, 30);
        let band = extract_boundary(&[0; 30], &index, 5).unwrap();
        assert!(band.is_empty());
        assert!(extract_boundary(&[0; 30], &index, 31).is_err());
    }

    #[test]
    fn line_matches_oracle() {
        let (index, labels) = line(100, 50);
        let band = extract_boundary(&labels, &index, 5).unwrap();
        let pos: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(band.mask(), oracle_band(&pos, &labels, 5).as_slice());
        // boundary points 48..=51, widened by the 5-NN radius of 2
        assert_eq!(band.ids(), (46..54).collect::<Vec<_>>());

        let mut rng = seed::rng(3);
        for _ in 0..20 {
            let labels: Vec<Label> = (0..100).map(|_| rng.gen_range(0..3)).collect();
            let k = rng.gen_range(1..12);
            let band = extract_boundary(&labels, &index, k).unwrap();
            assert_eq!(band.mask(), oracle_band(&pos, &labels, k).as_slice());
        }
    }

    #[test]
    fn half_spaces_band_is_a_slab() {
        let scene = crate::noise::tests::half_spaces();
        let labels = scene.labels().unwrap();
        let index = SpatialIndex::build(&scene).unwrap();
        let band = extract_boundary(labels, &index, 20).unwrap();
        assert!(!band.is_empty());
        let radius = (0..scene.len())
            .map(|i| index.knn_with_distances(i, 20).unwrap().last().unwrap().1)
            .fold(0.0, f64::max);
        for i in band.ids() {
            // every member is within two neighbourhood radii of the plane x = 0
            assert!(scene.positions()[i][0].abs() <= 2.0 * radius + 1e-12);
        }
        assert!(band.len() < scene.len());
    }

    fn reliable_history(labels: &[Label], m: usize) -> PredictionHistory {
        let mut h = PredictionHistory::new(labels.len(), 4, m).unwrap();
        for _ in 0..4 {
            h.record_epoch(labels).unwrap();
        }
        h
    }

    #[test]
    fn empty_band_changes_nothing() {
        let labels = vec![0, 0, 1, 1];
        let mut state = CleaningState::new(labels.clone(), 2).unwrap();
        let before = state.clone();
        let band = BoundaryBand {
            members: vec![false; 4],
            k: 2,
            epoch: 0,
        };
        let clusters = ClusterSet::from_assignment(&[0, 0, 0, 0]).unwrap();
        let history = reliable_history(&[1, 1, 1, 1], 2);
        let log = boundary_cleaning_epoch(&mut state, &band, &clusters, &history, 0.05, 4.0, &mut seed::rng(1), 0).unwrap();
        assert!(log.is_empty());
        assert_eq!(state.labels(), before.labels());
        assert_eq!(state.replaced(), before.replaced());
    }

    #[test]
    fn straddling_cluster_is_written_inside_band_only() {
        // cluster 0 = points 0..6, band = 3..9; everyone predicts 2
        let labels = vec![0, 0, 0, 1, 1, 1, 1, 1, 1, 1];
        let mut state = CleaningState::new(labels.clone(), 3).unwrap();
        let band = BoundaryBand {
            members: (0..10).map(|i| (3..9).contains(&i)).collect(),
            k: 3,
            epoch: 0,
        };
        let clusters = ClusterSet::from_assignment(&[0, 0, 0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        let history = reliable_history(&[2; 10], 3);
        boundary_cleaning_epoch(&mut state, &band, &clusters, &history, 0.05, 4.0, &mut seed::rng(1), 0).unwrap();
        let written: Vec<usize> = (0..10).filter(|&i| state.labels()[i] != labels[i]).collect();
        assert_eq!(written, (3..9).collect::<Vec<_>>());
        for i in 0..10 {
            assert_eq!(state.replaced()[i], band.contains(i));
        }
        assert_eq!(state.epoch(), 1);
    }

    #[test]
    fn unanimous_cluster_inside_band() {
        let mut state = CleaningState::new(vec![0, 1, 0, 1], 2).unwrap();
        let band = BoundaryBand {
            members: vec![true; 4],
            k: 2,
            epoch: 0,
        };
        let clusters = ClusterSet::from_assignment(&[0, 0, 0, 0]).unwrap();
        let history = reliable_history(&[1, 1, 1, 1], 2);
        boundary_cleaning_epoch(&mut state, &band, &clusters, &history, 0.05, 4.0, &mut seed::rng(1), 0).unwrap();
        assert_eq!(state.labels(), &[1, 1, 1, 1]);
    }

    #[test]
    fn stale_band_is_rejected() {
        let (index, labels) = line(20, 10);
        let mut state = CleaningState::new(labels.clone(), 2).unwrap();
        let band = extract_boundary(&labels, &index, 3).unwrap().with_epoch(state.epoch());
        let clusters = ClusterSet::from_assignment(&labels).unwrap();
        let history = reliable_history(&labels, 2);
        let mut rng = seed::rng(2);
        boundary_cleaning_epoch(&mut state, &band, &clusters, &history, 0.05, 4.0, &mut rng, 0).unwrap();
        let err = boundary_cleaning_epoch(&mut state, &band, &clusters, &history, 0.05, 4.0, &mut rng, 1);
        assert!(matches!(err, Err(Error::StaleBand { band: 0, labels: 1 })));
    }

    #[test]
    fn dump_lines() {
        let (index, labels) = line(10, 5);
        let band = extract_boundary(&labels, &index, 2).unwrap();
        let mut out = Vec::new();
        band.write_dump(&mut out, 7).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "7 4\n7 5\n");
    }
}
