//! Point-level confidence selection and cluster-level label correction.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;

use crate::cluster::ClusterSet;
use crate::error::{check_len, Error, Result};
use crate::scene::Label;

pub const DEFAULT_HISTORY: usize = 4;
pub const DEFAULT_SIGMA: f64 = 0.05;
pub const DEFAULT_GAMMA: f64 = 4.0;

/// Ring buffer of each point's last `capacity` predicted labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionHistory {
    capacity: usize,
    class_count: usize,
    slots: Vec<Label>,
    fill: Vec<u8>,
    // index of the next slot to write, shared by all points
    head: usize,
}

impl PredictionHistory {
    pub fn new(points: usize, capacity: usize, class_count: usize) -> Result<Self> {
        if capacity == 0 || capacity > u8::MAX as usize {
            return Err(Error::invalid("q", "history length must be in 1..=255"));
        }
        if class_count < 2 {
            return Err(Error::invalid("class_count", "at least 2 classes are required"));
        }
        Ok(Self {
            capacity,
            class_count,
            slots: vec![0; points * capacity],
            fill: vec![0; points],
            head: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.fill.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fill.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn fill(&self, point: usize) -> usize {
        self.fill[point] as usize
    }

    /// Enqueues one prediction per point, evicting the oldest when full.
    pub fn record_epoch(&mut self, predictions: &[Label]) -> Result<()> {
        check_len(self.len(), predictions.len())?;
        crate::scene::check_labels(predictions, self.class_count)?;
        let q = self.capacity;
        for (p, &label) in predictions.iter().enumerate() {
            self.slots[p * q + self.head] = label;
            if (self.fill[p] as usize) < q {
                self.fill[p] += 1;
            }
        }
        self.head = (self.head + 1) % q;
        Ok(())
    }

    /// Buffered predictions of `point`, oldest first.
    pub fn entries(&self, point: usize) -> Vec<Label> {
        let q = self.capacity;
        let fill = self.fill[point] as usize;
        let start = (self.head + q - fill) % q;
        (0..fill).map(|i| self.slots[point * q + (start + i) % q]).collect()
    }

    fn counts(&self, point: usize) -> Result<(Vec<u32>, usize)> {
        let fill = self.fill[point] as usize;
        if fill == 0 {
            return Err(Error::EmptyHistory(point));
        }
        let q = self.capacity;
        let mut counts = vec![0u32; self.class_count];
        for slot in 0..q {
            if self.slot_filled(point, slot) {
                counts[self.slots[point * q + slot] as usize] += 1;
            }
        }
        Ok((counts, fill))
    }

    fn slot_filled(&self, point: usize, slot: usize) -> bool {
        let q = self.capacity;
        let fill = self.fill[point] as usize;
        // the `fill` most recent slots end just before head
        (self.head + q - 1 - slot) % q < fill
    }

    /// Empirical distribution of the buffered predictions of `point`.
    pub fn label_distribution(&self, point: usize) -> Result<Vec<f64>> {
        let (counts, fill) = self.counts(point)?;
        Ok(counts.iter().map(|&c| f64::from(c) / fill as f64).collect())
    }

    /// Normalized entropy of the label distribution, in `[0, 1]`.
    pub fn confidence(&self, point: usize) -> Result<f64> {
        let (counts, fill) = self.counts(point)?;
        Ok(normalized_entropy(&counts, fill, self.class_count))
    }

    /// Most frequent buffered label (lowest id on ties).
    pub fn reliable_label(&self, point: usize) -> Result<Label> {
        let (counts, _) = self.counts(point)?;
        Ok(argmax_lowest(&counts))
    }

    /// Marks points whose confidence is at most `sigma`.
    pub fn reliable_set(&self, sigma: f64) -> Result<ReliableSet> {
        if !(0.0..=1.0).contains(&sigma) {
            return Err(Error::invalid("sigma", format!("{sigma} is outside [0, 1]")));
        }
        let mut labels = vec![None; self.len()];
        for (p, slot) in labels.iter_mut().enumerate() {
            let (counts, fill) = self.counts(p)?;
            if normalized_entropy(&counts, fill, self.class_count) <= sigma {
                *slot = Some(argmax_lowest(&counts));
            }
        }
        Ok(ReliableSet { labels })
    }
}

fn normalized_entropy(counts: &[u32], total: usize, class_count: usize) -> f64 {
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = f64::from(c) / total;
            -p * p.ln()
        })
        .sum();
    (h / (class_count as f64).ln()).clamp(0.0, 1.0)
}

fn argmax_lowest(counts: &[u32]) -> Label {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best as Label
}

/// Records one epoch of predictions.
pub fn record_epoch(history: &mut PredictionHistory, predictions: &[Label]) -> Result<()> {
    history.record_epoch(predictions)
}

pub fn label_distribution(history: &PredictionHistory, point: usize) -> Result<Vec<f64>> {
    history.label_distribution(point)
}

/// Normalized prediction entropy; `class_count` must match the history.
pub fn confidence(history: &PredictionHistory, point: usize, class_count: usize) -> Result<f64> {
    if class_count < 2 {
        return Err(Error::invalid("class_count", "at least 2 classes are required"));
    }
    if class_count != history.class_count() {
        return Err(Error::invalid("class_count", "does not match the history"));
    }
    history.confidence(point)
}

pub fn reliable_set(history: &PredictionHistory, sigma: f64) -> Result<ReliableSet> {
    history.reliable_set(sigma)
}

/// Points with consistent prediction histories and their reliable labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReliableSet {
    labels: Vec<Option<Label>>,
}

impl ReliableSet {
    pub fn from_labels(labels: Vec<Option<Label>>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Reliable label of `point`, if it is reliable.
    pub fn label(&self, point: usize) -> Option<Label> {
        self.labels[point]
    }

    pub fn is_reliable(&self, point: usize) -> bool {
        self.labels[point].is_some()
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Keeps only points for which `keep` holds.
    pub fn restricted(&self, keep: impl Fn(usize) -> bool) -> Self {
        Self {
            labels: self
                .labels
                .iter()
                .enumerate()
                .map(|(p, l)| if keep(p) { *l } else { None })
                .collect(),
        }
    }
}

/// Clusters holding at least one reliable point, ascending.
pub fn eligible_clusters(clusters: &ClusterSet, reliable: &ReliableSet) -> Vec<usize> {
    clusters
        .iter()
        .filter(|(_, members)| members.iter().any(|&p| reliable.is_reliable(p)))
        .map(|(c, _)| c)
        .collect()
}

/// Occurrences of each reliable label among `members`.
pub fn occurrences(members: &[usize], reliable: &ReliableSet, class_count: usize) -> Vec<u32> {
    let mut occ = vec![0u32; class_count];
    for &p in members {
        if let Some(l) = reliable.label(p) {
            occ[l as usize] += 1;
        }
    }
    occ
}

/// Labels whose occurrence reaches `occ_top / gamma`, ascending.
pub fn winner_candidates(occ: &[u32], gamma: f64) -> Vec<Label> {
    let top = occ.iter().copied().max().unwrap_or(0);
    if top == 0 {
        return Vec::new();
    }
    // occ * gamma >= top avoids dividing; exact for integral gamma
    occ.iter()
        .enumerate()
        .filter(|&(_, &c)| c > 0 && f64::from(c) * gamma >= f64::from(top))
        .map(|(m, _)| m as Label)
        .collect()
}

/// Draws the cluster's winner label uniformly from the γ-relaxed top set.
pub fn vote_cluster<R: Rng + ?Sized>(
    members: &[usize],
    reliable: &ReliableSet,
    class_count: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<Label> {
    if !(gamma >= 1.0) {
        return Err(Error::invalid("gamma", "must be at least 1"));
    }
    let occ = occurrences(members, reliable, class_count);
    let candidates = winner_candidates(&occ, gamma);
    if candidates.is_empty() {
        return Err(Error::NoReliableMember(members.first().copied().unwrap_or(0)));
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

/// One line of the correction log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Correction {
    pub epoch: usize,
    pub cluster: usize,
    /// Most common current label of the written points before correction.
    pub old_label: Label,
    pub new_label: Label,
    pub reliable_count: usize,
}

impl Correction {
    pub fn write_line<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{} {} {} {} {}",
            self.epoch, self.cluster, self.old_label, self.new_label, self.reliable_count
        )
    }
}

/// Training labels under correction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleaningState {
    labels: Vec<Label>,
    replaced: Vec<bool>,
    class_count: usize,
    epoch: u64,
    mask_on_confirm: bool,
}

impl CleaningState {
    pub fn new(labels: Vec<Label>, class_count: usize) -> Result<Self> {
        crate::scene::check_labels(&labels, class_count)?;
        Ok(Self {
            replaced: vec![false; labels.len()],
            labels,
            class_count,
            epoch: 0,
            mask_on_confirm: true,
        })
    }

    /// Whether a correction that keeps a point's label still marks it as
    /// replaced (default `true`).
    pub fn with_mask_on_confirm(mut self, on: bool) -> Self {
        self.mask_on_confirm = on;
        self
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn replaced(&self) -> &[bool] {
        &self.replaced
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of correction passes applied so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn replaced_fraction(&self) -> f64 {
        self.replaced.iter().filter(|&&r| r).count() as f64 / self.len().max(1) as f64
    }

    /// Writes `label` to `points` and updates the replaced mask.
    fn write(&mut self, points: &[usize], label: Label) {
        for &p in points {
            if self.labels[p] != label || self.mask_on_confirm {
                self.replaced[p] = true;
            }
            self.labels[p] = label;
        }
    }

    pub(crate) fn advance(&mut self) {
        self.epoch += 1;
    }
}

fn majority(labels: &[Label], points: &[usize], class_count: usize) -> Label {
    let mut counts = vec![0u32; class_count];
    for &p in points {
        counts[labels[p] as usize] += 1;
    }
    argmax_lowest(&counts)
}

/// Overwrites every point of each winning cluster with its winner label.
/// Returns one log entry per corrected cluster, in cluster order.
pub fn correct_labels(
    state: &mut CleaningState,
    clusters: &ClusterSet,
    winners: &BTreeMap<usize, Label>,
    reliable: &ReliableSet,
    epoch: usize,
) -> Result<Vec<Correction>> {
    check_len(state.len(), clusters.point_count())?;
    let mut log = Vec::with_capacity(winners.len());
    for (&cluster, &label) in winners {
        let members = clusters.members(cluster)?;
        if label as usize >= state.class_count {
            return Err(Error::LabelOutOfRange {
                label,
                class_count: state.class_count,
            });
        }
        log.push(write_correction(state, members, label, reliable, cluster, epoch));
    }
    state.advance();
    Ok(log)
}

pub(crate) fn write_correction(
    state: &mut CleaningState,
    points: &[usize],
    label: Label,
    reliable: &ReliableSet,
    cluster: usize,
    epoch: usize,
) -> Correction {
    let entry = Correction {
        epoch,
        cluster,
        old_label: majority(&state.labels, points, state.class_count),
        new_label: label,
        reliable_count: points.iter().filter(|&&p| reliable.is_reliable(p)).count(),
    };
    state.write(points, label);
    entry
}

/// One full PNAL cleaning pass: select reliable points, vote in every
/// eligible cluster, and overwrite the winners.
pub fn clean_epoch<R: Rng + ?Sized>(
    state: &mut CleaningState,
    clusters: &ClusterSet,
    history: &PredictionHistory,
    sigma: f64,
    gamma: f64,
    rng: &mut R,
    epoch: usize,
) -> Result<Vec<Correction>> {
    let reliable = history.reliable_set(sigma)?;
    let mut winners = BTreeMap::new();
    for cluster in eligible_clusters(clusters, &reliable) {
        let members = clusters.members(cluster)?;
        winners.insert(cluster, vote_cluster(members, &reliable, state.class_count, gamma, rng)?);
    }
    correct_labels(state, clusters, &winners, &reliable, epoch)
}
