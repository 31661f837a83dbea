//! Segmentation metrics and correction statistics.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::scene::Label;

/// Fraction of points whose prediction matches the ground truth.
pub fn overall_accuracy(pred: &[Label], gt: &[Label]) -> Result<f64> {
    check_len(gt.len(), pred.len())?;
    Ok(accuracy_where(pred, gt, |_| true).unwrap_or(0.0))
}

fn accuracy_where(pred: &[Label], gt: &[Label], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let mut total = 0usize;
    let mut hit = 0usize;
    for i in 0..gt.len() {
        if keep(i) {
            total += 1;
            hit += usize::from(pred[i] == gt[i]);
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Row-major `class_count × class_count` confusion counts, `[gt][pred]`.
pub fn confusion_matrix(pred: &[Label], gt: &[Label], class_count: usize) -> Result<Vec<u64>> {
    check_len(gt.len(), pred.len())?;
    crate::scene::check_labels(pred, class_count)?;
    crate::scene::check_labels(gt, class_count)?;
    let mut cm = vec![0u64; class_count * class_count];
    for (&p, &g) in pred.iter().zip(gt) {
        cm[g as usize * class_count + p as usize] += 1;
    }
    Ok(cm)
}

/// Mean IoU and per-class IoU. Classes absent from both prediction and
/// ground truth have no IoU and are left out of the mean.
pub fn mean_iou(pred: &[Label], gt: &[Label], class_count: usize) -> Result<(f64, Vec<Option<f64>>)> {
    let cm = confusion_matrix(pred, gt, class_count)?;
    let m = class_count;
    let per_class: Vec<Option<f64>> = (0..m)
        .map(|c| {
            let tp = cm[c * m + c];
            let fn_: u64 = (0..m).filter(|&p| p != c).map(|p| cm[c * m + p]).sum();
            let fp: u64 = (0..m).filter(|&g| g != c).map(|g| cm[g * m + c]).sum();
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok((miou, per_class))
}

/// Accuracy inside the boundary band and on its complement. Either is
/// `None` when its point set is empty.
pub fn edge_inner_accuracy(pred: &[Label], gt: &[Label], band: &[bool]) -> Result<(Option<f64>, Option<f64>)> {
    check_len(gt.len(), pred.len())?;
    check_len(gt.len(), band.len())?;
    Ok((
        accuracy_where(pred, gt, |i| band[i]),
        accuracy_where(pred, gt, |i| !band[i]),
    ))
}

/// `(replaced_fraction, true_correction_fraction)`. The second value is the
/// accuracy of cleaned labels among replaced points (confirmations count)
/// and is `None` when nothing was replaced.
pub fn correction_stats(cleaned: &[Label], replaced: &[bool], clean_gt: &[Label], noisy_start: &[Label]) -> Result<(f64, Option<f64>)> {
    let n = clean_gt.len();
    check_len(n, cleaned.len())?;
    check_len(n, replaced.len())?;
    check_len(n, noisy_start.len())?;
    let replaced_fraction = replaced.iter().filter(|&&r| r).count() as f64 / n.max(1) as f64;
    Ok((replaced_fraction, accuracy_where(cleaned, clean_gt, |i| replaced[i])))
}

/// Evaluation summary with fixed key names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub oa: f64,
    pub miou: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oa_edge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oa_in: Option<f64>,
    /// Per-class IoU; `null` for classes absent from prediction and truth.
    pub iou: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub replaced_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub true_correction_fraction: Option<f64>,
}

impl MetricReport {
    /// OA, mIoU and, when `band` is given, edge and inner accuracy.
    pub fn evaluate(pred: &[Label], gt: &[Label], class_count: usize, band: Option<&[bool]>) -> Result<Self> {
        let oa = overall_accuracy(pred, gt)?;
        let (miou, iou) = mean_iou(pred, gt, class_count)?;
        let (oa_edge, oa_in) = match band {
            Some(band) => edge_inner_accuracy(pred, gt, band)?,
            None => (None, None),
        };
        Ok(Self {
            oa,
            miou,
            oa_edge,
            oa_in,
            iou,
            replaced_fraction: None,
            true_correction_fraction: None,
        })
    }

    /// Prints an aligned two-column table.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut rows = vec![
            ("oa".to_string(), fmt(Some(self.oa))),
            ("miou".to_string(), fmt(Some(self.miou))),
            ("oa_edge".to_string(), fmt(self.oa_edge)),
            ("oa_in".to_string(), fmt(self.oa_in)),
        ];
        if self.replaced_fraction.is_some() {
            rows.push(("replaced_fraction".into(), fmt(self.replaced_fraction)));
            rows.push(("true_correction_fraction".into(), fmt(self.true_correction_fraction)));
        }
        for (c, v) in self.iou.iter().enumerate() {
            rows.push((format!("iou[{c}]"), fmt(*v)));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v:>8}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn accuracy_examples() {
        assert_eq!(overall_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(overall_accuracy(&[0, 1, 2, 2], &[0, 1, 2, 3]).unwrap(), 0.75);
        assert!(overall_accuracy(&[0], &[0, 1]).is_err());

        let mut rng = crate::seed::rng(5);
        let gt: Vec<Label> = (0..1000).map(|_| rng.gen_range(0..5)).collect();
        let pred: Vec<Label> = gt.iter().map(|&g| if rng.gen_bool(0.3) { (g + 1) % 5 } else { g }).collect();
        let hits = pred.iter().zip(&gt).filter(|(a, b)| a == b).count();
        assert_eq!(overall_accuracy(&pred, &gt).unwrap(), hits as f64 / 1000.0);
    }

    #[test]
    fn iou_examples() {
        let gt = [0, 0, 1, 1, 2];
        assert_eq!(mean_iou(&gt, &gt, 4).unwrap().0, 1.0);
        // class 3 absent from both sides
        assert_eq!(mean_iou(&gt, &gt, 4).unwrap().1[3], None);
        let swapped = [1, 1, 0, 0];
        assert_eq!(mean_iou(&swapped, &[0, 0, 1, 1], 2).unwrap().0, 0.0);

        // pred/gt: class0 tp=1 fp=1 fn=1 -> 1/3; class1 tp=1 fp=1 fn=0 -> 1/2;
        // class2 tp=1 fp=0 fn=1 -> 1/2
        let gt = [0, 0, 1, 2, 2];
        let pred = [0, 1, 1, 2, 0];
        let (miou, per) = mean_iou(&pred, &gt, 3).unwrap();
        assert!((per[0].unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(per[1], Some(0.5));
        assert_eq!(per[2], Some(0.5));
        assert!((miou - (1.0 / 3.0 + 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn edge_inner_examples() {
        let gt = [0, 0, 1, 1];
        let band = [false, true, true, false];
        assert_eq!(edge_inner_accuracy(&gt, &gt, &band).unwrap(), (Some(1.0), Some(1.0)));
        let pred = [0, 1, 1, 1];
        assert_eq!(edge_inner_accuracy(&pred, &gt, &band).unwrap(), (Some(0.5), Some(1.0)));
        assert_eq!(edge_inner_accuracy(&gt, &gt, &[false; 4]).unwrap(), (None, Some(1.0)));
    }

    #[test]
    fn correction_examples() {
        let gt = [0u32; 10];
        let none = correction_stats(&gt, &[false; 10], &gt, &gt).unwrap();
        assert_eq!(none, (0.0, None));
        assert_eq!(correction_stats(&gt, &[true; 10], &gt, &gt).unwrap(), (1.0, Some(1.0)));
        let mut mask = [false; 10];
        mask[..3].copy_from_slice(&[true; 3]);
        let cleaned = [0, 0, 1, 0, 0, 0, 0, 0, 0, 0];
        let (r, t) = correction_stats(&cleaned, &mask, &gt, &gt).unwrap();
        assert!((r - 0.3).abs() < 1e-15);
        assert!((t.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn report_json_keys() {
        let r = MetricReport::evaluate(&[0, 1], &[0, 1], 2, None).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("oa").is_some() && json.get("miou").is_some());
        assert!(json.get("oa_edge").is_none());
        assert!(json.get("replaced_fraction").is_none());
        assert!(r.to_table().contains("oa_edge"));
    }
}
