use crate::error::{check_len, Error, Result};
use crate::scene::Label;

/// Lower bound applied to probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Masked cross-entropy between row-major `B × M` class distributions and
/// one-hot targets given by class id: the mean of `-ln p[target]` over the
/// rows where `mask` is true, or 0 when no row is selected.
pub fn cross_entropy(probs: &[f64], class_count: usize, targets: &[Label], mask: &[bool]) -> Result<f64> {
    let rows = targets.len();
    check_len(rows * class_count, probs.len())?;
    check_len(rows, mask.len())?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (i, (&t, &keep)) in targets.iter().zip(mask).enumerate() {
        if !keep {
            continue;
        }
        if t as usize >= class_count {
            return Err(Error::LabelOutOfRange { label: t, class_count });
        }
        sum -= probs[i * class_count + t as usize].max(PROB_FLOOR).ln();
        used += 1;
    }
    Ok(if used == 0 { 0.0 } else { sum / used as f64 })
}

/// Cross-entropy against explicit one-hot (or soft) target rows.
pub fn cross_entropy_dense(probs: &[f64], targets: &[f64], class_count: usize, mask: &[bool]) -> Result<f64> {
    check_len(probs.len(), targets.len())?;
    check_len(mask.len() * class_count, probs.len())?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (i, &keep) in mask.iter().enumerate() {
        if !keep {
            continue;
        }
        let row = i * class_count..(i + 1) * class_count;
        sum -= probs[row.clone()]
            .iter()
            .zip(&targets[row])
            .map(|(&p, &q)| if q == 0.0 { 0.0 } else { q * p.max(PROB_FLOOR).ln() })
            .sum::<f64>();
        used += 1;
    }
    Ok(if used == 0 { 0.0 } else { sum / used as f64 })
}
