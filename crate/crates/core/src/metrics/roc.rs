use std::cmp::Ordering;

use crate::error::{Error, Result};

/// ROC curve of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweeps every distinct score as a threshold, highest first. Tied scores
/// are crossed in one step, so the trapezoid over a tie contributes half
/// credit for the tied positive/negative pairs.
///
/// Returns `None` unless both labels are present.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Option<RocCurve> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area, in units of one (positive, negative) pair
    let mut area2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) * (tp + tp0);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Some(RocCurve {
        points,
        auc: area2 as f64 / (2 * pos * neg) as f64,
    })
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    roc_curve(scores, labels).map(|c| c.auc)
}

/// Per-class ROC results with macro and count-weighted summaries.
#[derive(Debug, Clone)]
pub struct RocResult {
    pub curves: Vec<Option<RocCurve>>,
    /// Positive count `n_m` per class.
    pub counts: Vec<usize>,
    pub avg: f64,
    pub weighted_avg: f64,
}

impl RocResult {
    pub fn aucs(&self) -> Vec<Option<f64>> {
        self.curves.iter().map(|c| c.as_ref().map(|c| c.auc)).collect()
    }
}

/// `probs[i][m]` scores sample `i` for class `m`.
pub fn evaluate_classes(probs: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<RocResult> {
    let classes = labels.first().map_or(0, |l| l.len());
    if classes == 0 || probs.len() != labels.len() {
        return Err(Error::invalid("need one score row per labeled sample"));
    }
    let mut curves = Vec::with_capacity(classes);
    let mut counts = Vec::with_capacity(classes);
    for m in 0..classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[m]).collect();
        let y: Vec<bool> = labels.iter().map(|l| l[m] == 1).collect();
        counts.push(y.iter().filter(|&&b| b).count());
        curves.push(roc_curve(&scores, &y));
    }
    let aucs: Vec<Option<f64>> = curves.iter().map(|c| c.as_ref().map(|c| c.auc)).collect();
    let (avg, weighted_avg) = aggregate(&aucs, &counts)?;
    Ok(RocResult {
        curves,
        counts,
        avg,
        weighted_avg,
    })
}

/// Macro mean over defined AUCs and the count-weighted mean over classes
/// with a positive count.
pub fn aggregate(aucs: &[Option<f64>], counts: &[usize]) -> Result<(f64, f64)> {
    if aucs.len() != counts.len() {
        return Err(Error::invalid("one count per class required"));
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::invalid("all class counts are zero"));
    }
    let defined: Vec<f64> = aucs.iter().flatten().copied().collect();
    let avg = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let (mut num, mut den) = (0.0, 0.0);
    for (a, &n) in aucs.iter().zip(counts) {
        if let (Some(a), true) = (a, n > 0) {
            num += n as f64 * a;
            den += n as f64;
        }
    }
    let wavg = if den > 0.0 { num / den } else { f64::NAN };
    Ok((avg, wavg))
}
