use serde::{Deserialize, Serialize};

use crate::data::ClassCounts;
use crate::error::{Error, Result};

/// Instance and class weights of the classification loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    /// Weight of positive labels, `|N| / (|P| + |N|)`.
    pub beta_p: f64,
    /// Weight of negative labels, `|P| / (|P| + |N|)`.
    pub beta_n: f64,
    /// `lambda_m = (Q - Q_m) / Q`.
    pub lambda: Vec<f64>,
}

impl ClassWeights {
    /// Raw formula values; either beta is zero when the corpus lacks
    /// positive or negative records.
    pub fn formula(counts: &ClassCounts) -> Result<Self> {
        if counts.total == 0 {
            return Err(Error::invalid("class weights need at least one sample"));
        }
        let (p, n) = (counts.positive as f64, counts.negative as f64);
        let q = counts.total as f64;
        Ok(ClassWeights {
            beta_p: n / (p + n),
            beta_n: p / (p + n),
            lambda: counts.per_class.iter().map(|&qm| (q - qm as f64) / q).collect(),
        })
    }

    /// Equal betas and unit lambdas.
    pub fn uniform(classes: usize) -> Self {
        ClassWeights {
            beta_p: 0.5,
            beta_n: 0.5,
            lambda: vec![1.0; classes],
        }
    }
}

/// Corpus-level weights. When `|P|` or `|N|` is zero the formula would
/// silence one side of the loss, so both betas fall back to 0.5.
pub fn compute_class_weights(counts: &ClassCounts) -> Result<ClassWeights> {
    let mut w = ClassWeights::formula(counts)?;
    if counts.positive == 0 || counts.negative == 0 {
        log::warn!(
            "degenerate class balance (|P| = {}, |N| = {}); using beta_P = beta_N = 0.5",
            counts.positive,
            counts.negative
        );
        w.beta_p = 0.5;
        w.beta_n = 0.5;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(per_class: Vec<usize>, total: usize, positive: usize) -> ClassCounts {
        ClassCounts {
            per_class,
            total,
            positive,
            negative: total - positive,
        }
    }

    #[test]
    fn betas_and_lambdas() {
        let w = compute_class_weights(&counts(vec![1, 0], 4, 1)).unwrap();
        assert_eq!((w.beta_p, w.beta_n), (0.75, 0.25));
        assert_eq!(w.beta_p + w.beta_n, 1.0);
        let w = compute_class_weights(&counts(vec![2, 10], 10, 3)).unwrap();
        assert_eq!(w.lambda, vec![0.8, 0.0]);
    }

    #[test]
    fn degenerate_balance_falls_back() {
        let all = counts(vec![4], 4, 4);
        assert_eq!(ClassWeights::formula(&all).unwrap().beta_p, 0.0);
        let w = compute_class_weights(&all).unwrap();
        assert_eq!((w.beta_p, w.beta_n), (0.5, 0.5));
        assert!(compute_class_weights(&counts(vec![0], 0, 0)).is_err());
    }
}
