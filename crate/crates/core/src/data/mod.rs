//! Synthetic dataset generation, dataset files and corpus statistics.

mod file;
mod synthetic;

use std::path::Path;

use rayon::prelude::*;

pub use file::{DatasetFile, Record};
pub use synthetic::{generate, mix, Splits, SyntheticSpec, MOTIF};

use crate::error::{Error, Result};
use crate::metrics::roc_auc;

/// Record-level counts used by the class weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    /// `Q_m`: positives per class.
    pub per_class: Vec<usize>,
    /// `Q`: number of records.
    pub total: usize,
    /// `|P|`: records with at least one positive disease label.
    pub positive: usize,
    /// `|N|`: the remaining records.
    pub negative: usize,
}

/// Counts over label vectors. The class `no_finding`, if given, does not
/// make a record positive.
pub fn class_counts<'a>(labels: impl IntoIterator<Item = &'a [u8]>, no_finding: Option<usize>) -> ClassCounts {
    let mut per_class: Vec<usize> = Vec::new();
    let (mut total, mut positive) = (0, 0);
    for l in labels {
        if per_class.len() < l.len() {
            per_class.resize(l.len(), 0);
        }
        for (m, &y) in l.iter().enumerate() {
            per_class[m] += usize::from(y == 1);
        }
        total += 1;
        if l.iter().enumerate().any(|(m, &y)| y == 1 && Some(m) != no_finding) {
            positive += 1;
        }
    }
    ClassCounts {
        per_class,
        total,
        positive,
        negative: total - positive,
    }
}

impl DatasetFile {
    pub fn class_counts(&self, no_finding: Option<usize>) -> ClassCounts {
        class_counts(self.records.iter().map(|r| r.labels.as_slice()), no_finding)
    }
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

impl Splits {
    pub fn save(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (name, split) in SPLIT_NAMES.iter().zip([&self.train, &self.val, &self.test]) {
            let path = dir.join(format!("{name}.tsv"));
            split.save(&path)?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let load = |name: &str| DatasetFile::load(&dir.join(format!("{name}.tsv")));
        Ok(Splits {
            train: load("train")?,
            val: load("val")?,
            test: load("test")?,
        })
    }
}

/// Checks every record against the generator's construction rules: each
/// positive class has one of its phrases in the report, negations appear
/// only for negative classes, and record ids are unique across splits.
pub fn audit(spec: &SyntheticSpec, splits: &Splits) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for rec in splits.train.records.iter().chain(&splits.val.records).chain(&splits.test.records) {
        let fail = |msg: String| Err(Error::invalid(format!("record {}: {msg}", rec.id)));
        if !seen.insert(rec.id) {
            return fail("duplicate id".into());
        }
        if rec.labels.len() != spec.classes {
            return fail(format!("{} labels", rec.labels.len()));
        }
        let report = format!(" {} ", rec.report);
        for m in 0..spec.classes {
            let mentioned = spec.positive_phrases(m).iter().any(|p| report.contains(&format!(" {p} ")));
            let negated = spec
                .negation_phrase(m)
                .is_some_and(|p| report.contains(&format!(" {p} ")));
            match (rec.labels[m] == 1, mentioned, negated) {
                (true, true, false) | (false, false, _) => {}
                (true, false, _) => return fail(format!("positive class {m} not mentioned")),
                (true, true, true) => return fail(format!("positive class {m} also negated")),
                (false, true, _) => return fail(format!("negative class {m} mentioned as present")),
            }
        }
    }
    Ok(())
}

/// Per-class test AUC of independent logistic regressions on raw pixels,
/// fitted by full-batch gradient descent.
pub fn pixel_probe(train: &DatasetFile, test: &DatasetFile, iterations: usize, lr: f64) -> Result<Vec<Option<f64>>> {
    let first = train.records.first().ok_or_else(|| Error::invalid("probe needs training records"))?;
    let classes = first.labels.len();
    let dim = first.image.len();
    let n = train.len() as f64;
    (0..classes)
        .into_par_iter()
        .map(|m| {
            let mut w = vec![0.0; dim];
            let mut b = 0.0;
            let mut grad = vec![0.0; dim];
            for _ in 0..iterations {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut gb = 0.0;
                for r in &train.records {
                    let x = r.image.data();
                    let z = b + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                    let err = 1.0 / (1.0 + (-z).exp()) - f64::from(r.labels[m]);
                    for (g, xi) in grad.iter_mut().zip(x) {
                        *g += err * xi;
                    }
                    gb += err;
                }
                for (wi, g) in w.iter_mut().zip(&grad) {
                    *wi -= lr * g / n;
                }
                b -= lr * gb / n;
            }
            let scores: Vec<f64> = test
                .records
                .iter()
                .map(|r| b + r.image.data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let labels: Vec<bool> = test.records.iter().map(|r| r.labels[m] == 1).collect();
            Ok(roc_auc(&scores, &labels))
        })
        .collect()
}
