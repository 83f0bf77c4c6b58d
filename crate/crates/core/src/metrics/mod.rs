//! Classification (ROC/AUC) and report-text evaluation.

mod roc;
mod text;

use std::fmt::Write as _;

pub use roc::{aggregate, evaluate_classes, roc_auc, roc_curve, RocCurve, RocResult};
pub use text::{
    bleu_n, clipped_precision, lcs_len, meteor_simple, rouge_l, score_corpus, score_pair, TextScore,
};

use crate::error::Result;

/// `fpr<TAB>tpr` rows for one class.
pub fn roc_table(curve: &RocCurve) -> String {
    let mut s = String::from("fpr\ttpr\n");
    for (f, t) in &curve.points {
        let _ = writeln!(s, "{f}\t{t}");
    }
    s
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.4}"),
        _ => "--".to_string(),
    }
}

/// Per-class AUC table with one column per evaluated method, the positive
/// count column `#`, and `AVG` / `#wAVG` rows.
pub fn summary_table(
    class_names: &[String],
    columns: &[(&str, Vec<Option<f64>>)],
    counts: &[usize],
) -> Result<String> {
    let mut s = String::from("Class");
    for (label, _) in columns {
        s.push('\t');
        s.push_str(label);
    }
    s.push_str("\t#\n");
    for (m, name) in class_names.iter().enumerate() {
        s.push_str(name);
        for (_, aucs) in columns {
            s.push('\t');
            s.push_str(&cell(aucs[m]));
        }
        let _ = writeln!(s, "\t{}", counts[m]);
    }
    let mut avg_row = String::from("AVG");
    let mut wavg_row = String::from("#wAVG");
    for (_, aucs) in columns {
        let (avg, wavg) = aggregate(aucs, counts)?;
        avg_row.push('\t');
        avg_row.push_str(&cell(Some(avg)));
        wavg_row.push('\t');
        wavg_row.push_str(&cell(Some(wavg)));
    }
    let total: usize = counts.iter().sum();
    let _ = writeln!(s, "{avg_row}\t{total}");
    let _ = writeln!(s, "{wavg_row}\t{total}");
    Ok(s)
}
