//! ROC curve, AUC and report similarity scores on hand-made inputs.
//!
//! cargo run --release --example metrics

use tienet::metrics::{aggregate, roc_curve, roc_table, score_pair};
use tienet::text::tokenize;

fn main() -> tienet::Result<()> {
    let scores = [0.9, 0.8, 0.8, 0.6, 0.55, 0.4, 0.3, 0.1];
    let labels = [true, true, false, true, false, false, true, false];
    let curve = roc_curve(&scores, &labels).expect("both labels present");
    print!("{}", roc_table(&curve));
    println!("AUC {:.4}", curve.auc);

    let (avg, wavg) = aggregate(&[Some(curve.auc), Some(0.6), None], &[4, 1, 0])?;
    println!("macro {avg:.4}, weighted {wavg:.4}\n");

    let reference = tokenize("there is a left effusion . no cardiomegaly .");
    for cand in ["there is a left effusion . no cardiomegaly .", "no cardiomegaly . there is a left effusion .", "no acute cardiopulmonary abnormality ."] {
        let s = score_pair(&tokenize(cand), &reference);
        println!(
            "{cand:<48} BLEU-1 {:.3} BLEU-4 {:.3} ROUGE-L {:.3} METEOR {:.3}",
            s.bleu1, s.bleu4, s.rouge_l, s.meteor_simple
        );
    }
    Ok(())
}
