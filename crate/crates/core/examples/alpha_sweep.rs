//! Trade-off between classification and generation in mode I+GR as the
//! loss weight alpha moves from report-heavy to label-only.
//!
//! cargo run --release --example alpha_sweep

use tienet::data::{generate, SyntheticSpec};
use tienet::experiment::{generate_all, generation_scores, predict_all, prepare, roc_of, train_mode};
use tienet::model::{Mode, ModelConfig};
use tienet::training::TrainConfig;

fn main() -> tienet::Result<()> {
    let spec = SyntheticSpec { train: 400, val: 80, test: 150, ..SyntheticSpec::default() };
    let prep = prepare(&generate(&spec)?, &spec, 2)?;
    let train_cfg = TrainConfig { epochs: 8, lr: 0.01, ..TrainConfig::default() };
    println!("alpha\tmacro_auc\tbleu1\tshuffled_bleu1");
    for alpha in [0.3, 0.6, 0.85, 1.0] {
        let model_cfg = ModelConfig {
            conv_channels: vec![4, 8, 8],
            channels: 8,
            hidden: 16,
            word_dim: 16,
            attn_hidden: 8,
            spatial_hidden: 8,
            alpha,
            penal_coeff: 0.1,
            ..ModelConfig::default()
        };
        let (model, _) = train_mode(&prep, &model_cfg, Mode::IGR, &train_cfg)?;
        let roc = roc_of(&predict_all(&model, &prep.test)?, &prep.test)?;
        let text = generation_scores(&prep.vocab, &generate_all(&model, &prep.test)?, &prep.test);
        println!("{alpha}\t{:.4}\t{:.4}\t{:.4}", roc.avg, text.paired.bleu1, text.shuffled.bleu1);
    }
    Ok(())
}
