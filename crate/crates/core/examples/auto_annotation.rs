//! Auto-annotation: a compact network labels images from their reports
//! (mode R) or from image and report together (mode I+R).
//!
//! cargo run --release --example auto_annotation

use tienet::data::{generate, SyntheticSpec};
use tienet::experiment::{predict_all, prepare, roc_of, train_mode};
use tienet::model::{Mode, ModelConfig};
use tienet::training::TrainConfig;

fn main() -> tienet::Result<()> {
    let spec = SyntheticSpec { train: 600, val: 100, test: 200, ..SyntheticSpec::default() };
    let prep = prepare(&generate(&spec)?, &spec, 2)?;
    let model_cfg = ModelConfig {
        conv_channels: vec![4, 8, 16],
        channels: 16,
        hidden: 16,
        word_dim: 16,
        attn_hidden: 16,
        spatial_hidden: 16,
        penal_coeff: 0.1,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig { epochs: 20, lr: 0.01, ..TrainConfig::default() };

    for mode in [Mode::R, Mode::IR] {
        let (model, outcome) = train_mode(&prep, &model_cfg, mode, &train_cfg)?;
        let roc = roc_of(&predict_all(&model, &prep.test)?, &prep.test)?;
        println!(
            "{:<3} best epoch {}  test macro AUC {:.3}  weighted {:.3}",
            mode.as_str(),
            outcome.best_epoch,
            roc.avg,
            roc.weighted_avg
        );
    }
    Ok(())
}
