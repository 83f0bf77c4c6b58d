//! Text and spatial attention of a briefly trained I+R model on one test
//! record: per-word saliency and the saliency-weighted spatial map.
//!
//! cargo run --release --example attention_trace

use tienet::data::{generate, SyntheticSpec};
use tienet::experiment::{prepare, train_mode};
use tienet::model::{Mode, ModelConfig};
use tienet::training::TrainConfig;

fn main() -> tienet::Result<()> {
    let spec = SyntheticSpec { train: 300, val: 50, test: 20, ..SyntheticSpec::default() };
    let prep = prepare(&generate(&spec)?, &spec, 2)?;
    let model_cfg = ModelConfig {
        conv_channels: vec![4, 8, 8],
        channels: 8,
        hidden: 12,
        word_dim: 12,
        attn_hidden: 12,
        spatial_hidden: 8,
        ..ModelConfig::default()
    };
    let (model, _) = train_mode(&prep, &model_cfg, Mode::IR, &TrainConfig { epochs: 8, lr: 0.01, ..TrainConfig::default() })?;

    let sample = &prep.test[0];
    let trace = model.predict(Some(&sample.image), Some(&sample.tokens))?.trace.expect("I+R produces a trace");
    trace.validate(1e-9)?;

    println!("word saliency (max over attention rows):");
    for (&id, g) in trace.token_ids.iter().zip(&trace.saliency) {
        let w = prep.vocab.token(id).unwrap_or("?");
        println!("  {w:<14} {g:.3} {}", "*".repeat((g * 40.0).round() as usize));
    }

    let map = &trace.weighted_map;
    let d = map.shape()[0];
    let peak = map.data().iter().copied().fold(f64::MIN, f64::max);
    println!("\nweighted spatial map ({d}x{d}, scaled to its peak):");
    let shades = [' ', '.', ':', '+', '#'];
    for i in 0..d {
        let row: String = (0..d).map(|j| shades[((map.at2(i, j) / peak) * 4.0).round() as usize]).collect();
        println!("  |{row}|");
    }
    Ok(())
}
