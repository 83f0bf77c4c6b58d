//! Image-only use of the joint model: train in mode I+GR, then for a few
//! test images print the generated report next to the predicted labels.
//!
//! cargo run --release --example classify_and_report

use tienet::data::{generate, SyntheticSpec};
use tienet::experiment::{generate_all, generation_scores, prepare, train_mode};
use tienet::model::{Mode, ModelConfig};
use tienet::training::TrainConfig;

fn main() -> tienet::Result<()> {
    let spec = SyntheticSpec { train: 600, val: 100, test: 100, ..SyntheticSpec::default() };
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
    let (model, _) = train_mode(&prep, &model_cfg, Mode::IGR, &TrainConfig { epochs: 12, lr: 0.01, ..TrainConfig::default() })?;

    for s in prep.test.iter().take(3) {
        let p = model.predict(Some(&s.image), None)?;
        let predicted: Vec<&str> = prep
            .class_names
            .iter()
            .zip(&p.probs)
            .filter(|(_, &q)| q >= 0.5)
            .map(|(n, _)| n.as_str())
            .collect();
        let truth: Vec<&str> =
            prep.class_names.iter().zip(&s.labels).filter(|(_, &y)| y == 1).map(|(n, _)| n.as_str()).collect();
        let generated = p.generated.expect("I+GR always generates");
        println!("labels    {truth:?}\npredicted {predicted:?}");
        println!("generated {}", prep.vocab.decode(&generated.tokens).join(" "));
        println!("reference {}\n", prep.vocab.decode(&s.tokens).join(" "));
    }

    let scores = generation_scores(&prep.vocab, &generate_all(&model, &prep.test)?, &prep.test);
    println!(
        "test BLEU-1 {:.3} (shuffled pairing {:.3}), ROUGE-L {:.3}",
        scores.paired.bleu1, scores.shuffled.bleu1, scores.paired.rouge_l
    );
    Ok(())
}
