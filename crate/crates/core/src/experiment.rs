//! End-to-end helpers shared by the command line, the examples and the
//! experiment tests: vocabulary and sample preparation, training one mode,
//! and test-set evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{gradcheck, OpKind, Tape, Tensor, Var};
use crate::data::{Splits, SyntheticSpec};
use crate::error::Result;
use crate::metrics::{evaluate_classes, score_corpus, RocResult, TextScore};
use crate::model::{Decoding, Mode, ModelConfig, Prediction, TieNet};
use crate::text::{tokenize, TokenSequence, Vocabulary, END, START};
use crate::training::{compute_class_weights, objective, samples, train, ClassWeights, TrainConfig, TrainOutcome, TrainSample};

/// Encoded splits plus corpus statistics of the training split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Vec<TrainSample>,
    pub val: Vec<TrainSample>,
    pub test: Vec<TrainSample>,
    pub weights: ClassWeights,
    pub class_names: Vec<String>,
}

/// Builds the vocabulary from training reports only.
pub fn prepare(splits: &Splits, spec: &SyntheticSpec, min_count: usize) -> Result<Prepared> {
    let corpus: Vec<Vec<String>> = splits.train.records.iter().map(|r| tokenize(&r.report)).collect();
    let vocab = Vocabulary::build(&corpus, min_count)?;
    let weights = compute_class_weights(&splits.train.class_counts(Some(spec.no_finding())))?;
    Ok(Prepared {
        train: samples(&splits.train, &vocab),
        val: samples(&splits.val, &vocab),
        test: samples(&splits.test, &vocab),
        vocab,
        weights,
        class_names: spec.class_names(),
    })
}

/// Initializes a model for `mode` from `train_cfg.seed` and trains it.
pub fn train_mode(
    prep: &Prepared,
    model_cfg: &ModelConfig,
    mode: Mode,
    train_cfg: &TrainConfig,
) -> Result<(TieNet, TrainOutcome)> {
    let cfg = ModelConfig {
        mode,
        vocab_size: prep.vocab.len(),
        classes: prep.class_names.len(),
        ..model_cfg.clone()
    };
    let mut model = TieNet::new(cfg, train_cfg.seed)?;
    let outcome = train(&mut model, &prep.train, &prep.val, train_cfg, &prep.weights)?;
    Ok((model, outcome))
}

/// Inference on every sample, in order.
pub fn predict_all(model: &TieNet, set: &[TrainSample]) -> Result<Vec<Prediction>> {
    set.par_iter()
        .map(|s| model.predict(Some(&s.image), Some(&s.tokens)))
        .collect()
}

pub fn roc_of(predictions: &[Prediction], set: &[TrainSample]) -> Result<RocResult> {
    let probs: Vec<Vec<f64>> = predictions.iter().map(|p| p.probs.clone()).collect();
    let labels: Vec<Vec<u8>> = set.iter().map(|s| s.labels.clone()).collect();
    evaluate_classes(&probs, &labels)
}

/// Text scores of generated reports against their own references and
/// against the references of other records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationScores {
    pub paired: TextScore,
    /// Generated report of record `i` scored against the reference of
    /// record `i + 1` (cyclically).
    pub shuffled: TextScore,
}

pub fn generate_all(model: &TieNet, set: &[TrainSample]) -> Result<Vec<TokenSequence>> {
    set.par_iter()
        .map(|s| model.generate_report(&s.image, Decoding::Greedy).map(|g| g.tokens))
        .collect()
}

pub fn generation_scores(vocab: &Vocabulary, generated: &[TokenSequence], set: &[TrainSample]) -> GenerationScores {
    let gen: Vec<Vec<String>> = generated.iter().map(|g| vocab.decode(g)).collect();
    let refs: Vec<Vec<String>> = set.iter().map(|s| vocab.decode(&s.tokens)).collect();
    let n = refs.len();
    let paired: Vec<(Vec<String>, Vec<String>)> = gen.iter().cloned().zip(refs.iter().cloned()).collect();
    let shuffled: Vec<(Vec<String>, Vec<String>)> =
        (0..n).map(|i| (gen[i].clone(), refs[(i + 1) % n].clone())).collect();
    GenerationScores {
        paired: score_corpus(&paired),
        shuffled: score_corpus(&shuffled),
    }
}

/// Gradient-check outcome of one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub group: String,
    pub max_rel: f64,
    pub max_abs: f64,
}

/// Worst relative gradient error per parameter group of the full training
/// objective on one random sample, in store order of first appearance.
/// `fault` corrupts one backward rule, as a negative control.
///
/// The check runs at a generic point: the initialization plus
/// Uniform(-0.5, 0.5) noise on every coordinate. At the initialization
/// itself, zero biases and the small word embeddings leave many gradient
/// coordinates near 1e-9, below the finite-difference noise of a step of
/// 1e-6, and a zero `h_0` hides the recurrent weights altogether.
///
/// The numeric side is quantized: a loss near 3 moves in steps of about
/// 4e-16, so each central difference carries an absolute error of a few
/// 1e-10. Coordinates with |g| below 1e-6 can then exceed a relative error
/// of 1e-4 even when the backward pass is exact, which is why each group
/// also reports its largest absolute error.
pub fn gradcheck_groups(
    cfg: &ModelConfig,
    seed: u64,
    fault: Option<(OpKind, f64)>,
) -> Result<Vec<GroupError>> {
    let model = TieNet::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = cfg.image_size;
    let pixels = (0..side * side * cfg.image_channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    let image = Tensor::new(vec![side, side, cfg.image_channels], pixels)?;
    let mut ids = vec![START];
    ids.extend((0..4).map(|_| rng.random_range(END + 1..cfg.vocab_size)));
    ids.push(END);
    let sample = TrainSample {
        id: 0,
        image,
        tokens: TokenSequence::new(ids, cfg.vocab_size)?,
        labels: (0..cfg.classes).map(|m| u8::from(m % 2 == 0)).collect(),
    };
    let weights = ClassWeights {
        beta_p: 0.6,
        beta_n: 0.4,
        lambda: (0..cfg.classes).map(|_| rng.random_range(0.2..1.0)).collect(),
    };
    let joint = cfg.mode != Mode::IBaseline;
    let inputs: Vec<Tensor> = model
        .params()
        .tensors()
        .map(|t| {
            let data = t.data().iter().map(|&x| x + rng.random_range(-0.5..0.5)).collect();
            Tensor::new(t.shape().to_vec(), data)
        })
        .collect::<Result<_>>()?;
    let report = gradcheck(
        |tape: &mut Tape, vars: &[Var]| {
            let mut t = std::mem::take(tape);
            if let Some((kind, factor)) = fault {
                t.inject_fault(kind, factor);
            }
            let mut fw = model.forward_with(t, vars);
            let terms = objective(&mut fw, &sample, sample.tokens.ids(), joint, &weights, None)?;
            *tape = fw.tape;
            Ok(terms.total)
        },
        &inputs,
    )?;
    let mut groups: Vec<GroupError> = Vec::new();
    for (id, (&rel, &abs)) in report.per_input.iter().zip(&report.max_abs).enumerate() {
        let group = model.params().group(id);
        match groups.iter_mut().find(|g| g.group == group) {
            Some(g) => {
                g.max_rel = g.max_rel.max(rel);
                g.max_abs = g.max_abs.max(abs);
            }
            None => groups.push(GroupError { group, max_rel: rel, max_abs: abs }),
        }
    }
    Ok(groups)
}
