use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::OptimizerState;
use super::loss::{classification_loss, generative_loss, joint_loss};
use super::weights::ClassWeights;
use crate::autodiff::{Tensor, Var};
use crate::data::{mix, DatasetFile, Record};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_classes, RocResult};
use crate::model::{Forward, Mode, ParamId, TieNet};
use crate::text::{report_dropout, TokenSequence, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Samples per micro-batch.
    pub batch_size: usize,
    /// Micro-batches accumulated before each optimizer step.
    pub accum_steps: usize,
    /// Dropout on the classifier input.
    pub dropout: f64,
    pub l2: f64,
    /// Token-to-OOV probability applied to training reports in `ir` mode.
    pub report_dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    /// In `r` and `ir`, train on the classification loss only.
    pub annotation: bool,
    /// Vocabulary frequency cutoff.
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 8,
            accum_steps: 1,
            dropout: 0.5,
            l2: 1e-4,
            report_dropout: 0.2,
            epochs: 12,
            seed: 0,
            annotation: true,
            min_count: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr >= 0.0) || !(self.l2 >= 0.0) {
            return bad("train.lr and train.l2 must be nonnegative");
        }
        if self.batch_size == 0 || self.accum_steps == 0 || self.epochs == 0 || self.min_count == 0 {
            return bad("train.batch_size, accum_steps, epochs and min_count must be positive");
        }
        if !(0.0..=1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.report_dropout) {
            return bad("train.dropout and train.report_dropout must lie in [0, 1]");
        }
        Ok(())
    }

    /// Whether `mode` optimizes the joint objective rather than the
    /// classification loss alone.
    pub fn joint(&self, mode: Mode) -> bool {
        match mode {
            Mode::IGR => true,
            Mode::R | Mode::IR => !self.annotation,
            Mode::IBaseline => false,
        }
    }

    /// Samples averaged into one optimizer step.
    pub fn window(&self) -> usize {
        self.batch_size * self.accum_steps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: u64,
    pub image: Tensor,
    pub tokens: TokenSequence,
    pub labels: Vec<u8>,
}

impl TrainSample {
    pub fn from_record(r: &Record, vocab: &Vocabulary) -> Self {
        TrainSample {
            id: r.id,
            image: r.image.clone(),
            tokens: vocab.encode_text(&r.report),
            labels: r.labels.clone(),
        }
    }
}

pub fn samples(file: &DatasetFile, vocab: &Vocabulary) -> Vec<TrainSample> {
    file.records.iter().map(|r| TrainSample::from_record(r, vocab)).collect()
}

/// Loss handles of one sample.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    /// `[1, M]` class probabilities.
    pub probs: Var,
    pub classification: Var,
    pub generative: Option<Var>,
    pub penalty: Option<Var>,
}

/// Builds the training objective of one sample on `fw`. `tokens` replaces
/// the sample's report (e.g. after report dropout); the generative term
/// predicts `tokens[t + 1]` from step `t`.
pub fn objective(
    fw: &mut Forward<'_>,
    sample: &TrainSample,
    tokens: &[usize],
    joint: bool,
    weights: &ClassWeights,
    dropout: Option<&Tensor>,
) -> Result<LossTerms> {
    let cfg = fw.config().clone();
    let image = cfg.mode.uses_image().then_some(&sample.image);
    let ids = cfg.mode.uses_report().then_some(tokens);
    let out = fw.run(image, ids, joint, dropout)?;
    let lc = classification_loss(&mut fw.tape, out.probs, &sample.labels, weights)?;
    let penalty = match out.aete {
        Some(a) if cfg.penal_coeff > 0.0 => Some(fw.attention_penalty(a.g)?),
        _ => None,
    };
    let generative = match out.word_log_probs {
        Some(lp) if tokens.len() >= 2 => {
            let rows = fw.tape.slice(lp, 0, 0, tokens.len() - 1)?;
            Some(generative_loss(&mut fw.tape, rows, &tokens[1..])?)
        }
        _ => None,
    };
    let weighted_penalty = penalty.map(|p| (cfg.penal_coeff, p));
    let total = match generative {
        Some(lr) => joint_loss(&mut fw.tape, lc, lr, cfg.alpha, weighted_penalty)?,
        None => match penalty {
            Some(p) => {
                let p = fw.tape.scale(p, cfg.penal_coeff);
                fw.tape.add(lc, p)?
            }
            None => lc,
        },
    };
    Ok(LossTerms {
        total,
        probs: out.probs,
        classification: lc,
        generative,
        penalty,
    })
}

/// Inverted dropout mask of `width` entries.
pub fn dropout_mask(width: usize, p: f64, seed: u64) -> Option<Tensor> {
    if p <= 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width)
        .map(|_| {
            if p >= 1.0 || rng.random::<f64>() < p {
                0.0
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect();
    Some(Tensor::new(vec![1, width], data).expect("mask shape"))
}

struct SampleGrad {
    grads: Vec<(ParamId, Vec<f64>)>,
    lc: f64,
    lr: f64,
}

fn sample_gradient(
    model: &TieNet,
    sample: &TrainSample,
    cfg: &TrainConfig,
    weights: &ClassWeights,
    epoch: usize,
) -> Result<SampleGrad> {
    let stream = mix(mix(cfg.seed, epoch as u64), sample.id);
    let mode = model.config().mode;
    let tokens = if mode == Mode::IR && cfg.report_dropout > 0.0 {
        report_dropout(&sample.tokens, cfg.report_dropout, mix(stream, 2))
    } else {
        sample.tokens.clone()
    };
    let mask = dropout_mask(model.config().classifier_input(), cfg.dropout, mix(stream, 1));
    let mut fw = model.forward();
    let terms = objective(&mut fw, sample, tokens.ids(), cfg.joint(mode), weights, mask.as_ref())?;
    let g = fw.tape.backward(terms.total)?;
    let grads = fw
        .bound()
        .filter_map(|(id, v)| g.get(v).map(|d| (id, d.to_vec())))
        .collect();
    Ok(SampleGrad {
        grads,
        lc: fw.value(terms.classification).item(),
        lr: terms.generative.map_or(0.0, |v| fw.value(v).item()),
    })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_lc: f64,
    pub train_lr: f64,
    pub val_objective: f64,
    pub val_auc: f64,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "epoch\ttrain_lc\ttrain_lr\tval_objective\tval_auc\tseconds";

pub fn log_tsv(rows: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            r.epoch, r.train_lc, r.train_lr, r.val_objective, r.val_auc, r.seconds
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

/// Trains `model` in place and leaves it at the epoch with the best
/// validation macro AUC; ties go to the lower validation objective, then to
/// the earlier epoch.
pub fn train(
    model: &mut TieNet,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
    weights: &ClassWeights,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation splits must be nonempty"));
    }
    let mut opt = OptimizerState::new(model.params());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, crate::model::ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64)));

        let (mut sum_lc, mut sum_lr) = (0.0, 0.0);
        for window in order.chunks(cfg.window()) {
            let results = window
                .par_iter()
                .map(|&i| sample_gradient(model, &train_set[i], cfg, weights, epoch))
                .collect::<Result<Vec<_>>>()?;
            let mut grads: Vec<Vec<f64>> = model.params().tensors().map(|t| vec![0.0; t.len()]).collect();
            for r in &results {
                sum_lc += r.lc;
                sum_lr += r.lr;
                for (id, g) in &r.grads {
                    for (a, b) in grads[*id].iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
            let scale = 1.0 / window.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            opt.step(model.params_mut(), &grads, cfg.lr, cfg.l2)?;
        }

        let val = validate(model, val_set, cfg, weights)?;
        let n = train_set.len() as f64;
        let row = EpochLog {
            epoch,
            train_lc: sum_lc / n,
            train_lr: sum_lr / n,
            val_objective: val.objective,
            val_auc: val.roc.avg,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: L_C {:.4} L_R {:.4} val {:.4} auc {:.4} ({:.1}s)",
            row.train_lc,
            row.train_lr,
            row.val_objective,
            row.val_auc,
            row.seconds
        );
        // AUC is undefined on every epoch or on none (it depends on labels
        // only); the validation objective breaks ties and decides alone
        // when AUC is undefined
        let auc = if row.val_auc.is_nan() { f64::NEG_INFINITY } else { row.val_auc };
        let better = best.as_ref().is_none_or(|(a, o, _, _)| auc > *a || (auc == *a && row.val_objective < *o));
        if better {
            best = Some((auc, row.val_objective, epoch, model.params().clone()));
        }
        log.push(row);
    }

    let (auc, _, best_epoch, params) = best.expect("at least one epoch");
    let best_val_auc = if auc.is_finite() { auc } else { f64::NAN };
    *model.params_mut() = params;
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_val_auc,
    })
}

/// Validation pass: mean objective without dropout, and per-class AUC of
/// the inference-time predictions.
pub struct Validation {
    pub objective: f64,
    pub roc: RocResult,
}

pub fn validate(model: &TieNet, set: &[TrainSample], cfg: &TrainConfig, weights: &ClassWeights) -> Result<Validation> {
    let mode = model.config().mode;
    let joint = cfg.joint(mode);
    let rows = set
        .par_iter()
        .map(|s| {
            let mut fw = model.forward();
            let terms = objective(&mut fw, s, s.tokens.ids(), joint, weights, None)?;
            let loss = fw.value(terms.total).item();
            let probs = if mode == Mode::IGR {
                model.predict(Some(&s.image), None)?.probs
            } else {
                // identical to the inference forward without dropout
                fw.value(terms.probs).data().to_vec()
            };
            Ok((loss, probs))
        })
        .collect::<Result<Vec<_>>>()?;
    let objective = rows.iter().map(|r| r.0).sum::<f64>() / set.len() as f64;
    let probs: Vec<Vec<f64>> = rows.into_iter().map(|r| r.1).collect();
    let labels: Vec<Vec<u8>> = set.iter().map(|s| s.labels.clone()).collect();
    Ok(Validation {
        objective,
        roc: evaluate_classes(&probs, &labels)?,
    })
}
