//! Loss terms, as tape operations and as plain values.

use super::weights::ClassWeights;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::text::PAD;

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before logs.
pub const CLAMP: f64 = 1e-7;

fn coefficients(labels: &[u8], w: &ClassWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    if labels.len() != w.lambda.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} class weights",
            labels.len(),
            w.lambda.len()
        )));
    }
    let pos = labels.iter().zip(&w.lambda).map(|(&y, l)| if y == 1 { l * w.beta_p } else { 0.0 });
    let neg = labels.iter().zip(&w.lambda).map(|(&y, l)| if y == 1 { 0.0 } else { l * w.beta_n });
    Ok((pos.collect(), neg.collect()))
}

/// Weighted binary cross-entropy of one sample; `probs` is `[1, M]`.
pub fn classification_loss(tape: &mut Tape, probs: Var, labels: &[u8], w: &ClassWeights) -> Result<Var> {
    let m = tape.shape(probs).iter().product::<usize>();
    if m != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "classification_loss",
            lhs: tape.shape(probs).to_vec(),
            rhs: vec![1, labels.len()],
        });
    }
    let (pos, neg) = coefficients(labels, w)?;
    let shape = tape.shape(probs).to_vec();
    let f = tape.clamp(probs, CLAMP, 1.0 - CLAMP);
    let ln_f = tape.ln(f)?;
    let neg_f = tape.scale(f, -1.0);
    let one_minus = tape.add_scalar(neg_f, 1.0);
    let ln_1mf = tape.ln(one_minus)?;
    let cp = tape.constant(Tensor::new(shape.clone(), pos)?);
    let cn = tape.constant(Tensor::new(shape, neg)?);
    let a = tape.mul(ln_f, cp)?;
    let b = tape.mul(ln_1mf, cn)?;
    let s = tape.add(a, b)?;
    let total = tape.sum_all(s);
    Ok(tape.scale(total, -1.0))
}

pub fn classification_loss_value(probs: &[f64], labels: &[u8], w: &ClassWeights) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::invalid("one probability per label required"));
    }
    let (pos, neg) = coefficients(labels, w)?;
    let mut total = 0.0;
    for ((&p, cp), cn) in probs.iter().zip(&pos).zip(&neg) {
        let f = p.clamp(CLAMP, 1.0 - CLAMP);
        total += cp * f.ln() + cn * (1.0 - f).ln();
    }
    Ok(-total)
}

/// Mean negative log-likelihood of `targets` under the rows of
/// `log_probs` (`[n, V]`); `PAD` targets are skipped.
pub fn generative_loss(tape: &mut Tape, log_probs: Var, targets: &[usize]) -> Result<Var> {
    let shape = tape.shape(log_probs).to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "generative_loss",
            lhs: shape,
            rhs: vec![targets.len()],
        });
    }
    let picked = tape.pick(log_probs, targets)?;
    let kept: Vec<usize> = (0..targets.len()).filter(|&t| targets[t] != PAD).collect();
    if kept.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let picked = if kept.len() == targets.len() {
        picked
    } else {
        tape.index_select(picked, 0, &kept)?
    };
    let total = tape.sum_all(picked);
    Ok(tape.scale(total, -1.0 / kept.len() as f64))
}

/// The same quantity from explicit per-step distributions.
pub fn generative_loss_value(dists: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if dists.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} distributions for {} targets",
            dists.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (d, &t) in dists.iter().zip(targets) {
        if t == PAD {
            continue;
        }
        let p = *d
            .get(t)
            .ok_or_else(|| Error::invalid(format!("target {t} outside a distribution of {}", d.len())))?;
        total -= p.ln();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// `alpha L_C + (1 - alpha) L_R + penal * P`.
pub fn joint_loss(
    tape: &mut Tape,
    lc: Var,
    lr: Var,
    alpha: f64,
    penalty: Option<(f64, Var)>,
) -> Result<Var> {
    let a = tape.scale(lc, alpha);
    let b = tape.scale(lr, 1.0 - alpha);
    let mut out = tape.add(a, b)?;
    if let Some((coeff, p)) = penalty {
        let p = tape.scale(p, coeff);
        out = tape.add(out, p)?;
    }
    Ok(out)
}

pub fn joint_loss_value(lc: f64, lr: f64, alpha: f64, penalty: Option<(f64, f64)>) -> f64 {
    let mut out = alpha * lc + (1.0 - alpha) * lr;
    if let Some((coeff, p)) = penalty {
        out += coeff * p;
    }
    out
}
