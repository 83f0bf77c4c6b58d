//! Central finite-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-8;

/// Worst-case relative error per input tensor.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub per_input: Vec<f64>,
    /// `(coordinate, analytic, numeric)` at each input's worst coordinate.
    pub worst: Vec<(usize, f64, f64)>,
    /// Largest `|analytic - numeric|` per input.
    pub max_abs: Vec<f64>,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / FLOOR.max(analytic.abs() + numeric.abs())
}

/// Compares the tape gradient of the scalar `f` with central differences of
/// step [`STEP`] at every coordinate of every input.
///
/// `f` receives a fresh tape with each input bound as a trainable leaf.
pub fn gradcheck<F>(f: F, inputs: &[Tensor]) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if tape.value(out).len() != 1 {
            return Err(Error::invalid(format!(
                "gradcheck needs a scalar function, got shape {:?}",
                tape.shape(out)
            )));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(inputs)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(tape);

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut worst_at = Vec::with_capacity(inputs.len());
    let mut max_abs = Vec::with_capacity(inputs.len());
    for (i, grad) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        let mut at = (0, 0.0, 0.0);
        let mut abs: f64 = 0.0;
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + STEP;
            let (t, _, o) = eval(&work)?;
            let plus = t.value(o).item();
            work[i].data_mut()[j] = orig - STEP;
            let (t, _, o) = eval(&work)?;
            let minus = t.value(o).item();
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(grad.data()[j], numeric);
            abs = abs.max((grad.data()[j] - numeric).abs());
            if err > worst {
                worst = err;
                at = (j, grad.data()[j], numeric);
            }
        }
        per_input.push(worst);
        worst_at.push(at);
        max_abs.push(abs);
    }
    Ok(GradcheckReport {
        per_input,
        worst: worst_at,
        max_abs,
    })
}
