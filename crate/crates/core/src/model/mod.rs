//! The text-image embedding network: conv backbone, attention LSTM,
//! attention-encoded text embedding, saliency-weighted pooling and the
//! joint classifier.

mod config;
mod net;
mod params;
mod trace;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{Mode, ModelConfig};
pub use net::{AeteOut, Encoded, Forward, Outputs, SwgapOut, Visual};
pub use params::{init_params, ParamId, ParamIds, ParamStore};
pub use trace::{parse_blocks, AttentionTrace};

use crate::autodiff::{checkpoint, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::text::{TokenSequence, END, PAD, START};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    /// Argmax at every step; ties go to the lowest index.
    Greedy,
    /// Seeded sampling from `softmax(logits / temperature)`.
    Sample { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub tokens: TokenSequence,
    /// Next-word distribution at every decoding step.
    pub dists: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub trace: Option<AttentionTrace>,
    pub generated: Option<Generated>,
}

#[derive(Debug, Clone)]
pub struct TieNet {
    config: ModelConfig,
    params: ParamStore,
    ids: ParamIds,
}

impl TieNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, ids) = init_params(&config, seed);
        Ok(TieNet { config, params, ids })
    }

    /// Model for `config` holding the given parameter values.
    pub fn from_entries(config: ModelConfig, entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut net = TieNet::new(config, 0)?;
        net.params.load_entries(entries)?;
        Ok(net)
    }

    pub fn load(config: ModelConfig, path: &Path) -> Result<Self> {
        Self::from_entries(config, checkpoint::load(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, self.params.entries())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn ids(&self) -> &ParamIds {
        &self.ids
    }

    pub fn forward(&self) -> Forward<'_> {
        Forward::new(&self.config, &self.params, &self.ids)
    }

    /// Forward builder over caller-supplied parameter handles (one per
    /// parameter, store order).
    pub fn forward_with(&self, tape: Tape, vars: &[Var]) -> Forward<'_> {
        Forward::with_bound(&self.config, &self.params, &self.ids, tape, vars)
    }

    /// `X` as a `[D, D, C]` tensor.
    pub fn backbone_forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut fw = self.forward();
        let x = fw.backbone(image)?;
        let d = self.config.grid();
        fw.value(x).reshaped(vec![d, d, self.config.channels])
    }

    /// Decodes a report from the image alone, starting at `START` and
    /// stopping at `END` or after `max_decode_len` words.
    pub fn generate_report(&self, image: &Tensor, decoding: Decoding) -> Result<Generated> {
        let mut fw = self.forward();
        let x = fw.backbone(image)?;
        let vis = fw.visual(x)?;
        let (mut h, mut c) = fw.init_hidden(vis.mean)?;
        let mut rng = match decoding {
            Decoding::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Decoding::Greedy => None,
        };

        let mut ids = vec![START];
        let mut dists = Vec::new();
        let mut word = START;
        loop {
            let a = fw.spatial_attention(h, &vis)?;
            (h, c) = fw.lstm_step(word, a, &vis, h, c)?;
            let logp = fw.word_log_probs(h)?;
            let dist: Vec<f64> = fw.value(logp).data().iter().map(|v| v.exp()).collect();
            word = match (&decoding, rng.as_mut()) {
                (Decoding::Sample { temperature, .. }, Some(rng)) => {
                    sample_word(&dist, *temperature, rng)
                }
                _ => greedy_word(&dist),
            };
            dists.push(dist);
            if word == END {
                break;
            }
            ids.push(word);
            if ids.len() - 1 >= self.config.max_decode_len {
                break;
            }
        }
        ids.push(END);
        Ok(Generated {
            tokens: TokenSequence::new(ids, self.config.vocab_size)?,
            dists,
        })
    }

    /// Inference for the configured mode. In `IGR` the report argument is
    /// ignored and replaced by a greedy decode of the image.
    pub fn predict(&self, image: Option<&Tensor>, report: Option<&TokenSequence>) -> Result<Prediction> {
        let generated = if self.config.mode == Mode::IGR {
            let image = image.ok_or(Error::ModeInput {
                mode: "igr",
                what: "an image",
            })?;
            Some(self.generate_report(image, Decoding::Greedy)?)
        } else {
            None
        };
        let ids = generated
            .as_ref()
            .map(|g| g.tokens.ids())
            .or(report.map(|r| r.ids()));
        let image = if self.config.mode.uses_image() { image } else { None };
        let ids = if self.config.mode.uses_report() { ids } else { None };

        let mut fw = self.forward();
        let out = fw.run(image, ids, false, None)?;
        let trace = extract_trace(&fw, &out)?;
        Ok(Prediction {
            logits: fw.value(out.logits).data().to_vec(),
            probs: fw.value(out.probs).data().to_vec(),
            trace,
            generated,
        })
    }
}

/// First index with the highest probability, never PAD or START.
fn greedy_word(dist: &[f64]) -> usize {
    let mut best: Option<usize> = None;
    for (i, &p) in dist.iter().enumerate() {
        if i != PAD && i != START && best.is_none_or(|b| p > dist[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or(END)
}

fn sample_word(dist: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let t = temperature.max(1e-6);
    let weights: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == PAD || i == START { 0.0 } else { p.max(1e-300).ln() / t })
        .collect();
    let mx = weights
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != PAD && *i != START)
        .map(|(_, &w)| w)
        .fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| if i == PAD || i == START { 0.0 } else { (w - mx).exp() })
        .collect();
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    END
}

/// Reads the attention trace off a finished forward pass.
pub fn extract_trace(fw: &Forward<'_>, out: &Outputs) -> Result<Option<AttentionTrace>> {
    let (Some(enc), Some(aete), Some(ids)) = (&out.encoded, &out.aete, &out.tokens) else {
        return Ok(None);
    };
    let d = fw.config().grid();
    let maps_t = fw.value(enc.maps);
    let maps = (0..ids.len())
        .map(|t| Tensor::new(vec![d, d], maps_t.row(t).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let g = fw.value(aete.g).clone();
    let (saliency, weighted_map) = match &out.swgap {
        Some(sw) => (
            fw.value(sw.saliency).data().to_vec(),
            fw.value(sw.weighted_map).reshaped(vec![d, d])?,
        ),
        None => {
            // report-only: no image, but the saliency and map are still defined
            let r = g.shape()[0];
            let sal: Vec<f64> = (0..ids.len())
                .map(|t| (0..r).map(|i| g.at2(i, t)).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let mut ws = vec![0.0; d * d];
            for (t, &s) in sal.iter().enumerate() {
                for (w, &a) in ws.iter_mut().zip(maps_t.row(t)) {
                    *w += a * s;
                }
            }
            (sal, Tensor::new(vec![d, d], ws)?)
        }
    };
    Ok(Some(AttentionTrace {
        token_ids: ids.clone(),
        g,
        m: fw.value(aete.m).clone(),
        maps,
        saliency,
        weighted_map,
    }))
}
