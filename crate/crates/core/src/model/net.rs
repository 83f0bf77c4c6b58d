//! Forward graph construction for one sample.

use super::config::{Mode, ModelConfig};
use super::params::{ConvIds, ParamId, ParamIds, ParamStore};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::text::PAD;

/// Visual features shared by every decoding step.
#[derive(Debug, Clone, Copy)]
pub struct Visual {
    /// `X` as `[D*D, C]`, cells in row-major `(x, y)` order.
    pub x: Var,
    /// `meanpool(X)` as `[1, C]`.
    pub mean: Var,
    /// `X W_x + b` of the spatial scorer, `[D*D, a]`.
    pub proj: Var,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    /// Hidden states as rows, `[T, d_h]`.
    pub hidden: Var,
    /// Spatial maps as rows, `[T, D*D]`.
    pub maps: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AeteOut {
    /// Row-stochastic `[r, T]` attention.
    pub g: Var,
    /// `[r, d_h]` embedding matrix `G H`.
    pub m: Var,
    /// `[1, d_h]` max-over-rows pooling of `m`.
    pub pooled: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct SwgapOut {
    /// `[1, T]` column-wise max of `G`.
    pub saliency: Var,
    /// `[1, D*D]` saliency-weighted map.
    pub weighted_map: Var,
    /// `[1, C]` pooled visual vector.
    pub pooled: Var,
}

/// Everything a forward pass produced, as tape handles.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub logits: Var,
    pub probs: Var,
    pub encoded: Option<Encoded>,
    pub aete: Option<AeteOut>,
    pub swgap: Option<SwgapOut>,
    /// `[T, V]` log-probabilities of the next word at each step.
    pub word_log_probs: Option<Var>,
    pub tokens: Option<Vec<usize>>,
}

/// Builds the graph for one sample on its own tape, binding parameters on
/// first use.
pub struct Forward<'m> {
    pub tape: Tape,
    store: &'m ParamStore,
    ids: &'m ParamIds,
    cfg: &'m ModelConfig,
    bound: Vec<Option<Var>>,
}

impl<'m> Forward<'m> {
    pub(crate) fn new(cfg: &'m ModelConfig, store: &'m ParamStore, ids: &'m ParamIds) -> Self {
        Forward {
            tape: Tape::new(),
            store,
            ids,
            cfg,
            bound: vec![None; store.len()],
        }
    }

    /// Uses `vars` (one per parameter, in store order) already living on `tape`.
    pub(crate) fn with_bound(
        cfg: &'m ModelConfig,
        store: &'m ParamStore,
        ids: &'m ParamIds,
        tape: Tape,
        vars: &[Var],
    ) -> Self {
        assert_eq!(vars.len(), store.len());
        Forward {
            tape,
            store,
            ids,
            cfg,
            bound: vars.iter().copied().map(Some).collect(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    /// Parameters touched so far, as `(id, var)`.
    pub fn bound(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    fn p(&mut self, id: ParamId) -> Var {
        match self.bound[id] {
            Some(v) => v,
            None => {
                let v = self.tape.param(self.store.get(id).clone());
                self.bound[id] = Some(v);
                v
            }
        }
    }

    /// `x W + b` for a row-batch `x` of shape `[n, k]`.
    fn affine(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let w = self.p(w);
        let b = self.p(b);
        let y = self.tape.matmul(x, w)?;
        let b = if self.tape.shape(y)[0] == 1 {
            b
        } else {
            let shape = self.tape.shape(y).to_vec();
            self.tape.broadcast(b, shape)?
        };
        self.tape.add(y, b)
    }

    fn conv(&mut self, x: Var, conv: ConvIds, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let kshape = self.store.get(conv.kernel).shape().to_vec();
        let (cin, cout) = (kshape[2], kshape[3]);
        let cols = self.tape.im2col(x, kernel, stride, pad)?;
        let kv = self.p(conv.kernel);
        let k2 = self.tape.reshape(kv, vec![kernel * kernel * cin, cout])?;
        let bias = self.p(conv.bias);
        let y = self.tape.matmul(cols, k2)?;
        let shape = self.tape.shape(y).to_vec();
        let b = self.tape.broadcast(bias, shape)?;
        self.tape.add(y, b)
    }

    /// Conv stack plus transition layer; returns `X` as `[D*D, C]`.
    pub fn backbone(&mut self, image: &Tensor) -> Result<Var> {
        let cfg = self.cfg;
        let want = [cfg.image_size, cfg.image_size, cfg.image_channels];
        if image.shape() != want {
            return Err(Error::ShapeMismatch {
                op: "backbone",
                lhs: image.shape().to_vec(),
                rhs: want.to_vec(),
            });
        }
        let mut x = self.tape.constant(image.clone());
        let mut side = cfg.image_size;
        for (i, conv) in self.ids.convs.iter().enumerate() {
            let y = self.conv(x, *conv, 3, 2, 1)?;
            let y = self.tape.relu(y);
            side /= 2;
            x = self.tape.reshape(y, vec![side, side, cfg.conv_channels[i]])?;
        }
        self.conv(x, self.ids.transition, 1, 1, 0)
    }

    pub fn visual(&mut self, x: Var) -> Result<Visual> {
        let mean = self.tape.mean(x, 0)?;
        let proj = self.affine(x, self.ids.att_w_x, self.ids.att_b)?;
        Ok(Visual { x, mean, proj })
    }

    /// Visual features for report-only classification: `X` is all zeros.
    pub fn blank_visual(&mut self) -> Result<Visual> {
        let x = self.tape.constant(Tensor::zeros(vec![self.cfg.cells(), self.cfg.channels]));
        self.visual(x)
    }

    /// `(tanh(phi_h(mean X)), tanh(phi_c(mean X)))`.
    pub fn init_hidden(&mut self, mean: Var) -> Result<(Var, Var)> {
        let h = self.affine(mean, self.ids.phi_h_w, self.ids.phi_h_b)?;
        let c = self.affine(mean, self.ids.phi_c_w, self.ids.phi_c_b)?;
        Ok((self.tape.tanh(h), self.tape.tanh(c)))
    }

    /// Softmax over grid cells of `v . tanh(h W_h + X W_x + b)`, as `[1, D*D]`.
    pub fn spatial_attention(&mut self, h: Var, vis: &Visual) -> Result<Var> {
        let wh = self.p(self.ids.att_w_h);
        let hq = self.tape.matmul(h, wh)?;
        let shape = self.tape.shape(vis.proj).to_vec();
        let hq = self.tape.broadcast(hq, shape)?;
        let pre = self.tape.add(hq, vis.proj)?;
        let act = self.tape.tanh(pre);
        let v = self.p(self.ids.att_v);
        let scores = self.tape.matmul(act, v)?;
        let scores = self.tape.reshape(scores, vec![1, self.cfg.cells()])?;
        self.tape.softmax(scores, 1)
    }

    /// One LSTM transition on `[embed(w); a X; meanpool(X)]`.
    pub fn lstm_step(&mut self, word: usize, attn: Var, vis: &Visual, h: Var, c: Var) -> Result<(Var, Var)> {
        let table = self.p(self.ids.embed);
        let emb = self.tape.index_select(table, 0, &[word])?;
        let ctx = self.tape.matmul(attn, vis.x)?;
        let input = if self.cfg.global_context {
            self.tape.concat(&[emb, ctx, vis.mean], 1)?
        } else {
            self.tape.concat(&[emb, ctx], 1)?
        };
        let wx = self.p(self.ids.lstm_w_x);
        let wh = self.p(self.ids.lstm_w_h);
        let b = self.p(self.ids.lstm_b);
        let zx = self.tape.matmul(input, wx)?;
        let zh = self.tape.matmul(h, wh)?;
        let z = self.tape.add(zx, zh)?;
        let z = self.tape.add(z, b)?;
        let dh = self.cfg.hidden;
        let gi = self.tape.slice(z, 1, 0, dh)?;
        let gf = self.tape.slice(z, 1, dh, dh)?;
        let gg = self.tape.slice(z, 1, 2 * dh, dh)?;
        let go = self.tape.slice(z, 1, 3 * dh, dh)?;
        let i = self.tape.sigmoid(gi);
        let f = self.tape.sigmoid(gf);
        let g = self.tape.tanh(gg);
        let o = self.tape.sigmoid(go);
        let keep = self.tape.mul(f, c)?;
        let write = self.tape.mul(i, g)?;
        let c_next = self.tape.add(keep, write)?;
        let squashed = self.tape.tanh(c_next);
        let h_next = self.tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Teacher-forced pass over `ids`: step `t` consumes `ids[t]`.
    pub fn encode(&mut self, ids: &[usize], vis: &Visual) -> Result<Encoded> {
        if ids.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.cfg.vocab_size) {
            return Err(Error::invalid(format!("token {bad} outside vocabulary")));
        }
        let (mut h, mut c) = self.init_hidden(vis.mean)?;
        let mut hs = Vec::with_capacity(ids.len());
        let mut maps = Vec::with_capacity(ids.len());
        for &w in ids {
            let a = self.spatial_attention(h, vis)?;
            (h, c) = self.lstm_step(w, a, vis, h, c)?;
            hs.push(h);
            maps.push(a);
        }
        Ok(Encoded {
            hidden: self.tape.concat(&hs, 0)?,
            maps: self.tape.concat(&maps, 0)?,
        })
    }

    /// `G = softmax(W_s2 tanh(W_s1 H^T))` over real positions, `M = G H`,
    /// pooled by max over rows.
    pub fn aete(&mut self, hidden: Var, keep: &[bool]) -> Result<AeteOut> {
        let ht = self.tape.transpose(hidden)?;
        let w1 = self.p(self.ids.w_s1);
        let w2 = self.p(self.ids.w_s2);
        let a = self.tape.matmul(w1, ht)?;
        let a = self.tape.tanh(a);
        let logits = self.tape.matmul(w2, a)?;
        let g = if keep.iter().all(|&k| k) {
            self.tape.softmax(logits, 1)?
        } else {
            self.tape.softmax_masked(logits, 1, keep)?
        };
        let m = self.tape.matmul(g, hidden)?;
        let pooled = self.tape.max(m, 0)?;
        Ok(AeteOut { g, m, pooled })
    }

    /// Saliency-weighted pooling of `X` using the text attention `g`.
    pub fn swgap(&mut self, g: Var, maps: Var, x: Var) -> Result<SwgapOut> {
        let saliency = self.tape.max(g, 0)?;
        let weighted_map = self.tape.matmul(saliency, maps)?;
        let pooled = self.tape.matmul(weighted_map, x)?;
        Ok(SwgapOut {
            saliency,
            weighted_map,
            pooled,
        })
    }

    /// `||G G^T - I||_F^2`.
    pub fn attention_penalty(&mut self, g: Var) -> Result<Var> {
        let gt = self.tape.transpose(g)?;
        let gg = self.tape.matmul(g, gt)?;
        let eye = self.tape.constant(Tensor::identity(self.cfg.attn_rows));
        let d = self.tape.sub(gg, eye)?;
        let sq = self.tape.mul(d, d)?;
        Ok(self.tape.sum_all(sq))
    }

    /// `[T, V]` next-word log-probabilities.
    pub fn word_log_probs(&mut self, hidden: Var) -> Result<Var> {
        let logits = self.affine(hidden, self.ids.out_w, self.ids.out_b)?;
        self.tape.log_softmax(logits, 1)
    }

    /// Final layer(s) on `features`; `dropout` is a precomputed inverted mask.
    pub fn classify(&mut self, features: Var, dropout: Option<&Tensor>) -> Result<(Var, Var)> {
        let want = self.cfg.classifier_input();
        if self.tape.shape(features) != [1, want] {
            return Err(Error::ShapeMismatch {
                op: "classify",
                lhs: self.tape.shape(features).to_vec(),
                rhs: vec![1, want],
            });
        }
        let mut x = features;
        if let Some(mask) = dropout {
            let m = self.tape.constant(mask.clone());
            x = self.tape.mul(x, m)?;
        }
        if let Some((w, b)) = self.ids.cls_hidden {
            let hdn = self.affine(x, w, b)?;
            x = self.tape.relu(hdn);
        }
        let logits = self.affine(x, self.ids.cls_w, self.ids.cls_b)?;
        let probs = self.tape.sigmoid(logits);
        Ok((logits, probs))
    }

    /// Full forward for the configured mode with the given report tokens
    /// (trailing `PAD` entries are masked out).
    pub fn run(
        &mut self,
        image: Option<&Tensor>,
        ids: Option<&[usize]>,
        want_words: bool,
        dropout: Option<&Tensor>,
    ) -> Result<Outputs> {
        let mode = self.cfg.mode;
        let need_image = || Error::ModeInput {
            mode: mode.as_str(),
            what: "an image",
        };
        let need_report = || Error::ModeInput {
            mode: mode.as_str(),
            what: "a report",
        };

        if mode == Mode::IBaseline {
            let x = self.backbone(image.ok_or_else(need_image)?)?;
            let gap = self.tape.mean(x, 0)?;
            let (logits, probs) = self.classify(gap, dropout)?;
            return Ok(Outputs {
                logits,
                probs,
                encoded: None,
                aete: None,
                swgap: None,
                word_log_probs: None,
                tokens: None,
            });
        }

        let ids = ids.ok_or_else(need_report)?;
        let vis = if mode == Mode::R {
            self.blank_visual()?
        } else {
            let x = self.backbone(image.ok_or_else(need_image)?)?;
            self.visual(x)?
        };
        let encoded = self.encode(ids, &vis)?;
        let keep: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
        let aete = self.aete(encoded.hidden, &keep)?;
        let (features, swgap) = if mode == Mode::R {
            (aete.pooled, None)
        } else {
            let sw = self.swgap(aete.g, encoded.maps, vis.x)?;
            (self.tape.concat(&[aete.pooled, sw.pooled], 1)?, Some(sw))
        };
        let (logits, probs) = self.classify(features, dropout)?;
        let word_log_probs = if want_words {
            Some(self.word_log_probs(encoded.hidden)?)
        } else {
            None
        };
        Ok(Outputs {
            logits,
            probs,
            encoded: Some(encoded),
            aete: Some(aete),
            swgap,
            word_log_probs,
            tokens: Some(ids.to_vec()),
        })
    }
}
