//! Named parameter storage.
//!
//! Checkpoint paths:
//!
//! | path | shape |
//! |------|-------|
//! | `backbone.conv{i}.kernel` | `[3, 3, c_in, c_out]` |
//! | `backbone.conv{i}.bias` | `[1, c_out]` |
//! | `transition.kernel` | `[1, 1, c_last, C]` |
//! | `transition.bias` | `[1, C]` |
//! | `init.phi_h.weight`, `init.phi_c.weight` | `[C, d_h]` |
//! | `init.phi_h.bias`, `init.phi_c.bias` | `[1, d_h]` |
//! | `attention.w_h` | `[d_h, a]` |
//! | `attention.w_x` | `[C, a]` |
//! | `attention.bias` | `[1, a]` |
//! | `attention.v` | `[a, 1]` |
//! | `embed.words` | `[V, d_w]` |
//! | `lstm.w_x` | `[d_w + C (+ C), 4 d_h]` |
//! | `lstm.w_h` | `[d_h, 4 d_h]` |
//! | `lstm.bias` | `[1, 4 d_h]` (gate order: input, forget, cell, output) |
//! | `aete.w_s1` | `[s, d_h]` |
//! | `aete.w_s2` | `[r, s]` |
//! | `output.weight` | `[d_h, V]` |
//! | `output.bias` | `[1, V]` |
//! | `classifier.hidden.weight` | `[F, k]` (only with a hidden layer) |
//! | `classifier.hidden.bias` | `[1, k]` |
//! | `classifier.weight` | `[F or k, M]` |
//! | `classifier.bias` | `[1, M]` |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::text::init_word_embeddings;

pub type ParamId = usize;

#[derive(Debug, Clone, Copy)]
pub struct ConvIds {
    pub kernel: ParamId,
    pub bias: ParamId,
}

/// Indices of every parameter inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamIds {
    pub convs: Vec<ConvIds>,
    pub transition: ConvIds,
    pub phi_h_w: ParamId,
    pub phi_h_b: ParamId,
    pub phi_c_w: ParamId,
    pub phi_c_b: ParamId,
    pub att_w_h: ParamId,
    pub att_w_x: ParamId,
    pub att_b: ParamId,
    pub att_v: ParamId,
    pub embed: ParamId,
    pub lstm_w_x: ParamId,
    pub lstm_w_h: ParamId,
    pub lstm_b: ParamId,
    pub w_s1: ParamId,
    pub w_s2: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub cls_hidden: Option<(ParamId, ParamId)>,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id].0
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id].1
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|e| &e.1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.0 == name)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.1.len()).sum()
    }

    /// Parameter group of an entry: the path up to the first dot, except
    /// backbone convs which are grouped per layer.
    pub fn group(&self, id: ParamId) -> String {
        let name = self.name(id);
        let mut parts = name.split('.');
        let head = parts.next().unwrap_or(name);
        match head {
            "backbone" => format!("{head}.{}", parts.next().unwrap_or("")),
            _ => head.to_string(),
        }
    }

    /// Replaces values from `(name, tensor)` pairs; names and shapes must
    /// match exactly.
    pub fn load_entries(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                entries.len()
            )));
        }
        for ((name, t), (want, cur)) in entries.into_iter().zip(self.entries.iter_mut()) {
            if &name != want || t.shape() != cur.shape() {
                return Err(Error::Checkpoint(format!(
                    "expected {want} {:?}, found {name} {:?}",
                    cur.shape(),
                    t.shape()
                )));
            }
            *cur = t;
        }
        Ok(())
    }
}

struct Builder<'r> {
    entries: Vec<(String, Tensor)>,
    rng: &'r mut ChaCha8Rng,
}

impl Builder<'_> {
    fn push(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.entries.push((name.into(), t));
        self.entries.len() - 1
    }

    /// Uniform Glorot initialization.
    fn glorot(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, fan_out: usize) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-limit..limit)).collect();
        self.push(name, Tensor::new(shape.to_vec(), data).expect("param shape"))
    }

    fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.push(name, Tensor::zeros(shape.to_vec()))
    }
}

/// Allocates and initializes every parameter for `cfg`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> (ParamStore, ParamIds) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        entries: Vec::new(),
        rng: &mut rng,
    };
    let (c, dh, v) = (cfg.channels, cfg.hidden, cfg.vocab_size);

    let mut convs = Vec::new();
    let mut cin = cfg.image_channels;
    for (i, &cout) in cfg.conv_channels.iter().enumerate() {
        let kernel = b.glorot(
            format!("backbone.conv{}.kernel", i + 1),
            &[3, 3, cin, cout],
            9 * cin,
            9 * cout,
        );
        let bias = b.zeros(format!("backbone.conv{}.bias", i + 1), &[1, cout]);
        convs.push(ConvIds { kernel, bias });
        cin = cout;
    }
    let transition = ConvIds {
        kernel: b.glorot("transition.kernel", &[1, 1, cin, c], cin, c),
        bias: b.zeros("transition.bias", &[1, c]),
    };

    let phi_h_w = b.glorot("init.phi_h.weight", &[c, dh], c, dh);
    let phi_h_b = b.zeros("init.phi_h.bias", &[1, dh]);
    let phi_c_w = b.glorot("init.phi_c.weight", &[c, dh], c, dh);
    let phi_c_b = b.zeros("init.phi_c.bias", &[1, dh]);

    let a = cfg.spatial_hidden;
    let att_w_h = b.glorot("attention.w_h", &[dh, a], dh, a);
    let att_w_x = b.glorot("attention.w_x", &[c, a], c, a);
    let att_b = b.zeros("attention.bias", &[1, a]);
    let att_v = b.glorot("attention.v", &[a, 1], a, 1);

    let words = init_word_embeddings(v, cfg.word_dim, b.rng);
    let embed = b.push("embed.words", words);

    let n_in = cfg.lstm_input();
    let lstm_w_x = b.glorot("lstm.w_x", &[n_in, 4 * dh], n_in, dh);
    let lstm_w_h = b.glorot("lstm.w_h", &[dh, 4 * dh], dh, dh);
    let mut bias = Tensor::zeros(vec![1, 4 * dh]);
    bias.data_mut()[dh..2 * dh].fill(1.0);
    let lstm_b = b.push("lstm.bias", bias);

    let w_s1 = b.glorot("aete.w_s1", &[cfg.attn_hidden, dh], dh, cfg.attn_hidden);
    let w_s2 = b.glorot("aete.w_s2", &[cfg.attn_rows, cfg.attn_hidden], cfg.attn_hidden, cfg.attn_rows);

    let out_w = b.glorot("output.weight", &[dh, v], dh, v);
    let out_b = b.zeros("output.bias", &[1, v]);

    let f = cfg.classifier_input();
    let (cls_hidden, cls_in) = if cfg.classifier_hidden > 0 {
        let k = cfg.classifier_hidden;
        let w = b.glorot("classifier.hidden.weight", &[f, k], f, k);
        let bb = b.zeros("classifier.hidden.bias", &[1, k]);
        (Some((w, bb)), k)
    } else {
        (None, f)
    };
    let cls_w = b.glorot("classifier.weight", &[cls_in, cfg.classes], cls_in, cfg.classes);
    let cls_b = b.zeros("classifier.bias", &[1, cfg.classes]);

    let store = ParamStore { entries: b.entries };
    let ids = ParamIds {
        convs,
        transition,
        phi_h_w,
        phi_h_b,
        phi_c_w,
        phi_c_b,
        att_w_h,
        att_w_x,
        att_b,
        att_v,
        embed,
        lstm_w_x,
        lstm_w_h,
        lstm_b,
        w_s1,
        w_s2,
        out_w,
        out_b,
        cls_hidden,
        cls_w,
        cls_b,
    };
    (store, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn names_are_unique_and_shapes_follow_config() {
        let mut cfg = ModelConfig::default();
        cfg.vocab_size = 40;
        cfg.classifier_hidden = 8;
        let (store, ids) = init_params(&cfg, 0);
        let names: HashSet<_> = store.entries().iter().map(|e| e.0.clone()).collect();
        assert_eq!(names.len(), store.len());
        assert_eq!(store.get(ids.w_s1).shape(), &[32, 32]);
        assert_eq!(store.get(ids.w_s2).shape(), &[5, 32]);
        assert_eq!(store.get(ids.embed).shape(), &[40, 32]);
        assert_eq!(store.get(ids.lstm_w_x).shape(), &[96, 128]);
        assert_eq!(store.get(ids.cls_w).shape(), &[8, 15]);
        assert_eq!(store.name(ids.convs[0].kernel), "backbone.conv1.kernel");
        assert_eq!(store.group(ids.convs[1].bias), "backbone.conv2");
        assert_eq!(store.group(ids.w_s1), "aete");
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::tiny();
        assert_eq!(init_params(&cfg, 3).0, init_params(&cfg, 3).0);
        assert_ne!(init_params(&cfg, 3).0, init_params(&cfg, 4).0);
    }

    #[test]
    fn load_entries_checks_names_and_shapes() {
        let cfg = ModelConfig::tiny();
        let (mut store, _) = init_params(&cfg, 1);
        let mut entries = store.entries().to_vec();
        entries[0].0 = "nope".into();
        assert!(store.load_entries(entries).is_err());
    }
}
