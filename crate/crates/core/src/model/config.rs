use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which inputs feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Report only.
    #[serde(rename = "r")]
    R,
    /// Image and ground-truth report.
    #[serde(rename = "ir")]
    IR,
    /// Image plus a report generated from it.
    #[serde(rename = "igr")]
    IGR,
    /// Image only, global average pooling.
    #[serde(rename = "i-baseline")]
    IBaseline,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::R, Mode::IR, Mode::IBaseline, Mode::IGR];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::R => "r",
            Mode::IR => "ir",
            Mode::IGR => "igr",
            Mode::IBaseline => "i-baseline",
        }
    }

    /// Column label used in summary tables.
    pub fn label(self) -> &'static str {
        match self {
            Mode::R => "R",
            Mode::IR => "I+R",
            Mode::IGR => "I+GR",
            Mode::IBaseline => "I",
        }
    }

    pub fn uses_image(self) -> bool {
        !matches!(self, Mode::R)
    }

    pub fn uses_report(self) -> bool {
        !matches!(self, Mode::IBaseline)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r" => Ok(Mode::R),
            "ir" | "i+r" => Ok(Mode::IR),
            "igr" | "i+gr" => Ok(Mode::IGR),
            "i-baseline" | "i_baseline" | "i" => Ok(Mode::IBaseline),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (expected r, ir, igr or i-baseline)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input image side.
    pub image_size: usize,
    pub image_channels: usize,
    /// Output channels of the stride-2 3x3 conv blocks.
    pub conv_channels: Vec<usize>,
    /// Channel count `C` of the transition layer output.
    pub channels: usize,
    /// LSTM state size `d_h`.
    pub hidden: usize,
    /// Word embedding size `d_w`.
    pub word_dim: usize,
    /// Hidden size `s` of the text attention.
    pub attn_hidden: usize,
    /// Number of text attention rows `r`.
    pub attn_rows: usize,
    /// Hidden size of the spatial attention scorer.
    pub spatial_hidden: usize,
    pub classes: usize,
    /// Filled in from the vocabulary when zero.
    pub vocab_size: usize,
    pub mode: Mode,
    pub max_decode_len: usize,
    pub alpha: f64,
    pub penal_coeff: f64,
    /// Feed `meanpool(X)` to the LSTM alongside the attended vector.
    pub global_context: bool,
    /// Width of an optional hidden classifier layer; 0 means linear.
    pub classifier_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 32,
            image_channels: 1,
            conv_channels: vec![8, 16, 32],
            channels: 32,
            hidden: 32,
            word_dim: 32,
            attn_hidden: 32,
            attn_rows: 5,
            spatial_hidden: 32,
            classes: 15,
            vocab_size: 0,
            mode: Mode::IGR,
            max_decode_len: 40,
            alpha: 0.85,
            penal_coeff: 1.0,
            global_context: true,
            classifier_hidden: 0,
        }
    }
}

impl ModelConfig {
    /// Configuration used for end-to-end gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 16,
            image_channels: 1,
            conv_channels: vec![2, 3, 3],
            channels: 3,
            hidden: 4,
            word_dim: 3,
            attn_hidden: 5,
            attn_rows: 2,
            spatial_hidden: 3,
            classes: 4,
            vocab_size: 7,
            mode: Mode::IGR,
            max_decode_len: 6,
            alpha: 0.85,
            penal_coeff: 1.0,
            global_context: true,
            classifier_hidden: 0,
        }
    }

    /// Spatial side `D` of the feature grid.
    pub fn grid(&self) -> usize {
        self.image_size >> self.conv_channels.len()
    }

    pub fn cells(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn lstm_input(&self) -> usize {
        self.word_dim + self.channels * if self.global_context { 2 } else { 1 }
    }

    pub fn classifier_input(&self) -> usize {
        match self.mode {
            Mode::R => self.hidden,
            Mode::IR | Mode::IGR => self.hidden + self.channels,
            Mode::IBaseline => self.channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let extents = [
            ("image_size", self.image_size),
            ("image_channels", self.image_channels),
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("word_dim", self.word_dim),
            ("attn_hidden", self.attn_hidden),
            ("attn_rows", self.attn_rows),
            ("spatial_hidden", self.spatial_hidden),
            ("classes", self.classes),
            ("max_decode_len", self.max_decode_len),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return bad(&format!("model.{name} must be positive"));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad("model.conv_channels must be a nonempty list of positive widths");
        }
        if self.image_size % (1 << self.conv_channels.len()) != 0 || self.grid() == 0 {
            return bad("model.image_size must be divisible by 2^len(conv_channels)");
        }
        if self.vocab_size < 5 {
            return bad("model.vocab_size must cover the reserved tokens plus one word");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("model.alpha must lie in [0, 1]");
        }
        if !(self.penal_coeff >= 0.0) {
            return bad("model.penal_coeff must be nonnegative");
        }
        Ok(())
    }
}
