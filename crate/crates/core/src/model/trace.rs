use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::text::Vocabulary;

/// Attention state recorded by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// Token ids the trace was computed over (including boundary markers).
    pub token_ids: Vec<usize>,
    /// `[r, T]` text attention.
    pub g: Tensor,
    /// `[r, d_h]` embedding matrix.
    pub m: Tensor,
    /// One `[D, D]` spatial map per step.
    pub maps: Vec<Tensor>,
    /// Per-step saliency `g_t`.
    pub saliency: Vec<f64>,
    /// `[D, D]` saliency-weighted map.
    pub weighted_map: Tensor,
}

impl AttentionTrace {
    /// Checks row-stochastic `G`, normalized maps and `g_t = max_i G(i, t)`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let [r, t] = *self.g.shape() else {
            return Err(Error::invalid("G must be rank 2"));
        };
        for i in 0..r {
            let s: f64 = self.g.row(i).iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::invalid(format!("row {i} of G sums to {s}")));
            }
        }
        if self.maps.len() != t || self.saliency.len() != t {
            return Err(Error::invalid(format!(
                "{} maps and {} saliency values for T = {t}",
                self.maps.len(),
                self.saliency.len()
            )));
        }
        for (k, map) in self.maps.iter().enumerate() {
            if (map.sum() - 1.0).abs() > tol {
                return Err(Error::invalid(format!("spatial map {k} sums to {}", map.sum())));
            }
        }
        for (k, &s) in self.saliency.iter().enumerate() {
            let col = (0..r).map(|i| self.g.at2(i, k)).fold(f64::NEG_INFINITY, f64::max);
            if s != col {
                return Err(Error::invalid(format!(
                    "saliency {k} = {s} but column max of G is {col}"
                )));
            }
        }
        Ok(())
    }

    /// Labeled blocks, one matrix per block, rows on separate lines.
    pub fn to_text(&self, vocab: Option<&Vocabulary>) -> String {
        let mut s = String::from("# attention trace\n");
        let words: Vec<String> = self
            .token_ids
            .iter()
            .map(|&i| match vocab.and_then(|v| v.token(i)) {
                Some(w) => w.to_string(),
                None => i.to_string(),
            })
            .collect();
        let _ = writeln!(s, "tokens\t{}", words.join(" "));
        write_block(&mut s, "G", &self.g);
        write_block(&mut s, "M", &self.m);
        for (k, map) in self.maps.iter().enumerate() {
            write_block(&mut s, &format!("a_{}", k + 1), map);
        }
        let g = Tensor::new(vec![1, self.saliency.len()], self.saliency.clone()).expect("saliency");
        write_block(&mut s, "g", &g);
        write_block(&mut s, "a_ws", &self.weighted_map);
        s
    }

    /// Validates, then writes [`Self::to_text`].
    pub fn save(&self, path: &Path, vocab: Option<&Vocabulary>) -> Result<()> {
        self.validate(1e-6)?;
        fs::write(path, self.to_text(vocab)).map_err(|e| Error::io(path, e))
    }
}

fn write_block(s: &mut String, label: &str, t: &Tensor) {
    let (rows, cols) = match *t.shape() {
        [r, c] => (r, c),
        _ => (1, t.len()),
    };
    let _ = writeln!(s, "[{label}] {rows} {cols}");
    for i in 0..rows {
        let row: Vec<String> = t.data()[i * cols..(i + 1) * cols]
            .iter()
            .map(|v| v.to_string())
            .collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
}

/// Parses the blocks written by [`AttentionTrace::to_text`] into
/// `(label, matrix)` pairs.
pub fn parse_blocks(text: &str) -> Result<Vec<(String, Tensor)>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((no, line)) = lines.next() {
        let Some(rest) = line.strip_prefix('[') else {
            continue;
        };
        let bad = |msg: &str| Error::invalid(format!("trace line {}: {msg}", no + 1));
        let (label, dims) = rest.split_once(']').ok_or_else(|| bad("unterminated label"))?;
        let dims: Vec<usize> = dims
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| bad("bad extent")))
            .collect::<Result<_>>()?;
        let [r, c] = dims[..] else {
            return Err(bad("expected two extents"));
        };
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r {
            let (_, row) = lines.next().ok_or_else(|| bad("missing rows"))?;
            for v in row.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|_| bad("bad value"))?);
            }
        }
        out.push((label.to_string(), Tensor::new(vec![r, c], data)?));
    }
    Ok(out)
}
