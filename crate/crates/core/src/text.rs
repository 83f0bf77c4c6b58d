//! Report tokenization and vocabulary handling.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const OOV: usize = 1;
pub const START: usize = 2;
pub const END: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";
pub const START_TOKEN: &str = "<start>";
pub const END_TOKEN: &str = "<end>";

const RESERVED: [&str; 4] = [PAD_TOKEN, OOV_TOKEN, START_TOKEN, END_TOKEN];
const PUNCTUATION: [char; 6] = ['.', ',', ':', ';', '(', ')'];

/// Lowercases, splits on whitespace and splits off `. , : ; ( )`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if PUNCTUATION.contains(&ch) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_count` times, ordered by descending
    /// count then ascending token, after the four reserved entries.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("vocabulary corpus is empty"));
        }
        if min_count == 0 {
            return Err(Error::invalid("min_count must be positive"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in corpus {
            for tok in doc {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(tok, c)| c >= min_count && !RESERVED.contains(&tok))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let entries = RESERVED
            .iter()
            .map(|&t| (t.to_string(), 0))
            .chain(kept.into_iter().map(|(t, c)| (t.to_string(), c)));
        Self::from_entries(entries)
    }

    fn from_entries(entries: impl IntoIterator<Item = (String, usize)>) -> Result<Self> {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            counts: Vec::new(),
            index: HashMap::new(),
        };
        for (tok, count) in entries {
            if v.index.insert(tok.clone(), v.tokens.len()).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {tok:?}")));
            }
            v.tokens.push(tok);
            v.counts.push(count);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, idx: usize) -> Option<&str> {
        self.tokens.get(idx).map(String::as_str)
    }

    pub fn count(&self, idx: usize) -> usize {
        self.counts[idx]
    }

    pub fn lookup(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) if i > END => i,
            _ => OOV,
        }
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> TokenSequence {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(START);
        ids.extend(tokens.iter().map(|t| self.lookup(t.as_ref())));
        ids.push(END);
        TokenSequence(ids)
    }

    /// Strips the boundary markers; OOV renders as [`OOV_TOKEN`].
    pub fn decode(&self, seq: &TokenSequence) -> Vec<String> {
        seq.body()
            .iter()
            .filter(|&&i| i != PAD)
            .map(|&i| self.tokens.get(i).cloned().unwrap_or_else(|| OOV_TOKEN.to_string()))
            .collect()
    }

    pub fn encode_text(&self, text: &str) -> TokenSequence {
        self.encode(&tokenize(text))
    }

    /// One token per line with a trailing tab-separated count; the first
    /// four lines are the reserved tokens.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            s.push_str(t);
            s.push('\t');
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (tok, count) = line
                .rsplit_once('\t')
                .ok_or_else(|| err(i + 1, "expected token<TAB>count".into()))?;
            let count = count
                .parse()
                .map_err(|_| err(i + 1, format!("bad count {count:?}")))?;
            if i < RESERVED.len() && tok != RESERVED[i] {
                return Err(err(i + 1, format!("expected reserved token {}", RESERVED[i])));
            }
            if tok.is_empty() {
                return Err(err(i + 1, "empty token".into()));
            }
            entries.push((tok.to_string(), count));
        }
        if entries.len() < RESERVED.len() {
            return Err(err(entries.len() + 1, "missing reserved-token header".into()));
        }
        Self::from_entries(entries).map_err(|e| err(0, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Vocabulary indices framed by `START ... END`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        let ok = ids.len() >= 2
            && ids[0] == START
            && ids[ids.len() - 1] == END
            && ids[1..ids.len() - 1].iter().all(|&i| i != START && i != END)
            && ids.iter().all(|&i| i < vocab_size);
        if !ok {
            return Err(Error::invalid(format!("malformed token sequence {ids:?}")));
        }
        Ok(TokenSequence(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tokens between the boundary markers.
    pub fn body(&self) -> &[usize] {
        &self.0[1..self.0.len() - 1]
    }
}

/// Replaces each non-special token by OOV with probability `p`.
pub fn report_dropout(seq: &TokenSequence, p: f64, seed: u64) -> TokenSequence {
    assert!((0.0..=1.0).contains(&p), "dropout probability {p} outside [0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = seq
        .0
        .iter()
        .map(|&i| {
            if i <= END || p == 0.0 {
                i
            } else if p == 1.0 || rng.random::<f64>() < p {
                OOV
            } else {
                i
            }
        })
        .collect();
    TokenSequence(ids)
}

/// Uniform(-0.05, 0.05) word-embedding table of shape `[vocab, dim]`.
pub fn init_word_embeddings(vocab: usize, dim: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..vocab * dim).map(|_| rng.random_range(-0.05..0.05)).collect();
    Tensor::new(vec![vocab, dim], data).expect("embedding shape")
}
