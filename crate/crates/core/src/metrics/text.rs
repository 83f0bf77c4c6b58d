use std::collections::HashMap;

/// Corpus-averaged text similarity scores.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TextScore {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor_simple: f64,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(|t| t.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped k-gram precision as `(matched, total)`.
pub fn clipped_precision<S: AsRef<str>>(cand: &[S], reference: &[S], k: usize) -> (usize, usize) {
    let c = ngram_counts(cand, k);
    let r = ngram_counts(reference, k);
    let matched = c
        .iter()
        .map(|(g, &n)| n.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, cand.len().saturating_sub(k - 1))
}

/// Single-reference BLEU-n without smoothing.
pub fn bleu_n<S: AsRef<str>>(cand: &[S], reference: &[S], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order {n} outside 1..=4");
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (m, total) = clipped_precision(cand, reference, k);
        if m == 0 || total == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / total as f64).ln();
    }
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * (log_sum / n as f64).exp()
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1.
pub fn rouge_l<S: AsRef<str>>(cand: &[S], reference: &[S]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(cand, reference) as f64;
    let p = l / cand.len() as f64;
    let r = l / reference.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Exact-match METEOR: `F = 10PR / (R + 9P)` times the fragmentation
/// penalty `1 - 0.5 (chunks / matches)^3`.
///
/// Candidate tokens are aligned left to right to the first unused
/// identical reference token.
pub fn meteor_simple<S: AsRef<str>>(cand: &[S], reference: &[S]) -> f64 {
    let mut used = vec![false; reference.len()];
    let mut align: Vec<Option<usize>> = Vec::with_capacity(cand.len());
    for w in cand {
        let j = (0..reference.len()).find(|&j| !used[j] && reference[j].as_ref() == w.as_ref());
        if let Some(j) = j {
            used[j] = true;
        }
        align.push(j);
    }
    let matches = align.iter().flatten().count();
    if matches == 0 {
        return 0.0;
    }
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for a in &align {
        match (prev, a) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => chunks += 1,
            _ => {}
        }
        prev = *a;
    }
    let p = matches as f64 / cand.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let frag = chunks as f64 / matches as f64;
    f * (1.0 - 0.5 * frag.powi(3))
}

pub fn score_pair<S: AsRef<str>>(cand: &[S], reference: &[S]) -> TextScore {
    TextScore {
        bleu1: bleu_n(cand, reference, 1),
        bleu2: bleu_n(cand, reference, 2),
        bleu3: bleu_n(cand, reference, 3),
        bleu4: bleu_n(cand, reference, 4),
        rouge_l: rouge_l(cand, reference),
        meteor_simple: meteor_simple(cand, reference),
    }
}

/// Mean of per-pair scores.
pub fn score_corpus<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)]) -> TextScore {
    let mut acc = TextScore::default();
    if pairs.is_empty() {
        return acc;
    }
    for (c, r) in pairs {
        let s = score_pair(c, r);
        acc.bleu1 += s.bleu1;
        acc.bleu2 += s.bleu2;
        acc.bleu3 += s.bleu3;
        acc.bleu4 += s.bleu4;
        acc.rouge_l += s.rouge_l;
        acc.meteor_simple += s.meteor_simple;
    }
    let n = pairs.len() as f64;
    TextScore {
        bleu1: acc.bleu1 / n,
        bleu2: acc.bleu2 / n,
        bleu3: acc.bleu3 / n,
        bleu4: acc.bleu4 / n,
        rouge_l: acc.rouge_l / n,
        meteor_simple: acc.meteor_simple / n,
    }
}
