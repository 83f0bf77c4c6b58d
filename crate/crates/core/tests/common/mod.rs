//! Brute-force oracles shared by the integration tests and the acceptance
//! suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tienet::autodiff::Tensor;
use tienet::model::{Mode, ModelConfig, TieNet};

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn row_softmax(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let e: Vec<f64> = (0..cols).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
        let z: f64 = e.iter().sum();
        data.extend(e.iter().map(|v| v / z));
    }
    Tensor::new(vec![rows, cols], data).unwrap()
}

pub struct Pooled {
    g: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    saliency: Vec<f64>,
    weighted: Vec<f64>,
    visual: Vec<f64>,
}

/// Loop-by-loop text attention and saliency pooling.
pub fn brute_force(w1: &Tensor, w2: &Tensor, h: &Tensor, maps: &Tensor, x: &Tensor) -> Pooled {
    let (s, dh) = (w1.shape()[0], w1.shape()[1]);
    let r = w2.shape()[0];
    let t_len = h.shape()[0];
    let p = maps.shape()[1];
    let c = x.shape()[1];
    let mut a = vec![vec![0.0; t_len]; s];
    for i in 0..s {
        for t in 0..t_len {
            let mut acc = 0.0;
            for k in 0..dh {
                acc += w1.at2(i, k) * h.at2(t, k);
            }
            a[i][t] = acc.tanh();
        }
    }
    let mut g = vec![vec![0.0; t_len]; r];
    for j in 0..r {
        let mut logits = vec![0.0; t_len];
        for t in 0..t_len {
            for i in 0..s {
                logits[t] += w2.at2(j, i) * a[i][t];
            }
        }
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        for t in 0..t_len {
            g[j][t] = (logits[t] - mx).exp() / z;
        }
    }
    let mut m = vec![vec![0.0; dh]; r];
    for j in 0..r {
        for k in 0..dh {
            for t in 0..t_len {
                m[j][k] += g[j][t] * h.at2(t, k);
            }
        }
    }
    let pooled = (0..dh)
        .map(|k| (0..r).map(|j| m[j][k]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let saliency: Vec<f64> = (0..t_len)
        .map(|t| (0..r).map(|j| g[j][t]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut weighted = vec![0.0; p];
    for q in 0..p {
        for t in 0..t_len {
            weighted[q] += saliency[t] * maps.at2(t, q);
        }
    }
    let mut visual = vec![0.0; c];
    for ch in 0..c {
        for q in 0..p {
            visual[ch] += weighted[q] * x.at2(q, ch);
        }
    }
    Pooled {
        g,
        m,
        pooled,
        saliency,
        weighted,
        visual,
    }
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs the model's pooling on random inputs and returns the worst
/// deviation from the loop oracle.
pub fn pooling_deviation(d: usize, t_len: usize, r: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        image_size: 8 * d,
        conv_channels: vec![2, 2, 2],
        channels: rng.random_range(1..5),
        hidden: rng.random_range(1..6),
        attn_hidden: rng.random_range(1..6),
        attn_rows: r,
        vocab_size: 8,
        mode: Mode::IR,
        ..ModelConfig::tiny()
    };
    let model = TieNet::new(cfg.clone(), seed).unwrap();
    let store = model.params();
    let w1 = store.get(store.id("aete.w_s1").unwrap()).clone();
    let w2 = store.get(store.id("aete.w_s2").unwrap()).clone();
    let h = rand_tensor(&mut rng, &[t_len, cfg.hidden]);
    let maps = row_softmax(&mut rng, t_len, d * d);
    let x = rand_tensor(&mut rng, &[d * d, cfg.channels]);

    let mut fw = model.forward();
    let hv = fw.tape.constant(h.clone());
    let mv = fw.tape.constant(maps.clone());
    let xv = fw.tape.constant(x.clone());
    let aete = fw.aete(hv, &vec![true; t_len]).unwrap();
    let sw = fw.swgap(aete.g, mv, xv).unwrap();

    let want = brute_force(&w1, &w2, &h, &maps, &x);
    let flat = |rows: &[Vec<f64>]| rows.concat();
    [
        max_diff(fw.value(aete.g).data(), &flat(&want.g)),
        max_diff(fw.value(aete.m).data(), &flat(&want.m)),
        max_diff(fw.value(aete.pooled).data(), &want.pooled),
        max_diff(fw.value(sw.saliency).data(), &want.saliency),
        max_diff(fw.value(sw.weighted_map).data(), &want.weighted),
        max_diff(fw.value(sw.pooled).data(), &want.visual),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}


/// Mann-Whitney statistic by enumerating every (positive, negative) pair.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    (pairs > 0).then(|| twice as f64 / (2 * pairs) as f64)
}

