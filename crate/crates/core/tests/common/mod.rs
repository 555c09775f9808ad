//! Brute-force reference implementations and random fixtures shared by the
//! oracle and acceptance suites.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use silverforge::textindex::tokenize;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small vocabulary so random documents overlap often.
pub fn random_corpus(rng: &mut ChaCha8Rng, docs: usize, vocab: usize) -> Vec<String> {
    (0..docs)
        .map(|_| {
            let len = rng.gen_range(0..12);
            (0..len)
                .map(|_| format!("w{}", rng.gen_range(0..vocab)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Exhaustive BM25 ranking for every document as the query, scored straight
/// from the raw token lists with no postings involved.
pub fn brute_bm25_all(docs: &[String], k: usize, k1: f64, b: f64) -> Vec<Vec<(usize, f64)>> {
    let toks: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d)).collect();
    let n = toks.len() as f64;
    let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut df: HashMap<&str, f64> = HashMap::new();
    for doc in &toks {
        let mut uniq: Vec<&str> = doc.iter().map(String::as_str).collect();
        uniq.sort_unstable();
        uniq.dedup();
        for t in uniq {
            *df.entry(t).or_default() += 1.0;
        }
    }
    (0..toks.len())
        .map(|query| {
            let mut hits = Vec::new();
            for (d, doc) in toks.iter().enumerate() {
                if d == query {
                    continue;
                }
                let len = doc.len() as f64;
                let mut score = 0.0;
                for term in &toks[query] {
                    let tf = doc.iter().filter(|x| *x == term).count() as f64;
                    if tf == 0.0 {
                        continue;
                    }
                    let nt = df[term.as_str()];
                    let idf = ((n - nt + 0.5) / (nt + 0.5) + 1.0).ln();
                    score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
                }
                if score > 0.0 {
                    hits.push((d, score));
                }
            }
            sort_hits(&mut hits);
            hits.truncate(k);
            hits
        })
        .collect()
}

pub fn sort_hits(hits: &mut [(usize, f64)]) {
    hits.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
}

pub fn brute_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

pub fn brute_cosine_top_k(rows: &[Vec<f64>], query: usize, k: usize) -> Vec<(usize, f64)> {
    let mut hits: Vec<(usize, f64)> = (0..rows.len())
        .filter(|&i| i != query)
        .map(|i| (i, brute_cosine(&rows[query], &rows[i])))
        .collect();
    sort_hits(&mut hits);
    hits.truncate(k);
    hits
}

/// Rank by counting: `#{smaller} + (#{equal} + 1) / 2`.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let eq = x.iter().filter(|&&w| w == v).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

pub fn brute_f1(pred: &[bool], gold: &[bool]) -> f64 {
    let tp = pred.iter().zip(gold).filter(|(p, g)| **p && **g).count() as f64;
    let predicted = pred.iter().filter(|p| **p).count() as f64;
    let actual = gold.iter().filter(|g| **g).count() as f64;
    if predicted + actual == 0.0 {
        return 0.0;
    }
    let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
    let recall = if actual > 0.0 { tp / actual } else { 0.0 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Tries 0, 1 and every midpoint of adjacent distinct scores, first best wins.
pub fn brute_threshold_search(scores: &[f64], gold: &[bool]) -> (f64, f64) {
    let mut distinct = scores.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let mut cands = vec![0.0, 1.0];
    for w in distinct.windows(2) {
        cands.push((w[0] + w[1]) / 2.0);
    }
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    let mut best = (f64::NAN, -1.0);
    for t in cands {
        let pred: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
        let f = brute_f1(&pred, gold);
        if f > best.1 {
            best = (t, f);
        }
    }
    best
}

/// ROC vertices from thresholding at every distinct score, high to low.
fn roc_points(scores: &[f64], gold: &[bool]) -> Vec<(f64, f64)> {
    let p = gold.iter().filter(|g| **g).count() as f64;
    let n = gold.len() as f64 - p;
    let mut distinct = scores.to_vec();
    distinct.sort_by(|a, b| b.partial_cmp(a).unwrap());
    distinct.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in distinct {
        let tp = scores
            .iter()
            .zip(gold)
            .filter(|(s, g)| **s >= t && **g)
            .count() as f64;
        let fp = scores
            .iter()
            .zip(gold)
            .filter(|(s, g)| **s >= t && !**g)
            .count() as f64;
        pts.push((fp / n, tp / p));
    }
    pts
}

/// Exact integral of the piecewise-linear ROC over `[0, cap]`, over `cap`.
pub fn brute_partial_auc(cap: f64, scores: &[f64], gold: &[bool]) -> f64 {
    let pts = roc_points(scores, gold);
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= cap || x1 == x0 {
            continue;
        }
        let xe = x1.min(cap);
        let ye = y0 + (y1 - y0) * (xe - x0) / (x1 - x0);
        area += (xe - x0) * (y0 + ye) / 2.0;
    }
    area / cap
}

/// `P(score_pos > score_neg)` with ties counted as one half.
pub fn mann_whitney(scores: &[f64], gold: &[bool]) -> f64 {
    let pos: Vec<f64> = scores
        .iter()
        .zip(gold)
        .filter(|(_, g)| **g)
        .map(|(s, _)| *s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(gold)
        .filter(|(_, g)| !**g)
        .map(|(s, _)| *s)
        .collect();
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Silverman bandwidth recomputed from scratch.
pub fn brute_silverman(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let h = (s.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        s[lo] + (h - lo as f64) * (s[(lo + 1).min(s.len() - 1)] - s[lo])
    };
    let iqr = q(0.75) - q(0.25);
    (0.9 * sd.min(iqr / 1.34) * n.powf(-0.2)).max(1e-3)
}

/// Gaussian kernel sum with the reflected copies `-s` and `2 - s`.
pub fn naive_reflected_kde(x: &[f64], h: f64, at: f64) -> f64 {
    let k = |u: f64| (-u * u / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let total: f64 = x
        .iter()
        .map(|&s| k((at - s) / h) + k((at + s) / h) + k((at - 2.0 + s) / h))
        .sum();
    total / (x.len() as f64 * h)
}

pub fn uniform_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

/// Scores rounded to a coarse grid so ties are common.
pub fn tied_scores(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> Vec<f64> {
    (0..n)
        .map(|_| rng.gen_range(0..=levels) as f64 / levels as f64)
        .collect()
}

/// Labels with both classes present.
pub fn two_class_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    loop {
        let l: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        if l.iter().any(|&x| x) && l.iter().any(|&x| !x) {
            return l;
        }
    }
}

pub fn histogram(values: &[u64]) -> HashMap<u64, usize> {
    let mut h = HashMap::new();
    for &v in values {
        *h.entry(v).or_default() += 1;
    }
    h
}

/// Runs a named check, prints one PASS/FAIL line, and returns whether it held.
pub fn report(name: &str, ok: bool, detail: impl std::fmt::Display) -> bool {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}
