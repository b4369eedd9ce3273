//! Deliberately naive reference implementations used to cross-check the
//! production metrics and retrieval. They share no code with `eval` or
//! `retrieval` beyond plain arithmetic.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn distinct(xs: &[usize]) -> Vec<usize> {
    let set: BTreeSet<usize> = xs.iter().copied().collect();
    set.into_iter().collect()
}

/// Purity by scanning every (cluster, class) combination.
pub fn purity(pred: &[usize], gold: &[usize]) -> f64 {
    let mut total = 0usize;
    for c in distinct(pred) {
        let best = distinct(gold)
            .into_iter()
            .map(|g| pred.iter().zip(gold).filter(|&(&p, &q)| p == c && q == g).count())
            .max()
            .unwrap_or(0);
        total += best;
    }
    total as f64 / pred.len() as f64
}

/// ARI from explicit enumeration of all document pairs.
pub fn ari(pred: &[usize], gold: &[usize]) -> f64 {
    let (mut tp, mut fp, mut fn_, mut tn) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            match (pred[i] == pred[j], gold[i] == gold[j]) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
    }
    let denom = (tp + fn_) * (fn_ + tn) + (tp + fp) * (fp + tn);
    if denom == 0.0 {
        let identical = fp == 0.0 && fn_ == 0.0;
        return if identical { 1.0 } else { 0.0 };
    }
    2.0 * (tp * tn - fn_ * fp) / denom
}

/// NMI from explicit joint and marginal probabilities.
pub fn nmi(pred: &[usize], gold: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let (ps, gs) = (distinct(pred), distinct(gold));
    let prob = |f: &dyn Fn(usize) -> bool| (0..pred.len()).filter(|&i| f(i)).count() as f64 / n;
    let entropy = |labels: &[usize], xs: &[usize]| -> f64 {
        labels
            .iter()
            .map(|&l| {
                let p = xs.iter().filter(|&&x| x == l).count() as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (hp, hg) = (entropy(&ps, pred), entropy(&gs, gold));
    if ps.len() == 1 || gs.len() == 1 {
        return if ps.len() == 1 && gs.len() == 1 { 1.0 } else { 0.0 };
    }
    let mut mi = 0.0;
    for &a in &ps {
        for &b in &gs {
            let pab = prob(&|i| pred[i] == a && gold[i] == b);
            if pab > 0.0 {
                let pa = prob(&|i| pred[i] == a);
                let pb = prob(&|i| gold[i] == b);
                mi += pab * (pab / (pa * pb)).ln();
            }
        }
    }
    mi / (hp * hg).sqrt()
}

/// Extrapolated RBO summed term by term from prefix-set intersections.
pub fn rbo(a: &[String], b: &[String], p: f64, depth: usize) -> f64 {
    let k = depth.min(a.len()).min(b.len());
    let overlap = |d: usize| {
        let sa: BTreeSet<&String> = a[..d].iter().collect();
        let sb: BTreeSet<&String> = b[..d].iter().collect();
        sa.intersection(&sb).count() as f64
    };
    let mut sum = 0.0;
    for d in 1..=k {
        sum += p.powi(d as i32 - 1) * overlap(d) / d as f64;
    }
    (1.0 - p) * sum + overlap(k) / k as f64 * p.powi(k as i32)
}

pub fn irbo(topics: &[Vec<String>], p: f64, depth: usize) -> f64 {
    let mut scores = Vec::new();
    for i in 0..topics.len() {
        for j in i + 1..topics.len() {
            scores.push(rbo(&topics[i], &topics[j], p, depth));
        }
    }
    1.0 - scores.iter().sum::<f64>() / scores.len() as f64
}

/// NPMI counting co-occurrence by scanning the documents for every pair.
pub fn npmi(topics: &[Vec<String>], docs: &[BTreeSet<String>], epsilon: f64) -> Option<f64> {
    let n = docs.len() as f64;
    let df = |w: &String| docs.iter().filter(|d| d.contains(w)).count() as f64;
    let mut per_topic = Vec::new();
    for words in topics {
        let mut scores = Vec::new();
        for i in 0..words.len() {
            for j in i + 1..words.len() {
                let (cw, cv) = (df(&words[i]), df(&words[j]));
                if cw == 0.0 || cv == 0.0 {
                    continue;
                }
                let joint = docs.iter().filter(|d| d.contains(&words[i]) && d.contains(&words[j])).count() as f64;
                let pwv = joint / n + epsilon;
                let value = if pwv >= 1.0 { 1.0 } else { (pwv / ((cw / n) * (cv / n))).ln() / -pwv.ln() };
                scores.push(value);
            }
        }
        if !scores.is_empty() {
            per_topic.push(scores.iter().sum::<f64>() / scores.len() as f64);
        }
    }
    (!per_topic.is_empty()).then(|| per_topic.iter().sum::<f64>() / per_topic.len() as f64)
}

/// Ranks every non-excluded entry by a full sort on (−cosine, doc_id).
pub fn select_examples(
    query: &[f64],
    entries: &[(String, Vec<f64>)],
    k: usize,
    exclude: &BTreeSet<String>,
) -> Vec<(String, f64)> {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na * nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    let mut all: Vec<(String, f64)> = entries
        .iter()
        .filter(|(id, _)| !exclude.contains(id))
        .map(|(id, theta)| (id.clone(), cos(query, theta)))
        .collect();
    all.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    all.into_iter().take(k).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding; the restart with the lowest
/// inertia wins. Returns one cluster index per point.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
        while centers.len() < k {
            let d: Vec<f64> =
                points.iter().map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min)).collect();
            let total: f64 = d.iter().sum();
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &di) in d.iter().enumerate() {
                if target < di {
                    pick = i;
                    break;
                }
                target -= di;
            }
            centers.push(points[pick].clone());
        }
        let mut assign = vec![0usize; points.len()];
        for _ in 0..100 {
            let next: Vec<usize> = points
                .iter()
                .map(|p| (0..k).min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b]))).unwrap())
                .collect();
            let changed = next != assign;
            assign = next;
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> =
                    points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
                if !members.is_empty() {
                    for (j, x) in center.iter_mut().enumerate() {
                        *x = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &centers[a])).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assign));
        }
    }
    best.map(|(_, a)| a).unwrap_or_default()
}
