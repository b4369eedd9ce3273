//! Between-topic diversity: unique-word ratio and inverted rank-biased overlap.

use std::collections::HashSet;

use super::MetricError;

/// `|∪ top-n| / (K·n)`.
pub fn topic_diversity<S: AsRef<str>>(topics: &[Vec<S>], n: usize) -> Result<f64, MetricError> {
    if n == 0 || topics.is_empty() {
        return Err(MetricError::InvalidParameter("topic diversity needs n ≥ 1 and at least one topic".into()));
    }
    let mut unique = HashSet::new();
    for (topic, words) in topics.iter().enumerate() {
        if words.len() < n {
            return Err(MetricError::InsufficientWords { topic, found: words.len(), needed: n });
        }
        unique.extend(words[..n].iter().map(AsRef::as_ref));
    }
    Ok(unique.len() as f64 / (topics.len() * n) as f64)
}

/// Extrapolated rank-biased overlap truncated at `depth` (or the shorter list):
/// `(1−p)·Σ_{d=1..k} p^{d−1}·A_d + A_k·p^k`, with `A_d = |S_{:d} ∩ T_{:d}| / d`.
pub fn rbo<S: AsRef<str>>(a: &[S], b: &[S], p: f64, depth: usize) -> Result<f64, MetricError> {
    if !(0.0..1.0).contains(&p) || p == 0.0 {
        return Err(MetricError::InvalidParameter(format!("rbo persistence must lie in (0,1), got {p}")));
    }
    let k = depth.min(a.len()).min(b.len());
    if k == 0 {
        return Err(MetricError::InvalidParameter("rbo needs non-empty lists and depth ≥ 1".into()));
    }
    let mut seen_a = HashSet::new();
    let mut seen_b = HashSet::new();
    let mut overlap = 0usize;
    let mut sum = 0.0;
    let mut agreement = 0.0;
    for d in 1..=k {
        let (x, y) = (a[d - 1].as_ref(), b[d - 1].as_ref());
        if x == y {
            overlap += 1;
        } else {
            if seen_b.contains(x) {
                overlap += 1;
            }
            if seen_a.contains(y) {
                overlap += 1;
            }
        }
        seen_a.insert(x);
        seen_b.insert(y);
        agreement = overlap as f64 / d as f64;
        sum += p.powi(d as i32 - 1) * agreement;
    }
    Ok((1.0 - p) * sum + agreement * p.powi(k as i32))
}

/// `1 − mean RBO` over all unordered topic pairs.
pub fn irbo<S: AsRef<str>>(topics: &[Vec<S>], p: f64, depth: usize) -> Result<f64, MetricError> {
    if topics.len() < 2 {
        return Err(MetricError::SingleTopic);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..topics.len() {
        for j in i + 1..topics.len() {
            total += rbo(&topics[i], &topics[j], p, depth)?;
            count += 1;
        }
    }
    Ok(1.0 - total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diversity_counts() {
        let disjoint = vec![vec!["a", "b"], vec!["c", "d"], vec!["e", "f"]];
        assert_eq!(topic_diversity(&disjoint, 2).unwrap(), 1.0);
        let same = vec![vec!["a", "b"]; 4];
        assert_eq!(topic_diversity(&same, 2).unwrap(), 0.25);
        let shared = vec![vec!["a", "b"], vec!["a", "c"], vec!["d", "e"]];
        assert_eq!(topic_diversity(&shared, 2).unwrap(), 5.0 / 6.0);
        assert_eq!(topic_diversity(&shared, 3), Err(MetricError::InsufficientWords { topic: 0, found: 2, needed: 3 }));
    }

    #[test]
    fn rbo_extremes() {
        let a: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let b: Vec<String> = (10..20).map(|i| format!("w{i}")).collect();
        assert!((rbo(&a, &a, 0.9, 10).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rbo(&a, &b, 0.9, 10).unwrap(), 0.0);
        assert_eq!(irbo(&[a.clone(), a.clone()], 0.9, 10).unwrap(), 0.0);
        assert_eq!(irbo(&[a.clone(), b], 0.9, 10).unwrap(), 1.0);
        assert_eq!(irbo(&[a], 0.9, 10), Err(MetricError::SingleTopic));
    }

    #[test]
    fn rbo_is_symmetric() {
        let a = ["x", "y", "z", "q"];
        let b = ["z", "x", "r", "y"];
        assert_eq!(rbo(&a, &b, 0.9, 4).unwrap(), rbo(&b, &a, 0.9, 4).unwrap());
    }
}
