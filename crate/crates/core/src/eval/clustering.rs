//! Partition agreement between predicted topics and gold labels.

use std::collections::{BTreeMap, HashMap};

use super::MetricError;

/// Aligns `(doc_id, cluster)` assignments with a `doc_id → label` map and
/// returns dense `(predicted, gold)` integer labelings.
pub fn align_labels(
    assignments: &[(String, usize)],
    labels: &BTreeMap<String, String>,
) -> Result<(Vec<usize>, Vec<usize>), MetricError> {
    if assignments.len() != labels.len() {
        return Err(MetricError::LabelMismatch(format!("{} assignments, {} labels", assignments.len(), labels.len())));
    }
    let mut gold_ids: BTreeMap<&str, usize> = BTreeMap::new();
    for label in labels.values() {
        let next = gold_ids.len();
        gold_ids.entry(label.as_str()).or_insert(next);
    }
    let mut pred = Vec::with_capacity(assignments.len());
    let mut gold = Vec::with_capacity(assignments.len());
    for (doc_id, cluster) in assignments {
        let label = labels.get(doc_id).ok_or_else(|| MetricError::LabelMismatch(format!("no label for {doc_id}")))?;
        pred.push(*cluster);
        gold.push(gold_ids[label.as_str()]);
    }
    Ok((pred, gold))
}

struct Contingency {
    n: usize,
    cells: HashMap<(usize, usize), usize>,
    pred: HashMap<usize, usize>,
    gold: HashMap<usize, usize>,
}

fn contingency(pred: &[usize], gold: &[usize]) -> Result<Contingency, MetricError> {
    if pred.len() != gold.len() {
        return Err(MetricError::LabelMismatch(format!("{} predictions, {} gold labels", pred.len(), gold.len())));
    }
    let mut c = Contingency { n: pred.len(), cells: HashMap::new(), pred: HashMap::new(), gold: HashMap::new() };
    for (&p, &g) in pred.iter().zip(gold) {
        *c.cells.entry((p, g)).or_insert(0) += 1;
        *c.pred.entry(p).or_insert(0) += 1;
        *c.gold.entry(g).or_insert(0) += 1;
    }
    Ok(c)
}

/// Partitions are identical up to relabeling iff every cluster maps to one class and vice versa.
fn same_partition(c: &Contingency) -> bool {
    c.cells.len() == c.pred.len() && c.cells.len() == c.gold.len()
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// `(1/n) Σ_clusters max_class |cluster ∩ class|`.
pub fn purity(pred: &[usize], gold: &[usize]) -> Result<f64, MetricError> {
    let c = contingency(pred, gold)?;
    if c.n == 0 {
        return Err(MetricError::LabelMismatch("no documents".into()));
    }
    let mut best: HashMap<usize, usize> = HashMap::new();
    for (&(p, _), &count) in &c.cells {
        let slot = best.entry(p).or_insert(0);
        *slot = (*slot).max(count);
    }
    Ok(best.values().sum::<usize>() as f64 / c.n as f64)
}

/// Adjusted Rand index. When the chance-corrected denominator vanishes the
/// value is 1 for identical partitions and 0 otherwise.
pub fn ari(pred: &[usize], gold: &[usize]) -> Result<f64, MetricError> {
    let c = contingency(pred, gold)?;
    let index: f64 = c.cells.values().map(|&x| choose2(x)).sum();
    let a: f64 = c.pred.values().map(|&x| choose2(x)).sum();
    let b: f64 = c.gold.values().map(|&x| choose2(x)).sum();
    let total = choose2(c.n);
    let degenerate = || if same_partition(&c) { 1.0 } else { 0.0 };
    if total == 0.0 {
        return Ok(degenerate());
    }
    let expected = a * b / total;
    let denom = 0.5 * (a + b) - expected;
    if denom == 0.0 {
        return Ok(degenerate());
    }
    Ok((index - expected) / denom)
}

fn entropy(counts: &HashMap<usize, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&x| {
            let p = x as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(pred; gold) / √(H(pred)·H(gold))` with natural logarithms. Two
/// single-cluster partitions score 1; otherwise a zero entropy scores 0.
pub fn nmi(pred: &[usize], gold: &[usize]) -> Result<f64, MetricError> {
    let c = contingency(pred, gold)?;
    if c.n == 0 {
        return Err(MetricError::LabelMismatch("no documents".into()));
    }
    let n = c.n as f64;
    let hp = entropy(&c.pred, n);
    let hg = entropy(&c.gold, n);
    if hp == 0.0 || hg == 0.0 {
        return Ok(if hp == 0.0 && hg == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (&(p, g), &count) in &c.cells {
        let pij = count as f64 / n;
        let pi = c.pred[&p] as f64 / n;
        let pj = c.gold[&g] as f64 / n;
        mi += pij * (pij / (pi * pj)).ln();
    }
    Ok((mi / (hp * hg).sqrt()).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_partitions_score_one() {
        let a = [0, 0, 1, 1, 2];
        let b = [5, 5, 3, 3, 9];
        assert_eq!(purity(&a, &b).unwrap(), 1.0);
        assert!((ari(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((nmi(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_over_balanced_classes() {
        let pred = [0; 6];
        let gold = [0, 0, 1, 1, 2, 2];
        assert!((purity(&pred, &gold).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(nmi(&pred, &gold).unwrap(), 0.0);
        // a = C(6,2) = 15, b = 3, index = 3 → (3 − 3)/(9 − 3) = 0
        assert_eq!(ari(&pred, &gold).unwrap(), 0.0);
    }

    #[test]
    fn crossed_four_document_split() {
        // pairs: {1,2} same-pred diff-gold, {3,4} same-pred diff-gold,
        // {1,3},{2,4} diff-pred same-gold, {1,4},{2,3} diff both.
        // index = 0, a = 2, b = 2, expected = 4/6 → ARI = (0−2/3)/(2−2/3) = −0.5
        let pred = [0, 0, 1, 1];
        let gold = [0, 1, 0, 1];
        assert!((ari(&pred, &gold).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_ari_cases() {
        assert_eq!(ari(&[0], &[3]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0], &[0, 0]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0], &[1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_is_reported() {
        assert!(matches!(purity(&[0, 1], &[0]), Err(MetricError::LabelMismatch(_))));
    }

    #[test]
    fn alignment_by_doc_id() {
        let labels: BTreeMap<String, String> =
            [("a", "x"), ("b", "y"), ("c", "x")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let assignments = vec![("c".to_string(), 1), ("a".to_string(), 1), ("b".to_string(), 0)];
        let (pred, gold) = align_labels(&assignments, &labels).unwrap();
        assert_eq!(pred, vec![1, 1, 0]);
        assert_eq!(gold, vec![0, 0, 1]);
        let wrong = vec![("z".to_string(), 0), ("a".to_string(), 1), ("b".to_string(), 0)];
        assert!(align_labels(&wrong, &labels).is_err());
    }
}
