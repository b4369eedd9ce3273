//! Self-verification suites: gradient checks, loss identities, simplex
//! invariants, metric and retrieval cross-checks against brute-force oracles,
//! and (opt-in) synthetic topic recovery.

pub mod oracles;
mod recovery;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::eval;
use crate::exec::Execution;
use crate::linalg::Matrix;
use crate::model::{forward_document, loss_ent, loss_kl, loss_rec, ModelParams, Sampling};
use crate::retrieval::{select_examples, Similarity, ThetaIndex};
use crate::train::gradcheck::{small_config, MAX_CHECK_DIM, MAX_CHECK_TOKENS, MAX_CHECK_TOPICS};
use crate::train::{gradient_check, Fault, GradCheckOptions};

pub use recovery::{recovery_check, toy_model, trained_beta_entropy, RecoveryConfig, RecoveryOutcome};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-9;
pub const SIMPLEX_TOLERANCE: f64 = 1e-5;
pub const METRIC_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Gradients,
    Losses,
    Simplex,
    Metrics,
    Retrieval,
    Recovery,
}

impl Group {
    /// Groups run when none is requested; recovery trains models and is opt-in.
    pub const DEFAULT: [Group; 5] = [Group::Gradients, Group::Losses, Group::Simplex, Group::Metrics, Group::Retrieval];

    pub fn name(self) -> &'static str {
        match self {
            Group::Gradients => "gradients",
            Group::Losses => "losses",
            Group::Simplex => "simplex",
            Group::Metrics => "metrics",
            Group::Retrieval => "retrieval",
            Group::Recovery => "recovery",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Group::Gradients, Group::Losses, Group::Simplex, Group::Metrics, Group::Retrieval, Group::Recovery]
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| format!("unknown verification group {s:?}"))
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
    pub gradient_trials: usize,
    pub simplex_passes: usize,
    pub metric_instances: usize,
    pub retrieval_instances: usize,
    pub recovery: RecoveryConfig,
    pub execution: Execution,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            fault: None,
            gradient_trials: 20,
            simplex_passes: 10_000,
            metric_instances: 200,
            retrieval_instances: 100,
            recovery: RecoveryConfig::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupOutcome {
    pub group: Group,
    pub passed: bool,
    pub detail: String,
    pub elapsed_secs: f64,
}

impl fmt::Display for GroupOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<9} {} ({:.2}s)", self.group.name(), self.detail, self.elapsed_secs)
    }
}

pub fn run(groups: &[Group], options: &VerifyOptions) -> Vec<GroupOutcome> {
    groups.iter().map(|&g| run_group(g, options)).collect()
}

pub fn run_group(group: Group, options: &VerifyOptions) -> GroupOutcome {
    let start = Instant::now();
    let result = match group {
        Group::Gradients => gradients(options),
        Group::Losses => losses(),
        Group::Simplex => simplex(options),
        Group::Metrics => metrics(options),
        Group::Retrieval => retrieval(options),
        Group::Recovery => {
            recovery_check(&options.recovery)
                .and_then(|o| if o.passed() { Ok(o.to_string()) } else { Err(o.to_string()) })
        }
    };
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    GroupOutcome { group, passed, detail, elapsed_secs: start.elapsed().as_secs_f64() }
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradients(options: &VerifyOptions) -> Check {
    let opts = GradCheckOptions {
        seed: options.seed,
        fault: options.fault,
        execution: options.execution,
        ..Default::default()
    };
    // alternate between the extreme and a mid-sized shape
    let half = options.gradient_trials.div_ceil(2);
    let mut worst = (0.0f64, String::new());
    for (d, k) in [(MAX_CHECK_DIM, MAX_CHECK_TOPICS), (5, 3)] {
        let report = gradient_check(&small_config(d, k), half, &opts).map_err(|e| e.to_string())?;
        for w in &report.worst {
            if w.relative_error > worst.0 || worst.1.is_empty() {
                worst = (w.relative_error, format!("{} (D={d}, K={k}, trial {})", w.tensor, w.trial));
            }
        }
    }
    ensure(worst.0 <= GRADIENT_TOLERANCE, || {
        format!("max relative error {:.3e} > {GRADIENT_TOLERANCE:e} in {}", worst.0, worst.1)
    })?;
    Ok(format!("{} trials, max relative error {:.3e}", 2 * half, worst.0))
}

fn losses() -> Check {
    let e = [0.3, -1.2, 2.5, 0.0];
    let checks: [(&str, f64, f64); 5] = [
        ("L_rec(e, e)", loss_rec(&e, &e).map_err(|x| x.to_string())?, 0.0),
        ("L_KL(0, 1)", loss_kl(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).map_err(|x| x.to_string())?, 0.0),
        ("L_KL(1, 1)", loss_kl(&[1.0], &[1.0]).map_err(|x| x.to_string())?, 0.5),
        ("L_ent(one-hot)", loss_ent(&[0.0, 1.0, 0.0], true), 0.0),
        ("L_ent(uniform 7)", loss_ent(&[1.0 / 7.0; 7], true), 7f64.ln()),
    ];
    for (name, got, want) in checks {
        ensure((got - want).abs() <= LOSS_TOLERANCE, || format!("{name} = {got}, expected {want}"))?;
    }
    Ok(format!("{} identities within {LOSS_TOLERANCE:e}", checks.len()))
}

fn simplex_violation(values: &[f32]) -> Option<f64> {
    let sum: f64 = values.iter().map(|&x| f64::from(x)).sum();
    let negative = values.iter().any(|&x| x < 0.0 || !x.is_finite());
    let err = (sum - 1.0).abs();
    (negative || err > SIMPLEX_TOLERANCE).then_some(err)
}

fn simplex(options: &VerifyOptions) -> Check {
    let passes = options.simplex_passes;
    let failures = options.execution.map_range(passes, |pass| {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ (0xA5A5_0000 + pass as u64));
        let d = rng.random_range(1..=MAX_CHECK_DIM);
        let k = rng.random_range(2..=MAX_CHECK_TOPICS);
        let n = rng.random_range(1..=MAX_CHECK_TOKENS * 4);
        let config = small_config(d, k);
        let params: ModelParams<f32> = ModelParams::init(&config, &mut rng).expect("valid config");
        let scale = [0.1f32, 1.0, 10.0][pass % 3];
        let data = (0..n * d).map(|_| scale * rng.sample::<f32, _>(StandardNormal)).collect();
        let h = Matrix::from_vec(n, d, data).expect("shape");
        let noise: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let trace = match forward_document(&params, &h, Sampling::Noise(&noise)) {
            Ok(t) => t,
            Err(e) => return Some(format!("pass {pass}: {e}")),
        };
        for (i, row) in trace.t.row_iter().enumerate() {
            if let Some(err) = simplex_violation(row) {
                return Some(format!("pass {pass}: t row {i} off simplex by {err:.2e}"));
            }
        }
        if let Some(err) = simplex_violation(&trace.beta) {
            return Some(format!("pass {pass}: β off simplex by {err:.2e}"));
        }
        if let Some(err) = simplex_violation(&trace.theta) {
            return Some(format!("pass {pass}: θ off simplex by {err:.2e}"));
        }
        if trace.sigma.iter().any(|&s| !(s > 0.0)) {
            return Some(format!("pass {pass}: non-positive σ"));
        }
        None
    });
    match failures.into_iter().flatten().next() {
        Some(f) => Err(f),
        None => Ok(format!("{passes} forward passes on the simplex within {SIMPLEX_TOLERANCE:e}")),
    }
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, max_clusters: usize) -> Vec<usize> {
    let c = rng.random_range(1..=max_clusters);
    (0..n).map(|_| rng.random_range(0..c)).collect()
}

fn random_lists(rng: &mut ChaCha8Rng, topics: usize, len: usize, vocab: usize) -> Vec<Vec<String>> {
    let words: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    (0..topics)
        .map(|_| {
            let mut w = words.clone();
            w.shuffle(rng);
            w.truncate(len);
            w
        })
        .collect()
}

fn close(name: &str, instance: usize, got: f64, want: f64) -> Result<(), String> {
    ensure((got - want).abs() <= METRIC_TOLERANCE, || format!("{name} instance {instance}: {got} vs oracle {want}"))
}

fn metrics(options: &VerifyOptions) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x3E7);
    for i in 0..options.metric_instances {
        let n = rng.random_range(1..=20);
        let pred = random_labels(&mut rng, n, 5);
        let gold = random_labels(&mut rng, n, 5);
        let err = |e: eval::MetricError| e.to_string();
        close("purity", i, eval::purity(&pred, &gold).map_err(err)?, oracles::purity(&pred, &gold))?;
        close("ari", i, eval::ari(&pred, &gold).map_err(err)?, oracles::ari(&pred, &gold))?;
        close("nmi", i, eval::nmi(&pred, &gold).map_err(err)?, oracles::nmi(&pred, &gold))?;

        let k = rng.random_range(2..=5);
        let len = rng.random_range(1..=10);
        let vocab_size = rng.random_range(len..=len + 8);
        let lists = random_lists(&mut rng, k, len, vocab_size);
        close("irbo", i, eval::irbo(&lists, 0.9, 10).map_err(err)?, oracles::irbo(&lists, 0.9, 10))?;

        let docs: Vec<BTreeSet<String>> = (0..rng.random_range(1..=20))
            .map(|_| (0..18).filter(|_| rng.random_bool(0.3)).map(|w| format!("w{w}")).collect())
            .collect();
        let vocab: BTreeSet<String> = lists.iter().flatten().cloned().collect();
        let stats = eval::CooccurrenceStats::from_documents(docs.iter().map(|d| d.iter().map(String::as_str)), &vocab);
        match (eval::npmi(&lists, &stats, 1e-12), oracles::npmi(&lists, &docs, 1e-12)) {
            (Ok(got), Some(want)) => close("npmi", i, got, want)?,
            (Err(_), None) => {}
            (got, want) => return Err(format!("npmi instance {i}: {got:?} vs oracle {want:?}")),
        }
    }
    // topic diversity on constructed cases
    let disjoint: Vec<Vec<String>> = (0..4).map(|t| (0..25).map(|w| format!("t{t}w{w}")).collect()).collect();
    let identical = vec![disjoint[0].clone(); 4];
    let td = |lists: &[Vec<String>]| eval::topic_diversity(lists, 25).map_err(|e| e.to_string());
    ensure(td(&disjoint)? == 1.0, || "TD of disjoint lists ≠ 1".into())?;
    ensure(td(&identical)? == 0.25, || "TD of identical lists ≠ 1/K".into())?;
    Ok(format!(
        "{} random instances match brute-force oracles within {METRIC_TOLERANCE:e}; TD exact",
        options.metric_instances
    ))
}

fn retrieval(options: &VerifyOptions) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x5E1EC7);
    for i in 0..options.retrieval_instances {
        let k_topics = rng.random_range(2..=8);
        let n = rng.random_range(1..=50);
        let entries: Vec<(String, Vec<f64>)> = (0..n)
            .map(|j| {
                // coarse values make exact ties common
                let raw: Vec<f64> = (0..k_topics).map(|_| f64::from(rng.random_range(0..4u8))).collect();
                let s: f64 = raw.iter().sum::<f64>().max(1.0);
                (format!("d{j:02}"), raw.iter().map(|x| x / s).collect())
            })
            .collect();
        let index = ThetaIndex::new(entries.clone()).map_err(|e| e.to_string())?;
        let query = entries[rng.random_range(0..n)].1.clone();
        let exclude: BTreeSet<String> = entries.iter().filter(|_| rng.random_bool(0.2)).map(|e| e.0.clone()).collect();
        let k = rng.random_range(1..=n + 2);
        let want = oracles::select_examples(&query, &entries, k, &exclude);
        match select_examples(&query, &index, k, &exclude, Similarity::Cosine) {
            Ok(got) => {
                let got: Vec<(String, f64)> = got.into_iter().map(|r| (r.doc_id, r.similarity)).collect();
                let same = got.len() == want.len()
                    && got.iter().zip(&want).all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() <= METRIC_TOLERANCE);
                ensure(same, || format!("instance {i}: {got:?} vs oracle {want:?}"))?;
            }
            Err(_) if want.is_empty() => {}
            Err(e) => return Err(format!("instance {i}: {e}")),
        }
    }
    Ok(format!("{} random indices match the exhaustive-sort oracle", options.retrieval_instances))
}
