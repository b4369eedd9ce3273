//! Subcommand bodies. Every output is pretty-printed UTF-8 JSON written
//! after all computation has finished.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cemtm::corpus::{build_vocabulary, load_corpus, write_corpus, CorpusError, DocumentRecord, TokenKind};
use cemtm::eval::judge::JudgeError;
use cemtm::eval::{
    align_labels, ari, irbo, llm_score, nmi, npmi, purity, topic_diversity, we_coherence, CooccurrenceStats, HttpJudge,
    MetricReport, WordVectors,
};
use cemtm::model::checkpoint;
use cemtm::retrieval::{select_for_document, RetrievalError, Similarity, ThetaIndex};
use cemtm::synthetic::{generate, SyntheticConfig};
use cemtm::topics::{
    aggregate_word_topics, all_top_words, assign_documents, config_hash, DocumentAssignment, TopicError, TopicsFile,
};
use cemtm::train::{train_with_checkpoints, Fault, TrainError};
use cemtm::verify::{self, Group, VerifyOptions};
use cemtm::Execution;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{
    CliError, Common, EvalArgs, ExtractArgs, FaultArg, RetrieveArgs, SimilarityArg, SynthArgs, TrainArgs, VerifyArgs,
};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "train_report.json";
pub const TOPICS_FILE: &str = "topics.json";
pub const TOPICS_TOP25_FILE: &str = "topics_top25.json";
pub const ASSIGNMENTS_FILE: &str = "assignments.json";
pub const INDEX_FILE: &str = "theta_index.json";
pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const LLM_RESPONSES_FILE: &str = "llm_responses.json";

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn corpus_error(e: CorpusError) -> CliError {
    match e {
        CorpusError::EmptyVocabulary => CliError::Empty(e.to_string()),
        other => usage(other),
    }
}

/// Config file, then flags.
fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_flag(common.config.as_deref())?;
    if let Some(c) = &common.corpus {
        cfg.corpus = Some(c.clone());
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.sequential {
        cfg.train.execution = Execution::Sequential;
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid {}: {e}", path.display())))
}

type Labels = Option<BTreeMap<String, String>>;

fn load_documents(cfg: &RunConfig) -> Result<(Vec<DocumentRecord>, Labels), CliError> {
    let corpus = load_corpus(cfg.corpus()?).map_err(corpus_error)?;
    let docs = corpus.load_all().map_err(corpus_error)?;
    if docs.is_empty() {
        return Err(CliError::Empty("corpus has no documents".into()));
    }
    Ok((docs, corpus.manifest.labels()))
}

fn create_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| usage(format!("cannot create {}: {e}", out.display())))
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    if let Some(k) = args.topics {
        cfg.topics = Some(k);
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = args.batch {
        cfg.train.batch_size = b;
    }
    if let Some(r) = args.restarts {
        cfg.train.restarts = r;
    }
    let out = cfg.out()?.to_path_buf();
    let topics = cfg.topics()?;
    let (docs, _) = load_documents(&cfg)?;
    let model = cfg.model.model_config(docs[0].dim(), topics);
    model.validate().map_err(usage)?;
    let train_config = cfg.train_config();
    train_config.validate().map_err(usage)?;
    create_out(&out)?;
    let (_, report) = train_with_checkpoints(&docs, &model, &train_config, &out).map_err(|e| match e {
        TrainError::DivergedLoss { .. } => CliError::Diverged(e.to_string()),
        TrainError::EmptyCorpus => CliError::Empty(e.to_string()),
        other => usage(other),
    })?;
    write_json(&out.join(REPORT_FILE), &report)?;
    let last = report.epochs.last().map_or(f64::NAN, |e| e.total);
    eprintln!(
        "trained {} epochs on {} documents in {:.2}s (final loss {last:.6})",
        report.epochs.len(),
        docs.len(),
        report.wall_time_secs
    );
    Ok(())
}

/// Settings that determine extraction output; hashed into the topics file.
#[derive(Serialize)]
struct ExtractionIdentity<'a> {
    model: &'a cemtm::ModelConfig,
    vocabulary: &'a cemtm::corpus::VocabularyConfig,
    checkpoint_sha256: String,
}

pub fn extract(args: &ExtractArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    if let Some(k) = args.topics {
        cfg.topics = Some(k);
    }
    let out = cfg.out()?.to_path_buf();
    let ckpt_path = args.checkpoint.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let bytes =
        fs::read(&ckpt_path).map_err(|e| usage(format!("cannot read checkpoint {}: {e}", ckpt_path.display())))?;
    let params = checkpoint::decode(&bytes).map_err(usage)?;
    let k = params.config.num_topics;
    if let Some(want) = cfg.topics {
        if want != k {
            return Err(usage(format!("checkpoint has K={k} topics but --topics requests {want}")));
        }
    }
    let (docs, _) = load_documents(&cfg)?;
    let stopwords = cfg.vocabulary.stopword_set();
    let vocabulary = build_vocabulary(&docs, &stopwords, cfg.vocabulary.min_doc_freq, cfg.vocabulary.max_size)
        .map_err(corpus_error)?;
    let execution = cfg.train.execution;
    let topic_error = |e: TopicError| match e {
        TopicError::EmptyExtraction => CliError::Empty(e.to_string()),
        other => usage(other),
    };
    let matrix = aggregate_word_topics(&docs, &params, &vocabulary, execution).map_err(topic_error)?;
    let assignments = assign_documents(&docs, &params, execution).map_err(topic_error)?;
    let index = ThetaIndex::from_assignments(&assignments).map_err(usage)?;
    let hash = config_hash(&ExtractionIdentity {
        model: &params.config,
        vocabulary: &cfg.vocabulary,
        checkpoint_sha256: config_hash(&bytes),
    });

    create_out(&out)?;
    write_json(&out.join(TOPICS_FILE), &TopicsFile { topics: all_top_words(&matrix, 10), config_hash: hash.clone() })?;
    write_json(&out.join(TOPICS_TOP25_FILE), &TopicsFile { topics: all_top_words(&matrix, 25), config_hash: hash })?;
    write_json(&out.join(ASSIGNMENTS_FILE), &assignments)?;
    write_json(&out.join(VOCABULARY_FILE), &vocabulary)?;
    index.save(&out.join(INDEX_FILE)).map_err(usage)?;
    eprintln!("extracted {k} topics over {} words for {} documents", vocabulary.len(), docs.len());
    Ok(())
}

fn word_lists(file: &TopicsFile) -> Vec<Vec<String>> {
    file.topics.iter().map(|t| t.words.iter().map(|w| w.word.clone()).collect()).collect()
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut cfg = resolve(&args.common)?;
    if let Some(w) = &args.word_vectors {
        cfg.word_vectors = Some(w.clone());
    }
    // configuration problems surface before any work
    let judge = if args.llm { Some(cfg.judge.clone().resolve_env().map_err(usage)?) } else { None };
    let out = cfg.out()?.to_path_buf();
    let top10: TopicsFile = read_json(&out.join(TOPICS_FILE))?;
    let top25: TopicsFile = read_json(&out.join(TOPICS_TOP25_FILE))?;
    let assignments: Vec<DocumentAssignment> = read_json(&out.join(ASSIGNMENTS_FILE))?;
    let (docs, labels) = load_documents(&cfg)?;
    let m = &cfg.metrics;

    let coherence_topics: Vec<Vec<String>> =
        word_lists(&top10).into_iter().map(|t| t.into_iter().take(m.coherence_top_n).collect()).collect();
    let words: BTreeSet<String> = coherence_topics.iter().flatten().cloned().collect();
    let stats = CooccurrenceStats::from_documents(
        docs.iter().map(|d| d.tokens.iter().filter(|t| t.kind == TokenKind::Text).map(|t| t.surface.as_str())),
        &words,
    );
    let npmi = npmi(&coherence_topics, &stats, m.npmi_epsilon).map_err(usage)?;
    let we = match &cfg.word_vectors {
        Some(path) => {
            let vectors = WordVectors::load(path).map_err(usage)?;
            Some(we_coherence(&coherence_topics, &vectors).map_err(usage)?)
        }
        None => None,
    };
    let diversity_topics = word_lists(&top25);
    let td = topic_diversity(&diversity_topics, m.diversity_top_n).map_err(usage)?;
    let irbo = irbo(&coherence_topics, m.rbo_p, m.rbo_depth).map_err(usage)?;

    let (purity, ari, nmi) = match &labels {
        Some(labels) => {
            let pairs: Vec<(String, usize)> = assignments.iter().map(|a| (a.doc_id.clone(), a.topic)).collect();
            let (pred, gold) = align_labels(&pairs, labels).map_err(usage)?;
            (
                Some(purity(&pred, &gold).map_err(usage)?),
                Some(ari(&pred, &gold).map_err(usage)?),
                Some(nmi(&pred, &gold).map_err(usage)?),
            )
        }
        None => (None, None, None),
    };

    let llm = match judge {
        Some(judge_cfg) => match HttpJudge::new(judge_cfg.clone())
            .and_then(|client| llm_score(&coherence_topics, &client, &judge_cfg))
        {
            Ok(score) => {
                write_json(&out.join(LLM_RESPONSES_FILE), &score.responses)?;
                Some(score.mean)
            }
            Err(e @ (JudgeError::MissingKey | JudgeError::MissingEndpoint | JudgeError::InvalidConfig(_))) => {
                return Err(usage(e))
            }
            Err(e) => {
                log::warn!("LLM score unavailable: {e}");
                None
            }
        },
        None => None,
    };

    let report = MetricReport { npmi, we, td, irbo, purity, ari, nmi, llm, config: m.clone() };
    write_json(&out.join(METRICS_FILE), &report)?;
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    println!(
        "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "NPMI", "WE", "TD", "I-RBO", "Purity", "ARI", "NMI", "LLM"
    );
    println!(
        "{:>8.4} {:>8} {:>8.4} {:>8.4} {:>8} {:>8} {:>8} {:>8}",
        npmi,
        opt(we),
        td,
        irbo,
        opt(purity),
        opt(ari),
        opt(nmi),
        opt(llm)
    );
    Ok(())
}

pub fn retrieve(args: &RetrieveArgs) -> Result<(), CliError> {
    let path: PathBuf = match (&args.index, &args.out) {
        (Some(p), _) => p.clone(),
        (None, Some(out)) => out.join(INDEX_FILE),
        (None, None) => return Err(usage("missing required field `index` (pass --index or --out)")),
    };
    let index = ThetaIndex::load(&path).map_err(|e| usage(format!("cannot load {}: {e}", path.display())))?;
    let similarity = match args.similarity {
        SimilarityArg::Cosine => Similarity::Cosine,
        SimilarityArg::Js => Similarity::JensenShannon,
    };
    let examples = select_for_document(&args.query, &index, args.k, similarity).map_err(|e| match e {
        RetrievalError::EmptyIndex => CliError::Empty(e.to_string()),
        other => usage(other),
    })?;
    for e in examples {
        println!("{}\t{:.6}", e.doc_id, e.similarity);
    }
    Ok(())
}

pub fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let mut groups: Vec<Group> = if args.only.is_empty() {
        Group::DEFAULT.to_vec()
    } else {
        args.only.iter().map(|s| Group::from_str(s.trim())).collect::<Result<_, _>>().map_err(usage)?
    };
    if args.all && !groups.contains(&Group::Recovery) {
        groups.push(Group::Recovery);
    }
    let execution = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let mut options = VerifyOptions {
        seed: args.seed,
        fault: args.inject_fault.map(|f| match f {
            FaultArg::KlSign => Fault::KlSignFlip,
        }),
        execution,
        ..VerifyOptions::default()
    };
    options.recovery.train.execution = execution;
    let mut failed = Vec::new();
    for group in groups {
        let outcome = verify::run_group(group, &options);
        println!("{outcome}");
        if !outcome.passed {
            failed.push(group.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("verification failed: {}", failed.join(", "))))
    }
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let config = SyntheticConfig {
        num_topics: args.topics,
        dim: args.dim,
        num_documents: args.docs,
        tokens_per_document: args.tokens,
        patches_per_document: args.patches,
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    let corpus = generate(&config).map_err(usage)?;
    let manifest =
        write_corpus(&args.out, "synthetic", "synthetic", &corpus.documents, Some(&corpus.labels)).map_err(usage)?;
    eprintln!("wrote {} documents to {}", corpus.documents.len(), manifest.display());
    Ok(())
}
