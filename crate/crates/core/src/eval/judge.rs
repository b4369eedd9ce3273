//! Optional external LLM judge rating each topic's top words on a 1–3 scale
//! through an OpenAI-style chat-completions endpoint.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KEY_ENV: &str = "CEMTM_JUDGE_KEY";
pub const URL_ENV: &str = "CEMTM_JUDGE_URL";
pub const MAX_CONCURRENCY: usize = 4;

const DEFAULT_PROMPT: &str = "Rate how coherent the following topic words are on a scale \
from 1 (not coherent) to 3 (very coherent). Answer with a single number.\nWords: {words}";

#[derive(Clone, Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error("no judge API key configured; set {KEY_ENV}")]
    MissingKey,
    #[error("no judge endpoint configured; set {URL_ENV} or judge.url")]
    MissingEndpoint,
    #[error("judge endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("no topic received a parsable rating")]
    UnparsableResponse,
    #[error("invalid judge configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub url: Option<String>,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    /// `{words}` is replaced by the comma-separated topic words.
    pub prompt_template: String,
    pub top_n: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub concurrency: usize,
    pub timeout_secs: u64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            url: None,
            model: "gpt-4o-mini".into(),
            api_key: None,
            prompt_template: DEFAULT_PROMPT.into(),
            top_n: 10,
            max_retries: 3,
            backoff_ms: 500,
            concurrency: MAX_CONCURRENCY,
            timeout_secs: 60,
        }
    }
}

impl JudgeConfig {
    /// Fills the key (and, if set, the endpoint) from the environment and checks the result.
    pub fn resolve_env(mut self) -> Result<Self, JudgeError> {
        if let Ok(url) = std::env::var(URL_ENV) {
            self.url = Some(url);
        }
        if let Ok(key) = std::env::var(KEY_ENV) {
            self.api_key = Some(key);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.api_key.as_deref().is_none_or(str::is_empty) {
            return Err(JudgeError::MissingKey);
        }
        if self.url.as_deref().is_none_or(str::is_empty) {
            return Err(JudgeError::MissingEndpoint);
        }
        if !(1..=MAX_CONCURRENCY).contains(&self.concurrency) {
            return Err(JudgeError::InvalidConfig(format!(
                "concurrency must be in 1..={MAX_CONCURRENCY}, got {}",
                self.concurrency
            )));
        }
        if !self.prompt_template.contains("{words}") {
            return Err(JudgeError::InvalidConfig("prompt template lacks {words}".into()));
        }
        Ok(())
    }

    pub fn prompt<S: AsRef<str>>(&self, words: &[S]) -> String {
        let words: Vec<&str> = words.iter().take(self.top_n).map(AsRef::as_ref).collect();
        self.prompt_template.replace("{words}", &words.join(", "))
    }
}

/// Anything that answers a prompt with free text.
pub trait JudgeClient: Sync {
    fn complete(&self, prompt: &str) -> Result<String, JudgeError>;
}

pub struct HttpJudge {
    config: JudgeConfig,
    agent: ureq::Agent,
}

impl HttpJudge {
    pub fn new(config: JudgeConfig) -> Result<Self, JudgeError> {
        config.validate()?;
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(config.timeout_secs))).build().into();
        Ok(Self { config, agent })
    }

    fn attempt(&self, prompt: &str) -> Result<String, (bool, String)> {
        let url = self.config.url.as_deref().unwrap_or_default();
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let key = self.config.api_key.as_deref().unwrap_or_default();
        let response = self.agent.post(url).header("Authorization", &format!("Bearer {key}")).send_json(&body);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) => {
                return Err((code == 429 || code >= 500, format!("http status {code}")));
            }
            Err(e) => return Err((true, e.to_string())),
        };
        let value: serde_json::Value = response.body_mut().read_json().map_err(|e| (false, e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, "response lacks choices[0].message.content".to_string()))
    }
}

impl JudgeClient for HttpJudge {
    fn complete(&self, prompt: &str) -> Result<String, JudgeError> {
        let mut wait = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err((retryable, reason)) => {
                    if !retryable || attempt >= self.config.max_retries {
                        return Err(JudgeError::EndpointUnavailable(reason));
                    }
                    log::warn!("judge request failed ({reason}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                    wait *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

/// First standalone `1`, `2` or `3` in the response.
pub fn parse_rating(response: &str) -> Option<u8> {
    static RATING: OnceLock<Regex> = OnceLock::new();
    let re = RATING.get_or_init(|| Regex::new(r"\b[123]\b").expect("static regex"));
    re.find(response).and_then(|m| m.as_str().parse().ok())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub topic: usize,
    pub response: String,
    pub rating: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmScore {
    pub mean: f64,
    pub scored: usize,
    pub responses: Vec<JudgeResponse>,
}

/// Rates every topic with at most `config.concurrency` requests in flight and
/// averages the parsable ratings. Unparsable answers are skipped with a warning.
pub fn llm_score<S: AsRef<str> + Sync>(
    topics: &[Vec<S>],
    client: &dyn JudgeClient,
    config: &JudgeConfig,
) -> Result<LlmScore, JudgeError> {
    let workers = config.concurrency.clamp(1, MAX_CONCURRENCY).min(topics.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String, JudgeError>>>> = Mutex::new(vec![None; topics.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= topics.len() {
                    break;
                }
                let outcome = client.complete(&config.prompt(&topics[i]));
                results.lock().expect("judge result lock")[i] = Some(outcome);
            });
        }
    });
    let mut responses = Vec::with_capacity(topics.len());
    for (topic, outcome) in results.into_inner().expect("judge result lock").into_iter().enumerate() {
        let response = outcome.expect("every topic visited")?;
        let rating = parse_rating(&response);
        if rating.is_none() {
            log::warn!("topic {topic}: unparsable judge response {response:?}; skipped");
        }
        responses.push(JudgeResponse { topic, response, rating });
    }
    let ratings: Vec<f64> = responses.iter().filter_map(|r| r.rating).map(f64::from).collect();
    if ratings.is_empty() {
        return Err(JudgeError::UnparsableResponse);
    }
    Ok(LlmScore { mean: ratings.iter().sum::<f64>() / ratings.len() as f64, scored: ratings.len(), responses })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted(Vec<&'static str>, AtomicUsize);

    impl JudgeClient for Scripted {
        fn complete(&self, prompt: &str) -> Result<String, JudgeError> {
            // topic index is recoverable from the word list
            let topic: usize = prompt.rsplit("t").next().unwrap().trim().parse().unwrap();
            self.1.fetch_add(1, Ordering::SeqCst);
            Ok(self.0[topic % self.0.len()].to_string())
        }
    }

    fn topics(k: usize) -> Vec<Vec<String>> {
        (0..k).map(|i| vec![format!("t{i}")]).collect()
    }

    fn config() -> JudgeConfig {
        JudgeConfig { prompt_template: "{words}".into(), ..Default::default() }
    }

    #[test]
    fn parser_takes_first_standalone_digit() {
        assert_eq!(parse_rating("3"), Some(3));
        assert_eq!(parse_rating("I would say 2 out of 3."), Some(2));
        assert_eq!(parse_rating("Score: 10 or 31, finally 1"), Some(1));
        assert_eq!(parse_rating("no digits"), None);
        assert_eq!(parse_rating("4"), None);
    }

    #[test]
    fn constant_and_alternating_stubs() {
        let three = Scripted(vec!["3"], AtomicUsize::new(0));
        assert_eq!(llm_score(&topics(5), &three, &config()).unwrap().mean, 3.0);
        assert_eq!(three.1.load(Ordering::SeqCst), 5);
        let alt = Scripted(vec!["1", "3"], AtomicUsize::new(0));
        assert_eq!(llm_score(&topics(4), &alt, &config()).unwrap().mean, 2.0);
    }

    #[test]
    fn unparsable_topics_are_skipped() {
        let stub = Scripted(vec!["2", "hmm"], AtomicUsize::new(0));
        let score = llm_score(&topics(4), &stub, &config()).unwrap();
        assert_eq!(score.scored, 2);
        assert_eq!(score.mean, 2.0);
        assert_eq!(score.responses[1].rating, None);
        let never = Scripted(vec!["hmm"], AtomicUsize::new(0));
        assert_eq!(llm_score(&topics(2), &never, &config()), Err(JudgeError::UnparsableResponse));
    }

    #[test]
    fn config_validation() {
        let mut c = JudgeConfig::default();
        assert_eq!(c.validate(), Err(JudgeError::MissingKey));
        c.api_key = Some("k".into());
        assert_eq!(c.validate(), Err(JudgeError::MissingEndpoint));
        c.url = Some("http://localhost:1".into());
        c.concurrency = 5;
        assert!(matches!(c.validate(), Err(JudgeError::InvalidConfig(_))));
        c.concurrency = 4;
        assert_eq!(c.validate(), Ok(()));
        assert_eq!(c.prompt(&["a", "b"]).lines().last(), Some("Words: a, b"));
    }
}
